//! Fine-tuning a linear adapter toward the calibrated distance distribution.
//!
//! Each epoch the adapted features `X·W` are calibrated from scratch; the
//! resulting matrix is frozen as the target, both matrices are re-weighted by
//! the attention mask and softened row-wise, and `W` takes one gradient step on
//! `τ²·KL(target ‖ live)` (or on the masked MSE). The gradient is analytic:
//!
//! ```text
//! ∂L/∂D_ij = s·M_ij·τ·(p_ij − q_ij) / n        (KL, s = ±1 softening sign)
//! ∂L/∂z_i  = Σ_j (∂L/∂D_ij + ∂L/∂D_ji)·(z_i − z_j) / D_ij
//! ∂L/∂y_i  = (I − z_i z_iᵀ)·∂L/∂z_i / ‖y_i‖     (z_i = y_i / ‖y_i‖)
//! ∂L/∂W    = Xᵀ·∂L/∂Y
//! ```
//!
//! Target and neighbor sets are constants within an epoch.

use std::io::{self, Write};

use ndarray::{Array2, ArrayView2, Axis};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::metric::{euclidean_matrix, npc_classify_items, DistanceMatrix};
use crate::rerank::{
    calibrate_items, CalibrationConfig, ExpandedSets, LossKind, OptimizerKind, SoftenSign,
};
use crate::scalar::Scalar;
use crate::store::l2_normalize_rows;

/// Floor applied to live probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Linear map applied to frozen embeddings; starts as the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter<T: Scalar> {
    pub weights: Array2<T>,
    pub learning_rate: f64,
}

impl<T: Scalar> Adapter<T> {
    pub fn identity(dim: usize, learning_rate: f64) -> Self {
        Self {
            weights: Array2::eye(dim),
            learning_rate,
        }
    }

    pub fn apply(&self, features: ArrayView2<'_, T>) -> Array2<T> {
        features.dot(&self.weights)
    }
}

/// Multiplicative weights: `1+α` inside an item's expanded set, 1 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask<T: Scalar> {
    pub values: Array2<T>,
}

impl<T: Scalar> AttentionMask<T> {
    pub fn ones(n: usize) -> Self {
        Self {
            values: Array2::ones((n, n)),
        }
    }
}

/// Row-stochastic matrix over off-diagonal entries; the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDistribution<T: Scalar> {
    pub probs: Array2<T>,
    pub tau: f64,
}

pub fn attention_mask<T: Scalar>(expanded: &ExpandedSets, alpha: f64) -> AttentionMask<T> {
    let n = expanded.len();
    let up = T::of(1.0 + alpha);
    let mut values = Array2::ones((n, n));
    for (i, set) in expanded.sets.iter().enumerate() {
        for &q in set {
            values[[i, q]] = up;
        }
    }
    AttentionMask { values }
}

/// Temperature softmax of `M ⊙ D` along each row, diagonal excluded.
pub fn soften<T: Scalar>(
    dist: &DistanceMatrix<T>,
    mask: &AttentionMask<T>,
    tau: f64,
    sign: SoftenSign,
) -> SoftDistribution<T> {
    let n = dist.len();
    let s = match sign {
        SoftenSign::Positive => T::one(),
        SoftenSign::Negated => -T::one(),
    };
    let t = T::of(tau);
    let mut probs = Array2::zeros((n, n));
    let mut logits = vec![T::zero(); n];
    for i in 0..n {
        let mut max = T::neg_infinity();
        for j in (0..n).filter(|&j| j != i) {
            let l = s * mask.values[[i, j]] * dist.get(i, j) / t;
            logits[j] = l;
            max = max.max(l);
        }
        let mut total = T::zero();
        for j in (0..n).filter(|&j| j != i) {
            let e = (logits[j] - max).exp();
            probs[[i, j]] = e;
            total = total + e;
        }
        probs.row_mut(i).mapv_inplace(|p| p / total);
    }
    SoftDistribution { probs, tau }
}

/// `τ²·KL(target ‖ live)`, summed along rows and averaged over rows.
pub fn kl_loss<T: Scalar>(live: &SoftDistribution<T>, target: &SoftDistribution<T>, tau: f64) -> T {
    let n = live.probs.nrows();
    let floor = T::of(PROB_FLOOR);
    let mut total = T::zero();
    for (p_row, q_row) in live
        .probs
        .axis_iter(Axis(0))
        .zip(target.probs.axis_iter(Axis(0)))
    {
        for (&p, &q) in p_row.iter().zip(q_row.iter()) {
            if q > T::zero() {
                total = total + q * (q.ln() - p.max(floor).ln());
            }
        }
    }
    T::of(tau * tau) * total / T::of_usize(n.max(1))
}

/// Mean squared difference of the masked matrices over off-diagonal entries.
pub fn mse_loss<T: Scalar>(
    live: &DistanceMatrix<T>,
    target: &DistanceMatrix<T>,
    mask: &AttentionMask<T>,
) -> Result<T> {
    let n = live.len();
    if target.len() != n || mask.values.nrows() != n {
        return Err(Error::ShapeMismatch {
            left: live.values().dim(),
            right: target.values().dim(),
        });
    }
    if n < 2 {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let m = mask.values[[i, j]];
            let diff = m * live.get(i, j) - m * target.get(i, j);
            total = total + diff * diff;
        }
    }
    Ok(total / T::of_usize(n * (n - 1)))
}

/// Loss of the adapted items against a frozen target, and its gradient with
/// respect to the adapter weights.
pub fn loss_and_gradient<T: Scalar>(
    items: ArrayView2<'_, T>,
    weights: ArrayView2<'_, T>,
    target: &DistanceMatrix<T>,
    mask: &AttentionMask<T>,
    cfg: &CalibrationConfig,
) -> Result<(T, Array2<T>)> {
    let n = items.nrows();
    if target.len() != n || mask.values.nrows() != n {
        return Err(Error::ShapeMismatch {
            left: (n, n),
            right: target.values().dim(),
        });
    }
    let y = items.dot(&weights);
    let mut z = y.clone();
    l2_normalize_rows(&mut z)?;
    let live = euclidean_matrix(y.view(), true)?;

    let mut grad_d = Array2::<T>::zeros((n, n));
    let loss = match cfg.loss {
        LossKind::Kl => {
            let p = soften(&live, mask, cfg.tau, cfg.soften_sign);
            let q = soften(target, mask, cfg.tau, cfg.soften_sign);
            let s = match cfg.soften_sign {
                SoftenSign::Positive => 1.0,
                SoftenSign::Negated => -1.0,
            };
            let scale = T::of(s * cfg.tau / n as f64);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    grad_d[[i, j]] =
                        scale * mask.values[[i, j]] * (p.probs[[i, j]] - q.probs[[i, j]]);
                }
            }
            kl_loss(&p, &q, cfg.tau)
        }
        LossKind::Mse => {
            let scale = T::of(2.0 / (n * (n - 1)) as f64);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let m = mask.values[[i, j]];
                    grad_d[[i, j]] = scale * m * m * (live.get(i, j) - target.get(i, j));
                }
            }
            mse_loss(&live, target, mask)?
        }
    };

    let m = z.ncols();
    let mut grad_z = Array2::<T>::zeros((n, m));
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let d = live.get(i, j);
            if d <= T::zero() {
                continue;
            }
            let w = (grad_d[[i, j]] + grad_d[[j, i]]) / d;
            for c in 0..m {
                grad_z[[i, c]] = grad_z[[i, c]] + w * (z[[i, c]] - z[[j, c]]);
            }
        }
    }
    let mut grad_y = grad_z;
    for (i, mut g) in grad_y.axis_iter_mut(Axis(0)).enumerate() {
        let zi = z.row(i);
        let norm = y.row(i).dot(&y.row(i)).sqrt();
        let radial = zi.dot(&g);
        for c in 0..m {
            g[c] = (g[c] - zi[c] * radial) / norm;
        }
    }
    Ok((loss, items.t().dot(&grad_y)))
}

#[derive(Debug, Clone)]
struct MomentState<T: Scalar> {
    first: Array2<T>,
    second: Array2<T>,
    step: i32,
}

impl<T: Scalar> MomentState<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(dim: usize) -> Self {
        Self {
            first: Array2::zeros((dim, dim)),
            second: Array2::zeros((dim, dim)),
            step: 0,
        }
    }

    fn update(&mut self, weights: &mut Array2<T>, grad: &Array2<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
        let c1 = T::of(1.0 - Self::BETA1.powi(self.step));
        let c2 = T::of(1.0 - Self::BETA2.powi(self.step));
        let (lr, eps) = (T::of(lr), T::of(Self::EPS));
        for ((w, &g), (m, v)) in weights
            .iter_mut()
            .zip(grad.iter())
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *w = *w - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneResult<T: Scalar> {
    pub adapter: Adapter<T>,
    /// Loss at the start of each epoch, before that epoch's step.
    pub losses: Vec<T>,
}

impl<T: Scalar> FineTuneResult<T> {
    pub fn initial_loss(&self) -> T {
        self.losses[0]
    }

    pub fn final_loss(&self) -> T {
        *self.losses.last().expect("at least one epoch")
    }
}

/// Fine-tune an adapter on the episode items (support first, n×m).
pub fn finetune_items<T: Scalar>(
    items: ArrayView2<'_, T>,
    episode: &Episode,
    cfg: &CalibrationConfig,
) -> Result<FineTuneResult<T>> {
    cfg.validate()?;
    let m = items.ncols();
    let mut adapter = Adapter::identity(m, cfg.lr);
    let mut moments = MomentState::new(m);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let lr = T::of(cfg.lr);
    for epoch in 0..cfg.epochs {
        let adapted = adapter.apply(items);
        let cal = calibrate_items(adapted.view(), episode, cfg)?;
        let mask = if cfg.use_attention {
            attention_mask(&cal.original_space.neighbors, cfg.alpha)
        } else {
            AttentionMask::ones(items.nrows())
        };
        let (loss, grad) =
            loss_and_gradient(items, adapter.weights.view(), &cal.output, &mask, cfg)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergenceDetected { epoch });
        }
        losses.push(loss);
        match cfg.optimizer {
            OptimizerKind::Sgd => adapter
                .weights
                .zip_mut_with(&grad, |w, &g| *w = *w - lr * g),
            OptimizerKind::AdaptiveMoments => moments.update(&mut adapter.weights, &grad, cfg.lr),
        }
        if adapter.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::DivergenceDetected { epoch });
        }
    }
    Ok(FineTuneResult { adapter, losses })
}

/// Fine-tune on an episode; `features` is indexed by source row.
pub fn finetune_episode<T: Scalar>(
    features: ArrayView2<'_, T>,
    episode: &Episode,
    cfg: &CalibrationConfig,
) -> Result<FineTuneResult<T>> {
    let items = episode.gather(features)?;
    finetune_items(items.view(), episode, cfg)
}

/// Plain nearest-prototype predictions on the adapted features.
pub fn evaluate_after_finetune<T: Scalar>(
    features: ArrayView2<'_, T>,
    episode: &Episode,
    adapter: &Adapter<T>,
) -> Result<Vec<usize>> {
    let items = episode.gather(features)?;
    npc_classify_items(adapter.apply(items.view()).view(), episode)
}

/// Write `epoch,loss` rows.
pub fn write_loss_trace<T: Scalar, W: Write>(losses: &[T], mut out: W) -> io::Result<()> {
    writeln!(out, "epoch,loss")?;
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(out, "{epoch},{}", loss.as_f64())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DistanceKind;
    use ndarray::array;
    use std::collections::BTreeSet;

    fn dm(v: Array2<f64>) -> DistanceMatrix<f64> {
        DistanceMatrix::new(v, DistanceKind::Euclidean).unwrap()
    }

    #[test]
    fn mask_values() {
        let e = ExpandedSets {
            sets: vec![BTreeSet::from([1]), BTreeSet::new(), BTreeSet::from([0, 1])],
        };
        let m: AttentionMask<f64> = attention_mask(&e, 0.5);
        assert_eq!(
            m.values,
            array![[1.0, 1.5, 1.0], [1.0, 1.0, 1.0], [1.5, 1.5, 1.0]]
        );
        let flat: AttentionMask<f64> = attention_mask(&e, 0.0);
        assert_eq!(flat.values, Array2::ones((3, 3)));
    }

    #[test]
    fn uniform_when_distances_equal() {
        let d = dm(Array2::from_shape_fn((4, 4), |(i, j)| {
            if i == j {
                0.0
            } else {
                0.7
            }
        }));
        let p = soften(&d, &AttentionMask::ones(4), 3.0, SoftenSign::Positive);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((p.probs[[i, j]] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn large_temperature_is_nearly_uniform() {
        let d = dm(array![[0.0, 1.0, 2.0], [1.0, 0.0, 5.0], [2.0, 5.0, 0.0]]);
        let p = soften(&d, &AttentionMask::ones(3), 1e6, SoftenSign::Negated);
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                assert!((p.probs[[i, j]] - 0.5).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn kl_zero_and_tau_scaling() {
        let d = dm(array![[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [2.0, 0.5, 0.0]]);
        let target = dm(array![[0.0, 1.5, 1.0], [1.5, 0.0, 0.2], [1.0, 0.2, 0.0]]);
        let mask = AttentionMask::ones(3);
        let p = soften(&d, &mask, 3.0, SoftenSign::Positive);
        assert_eq!(kl_loss(&p, &p, 3.0), 0.0);
        let q = soften(&target, &mask, 3.0, SoftenSign::Positive);
        let a = kl_loss(&p, &q, 3.0);
        let b = kl_loss(&p, &q, 6.0);
        assert!(a > 0.0);
        assert!((b / a - 4.0).abs() < 1e-9);
    }

    #[test]
    fn mse_constant_offset() {
        let a = dm(array![[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [2.0, 0.5, 0.0]]);
        let b = dm(array![[0.0, 1.3, 2.3], [1.3, 0.0, 0.8], [2.3, 0.8, 0.0]]);
        let m = AttentionMask::ones(3);
        assert_eq!(mse_loss(&a, &a, &m).unwrap(), 0.0);
        assert!((mse_loss(&a, &b, &m).unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn loss_trace_csv() {
        let mut buf = Vec::new();
        write_loss_trace(&[0.5f64, 0.25], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,loss\n0,0.5\n1,0.25\n"
        );
    }
}
