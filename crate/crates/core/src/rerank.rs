//! k-reciprocal re-ranking inside a single episode.
//!
//! Every episode item acts as a probe against the rest of the episode. The
//! chain is: Euclidean distances on unit-normalized features, k-NN lists,
//! k-reciprocal expansion, support-label clean-up, Gaussian-kernel encoding,
//! query expansion, weighted Jaccard distance, and finally a λ-blend of the
//! Euclidean and Jaccard matrices.
//!
//! Item `i` never appears in its own neighbor lists or expanded set.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::metric::{euclidean_matrix, DistanceKind, DistanceMatrix};
use crate::scalar::Scalar;
use crate::store::l2_normalize_rows;
use crate::subspace::{build_subspace, project};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Kl,
    Mse,
}

/// Sign convention for the softened distance distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftenSign {
    /// `exp(+d/τ)`, exactly as the loss is usually written down.
    Positive,
    /// `exp(-d/τ)`, the usual similarity softmax.
    Negated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AdaptiveMoments,
}

/// Every calibration and fine-tuning hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub k: usize,
    pub k2: usize,
    pub lambda: f64,
    pub p: usize,
    pub alpha: f64,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub use_subspace: bool,
    pub loss: LossKind,
    pub use_attention: bool,
    /// Query expansion over the plain k₂-NN list instead of the expanded set.
    pub qe_plain_knn: bool,
    pub soften_sign: SoftenSign,
    pub optimizer: OptimizerKind,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            k: 10,
            k2: 8,
            lambda: 0.5,
            p: 64,
            alpha: 0.5,
            tau: 3.0,
            epochs: 20,
            lr: 0.001,
            use_subspace: true,
            loss: LossKind::Kl,
            use_attention: true,
            qe_plain_knn: false,
            soften_sign: SoftenSign::Positive,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 || self.k2 == 0 {
            return bad("k and k2 must be at least 1".into());
        }
        if self.k2 >= self.k {
            return bad(format!(
                "k2 ({}) must be smaller than k ({})",
                self.k2, self.k
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha {} must be a finite value >= 0", self.alpha));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return bad(format!("tau {} must be a finite value > 0", self.tau));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!(
                "learning rate {} must be a finite value >= 0",
                self.lr
            ));
        }
        Ok(())
    }
}

/// Ranked k-nearest-neighbor list of every item, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnLists {
    pub lists: Vec<Vec<usize>>,
    /// Effective k after clamping to n−1.
    pub k: usize,
    /// Set when the requested k exceeded n−1.
    pub clamped: bool,
}

impl KnnLists {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// First `h` entries of each list, which is the h-NN list under the same ordering.
    fn prefix(&self, i: usize, h: usize) -> &[usize] {
        let l = &self.lists[i];
        &l[..h.min(l.len())]
    }

    /// `{g ∈ R_i(h) : i ∈ R_g(h)}` for `h ≤ k`.
    pub fn reciprocal(&self, i: usize, h: usize) -> BTreeSet<usize> {
        self.prefix(i, h)
            .iter()
            .copied()
            .filter(|&g| self.prefix(g, h).contains(&i))
            .collect()
    }
}

/// Expanded neighbor set of every item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedSets {
    pub sets: Vec<BTreeSet<usize>>,
}

impl ExpandedSets {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn contains(&self, i: usize, q: usize) -> bool {
        self.sets[i].contains(&q)
    }
}

/// Sparse Gaussian-kernel encoding; row `i` describes item `i`'s neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingVectors<T: Scalar> {
    pub values: Array2<T>,
}

/// k nearest items of every row of `dist`, ordered by (distance, index).
pub fn knn_lists<T: Scalar>(dist: &DistanceMatrix<T>, k: usize) -> Result<KnnLists> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let n = dist.len();
    let k_eff = k.min(n.saturating_sub(1));
    let mut lists = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let row = dist.values().row(i);
        order.sort_by(|&a, &b| {
            row[a]
                .partial_cmp(&row[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        lists.push(order[..k_eff].to_vec());
    }
    Ok(KnnLists {
        lists,
        k: k_eff,
        clamped: k_eff < k,
    })
}

/// Half-size neighborhood used by the expansion step: ⌊k/2⌋, at least 1.
pub fn half_k(k: usize) -> usize {
    (k / 2).max(1)
}

/// Grow each item's k-reciprocal set with the ⌊k/2⌋-reciprocal sets of its
/// members whenever at least two thirds of such a set is already reciprocal
/// to the item.
pub fn expand_reciprocal(initial: &KnnLists) -> ExpandedSets {
    let n = initial.len();
    let k = initial.k;
    let half = half_k(k).min(k);
    let half_sets: Vec<BTreeSet<usize>> = (0..n).map(|g| initial.reciprocal(g, half)).collect();
    let sets = (0..n)
        .map(|i| {
            let core = initial.reciprocal(i, k);
            let mut expanded = core.clone();
            for &g in &core {
                let candidate = &half_sets[g];
                let overlap = candidate.intersection(&core).count();
                if 3 * overlap >= 2 * candidate.len() {
                    expanded.extend(candidate.iter().copied());
                }
            }
            expanded.remove(&i);
            expanded
        })
        .collect();
    ExpandedSets { sets }
}

/// Remove other-class supports from every support item's set, then merge in
/// the sets of same-class support peers. Query sets are left untouched.
pub fn apply_support_labels(expanded: &ExpandedSets, episode: &Episode) -> ExpandedSets {
    let ns = episode.num_support();
    let label = |i: usize| episode.support_label_of_item(i);
    let mut cleaned = expanded.sets.clone();
    for (i, set) in cleaned.iter_mut().enumerate().take(ns) {
        let li = label(i);
        set.retain(|&q| q >= ns || label(q) == li);
    }
    let mut out = cleaned.clone();
    for i in 0..ns.min(out.len()) {
        let li = label(i);
        for s in (0..ns).filter(|&s| s != i && label(s) == li) {
            out[i].extend(cleaned[s].iter().copied());
        }
        out[i].remove(&i);
    }
    ExpandedSets { sets: out }
}

/// `V[i][q] = exp(−d(i,q))` for `q` in item `i`'s expanded set, zero elsewhere.
pub fn encode<T: Scalar>(
    dist: &DistanceMatrix<T>,
    expanded: &ExpandedSets,
) -> Result<EncodingVectors<T>> {
    dist.expect_kind(DistanceKind::Euclidean)?;
    let n = dist.len();
    if expanded.len() != n {
        return Err(Error::ShapeMismatch {
            left: (n, n),
            right: (expanded.len(), expanded.len()),
        });
    }
    let mut values = Array2::zeros((n, n));
    for (i, set) in expanded.sets.iter().enumerate() {
        for &q in set {
            values[[i, q]] = (-dist.get(i, q)).exp();
        }
    }
    Ok(EncodingVectors { values })
}

/// Replace every row by the mean of the (frozen) rows listed in `sets[i]`.
/// An empty set leaves the row unchanged.
pub fn query_expansion_with_sets<T: Scalar>(
    v: &EncodingVectors<T>,
    sets: &[Vec<usize>],
) -> EncodingVectors<T> {
    let mut values = v.values.clone();
    for (i, members) in sets.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut acc = values.row_mut(i);
        acc.fill(T::zero());
        for &g in members {
            acc.zip_mut_with(&v.values.row(g), |a, &b| *a = *a + b);
        }
        let count = T::of_usize(members.len());
        acc.mapv_inplace(|x| x / count);
    }
    EncodingVectors { values }
}

/// Query expansion over the expanded set recomputed at `k2`.
pub fn query_expansion<T: Scalar>(
    v: &EncodingVectors<T>,
    dist: &DistanceMatrix<T>,
    k2: usize,
) -> Result<EncodingVectors<T>> {
    let lists = knn_lists(dist, k2)?;
    let expanded = expand_reciprocal(&lists);
    let sets: Vec<Vec<usize>> = expanded
        .sets
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    Ok(query_expansion_with_sets(v, &sets))
}

/// Query expansion over the plain k2-nearest-neighbor lists.
pub fn query_expansion_plain<T: Scalar>(
    v: &EncodingVectors<T>,
    dist: &DistanceMatrix<T>,
    k2: usize,
) -> Result<EncodingVectors<T>> {
    let lists = knn_lists(dist, k2)?;
    Ok(query_expansion_with_sets(v, &lists.lists))
}

fn jaccard_impl<T: Scalar>(v: &EncodingVectors<T>, allow_empty: bool) -> Result<DistanceMatrix<T>> {
    let n = v.values.nrows();
    let mut empty = vec![false; n];
    for (i, row) in v.values.axis_iter(Axis(0)).enumerate() {
        if !row.iter().any(|&x| x > T::zero()) {
            if !allow_empty {
                return Err(Error::DegenerateRow(i));
            }
            empty[i] = true;
        }
    }
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let a = v.values.row(i);
        for j in (i + 1)..n {
            let b = v.values.row(j);
            let (mut num, mut den) = (T::zero(), T::zero());
            for (&x, &y) in a.iter().zip(b.iter()) {
                num = num + x.min(y);
                den = den + x.max(y);
            }
            let dij = if den > T::zero() {
                T::one() - num / den
            } else {
                // two empty rows share nothing
                T::one()
            };
            d[[i, j]] = dij;
            d[[j, i]] = dij;
        }
    }
    debug_assert!(allow_empty || empty.iter().all(|e| !e));
    DistanceMatrix::new(d, DistanceKind::Jaccard)
}

/// Weighted Jaccard distance `1 − Σmin / Σmax` between encoding rows.
pub fn jaccard_matrix<T: Scalar>(v: &EncodingVectors<T>) -> Result<DistanceMatrix<T>> {
    jaccard_impl(v, false)
}

/// Like [`jaccard_matrix`], but an all-zero row (an item with no reciprocal
/// neighbors) is treated as sharing nothing: distance 1 to every other item,
/// 0 to itself.
pub fn jaccard_matrix_allow_empty<T: Scalar>(v: &EncodingVectors<T>) -> Result<DistanceMatrix<T>> {
    jaccard_impl(v, true)
}

/// `λ·D_o + (1−λ)·D_J`.
pub fn calibrate<T: Scalar>(
    d_o: &DistanceMatrix<T>,
    d_j: &DistanceMatrix<T>,
    lambda: f64,
) -> Result<DistanceMatrix<T>> {
    d_o.expect_kind(DistanceKind::Euclidean)?;
    d_j.expect_kind(DistanceKind::Jaccard)?;
    if d_o.values().dim() != d_j.values().dim() {
        return Err(Error::ShapeMismatch {
            left: d_o.values().dim(),
            right: d_j.values().dim(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let l = T::of(lambda);
    let r = T::of(1.0 - lambda);
    let mut out = d_o.values().clone();
    out.zip_mut_with(d_j.values(), |a, &b| *a = l * *a + r * b);
    DistanceMatrix::new(out, DistanceKind::Calibrated)
}

/// Result of calibrating one feature space.
#[derive(Debug, Clone)]
pub struct BranchCalibration<T: Scalar> {
    /// Euclidean distances on unit-normalized features.
    pub original: DistanceMatrix<T>,
    pub jaccard: DistanceMatrix<T>,
    pub calibrated: DistanceMatrix<T>,
    /// Expanded sets after the support-label step.
    pub neighbors: ExpandedSets,
    pub knn_clamped: bool,
}

/// Full calibration of one episode.
#[derive(Debug, Clone)]
pub struct Calibration<T: Scalar> {
    pub original_space: BranchCalibration<T>,
    pub subspace: Option<BranchCalibration<T>>,
    /// Combined matrix when the subspace branch ran, else the original-space
    /// calibrated matrix.
    pub output: DistanceMatrix<T>,
}

impl<T: Scalar> Calibration<T> {
    pub fn knn_clamped(&self) -> bool {
        self.original_space.knn_clamped || self.subspace.as_ref().is_some_and(|s| s.knn_clamped)
    }
}

/// Run the calibration chain on an n×m matrix of episode items.
pub fn calibrate_branch<T: Scalar>(
    items: ArrayView2<'_, T>,
    episode: &Episode,
    cfg: &CalibrationConfig,
) -> Result<BranchCalibration<T>> {
    let d_o = euclidean_matrix(items, true)?;
    let lists = knn_lists(&d_o, cfg.k)?;
    let expanded = expand_reciprocal(&lists);
    let neighbors = apply_support_labels(&expanded, episode);
    let v = encode(&d_o, &neighbors)?;
    let v = if cfg.qe_plain_knn {
        query_expansion_plain(&v, &d_o, cfg.k2)?
    } else {
        query_expansion(&v, &d_o, cfg.k2)?
    };
    let d_j = jaccard_matrix_allow_empty(&v)?;
    let calibrated = calibrate(&d_o, &d_j, cfg.lambda)?;
    Ok(BranchCalibration {
        original: d_o,
        jaccard: d_j,
        calibrated,
        neighbors,
        knn_clamped: lists.clamped,
    })
}

/// Calibrate an episode given its item features (support first, n×m).
pub fn calibrate_items<T: Scalar>(
    items: ArrayView2<'_, T>,
    episode: &Episode,
    cfg: &CalibrationConfig,
) -> Result<Calibration<T>> {
    cfg.validate()?;
    if items.nrows() != episode.num_items() {
        return Err(Error::DimensionMismatch {
            expected: episode.num_items(),
            actual: items.nrows(),
        });
    }
    let original_space = calibrate_branch(items, episode, cfg)?;
    if !cfg.use_subspace {
        let output = original_space.calibrated.clone();
        return Ok(Calibration {
            original_space,
            subspace: None,
            output,
        });
    }
    let mut normalized = items.to_owned();
    l2_normalize_rows(&mut normalized)?;
    let p = cfg.p.min(normalized.ncols());
    let proj = build_subspace(normalized.view(), p)?;
    let reduced = project(normalized.view(), &proj)?;
    let sub = calibrate_branch(reduced.view(), episode, cfg)?;
    let half = T::of(0.5);
    let mut com = original_space.calibrated.values().clone();
    com.zip_mut_with(sub.calibrated.values(), |a, &b| *a = half * (*a + b));
    let output = DistanceMatrix::new(com, DistanceKind::Combined)?;
    Ok(Calibration {
        original_space,
        subspace: Some(sub),
        output,
    })
}

/// Calibrated distance matrix for an episode; `features` is indexed by source row.
pub fn rdc_pipeline<T: Scalar>(
    features: ArrayView2<'_, T>,
    episode: &Episode,
    cfg: &CalibrationConfig,
) -> Result<DistanceMatrix<T>> {
    let items = episode.gather(features)?;
    Ok(calibrate_items(items.view(), episode, cfg)?.output)
}
