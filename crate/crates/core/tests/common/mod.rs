//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's numeric code; every oracle is
//! written from the definitions with plain loops and std collections.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdc::Episode;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Points on a small integer grid, so distance ties are common.
pub fn grid_points(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2i32..=2) as f64)
}

/// Episode over items `0..ways*(1+queries)` laid out support first.
pub fn local_episode(ways: usize, shots: usize, queries: usize) -> Episode {
    let ns = ways * shots;
    let nq = ways * queries;
    Episode {
        support_rows: (0..ns).collect(),
        support_labels: (0..ns).map(|s| s / shots).collect(),
        query_rows: (ns..ns + nq).collect(),
        query_true_labels: (0..nq).map(|q| q / queries).collect(),
        ways,
        shots,
        queries,
    }
}

/// Clustered items for a local episode: class means on random directions plus noise.
pub fn clustered_items(
    rng: &mut ChaCha8Rng,
    episode: &Episode,
    dim: usize,
    sigma: f64,
) -> Array2<f64> {
    let means = random_matrix(rng, episode.ways, dim);
    let labels: Vec<usize> = episode
        .support_labels
        .iter()
        .chain(&episode.query_true_labels)
        .copied()
        .collect();
    let mut x = Array2::zeros((labels.len(), dim));
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..dim {
            x[[i, j]] = means[[c, j]] + sigma * rng.random_range(-1.0..1.0);
        }
    }
    x
}

pub fn naive_euclidean(x: &Array2<f64>, normalize: bool) -> Array2<f64> {
    let (n, m) = x.dim();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..m).map(|j| x[[i, j]]).collect())
        .collect();
    if normalize {
        for r in &mut rows {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| {
        rows[i]
            .iter()
            .zip(&rows[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

pub fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let m = b.ncols();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[[i, t]] * b[[t, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// The `h` nearest other items of `i`, by (distance, index).
pub fn oracle_knn(d: &Array2<f64>, i: usize, h: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..d.nrows())
        .filter(|&j| j != i)
        .map(|j| (d[[i, j]], j))
        .collect();
    others.sort_by(|a, b| a.partial_cmp(b).unwrap());
    others.into_iter().take(h).map(|(_, j)| j).collect()
}

pub fn oracle_reciprocal(d: &Array2<f64>, i: usize, h: usize) -> BTreeSet<usize> {
    oracle_knn(d, i, h)
        .into_iter()
        .filter(|&g| oracle_knn(d, g, h).contains(&i))
        .collect()
}

/// Expanded set of every item, by enumerating every candidate pair (i, g).
pub fn oracle_expansion(d: &Array2<f64>, k: usize) -> Vec<BTreeSet<usize>> {
    let n = d.nrows();
    let k = k.min(n - 1);
    let half = (k / 2).max(1);
    (0..n)
        .map(|i| {
            let core = oracle_reciprocal(d, i, k);
            let mut out = core.clone();
            for g in 0..n {
                if !core.contains(&g) {
                    continue;
                }
                let cand = oracle_reciprocal(d, g, half);
                let shared = cand.iter().filter(|c| core.contains(c)).count();
                if shared as f64 >= (2.0 / 3.0) * cand.len() as f64 - 1e-12 {
                    out.extend(cand);
                }
            }
            out.remove(&i);
            out
        })
        .collect()
}

/// `1 − |A∩B| / |A∪B|`; two empty sets share nothing.
pub fn set_jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Weighted Jaccard from `min = (x+y−|x−y|)/2`, `max = (x+y+|x−y|)/2`.
pub fn weighted_jaccard(a: &[f64], b: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        lo += 0.5 * (x + y - (x - y).abs());
        hi += 0.5 * (x + y + (x - y).abs());
    }
    if hi == 0.0 {
        1.0
    } else {
        1.0 - lo / hi
    }
}

/// Row softmax of `sign·M⊙D/τ` with the diagonal excluded, computed naively.
pub fn oracle_soften(d: &Array2<f64>, mask: &Array2<f64>, tau: f64, sign: f64) -> Array2<f64> {
    let n = d.nrows();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let z: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sign * mask[[i, j]] * d[[i, j]] / tau).exp())
            .sum();
        for j in (0..n).filter(|&j| j != i) {
            p[[i, j]] = (sign * mask[[i, j]] * d[[i, j]] / tau).exp() / z;
        }
    }
    p
}

pub fn oracle_kl(live: &Array2<f64>, target: &Array2<f64>, tau: f64) -> f64 {
    let n = live.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let q = target[[i, j]];
            if q > 0.0 {
                total += q * (q / live[[i, j]].max(1e-12)).ln();
            }
        }
    }
    tau * tau * total / n as f64
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues and
/// eigenvectors as columns, unsorted.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

/// Largest absolute entry of `a − b`.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Masked softened KL of `X·W` against a fixed target matrix, from scratch.
pub fn oracle_adapter_loss(
    x: &Array2<f64>,
    w: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<f64>,
    tau: f64,
    sign: f64,
) -> f64 {
    let live = naive_euclidean(&naive_matmul(x, w), true);
    let p = oracle_soften(&live, mask, tau, sign);
    let q = oracle_soften(target, mask, tau, sign);
    oracle_kl(&p, &q, tau)
}

/// Central finite-difference gradient of [`oracle_adapter_loss`] in `W`.
pub fn finite_difference_gradient(
    x: &Array2<f64>,
    w: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<f64>,
    tau: f64,
    sign: f64,
    h: f64,
) -> Array2<f64> {
    let mut g = Array2::zeros(w.dim());
    let mut probe = w.clone();
    for idx in 0..w.len() {
        let (r, c) = (idx / w.ncols(), idx % w.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = oracle_adapter_loss(x, &probe, target, mask, tau, sign);
        probe[[r, c]] = orig - h;
        let down = oracle_adapter_loss(x, &probe, target, mask, tau, sign);
        probe[[r, c]] = orig;
        g[[r, c]] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = frobenius(a).max(frobenius(b));
    if scale == 0.0 {
        0.0
    } else {
        let diff = a - b;
        frobenius(&diff) / scale
    }
}
