use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::EmbeddingSet;

/// Gaussian clusters around class means drawn uniformly on the unit sphere.
///
/// Rows are class-major; row ids are `c{class}_{index}` and labels are the
/// class numbers `0..classes`.
pub fn generate_synthetic<T: Scalar>(
    classes: usize,
    per_class: usize,
    dim: usize,
    sigma: f64,
    seed: u64,
) -> Result<EmbeddingSet<T>> {
    if classes == 0 || per_class == 0 || dim == 0 || !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic generator needs positive sizes and a finite sigma >= 0 \
             (classes={classes}, per_class={per_class}, dim={dim}, sigma={sigma})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(classes);
    while means.len() < classes {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            means.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
        }
    }
    let n = classes * per_class;
    let mut vectors = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            let row = c * per_class + i;
            for (j, &mu) in mean.iter().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                vectors[[row, j]] = T::of(mu + sigma * noise);
            }
            labels.push(c as i64);
            ids.push(format!("c{c}_{i}"));
        }
    }
    EmbeddingSet::new(vectors, labels, ids)
}
