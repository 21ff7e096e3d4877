//! Seeded C-way K-shot episode sampling.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`, whose stream is
//! fixed across platforms. Sampling order:
//!
//! 1. the set's classes are sorted ascending and C of them drawn without
//!    replacement;
//! 2. the chosen classes are sorted by original label, which assigns the
//!    episode-local ids `0..C`;
//! 3. for each class in local-id order, K+Q of its rows (in file order) are
//!    drawn without replacement; the first K become support, the rest query.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::EmbeddingSet;

/// One few-shot task. Episode items are numbered support-first: item `i < C·K`
/// is `support_rows[i]`, item `C·K + j` is `query_rows[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub support_rows: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query_rows: Vec<usize>,
    pub query_true_labels: Vec<usize>,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
}

impl Episode {
    pub fn num_support(&self) -> usize {
        self.support_rows.len()
    }

    pub fn num_query(&self) -> usize {
        self.query_rows.len()
    }

    /// n = C·(K+Q).
    pub fn num_items(&self) -> usize {
        self.num_support() + self.num_query()
    }

    /// Source rows of all episode items, support first.
    pub fn item_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.support_rows.iter().chain(&self.query_rows).copied()
    }

    /// Episode-local label of item `i` if it is a support item.
    pub fn support_label_of_item(&self, i: usize) -> Option<usize> {
        self.support_labels.get(i).copied()
    }

    /// Gather the episode's feature rows (support first) into an n×m matrix.
    pub fn gather<T: Scalar>(&self, features: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let rows: Vec<usize> = self.item_rows().collect();
        if let Some(&bad) = rows.iter().find(|&&r| r >= features.nrows()) {
            return Err(Error::MissingRow(bad));
        }
        Ok(features.select(Axis(0), &rows))
    }
}

pub fn sample_episode<T: Scalar>(
    set: &EmbeddingSet<T>,
    ways: usize,
    shots: usize,
    queries: usize,
    seed: u64,
) -> Result<Episode> {
    if ways == 0 || shots == 0 || queries == 0 {
        return Err(Error::InvalidConfig(
            "way, shot and query counts must be positive".into(),
        ));
    }
    let classes: Vec<(i64, &Vec<usize>)> = set.class_index().iter().map(|(c, r)| (*c, r)).collect();
    if classes.len() < ways {
        return Err(Error::InsufficientClasses {
            needed: ways,
            available: classes.len(),
        });
    }
    let per_class = shots + queries;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen: Vec<usize> = index::sample(&mut rng, classes.len(), ways).into_vec();
    // classes are already in ascending label order
    chosen.sort_unstable();

    for &c in &chosen {
        let (label, rows) = classes[c];
        if rows.len() < per_class {
            return Err(Error::InsufficientRowsInClass {
                class: label,
                available: rows.len(),
                needed: per_class,
            });
        }
    }

    let mut support_rows = Vec::with_capacity(ways * shots);
    let mut support_labels = Vec::with_capacity(ways * shots);
    let mut query_rows = Vec::with_capacity(ways * queries);
    let mut query_true_labels = Vec::with_capacity(ways * queries);
    for (local, &c) in chosen.iter().enumerate() {
        let rows = classes[c].1;
        let picked = index::sample(&mut rng, rows.len(), per_class);
        for (slot, pos) in picked.iter().enumerate() {
            if slot < shots {
                support_rows.push(rows[pos]);
                support_labels.push(local);
            } else {
                query_rows.push(rows[pos]);
                query_true_labels.push(local);
            }
        }
    }
    Ok(Episode {
        support_rows,
        support_labels,
        query_rows,
        query_true_labels,
        ways,
        shots,
        queries,
    })
}
