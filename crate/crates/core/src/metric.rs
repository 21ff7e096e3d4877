//! Pairwise distance matrices and the nearest-prototype classifier.

use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::l2_normalize_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Euclidean,
    Jaccard,
    Calibrated,
    Combined,
}

impl DistanceKind {
    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Jaccard => "jaccard",
            DistanceKind::Calibrated => "calibrated",
            DistanceKind::Combined => "combined",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Square matrix of pairwise distances among episode items, tagged with how it
/// was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T: Scalar> {
    values: Array2<T>,
    kind: DistanceKind,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn new(values: Array2<T>, kind: DistanceKind) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch {
                left: values.dim(),
                right: (values.nrows(), values.nrows()),
            });
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[[i, j]]
    }

    pub(crate) fn expect_kind(&self, kind: DistanceKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongKind {
                expected: kind.name(),
                actual: self.kind.name(),
            })
        }
    }
}

#[inline]
pub fn euclidean_distance<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Pairwise Euclidean distances between the rows of `features`, optionally
/// after scaling each row to unit length.
pub fn euclidean_matrix<T: Scalar>(
    features: ArrayView2<'_, T>,
    normalize: bool,
) -> Result<DistanceMatrix<T>> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "distance matrix needs at least 2 rows, got {n}"
        )));
    }
    for (row, v) in features.axis_iter(Axis(0)).enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { row });
        }
    }
    let normalized;
    let x = if normalize {
        let mut owned = features.to_owned();
        l2_normalize_rows(&mut owned)?;
        normalized = owned;
        normalized.view()
    } else {
        features
    };
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean_distance(x.row(i), x.row(j));
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    DistanceMatrix::new(values, DistanceKind::Euclidean)
}

/// One mean vector per episode-local class; row `c` belongs to class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes<T: Scalar> {
    pub vectors: Array2<T>,
    pub class_ids: Vec<usize>,
}

/// Class means of the support vectors. `features` is indexed by source row.
pub fn compute_prototypes<T: Scalar>(
    episode: &Episode,
    features: ArrayView2<'_, T>,
) -> Result<Prototypes<T>> {
    let m = features.ncols();
    let mut sums = Array2::<T>::zeros((episode.ways, m));
    let mut counts = vec![0usize; episode.ways];
    for (&row, &label) in episode.support_rows.iter().zip(&episode.support_labels) {
        if row >= features.nrows() {
            return Err(Error::MissingRow(row));
        }
        let mut acc = sums.row_mut(label);
        acc.zip_mut_with(&features.row(row), |a, &b| *a = *a + b);
        counts[label] += 1;
    }
    for (c, mut acc) in sums.axis_iter_mut(Axis(0)).enumerate() {
        let k = T::of_usize(counts[c].max(1));
        acc.mapv_inplace(|x| x / k);
    }
    Ok(Prototypes {
        vectors: sums,
        class_ids: (0..episode.ways).collect(),
    })
}

/// Index of the smallest score; ties go to the lowest index.
pub(crate) fn argmin<T: Scalar>(scores: impl IntoIterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_score = T::infinity();
    for (i, s) in scores.into_iter().enumerate() {
        if s < best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Assign each query row to its nearest prototype under Euclidean distance.
pub fn npc_classify<T: Scalar>(
    queries: ArrayView2<'_, T>,
    prototypes: &Prototypes<T>,
) -> Result<Vec<usize>> {
    let m = prototypes.vectors.ncols();
    if queries.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: queries.ncols(),
        });
    }
    Ok(queries
        .axis_iter(Axis(0))
        .map(|q| {
            let c = argmin(
                prototypes
                    .vectors
                    .axis_iter(Axis(0))
                    .map(|p| euclidean_distance(q, p)),
            );
            prototypes.class_ids[c]
        })
        .collect())
}

/// Nearest-prototype predictions for an n×m matrix of episode items (support
/// first, as produced by [`Episode::gather`]).
pub fn npc_classify_items<T: Scalar>(
    items: ArrayView2<'_, T>,
    episode: &Episode,
) -> Result<Vec<usize>> {
    let ns = episode.num_support();
    if items.nrows() < episode.num_items() {
        return Err(Error::MissingRow(items.nrows()));
    }
    let local = Episode {
        support_rows: (0..ns).collect(),
        query_rows: (ns..episode.num_items()).collect(),
        ..episode.clone()
    };
    let prototypes = compute_prototypes(&local, items)?;
    npc_classify(
        items.slice(ndarray::s![ns..episode.num_items(), ..]),
        &prototypes,
    )
}

/// Classify queries directly from an item-level distance matrix: a class's
/// score is the mean distance from the query to that class's support items.
pub fn npc_classify_from_matrix<T: Scalar>(
    dist: &DistanceMatrix<T>,
    episode: &Episode,
) -> Result<Vec<usize>> {
    let n = episode.num_items();
    if dist.len() < n {
        return Err(Error::IndexOutOfRange {
            index: n - 1,
            size: dist.len(),
        });
    }
    let ns = episode.num_support();
    let mut counts = vec![0usize; episode.ways];
    for &l in &episode.support_labels {
        counts[l] += 1;
    }
    let mut out = Vec::with_capacity(episode.num_query());
    let mut sums = vec![T::zero(); episode.ways];
    for j in ns..n {
        sums.iter_mut().for_each(|s| *s = T::zero());
        for (s, &label) in episode.support_labels.iter().enumerate() {
            sums[label] = sums[label] + dist.get(j, s);
        }
        let scores = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| s / T::of_usize(c.max(1)));
        out.push(argmin(scores));
    }
    Ok(out)
}
