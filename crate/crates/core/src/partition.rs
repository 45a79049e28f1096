//! Set partitions in canonical form plus the loss functions used as ground
//! metrics between them.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A partition of `{0, .., n-1}` stored as canonical cluster labels.
///
/// Canonical form relabels clusters by first occurrence, so labels are
/// `0..num_clusters` and the first item always carries label 0. Two label
/// vectors inducing the same grouping are therefore equal as `Partition`s.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    labels: Vec<u32>,
}

impl Partition {
    /// Canonicalizes arbitrary labels into a `Partition`.
    ///
    /// Errors on an empty slice.
    pub fn from_labels<T: Eq + Hash + Copy>(raw: &[T]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidArgument(
                "partition must have at least one item".into(),
            ));
        }
        let mut map: HashMap<T, u32> = HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = map.len() as u32;
            labels.push(*map.entry(r).or_insert(next));
        }
        Ok(Partition { labels })
    }

    /// Number of items `n`.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Number of clusters.
    pub fn num_clusters(&self) -> usize {
        self.labels.iter().map(|&l| l + 1).max().unwrap_or(0) as usize
    }

    /// Canonical labels, one per item.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Cluster sizes indexed by canonical label.
    pub fn cluster_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.num_clusters()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Shannon entropy (nats) of the cluster-size distribution.
    ///
    /// Computed per cluster as `(c/n) * (ln n - ln c)` so the single-cluster
    /// partition returns exactly 0.0.
    pub fn entropy(&self) -> f64 {
        let n = self.labels.len() as f64;
        let ln_n = n.ln();
        self.cluster_sizes()
            .iter()
            .map(|&c| {
                let c = c as f64;
                (c / n) * (ln_n - c.ln())
            })
            .sum()
    }

    /// Perplexity `exp(entropy)`: the effective cluster count, in `[1, n]`.
    /// Exact at both extremes: 1.0 for a single cluster, `n` for all
    /// singletons (where `exp(ln n)` would drift by an ulp).
    pub fn perplexity(&self) -> f64 {
        if self.num_clusters() as usize == self.n() {
            return self.n() as f64;
        }
        self.entropy().exp()
    }

    /// Entropy normalized by `ln(num_clusters)`, or 0.0 for a single cluster.
    pub fn normalized_entropy(&self) -> f64 {
        let h = self.num_clusters();
        if h < 2 {
            return 0.0;
        }
        self.entropy() / (h as f64).ln()
    }

    /// Whether items `i` and `j` share a cluster.
    pub fn co_clustered(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Partition(")?;
        for (i, l) in self.labels.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

/// Joint cluster-membership counts for a pair of partitions over the same
/// items. `counts[(j, h)]` is the number of items in cluster `j` of the first
/// partition and cluster `h` of the second.
pub struct ContingencyCounts {
    counts: Array2<u64>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    n: u64,
}

impl ContingencyCounts {
    pub fn from_pair(p1: &Partition, p2: &Partition) -> Result<Self> {
        if p1.n() != p2.n() {
            return Err(Error::InvalidArgument(format!(
                "partitions must cover the same items (got n={} and n={})",
                p1.n(),
                p2.n()
            )));
        }
        let mut counts = Array2::<u64>::zeros((p1.num_clusters(), p2.num_clusters()));
        for (&a, &b) in p1.labels.iter().zip(&p2.labels) {
            counts[(a as usize, b as usize)] += 1;
        }
        let row_sums = counts.rows().into_iter().map(|r| r.sum()).collect();
        let col_sums = counts.columns().into_iter().map(|c| c.sum()).collect();
        Ok(ContingencyCounts {
            counts,
            row_sums,
            col_sums,
            n: p1.n() as u64,
        })
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

/// Orders a pair lexicographically by canonical labels so that symmetric
/// quantities are computed in one fixed argument order and symmetry holds
/// bit for bit.
fn ordered<'a>(p1: &'a Partition, p2: &'a Partition) -> (&'a Partition, &'a Partition) {
    if p2.labels < p1.labels {
        (p2, p1)
    } else {
        (p1, p2)
    }
}

/// Mutual information (nats) between the cluster memberships.
pub fn mutual_information(p1: &Partition, p2: &Partition) -> Result<f64> {
    let (a, b) = ordered(p1, p2);
    let table = ContingencyCounts::from_pair(a, b)?;
    let n = table.n() as f64;
    let mut mi = 0.0;
    for j in 0..table.row_sums().len() {
        for h in 0..table.col_sums().len() {
            let njh = table.counts()[(j, h)];
            if njh == 0 {
                continue;
            }
            let num = (table.n() * njh) as f64;
            let den = (table.row_sums()[j] * table.col_sums()[h]) as f64;
            mi += (njh as f64 / n) * (num / den).ln();
        }
    }
    Ok(mi)
}

/// Variation of information (nats): `H(p1) + H(p2) - 2 I(p1, p2)`, clamped at
/// zero and short-circuited to exactly 0.0 on equal partitions.
pub fn voi(p1: &Partition, p2: &Partition) -> Result<f64> {
    let (a, b) = ordered(p1, p2);
    if a == b {
        if a.n() != b.n() {
            return Err(Error::InvalidArgument(
                "partitions must cover the same items".into(),
            ));
        }
        return Ok(0.0);
    }
    let mi = mutual_information(a, b)?;
    Ok((a.entropy() + b.entropy() - 2.0 * mi).max(0.0))
}

/// Binder loss: the fraction of item pairs on which the partitions disagree
/// about co-clustering. Exact in integer arithmetic before the final division.
pub fn binder(p1: &Partition, p2: &Partition) -> Result<f64> {
    let table = ContingencyCounts::from_pair(p1, p2)?;
    let n = table.n();
    if n < 2 {
        return Ok(0.0);
    }
    let choose2 = |c: u64| c * c.saturating_sub(1) / 2;
    let together1: u64 = table.row_sums().iter().copied().map(choose2).sum();
    let together2: u64 = table.col_sums().iter().copied().map(choose2).sum();
    let both: u64 = table.counts().iter().copied().map(choose2).sum();
    let disagreements = together1 + together2 - 2 * both;
    Ok(disagreements as f64 / choose2(n) as f64)
}
