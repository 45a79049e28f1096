//! Empirical posteriors over partitions: weighted atom sets produced by a
//! sampler or a solver.

use std::collections::HashMap;

use ndarray::Array2;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::partition::{voi, Partition};

/// A finitely supported distribution over partitions of the same item set.
///
/// Atoms are unique, kept in first-occurrence order, and weights are
/// normalized to sum to one.
#[derive(Clone, Debug)]
pub struct EmpiricalPartitionPosterior {
    atoms: Vec<Partition>,
    weights: Vec<f64>,
    n: usize,
}

impl EmpiricalPartitionPosterior {
    /// Builds a posterior from samples, deduplicating equal partitions and
    /// pooling their weights. `weights` defaults to uniform; it may be
    /// unnormalized but must be nonnegative, finite, and not all zero.
    pub fn from_samples(samples: &[Partition], weights: Option<&[f64]>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "posterior needs at least one sample".into(),
            ));
        }
        let n = samples[0].n();
        if samples.iter().any(|s| s.n() != n) {
            return Err(Error::InvalidArgument(
                "all posterior samples must cover the same items".into(),
            ));
        }
        if let Some(w) = weights {
            if w.len() != samples.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} weights for {} samples",
                    w.len(),
                    samples.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidArgument(
                    "sample weights must be finite and nonnegative".into(),
                ));
            }
        }

        let mut index: HashMap<&Partition, usize> = HashMap::new();
        let mut atoms: Vec<Partition> = Vec::new();
        let mut pooled: Vec<f64> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            match index.get(s) {
                Some(&at) => pooled[at] += w,
                None => {
                    index.insert(s, atoms.len());
                    atoms.push(s.clone());
                    pooled.push(w);
                }
            }
        }
        let total: f64 = pooled.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(
                "sample weights must not all be zero".into(),
            ));
        }
        for w in &mut pooled {
            *w /= total;
        }
        Ok(EmpiricalPartitionPosterior {
            atoms,
            weights: pooled,
            n,
        })
    }

    /// Builds a posterior directly from an atom list and weights on it.
    pub fn from_weighted_atoms(atoms: &[Partition], weights: &[f64]) -> Result<Self> {
        Self::from_samples(atoms, Some(weights))
    }

    pub fn support(&self) -> &[Partition] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of items each atom partitions.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of distinct atoms.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Partition, f64)> {
        self.atoms.iter().zip(self.weights.iter().copied())
    }

    /// Posterior mean of the partition entropy.
    pub fn expected_entropy(&self) -> f64 {
        self.iter().map(|(a, w)| w * a.entropy()).sum()
    }

    /// Posterior co-clustering probabilities `p_ij`, an `n x n` symmetric
    /// matrix with unit diagonal.
    pub fn coclustering(&self) -> Array2<f64> {
        let mut p = Array2::<f64>::zeros((self.n, self.n));
        for (a, w) in self.iter() {
            let labels = a.labels();
            for i in 0..self.n {
                for j in i..self.n {
                    if labels[i] == labels[j] {
                        p[(i, j)] += w;
                    }
                }
            }
        }
        for i in 0..self.n {
            for j in 0..i {
                p[(i, j)] = p[(j, i)];
            }
        }
        p
    }

    /// Mean binary uncertainty of the co-clustering probabilities:
    /// `2/(n(n-1)) * sum_{i<j} p_ij (1 - p_ij)`. Requires `n >= 2`.
    pub fn pairwise_uncertainty(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(
                "pairwise uncertainty needs at least two items".into(),
            ));
        }
        let p = self.coclustering();
        let mut total = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                total += p[(i, j)] * (1.0 - p[(i, j)]);
            }
        }
        let pairs = (self.n * (self.n - 1) / 2) as f64;
        Ok(total / pairs)
    }

    /// Posterior mean variation of information to a fixed reference
    /// partition.
    pub fn expected_voi_to(&self, reference: &Partition) -> Result<f64> {
        if reference.n() != self.n {
            return Err(Error::InvalidArgument(
                "reference partition covers a different item set".into(),
            ));
        }
        let mut total = 0.0;
        for (a, w) in self.iter() {
            total += w * voi(a, reference)?;
        }
        Ok(total)
    }

    /// Draws `m` atoms with replacement (by posterior weight) and returns the
    /// uniform posterior over the distinct draws. Deterministic in `seed`.
    pub fn subsample_support(&self, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "subsample size must be positive".into(),
            ));
        }
        let dist = rand::distr::weighted::WeightedIndex::new(&self.weights)
            .map_err(|e| Error::InvalidArgument(format!("bad posterior weights: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<Partition> = (0..m)
            .map(|_| self.atoms[dist.sample(&mut rng)].clone())
            .collect();
        Self::from_samples(&draws, None)
    }
}

/// Pools posteriors over the same item set into the finite mixture
/// `sum_k lambda_k q_k`. `lambda` must lie on the simplex within 1e-9; it is
/// renormalized exactly before pooling.
pub fn mixture(
    posteriors: &[EmpiricalPartitionPosterior],
    lambda: &[f64],
) -> Result<EmpiricalPartitionPosterior> {
    if posteriors.is_empty() {
        return Err(Error::InvalidArgument("mixture of zero posteriors".into()));
    }
    if lambda.len() != posteriors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} mixture weights for {} posteriors",
            lambda.len(),
            posteriors.len()
        )));
    }
    check_simplex(lambda, 1e-9)?;
    let n = posteriors[0].n();
    if posteriors.iter().any(|p| p.n() != n) {
        return Err(Error::InvalidArgument(
            "mixture components must cover the same items".into(),
        ));
    }
    let total: f64 = lambda.iter().sum();
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (post, &lk) in posteriors.iter().zip(lambda) {
        for (a, w) in post.iter() {
            atoms.push(a.clone());
            weights.push(w * lk / total);
        }
    }
    EmpiricalPartitionPosterior::from_weighted_atoms(&atoms, &weights)
}

/// Validates that `v` is a probability vector up to `tol` in the L1 sense.
pub fn check_simplex(v: &[f64], tol: f64) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("empty weight vector".into()));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidArgument(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "weights sum to {sum}, expected 1 within {tol:e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(labels: &[u32]) -> Partition {
        Partition::from_labels(labels).unwrap()
    }

    #[test]
    fn dedups_relabelings_into_one_atom() {
        let post =
            EmpiricalPartitionPosterior::from_samples(&[p(&[0, 0]), p(&[1, 1])], None).unwrap();
        assert_eq!(post.len(), 1);
        assert_eq!(post.support()[0], p(&[0, 0]));
        assert_eq!(post.weights(), &[1.0]);
    }

    #[test]
    fn keeps_first_occurrence_order() {
        let samples = [p(&[0, 1]), p(&[0, 0]), p(&[0, 1]), p(&[0, 1])];
        let post = EmpiricalPartitionPosterior::from_samples(&samples, None).unwrap();
        assert_eq!(post.support(), &[p(&[0, 1]), p(&[0, 0])]);
        assert_eq!(post.weights(), &[0.75, 0.25]);
    }

    #[test]
    fn coclustering_and_uncertainty_hand_values() {
        let post =
            EmpiricalPartitionPosterior::from_samples(&[p(&[0, 0]), p(&[0, 1])], None).unwrap();
        let cc = post.coclustering();
        assert_eq!(cc[(0, 0)], 1.0);
        assert_eq!(cc[(1, 1)], 1.0);
        assert_eq!(cc[(0, 1)], 0.5);
        assert_eq!(cc[(1, 0)], 0.5);
        assert_eq!(post.pairwise_uncertainty().unwrap(), 0.25);
    }

    #[test]
    fn expected_voi_to_reference() {
        let post =
            EmpiricalPartitionPosterior::from_samples(&[p(&[0, 0]), p(&[0, 1])], None).unwrap();
        let e = post.expected_voi_to(&p(&[0, 0])).unwrap();
        assert!((e - 0.5 * 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mixture_pools_and_renormalizes() {
        let q1 = EmpiricalPartitionPosterior::from_samples(&[p(&[0, 0])], None).unwrap();
        let q2 = EmpiricalPartitionPosterior::from_samples(&[p(&[0, 1])], None).unwrap();
        let mix = mixture(&[q1, q2], &[0.25, 0.75]).unwrap();
        assert_eq!(mix.len(), 2);
        assert_eq!(mix.weights(), &[0.25, 0.75]);
        assert!(mixture(&[mix.clone()], &[0.8]).is_err());
    }

    #[test]
    fn subsample_is_deterministic_in_seed() {
        let samples = [p(&[0, 0, 1]), p(&[0, 1, 1]), p(&[0, 1, 2])];
        let post = EmpiricalPartitionPosterior::from_samples(&samples, None).unwrap();
        let a = post.subsample_support(5, 42).unwrap();
        let b = post.subsample_support(5, 42).unwrap();
        assert_eq!(a.support(), b.support());
        assert_eq!(a.weights(), b.weights());
        let c = post.subsample_support(5, 43).unwrap();
        assert!(c.len() <= 3 && c.len() >= 1);
    }

    #[test]
    fn rejects_zero_total_weight() {
        let r = EmpiricalPartitionPosterior::from_weighted_atoms(&[p(&[0, 1])], &[0.0]);
        assert!(r.is_err());
    }
}
