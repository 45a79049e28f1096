//! Barycenter weight schemes: uniform, entropy-based, and the structured
//! product of cluster-complexity, entropy-control, and uncertainty terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::EmpiricalPartitionPosterior;

/// Map from raw shard scores to the simplex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    /// `lambda_k = omega_k^t / sum_j omega_j^t`, `t >= 1`.
    Power { t: f64 },
    /// `lambda_k = exp(omega_k / temperature)` normalized, `temperature > 0`.
    Softmax { temperature: f64 },
}

impl Default for Projection {
    fn default() -> Self {
        Projection::Power { t: 1.0 }
    }
}

impl Projection {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Projection::Power { t } => {
                if !t.is_finite() || t < 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "power projection needs t >= 1, got {t}"
                    )));
                }
            }
            Projection::Softmax { temperature } => {
                if !temperature.is_finite() || temperature <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "softmax projection needs temperature > 0, got {temperature}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Uniform,
    Entropy,
    Structured,
}

/// A full weight-scheme selection: which score to compute, the entropy
/// exponent `a` for the structured score, and the simplex projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightScheme {
    pub kind: WeightKind,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default)]
    pub projection: Projection,
}

fn default_a() -> f64 {
    1.0
}

impl WeightScheme {
    pub fn uniform() -> Self {
        WeightScheme {
            kind: WeightKind::Uniform,
            a: 1.0,
            projection: Projection::default(),
        }
    }

    pub fn entropy() -> Self {
        WeightScheme {
            kind: WeightKind::Entropy,
            a: 1.0,
            projection: Projection::default(),
        }
    }

    pub fn structured(a: f64) -> Self {
        WeightScheme {
            kind: WeightKind::Structured,
            a,
            projection: Projection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "entropy-control exponent a must be finite, got {}",
                self.a
            )));
        }
        self.projection.validate()
    }
}

/// Entropy scores: `omega_k` is the posterior mean partition entropy of
/// shard `k`.
pub fn omega_entropy(posts: &[EmpiricalPartitionPosterior]) -> Vec<f64> {
    posts.iter().map(|p| p.expected_entropy()).collect()
}

/// Structured scores. For each shard the score is the product of
///   (I)  posterior mean of `4 (p - 1)(n - p) / (n-1)^2`, with `p = exp(H(z))`
///        the perplexity of the partition,
///   (II) posterior mean of `exp(-a * Hbar(z))` with `Hbar` the normalized
///        entropy, and
///   (III) `1 - 4U` with `U` the mean co-clustering uncertainty.
/// Terms (I) and (III) are clamped to [0, 1] against floating-point strays.
pub fn omega_structured(posts: &[EmpiricalPartitionPosterior], a: f64) -> Result<Vec<f64>> {
    posts
        .iter()
        .map(|post| {
            let n = post.n();
            if n < 2 {
                return Err(Error::InvalidArgument(
                    "structured weights need at least two items per shard".into(),
                ));
            }
            let denom = ((n - 1) * (n - 1)) as f64;
            let mut complexity = 0.0;
            let mut entropy_control = 0.0;
            for (atom, w) in post.iter() {
                let perplexity = atom.perplexity();
                let term = 4.0 * (perplexity - 1.0) * (n as f64 - perplexity) / denom;
                complexity += w * term.clamp(0.0, 1.0);
                entropy_control += w * (-a * atom.normalized_entropy()).exp();
            }
            let uncertainty = (1.0 - 4.0 * post.pairwise_uncertainty()?).clamp(0.0, 1.0);
            Ok(complexity * entropy_control * uncertainty)
        })
        .collect()
}

/// Projects raw nonnegative scores onto the simplex.
///
/// The power form requires at least one strictly positive component and
/// errors with [`Error::DegenerateWeights`] otherwise so that callers can
/// fall back to uniform weights.
pub fn project_simplex(omega: &[f64], projection: &Projection) -> Result<Vec<f64>> {
    projection.validate()?;
    if omega.is_empty() {
        return Err(Error::InvalidArgument("no shard scores to project".into()));
    }
    if omega.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("shard scores must be finite".into()));
    }
    match *projection {
        Projection::Power { t } => {
            if omega.iter().any(|x| *x < 0.0) {
                return Err(Error::InvalidArgument(
                    "power projection needs nonnegative scores".into(),
                ));
            }
            let powered: Vec<f64> = omega.iter().map(|&x| x.powf(t)).collect();
            let total: f64 = powered.iter().sum();
            if total <= 0.0 {
                return Err(Error::DegenerateWeights);
            }
            Ok(powered.into_iter().map(|x| x / total).collect())
        }
        Projection::Softmax { temperature } => {
            let top = omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = omega.iter().map(|&x| ((x - top) / temperature).exp()).collect();
            let total: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|x| x / total).collect())
        }
    }
}

/// Outcome of weight computation: the simplex vector, the raw scores that
/// produced it, and whether a degenerate all-zero score vector forced a
/// uniform fallback.
#[derive(Clone, Debug, Serialize)]
pub struct LambdaResult {
    pub lambda: Vec<f64>,
    pub omega: Vec<f64>,
    pub uniform_fallback: bool,
}

/// Computes barycenter weights for the given scheme, falling back to uniform
/// when every shard score is zero.
pub fn compute_lambda(
    posts: &[EmpiricalPartitionPosterior],
    scheme: &WeightScheme,
) -> Result<LambdaResult> {
    scheme.validate()?;
    if posts.is_empty() {
        return Err(Error::InvalidArgument("no shard posteriors".into()));
    }
    let k = posts.len();
    let uniform = vec![1.0 / k as f64; k];
    let omega = match scheme.kind {
        WeightKind::Uniform => {
            return Ok(LambdaResult {
                lambda: uniform.clone(),
                omega: uniform,
                uniform_fallback: false,
            })
        }
        WeightKind::Entropy => omega_entropy(posts),
        WeightKind::Structured => omega_structured(posts, scheme.a)?,
    };
    match project_simplex(&omega, &scheme.projection) {
        Ok(lambda) => Ok(LambdaResult {
            lambda,
            omega,
            uniform_fallback: false,
        }),
        Err(Error::DegenerateWeights) => Ok(LambdaResult {
            lambda: uniform,
            omega,
            uniform_fallback: true,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Partition;

    fn point_mass(labels: &[u32]) -> EmpiricalPartitionPosterior {
        let p = Partition::from_labels(labels).unwrap();
        EmpiricalPartitionPosterior::from_samples(&[p], None).unwrap()
    }

    #[test]
    fn entropy_scores_hand_values() {
        let single = point_mass(&[0, 0, 0, 0]);
        let singletons = point_mass(&[0, 1, 2, 3]);
        let omega = omega_entropy(&[single, singletons]);
        assert_eq!(omega[0], 0.0);
        assert!((omega[1] - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn structured_score_vanishes_at_trivial_partitions() {
        for n in 2..=8usize {
            let single = point_mass(&vec![0; n]);
            let labels: Vec<u32> = (0..n as u32).collect();
            let singletons = point_mass(&labels);
            let omega = omega_structured(&[single, singletons], 1.0).unwrap();
            assert_eq!(omega, vec![0.0, 0.0], "n={n}");
        }
    }

    #[test]
    fn structured_score_hand_value() {
        let post = point_mass(&[0, 0, 1, 1]);
        let omega = omega_structured(&[post], 1.0).unwrap();
        let expected = (8.0 / 9.0) * (-1.0_f64).exp();
        assert!((omega[0] - expected).abs() < 1e-12, "{} vs {expected}", omega[0]);
    }

    #[test]
    fn structured_rejects_single_item() {
        let post = point_mass(&[0]);
        assert!(omega_structured(&[post], 1.0).is_err());
    }

    #[test]
    fn power_projection_hand_values() {
        let p = Projection::Power { t: 1.0 };
        assert_eq!(project_simplex(&[1.0, 1.0, 1.0], &p).unwrap(), vec![1.0 / 3.0; 3]);
        assert_eq!(project_simplex(&[0.0, 0.0, 1.0], &p).unwrap(), vec![0.0, 0.0, 1.0]);
        let sq = project_simplex(&[1.0, 2.0], &Projection::Power { t: 2.0 }).unwrap();
        assert!((sq[0] - 0.2).abs() < 1e-15 && (sq[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn power_projection_is_scale_invariant() {
        let omega = [0.3, 1.7, 0.0, 2.4];
        for t in [1.0, 2.0, 3.5] {
            let p = Projection::Power { t };
            let base = project_simplex(&omega, &p).unwrap();
            for c in [1e-6, 0.5, 3.0, 1e6] {
                let scaled: Vec<f64> = omega.iter().map(|x| c * x).collect();
                let out = project_simplex(&scaled, &p).unwrap();
                for (x, y) in out.iter().zip(&base) {
                    assert!((x - y).abs() < 1e-12, "t={t} c={c}");
                }
            }
        }
    }

    #[test]
    fn all_zero_scores_degenerate_then_fallback() {
        let p = Projection::Power { t: 1.0 };
        assert!(matches!(
            project_simplex(&[0.0, 0.0], &p),
            Err(Error::DegenerateWeights)
        ));
        let single = point_mass(&[0, 0, 0]);
        let res = compute_lambda(
            &[single.clone(), single],
            &WeightScheme::structured(1.0),
        )
        .unwrap();
        assert!(res.uniform_fallback);
        assert_eq!(res.lambda, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_is_monotone_and_normalized() {
        let p = Projection::Softmax { temperature: 0.5 };
        let out = project_simplex(&[0.1, 0.9, 0.4], &p).unwrap();
        let sum: f64 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(out[1] > out[2] && out[2] > out[0]);
    }

    #[test]
    fn scheme_validation() {
        assert!(Projection::Power { t: 0.5 }.validate().is_err());
        assert!(Projection::Softmax { temperature: 0.0 }.validate().is_err());
        assert!(WeightScheme::structured(f64::NAN).validate().is_err());
    }
}
