//! Fixed-support entropic Wasserstein barycenters of shard posteriors via
//! iterative Bregman projections, and the end-to-end consensus operation.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::{CostMatrix, Metric};
use crate::partition::Partition;
use crate::posterior::{check_simplex, mixture, EmpiricalPartitionPosterior};
use crate::weights::{compute_lambda, WeightScheme};

/// How the consensus support is assembled from the shard posteriors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportStrategy {
    /// Deduplicated concatenation of every shard's atoms, in shard order.
    Union,
    /// `m` weighted draws from the equal-weight mixture of the shard
    /// posteriors, deduplicated. Deterministic given `seed`.
    Subsample {
        m: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for SupportStrategy {
    fn default() -> Self {
        SupportStrategy::Union
    }
}

pub fn build_support(
    posts: &[EmpiricalPartitionPosterior],
    strategy: &SupportStrategy,
) -> Result<Vec<Partition>> {
    if posts.is_empty() {
        return Err(Error::InvalidArgument("no shard posteriors".into()));
    }
    let n = posts[0].n();
    if posts.iter().any(|p| p.n() != n) {
        return Err(Error::InvalidArgument(
            "shard posteriors must cover the same items".into(),
        ));
    }
    match *strategy {
        SupportStrategy::Union => {
            let mut seen = std::collections::HashSet::new();
            let mut support = Vec::new();
            for post in posts {
                for atom in post.support() {
                    if seen.insert(atom.clone()) {
                        support.push(atom.clone());
                    }
                }
            }
            Ok(support)
        }
        SupportStrategy::Subsample { m, seed } => {
            let k = posts.len();
            let pooled = mixture(posts, &vec![1.0 / k as f64; k])?;
            let sub = pooled.subsample_support(m, seed)?;
            Ok(sub.support().to_vec())
        }
    }
}

/// A fully specified fixed-support barycenter instance.
#[derive(Clone, Debug)]
pub struct BarycenterProblem {
    pub support: Vec<Partition>,
    /// Shard posterior weights over their own supports.
    pub shard_measures: Vec<Vec<f64>>,
    /// Cost matrix per shard, `support.len() x shard_measures[k].len()`.
    pub cost_matrices: Vec<Array2<f64>>,
    pub lambda: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl BarycenterProblem {
    fn validate(&self) -> Result<()> {
        let k = self.shard_measures.len();
        let m0 = self.support.len();
        if k == 0 || m0 == 0 {
            return Err(Error::InvalidArgument(
                "barycenter needs at least one shard and one support atom".into(),
            ));
        }
        if self.cost_matrices.len() != k || self.lambda.len() != k || self.epsilons.len() != k {
            return Err(Error::InvalidArgument(format!(
                "inconsistent shard counts: {} measures, {} costs, {} lambdas, {} epsilons",
                k,
                self.cost_matrices.len(),
                self.lambda.len(),
                self.epsilons.len()
            )));
        }
        check_simplex(&self.lambda, 1e-9)?;
        for (kk, eps) in self.epsilons.iter().enumerate() {
            if !eps.is_finite() || *eps <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "epsilon for shard {kk} must be positive, got {eps}"
                )));
            }
        }
        for (kk, (measure, cost)) in self
            .shard_measures
            .iter()
            .zip(&self.cost_matrices)
            .enumerate()
        {
            check_simplex(measure, 1e-9)?;
            if cost.dim() != (m0, measure.len()) {
                return Err(Error::InvalidArgument(format!(
                    "cost matrix for shard {kk} is {:?}, expected ({m0}, {})",
                    cost.dim(),
                    measure.len()
                )));
            }
            if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cost matrix for shard {kk} must be finite and nonnegative"
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BarycenterResult {
    /// Barycenter weights over the problem support, summing to one.
    pub alpha: Vec<f64>,
    pub iterations: usize,
    /// L1 change in alpha over the last iteration.
    pub residual: f64,
    pub converged: bool,
    /// Final per-shard couplings, rescaled to total mass one.
    pub per_shard_plans: Vec<Array2<f64>>,
    /// Total mass of each coupling before rescaling.
    pub plan_mass: Vec<f64>,
}

/// Projection step (1): scale columns of `gamma` so its column sums equal
/// `target` exactly. Columns with zero sum and zero target stay zero.
pub fn project_columns(gamma: &mut Array2<f64>, target: &[f64]) {
    for (j, &t) in target.iter().enumerate() {
        let s: f64 = gamma.column(j).sum();
        let factor = if s == 0.0 { 0.0 } else { t / s };
        for x in gamma.column_mut(j).iter_mut() {
            *x *= factor;
        }
    }
}

/// Projection step (2) part one: the entrywise geometric mean of the shard
/// row sums with exponents `lambda`, renormalized to the simplex. Shards with
/// `lambda_k = 0` are excluded (the `x^0 = 1` convention). Computed in log
/// space so that many small row sums cannot underflow the product.
pub fn geometric_mean_rows(row_sums: &[Vec<f64>], lambda: &[f64]) -> Result<Vec<f64>> {
    let m0 = row_sums
        .first()
        .map(|r| r.len())
        .ok_or_else(|| Error::InvalidArgument("no shard row sums".into()))?;
    let mut log_alpha = vec![0.0f64; m0];
    for (rs, &lk) in row_sums.iter().zip(lambda) {
        if lk == 0.0 {
            continue;
        }
        for (la, &r) in log_alpha.iter_mut().zip(rs) {
            *la += lk * r.ln();
        }
    }
    let top = log_alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "every support atom has zero mass under some positive-weight shard".into(),
        ));
    }
    let mut alpha: Vec<f64> = log_alpha.iter().map(|&la| (la - top).exp()).collect();
    let total: f64 = alpha.iter().sum();
    for a in &mut alpha {
        *a /= total;
    }
    Ok(alpha)
}

/// Projection step (2) part two: scale rows of `gamma` so its row sums equal
/// `alpha`.
pub fn project_rows(gamma: &mut Array2<f64>, alpha: &[f64]) {
    for (i, &t) in alpha.iter().enumerate() {
        let s: f64 = gamma.row(i).sum();
        let factor = if s == 0.0 { 0.0 } else { t / s };
        for x in gamma.row_mut(i).iter_mut() {
            *x *= factor;
        }
    }
}

/// Solves the fixed-support entropic barycenter by alternating the two
/// closed-form Bregman projections. Deterministic: per-shard updates may run
/// in parallel but the alpha reduction always sums in shard order.
pub fn ibp_barycenter(problem: &BarycenterProblem) -> Result<BarycenterResult> {
    problem.validate()?;
    let k = problem.shard_measures.len();

    let mut gammas: Vec<Array2<f64>> = Vec::with_capacity(k);
    for (kk, (cost, eps)) in problem
        .cost_matrices
        .iter()
        .zip(&problem.epsilons)
        .enumerate()
    {
        let kernel = cost.mapv(|c| (-c / eps).exp());
        if kernel.rows().into_iter().any(|r| r.iter().all(|&x| x == 0.0)) {
            return Err(Error::DegenerateKernel { shard: kk, axis: "row" });
        }
        if kernel
            .columns()
            .into_iter()
            .any(|c| c.iter().all(|&x| x == 0.0))
        {
            return Err(Error::DegenerateKernel { shard: kk, axis: "column" });
        }
        let mass = kernel.sum();
        gammas.push(kernel / mass);
    }

    let mut alpha = vec![1.0 / problem.support.len() as f64; problem.support.len()];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=problem.max_iter {
        iterations = it;
        gammas
            .par_iter_mut()
            .zip(problem.shard_measures.par_iter())
            .for_each(|(gamma, target)| project_columns(gamma, target));

        let row_sums: Vec<Vec<f64>> = gammas
            .par_iter()
            .map(|g| g.sum_axis(Axis(1)).to_vec())
            .collect();
        let next = geometric_mean_rows(&row_sums, &problem.lambda)?;

        gammas
            .par_iter_mut()
            .for_each(|gamma| project_rows(gamma, &next));

        residual = alpha
            .iter()
            .zip(&next)
            .map(|(old, new)| (old - new).abs())
            .sum();
        alpha = next;
        if residual <= problem.tol {
            converged = true;
            break;
        }
    }

    let mut plan_mass = Vec::with_capacity(k);
    let mut plans = Vec::with_capacity(k);
    for gamma in gammas {
        let mass = gamma.sum();
        plan_mass.push(mass);
        plans.push(if mass > 0.0 { gamma / mass } else { gamma });
    }
    Ok(BarycenterResult {
        alpha,
        iterations,
        residual,
        converged,
        per_shard_plans: plans,
        plan_mass,
    })
}

/// Solver knobs for the consensus operation.
#[derive(Clone, Debug, Serialize)]
pub struct ConsensusParams {
    pub metric: Metric,
    /// One value broadcast to every shard, or one value per shard.
    pub epsilons: Vec<f64>,
    pub support: SupportStrategy,
    pub max_iter: usize,
    pub tol: f64,
    /// Atoms with barycenter weight strictly below this are dropped.
    pub prune_tol: f64,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        ConsensusParams {
            metric: Metric::Voi,
            epsilons: vec![crate::ot::DEFAULT_EPSILON],
            support: SupportStrategy::Union,
            max_iter: crate::ot::DEFAULT_MAX_ITER,
            tol: crate::ot::DEFAULT_TOL,
            prune_tol: 1e-12,
        }
    }
}

impl ConsensusParams {
    pub fn epsilons_for(&self, k: usize) -> Result<Vec<f64>> {
        match self.epsilons.len() {
            1 => Ok(vec![self.epsilons[0]; k]),
            len if len == k => Ok(self.epsilons.clone()),
            len => Err(Error::Config(format!(
                "{len} epsilons for {k} shards (need 1 or {k})"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsensusDiagnostics {
    pub lambda: Vec<f64>,
    pub omega: Vec<f64>,
    pub uniform_fallback: bool,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub support_size: usize,
    pub pruned_atoms: usize,
    pub plan_mass: Vec<f64>,
    pub wall_time_ms: f64,
}

/// End-to-end consensus: weights, support, barycenter, pruning.
pub fn consensus(
    posts: &[EmpiricalPartitionPosterior],
    scheme: &WeightScheme,
    params: &ConsensusParams,
) -> Result<(EmpiricalPartitionPosterior, Vec<f64>, ConsensusDiagnostics)> {
    let start = Instant::now();
    let lambda_result = compute_lambda(posts, scheme)?;
    let support = build_support(posts, &params.support)?;
    let epsilons = params.epsilons_for(posts.len())?;

    let cost_matrices = posts
        .iter()
        .map(|post| {
            CostMatrix::from_supports(&support, post.support(), params.metric)
                .map(|c| c.values().clone())
        })
        .collect::<Result<Vec<_>>>()?;

    let problem = BarycenterProblem {
        support: support.clone(),
        shard_measures: posts.iter().map(|p| p.weights().to_vec()).collect(),
        cost_matrices,
        lambda: lambda_result.lambda.clone(),
        epsilons,
        max_iter: params.max_iter,
        tol: params.tol,
    };
    let solved = ibp_barycenter(&problem)?;

    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    let mut pruned = 0usize;
    for (atom, &w) in support.iter().zip(&solved.alpha) {
        if w < params.prune_tol {
            pruned += 1;
        } else {
            atoms.push(atom.clone());
            weights.push(w);
        }
    }
    let posterior = EmpiricalPartitionPosterior::from_weighted_atoms(&atoms, &weights)?;

    let diagnostics = ConsensusDiagnostics {
        lambda: lambda_result.lambda.clone(),
        omega: lambda_result.omega,
        uniform_fallback: lambda_result.uniform_fallback,
        iterations: solved.iterations,
        residual: solved.residual,
        converged: solved.converged,
        support_size: support.len(),
        pruned_atoms: pruned,
        plan_mass: solved.plan_mass,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((posterior, lambda_result.lambda, diagnostics))
}
