//! Entropic optimal transport between discrete measures on partition
//! supports, plus an exact assignment oracle used to validate the small-ε
//! regime.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{binder, voi, Partition};
use crate::posterior::check_simplex;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-9;

/// Ground metric between partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Voi,
    Binder,
}

impl Metric {
    pub fn eval(&self, a: &Partition, b: &Partition) -> Result<f64> {
        match self {
            Metric::Voi => voi(a, b),
            Metric::Binder => binder(a, b),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voi" => Ok(Metric::Voi),
            "binder" => Ok(Metric::Binder),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric `{other}` (expected voi or binder)"
            ))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Voi => write!(f, "voi"),
            Metric::Binder => write!(f, "binder"),
        }
    }
}

/// Pairwise ground-metric costs between two partition supports.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    values: Array2<f64>,
    metric: Metric,
}

impl CostMatrix {
    /// Builds the `|A| x |B|` matrix of metric values. Rows are computed in
    /// parallel; the result does not depend on scheduling.
    pub fn from_supports(a: &[Partition], b: &[Partition], metric: Metric) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        let n = a[0].n();
        if a.iter().chain(b.iter()).any(|p| p.n() != n) {
            return Err(Error::InvalidArgument(
                "all partitions in both supports must cover the same items".into(),
            ));
        }
        let rows: Vec<Vec<f64>> = a
            .par_iter()
            .map(|pi| {
                b.iter()
                    .map(|pj| metric.eval(pi, pj).expect("sizes validated"))
                    .collect()
            })
            .collect();
        let mut values = Array2::zeros((a.len(), b.len()));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                values[(i, j)] = v;
            }
        }
        Ok(CostMatrix { values, metric })
    }

    /// Wraps a precomputed nonnegative cost matrix.
    pub fn from_values(values: Array2<f64>, metric: Metric) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty cost matrix".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(CostMatrix { values, metric })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Median of the strictly positive entries, or `None` if all entries are
    /// zero. Drives the plain-vs-log-domain switch.
    pub fn median_positive(&self) -> Option<f64> {
        let mut positive: Vec<f64> = self.values.iter().cloned().filter(|v| *v > 0.0).collect();
        if positive.is_empty() {
            return None;
        }
        positive.sort_by(|x, y| x.partial_cmp(y).expect("finite costs"));
        let mid = positive.len() / 2;
        Some(if positive.len() % 2 == 1 {
            positive[mid]
        } else {
            0.5 * (positive[mid - 1] + positive[mid])
        })
    }
}

/// A coupling between two discrete measures together with its target
/// marginals.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    values: Array2<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
}

impl TransportPlan {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.values.sum_axis(Axis(0)).to_vec()
    }

    /// L1 distance of the realized marginals from their targets, maximized
    /// over the two sides.
    pub fn marginal_residual(&self) -> f64 {
        let row: f64 = self
            .row_sums()
            .iter()
            .zip(&self.row_marginal)
            .map(|(s, a)| (s - a).abs())
            .sum();
        let col: f64 = self
            .col_sums()
            .iter()
            .zip(&self.col_marginal)
            .map(|(s, b)| (s - b).abs())
            .sum();
        row.max(col)
    }
}

/// Output of a converged sinkhorn run. `objective` is the entropic transport
/// objective `<plan, M> - epsilon * H(plan)` with `H` the plan entropy over
/// all cells; it can be negative at large `epsilon`, so the bare transport
/// cost is reported alongside.
#[derive(Clone, Debug)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    pub transport_cost: f64,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
    pub log_domain: bool,
}

fn plan_entropy(values: &Array2<f64>) -> f64 {
    values
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let top = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    top + values.map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// Entropic OT between `a` and `b` under `cost`.
///
/// Iterations run in the plain scaling domain, switching to stabilized
/// log-domain updates when `epsilon` is small relative to the median positive
/// cost (or when the plain kernel underflows an entire row or column).
/// Converges when the L1 marginal residual drops to `tol`; exceeding
/// `max_iter` is an error carrying the final residual.
pub fn sinkhorn(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    let (m1, m2) = cost.values().dim();
    if a.len() != m1 || b.len() != m2 {
        return Err(Error::InvalidArgument(format!(
            "marginals ({}, {}) do not match cost matrix {m1}x{m2}",
            a.len(),
            b.len()
        )));
    }
    check_simplex(a, 1e-9)?;
    check_simplex(b, 1e-9)?;
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be positive".into()));
    }

    let log_domain = match cost.median_positive() {
        Some(med) => epsilon < 0.05 * med,
        None => false,
    };
    if !log_domain {
        let kernel = cost.values().mapv(|c| (-c / epsilon).exp());
        let row_ok = kernel.rows().into_iter().all(|r| r.iter().any(|&x| x > 0.0));
        let col_ok = kernel
            .columns()
            .into_iter()
            .all(|c| c.iter().any(|&x| x > 0.0));
        if row_ok && col_ok {
            return sinkhorn_plain(a, b, cost, kernel, epsilon, max_iter, tol);
        }
    }
    sinkhorn_log(a, b, cost, epsilon, max_iter, tol)
}

fn finish(
    values: Array2<f64>,
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    epsilon: f64,
    iterations: usize,
    log_domain: bool,
) -> SinkhornResult {
    let transport_cost = (&values * cost.values()).sum();
    let objective = transport_cost - epsilon * plan_entropy(&values);
    let plan = TransportPlan {
        values,
        row_marginal: a.to_vec(),
        col_marginal: b.to_vec(),
    };
    let residual = plan.marginal_residual();
    SinkhornResult {
        plan,
        transport_cost,
        objective,
        iterations,
        residual,
        log_domain,
    }
}

fn sinkhorn_plain(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    kernel: Array2<f64>,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    let av = Array1::from(a.to_vec());
    let bv = Array1::from(b.to_vec());
    let mut v = Array1::<f64>::ones(b.len());
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let kv = kernel.dot(&v);
        let u = azip_div(&av, &kv);
        let ktu = kernel.t().dot(&u);
        residual = v
            .iter()
            .zip(ktu.iter())
            .zip(bv.iter())
            .map(|((vj, kj), bj)| (vj * kj - bj).abs())
            .sum();
        if residual <= tol {
            let mut values = kernel.clone();
            for ((i, j), x) in values.indexed_iter_mut() {
                *x *= u[i] * v[j];
            }
            return Ok(finish(values, a, b, cost, epsilon, it, false));
        }
        v = azip_div(&bv, &ktu);
    }
    Err(Error::SinkhornNotConverged {
        iterations: max_iter,
        residual,
        tol,
    })
}

/// Elementwise `num / den` with the `0 / 0 -> 0` convention for zero-mass
/// marginal entries.
fn azip_div(num: &Array1<f64>, den: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(
        num.iter()
            .zip(den.iter())
            .map(|(&n, &d)| if n == 0.0 { 0.0 } else { n / d }),
    )
}

fn sinkhorn_log(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    let (m1, m2) = cost.values().dim();
    let scaled = cost.values().mapv(|c| -c / epsilon);
    let la: Vec<f64> = a.iter().map(|&x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|&x| x.ln()).collect();
    let mut phi = vec![0.0f64; m1];
    let mut psi = vec![0.0f64; m2];
    for (i, &x) in la.iter().enumerate() {
        if x == f64::NEG_INFINITY {
            phi[i] = f64::NEG_INFINITY;
        }
    }
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        for i in 0..m1 {
            if la[i] == f64::NEG_INFINITY {
                continue;
            }
            let lse = logsumexp((0..m2).map(|j| psi[j] + scaled[(i, j)]));
            phi[i] = la[i] - lse;
        }
        let col_logsums: Vec<f64> = (0..m2)
            .map(|j| logsumexp((0..m1).map(|i| phi[i] + psi[j] + scaled[(i, j)])))
            .collect();
        residual = col_logsums
            .iter()
            .zip(b.iter())
            .map(|(&s, &bj)| (s.exp() - bj).abs())
            .sum();
        if residual <= tol {
            let mut values = Array2::zeros((m1, m2));
            for ((i, j), x) in values.indexed_iter_mut() {
                *x = (phi[i] + psi[j] + scaled[(i, j)]).exp();
            }
            return Ok(finish(values, a, b, cost, epsilon, it, true));
        }
        for j in 0..m2 {
            if lb[j] == f64::NEG_INFINITY {
                psi[j] = f64::NEG_INFINITY;
            } else {
                psi[j] += lb[j] - col_logsums[j];
            }
        }
    }
    Err(Error::SinkhornNotConverged {
        iterations: max_iter,
        residual,
        tol,
    })
}

/// Exact optimal transport between uniform measures on equal-size supports,
/// which reduces to the assignment problem. Returns the minimizing
/// permutation `sigma` (as `sigma[i] = j`) and the value
/// `(1/m) * sum_i M[i][sigma[i]]`.
///
/// O(m^3) shortest-augmenting-path implementation with potentials.
pub fn exact_ot_assignment(
    support_a: &[Partition],
    support_b: &[Partition],
    cost: &CostMatrix,
) -> Result<(Vec<usize>, f64)> {
    if support_a.len() != support_b.len() {
        return Err(Error::InvalidArgument(format!(
            "assignment oracle needs equal supports, got {} and {}",
            support_a.len(),
            support_b.len()
        )));
    }
    let m = support_a.len();
    if cost.values().dim() != (m, m) {
        return Err(Error::InvalidArgument(
            "cost matrix does not match support sizes".into(),
        ));
    }
    let c = cost.values();

    // Potentials u, v and column matching p, all 1-indexed with a virtual
    // column 0 used to seed each augmenting search.
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut sigma = vec![0usize; m];
    for j in 1..=m {
        sigma[p[j] - 1] = j - 1;
    }
    let total: f64 = (0..m).map(|i| c[(i, sigma[i])]).sum();
    Ok((sigma, total / m as f64))
}
