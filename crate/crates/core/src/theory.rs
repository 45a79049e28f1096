//! Brute-force verification of the hierarchical generalized-Bayes model and
//! its variational upper bound on tiny partition spaces.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ot::{sinkhorn, CostMatrix, Metric};
use crate::partition::Partition;
use crate::posterior::check_simplex;

/// Set partitions of `{0..n}` for each `n`, i.e. the Bell numbers.
pub const BELL: [usize; 8] = [1, 2, 5, 15, 52, 203, 877, 4140];

/// Enumerates every set partition of `n` items in canonical form via
/// restricted growth strings. Guarded at `n <= 8` (4140 partitions).
pub fn enumerate_partitions(n: usize) -> Result<Vec<Partition>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot enumerate partitions of zero items".into(),
        ));
    }
    if n > 8 {
        return Err(Error::SizeGuard(format!(
            "partition enumeration is limited to n <= 8, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(BELL[n - 1]);
    let mut labels = vec![0u32; n];
    fn grow(labels: &mut Vec<u32>, pos: usize, max_used: u32, out: &mut Vec<Partition>) {
        if pos == labels.len() {
            out.push(Partition::from_labels(labels).expect("nonempty"));
            return;
        }
        for label in 0..=max_used + 1 {
            labels[pos] = label;
            grow(labels, pos + 1, max_used.max(label), out);
        }
    }
    if n == 1 {
        out.push(Partition::from_labels(&[0u32]).expect("nonempty"));
    } else {
        labels[0] = 0;
        grow(&mut labels, 1, 0, &mut out);
    }
    Ok(out)
}

/// A fully enumerable instance of the hierarchical shard model: `K` shards
/// with inverse temperatures `zeta`, a ground metric, and strictly positive
/// synthetic likelihood tables aligned with [`enumerate_partitions`] order.
#[derive(Clone, Debug)]
pub struct TinyModel {
    space: Vec<Partition>,
    zeta: Vec<f64>,
    metric: Metric,
    likelihoods: Vec<Vec<f64>>,
}

impl TinyModel {
    pub fn new(
        n: usize,
        zeta: Vec<f64>,
        metric: Metric,
        likelihoods: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let space = enumerate_partitions(n)?;
        if zeta.is_empty() || zeta.len() != likelihoods.len() {
            return Err(Error::InvalidArgument(format!(
                "{} zetas for {} likelihood tables",
                zeta.len(),
                likelihoods.len()
            )));
        }
        if zeta.iter().any(|z| !z.is_finite() || *z <= 0.0) {
            return Err(Error::InvalidArgument(
                "inverse temperatures must be strictly positive".into(),
            ));
        }
        for (k, table) in likelihoods.iter().enumerate() {
            if table.len() != space.len() {
                return Err(Error::InvalidArgument(format!(
                    "likelihood table {k} has {} entries for {} partitions",
                    table.len(),
                    space.len()
                )));
            }
            if table.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "likelihood table {k} must be strictly positive"
                )));
            }
        }
        Ok(TinyModel {
            space,
            zeta,
            metric,
            likelihoods,
        })
    }

    pub fn space(&self) -> &[Partition] {
        &self.space
    }

    pub fn shards(&self) -> usize {
        self.zeta.len()
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn likelihoods(&self) -> &[Vec<f64>] {
        &self.likelihoods
    }

    pub fn n(&self) -> usize {
        self.space[0].n()
    }

    /// Pairwise ground-metric costs over the whole space.
    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        CostMatrix::from_supports(&self.space, &self.space, self.metric)
    }
}

/// Exact tables of the hierarchical model: the prior over the consensus
/// partition, the per-shard conditionals, and the normalizing constants.
#[derive(Clone, Debug)]
pub struct HierModel {
    /// `prior[i] = prod_k C_k(z_i) / C`.
    pub prior: Vec<f64>,
    /// `conditionals[k][(i, j)] = p(z_shard = z_j | z = z_i)`.
    pub conditionals: Vec<Array2<f64>>,
    /// `c_k[k][i] = C_k(z_i) = sum_j exp(-zeta_k c(z_j, z_i))`.
    pub c_k: Vec<Vec<f64>>,
    /// `C = sum_i prod_k C_k(z_i)`.
    pub c_total: f64,
}

pub fn hier_model(model: &TinyModel) -> Result<HierModel> {
    let cost = model.cost_matrix()?;
    let s = model.space().len();
    let mut conditionals = Vec::with_capacity(model.shards());
    let mut c_k = Vec::with_capacity(model.shards());
    for &zeta in model.zeta() {
        let mut table = Array2::<f64>::zeros((s, s));
        let mut consts = Vec::with_capacity(s);
        for i in 0..s {
            let mut row_sum = 0.0;
            for j in 0..s {
                let w = (-zeta * cost.values()[(j, i)]).exp();
                table[(i, j)] = w;
                row_sum += w;
            }
            consts.push(row_sum);
            for j in 0..s {
                table[(i, j)] /= row_sum;
            }
        }
        conditionals.push(table);
        c_k.push(consts);
    }
    let mut prior: Vec<f64> = (0..s)
        .map(|i| c_k.iter().map(|consts| consts[i]).product())
        .collect();
    let c_total: f64 = prior.iter().sum();
    for p in &mut prior {
        *p /= c_total;
    }
    Ok(HierModel {
        prior,
        conditionals,
        c_k,
        c_total,
    })
}

fn guard_joint(model: &TinyModel) -> Result<()> {
    if model.n() > 4 || model.shards() > 3 {
        return Err(Error::SizeGuard(format!(
            "full joints need n <= 4 and K <= 3, got n={} K={}",
            model.n(),
            model.shards()
        )));
    }
    Ok(())
}

/// Number of cells in the full joint table over `(z, z_1, .., z_K)`.
pub fn joint_size(model: &TinyModel) -> usize {
    model.space().len().pow(model.shards() as u32 + 1)
}

/// Decomposes a flat joint index into `(i0, i1, .., iK)` over the space.
fn decompose(mut idx: usize, s: usize, k: usize) -> Vec<usize> {
    let mut parts = vec![0usize; k + 1];
    for slot in (0..=k).rev() {
        parts[slot] = idx % s;
        idx /= s;
    }
    parts
}

/// Negative evidence lower bound of a joint variational table `q` over
/// `(z, z_1, .., z_K)`: `E_q[-log p(z, z_1.., X)] - H(q)`, with `0 log 0 = 0`.
pub fn nelbo(q: &[f64], model: &TinyModel) -> Result<f64> {
    guard_joint(model)?;
    let s = model.space().len();
    let k = model.shards();
    if q.len() != joint_size(model) {
        return Err(Error::InvalidArgument(format!(
            "joint table has {} cells, expected {}",
            q.len(),
            joint_size(model)
        )));
    }
    check_simplex(q, 1e-9)?;
    let hier = hier_model(model)?;
    let log_prior: Vec<f64> = hier.prior.iter().map(|p| p.ln()).collect();
    let log_cond: Vec<Array2<f64>> = hier.conditionals.iter().map(|t| t.mapv(f64::ln)).collect();
    let log_lik: Vec<Vec<f64>> = model
        .likelihoods()
        .iter()
        .map(|t| t.iter().map(|v| v.ln()).collect())
        .collect();

    let mut value = 0.0;
    for (idx, &qv) in q.iter().enumerate() {
        if qv == 0.0 {
            continue;
        }
        let parts = decompose(idx, s, k);
        let mut logp = log_prior[parts[0]];
        for shard in 0..k {
            logp += log_cond[shard][(parts[0], parts[shard + 1])];
            logp += log_lik[shard][parts[shard + 1]];
        }
        value += qv * (qv.ln() - logp);
    }
    Ok(value)
}

/// Exact joint posterior `p(z, z_1.., | X)` and the evidence `p(X)`.
pub fn exact_posterior(model: &TinyModel) -> Result<(Vec<f64>, f64)> {
    guard_joint(model)?;
    let s = model.space().len();
    let k = model.shards();
    let hier = hier_model(model)?;
    let mut joint = vec![0.0f64; joint_size(model)];
    for (idx, cell) in joint.iter_mut().enumerate() {
        let parts = decompose(idx, s, k);
        let mut p = hier.prior[parts[0]];
        for shard in 0..k {
            p *= hier.conditionals[shard][(parts[0], parts[shard + 1])];
            p *= model.likelihoods()[shard][parts[shard + 1]];
        }
        *cell = p;
    }
    let evidence: f64 = joint.iter().sum();
    for cell in &mut joint {
        *cell /= evidence;
    }
    Ok((joint, evidence))
}

/// Builds the star-structured joint `q_0(z) prod_k gamma_k(z, z_k) / q_0(z)`
/// from a hub marginal and pairwise plans whose row marginals must match it
/// within 1e-9 in L1. The result is renormalized to the simplex to absorb
/// solver-tolerance drift.
pub fn star_coupling(q0: &[f64], plans: &[&Array2<f64>]) -> Result<Vec<f64>> {
    if plans.is_empty() {
        return Err(Error::InvalidArgument("star coupling needs plans".into()));
    }
    let s = q0.len();
    check_simplex(q0, 1e-9)?;
    for (k, plan) in plans.iter().enumerate() {
        if plan.nrows() != s || plan.ncols() != s {
            return Err(Error::InvalidArgument(format!(
                "plan {k} is {:?}, expected ({s}, {s})",
                plan.dim()
            )));
        }
        let drift: f64 = (0..s)
            .map(|i| (plan.row(i).sum() - q0[i]).abs())
            .sum();
        if drift > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "plan {k} row marginal differs from the hub by {drift:.3e} in L1"
            )));
        }
    }
    let k = plans.len();
    let size = s.pow(k as u32 + 1);
    let mut joint = vec![0.0f64; size];
    for (idx, cell) in joint.iter_mut().enumerate() {
        let parts = decompose(idx, s, k);
        let hub = q0[parts[0]];
        if hub == 0.0 {
            continue;
        }
        let mut value = hub;
        for shard in 0..k {
            value *= plans[shard][(parts[0], parts[shard + 1])] / hub;
        }
        *cell = value;
    }
    let total: f64 = joint.iter().sum();
    if !(total.is_finite()) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "star coupling mass {total} is not a probability"
        )));
    }
    for cell in &mut joint {
        *cell /= total;
    }
    Ok(joint)
}

/// One randomized verification instance: a tiny model plus variational
/// marginals to check the bound at.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub model: TinyModel,
    pub q0: Vec<f64>,
    pub qs: Vec<Vec<f64>>,
}

/// Draws a verification instance: per-shard inverse temperatures uniform
/// from `zeta_palette`, strictly positive likelihood tables, and strictly
/// positive marginals on the simplex.
pub fn random_instance(
    n: usize,
    shards: usize,
    zeta_palette: &[f64],
    metric: Metric,
    rng: &mut impl Rng,
) -> Result<RandomInstance> {
    if zeta_palette.is_empty() {
        return Err(Error::InvalidArgument("empty zeta palette".into()));
    }
    if shards == 0 {
        return Err(Error::InvalidArgument("need at least one shard".into()));
    }
    let space_size = enumerate_partitions(n)?.len();
    let zeta: Vec<f64> = (0..shards)
        .map(|_| zeta_palette[rng.random_range(0..zeta_palette.len())])
        .collect();
    let likelihoods: Vec<Vec<f64>> = (0..shards)
        .map(|_| (0..space_size).map(|_| rng.random_range(0.1..3.0)).collect())
        .collect();
    let model = TinyModel::new(n, zeta, metric, likelihoods)?;

    fn draw_simplex<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
        v
    }
    let q0 = draw_simplex(rng, space_size);
    let qs: Vec<Vec<f64>> = (0..shards)
        .map(|_| draw_simplex(rng, space_size))
        .collect();
    Ok(RandomInstance { model, q0, qs })
}

/// Result of one bound verification. `holds` certifies the variational upper
/// bound on this instance: the attained star-coupling objective `lhs_star`
/// (an upper bound for the minimal objective) stayed below `rhs`.
#[derive(Clone, Debug)]
pub struct BoundCheck {
    pub lhs_star: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Entropic transport objective per shard at `epsilon_k = 1/(K zeta_k)`.
    pub per_shard_w: Vec<f64>,
    /// The additive constant `C = sum_z prod_k C_k(z)` used in `rhs`,
    /// and its logarithm for slack inspection.
    pub c_total: f64,
    pub log_c_total: f64,
}

/// Verifies the upper bound on one instance: solves each entropic transport
/// at `epsilon_k = 1/(K zeta_k)`, assembles the star coupling, and compares
/// its objective with
/// `sum_k zeta_k W_k - sum_k E_{q_k}[log p_k] + C`.
pub fn check_bound(model: &TinyModel, q0: &[f64], qs: &[Vec<f64>]) -> Result<BoundCheck> {
    guard_joint(model)?;
    let s = model.space().len();
    let k = model.shards();
    if qs.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} shard marginals for {k} shards",
            qs.len()
        )));
    }
    if q0.len() != s || qs.iter().any(|q| q.len() != s) {
        return Err(Error::InvalidArgument(
            "marginals must cover the whole partition space".into(),
        ));
    }
    check_simplex(q0, 1e-9)?;
    for q in qs {
        check_simplex(q, 1e-9)?;
    }

    let cost = model.cost_matrix()?;
    let hier = hier_model(model)?;
    let mut plans = Vec::with_capacity(k);
    let mut per_shard_w = Vec::with_capacity(k);
    for (shard, q_k) in qs.iter().enumerate() {
        let epsilon = 1.0 / (k as f64 * model.zeta()[shard]);
        let solved = sinkhorn(q0, q_k, &cost, epsilon, 200_000, 1e-11)?;
        per_shard_w.push(solved.objective);
        plans.push(solved.plan.values().clone());
    }
    let plan_refs: Vec<&Array2<f64>> = plans.iter().collect();
    let star = star_coupling(q0, &plan_refs)?;
    let lhs_star = nelbo(&star, model)?;

    let mut rhs = hier.c_total;
    for shard in 0..k {
        rhs += model.zeta()[shard] * per_shard_w[shard];
        let expected_log_lik: f64 = qs[shard]
            .iter()
            .zip(&model.likelihoods()[shard])
            .map(|(&q, &lik)| q * lik.ln())
            .sum();
        rhs -= expected_log_lik;
    }

    Ok(BoundCheck {
        lhs_star,
        rhs,
        holds: lhs_star <= rhs + 1e-6,
        per_shard_w,
        c_total: hier.c_total,
        log_c_total: hier.c_total.ln(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize) -> TinyModel {
        let bell = enumerate_partitions(n).unwrap().len();
        let zeta: Vec<f64> = (0..k)
            .map(|_| [0.5, 1.0, 2.0, 5.0][rng.random_range(0..4)])
            .collect();
        let likelihoods: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..bell).map(|_| rng.random_range(0.1..3.0)).collect())
            .collect();
        TinyModel::new(n, zeta, Metric::Voi, likelihoods).unwrap()
    }

    #[test]
    fn bell_numbers() {
        for (n, &expected) in BELL.iter().enumerate() {
            let parts = enumerate_partitions(n + 1).unwrap();
            assert_eq!(parts.len(), expected, "n={}", n + 1);
            let mut dedup = parts.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), parts.len());
        }
        assert!(matches!(enumerate_partitions(9), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn hier_model_tables_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 4, 3);
        let hier = hier_model(&model).unwrap();
        let prior_sum: f64 = hier.prior.iter().sum();
        assert!((prior_sum - 1.0).abs() < 1e-12);
        for table in &hier.conditionals {
            for i in 0..table.nrows() {
                let row_sum: f64 = table.row(i).sum();
                assert!((row_sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_hand_table_two_items() {
        let model = TinyModel::new(2, vec![1.0], Metric::Voi, vec![vec![1.0, 1.0]]).unwrap();
        let hier = hier_model(&model).unwrap();
        let t = &hier.conditionals[0];
        let z = 1.0 + (-(2.0f64.ln())).exp(); // 1 + e^{-ln 2} = 1.5
        assert!((hier.c_k[0][0] - z).abs() < 1e-12);
        assert!((t[(0, 0)] - 1.0 / z).abs() < 1e-12);
        assert!((t[(0, 1)] - 0.5 / z).abs() < 1e-12);
        assert!((t[(1, 0)] - 0.5 / z).abs() < 1e-12);
        assert!((t[(1, 1)] - 1.0 / z).abs() < 1e-12);
    }

    #[test]
    fn high_zeta_concentrates_conditionals() {
        let bell3 = 5;
        let model =
            TinyModel::new(3, vec![50.0], Metric::Voi, vec![vec![1.0; bell3]]).unwrap();
        let hier = hier_model(&model).unwrap();
        for i in 0..bell3 {
            assert!(hier.conditionals[0][(i, i)] >= 0.999);
        }
    }

    #[test]
    fn nelbo_of_exact_posterior_is_negative_log_evidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let model = random_model(&mut rng, 3, 2);
            let (posterior, evidence) = exact_posterior(&model).unwrap();
            let l = nelbo(&posterior, &model).unwrap();
            assert!((l + evidence.ln()).abs() < 1e-9, "{l} vs {}", -evidence.ln());

            let random_q = {
                let mut q: Vec<f64> = (0..posterior.len())
                    .map(|_| rng.random_range(0.01..1.0))
                    .collect();
                let s: f64 = q.iter().sum();
                q.iter_mut().for_each(|x| *x /= s);
                q
            };
            assert!(l <= nelbo(&random_q, &model).unwrap() + 1e-9);
        }
    }

    #[test]
    fn nelbo_point_mass_hand_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 2, 1);
        let (posterior, _) = exact_posterior(&model).unwrap();
        let map_idx = posterior
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let mut q = vec![0.0; posterior.len()];
        q[map_idx] = 1.0;
        let l = nelbo(&q, &model).unwrap();

        let hier = hier_model(&model).unwrap();
        let parts = decompose(map_idx, 2, 1);
        let logp = hier.prior[parts[0]].ln()
            + hier.conditionals[0][(parts[0], parts[1])].ln()
            + model.likelihoods()[0][parts[1]].ln();
        assert!((l + logp).abs() < 1e-12);
    }

    #[test]
    fn star_coupling_identities() {
        let q0 = vec![0.25, 0.75];
        let plan = ndarray::array![[0.1, 0.15], [0.3, 0.45]];
        let joint = star_coupling(&q0, &[&plan]).unwrap();
        for (cell, expected) in joint.iter().zip(plan.iter()) {
            assert!((cell - expected).abs() < 1e-12);
        }

        let qk = vec![0.4, 0.6];
        let product = ndarray::Array2::from_shape_fn((2, 2), |(i, j)| q0[i] * qk[j]);
        let joint = star_coupling(&q0, &[&product, &product]).unwrap();
        for idx in 0..8 {
            let parts = decompose(idx, 2, 2);
            let expected = q0[parts[0]] * qk[parts[1]] * qk[parts[2]];
            assert!((joint[idx] - expected).abs() < 1e-12);
        }

        let bad = ndarray::array![[0.5, 0.0], [0.0, 0.5]];
        assert!(star_coupling(&q0, &[&bad]).is_err());
    }

    #[test]
    fn bound_holds_on_simple_and_posterior_instances() {
        let model =
            TinyModel::new(2, vec![1.0], Metric::Voi, vec![vec![0.8, 1.7]]).unwrap();
        let check = check_bound(&model, &[0.5, 0.5], &[vec![0.3, 0.7]]).unwrap();
        assert!(check.holds, "lhs {} rhs {}", check.lhs_star, check.rhs);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tiny = random_model(&mut rng, 3, 2);
        let hier = hier_model(&tiny).unwrap();
        let space = tiny.space().len();
        // Shard posteriors p(z_k | X_k) under the tiny model itself.
        let qs: Vec<Vec<f64>> = (0..tiny.shards())
            .map(|k| {
                let mut q: Vec<f64> = (0..space)
                    .map(|j| {
                        (0..space)
                            .map(|i| {
                                hier.prior[i]
                                    * hier.conditionals[k][(i, j)]
                                    * tiny.likelihoods()[k][j]
                            })
                            .sum()
                    })
                    .collect();
                let s: f64 = q.iter().sum();
                q.iter_mut().for_each(|x| *x /= s);
                q
            })
            .collect();
        let check = check_bound(&tiny, &hier.prior, &qs).unwrap();
        assert!(check.holds, "lhs {} rhs {}", check.lhs_star, check.rhs);
    }

    #[test]
    fn bound_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let model = random_model(&mut rng, 3, 2);
            let q0 = simplex(&mut rng, model.space().len());
            let qs: Vec<Vec<f64>> = (0..model.shards())
                .map(|_| simplex(&mut rng, model.space().len()))
                .collect();
            let check = check_bound(&model, &q0, &qs).unwrap();
            assert!(
                check.holds,
                "trial {trial}: lhs {} rhs {}",
                check.lhs_star, check.rhs
            );
        }
    }

    #[test]
    fn joint_size_guard() {
        let zeta = vec![1.0; 4];
        let bell = enumerate_partitions(3).unwrap().len();
        let tables = vec![vec![1.0; bell]; 4];
        let model = TinyModel::new(3, zeta, Metric::Voi, tables).unwrap();
        assert!(matches!(
            nelbo(&[1.0], &model),
            Err(Error::SizeGuard(_))
        ));
    }
}
