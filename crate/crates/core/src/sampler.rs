//! Truncated stick-breaking Dirichlet-process mixture samplers with
//! conjugate Gaussian (diagonal) and Poisson-Gamma kernels.
//!
//! One chain is strictly sequential; shards run on independent streams
//! derived with [`shard_seed`], so adding shards never perturbs existing
//! streams and results are independent of worker scheduling.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Partition;

/// Per-shard RNG stream: `base ^ splitmix64(k)`. splitmix64 is a bijection,
/// so distinct shards always get distinct seeds.
pub fn shard_seed(base: u64, shard_index: usize) -> u64 {
    base ^ splitmix64(shard_index as u64)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn default_truncation() -> usize {
    20
}

fn default_concentration() -> f64 {
    1.0
}

fn default_mean_precision_scale() -> f64 {
    0.01
}

fn default_gaussian_shape() -> f64 {
    2.0
}

fn default_gamma_hyper() -> f64 {
    1.0
}

fn default_thin() -> usize {
    1
}

/// Initial assignment of items to truncation slots.
///
/// `Random` scatters items uniformly over the slots so the chain starts
/// maximally split and coalesces; `OneCluster` starts with every item in
/// slot zero so clusters appear only once the likelihood asks for them,
/// which avoids locking in spurious small clusters on feature-free data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    #[default]
    Random,
    OneCluster,
}

impl InitStrategy {
    fn assignments(self, n: usize, l: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self {
            InitStrategy::Random => (0..n).map(|_| rng.random_range(0..l)).collect(),
            InitStrategy::OneCluster => vec![0; n],
        }
    }
}

/// Gaussian kernel with independent per-dimension Normal-Gamma conjugate
/// priors: precision `tau ~ Gamma(shape, rate)`, mean
/// `mu | tau ~ N(prior_mean, 1/(mean_precision_scale * tau))`.
///
/// `prior_mean` and `rate` default to the per-dimension data mean and data
/// variance when left unset; explicit values are shared across dimensions.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianDpmConfig {
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default)]
    pub prior_mean: Option<f64>,
    #[serde(default = "default_mean_precision_scale")]
    pub mean_precision_scale: f64,
    #[serde(default = "default_gaussian_shape")]
    pub shape: f64,
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub init: InitStrategy,
}

impl Default for GaussianDpmConfig {
    fn default() -> Self {
        GaussianDpmConfig {
            truncation: default_truncation(),
            concentration: default_concentration(),
            prior_mean: None,
            mean_precision_scale: default_mean_precision_scale(),
            shape: default_gaussian_shape(),
            rate: None,
            init: InitStrategy::default(),
        }
    }
}

impl GaussianDpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 2 {
            return Err(Error::InvalidArgument(
                "truncation must be at least 2".into(),
            ));
        }
        for (name, value) in [
            ("concentration", self.concentration),
            ("mean_precision_scale", self.mean_precision_scale),
            ("shape", self.shape),
            ("rate", self.rate.unwrap_or(1.0)),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        if let Some(m) = self.prior_mean {
            if !m.is_finite() {
                return Err(Error::InvalidArgument("prior_mean must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Poisson kernel with a `Gamma(shape, rate)` prior on every cluster rate;
/// row `i` has likelihood `prod_d Poisson(x_id | N_i * theta_hd)` where
/// `N_i` is the row total.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonDpmConfig {
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_gamma_hyper")]
    pub shape: f64,
    #[serde(default = "default_gamma_hyper")]
    pub rate: f64,
    #[serde(default)]
    pub init: InitStrategy,
}

impl Default for PoissonDpmConfig {
    fn default() -> Self {
        PoissonDpmConfig {
            truncation: default_truncation(),
            concentration: default_concentration(),
            shape: default_gamma_hyper(),
            rate: default_gamma_hyper(),
            init: InitStrategy::default(),
        }
    }
}

impl PoissonDpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 2 {
            return Err(Error::InvalidArgument(
                "truncation must be at least 2".into(),
            ));
        }
        for (name, value) in [
            ("concentration", self.concentration),
            ("shape", self.shape),
            ("rate", self.rate),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Chain schedule. `validation_mode` switches the data likelihood off so the
/// chain targets the stick-breaking prior (for Geweke-style checks).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub total_iters: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub validation_mode: bool,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_iters {
            return Err(Error::InvalidArgument(format!(
                "burn_in {} must be below total_iters {}",
                self.burn_in, self.total_iters
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn kept_samples(&self) -> usize {
        (self.total_iters - self.burn_in).div_ceil(self.thin)
    }
}

/// Samples stick weights from `v_h ~ Beta(1 + c_h, alpha + tail_h)` with the
/// last stick forced to close the simplex.
fn resample_sticks_from_counts(
    counts: &[usize],
    alpha: f64,
    weights: &mut [f64],
    rng: &mut ChaCha8Rng,
) {
    let l = counts.len();
    let mut tail: Vec<f64> = vec![0.0; l];
    let mut acc = 0usize;
    for h in (0..l).rev() {
        tail[h] = acc as f64;
        acc += counts[h];
    }
    let mut remaining = 1.0f64;
    for h in 0..l {
        let v = if h + 1 == l {
            1.0
        } else {
            let beta = Beta::new(1.0 + counts[h] as f64, alpha + tail[h])
                .expect("positive beta parameters");
            beta.sample(rng)
        };
        weights[h] = remaining * v;
        remaining *= 1.0 - v;
    }
}

/// Draws an index from unnormalized log-probabilities.
fn sample_categorical_log(logp: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logp.iter().map(|&lp| (lp - top).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (h, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return h;
        }
    }
    probs.len() - 1
}

fn cluster_counts(z: &[usize], l: usize) -> Vec<usize> {
    let mut counts = vec![0usize; l];
    for &zi in z {
        counts[zi] += 1;
    }
    counts
}

/// Blocked Gibbs sampler for the truncated DP mixture of diagonal Gaussians.
#[derive(Debug)]
pub struct GaussianDpmSampler {
    data: Array2<f64>,
    truncation: usize,
    concentration: f64,
    prior_mean: Vec<f64>,
    kappa0: f64,
    shape0: f64,
    rate0: Vec<f64>,
    validation_mode: bool,
    z: Vec<usize>,
    sticks: Vec<f64>,
    means: Array2<f64>,
    precisions: Array2<f64>,
    rng: ChaCha8Rng,
}

impl GaussianDpmSampler {
    pub fn new(
        data: Array2<f64>,
        model: &GaussianDpmConfig,
        seed: u64,
        validation_mode: bool,
    ) -> Result<Self> {
        model.validate()?;
        let (n, d) = data.dim();
        if n < 2 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "gaussian sampler needs n >= 2 and d >= 1, got {n}x{d}"
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("data entries must be finite".into()));
        }
        let col_means: Vec<f64> = (0..d).map(|j| data.column(j).mean().unwrap()).collect();
        let col_vars: Vec<f64> = (0..d)
            .map(|j| {
                let m = col_means[j];
                let ss: f64 = data.column(j).iter().map(|x| (x - m) * (x - m)).sum();
                let var = ss / (n as f64 - 1.0);
                if var > 0.0 {
                    var
                } else {
                    1.0
                }
            })
            .collect();
        let prior_mean = match model.prior_mean {
            Some(m) => vec![m; d],
            None => col_means,
        };
        let rate0 = match model.rate {
            Some(r) => vec![r; d],
            None => col_vars,
        };
        let l = model.truncation;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = model.init.assignments(n, l, &mut rng);
        Ok(GaussianDpmSampler {
            data,
            truncation: l,
            concentration: model.concentration,
            prior_mean,
            kappa0: model.mean_precision_scale,
            shape0: model.shape,
            rate0,
            validation_mode,
            z,
            sticks: vec![1.0 / l as f64; l],
            means: Array2::zeros((l, d)),
            precisions: Array2::ones((l, d)),
            rng,
        })
    }

    /// Cluster parameters from the Normal-Gamma conjugate posterior given the
    /// current assignments (from the prior in validation mode).
    pub fn resample_params(&mut self) {
        let (n, d) = self.data.dim();
        let l = self.truncation;
        let mut count = vec![0usize; l];
        let mut sums = Array2::<f64>::zeros((l, d));
        if !self.validation_mode {
            for i in 0..n {
                count[self.z[i]] += 1;
                for j in 0..d {
                    sums[(self.z[i], j)] += self.data[(i, j)];
                }
            }
        }
        let mut sq = Array2::<f64>::zeros((l, d));
        if !self.validation_mode {
            for i in 0..n {
                let h = self.z[i];
                let c = count[h] as f64;
                for j in 0..d {
                    let mean = sums[(h, j)] / c;
                    let dev = self.data[(i, j)] - mean;
                    sq[(h, j)] += dev * dev;
                }
            }
        }
        for h in 0..l {
            let c = count[h] as f64;
            for j in 0..d {
                let (kappa_n, m_n, a_n, b_n) = if count[h] == 0 {
                    (
                        self.kappa0,
                        self.prior_mean[j],
                        self.shape0,
                        self.rate0[j],
                    )
                } else {
                    let mean = sums[(h, j)] / c;
                    let kappa_n = self.kappa0 + c;
                    let m_n = (self.kappa0 * self.prior_mean[j] + c * mean) / kappa_n;
                    let a_n = self.shape0 + c / 2.0;
                    let dev = mean - self.prior_mean[j];
                    let b_n =
                        self.rate0[j] + 0.5 * sq[(h, j)] + self.kappa0 * c * dev * dev / (2.0 * kappa_n);
                    (kappa_n, m_n, a_n, b_n)
                };
                let tau = Gamma::new(a_n, 1.0 / b_n)
                    .expect("positive gamma parameters")
                    .sample(&mut self.rng);
                let mu = Normal::new(m_n, (kappa_n * tau).sqrt().recip())
                    .expect("positive normal scale")
                    .sample(&mut self.rng);
                self.precisions[(h, j)] = tau;
                self.means[(h, j)] = mu;
            }
        }
    }

    pub fn resample_sticks(&mut self) {
        let counts = cluster_counts(&self.z, self.truncation);
        let mut sticks = std::mem::take(&mut self.sticks);
        resample_sticks_from_counts(&counts, self.concentration, &mut sticks, &mut self.rng);
        self.sticks = sticks;
    }

    pub fn resample_assignments(&mut self) {
        let (n, d) = self.data.dim();
        let l = self.truncation;
        let log_w: Vec<f64> = self.sticks.iter().map(|&w| w.ln()).collect();
        let mut logp = vec![0.0f64; l];
        for i in 0..n {
            for h in 0..l {
                let mut lp = log_w[h];
                if !self.validation_mode {
                    for j in 0..d {
                        let tau = self.precisions[(h, j)];
                        let dev = self.data[(i, j)] - self.means[(h, j)];
                        lp += 0.5 * (tau.ln() - tau * dev * dev);
                    }
                }
                logp[h] = lp;
            }
            self.z[i] = sample_categorical_log(&logp, &mut self.rng);
        }
    }

    /// One full sweep: parameters, sticks, assignments.
    pub fn sweep(&mut self) {
        self.resample_params();
        self.resample_sticks();
        self.resample_assignments();
    }

    pub fn set_assignments(&mut self, z: &[usize]) -> Result<()> {
        if z.len() != self.data.nrows() {
            return Err(Error::InvalidArgument(
                "assignment vector length does not match data".into(),
            ));
        }
        if z.iter().any(|&h| h >= self.truncation) {
            return Err(Error::InvalidArgument(
                "assignment exceeds truncation level".into(),
            ));
        }
        self.z = z.to_vec();
        Ok(())
    }

    pub fn assignments(&self) -> &[usize] {
        &self.z
    }

    pub fn stick_weights(&self) -> &[f64] {
        &self.sticks
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn precisions(&self) -> &Array2<f64> {
        &self.precisions
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.z).expect("nonempty assignments")
    }
}

/// Blocked Gibbs sampler for the truncated DP mixture of Poisson rates with
/// per-row exposure `N_i`.
#[derive(Debug)]
pub struct PoissonDpmSampler {
    counts: Array2<u64>,
    exposures: Vec<u64>,
    truncation: usize,
    concentration: f64,
    shape0: f64,
    rate0: f64,
    validation_mode: bool,
    z: Vec<usize>,
    sticks: Vec<f64>,
    rates: Array2<f64>,
    rng: ChaCha8Rng,
}

impl PoissonDpmSampler {
    pub fn new(
        counts: Array2<u64>,
        model: &PoissonDpmConfig,
        seed: u64,
        validation_mode: bool,
    ) -> Result<Self> {
        model.validate()?;
        let (n, d) = counts.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("empty count matrix".into()));
        }
        let exposures: Vec<u64> = counts.rows().into_iter().map(|r| r.sum()).collect();
        if let Some(row) = exposures.iter().position(|&t| t == 0) {
            return Err(Error::InvalidArgument(format!(
                "row {row} has all-zero counts; every row needs a positive total"
            )));
        }
        let l = model.truncation;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = model.init.assignments(n, l, &mut rng);
        Ok(PoissonDpmSampler {
            counts,
            exposures,
            truncation: l,
            concentration: model.concentration,
            shape0: model.shape,
            rate0: model.rate,
            validation_mode,
            z,
            sticks: vec![1.0 / l as f64; l],
            rates: Array2::ones((l, d)),
            rng,
        })
    }

    /// Cluster rates from `Gamma(shape + sum_x, rate + sum_N)` over members.
    pub fn resample_params(&mut self) {
        let (n, d) = self.counts.dim();
        let l = self.truncation;
        let mut sum_x = Array2::<f64>::zeros((l, d));
        let mut sum_n = vec![0.0f64; l];
        if !self.validation_mode {
            for i in 0..n {
                let h = self.z[i];
                sum_n[h] += self.exposures[i] as f64;
                for j in 0..d {
                    sum_x[(h, j)] += self.counts[(i, j)] as f64;
                }
            }
        }
        for h in 0..l {
            for j in 0..d {
                let shape = self.shape0 + sum_x[(h, j)];
                let rate = self.rate0 + sum_n[h];
                let theta = Gamma::new(shape, 1.0 / rate)
                    .expect("positive gamma parameters")
                    .sample(&mut self.rng);
                self.rates[(h, j)] = theta;
            }
        }
    }

    pub fn resample_sticks(&mut self) {
        let counts = cluster_counts(&self.z, self.truncation);
        let mut sticks = std::mem::take(&mut self.sticks);
        resample_sticks_from_counts(&counts, self.concentration, &mut sticks, &mut self.rng);
        self.sticks = sticks;
    }

    pub fn resample_assignments(&mut self) {
        let (n, d) = self.counts.dim();
        let l = self.truncation;
        let log_w: Vec<f64> = self.sticks.iter().map(|&w| w.ln()).collect();
        let log_rates = self.rates.mapv(f64::ln);
        let rate_totals: Array1<f64> = self.rates.sum_axis(ndarray::Axis(1));
        let mut logp = vec![0.0f64; l];
        for i in 0..n {
            for h in 0..l {
                let mut lp = log_w[h];
                if !self.validation_mode {
                    for j in 0..d {
                        let x = self.counts[(i, j)];
                        if x > 0 {
                            lp += x as f64 * log_rates[(h, j)];
                        }
                    }
                    lp -= self.exposures[i] as f64 * rate_totals[h];
                }
                logp[h] = lp;
            }
            self.z[i] = sample_categorical_log(&logp, &mut self.rng);
        }
    }

    pub fn sweep(&mut self) {
        self.resample_params();
        self.resample_sticks();
        self.resample_assignments();
    }

    pub fn set_assignments(&mut self, z: &[usize]) -> Result<()> {
        if z.len() != self.counts.nrows() {
            return Err(Error::InvalidArgument(
                "assignment vector length does not match data".into(),
            ));
        }
        if z.iter().any(|&h| h >= self.truncation) {
            return Err(Error::InvalidArgument(
                "assignment exceeds truncation level".into(),
            ));
        }
        self.z = z.to_vec();
        Ok(())
    }

    pub fn assignments(&self) -> &[usize] {
        &self.z
    }

    pub fn stick_weights(&self) -> &[f64] {
        &self.sticks
    }

    pub fn rates(&self) -> &Array2<f64> {
        &self.rates
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.z).expect("nonempty assignments")
    }
}

fn run_chain(chain: &ChainConfig, mut sweep: impl FnMut() -> Partition) -> Vec<Partition> {
    let mut kept = Vec::with_capacity(chain.kept_samples());
    for it in 0..chain.total_iters {
        let partition = sweep();
        if it >= chain.burn_in && (it - chain.burn_in) % chain.thin == 0 {
            kept.push(partition);
        }
    }
    kept
}

/// Runs a full Gaussian DPM chain and returns the kept canonical partitions.
pub fn gibbs_gaussian_dpm(
    data: &Array2<f64>,
    model: &GaussianDpmConfig,
    chain: &ChainConfig,
) -> Result<Vec<Partition>> {
    chain.validate()?;
    let mut sampler =
        GaussianDpmSampler::new(data.clone(), model, chain.seed, chain.validation_mode)?;
    Ok(run_chain(chain, || {
        sampler.sweep();
        sampler.partition()
    }))
}

/// Runs a full Poisson DPM chain and returns the kept canonical partitions.
pub fn gibbs_poisson_dpm(
    counts: &Array2<u64>,
    model: &PoissonDpmConfig,
    chain: &ChainConfig,
) -> Result<Vec<Partition>> {
    chain.validate()?;
    let mut sampler =
        PoissonDpmSampler::new(counts.clone(), model, chain.seed, chain.validation_mode)?;
    Ok(run_chain(chain, || {
        sampler.sweep();
        sampler.partition()
    }))
}
