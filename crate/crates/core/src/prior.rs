//! Gaussian-mixture prior over dropped-object positions and a seeded
//! random-walk Metropolis sampler for it.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::TargetSource;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    /// Diagonal covariance (m²).
    pub variance: [f64; 3],
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|j| p[j] >= self.min[j] && p[j] <= self.max[j])
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|j, _| p[j].clamp(self.min[j], self.max[j]))
    }

    fn volume_sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|j, _| rng.random_range(self.min[j]..=self.max[j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDistribution {
    pub components: Vec<GaussianComponent>,
    pub workspace_bounds: Aabb,
}

impl PriorDistribution {
    /// Two equal modes ±0.2 m to either side (along y) of `center`,
    /// σ = 0.05 m laterally and 0.01 m vertically.
    pub fn two_mode(center: [f64; 3]) -> Self {
        let var = [0.05f64.powi(2), 0.05f64.powi(2), 0.01f64.powi(2)];
        let comp = |dy: f64| GaussianComponent {
            weight: 0.5,
            mean: [center[0], center[1] + dy, center[2]],
            variance: var,
        };
        PriorDistribution {
            components: vec![comp(-0.2), comp(0.2)],
            workspace_bounds: Aabb {
                min: [center[0] - 0.2, center[1] - 0.4, center[2] - 0.05],
                max: [center[0] + 0.2, center[1] + 0.4, center[2] + 0.05],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::field("prior.components", "at least one component required"));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::field(
                "prior.components",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0) {
                return Err(Error::field(
                    format!("prior.components[{i}].weight"),
                    "must be positive",
                ));
            }
            if c.variance.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::field(
                    format!("prior.components[{i}].variance"),
                    "entries must be positive",
                ));
            }
        }
        let b = &self.workspace_bounds;
        if (0..3).any(|j| !(b.min[j] < b.max[j])) {
            return Err(Error::field("prior.workspace_bounds", "min must be below max"));
        }
        Ok(())
    }
}

/// `log Σ_c w_c N(x; μ_c, Σ_c)` evaluated with log-sum-exp.
pub fn gmm_logpdf(x: &Vector3<f64>, prior: &PriorDistribution) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let terms: Vec<f64> = prior
        .components
        .iter()
        .map(|c| {
            let mut quad = 0.0;
            let mut log_det = 0.0;
            for j in 0..3 {
                let d = x[j] - c.mean[j];
                quad += d * d / c.variance[j];
                log_det += c.variance[j].ln();
            }
            c.weight.ln() - 0.5 * (quad + log_det + 3.0 * ln_2pi)
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhConfig {
    /// Isotropic random-walk standard deviation (m).
    pub proposal_std: f64,
    pub burn_in: usize,
    pub thinning: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability of proposing uniformly over the workspace box instead of
    /// a local step. The mixture stays symmetric, so plain Metropolis
    /// acceptance remains exact; it lets the chain hop between distant modes.
    #[serde(default = "default_global_move")]
    pub global_move_prob: f64,
}

fn default_global_move() -> f64 {
    0.1
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            proposal_std: 0.05,
            burn_in: 500,
            thinning: 10,
            seed: 0,
            global_move_prob: default_global_move(),
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_std > 0.0) {
            return Err(Error::field("mh.proposal_std", "must be positive"));
        }
        if self.thinning < 1 {
            return Err(Error::field("mh.thinning", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.global_move_prob) {
            return Err(Error::field("mh.global_move_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Seeded Metropolis chain restricted to the workspace box.
#[derive(Debug, Clone)]
pub struct MhChain {
    prior: PriorDistribution,
    cfg: MhConfig,
    rng: ChaCha8Rng,
    state: Vector3<f64>,
    log_p: f64,
    proposals: usize,
    accepted: usize,
}

impl MhChain {
    /// Build the chain and run its burn-in.
    pub fn new(prior: PriorDistribution, cfg: MhConfig) -> Result<Self> {
        prior.validate()?;
        cfg.validate()?;
        let start = prior
            .components
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .map(|c| prior.workspace_bounds.clamp(&Vector3::from(c.mean)))
            .expect("validated prior has components");
        let log_p = gmm_logpdf(&start, &prior);
        let mut chain = MhChain {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            prior,
            cfg,
            state: start,
            log_p,
            proposals: 0,
            accepted: 0,
        };
        for _ in 0..cfg.burn_in {
            chain.step();
        }
        Ok(chain)
    }

    fn step(&mut self) {
        self.proposals += 1;
        let bounds = self.prior.workspace_bounds;
        let candidate = if self.rng.random::<f64>() < self.cfg.global_move_prob {
            bounds.volume_sample(&mut self.rng)
        } else {
            let noise: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut self.rng));
            self.state + Vector3::from(noise) * self.cfg.proposal_std
        };
        if !bounds.contains(&candidate) {
            return;
        }
        let log_p = gmm_logpdf(&candidate, &self.prior);
        let u: f64 = self.rng.random();
        if u.ln() < log_p - self.log_p {
            self.state = candidate;
            self.log_p = log_p;
            self.accepted += 1;
        }
    }

    /// Advance by `thinning` steps and return the state.
    pub fn next_sample(&mut self) -> Vector3<f64> {
        for _ in 0..self.cfg.thinning {
            self.step();
        }
        self.state
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    pub fn proposals(&self) -> usize {
        self.proposals
    }

    pub fn prior(&self) -> &PriorDistribution {
        &self.prior
    }
}

impl TargetSource for MhChain {
    fn next_target(&mut self) -> Vector3<f64> {
        sample_drop_position(self)
    }
}

/// `n` thinned draws after burn-in.
pub fn mh_sample(prior: &PriorDistribution, n: usize, cfg: &MhConfig) -> Result<Vec<Vector3<f64>>> {
    if n == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let mut chain = MhChain::new(prior.clone(), *cfg)?;
    let out: Vec<_> = (0..n).map(|_| chain.next_sample()).collect();
    let rate = chain.acceptance_rate();
    if rate < 0.01 {
        return Err(Error::Tuning {
            rate,
            proposals: chain.proposals(),
        });
    }
    Ok(out)
}

/// Next drop position from a warmed chain, kept inside the workspace box.
pub fn sample_drop_position(chain: &mut MhChain) -> Vector3<f64> {
    let p = chain.next_sample();
    chain.prior.workspace_bounds.clamp(&p)
}

/// Exact mixture sampling with rejection outside the workspace box.
/// Used to validate the Metropolis chain.
pub fn sample_gmm_direct<R: Rng>(prior: &PriorDistribution, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = prior.components.last().expect("non-empty prior");
        for c in &prior.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let p = Vector3::from_fn(|j, _| {
            let z: f64 = StandardNormal.sample(rng);
            chosen.mean[j] + z * chosen.variance[j].sqrt()
        });
        if prior.workspace_bounds.contains(&p) {
            out.push(p);
        }
    }
    out
}
