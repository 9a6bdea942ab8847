//! Real-coded genetic algorithm for the threshold design problem:
//! maximize the productivity surrogate subject to the risk bound staying
//! under the limit, inside the box `[0, l_max]^dim`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream};
use crate::sim::{run_batch, SampleRecord, SceneConfig};

/// Margin that turns the strict risk inequality into a closed one.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Initial mutation std as a fraction of the box width.
    pub mutation_std: f64,
    /// Mutation std at the last generation, relative to the initial one.
    pub mutation_decay: f64,
    pub tournament_size: usize,
    /// Blend extension α: children are drawn on the parent line at
    /// `a + λ(b − a)`, λ ∈ [−α, 1 + α].
    pub blend_alpha: f64,
    pub elites: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 64,
            generations: 100,
            crossover_rate: 0.9,
            mutation_rate: 0.5,
            mutation_std: 0.1,
            mutation_decay: 1e-3,
            tournament_size: 3,
            blend_alpha: 0.5,
            elites: 2,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return Err(Error::field("ga.population_size", "must be even and at least 4"));
        }
        if self.generations == 0 {
            return Err(Error::field("ga.generations", "must be at least 1"));
        }
        for (name, v) in [
            ("ga.crossover_rate", self.crossover_rate),
            ("ga.mutation_rate", self.mutation_rate),
            ("ga.mutation_decay", self.mutation_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::field(name, "must lie in [0, 1]"));
            }
        }
        if !(self.mutation_std >= 0.0) || !(self.blend_alpha >= 0.0) {
            return Err(Error::field("ga", "mutation_std and blend_alpha must be non-negative"));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return Err(Error::field("ga.tournament_size", "must lie in [1, population_size]"));
        }
        if self.elites >= self.population_size {
            return Err(Error::field("ga.elites", "must be smaller than the population"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Objective of the best individual so far.
    pub best_objective: f64,
    /// Its constraint value.
    pub best_constraint: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub thresholds_star: Vec<f64>,
    pub predicted_product: f64,
    pub predicted_risk_bound: f64,
    pub feasible: bool,
    pub t_lim: f64,
    pub l_max: f64,
    pub history: Vec<GenerationRecord>,
}

#[derive(Debug, Clone)]
struct Individual {
    x: Vec<f64>,
    objective: f64,
    constraint: f64,
    violation: f64,
}

impl Individual {
    fn feasible(&self) -> bool {
        self.violation == 0.0
    }

    /// Feasibility rule.
    fn beats(&self, other: &Individual) -> bool {
        match (self.feasible(), other.feasible()) {
            (true, true) => self.objective > other.objective,
            (true, false) => true,
            (false, true) => false,
            (false, false) => self.violation < other.violation,
        }
    }
}

fn evaluate<F, G>(pop: Vec<Vec<f64>>, objective: &F, constraint: &G, limit: f64) -> Vec<Individual>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    pop.into_par_iter()
        .map(|x| {
            let c = constraint(&x);
            let violation = if c <= limit {
                0.0
            } else if c.is_nan() {
                f64::INFINITY
            } else {
                c - limit
            };
            let o = objective(&x);
            Individual {
                objective: if o.is_nan() { f64::NEG_INFINITY } else { o },
                constraint: c,
                violation,
                x,
            }
        })
        .collect()
}

fn best_of(pop: &[Individual]) -> &Individual {
    pop.iter().fold(&pop[0], |b, c| if c.beats(b) { c } else { b })
}

fn tournament<'a>(pop: &'a [Individual], k: usize, rng: &mut ChaCha8Rng) -> &'a Individual {
    let mut best = pop.choose(rng).expect("population is non-empty");
    for _ in 1..k {
        let c = pop.choose(rng).expect("population is non-empty");
        if c.beats(best) {
            best = c;
        }
    }
    best
}

/// Maximize `objective` subject to `constraint(x) < t_lim` over `[0, l_max]^dim`.
/// If nothing feasible turns up, the least-violating point is returned
/// with `feasible = false`.
pub fn optimize_thresholds<F, G>(
    objective: F,
    constraint: G,
    t_lim: f64,
    l_max: f64,
    dim: usize,
    cfg: &GaConfig,
) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if !(t_lim > 0.0) || !t_lim.is_finite() {
        return Err(Error::Argument(format!(
            "risk time limit must be positive, got {t_lim}"
        )));
    }
    if !(l_max >= 0.0) || !l_max.is_finite() {
        return Err(Error::Argument(format!("l_max must be non-negative, got {l_max}")));
    }
    if dim == 0 {
        return Err(Error::Argument("dimension must be at least 1".into()));
    }
    let limit = t_lim - STRICT_MARGIN;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream::GA));
    let n = cfg.population_size;
    let init: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>() * l_max).collect())
        .collect();
    let mut pop = evaluate(init, &objective, &constraint, limit);
    let mut best = best_of(&pop).clone();
    let mut history = Vec::with_capacity(cfg.generations);
    for g in 0..cfg.generations {
        let frac = if cfg.generations > 1 {
            g as f64 / (cfg.generations - 1) as f64
        } else {
            1.0
        };
        let sigma = cfg.mutation_std * l_max * cfg.mutation_decay.powf(frac);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            if pop[a].beats(&pop[b]) {
                std::cmp::Ordering::Less
            } else if pop[b].beats(&pop[a]) {
                std::cmp::Ordering::Greater
            } else {
                a.cmp(&b)
            }
        });
        let mut next: Vec<Vec<f64>> = order[..cfg.elites].iter().map(|&i| pop[i].x.clone()).collect();
        while next.len() < n {
            let a = tournament(&pop, cfg.tournament_size, &mut rng);
            let b = tournament(&pop, cfg.tournament_size, &mut rng);
            let (mut c1, mut c2) = (a.x.clone(), b.x.clone());
            if rng.random::<f64>() < cfg.crossover_rate {
                // Children lie on the line through both parents, which keeps
                // them near an active constraint shared by the parents.
                let range = -cfg.blend_alpha..=1.0 + cfg.blend_alpha;
                let (l1, l2) = (rng.random_range(range.clone()), rng.random_range(range));
                for k in 0..dim {
                    c1[k] = a.x[k] + l1 * (b.x[k] - a.x[k]);
                    c2[k] = a.x[k] + l2 * (b.x[k] - a.x[k]);
                }
            }
            for c in [&mut c1, &mut c2] {
                for v in c.iter_mut() {
                    if sigma > 0.0 && rng.random::<f64>() < cfg.mutation_rate {
                        *v += Normal::new(0.0, sigma).expect("positive std").sample(&mut rng);
                    }
                    *v = v.clamp(0.0, l_max);
                }
            }
            next.push(c1);
            if next.len() < n {
                next.push(c2);
            }
        }
        pop = evaluate(next, &objective, &constraint, limit);
        let gen_best = best_of(&pop);
        if gen_best.beats(&best) {
            best = gen_best.clone();
        }
        history.push(GenerationRecord {
            generation: g,
            best_objective: best.objective,
            best_constraint: best.constraint,
            feasible: best.feasible(),
        });
    }
    Ok(OptimizationResult {
        feasible: best.feasible(),
        predicted_product: best.objective,
        predicted_risk_bound: best.constraint,
        thresholds_star: best.x,
        t_lim,
        l_max,
        history,
    })
}

/// Realized productivity and risk of a threshold design, by simulation.
pub fn evaluate_solution(scene: &SceneConfig, thresholds: &[f64], n_trials: usize, seed: u64) -> Result<SampleRecord> {
    scene.check_thresholds(thresholds)?;
    run_batch(scene, thresholds, n_trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_problem_hits_the_constraint() {
        let r = optimize_thresholds(|x| x[0], |x| x[0], 0.3, 0.5, 1, &GaConfig::default()).unwrap();
        assert!(r.feasible);
        assert!(r.thresholds_star[0] <= 0.3);
        assert!(0.3 - r.thresholds_star[0] <= 1e-3, "{:?}", r.thresholds_star);
    }

    #[test]
    fn infeasible_is_flagged() {
        let r = optimize_thresholds(|x| x[0], |x| 1.0 + x[0], 0.5, 0.5, 2, &GaConfig::default()).unwrap();
        assert!(!r.feasible);
        assert!(r.thresholds_star[0] < 1e-3);
    }

    #[test]
    fn history_is_monotone() {
        let cfg = GaConfig {
            seed: 4,
            ..GaConfig::default()
        };
        let r = optimize_thresholds(
            |x| -(x[0] - 0.2).powi(2) - (x[1] - 0.1).powi(2),
            |x| x[0] + x[1],
            0.25,
            0.5,
            2,
            &cfg,
        )
        .unwrap();
        for w in r.history.windows(2) {
            assert!(w[1].best_objective >= w[0].best_objective);
        }
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig {
            population_size: 5,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig {
            crossover_rate: 1.5,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig {
            generations: 0,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(optimize_thresholds(|x| x[0], |x| x[0], 0.0, 0.5, 1, &GaConfig::default()).is_err());
    }
}
