//! Particle swarm optimization with random immigrants (RPSO), maximizing an
//! objective over a bounded box.
//!
//! Each round every particle updates
//!
//! ```text
//! v ← ω·v + c1·r1·(p_best − x) + c2·r2·(g_best − x)
//! x ← x + v
//! ```
//!
//! with fresh `r1, r2 ~ U(0, 1)` per particle, then is clamped to the box
//! (zeroing the velocity component that hit a bound). All particles move
//! against the previous round's global best; bests are refreshed afterwards
//! in particle order. A fixed fraction of particles, never the global-best
//! holder, is then re-seeded uniformly inside the box.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chaos::MapParams;
use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::fmt_f64;
use crate::network::{self, Architecture, TrainConfig};
use crate::reservoir::{Activation, FillMethod, ReservoirConfig};

/// Anything that scores a position; higher is better. An `Err` marks the
/// position as failed and it receives the worst fitness.
pub trait Objective {
    fn evaluate(&mut self, position: &[f64]) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    fn evaluate(&mut self, position: &[f64]) -> Result<f64> {
        self(position)
    }
}

/// Lower search bounds for (A, B, a1, a2, a3, a4).
pub const DEFAULT_LOWER: [f64; 6] = [0.01, 0.1, 0.0, 0.0, 0.0, 0.0];
/// Upper search bounds for (A, B, a1, a2, a3, a4).
pub const DEFAULT_UPPER: [f64; 6] = [1.5, 10.0, 1.5, 1.5, 1.5, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub particle_count: usize,
    pub iterations: usize,
    pub omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub immigrant_fraction: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            particle_count: 150,
            iterations: 100,
            omega: 0.5,
            c1: 2.0,
            c2: 2.0,
            immigrant_fraction: 0.7,
            lower: DEFAULT_LOWER.to_vec(),
            upper: DEFAULT_UPPER.to_vec(),
            rng_seed: 0,
        }
    }
}

impl SwarmConfig {
    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.particle_count == 0 {
            return Err(Error::InvalidArgument(
                "swarm needs at least one particle".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.immigrant_fraction) {
            return Err(Error::InvalidArgument(format!(
                "immigrant fraction must lie in [0, 1], got {}",
                self.immigrant_fraction
            )));
        }
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::InvalidArgument(
                "bounds must be non-empty and of equal length".into(),
            ));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::InvalidArgument(
                "every lower bound must be below its upper bound".into(),
            ));
        }
        Ok(())
    }

    /// Number of particles re-seeded each round: ⌊fraction · count⌋, never
    /// touching the global-best holder.
    pub fn immigrant_count(&self) -> usize {
        let n = (self.immigrant_fraction * self.particle_count as f64).floor() as usize;
        n.min(self.particle_count - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    /// `-inf` until the particle has a successful evaluation.
    #[serde(with = "unset_fitness")]
    pub best_fitness: f64,
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub iteration: usize,
    pub particle: usize,
    pub position: Vec<f64>,
    /// `None` when the evaluation failed (worst fitness).
    pub fitness: Option<f64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub best_fitness: f64,
    pub best_position: Vec<f64>,
}

/// Velocity update for one particle.
pub fn update_velocity(
    velocity: &[f64],
    position: &[f64],
    personal_best: &[f64],
    global_best: &[f64],
    (r1, r2): (f64, f64),
    config: &SwarmConfig,
) -> Vec<f64> {
    velocity
        .iter()
        .zip(position)
        .zip(personal_best.iter().zip(global_best))
        .map(|((v, x), (p, g))| {
            config.omega * v + config.c1 * r1 * (p - x) + config.c2 * r2 * (g - x)
        })
        .collect()
}

/// Moves `position` by `velocity` and clamps it to the box; velocity
/// components that hit a bound are zeroed.
pub fn advance_position(position: &mut [f64], velocity: &mut [f64], lower: &[f64], upper: &[f64]) {
    for (((x, v), lo), hi) in position
        .iter_mut()
        .zip(velocity.iter_mut())
        .zip(lower)
        .zip(upper)
    {
        *x += *v;
        if *x < *lo {
            *x = *lo;
            *v = 0.0;
        } else if *x > *hi {
            *x = *hi;
            *v = 0.0;
        }
    }
}

/// JSON has no infinities; an unset best is stored as `null`.
mod unset_fitness {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            s.serialize_some(value)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone)]
pub struct Swarm {
    pub config: SwarmConfig,
    pub particles: Vec<Particle>,
    global_best: Vec<f64>,
    global_fitness: f64,
    holder: usize,
    /// Completed rounds.
    pub iteration: usize,
    pub trace: Vec<TracePoint>,
    pub history: Vec<FitnessRecord>,
    rng: ChaCha8Rng,
}

fn timed_evaluation(objective: &mut dyn Objective, position: &[f64]) -> (Option<f64>, f64) {
    let start = Instant::now();
    let fitness = match objective.evaluate(position) {
        Ok(f) if f.is_finite() => Some(f),
        _ => None,
    };
    (fitness, start.elapsed().as_secs_f64())
}

impl Swarm {
    /// Seeds the particles uniformly in the box with zero velocity and
    /// evaluates them once.
    pub fn initialize(config: SwarmConfig, objective: &mut dyn Objective) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let dim = config.dimension();
        let mut particles = Vec::with_capacity(config.particle_count);
        for _ in 0..config.particle_count {
            let position = random_point(&mut rng, &config.lower, &config.upper);
            particles.push(Particle {
                best_position: position.clone(),
                position,
                velocity: vec![0.0; dim],
                best_fitness: f64::NEG_INFINITY,
            });
        }
        let mut swarm = Self {
            global_best: particles[0].position.clone(),
            global_fitness: f64::NEG_INFINITY,
            holder: 0,
            particles,
            config,
            iteration: 0,
            trace: Vec::new(),
            history: Vec::new(),
            rng,
        };
        swarm.evaluate_all(objective);
        if swarm.global_fitness == f64::NEG_INFINITY {
            return Err(Error::Optimization(
                "every particle failed its first evaluation".into(),
            ));
        }
        Ok(swarm)
    }

    pub fn best(&self) -> (&[f64], f64) {
        (&self.global_best, self.global_fitness)
    }

    /// Index of the particle whose personal best is the global best.
    pub fn best_holder(&self) -> usize {
        self.holder
    }

    fn evaluate_all(&mut self, objective: &mut dyn Objective) {
        let results: Vec<_> = self
            .particles
            .iter()
            .map(|p| timed_evaluation(objective, &p.position))
            .collect();
        for (i, (fitness, secs)) in results.into_iter().enumerate() {
            let particle = &mut self.particles[i];
            self.history.push(FitnessRecord {
                iteration: self.iteration,
                particle: i,
                position: particle.position.clone(),
                fitness,
                wall_time_secs: secs,
            });
            let f = fitness.unwrap_or(f64::NEG_INFINITY);
            if f > particle.best_fitness {
                particle.best_fitness = f;
                particle.best_position.clone_from(&particle.position);
            }
            if f > self.global_fitness {
                self.global_fitness = f;
                self.global_best.clone_from(&particle.position);
                self.holder = i;
            }
        }
    }

    /// One synchronous round with fresh random coefficients.
    pub fn pso_step(&mut self, objective: &mut dyn Objective) {
        let coefficients: Vec<(f64, f64)> = (0..self.particles.len())
            .map(|_| (self.rng.random::<f64>(), self.rng.random::<f64>()))
            .collect();
        self.pso_step_with(objective, &coefficients);
    }

    /// One round with caller-supplied `(r1, r2)` per particle.
    pub fn pso_step_with(&mut self, objective: &mut dyn Objective, coefficients: &[(f64, f64)]) {
        assert_eq!(coefficients.len(), self.particles.len());
        for (particle, &r) in self.particles.iter_mut().zip(coefficients) {
            let mut velocity = update_velocity(
                &particle.velocity,
                &particle.position,
                &particle.best_position,
                &self.global_best,
                r,
                &self.config,
            );
            advance_position(
                &mut particle.position,
                &mut velocity,
                &self.config.lower,
                &self.config.upper,
            );
            particle.velocity = velocity;
        }
        self.evaluate_all(objective);
    }

    /// Re-seeds ⌊fraction · count⌋ particles other than the global-best holder.
    /// Returns their indices in ascending order.
    pub fn immigrate(&mut self) -> Vec<usize> {
        let count = self.config.immigrant_count();
        if count == 0 {
            return Vec::new();
        }
        let candidates: Vec<usize> = (0..self.particles.len())
            .filter(|&i| i != self.holder)
            .collect();
        let mut chosen: Vec<usize> = sample(&mut self.rng, candidates.len(), count)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        chosen.sort_unstable();
        for &i in &chosen {
            let position = random_point(&mut self.rng, &self.config.lower, &self.config.upper);
            let particle = &mut self.particles[i];
            particle.velocity.iter_mut().for_each(|v| *v = 0.0);
            particle.best_position.clone_from(&position);
            particle.best_fitness = f64::NEG_INFINITY;
            particle.position = position;
        }
        chosen
    }

    /// Step, immigration and trace entry for one round.
    pub fn round(&mut self, objective: &mut dyn Objective) {
        self.pso_step(objective);
        self.immigrate();
        self.iteration += 1;
        self.trace.push(TracePoint {
            iteration: self.iteration,
            best_fitness: self.global_fitness,
            best_position: self.global_best.clone(),
        });
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    pub fn checkpoint(&self) -> SwarmCheckpoint {
        SwarmCheckpoint {
            config: self.config.clone(),
            particles: self.particles.clone(),
            global_best: self.global_best.clone(),
            global_fitness: self.global_fitness,
            holder: self.holder,
            iteration: self.iteration,
            trace: self.trace.clone(),
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn from_checkpoint(cp: SwarmCheckpoint) -> Result<Self> {
        cp.config.validate()?;
        let word_pos: u128 = cp
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng position {:?}", cp.rng_word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(cp.rng_seed);
        rng.set_stream(cp.rng_stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            config: cp.config,
            particles: cp.particles,
            global_best: cp.global_best,
            global_fitness: cp.global_fitness,
            holder: cp.holder,
            iteration: cp.iteration,
            trace: cp.trace,
            history: Vec::new(),
            rng,
        })
    }
}

fn random_point(rng: &mut ChaCha8Rng, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
        .collect()
}

/// Serializable swarm state for resuming an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmCheckpoint {
    pub config: SwarmConfig,
    pub particles: Vec<Particle>,
    pub global_best: Vec<f64>,
    pub global_fitness: f64,
    pub holder: usize,
    pub iteration: usize,
    pub trace: Vec<TracePoint>,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub trace: Vec<TracePoint>,
    pub history: Vec<FitnessRecord>,
}

/// Runs `config.iterations` rounds and returns the global best.
pub fn optimize(objective: &mut dyn Objective, config: &SwarmConfig) -> Result<OptimizationResult> {
    let mut swarm = Swarm::initialize(config.clone(), objective)?;
    while !swarm.is_finished() {
        swarm.round(objective);
    }
    Ok(OptimizationResult {
        best_position: swarm.global_best,
        best_fitness: swarm.global_fitness,
        trace: swarm.trace,
        history: swarm.history,
    })
}

/// Writes `iteration,best_fitness,<names…>`; `comment` lines are prefixed with `#`.
pub fn write_trace_csv<W: Write>(
    trace: &[TracePoint],
    names: &[&str],
    comment: Option<&str>,
    mut out: W,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "iteration,best_fitness,{}", names.join(","))?;
    for point in trace {
        let pos: Vec<String> = point.best_position.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(
            out,
            "{},{},{}",
            point.iteration,
            fmt_f64(point.best_fitness),
            pos.join(",")
        )?;
    }
    Ok(())
}

/// Fitness of a map configuration: train on `train`, report accuracy on
/// `validation`. Overflowing maps and diverging trainings score 0.
pub struct ReservoirFitness<'a> {
    pub method: FillMethod,
    pub architecture: Architecture,
    pub train_config: TrainConfig,
    pub activation: Activation,
    pub train: &'a LabeledDataset,
    pub validation: &'a LabeledDataset,
}

impl ReservoirFitness<'_> {
    pub fn reservoir_config(&self, position: &[f64]) -> Result<ReservoirConfig> {
        let params = MapParams::from_vector(position)?;
        let mut config = ReservoirConfig::new(self.method, params, self.architecture.reservoir);
        config.activation = self.activation;
        Ok(config)
    }
}

impl Objective for ReservoirFitness<'_> {
    fn evaluate(&mut self, position: &[f64]) -> Result<f64> {
        let config = self.reservoir_config(position)?;
        match network::train(self.train, &self.architecture, &config, &self.train_config) {
            Ok(model) => network::evaluate(&model, self.validation),
            Err(Error::Overflow { .. } | Error::Divergence { .. }) => Ok(0.0),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_config(seed: u64) -> SwarmConfig {
        SwarmConfig {
            particle_count: 30,
            iterations: 100,
            lower: vec![-5.0; 5],
            upper: vec![5.0; 5],
            rng_seed: seed,
            ..SwarmConfig::default()
        }
    }

    fn neg_sphere(x: &[f64]) -> Result<f64> {
        Ok(-x.iter().map(|v| v * v).sum::<f64>())
    }

    #[test]
    fn zero_coefficients_halve_velocity() {
        let cfg = SwarmConfig::default();
        let v = update_velocity(
            &[0.4, -1.0],
            &[0.2, 0.3],
            &[0.9, 0.9],
            &[1.0, 1.0],
            (0.0, 0.0),
            &cfg,
        );
        assert_eq!(v, vec![0.2, -0.5]);
    }

    #[test]
    fn particle_at_both_bests_only_keeps_inertia() {
        let cfg = SwarmConfig::default();
        let v = update_velocity(&[0.4], &[0.7], &[0.7], &[0.7], (1.0, 1.0), &cfg);
        assert_eq!(v, vec![0.2]);
    }

    #[test]
    fn hand_computed_step() {
        let cfg = SwarmConfig {
            lower: vec![0.0],
            upper: vec![2.0],
            ..SwarmConfig::default()
        };
        let mut v = update_velocity(&[0.1], &[0.2], &[0.5], &[0.9], (0.3, 0.6), &cfg);
        // 0.05 + 2·0.3·0.3 + 2·0.6·0.7 = 1.07
        assert!((v[0] - 1.07).abs() < 1e-12);
        let mut x = vec![0.2];
        advance_position(&mut x, &mut v, &cfg.lower, &cfg.upper);
        assert!((x[0] - 1.27).abs() < 1e-12);
        // same move inside [0, 1] hits the bound
        let mut x = vec![0.2];
        let mut v = vec![1.07];
        advance_position(&mut x, &mut v, &[0.0], &[1.0]);
        assert_eq!((x[0], v[0]), (1.0, 0.0));
    }

    #[test]
    fn injected_zero_coefficients_through_the_swarm() {
        let cfg = SwarmConfig {
            particle_count: 4,
            lower: vec![-10.0; 2],
            upper: vec![10.0; 2],
            ..SwarmConfig::default()
        };
        let mut obj = neg_sphere;
        let mut swarm = Swarm::initialize(cfg, &mut obj).unwrap();
        for p in swarm.particles.iter_mut() {
            p.velocity = vec![1.0, -2.0];
        }
        swarm.pso_step_with(&mut obj, &[(0.0, 0.0); 4]);
        for p in &swarm.particles {
            assert_eq!(p.velocity, vec![0.5, -1.0]);
        }
    }

    #[test]
    fn immigrant_counts() {
        let cfg = SwarmConfig::default();
        assert_eq!(cfg.immigrant_count(), 105);
        let cfg = SwarmConfig {
            immigrant_fraction: 0.0,
            ..SwarmConfig::default()
        };
        assert_eq!(cfg.immigrant_count(), 0);
    }

    #[test]
    fn zero_fraction_leaves_swarm_unchanged() {
        let cfg = SwarmConfig {
            particle_count: 8,
            immigrant_fraction: 0.0,
            lower: vec![0.0],
            upper: vec![1.0],
            ..SwarmConfig::default()
        };
        let mut obj = neg_sphere;
        let mut swarm = Swarm::initialize(cfg, &mut obj).unwrap();
        let before = swarm.particles.clone();
        assert!(swarm.immigrate().is_empty());
        assert_eq!(swarm.particles, before);
    }

    #[test]
    fn immigration_is_seeded_and_spares_the_best() {
        let run = || {
            let cfg = SwarmConfig {
                particle_count: 10,
                lower: vec![-1.0; 3],
                upper: vec![1.0; 3],
                rng_seed: 17,
                ..SwarmConfig::default()
            };
            let mut obj = neg_sphere;
            let mut swarm = Swarm::initialize(cfg, &mut obj).unwrap();
            let holder = swarm.best_holder();
            let best = swarm.best().0.to_vec();
            let chosen = swarm.immigrate();
            assert_eq!(chosen.len(), 7);
            assert!(!chosen.contains(&holder));
            assert_eq!(swarm.best().0, &best[..]);
            for &i in &chosen {
                let p = &swarm.particles[i];
                assert!(p.velocity.iter().all(|&v| v == 0.0));
                assert_eq!(p.best_fitness, f64::NEG_INFINITY);
            }
            chosen
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn beats_random_search_with_same_budget() {
        let cfg = sphere_config(2);
        let mut obj = neg_sphere;
        let pso = optimize(&mut obj, &cfg).unwrap().best_fitness;
        let budget = cfg.particle_count * (cfg.iterations + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let random = (0..budget)
            .map(|_| neg_sphere(&random_point(&mut rng, &cfg.lower, &cfg.upper)).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(pso > random, "pso {pso} random {random}");
    }

    #[test]
    fn one_dimensional_quadratic() {
        let cfg = SwarmConfig {
            particle_count: 20,
            iterations: 50,
            lower: vec![0.0],
            upper: vec![1.0],
            rng_seed: 3,
            ..SwarmConfig::default()
        };
        let mut obj = |x: &[f64]| Ok(-(x[0] - 0.3).powi(2));
        let result = optimize(&mut obj, &cfg).unwrap();
        assert!((result.best_position[0] - 0.3).abs() < 0.01);
    }

    #[test]
    fn constant_objective_gives_flat_trace() {
        let cfg = SwarmConfig {
            particle_count: 6,
            iterations: 5,
            lower: vec![-2.0, 1.0],
            upper: vec![2.0, 3.0],
            ..SwarmConfig::default()
        };
        let mut obj = |_: &[f64]| Ok(4.0);
        let result = optimize(&mut obj, &cfg).unwrap();
        assert!(result.trace.iter().all(|t| t.best_fitness == 4.0));
        let p = &result.best_position;
        assert!((-2.0..=2.0).contains(&p[0]) && (1.0..=3.0).contains(&p[1]));
    }

    #[test]
    fn failed_evaluations_get_worst_fitness() {
        let cfg = SwarmConfig {
            particle_count: 10,
            iterations: 10,
            lower: vec![-1.0],
            upper: vec![1.0],
            ..SwarmConfig::default()
        };
        let mut obj = |x: &[f64]| {
            if x[0] > 0.0 {
                Err(Error::Overflow { index: 1 })
            } else {
                Ok(x[0])
            }
        };
        let result = optimize(&mut obj, &cfg).unwrap();
        assert!(result.best_fitness <= 0.0);
        assert!(result.history.iter().any(|r| r.fitness.is_none()));
        assert!(result
            .trace
            .windows(2)
            .all(|w| w[1].best_fitness >= w[0].best_fitness));
    }

    #[test]
    fn all_failures_in_first_round_is_an_error() {
        let cfg = SwarmConfig {
            particle_count: 3,
            lower: vec![0.0],
            upper: vec![1.0],
            ..SwarmConfig::default()
        };
        let mut obj = |_: &[f64]| Err(Error::Overflow { index: 1 });
        assert!(matches!(
            optimize(&mut obj, &cfg),
            Err(Error::Optimization(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_fraction = SwarmConfig {
            immigrant_fraction: 1.5,
            ..SwarmConfig::default()
        };
        assert!(bad_fraction.validate().is_err());
        let bad_bounds = SwarmConfig {
            lower: vec![1.0],
            upper: vec![1.0],
            ..SwarmConfig::default()
        };
        assert!(bad_bounds.validate().is_err());
    }

    #[test]
    fn resuming_from_checkpoint_reproduces_the_run() {
        let cfg = SwarmConfig {
            iterations: 12,
            ..sphere_config(5)
        };
        let mut obj = neg_sphere;
        let straight = optimize(&mut obj, &cfg).unwrap();

        let mut swarm = Swarm::initialize(cfg.clone(), &mut obj).unwrap();
        for _ in 0..5 {
            swarm.round(&mut obj);
        }
        let json = serde_json::to_string(&swarm.checkpoint()).unwrap();
        let mut resumed = Swarm::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        while !resumed.is_finished() {
            resumed.round(&mut obj);
        }
        assert_eq!(resumed.trace, straight.trace);
    }

    #[test]
    fn trace_csv_layout() {
        let trace = vec![TracePoint {
            iteration: 1,
            best_fitness: 0.5,
            best_position: vec![0.25, 1.0],
        }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &["a", "b"], Some("note"), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# note");
        assert_eq!(lines[1], "iteration,best_fitness,a,b");
        assert!(lines[2].starts_with("1,5.0000000000000000e-1,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn trace_is_monotone_and_in_bounds(seed in any::<u64>(), n in 2usize..20, frac in 0.0f64..1.0) {
                let cfg = SwarmConfig {
                    particle_count: n,
                    iterations: 8,
                    immigrant_fraction: frac,
                    lower: vec![-3.0, 0.0],
                    upper: vec![1.0, 2.0],
                    rng_seed: seed,
                    ..SwarmConfig::default()
                };
                let mut obj = |x: &[f64]| Ok((3.0 * x[0]).sin() - (x[1] - 1.2).powi(2));
                let mut swarm = Swarm::initialize(cfg.clone(), &mut obj).unwrap();
                while !swarm.is_finished() {
                    swarm.pso_step(&mut obj);
                    let holder = swarm.best_holder();
                    let immigrants = swarm.immigrate();
                    prop_assert_eq!(immigrants.len(), (frac * n as f64).floor() as usize);
                    prop_assert!(!immigrants.contains(&holder));
                    swarm.iteration += 1;
                    swarm.trace.push(TracePoint {
                        iteration: swarm.iteration,
                        best_fitness: swarm.best().1,
                        best_position: swarm.best().0.to_vec(),
                    });
                    for p in &swarm.particles {
                        for ((x, lo), hi) in p.position.iter().zip(&cfg.lower).zip(&cfg.upper) {
                            prop_assert!(lo <= x && x <= hi);
                        }
                    }
                }
                prop_assert!(swarm.trace.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
            }
        }
    }
}
