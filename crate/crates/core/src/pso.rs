//! Particle swarm search over a box, gated by a feasibility verdict.
//!
//! Personal and global bests only ever hold evaluations judged feasible, so
//! the swarm is pulled towards good objective values inside the region the
//! classifier accepts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub particles: usize,
    pub max_iterations: usize,
    /// Stop when the global best has not improved for this many iterations.
    pub stagnation_window: usize,
    pub alpha0: f64,
    pub alpha_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Velocity bound as a fraction of the box width, per dimension.
    pub velocity_clamp: f64,
    /// Fresh swarms drawn when an initial swarm has no feasible member.
    pub max_regenerations: usize,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 10,
            max_iterations: 100,
            stagnation_window: 20,
            alpha0: 0.9,
            alpha_decay: 0.99,
            beta1: 1.0,
            beta2: 2.0,
            velocity_clamp: 0.5,
            max_regenerations: 10,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.stagnation_window == 0 {
            return Err(Error::InvalidArgument(
                "swarm size and stagnation window must be positive".into(),
            ));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0 && self.alpha_decay > 0.0 && self.alpha_decay <= 1.0) {
            return Err(Error::InvalidArgument(
                "inertia weight and decay must lie in (0, 1]".into(),
            ));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0 && self.velocity_clamp > 0.0) {
            return Err(Error::InvalidArgument("bad acceleration or velocity bound".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::LengthMismatch(lower.len(), upper.len()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
        {
            return Err(Error::InvalidArgument(
                "box bounds must be finite with lower <= upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| v >= l && v <= u)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + rng.gen::<f64>() * (u - l))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Best feasible position seen by this particle and its objective.
    pub best: Option<(Vec<f64>, f64)>,
}

/// One velocity and position update. `r1` and `r2` are the per-dimension
/// draws already scaled to `U(0, beta1)` and `U(0, beta2)`.
#[allow(clippy::too_many_arguments)]
pub fn step_velocity_position(
    p: &mut Particle,
    pbest: &[f64],
    gbest: &[f64],
    alpha: f64,
    r1: &[f64],
    r2: &[f64],
    bounds: &SearchBox,
    velocity_clamp: f64,
) {
    for d in 0..p.position.len() {
        let x = p.position[d];
        let vmax = velocity_clamp * (bounds.upper[d] - bounds.lower[d]);
        let v = (alpha * p.velocity[d] + r1[d] * (pbest[d] - x) + r2[d] * (gbest[d] - x)).clamp(-vmax, vmax);
        let next = x + v;
        let clamped = next.clamp(bounds.lower[d], bounds.upper[d]);
        p.position[d] = clamped;
        p.velocity[d] = if clamped != next { 0.0 } else { v };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub feasible: bool,
    pub converged: bool,
}

impl Evaluation {
    pub const FAILED: Evaluation = Evaluation {
        objective: f64::INFINITY,
        feasible: false,
        converged: false,
    };
}

/// Result of running the inner optimizer at one parameter point.
#[derive(Debug, Clone)]
pub struct RunOutcome<A> {
    pub objective: f64,
    /// The run produced a structure (no degenerate state solve).
    pub solvable: bool,
    pub converged: bool,
    pub artifact: A,
}

pub trait Runner: Sync {
    type Artifact: Send;
    fn run(&self, position: &[f64]) -> Result<RunOutcome<Self::Artifact>>;
}

pub trait Classifier<A>: Sync {
    fn is_feasible(&self, artifact: &A) -> bool;
}

impl<A, F: Fn(&A) -> bool + Sync> Classifier<A> for F {
    fn is_feasible(&self, artifact: &A) -> bool {
        self(artifact)
    }
}

/// Run, then classify. Feasible means the classifier accepts a solvable run.
pub fn evaluate<R: Runner, C: Classifier<R::Artifact>>(
    position: &[f64],
    runner: &R,
    classifier: &C,
) -> (Evaluation, Option<R::Artifact>) {
    match runner.run(position) {
        Ok(out) => {
            let feasible = out.solvable && out.objective.is_finite() && classifier.is_feasible(&out.artifact);
            (
                Evaluation {
                    objective: out.objective,
                    feasible,
                    converged: out.converged,
                },
                Some(out.artifact),
            )
        }
        Err(e) => {
            log::debug!("run at {position:?} failed: {e}");
            (Evaluation::FAILED, None)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRow {
    /// 0 for initial swarms (including regenerated ones).
    pub iteration: usize,
    pub particle: usize,
    pub position: Vec<f64>,
    pub evaluation: Evaluation,
}

#[derive(Debug)]
pub struct TuneResult<A> {
    pub best_position: Vec<f64>,
    pub best_objective: f64,
    pub best_artifact: Option<A>,
    /// Global-best objective after the initial swarm and after every iteration.
    pub trace: Vec<f64>,
    pub archive: Vec<ArchiveRow>,
    pub iterations: usize,
    pub regenerations: usize,
}

struct Swarm<A> {
    particles: Vec<Particle>,
    gbest: Option<(Vec<f64>, f64)>,
    gbest_artifact: Option<A>,
}

impl<A> Swarm<A> {
    /// Apply evaluations in particle order. Returns whether gbest improved.
    fn update_bests(&mut self, evals: Vec<(Evaluation, Option<A>)>) -> bool {
        let mut improved = false;
        for (p, (ev, art)) in self.particles.iter_mut().zip(evals) {
            if !ev.feasible || !ev.objective.is_finite() {
                continue;
            }
            if p.best.as_ref().is_none_or(|(_, c)| ev.objective < *c) {
                p.best = Some((p.position.clone(), ev.objective));
            }
            if self.gbest.as_ref().is_none_or(|(_, c)| ev.objective < *c) {
                self.gbest = Some((p.position.clone(), ev.objective));
                self.gbest_artifact = art;
                improved = true;
            }
        }
        improved
    }
}

fn evaluate_all<R: Runner, C: Classifier<R::Artifact>>(
    particles: &[Particle],
    runner: &R,
    classifier: &C,
) -> Vec<(Evaluation, Option<R::Artifact>)> {
    particles
        .par_iter()
        .map(|p| evaluate(&p.position, runner, classifier))
        .collect()
}

/// Feasibility-gated particle swarm search.
pub fn tune<R: Runner, C: Classifier<R::Artifact>>(
    cfg: &PsoConfig,
    bounds: &SearchBox,
    runner: &R,
    classifier: &C,
) -> Result<TuneResult<R::Artifact>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut archive = Vec::new();
    let dim = bounds.dim();

    let mut swarm = None;
    let mut regenerations = 0;
    for attempt in 0..=cfg.max_regenerations {
        let particles: Vec<Particle> = (0..cfg.particles)
            .map(|_| Particle {
                position: bounds.sample(&mut rng),
                velocity: vec![0.0; dim],
                best: None,
            })
            .collect();
        let evals = evaluate_all(&particles, runner, classifier);
        for (i, (p, (ev, _))) in particles.iter().zip(&evals).enumerate() {
            archive.push(ArchiveRow {
                iteration: 0,
                particle: i,
                position: p.position.clone(),
                evaluation: *ev,
            });
        }
        let mut s = Swarm {
            particles,
            gbest: None,
            gbest_artifact: None,
        };
        s.update_bests(evals);
        regenerations = attempt;
        if s.gbest.is_some() {
            swarm = Some(s);
            break;
        }
        log::info!("initial swarm {attempt} has no feasible member");
    }
    let mut swarm = swarm.ok_or(Error::NoFeasibleRegion(cfg.max_regenerations + 1))?;
    let mut trace = vec![swarm.gbest.as_ref().expect("feasible").1];

    let mut alpha = cfg.alpha0;
    let mut stale = 0;
    let mut iterations = 0;
    for it in 1..=cfg.max_iterations {
        iterations = it;
        let gbest = swarm.gbest.as_ref().expect("feasible").0.clone();
        for p in &mut swarm.particles {
            let r1: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * cfg.beta1).collect();
            let r2: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * cfg.beta2).collect();
            // a particle without a feasible history follows the swarm best
            let pbest = p.best.as_ref().map_or(&gbest, |(x, _)| x).clone();
            step_velocity_position(p, &pbest, &gbest, alpha, &r1, &r2, bounds, cfg.velocity_clamp);
        }
        let evals = evaluate_all(&swarm.particles, runner, classifier);
        for (i, (p, (ev, _))) in swarm.particles.iter().zip(&evals).enumerate() {
            archive.push(ArchiveRow {
                iteration: it,
                particle: i,
                position: p.position.clone(),
                evaluation: *ev,
            });
        }
        if swarm.update_bests(evals) {
            stale = 0;
        } else {
            stale += 1;
        }
        trace.push(swarm.gbest.as_ref().expect("feasible").1);
        alpha *= cfg.alpha_decay;
        if stale >= cfg.stagnation_window {
            break;
        }
    }

    let (best_position, best_objective) = swarm.gbest.expect("feasible");
    Ok(TuneResult {
        best_position,
        best_objective,
        best_artifact: swarm.gbest_artifact,
        trace,
        archive,
        iterations,
        regenerations,
    })
}
