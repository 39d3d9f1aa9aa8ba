//! The temperature schedule: levels of stochastic-approximation updates at a
//! fixed λ, separated by merge/prune, λ decay and perturbation.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Codevector, TrainerState};
use crate::error::Result;
use crate::types::{CellId, ObservationVector};

/// Summary of one completed level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub lambda: f64,
    /// Codevector count after merge and prune.
    pub k: usize,
    pub observations: usize,
    /// Mean divergence from each observation to its nearest same-label codevector.
    pub mean_distortion: f64,
    /// False when the level ran out of budget before the probe test passed.
    pub converged: bool,
    pub merged: usize,
    pub pruned: usize,
    /// Perturbation copies folded back for lack of support.
    #[serde(default)]
    pub absorbed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObserveOutcome {
    /// An SA update was applied.
    pub updated: bool,
    /// A codevector was spawned for an unseen label.
    pub spawned: bool,
    pub level_done: Option<LevelStats>,
    /// The schedule reached its final temperature with this observation.
    pub converged_now: bool,
}

const REPLAY_STREAM: u64 = 0x5EED_0F2E_71A7;

/// The most recent observations, sampled uniformly to decorrelate updates
/// along a trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
struct ReplayWindow {
    buf: VecDeque<ObservationVector>,
    rng: Option<ChaCha8Rng>,
}

impl ReplayWindow {
    /// Appends `z` and returns the sample to train on.
    fn push_and_draw(&mut self, z: &ObservationVector, cap: usize, seed: u64) -> ObservationVector {
        if cap <= 1 {
            return z.clone();
        }
        if self.buf.len() >= cap {
            self.buf.pop_front();
        }
        self.buf.push_back(z.clone());
        let rng = self
            .rng
            .get_or_insert_with(|| ChaCha8Rng::seed_from_u64(seed ^ REPLAY_STREAM));
        let j = rng.random_range(0..self.buf.len());
        self.buf[j].clone()
    }

    fn clear(&mut self) {
        self.buf.clear();
    }
}

/// Online driver of the annealing schedule. Feed observations one at a time
/// with [`Annealer::observe`]; once converged the annealer stops perturbing
/// and either keeps tracking at its final λ or ignores input, until
/// [`Annealer::reheat`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annealer {
    pub state: TrainerState,
    converged: bool,
    level: usize,
    level_obs: usize,
    level_distortion: f64,
    pending_perturb: bool,
    anchor: Vec<(u64, Vec<f64>)>,
    since_anchor: usize,
    /// Ids of the perturbation copies of the level in progress.
    #[serde(default)]
    fresh: BTreeSet<u64>,
    #[serde(skip)]
    replay: ReplayWindow,
    /// Total SA updates applied since creation.
    pub sa_updates: u64,
}

impl Annealer {
    pub fn new(state: TrainerState) -> Self {
        let mut a = Annealer {
            state,
            converged: false,
            level: 0,
            level_obs: 0,
            level_distortion: 0.0,
            pending_perturb: false,
            anchor: Vec::new(),
            since_anchor: 0,
            fresh: BTreeSet::new(),
            replay: ReplayWindow::default(),
            sa_updates: 0,
        };
        a.reanchor();
        a
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn lambda(&self) -> f64 {
        self.state.lambda
    }

    /// Codevectors of the last completed level, tracked live: everything
    /// except the copies the current level's perturbation inserted.
    pub fn effective_codevectors(&self) -> Vec<Codevector> {
        self.state
            .codevectors
            .iter()
            .filter(|c| !self.fresh.contains(&c.id))
            .cloned()
            .collect()
    }

    fn reanchor(&mut self) {
        self.anchor = self
            .state
            .codevectors
            .iter()
            .map(|c| (c.id, c.mu.clone()))
            .collect();
        self.since_anchor = 0;
    }

    fn max_displacement(&self) -> f64 {
        if self.anchor.len() != self.state.codevectors.len() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for ((id, old), c) in self.anchor.iter().zip(&self.state.codevectors) {
            if *id != c.id {
                return f64::INFINITY;
            }
            let moved = old
                .iter()
                .zip(&c.mu)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(moved);
        }
        worst
    }

    pub fn observe(&mut self, z: &ObservationVector) -> Result<ObserveOutcome> {
        self.observe_masked(z, &BTreeSet::new())
    }

    /// Like [`observe`](Self::observe) with codevectors of the `held` labels
    /// frozen in place for this update.
    pub fn observe_masked(
        &mut self,
        z: &ObservationVector,
        held: &BTreeSet<CellId>,
    ) -> Result<ObserveOutcome> {
        let mut out = ObserveOutcome::default();
        if self.converged && !self.state.config.track_when_converged {
            return Ok(out);
        }
        if self.pending_perturb && !self.converged {
            let before: BTreeSet<u64> = self.state.codevectors.iter().map(|c| c.id).collect();
            self.state.perturb();
            self.fresh = self
                .state
                .codevectors
                .iter()
                .map(|c| c.id)
                .filter(|id| !before.contains(id))
                .collect();
            self.pending_perturb = false;
            self.reanchor();
        }
        if !self.state.has_live_label(z.label) {
            self.state.spawn(z);
            self.reanchor();
            out.spawned = true;
        }
        if let (false, Some(i)) = (self.converged, self.state.nearest(z)) {
            self.level_distortion += crate::divergence::bregman(
                &self.state.divergence,
                &z.z,
                &self.state.codevectors[i].mu,
            )?;
        }
        let cfg = &self.state.config;
        let drawn = self
            .replay
            .push_and_draw(z, cfg.replay_window, cfg.rng_seed);
        let sample = if held.contains(&drawn.label) || !self.state.has_live_label(drawn.label) {
            z
        } else {
            &drawn
        };
        self.state.sa_step_masked(sample, held)?;
        out.updated = true;
        self.sa_updates += 1;
        if self.converged {
            return Ok(out);
        }
        self.level_obs += 1;
        self.since_anchor += 1;

        let cfg = &self.state.config;
        let mut finished = None;
        if self.since_anchor >= cfg.probe_window {
            if self.max_displacement() < cfg.convergence_tol {
                finished = Some(true);
            } else {
                self.reanchor();
            }
        }
        if finished.is_none() && self.level_obs >= self.state.config.max_obs_per_level {
            finished = Some(false);
        }
        if let Some(converged) = finished {
            out.level_done = Some(self.finish_level(converged));
            out.converged_now = self.converged;
        }
        Ok(out)
    }

    fn finish_level(&mut self, converged: bool) -> LevelStats {
        let absorbed = self.state.absorb_unsupported();
        let merge = self.state.merge_and_prune();
        self.fresh.clear();
        let stats = LevelStats {
            level: self.level,
            lambda: self.state.lambda,
            k: self.state.k(),
            observations: self.level_obs,
            mean_distortion: self.level_distortion / self.level_obs.max(1) as f64,
            converged,
            merged: merge.merged,
            pruned: merge.pruned,
            absorbed,
        };
        let cfg = &self.state.config;
        let next = self.state.lambda * cfg.lambda_decay;
        if next < cfg.lambda_min || self.state.k() >= cfg.k_max {
            self.converged = true;
        } else {
            self.state.lambda = next;
            if cfg.reset_step_per_level {
                self.state.step = 0;
            }
            self.pending_perturb = !self.state.codevectors.is_empty();
        }
        self.level += 1;
        self.level_obs = 0;
        self.level_distortion = 0.0;
        self.reanchor();
        stats
    }

    /// Raises λ by `factor` and resumes the schedule from there. The replay
    /// window is emptied: what it holds predates the change.
    pub fn reheat(&mut self, factor: f64) -> Result<()> {
        self.state.reheat(factor)?;
        self.replay.clear();
        self.converged = false;
        self.pending_perturb = false;
        self.level_obs = 0;
        self.level_distortion = 0.0;
        self.reanchor();
        Ok(())
    }
}

/// Feeds `stream` until the current level completes.
/// Returns the level summary, or `None` when the stream ran dry first.
pub fn run_level<I>(annealer: &mut Annealer, stream: &mut I) -> Result<Option<LevelStats>>
where
    I: Iterator<Item = ObservationVector>,
{
    if annealer.is_converged() {
        return Ok(None);
    }
    for z in stream.by_ref() {
        if let Some(stats) = annealer.observe(&z)?.level_done {
            return Ok(Some(stats));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnealReport {
    pub levels: Vec<LevelStats>,
    /// The stream ended before the schedule converged.
    pub exhausted: bool,
}

/// Runs levels until λ would fall below `lambda_min`, `k_max` is reached, or
/// the stream ends.
pub fn anneal<I>(annealer: &mut Annealer, stream: &mut I) -> Result<AnnealReport>
where
    I: Iterator<Item = ObservationVector>,
{
    let mut report = AnnealReport::default();
    while !annealer.is_converged() {
        match run_level(annealer, stream)? {
            Some(stats) => report.levels.push(stats),
            None => {
                report.exhausted = true;
                break;
            }
        }
    }
    Ok(report)
}
