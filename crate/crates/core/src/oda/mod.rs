//! Online deterministic annealing over labelled augmented vectors.
//!
//! Each codevector carries a position `mu = [ρ̄; Q̄]` in normalized feature
//! space, a cell label, and the two stochastic-approximation auxiliaries
//! `mass` (estimate of `p(μ_i)`) and `weighted_sum` (estimate of
//! `E[z 1{μ_i}]`), with `mu = weighted_sum / mass` whenever the codevector is
//! updated. Associations are mass-weighted Gibbs distributions restricted to
//! codevectors sharing the observation's label.

mod oracle;
mod schedule;

pub use oracle::{
    fixed_point_oracle, free_energy, mass_weighted_free_energy, OracleMode, OracleResult,
};
pub use schedule::{anneal, run_level, AnnealReport, Annealer, LevelStats, ObserveOutcome};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::divergence::{class_constrained, DivergenceKind};
use crate::error::{Error, Result};
use crate::types::{CellId, ObservationVector};

/// Mass assigned to a codevector spawned for a previously unseen label.
pub const SPAWN_MASS: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codevector {
    /// Stable identity, survives merges (the lower index keeps its id).
    pub id: u64,
    pub mu: Vec<f64>,
    pub label: CellId,
    pub mass: f64,
    pub weighted_sum: Vec<f64>,
    /// Set once `mass` underflows; frozen codevectors take no part in
    /// associations and wait for the next prune.
    #[serde(default)]
    pub frozen: bool,
    /// Association gathered since the codevector was created.
    #[serde(default)]
    pub support: f64,
    /// Codevector this one was perturbed from, until its first level ends.
    #[serde(default)]
    pub parent: Option<u64>,
}

impl Codevector {
    pub fn new(id: u64, mu: Vec<f64>, label: CellId, mass: f64) -> Self {
        let weighted_sum = mu.iter().map(|v| v * mass).collect();
        Codevector {
            id,
            mu,
            label,
            mass,
            weighted_sum,
            frozen: false,
            support: 0.0,
            parent: None,
        }
    }

    fn is_live(&self) -> bool {
        !self.frozen && self.mass > 0.0
    }

    fn rescale_mass(&mut self, factor: f64) {
        self.mass *= factor;
        for w in &mut self.weighted_sum {
            *w *= factor;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub lambda_start: f64,
    /// Multiplicative decay of λ between levels.
    pub lambda_decay: f64,
    pub lambda_min: f64,
    pub reheat_factor: f64,
    /// Step size `β(t) = b0 / (b1 + t)`.
    pub b0: f64,
    pub b1: f64,
    /// Level convergence: max codevector displacement over one probe window.
    pub convergence_tol: f64,
    pub probe_window: usize,
    pub max_obs_per_level: usize,
    pub perturbation_delta: f64,
    pub merge_tol: f64,
    pub prune_mass: f64,
    /// Association a perturbation copy must gather during its first level;
    /// copies below it are folded back into their parent.
    pub min_support: f64,
    /// Length of the window of recent observations the annealer samples its
    /// updates from; 1 trains on the live observation only.
    pub replay_window: usize,
    /// Keep applying SA updates at the final λ once the schedule has converged.
    pub track_when_converged: bool,
    /// Restart the step counter at every new λ level.
    pub reset_step_per_level: bool,
    pub k_max: usize,
    pub rng_seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lambda_start: 0.9,
            lambda_decay: 0.9,
            lambda_min: 0.05,
            reheat_factor: 1.1,
            b0: 1.0,
            b1: 10.0,
            convergence_tol: 1e-3,
            probe_window: 50,
            max_obs_per_level: 2000,
            perturbation_delta: 0.01,
            merge_tol: 1e-2,
            prune_mass: 1e-3,
            min_support: 0.5,
            replay_window: 600,
            track_when_converged: true,
            reset_step_per_level: true,
            k_max: 256,
            rng_seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !(0.0 < c.lambda_min && c.lambda_min < c.lambda_start && c.lambda_start < 1.0) {
            return Err(Error::config(
                "trainer.lambda_start",
                "need 0 < lambda_min < lambda_start < 1",
            ));
        }
        if !(0.0 < c.lambda_decay && c.lambda_decay < 1.0) {
            return Err(Error::config("trainer.lambda_decay", "must lie in (0, 1)"));
        }
        if !(c.reheat_factor > 1.0) {
            return Err(Error::config("trainer.reheat_factor", "must exceed 1"));
        }
        if !(c.b0 > 0.0 && c.b1 > 0.0) {
            return Err(Error::config(
                "trainer.b0",
                "step-size constants must be positive",
            ));
        }
        if !(c.convergence_tol > 0.0) {
            return Err(Error::config("trainer.convergence_tol", "must be positive"));
        }
        if c.replay_window == 0 {
            return Err(Error::config("trainer.replay_window", "must be at least 1"));
        }
        if c.probe_window == 0 || c.max_obs_per_level == 0 {
            return Err(Error::config(
                "trainer.probe_window",
                "probe window and level budget must be positive",
            ));
        }
        if !(c.perturbation_delta > 0.0
            && c.merge_tol >= 0.0
            && c.prune_mass >= 0.0
            && c.min_support >= 0.0)
        {
            return Err(Error::config(
                "trainer.perturbation_delta",
                "perturbation must be positive, tolerances nonnegative",
            ));
        }
        if c.k_max == 0 {
            return Err(Error::config("trainer.k_max", "must be at least 1"));
        }
        Ok(())
    }

    pub fn step_size(&self, step: u64) -> f64 {
        self.b0 / (self.b1 + step as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PerturbReport {
    pub added: usize,
    /// True when `k_max` cut the perturbation short.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MergeReport {
    pub merged: usize,
    pub pruned: usize,
    pub pruned_mass: f64,
}

/// Codevectors plus the temperature and the step counter of the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub codevectors: Vec<Codevector>,
    pub lambda: f64,
    /// SA step counter `t`; restarts on reheat and, by default, at each new level.
    pub step: u64,
    pub known_labels: BTreeSet<CellId>,
    pub divergence: DivergenceKind,
    pub config: TrainerConfig,
    next_id: u64,
    perturb_count: u64,
}

impl TrainerState {
    pub fn new(config: TrainerConfig, divergence: DivergenceKind) -> Result<Self> {
        config.validate()?;
        divergence.validate()?;
        Ok(TrainerState {
            codevectors: Vec::new(),
            lambda: config.lambda_start,
            step: 0,
            known_labels: BTreeSet::new(),
            divergence,
            config,
            next_id: 0,
            perturb_count: 0,
        })
    }

    /// State with the given codevectors, `mass` taken uniform at `1/K`.
    pub fn with_codevectors(
        config: TrainerConfig,
        divergence: DivergenceKind,
        lambda: f64,
        initial: &[(Vec<f64>, CellId)],
    ) -> Result<Self> {
        let mut s = Self::new(config, divergence)?;
        s.lambda = lambda;
        let m = 1.0 / initial.len().max(1) as f64;
        for (mu, label) in initial {
            s.push(mu.clone(), *label, m);
        }
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.codevectors.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.codevectors.iter().map(|c| c.mass).sum()
    }

    /// `(1 − λ) / λ`, the inverse temperature of the Gibbs weights.
    pub fn inverse_temperature(&self) -> f64 {
        (1.0 - self.lambda) / self.lambda
    }

    pub fn has_live_label(&self, label: CellId) -> bool {
        self.codevectors
            .iter()
            .any(|c| c.label == label && c.is_live())
    }

    fn push(&mut self, mu: Vec<f64>, label: CellId, mass: f64) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        self.known_labels.insert(label);
        self.codevectors.push(Codevector::new(id, mu, label, mass));
        self.codevectors.len() - 1
    }

    /// Inserts a codevector at `z` for a label with no live codevector.
    /// The first codevector of a cold trainer gets mass 1, later ones a
    /// small mass that the recursion grows.
    pub fn spawn(&mut self, z: &ObservationVector) -> usize {
        let mass = if self.codevectors.is_empty() {
            1.0
        } else {
            SPAWN_MASS
        };
        self.push(z.z.clone(), z.label, mass)
    }

    /// Mass-weighted Gibbs association of `z` over all codevectors;
    /// label-mismatched and frozen codevectors get exactly zero.
    pub fn gibbs_association(&self, z: &ObservationVector) -> Result<Vec<f64>> {
        let beta = self.inverse_temperature();
        let mut logits = Vec::with_capacity(self.codevectors.len());
        let mut max = f64::NEG_INFINITY;
        for c in &self.codevectors {
            let logit = if c.is_live() {
                let d = class_constrained(&self.divergence, &z.z, z.label, &c.mu, c.label)?;
                if d.is_finite() {
                    c.mass.ln() - beta * d
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                f64::NEG_INFINITY
            };
            max = max.max(logit);
            logits.push(logit);
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::Unassignable(z.label));
        }
        let mut total = 0.0;
        for l in &mut logits {
            *l = if l.is_finite() { (*l - max).exp() } else { 0.0 };
            total += *l;
        }
        for l in &mut logits {
            *l /= total;
        }
        Ok(logits)
    }

    /// One stochastic-approximation update with observation `z`.
    pub fn sa_step(&mut self, z: &ObservationVector) -> Result<()> {
        self.sa_step_masked(z, &BTreeSet::new())
    }

    /// As [`sa_step`](Self::sa_step), but codevectors whose label is in
    /// `held` are left exactly as they are.
    pub fn sa_step_masked(&mut self, z: &ObservationVector, held: &BTreeSet<CellId>) -> Result<()> {
        let p = self.gibbs_association(z)?;
        let beta = self.config.step_size(self.step);
        for (c, p_i) in self.codevectors.iter_mut().zip(p) {
            if c.frozen || held.contains(&c.label) {
                continue;
            }
            let drive = if c.label == z.label { p_i } else { 0.0 };
            c.support += drive;
            c.mass += beta * (drive - c.mass);
            for (w, zk) in c.weighted_sum.iter_mut().zip(&z.z) {
                *w += beta * (drive * zk - *w);
            }
            if c.mass < f64::EPSILON {
                c.frozen = true;
            } else if drive > 0.0 {
                for (m, w) in c.mu.iter_mut().zip(&c.weighted_sum) {
                    *m = w / c.mass;
                }
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Inserts, for every codevector and every known label, a copy offset by a
    /// random vector of norm `perturbation_delta`. Parents keep their label and
    /// position; parent and copies share the parent mass equally.
    pub fn perturb(&mut self) -> PerturbReport {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config
                .rng_seed
                .wrapping_add(self.perturb_count.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        self.perturb_count += 1;
        let labels: Vec<CellId> = self.known_labels.iter().copied().collect();
        let parents = self.codevectors.len();
        let mut report = PerturbReport::default();
        let mut out = Vec::with_capacity(parents * (labels.len() + 1));
        let mut budget = self.config.k_max.saturating_sub(parents);
        for mut parent in std::mem::take(&mut self.codevectors) {
            let wanted = if parent.frozen { 0 } else { labels.len() };
            let n = wanted.min(budget);
            if n < wanted {
                report.truncated = true;
            }
            budget -= n;
            let share = 1.0 / (n + 1) as f64;
            parent.rescale_mass(share);
            let mut copies = Vec::with_capacity(n);
            for &label in &labels[..n] {
                let offset =
                    random_offset(&mut rng, parent.mu.len(), self.config.perturbation_delta);
                let mu: Vec<f64> = parent.mu.iter().zip(offset).map(|(m, o)| m + o).collect();
                copies.push((mu, label, parent.mass));
            }
            let parent_id = parent.id;
            out.push(parent);
            for (mu, label, mass) in copies {
                let id = self.next_id;
                self.next_id += 1;
                let mut copy = Codevector::new(id, mu, label, mass);
                copy.parent = Some(parent_id);
                out.push(copy);
                report.added += 1;
            }
        }
        self.codevectors = out;
        if report.truncated {
            log::warn!("perturbation truncated at k_max = {}", self.config.k_max);
        }
        report
    }

    /// Folds every perturbation copy that gathered less than `min_support`
    /// association back into its parent (mass and all), then forgets
    /// parentage. Returns the number of copies absorbed.
    pub fn absorb_unsupported(&mut self) -> usize {
        let min = self.config.min_support;
        let mut absorbed = 0;
        let mut i = 0;
        while i < self.codevectors.len() {
            let c = &self.codevectors[i];
            let host = match c.parent {
                Some(pid) if c.support < min => self
                    .codevectors
                    .iter()
                    .position(|h| h.id == pid && !h.frozen),
                _ => None,
            };
            match host {
                Some(h) => {
                    let c = self.codevectors.remove(i);
                    let h = if h > i { h - 1 } else { h };
                    let host = &mut self.codevectors[h];
                    host.mass += c.mass;
                    host.weighted_sum = host.mu.iter().map(|m| m * host.mass).collect();
                    absorbed += 1;
                }
                None => i += 1,
            }
        }
        for c in &mut self.codevectors {
            c.parent = None;
        }
        absorbed
    }

    /// Merges same-label codevectors closer than `merge_tol`, then removes
    /// codevectors lighter than `prune_mass` while keeping the heaviest
    /// codevector of every label.
    pub fn merge_and_prune(&mut self) -> MergeReport {
        let mut report = MergeReport::default();
        let mut i = 0;
        while i < self.codevectors.len() {
            let mut j = i + 1;
            while j < self.codevectors.len() {
                let (a, b) = (&self.codevectors[i], &self.codevectors[j]);
                let close = a.label == b.label
                    && !a.frozen
                    && !b.frozen
                    && crate::divergence::bregman(&self.divergence, &a.mu, &b.mu)
                        .map(|d| d < self.config.merge_tol)
                        .unwrap_or(false);
                if close {
                    let b = self.codevectors.remove(j);
                    let a = &mut self.codevectors[i];
                    let total = a.mass + b.mass;
                    for (k, m) in a.mu.iter_mut().enumerate() {
                        *m = if total > 0.0 {
                            (a.mass * *m + b.mass * b.mu[k]) / total
                        } else {
                            *m
                        };
                    }
                    a.mass = total;
                    a.weighted_sum = a.mu.iter().map(|m| m * total).collect();
                    report.merged += 1;
                    j = i + 1;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }

        let threshold = self.config.prune_mass;
        let mut keep = vec![true; self.codevectors.len()];
        for (idx, c) in self.codevectors.iter().enumerate() {
            if c.frozen || c.mass < threshold {
                keep[idx] = false;
            }
        }
        for label in &self.known_labels {
            let of_label = || {
                self.codevectors
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.label == *label)
            };
            if of_label().next().is_some() && !of_label().any(|(i, _)| keep[i]) {
                let mut best: Option<(usize, f64)> = None;
                for (i, c) in of_label() {
                    if best.is_none_or(|(_, m)| c.mass > m) {
                        best = Some((i, c.mass));
                    }
                }
                if let Some((i, _)) = best {
                    keep[i] = true;
                    self.codevectors[i].frozen = false;
                }
            }
        }
        let mut idx = 0;
        self.codevectors.retain(|c| {
            let k = keep[idx];
            idx += 1;
            if !k {
                report.pruned += 1;
                report.pruned_mass += c.mass;
            }
            k
        });
        report
    }

    /// Raises λ by `factor` (clamped at `lambda_start`) and restarts the
    /// step-size sequence. Codevectors are untouched.
    pub fn reheat(&mut self, factor: f64) -> Result<()> {
        if !(factor > 1.0) {
            return Err(Error::config("trainer.reheat_factor", "must exceed 1"));
        }
        self.lambda = (self.lambda * factor).min(self.config.lambda_start);
        self.step = 0;
        Ok(())
    }

    /// Index of the nearest live codevector in the full augmented space among
    /// those sharing `label`; lowest index wins ties.
    pub fn nearest(&self, z: &ObservationVector) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.codevectors.iter().enumerate() {
            if c.label != z.label || !c.is_live() {
                continue;
            }
            let d = crate::divergence::bregman(&self.divergence, &z.z, &c.mu).ok()?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

fn random_offset(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x * norm / n).collect();
        }
    }
}
