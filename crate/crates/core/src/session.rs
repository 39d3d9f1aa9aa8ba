//! The single driver loop: validate, predict, detect, dispatch, learn.
//!
//! [`TwinSession`] owns the annealer, the twin and the trigger monitor and
//! processes one observation at a time. [`BaselineSession`] runs the MLP on the
//! same stream with the same log schema.

use std::collections::{BTreeSet, VecDeque};

use crate::baseline::{BaselineConfig, MlpModel};
use crate::error::{Error, Result};
use crate::io::{EventRow, TrainLogRow};
use crate::oda::{Annealer, LevelStats};
use crate::triggers::{TriggerEvent, TriggerKind, TriggerMonitor};
use crate::twin::HybridNdtModel;
use crate::types::{
    normalize, CellId, FeatureBounds, Observation, ObservationValidator, OutOfBoundsPolicy,
    Workspace,
};

/// Observations in the running-error windows.
pub const DEFAULT_MSE_WINDOW: usize = 50;

/// Rolling mean over a fixed number of samples.
#[derive(Debug, Clone, Default)]
pub struct RollingMean {
    len: usize,
    values: VecDeque<f64>,
}

impl RollingMean {
    pub fn new(len: usize) -> Self {
        RollingMean {
            len: len.max(1),
            values: VecDeque::new(),
        }
    }

    pub fn push(&mut self, v: f64) {
        self.values.push_back(v);
        if self.values.len() > self.len {
            self.values.pop_front();
        }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

fn mean_sq_error(pred: &[f64], q: &[f64]) -> f64 {
    pred.iter()
        .zip(q)
        .map(|(p, o)| (p - o).powi(2))
        .sum::<f64>()
        / q.len().max(1) as f64
}

/// What happened on one observation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Prediction made before the observation was learned from.
    pub prediction: Option<Vec<f64>>,
    /// Mean squared error of that prediction over the quality components.
    pub sq_error: Option<f64>,
    pub event: Option<TriggerEvent>,
    pub updated: bool,
    pub level_done: Option<LevelStats>,
}

pub struct TwinSession {
    pub annealer: Annealer,
    pub twin: HybridNdtModel,
    pub monitor: TriggerMonitor,
    validator: ObservationValidator,
    reheat_factor: f64,
    mse: RollingMean,
    class_err: RollingMean,
    steps: u64,
    pub log: Vec<TrainLogRow>,
    pub events: Vec<EventRow>,
    pub levels: Vec<LevelStats>,
    /// SA updates applied while any correction window was open.
    pub updates_during_correction: u64,
}

impl TwinSession {
    pub fn new(
        annealer: Annealer,
        twin: HybridNdtModel,
        monitor: TriggerMonitor,
        workspace: Workspace,
        policy: OutOfBoundsPolicy,
        mse_window: usize,
    ) -> Result<Self> {
        monitor.config.validate(twin.bounds.l())?;
        let reheat_factor = annealer.state.config.reheat_factor;
        Ok(TwinSession {
            annealer,
            twin,
            monitor,
            validator: ObservationValidator::new(workspace, policy),
            reheat_factor,
            mse: RollingMean::new(mse_window),
            class_err: RollingMean::new(mse_window),
            steps: 0,
            log: Vec::new(),
            events: Vec::new(),
            levels: Vec::new(),
            updates_during_correction: 0,
        })
    }

    pub fn bounds(&self) -> &FeatureBounds {
        &self.twin.bounds
    }

    pub fn running_mse(&self) -> Option<f64> {
        self.mse.mean()
    }

    pub fn clamped(&self) -> u64 {
        self.validator.clamped
    }

    pub fn step(&mut self, obs: Observation) -> Result<StepReport> {
        let obs = self.validator.check(obs)?;
        let mut report = StepReport::default();
        self.twin.advance_to(obs.t);

        if !self.twin.is_empty() {
            let pred = self.twin.predict_quality(&obs.x)?;
            let e = mean_sq_error(&pred, &obs.q);
            self.mse.push(e);
            let wrong = self.twin.mode_of(&obs.x)? != obs.cell;
            self.class_err.push(if wrong { 1.0 } else { 0.0 });
            report.sq_error = Some(e);
            report.prediction = Some(pred);
        }

        let armed = self.annealer.is_converged();
        let event = self.monitor.evaluate(&obs, &self.twin, armed)?;
        if let Some(e) = &event {
            let action = match e.kind {
                TriggerKind::Regression | TriggerKind::Classification => {
                    self.annealer.reheat(self.reheat_factor)?;
                    format!("reheat lambda={}", self.annealer.lambda())
                }
                TriggerKind::CellSpecific => {
                    let mode = e.mode.unwrap_or(obs.cell);
                    self.twin.activate_correction(mode, obs.t, &obs)?;
                    format!("correction mode={mode}")
                }
            };
            log::info!(
                "t={:.2} {} magnitude={:.3}: {action}",
                e.t,
                e.kind,
                e.magnitude
            );
            self.events.push(EventRow {
                t: e.t,
                kind: e.kind.to_string(),
                mode: e.mode,
                magnitude: e.magnitude,
                action_taken: action,
            });
        }
        report.event = event;
        self.twin.refresh_correction(&obs)?;

        let held: BTreeSet<CellId> = self
            .twin
            .corrections()
            .iter()
            .filter(|c| c.is_active(self.twin.time()))
            .map(|c| c.mode)
            .collect();
        if !held.contains(&obs.cell) {
            let z = normalize(&obs, self.bounds())?;
            let outcome = self.annealer.observe_masked(&z, &held)?;
            if outcome.updated {
                if !held.is_empty() {
                    self.updates_during_correction += 1;
                }
                self.twin.sync(&self.annealer.effective_codevectors());
            }
            report.updated = outcome.updated;
            if let Some(stats) = outcome.level_done {
                log::debug!(
                    "level {} lambda={:.4} K={} obs={} converged={}",
                    stats.level,
                    stats.lambda,
                    stats.k,
                    stats.observations,
                    stats.converged
                );
                self.levels.push(stats.clone());
                report.level_done = Some(stats);
            }
        }

        self.steps += 1;
        self.log.push(TrainLogRow {
            step: self.steps,
            t_sim: obs.t,
            lambda: Some(self.annealer.lambda()),
            k: self.annealer.state.k(),
            running_mse: self.mse.mean(),
            running_class_err: self.class_err.mean(),
            trigger_flags: report
                .event
                .as_ref()
                .map(|e| flag(e.kind).to_string())
                .unwrap_or_default(),
        });
        Ok(report)
    }

    /// Feeds every observation of `stream`.
    pub fn run<I>(&mut self, stream: I) -> Result<()>
    where
        I: IntoIterator<Item = Result<Observation>>,
    {
        for obs in stream {
            self.step(obs?)?;
        }
        Ok(())
    }
}

/// One-letter code of a trigger kind in the training log.
pub fn flag(kind: TriggerKind) -> &'static str {
    match kind {
        TriggerKind::Regression => "R",
        TriggerKind::Classification => "C",
        TriggerKind::CellSpecific => "S",
    }
}

/// Online SGD training of the MLP baseline on position-only inputs.
pub struct BaselineSession {
    pub model: MlpModel,
    pub bounds: FeatureBounds,
    lr: f64,
    mse: RollingMean,
    steps: u64,
    pub log: Vec<TrainLogRow>,
}

impl BaselineSession {
    pub fn new(config: &BaselineConfig, bounds: FeatureBounds, mse_window: usize) -> Result<Self> {
        config.validate()?;
        bounds.validate()?;
        let model = MlpModel::init(bounds.d(), config.hidden, bounds.l(), config.seed);
        Ok(BaselineSession {
            model,
            bounds,
            lr: config.lr,
            mse: RollingMean::new(mse_window),
            steps: 0,
            log: Vec::new(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.bounds.normalize_position(x);
        self.bounds.denormalize_quality(&self.model.forward(&z))
    }

    pub fn step(&mut self, obs: &Observation) -> Result<f64> {
        if !obs.is_finite() {
            return Err(Error::RejectedRecord(format!(
                "non-finite component at t={}",
                obs.t
            )));
        }
        let pred = self.predict(&obs.x);
        let e = mean_sq_error(&pred, &obs.q);
        self.mse.push(e);
        let x = self.bounds.normalize_position(&obs.x);
        let target = self.bounds.normalize_quality(&obs.q);
        self.model.sgd_step(&x, &target, self.lr);
        self.steps += 1;
        self.log.push(TrainLogRow {
            step: self.steps,
            t_sim: obs.t,
            lambda: None,
            k: 0,
            running_mse: self.mse.mean(),
            running_class_err: None,
            trigger_flags: String::new(),
        });
        Ok(e)
    }

    pub fn run<I>(&mut self, stream: I) -> Result<()>
    where
        I: IntoIterator<Item = Result<Observation>>,
    {
        for obs in stream {
            self.step(&obs?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceKind;
    use crate::oda::{TrainerConfig, TrainerState};
    use crate::triggers::TriggerConfig;
    use crate::twin::TwinConfig;

    fn bounds() -> FeatureBounds {
        FeatureBounds::from_workspace(
            &Workspace::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(),
            vec![-120.0, -10.0],
            vec![-40.0, 30.0],
        )
    }

    fn session(trainer: TrainerConfig) -> TwinSession {
        let b = bounds();
        let div = DivergenceKind::euclidean(b.component_weights());
        let annealer = Annealer::new(TrainerState::new(trainer, div).unwrap());
        let twin = HybridNdtModel::new(vec![], b, TwinConfig::default()).unwrap();
        TwinSession::new(
            annealer,
            twin,
            TriggerMonitor::new(TriggerConfig::default()),
            Workspace::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(),
            OutOfBoundsPolicy::Clamp,
            DEFAULT_MSE_WINDOW,
        )
        .unwrap()
    }

    fn obs(t: f64, x: f64, cell: CellId, sinr: f64) -> Observation {
        Observation {
            t,
            x: vec![x, 5.0],
            q: vec![-70.0, sinr],
            cell,
        }
    }

    fn fast() -> TrainerConfig {
        TrainerConfig {
            lambda_min: 0.6,
            max_obs_per_level: 100,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn rolling_mean_window() {
        let mut r = RollingMean::new(2);
        assert_eq!(r.mean(), None);
        r.push(1.0);
        r.push(3.0);
        r.push(5.0);
        assert_eq!(r.mean(), Some(4.0));
    }

    #[test]
    fn cold_start_learns_and_converges() {
        let mut s = session(fast());
        let mut t = 0.0;
        while !s.annealer.is_converged() && t < 100.0 {
            let x = (t * 3.0) % 10.0;
            let (cell, sinr) = if x < 5.0 { (1, 10.0) } else { (2, 5.0) };
            s.step(obs(t, x, cell, sinr)).unwrap();
            t += 0.05;
        }
        assert!(s.annealer.is_converged());
        assert_eq!(s.twin.modes(), [1, 2].into());
        assert_eq!(s.log.len() as u64, s.steps);
        assert!(s.events.is_empty());
        assert_eq!(s.twin.mode_of(&[1.0, 5.0]).unwrap(), 1);
        assert_eq!(s.twin.mode_of(&[9.0, 5.0]).unwrap(), 2);
    }

    #[test]
    fn cell_fault_opens_correction_and_holds_training() {
        let mut s = session(fast());
        let mut t = 0.0;
        while !s.annealer.is_converged() {
            s.step(obs(t, 2.0, 1, 10.0)).unwrap();
            t += 0.05;
        }
        let updates = s.annealer.sa_updates;
        let r = s.step(obs(t, 2.0, 1, 0.0)).unwrap();
        assert_eq!(r.event.unwrap().kind, TriggerKind::CellSpecific);
        assert!(s.twin.active_correction(1).is_some());
        for i in 1..40 {
            s.step(obs(t + i as f64 * 0.05, 2.0, 1, 0.0)).unwrap();
        }
        assert_eq!(s.annealer.sa_updates, updates);
        assert_eq!(s.updates_during_correction, 0);
        assert_eq!(s.events[0].action_taken, "correction mode=1");
    }

    #[test]
    fn rejects_backwards_time() {
        let mut s = session(fast());
        s.step(obs(1.0, 2.0, 1, 10.0)).unwrap();
        assert!(matches!(
            s.step(obs(0.5, 2.0, 1, 10.0)),
            Err(Error::RejectedRecord(_))
        ));
    }

    #[test]
    fn baseline_session_reduces_error() {
        let mut b = BaselineSession::new(&BaselineConfig::default(), bounds(), 50).unwrap();
        let mut first = None;
        for i in 0..2000 {
            let x = (i as f64 * 0.37) % 10.0;
            let e = b.step(&obs(i as f64 * 0.05, x, 1, 2.0 * x)).unwrap();
            first.get_or_insert(e);
        }
        assert!(b.mse.mean().unwrap() < first.unwrap());
        assert!(b.log.iter().all(|r| r.lambda.is_none()));
    }
}
