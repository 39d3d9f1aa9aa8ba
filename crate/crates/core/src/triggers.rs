//! Event triggers over the live stream: regression error, mode classification
//! error, and per-cell quality faults.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twin::HybridNdtModel;
use crate::types::{CellId, Observation, SINR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Regression threshold on the Euclidean residual norm (physical units).
    pub eps_q: f64,
    /// Mismatch count over the rolling window that flags misclassification.
    pub eps_s: usize,
    pub window_len: usize,
    /// Threshold on the absolute residual of component `tau`.
    pub eps_tau: f64,
    pub tau: usize,
    /// Minimum seconds between two firings of the same trigger.
    pub cooldown: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            eps_q: 6.0,
            eps_s: 5,
            window_len: 50,
            eps_tau: 5.0,
            tau: SINR,
            cooldown: 2.0,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self, l: usize) -> Result<()> {
        if !(self.eps_q > 0.0) {
            return Err(Error::config("triggers.eps_q", "must be positive"));
        }
        if self.eps_s == 0 {
            return Err(Error::config("triggers.eps_s", "must be at least 1"));
        }
        if self.window_len == 0 {
            return Err(Error::config("triggers.window_len", "must be at least 1"));
        }
        if !(self.eps_tau > 0.0) {
            return Err(Error::config("triggers.eps_tau", "must be positive"));
        }
        if self.tau >= l {
            return Err(Error::config(
                "triggers.tau",
                format!("component index must be below {l}"),
            ));
        }
        if !(self.cooldown >= 0.0 && self.cooldown.is_finite()) {
            return Err(Error::config("triggers.cooldown", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TriggerKind {
    Regression,
    Classification,
    CellSpecific,
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerKind::Regression => "regression",
            TriggerKind::Classification => "classification",
            TriggerKind::CellSpecific => "cell_specific",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub kind: TriggerKind,
    pub t: f64,
    pub mode: Option<CellId>,
    pub magnitude: f64,
}

fn residual(obs: &Observation, model: &HybridNdtModel) -> Result<Vec<f64>> {
    let predicted = model.predict_quality(&obs.x)?;
    Ok(obs.q.iter().zip(&predicted).map(|(o, p)| o - p).collect())
}

/// Fires when `‖q − ŷ‖ ≥ eps_q`, with `ŷ` the twin's current prediction.
pub fn check_regression(
    obs: &Observation,
    model: &HybridNdtModel,
    cfg: &TriggerConfig,
) -> Result<Option<TriggerEvent>> {
    let norm = residual(obs, model)?
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt();
    Ok((norm >= cfg.eps_q).then_some(TriggerEvent {
        kind: TriggerKind::Regression,
        t: obs.t,
        mode: None,
        magnitude: norm,
    }))
}

/// Fires when at least `eps_s` observations of `window` disagree with the
/// twin's mode map.
pub fn check_classification<'a, I>(
    window: I,
    model: &HybridNdtModel,
    cfg: &TriggerConfig,
) -> Result<Option<TriggerEvent>>
where
    I: IntoIterator<Item = &'a Observation>,
{
    let mut mismatches = 0usize;
    let mut last_t = None;
    for obs in window {
        if model.mode_of(&obs.x)? != obs.cell {
            mismatches += 1;
        }
        last_t = Some(obs.t);
    }
    Ok(match last_t {
        Some(t) if mismatches >= cfg.eps_s => Some(TriggerEvent {
            kind: TriggerKind::Classification,
            t,
            mode: None,
            magnitude: mismatches as f64,
        }),
        _ => None,
    })
}

/// Fires when `|q_τ − ŷ_τ| ≥ eps_tau`; the event names the serving cell.
pub fn check_cell(
    obs: &Observation,
    model: &HybridNdtModel,
    cfg: &TriggerConfig,
) -> Result<Option<TriggerEvent>> {
    let r = residual(obs, model)?;
    let component = *r.get(cfg.tau).ok_or(Error::LengthMismatch {
        expected: cfg.tau + 1,
        got: r.len(),
    })?;
    Ok((component.abs() >= cfg.eps_tau).then_some(TriggerEvent {
        kind: TriggerKind::CellSpecific,
        t: obs.t,
        mode: Some(obs.cell),
        magnitude: component.abs(),
    }))
}

/// Stateful detector: rolling window, per-trigger cooldowns, and precedence
/// CellSpecific > Regression > Classification (at most one event per
/// observation).
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerMonitor {
    pub config: TriggerConfig,
    window: VecDeque<Observation>,
    last_fired: BTreeMap<(TriggerKind, Option<CellId>), f64>,
}

impl TriggerMonitor {
    pub fn new(config: TriggerConfig) -> Self {
        TriggerMonitor {
            config,
            window: VecDeque::new(),
            last_fired: BTreeMap::new(),
        }
    }

    fn cooled(&self, kind: TriggerKind, mode: Option<CellId>, t: f64) -> bool {
        self.last_fired
            .get(&(kind, mode))
            .is_none_or(|last| t - last >= self.config.cooldown)
    }

    fn fire(&mut self, e: TriggerEvent) -> Option<TriggerEvent> {
        if self.cooled(e.kind, e.mode, e.t) {
            self.last_fired.insert((e.kind, e.mode), e.t);
            Some(e)
        } else {
            None
        }
    }

    /// Pushes `obs` into the window and, when `armed`, evaluates the triggers
    /// against `model`. Regression and classification are not evaluated for
    /// observations whose mode is under an active correction.
    pub fn evaluate(
        &mut self,
        obs: &Observation,
        model: &HybridNdtModel,
        armed: bool,
    ) -> Result<Option<TriggerEvent>> {
        self.window.push_back(obs.clone());
        while self.window.len() > self.config.window_len {
            self.window.pop_front();
        }
        if !armed || model.is_empty() {
            return Ok(None);
        }
        if let Some(e) = check_cell(obs, model, &self.config)? {
            if let Some(e) = self.fire(e) {
                return Ok(Some(e));
            }
        }
        if model.active_correction(obs.cell).is_some() {
            return Ok(None);
        }
        if let Some(e) = check_regression(obs, model, &self.config)? {
            if let Some(e) = self.fire(e) {
                return Ok(Some(e));
            }
        }
        if let Some(e) = check_classification(&self.window, model, &self.config)? {
            if let Some(e) = self.fire(e) {
                return Ok(Some(e));
            }
        }
        Ok(None)
    }

    pub fn clear_window(&mut self) {
        self.window.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oda::Codevector;
    use crate::twin::TwinConfig;
    use crate::types::{FeatureBounds, Workspace};
    use proptest::prelude::*;

    fn model() -> HybridNdtModel {
        let ws = Workspace::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let b = FeatureBounds::from_workspace(&ws, vec![-100.0, -10.0], vec![0.0, 30.0]);
        let cv = |id: u64, x: [f64; 2], q: [f64; 2], label| {
            let mut mu = b.normalize_position(&x);
            mu.extend(b.normalize_quality(&q));
            Codevector::new(id, mu, label, 0.5)
        };
        HybridNdtModel::new(
            vec![
                cv(0, [0.0, 5.0], [-60.0, 15.0], 1),
                cv(1, [10.0, 5.0], [-70.0, 10.0], 2),
            ],
            b.clone(),
            TwinConfig::default(),
        )
        .unwrap()
    }

    fn obs(t: f64, x: f64, q: [f64; 2], cell: CellId) -> Observation {
        Observation {
            t,
            x: vec![x, 5.0],
            q: q.to_vec(),
            cell,
        }
    }

    #[test]
    fn regression_boundary() {
        let m = model();
        let cfg = TriggerConfig::default();
        assert!(check_regression(&obs(0.0, 1.0, [-60.0, 15.0], 1), &m, &cfg)
            .unwrap()
            .is_none());
        // Residual (3, 4) has norm 5.
        let cfg5 = TriggerConfig {
            eps_q: 5.0,
            ..cfg.clone()
        };
        let e = check_regression(&obs(0.0, 1.0, [-57.0, 19.0], 1), &m, &cfg5)
            .unwrap()
            .unwrap();
        assert_eq!(e.kind, TriggerKind::Regression);
        assert_eq!(e.magnitude, 5.0);
    }

    #[test]
    fn regression_cooldown() {
        let m = model();
        let mut mon = TriggerMonitor::new(TriggerConfig {
            eps_tau: 100.0,
            ..TriggerConfig::default()
        });
        let bad = |t| obs(t, 1.0, [-50.0, 15.0], 1);
        assert!(mon.evaluate(&bad(0.0), &m, true).unwrap().is_some());
        assert!(mon.evaluate(&bad(1.0), &m, true).unwrap().is_none());
        assert!(mon.evaluate(&bad(2.0), &m, true).unwrap().is_some());
        // Disarmed monitors stay silent.
        assert!(mon.evaluate(&bad(9.0), &m, false).unwrap().is_none());
    }

    #[test]
    fn classification_boundary() {
        let m = model();
        let cfg = TriggerConfig::default();
        let good: Vec<_> = (0..50)
            .map(|i| obs(i as f64, 1.0, [-60.0, 15.0], 1))
            .collect();
        assert!(check_classification(&good, &m, &cfg).unwrap().is_none());
        let mut five = good.clone();
        for o in five.iter_mut().take(5) {
            o.cell = 2;
        }
        let e = check_classification(&five, &m, &cfg).unwrap().unwrap();
        assert_eq!(e.magnitude, 5.0);
        let mut four = good;
        for o in four.iter_mut().take(4) {
            o.cell = 2;
        }
        assert!(check_classification(&four, &m, &cfg).unwrap().is_none());
        let one = TriggerConfig {
            eps_s: 1,
            window_len: 1,
            ..cfg
        };
        assert!(check_classification(&five[..1], &m, &one)
            .unwrap()
            .is_some());
    }

    #[test]
    fn cell_trigger() {
        let m = model();
        let cfg = TriggerConfig {
            eps_tau: 10.0,
            ..TriggerConfig::default()
        };
        assert!(check_cell(&obs(0.0, 1.0, [-60.0, 15.0], 1), &m, &cfg)
            .unwrap()
            .is_none());
        let e = check_cell(&obs(0.0, 1.0, [-60.0, 0.0], 1), &m, &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(
            (e.kind, e.mode, e.magnitude),
            (TriggerKind::CellSpecific, Some(1), 15.0)
        );
        // Exactly at threshold fires.
        assert!(check_cell(&obs(0.0, 1.0, [-60.0, 5.0], 1), &m, &cfg)
            .unwrap()
            .is_some());
        // Residual on RSRP only.
        assert!(check_cell(&obs(0.0, 1.0, [-90.0, 15.0], 1), &m, &cfg)
            .unwrap()
            .is_none());
    }

    #[test]
    fn cell_fault_takes_precedence() {
        let m = model();
        let mut mon = TriggerMonitor::new(TriggerConfig::default());
        let e = mon
            .evaluate(&obs(0.0, 1.0, [-60.0, 0.0], 1), &m, true)
            .unwrap()
            .unwrap();
        assert_eq!(e.kind, TriggerKind::CellSpecific);
    }

    #[test]
    fn exact_twin_never_fires() {
        let m = model();
        let mut mon = TriggerMonitor::new(TriggerConfig::default());
        for i in 0..200 {
            let x = (i % 11) as f64;
            let q = m.steady_prediction(&[x, 5.0]).unwrap();
            let cell = m.mode_of(&[x, 5.0]).unwrap();
            let o = obs(i as f64 * 0.05, x, [q[0], q[1]], cell);
            assert!(mon.evaluate(&o, &m, true).unwrap().is_none());
        }
    }

    fn count_events(cfg: &TriggerConfig, stream: &[Observation]) -> usize {
        let m = model();
        let mut mon = TriggerMonitor::new(cfg.clone());
        stream
            .iter()
            .filter(|o| mon.evaluate(o, &m, true).unwrap().is_some())
            .count()
    }

    proptest! {
        #[test]
        fn raising_a_threshold_never_adds_events(
            samples in prop::collection::vec((0.0..10.0f64, -80.0..-50.0f64, 0.0..25.0f64, 1u32..3), 1..120),
            which in 0usize..3,
            bump in 0.0..10.0f64,
        ) {
            let stream: Vec<_> = samples
                .iter()
                .enumerate()
                .map(|(i, (x, r, s, c))| obs(i as f64 * 0.05, *x, [*r, *s], *c))
                .collect();
            // Each kind in isolation: the other two are disabled.
            let base = |k: usize| {
                let mut c = TriggerConfig {
                    eps_q: 1e9,
                    eps_s: usize::MAX,
                    eps_tau: 1e9,
                    ..TriggerConfig::default()
                };
                match k {
                    0 => c.eps_q = 6.0,
                    1 => c.eps_s = 5,
                    _ => c.eps_tau = 5.0,
                }
                c
            };
            let low = base(which);
            let mut high = low.clone();
            match which {
                0 => high.eps_q += bump,
                1 => high.eps_s += bump as usize,
                _ => high.eps_tau += bump,
            }
            prop_assert!(count_events(&high, &stream) <= count_events(&low, &stream));
        }
    }
}
