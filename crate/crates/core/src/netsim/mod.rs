//! Deterministic synthetic multi-cell radio environment.
//!
//! A UE follows a trajectory through the workspace; each sample reports its
//! position, the serving cell's measured RSRP and SINR, and the serving cell
//! id. Network events (power changes, station moves, SINR blackouts) are
//! applied at their scheduled times.

mod handover;
mod radio;
mod shadow;
mod trajectory;

pub use handover::{serving_cell_step, HandoverParams, HandoverState};
pub use radio::{dbm_to_mw, path_loss, rsrp_at, sinr_db, RadioParams, D0};
pub use shadow::ShadowField;
pub use trajectory::{reflect, Path, Trajectory};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BaseStation, CellId, Observation, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkEvent {
    /// New transmit power for `t >= at`.
    PowerChange {
        station: CellId,
        tx_power: f64,
        at: f64,
    },
    /// New station position for `t >= at`.
    StationMove {
        station: CellId,
        position: Vec<f64>,
        at: f64,
    },
    /// Reported SINR forced to 0 dB for UEs served by `station` during
    /// `start <= t < start + duration`.
    SinrBlackout {
        station: CellId,
        start: f64,
        duration: f64,
    },
}

impl NetworkEvent {
    pub fn station(&self) -> CellId {
        match self {
            NetworkEvent::PowerChange { station, .. }
            | NetworkEvent::StationMove { station, .. }
            | NetworkEvent::SinrBlackout { station, .. } => *station,
        }
    }

    /// Time at which the event takes effect.
    pub fn time(&self) -> f64 {
        match self {
            NetworkEvent::PowerChange { at, .. } | NetworkEvent::StationMove { at, .. } => *at,
            NetworkEvent::SinrBlackout { start, .. } => *start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub workspace: Workspace,
    pub stations: Vec<BaseStation>,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub handover: HandoverParams,
    #[serde(default)]
    pub trajectory: Trajectory,
    pub sample_rate: f64,
    pub duration: f64,
    #[serde(default)]
    pub events: Vec<NetworkEvent>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Checks the scenario. Stations may sit outside the workspace (the UE
    /// survey area); they must only have finite planar positions.
    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        if self.workspace.dim() != 2 {
            return Err(Error::config(
                "workspace",
                "the simulator supports planar workspaces only",
            ));
        }
        self.radio.validate()?;
        self.handover.validate()?;
        self.trajectory.validate()?;
        if self.stations.is_empty() {
            return Err(Error::config(
                "stations",
                "at least one station is required",
            ));
        }
        let mut ids = BTreeSet::new();
        for (k, s) in self.stations.iter().enumerate() {
            if !ids.insert(s.id) {
                return Err(Error::config(
                    format!("stations[{k}].id"),
                    format!("duplicate id {}", s.id),
                ));
            }
            if s.position.len() != 2 || s.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(
                    format!("stations[{k}].position"),
                    "need two finite coordinates",
                ));
            }
            if !s.tx_power.is_finite() {
                return Err(Error::config(
                    format!("stations[{k}].tx_power"),
                    "must be finite",
                ));
            }
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::config("scenario.sample_rate", "must be positive"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("scenario.duration", "must be positive"));
        }
        for (k, e) in self.events.iter().enumerate() {
            let key = format!("events[{k}]");
            if !ids.contains(&e.station()) {
                return Err(Error::config(
                    format!("{key}.station"),
                    format!("unknown station {}", e.station()),
                ));
            }
            let t = e.time();
            if !(0.0..=self.duration).contains(&t) {
                return Err(Error::config(
                    key,
                    format!("time {t} outside [0, duration]"),
                ));
            }
            match e {
                NetworkEvent::SinrBlackout { duration, .. } if !(*duration > 0.0) => {
                    return Err(Error::config(format!("{key}.duration"), "must be positive"));
                }
                NetworkEvent::StationMove { position, .. }
                    if position.len() != 2 || position.iter().any(|v| !v.is_finite()) =>
                {
                    return Err(Error::config(
                        format!("{key}.position"),
                        "need two finite coordinates",
                    ));
                }
                NetworkEvent::PowerChange { tx_power, .. } if !tx_power.is_finite() => {
                    return Err(Error::config(format!("{key}.tx_power"), "must be finite"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Number of samples emitted: `round(duration · sample_rate)`.
    pub fn sample_count(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// Time of sample `i`, rounded to microseconds so it survives the stream format.
    pub fn sample_time(&self, i: usize) -> f64 {
        (i as f64 / self.sample_rate * 1e6).round() / 1e6
    }
}

/// Noiseless ground truth at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Strongest station.
    pub cell: CellId,
    /// `[rsrp, sinr]` of that station.
    pub q: Vec<f64>,
}

/// Provenance record of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub duration: f64,
    pub sample_rate: f64,
    pub records: usize,
    pub events: Vec<NetworkEvent>,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    fields: Vec<ShadowField>,
    path: Path,
}

const FIELD_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
const NOISE_SEED_SALT: u64 = 0xD1B5_4A32_D192_ED03;

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let ws = &scenario.workspace;
        let lower = [ws.lower[0], ws.lower[1]];
        let upper = [ws.upper[0], ws.upper[1]];
        let fields = (0..scenario.stations.len())
            .map(|k| {
                ShadowField::generate(
                    scenario
                        .seed
                        .wrapping_add((k as u64 + 1).wrapping_mul(FIELD_SEED_STRIDE)),
                    lower,
                    upper,
                    scenario.radio.shadow_sigma,
                    scenario.radio.d_corr,
                )
            })
            .collect();
        let path = Path::new(&scenario.trajectory, ws, scenario.duration)?;
        Ok(Simulator {
            scenario: scenario.clone(),
            fields,
            path,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            seed: self.scenario.seed,
            duration: self.scenario.duration,
            sample_rate: self.scenario.sample_rate,
            records: self.scenario.sample_count(),
            events: self.scenario.events.clone(),
        }
    }

    /// Station positions and powers in effect at time `t`.
    pub fn stations_at(&self, t: f64) -> Vec<BaseStation> {
        let mut stations = self.scenario.stations.clone();
        // Events apply in time order; ties keep file order.
        let mut events: Vec<&NetworkEvent> = self.scenario.events.iter().collect();
        events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        for e in events {
            match e {
                NetworkEvent::PowerChange {
                    station,
                    tx_power,
                    at,
                } if t >= *at => {
                    if let Some(s) = stations.iter_mut().find(|s| s.id == *station) {
                        s.tx_power = *tx_power;
                    }
                }
                NetworkEvent::StationMove {
                    station,
                    position,
                    at,
                } if t >= *at => {
                    if let Some(s) = stations.iter_mut().find(|s| s.id == *station) {
                        s.position = position.clone();
                    }
                }
                _ => {}
            }
        }
        stations
    }

    fn blackout(&self, station: CellId, t: f64) -> bool {
        self.scenario.events.iter().any(|e| match e {
            NetworkEvent::SinrBlackout {
                station: s,
                start,
                duration,
            } => *s == station && t >= *start && t < start + duration,
            _ => false,
        })
    }

    /// Noiseless RSRP of every station at `x`, shadowing included.
    pub fn rsrp_all(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.stations_at(t)
            .iter()
            .zip(&self.fields)
            .map(|(s, f)| rsrp_at(x, &s.position, s.tx_power, f.at(x), &self.scenario.radio))
            .collect()
    }

    /// Max-RSRP serving cell and its noiseless quality at `x`, time `t`.
    pub fn truth_at(&self, x: &[f64], t: f64) -> Truth {
        let rsrp = self.rsrp_all(x, t);
        let mut best = 0;
        for (k, p) in rsrp.iter().enumerate() {
            if *p > rsrp[best] {
                best = k;
            }
        }
        Truth {
            cell: self.scenario.stations[best].id,
            q: vec![
                rsrp[best],
                sinr_db(best, &rsrp, self.scenario.radio.noise_floor),
            ],
        }
    }

    pub fn position_at(&self, t: f64) -> [f64; 2] {
        self.path.position_at(t)
    }

    /// Lazily generated observation stream.
    pub fn observations(&self) -> Observations<'_> {
        Observations {
            sim: self,
            index: 0,
            count: self.scenario.sample_count(),
            last_t: 0.0,
            handover: HandoverState::default(),
            rng: ChaCha8Rng::seed_from_u64(self.scenario.seed ^ NOISE_SEED_SALT),
        }
    }
}

pub struct Observations<'a> {
    sim: &'a Simulator,
    index: usize,
    count: usize,
    last_t: f64,
    handover: HandoverState,
    rng: ChaCha8Rng,
}

impl Iterator for Observations<'_> {
    type Item = Observation;

    fn next(&mut self) -> Option<Observation> {
        if self.index >= self.count {
            return None;
        }
        let sc = &self.sim.scenario;
        let t = sc.sample_time(self.index);
        let dt = t - self.last_t;
        self.index += 1;
        self.last_t = t;
        let x = self.sim.position_at(t);
        let truth = self.sim.rsrp_all(&x, t);
        let sigma = sc.radio.meas_noise;
        let measured: Vec<f64> = truth
            .iter()
            .map(|p| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                p + sigma * e
            })
            .collect();
        let serving = serving_cell_step(&mut self.handover, &measured, dt, &sc.handover);
        let e: f64 = StandardNormal.sample(&mut self.rng);
        let cell = sc.stations[serving].id;
        let sinr = if self.sim.blackout(cell, t) {
            0.0
        } else {
            sinr_db(serving, &truth, sc.radio.noise_floor) + sigma * e
        };
        Some(Observation {
            t,
            x: x.to_vec(),
            q: vec![measured[serving], sinr],
            cell,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.index;
        (left, Some(left))
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<Vec<Observation>> {
    Ok(Simulator::new(scenario)?.observations().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario {
            workspace: Workspace::new(vec![0.0, 0.0], vec![30.0, 20.0]).unwrap(),
            stations: vec![
                BaseStation {
                    id: 1,
                    position: vec![-15.0, 10.0],
                    tx_power: 30.0,
                },
                BaseStation {
                    id: 2,
                    position: vec![45.0, 10.0],
                    tx_power: 30.0,
                },
            ],
            radio: RadioParams::default(),
            handover: HandoverParams::default(),
            trajectory: Trajectory::Lawnmower {
                spacing: 5.0,
                speed: 3.0,
            },
            sample_rate: 20.0,
            duration: 10.0,
            events: vec![],
            seed: 7,
        }
    }

    #[test]
    fn sample_count_and_determinism() {
        let s = scenario();
        let a = run_scenario(&s).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a, run_scenario(&s).unwrap());
        assert_eq!(a[1].t, 0.05);
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(a, run_scenario(&other).unwrap());
    }

    #[test]
    fn power_change_applies_from_its_time() {
        let mut s = scenario();
        s.radio.shadow_sigma = 0.0;
        s.radio.meas_noise = 0.0;
        let base = run_scenario(&s).unwrap();
        s.events = vec![
            NetworkEvent::PowerChange {
                station: 1,
                tx_power: 20.0,
                at: 5.0,
            },
            NetworkEvent::PowerChange {
                station: 2,
                tx_power: 20.0,
                at: 5.0,
            },
        ];
        let changed = run_scenario(&s).unwrap();
        for (a, b) in base.iter().zip(&changed) {
            if a.t < 5.0 {
                assert_eq!(a, b);
            } else {
                assert!((a.q[0] - 10.0 - b.q[0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blackout_zeroes_serving_sinr() {
        let mut s = scenario();
        s.events = vec![NetworkEvent::SinrBlackout {
            station: 1,
            start: 2.0,
            duration: 3.0,
        }];
        for o in run_scenario(&s).unwrap() {
            let inside = o.t >= 2.0 && o.t < 5.0 && o.cell == 1;
            assert_eq!(o.q[1] == 0.0, inside, "{o:?}");
        }
    }

    #[test]
    fn symmetric_layout_hands_over_near_bisector() {
        let mut s = scenario();
        s.radio.shadow_sigma = 0.0;
        s.radio.meas_noise = 0.0;
        s.handover.time_to_trigger = 0.0;
        s.duration = 10.0;
        let stream = run_scenario(&s).unwrap();
        let switch = stream.windows(2).find(|w| w[0].cell != w[1].cell).unwrap();
        // The UE sweeps row y = 0; solve 25 log10(d1 / d2) = 3 by bisection.
        let margin = |x: f64| {
            let d1 = ((x + 15.0).powi(2) + 100.0).sqrt();
            let d2 = ((45.0 - x).powi(2) + 100.0).sqrt();
            25.0 * (d1 / d2).log10() - 3.0
        };
        let (mut lo, mut hi) = (15.0, 30.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if margin(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!(
            switch[0].x[1] == 0.0 && (switch[1].x[0] - lo).abs() < 0.2,
            "{switch:?} vs {lo}"
        );
        assert!(lo > 15.0);
    }

    #[test]
    fn truth_prefers_strongest_and_sinr_optimal() {
        let mut s = scenario();
        s.radio.shadow_sigma = 0.0;
        let sim = Simulator::new(&s).unwrap();
        let left = sim.truth_at(&[2.0, 10.0], 0.0);
        let right = sim.truth_at(&[28.0, 10.0], 0.0);
        assert_eq!((left.cell, right.cell), (1, 2));
        let rsrp = sim.rsrp_all(&[2.0, 10.0], 0.0);
        assert!(left.q[1] >= sinr_db(1, &rsrp, s.radio.noise_floor));
        // Single station: SINR is RSRP over the noise floor.
        let mut solo = s.clone();
        solo.stations.truncate(1);
        let sim = Simulator::new(&solo).unwrap();
        let t = sim.truth_at(&[5.0, 5.0], 0.0);
        assert!((t.q[1] - (t.q[0] - s.radio.noise_floor)).abs() < 1e-9);
    }

    #[test]
    fn validation_names_keys() {
        let mut s = scenario();
        s.stations[1].id = 1;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("stations[1].id"), "{err}");
        let mut s = scenario();
        s.events = vec![NetworkEvent::PowerChange {
            station: 1,
            tx_power: 0.0,
            at: 99.0,
        }];
        assert!(s.validate().unwrap_err().to_string().contains("events[0]"));
    }
}
