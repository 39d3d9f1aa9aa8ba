//! Domain types shared by every module: workspace geometry, base stations,
//! raw observations and the normalized augmented vector `z = [x; q]` the
//! learner operates on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque cell identifier (one per base station).
pub type CellId = u32;

/// Index of the quality component carrying RSRP (dBm).
pub const RSRP: usize = 0;
/// Index of the quality component carrying SINR (dB).
pub const SINR: usize = 1;

/// Axis-aligned box in which agents and stations live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Workspace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let ws = Workspace { lower, upper };
        ws.validate()?;
        Ok(ws)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() {
            return Err(Error::config("workspace", "dimension must be at least 1"));
        }
        if self.lower.len() != self.upper.len() {
            return Err(Error::config(
                "workspace.upper",
                "lower and upper must have the same dimension",
            ));
        }
        for (k, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(
                    format!("workspace.upper[{k}]"),
                    format!("need lower < upper, got {lo} and {hi}"),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn extent(&self) -> Vec<f64> {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(hi, lo)| hi - lo)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStation {
    pub id: CellId,
    pub position: Vec<f64>,
    /// Transmit power in dBm.
    pub tx_power: f64,
}

/// One timestamped UE measurement: position, quality vector and serving cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub x: Vec<f64>,
    /// Quality components, `[rsrp, sinr]` by default.
    pub q: Vec<f64>,
    pub cell: CellId,
}

impl Observation {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.q.iter().all(|v| v.is_finite())
    }
}

/// Min-max ranges used to map observations into the unit box, plus the block
/// weights applied to the spatial and quality parts of the divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub w_x: f64,
    pub w_q: f64,
}

impl FeatureBounds {
    /// Spatial bounds taken from the workspace, quality bounds given explicitly,
    /// unit block weights.
    pub fn from_workspace(ws: &Workspace, q_min: Vec<f64>, q_max: Vec<f64>) -> Self {
        FeatureBounds {
            x_min: ws.lower.clone(),
            x_max: ws.upper.clone(),
            q_min,
            q_max,
            w_x: 1.0,
            w_q: 1.0,
        }
    }

    /// Spatial dimension `d`.
    pub fn d(&self) -> usize {
        self.x_min.len()
    }

    /// Number of quality components `l`.
    pub fn l(&self) -> usize {
        self.q_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_min.len() != self.x_max.len() || self.x_min.is_empty() {
            return Err(Error::config("features.x_max", "spatial bounds malformed"));
        }
        if self.q_min.len() != self.q_max.len() || self.q_min.is_empty() {
            return Err(Error::config("features.q_max", "quality bounds malformed"));
        }
        let pairs = self
            .x_min
            .iter()
            .zip(&self.x_max)
            .map(|p| ("features.x", p))
            .chain(
                self.q_min
                    .iter()
                    .zip(&self.q_max)
                    .map(|p| ("features.q", p)),
            );
        for (key, (lo, hi)) in pairs {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(
                    key,
                    format!("need min < max, got {lo} and {hi}"),
                ));
            }
        }
        if !(self.w_x >= 0.0 && self.w_q >= 0.0) || self.w_x + self.w_q <= 0.0 {
            return Err(Error::config(
                "features.w_x",
                "block weights must be nonnegative and not all zero",
            ));
        }
        Ok(())
    }

    /// Per-component divergence weights `[w_x; …; w_q; …]`.
    pub fn component_weights(&self) -> Vec<f64> {
        std::iter::repeat_n(self.w_x, self.d())
            .chain(std::iter::repeat_n(self.w_q, self.l()))
            .collect()
    }

    /// Weights restricted to the spatial block, used for region lookup.
    pub fn spatial_weights(&self) -> Vec<f64> {
        vec![self.w_x.max(f64::MIN_POSITIVE); self.d()]
    }

    pub fn normalize_position(&self, x: &[f64]) -> Vec<f64> {
        affine_to_unit(x, &self.x_min, &self.x_max)
    }

    pub fn normalize_quality(&self, q: &[f64]) -> Vec<f64> {
        affine_to_unit(q, &self.q_min, &self.q_max)
    }

    pub fn denormalize_position(&self, z: &[f64]) -> Vec<f64> {
        affine_from_unit(z, &self.x_min, &self.x_max)
    }

    pub fn denormalize_quality(&self, z: &[f64]) -> Vec<f64> {
        affine_from_unit(z, &self.q_min, &self.q_max)
    }

    /// Converts a quality difference (no offset) from normalized to physical units.
    pub fn scale_quality_delta(&self, dz: &[f64]) -> Vec<f64> {
        dz.iter()
            .zip(self.q_min.iter().zip(&self.q_max))
            .map(|(v, (lo, hi))| v * (hi - lo))
            .collect()
    }

    pub fn unscale_quality_delta(&self, dq: &[f64]) -> Vec<f64> {
        dq.iter()
            .zip(self.q_min.iter().zip(&self.q_max))
            .map(|(v, (lo, hi))| v / (hi - lo))
            .collect()
    }
}

fn affine_to_unit(v: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
        .collect()
}

fn affine_from_unit(z: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(lo.iter().zip(hi))
        .map(|(z, (lo, hi))| lo + z * (hi - lo))
        .collect()
}

/// Normalized augmented observation `z = [x; q]` with its cell label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub z: Vec<f64>,
    pub label: CellId,
}

impl ObservationVector {
    /// Soft range check: components should stay within `[-0.1, 1.1]`.
    pub fn out_of_range(&self) -> bool {
        self.z.iter().any(|v| !(-0.1..=1.1).contains(v))
    }
}

pub fn normalize(obs: &Observation, bounds: &FeatureBounds) -> Result<ObservationVector> {
    if !obs.is_finite() {
        return Err(Error::RejectedRecord(format!(
            "non-finite component in observation at t={}",
            obs.t
        )));
    }
    if obs.x.len() != bounds.d() {
        return Err(Error::LengthMismatch {
            expected: bounds.d(),
            got: obs.x.len(),
        });
    }
    if obs.q.len() != bounds.l() {
        return Err(Error::LengthMismatch {
            expected: bounds.l(),
            got: obs.q.len(),
        });
    }
    let mut z = bounds.normalize_position(&obs.x);
    z.extend(bounds.normalize_quality(&obs.q));
    Ok(ObservationVector { z, label: obs.cell })
}

/// Inverse of [`normalize`]; the time stamp is not part of `z` and is supplied.
pub fn denormalize(v: &ObservationVector, t: f64, bounds: &FeatureBounds) -> Observation {
    let d = bounds.d();
    Observation {
        t,
        x: bounds.denormalize_position(spatial_part(&v.z, d)),
        q: bounds.denormalize_quality(quality_part(&v.z, d)),
        cell: v.label,
    }
}

/// First `d` components of an augmented vector (the position block).
pub fn spatial_part(z: &[f64], d: usize) -> &[f64] {
    &z[..d]
}

/// Components after the first `d` (the quality block).
pub fn quality_part(z: &[f64], d: usize) -> &[f64] {
    &z[d..]
}

/// What to do with observations whose position falls outside the workspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfBoundsPolicy {
    #[default]
    Clamp,
    Reject,
}

/// Stream validation: finiteness, nondecreasing time and workspace bounds.
#[derive(Debug, Clone)]
pub struct ObservationValidator {
    workspace: Workspace,
    policy: OutOfBoundsPolicy,
    last_t: Option<f64>,
    pub clamped: u64,
}

impl ObservationValidator {
    pub fn new(workspace: Workspace, policy: OutOfBoundsPolicy) -> Self {
        ObservationValidator {
            workspace,
            policy,
            last_t: None,
            clamped: 0,
        }
    }

    pub fn check(&mut self, mut obs: Observation) -> Result<Observation> {
        if !obs.is_finite() {
            return Err(Error::RejectedRecord(format!(
                "non-finite component at t={}",
                obs.t
            )));
        }
        if let Some(prev) = self.last_t {
            if obs.t < prev {
                return Err(Error::RejectedRecord(format!(
                    "time went backwards: {} after {prev}",
                    obs.t
                )));
            }
        }
        if !self.workspace.contains(&obs.x) {
            match self.policy {
                OutOfBoundsPolicy::Clamp => {
                    self.workspace.clamp(&mut obs.x);
                    self.clamped += 1;
                    if self.clamped == 1 {
                        log::warn!("observation at t={} clamped into the workspace", obs.t);
                    }
                }
                OutOfBoundsPolicy::Reject => {
                    return Err(Error::RejectedRecord(format!(
                        "position {:?} outside the workspace at t={}",
                        obs.x, obs.t
                    )));
                }
            }
        }
        self.last_t = Some(obs.t);
        Ok(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bounds() -> FeatureBounds {
        FeatureBounds {
            x_min: vec![0.0, -5.0],
            x_max: vec![30.0, 15.0],
            q_min: vec![-80.0, -10.0],
            q_max: vec![-30.0, 30.0],
            w_x: 1.0,
            w_q: 1.0,
        }
    }

    fn obs(x: Vec<f64>, q: Vec<f64>) -> Observation {
        Observation {
            t: 0.0,
            x,
            q,
            cell: 1,
        }
    }

    #[test]
    fn bounds_map_to_unit_corners() {
        let b = bounds();
        let lo = normalize(&obs(b.x_min.clone(), b.q_min.clone()), &b).unwrap();
        assert_eq!(lo.z, vec![0.0; 4]);
        let hi = normalize(&obs(b.x_max.clone(), b.q_max.clone()), &b).unwrap();
        assert_eq!(hi.z, vec![1.0; 4]);
        assert_eq!(hi.label, 1);
    }

    #[test]
    fn non_finite_is_rejected() {
        let err = normalize(&obs(vec![1.0, f64::NAN], vec![-50.0, 3.0]), &bounds());
        assert!(matches!(err, Err(Error::RejectedRecord(_))));
    }

    #[test]
    fn parts_split_and_rejoin() {
        let z = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spatial_part(&z, 2), &[1.0, 2.0]);
        assert_eq!(quality_part(&z, 2), &[3.0, 4.0]);
        assert_eq!(
            [spatial_part(&z, 2), quality_part(&z, 2)].concat(),
            z.to_vec()
        );
    }

    #[test]
    fn argmin_is_invariant_under_compensated_rescaling() {
        // Doubling the spatial range halves normalized offsets; weights x4 compensate.
        let b1 = bounds();
        let mut b2 = bounds();
        b2.x_max = vec![60.0, 35.0];
        b2.w_x = 4.0;
        let protos = [
            obs(vec![3.0, 2.0], vec![-40.0, 12.0]),
            obs(vec![20.0, 9.0], vec![-55.0, 2.0]),
            obs(vec![11.0, -1.0], vec![-62.0, 20.0]),
        ];
        let probes = [
            obs(vec![5.0, 1.0], vec![-45.0, 10.0]),
            obs(vec![15.0, 5.0], vec![-60.0, 5.0]),
            obs(vec![10.0, 0.0], vec![-58.0, 18.0]),
            obs(vec![25.0, 14.0], vec![-35.0, 0.0]),
        ];
        let argmin = |b: &FeatureBounds, p: &Observation| {
            let w = b.component_weights();
            let zp = normalize(p, b).unwrap().z;
            let mut best = (f64::INFINITY, 0);
            for (i, c) in protos.iter().enumerate() {
                let zc = normalize(c, b).unwrap().z;
                let d: f64 = (0..4).map(|k| w[k] * (zp[k] - zc[k]).powi(2)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        };
        for p in &probes {
            assert_eq!(argmin(&b1, p), argmin(&b2, p));
        }
    }

    #[test]
    fn validator_clamps_or_rejects() {
        let ws = Workspace::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let mut clamp = ObservationValidator::new(ws.clone(), OutOfBoundsPolicy::Clamp);
        let o = clamp
            .check(obs(vec![-1.0, 11.0], vec![-50.0, 3.0]))
            .unwrap();
        assert_eq!(o.x, vec![0.0, 10.0]);
        assert_eq!(clamp.clamped, 1);

        let mut reject = ObservationValidator::new(ws, OutOfBoundsPolicy::Reject);
        assert!(reject
            .check(obs(vec![-1.0, 5.0], vec![-50.0, 3.0]))
            .is_err());
        let mut later = obs(vec![1.0, 1.0], vec![-50.0, 3.0]);
        later.t = 2.0;
        reject.check(later).unwrap();
        assert!(reject.check(obs(vec![1.0, 1.0], vec![-50.0, 3.0])).is_err());
    }

    #[test]
    fn workspace_rejects_inverted_bounds() {
        assert!(Workspace::new(vec![0.0, 5.0], vec![1.0, 4.0]).is_err());
        assert!(Workspace::new(vec![], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trips(
            x0 in -10.0..40.0f64, x1 in -10.0..20.0f64,
            q0 in -120.0..0.0f64, q1 in -20.0..40.0f64,
        ) {
            let b = bounds();
            let o = Observation { t: 1.5, x: vec![x0, x1], q: vec![q0, q1], cell: 2 };
            let back = denormalize(&normalize(&o, &b).unwrap(), o.t, &b);
            prop_assert_eq!(back.cell, 2);
            for (a, e) in back.x.iter().chain(&back.q).zip(o.x.iter().chain(&o.q)) {
                prop_assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0));
            }
        }
    }
}
