//! The runtime hybrid twin: Voronoi regions over position prototypes, a
//! constant quality model per region, first-order filters that track both, and
//! per-mode additive corrections for temporary cell faults.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::divergence::weighted_sq;
use crate::error::{Error, Result};
use crate::oda::Codevector;
use crate::types::{quality_part, spatial_part, CellId, FeatureBounds, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    /// Gain of the prototype position filters (1/s).
    pub gamma_rho: f64,
    /// Gain of the quality filters and of the correction state (1/s).
    pub gamma_n: f64,
    /// Correction window `T` (s).
    pub window: f64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            gamma_rho: 1.0,
            gamma_n: 1.0,
            window: 3.0,
        }
    }
}

impl TwinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_rho > 0.0 && self.gamma_rho.is_finite()) {
            return Err(Error::config("twin.gamma_rho", "must be positive"));
        }
        if !(self.gamma_n > 0.0 && self.gamma_n.is_finite()) {
            return Err(Error::config("twin.gamma_n", "must be positive"));
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(Error::config("twin.window", "must be positive"));
        }
        Ok(())
    }
}

/// Exact solution of `ẋ = γ (target − x)` over `dt`.
#[inline]
pub fn filter_step(x: f64, target: f64, gamma: f64, dt: f64) -> f64 {
    target + (x - target) * (-gamma * dt).exp()
}

/// Temporary additive correction of one mode's quality model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTerm {
    pub mode: CellId,
    pub t_k: f64,
    pub window: f64,
    /// Observed minus modelled quality, normalized units.
    pub residual: Vec<f64>,
    /// Filtered contribution added to predictions while active.
    pub state: Vec<f64>,
}

impl CorrectionTerm {
    pub fn is_active(&self, t: f64) -> bool {
        t <= self.t_k + self.window
    }

    pub fn expires_at(&self) -> f64 {
        self.t_k + self.window
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FilterState {
    id: u64,
    rho: Vec<f64>,
    q: Vec<f64>,
}

impl FilterState {
    fn at(c: &Codevector, d: usize) -> Self {
        FilterState {
            id: c.id,
            rho: spatial_part(&c.mu, d).to_vec(),
            q: quality_part(&c.mu, d).to_vec(),
        }
    }
}

/// One grid sample of the evaluated twin.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub x: Vec<f64>,
    pub mode: CellId,
    pub region: usize,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridNdtModel {
    pub codevectors: Vec<Codevector>,
    pub bounds: FeatureBounds,
    pub config: TwinConfig,
    filters: Vec<FilterState>,
    corrections: Vec<CorrectionTerm>,
    time: f64,
}

impl HybridNdtModel {
    pub fn new(
        codevectors: Vec<Codevector>,
        bounds: FeatureBounds,
        config: TwinConfig,
    ) -> Result<Self> {
        bounds.validate()?;
        config.validate()?;
        let dim = bounds.d() + bounds.l();
        if let Some(c) = codevectors.iter().find(|c| c.mu.len() != dim) {
            return Err(Error::LengthMismatch {
                expected: dim,
                got: c.mu.len(),
            });
        }
        let d = bounds.d();
        let filters = codevectors.iter().map(|c| FilterState::at(c, d)).collect();
        Ok(HybridNdtModel {
            codevectors,
            bounds,
            config,
            filters,
            corrections: Vec::new(),
            time: 0.0,
        })
    }

    pub fn k(&self) -> usize {
        self.codevectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codevectors.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn corrections(&self) -> &[CorrectionTerm] {
        &self.corrections
    }

    /// Replaces the codevector set. Filter states follow codevector ids; new
    /// ids start at their own prototype.
    pub fn sync(&mut self, codevectors: &[Codevector]) {
        let d = self.bounds.d();
        let mut old = std::mem::take(&mut self.filters);
        self.filters = codevectors
            .iter()
            .map(|c| match old.iter().position(|f| f.id == c.id) {
                Some(i) => old.swap_remove(i),
                None => FilterState::at(c, d),
            })
            .collect();
        self.codevectors = codevectors.to_vec();
    }

    /// Index of the Voronoi region containing `x` (physical units).
    pub fn region_of(&self, x: &[f64]) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::EmptyModel);
        }
        let d = self.bounds.d();
        if x.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let z = self.bounds.normalize_position(x);
        let w = self.bounds.spatial_weights();
        let mut best = (f64::INFINITY, 0);
        for (j, c) in self.codevectors.iter().enumerate() {
            let dist = weighted_sq(&w, &z, spatial_part(&c.mu, d));
            if dist < best.0 {
                best = (dist, j);
            }
        }
        Ok(best.1)
    }

    pub fn mode_of(&self, x: &[f64]) -> Result<CellId> {
        Ok(self.codevectors[self.region_of(x)?].label)
    }

    /// The distinct mode labels carried by the codevectors.
    pub fn modes(&self) -> BTreeSet<CellId> {
        self.codevectors.iter().map(|c| c.label).collect()
    }

    /// Region indices whose label is `mode`.
    pub fn regions_of_mode(&self, mode: CellId) -> Vec<usize> {
        (0..self.k())
            .filter(|&j| self.codevectors[j].label == mode)
            .collect()
    }

    /// Learned constant model `Q̄_j` in physical units.
    pub fn local_model(&self, region: usize) -> Vec<f64> {
        let d = self.bounds.d();
        self.bounds
            .denormalize_quality(quality_part(&self.codevectors[region].mu, d))
    }

    /// Filtered position prototype of `region`, physical units.
    pub fn rho_filter(&self, region: usize) -> Vec<f64> {
        self.bounds.denormalize_position(&self.filters[region].rho)
    }

    pub fn active_correction(&self, mode: CellId) -> Option<&CorrectionTerm> {
        self.corrections
            .iter()
            .find(|c| c.mode == mode && c.is_active(self.time))
    }

    /// Filtered prediction at the current time, corrections included.
    pub fn predict_quality(&self, x: &[f64]) -> Result<Vec<f64>> {
        let region = self.region_of(x)?;
        let mut q = self.filters[region].q.clone();
        if let Some(c) = self.active_correction(self.codevectors[region].label) {
            for (v, s) in q.iter_mut().zip(&c.state) {
                *v += s;
            }
        }
        Ok(self.bounds.denormalize_quality(&q))
    }

    /// Equilibrium prediction `Q̄_{region_of(x)}`, ignoring filters and corrections.
    pub fn steady_prediction(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.local_model(self.region_of(x)?))
    }

    /// Advances all filters by `dt` seconds.
    pub fn step_filters(&mut self, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        let d = self.bounds.d();
        let (g_rho, g_n) = (self.config.gamma_rho, self.config.gamma_n);
        for (f, c) in self.filters.iter_mut().zip(&self.codevectors) {
            for (x, t) in f.rho.iter_mut().zip(spatial_part(&c.mu, d)) {
                *x = filter_step(*x, *t, g_rho, dt);
            }
            for (x, t) in f.q.iter_mut().zip(quality_part(&c.mu, d)) {
                *x = filter_step(*x, *t, g_n, dt);
            }
        }
        self.time += dt;
        for c in &mut self.corrections {
            for (x, t) in c.state.iter_mut().zip(&c.residual) {
                *x = filter_step(*x, *t, g_n, dt);
            }
        }
    }

    /// Steps filters to absolute time `t` and drops expired corrections,
    /// returning them.
    pub fn advance_to(&mut self, t: f64) -> Vec<CorrectionTerm> {
        self.step_filters(t - self.time);
        let now = self.time;
        let (active, expired): (Vec<_>, Vec<_>) = std::mem::take(&mut self.corrections)
            .into_iter()
            .partition(|c| c.is_active(now));
        self.corrections = active;
        expired
    }

    fn residual_for(&self, obs: &Observation) -> Result<Vec<f64>> {
        let region = self.region_of(&obs.x)?;
        let d = self.bounds.d();
        let observed = self.bounds.normalize_quality(&obs.q);
        Ok(observed
            .iter()
            .zip(quality_part(&self.codevectors[region].mu, d))
            .map(|(o, m)| o - m)
            .collect())
    }

    /// Starts (or refreshes) the correction of `mode` at time `t_k` with the
    /// residual of `observed` against the learned model.
    pub fn activate_correction(
        &mut self,
        mode: CellId,
        t_k: f64,
        observed: &Observation,
    ) -> Result<()> {
        if !self.modes().contains(&mode) {
            return Err(Error::Domain(format!(
                "mode {mode} is not part of the model"
            )));
        }
        let residual = self.residual_for(observed)?;
        let window = self.config.window;
        match self.corrections.iter_mut().find(|c| c.mode == mode) {
            Some(c) => {
                c.t_k = t_k;
                c.residual = residual;
                c.window = window;
            }
            None => self.corrections.push(CorrectionTerm {
                mode,
                t_k,
                window,
                state: vec![0.0; residual.len()],
                residual,
            }),
        }
        Ok(())
    }

    /// Refreshes the residual of an active correction from a same-mode observation.
    pub fn refresh_correction(&mut self, obs: &Observation) -> Result<bool> {
        if self.active_correction(obs.cell).is_none() {
            return Ok(false);
        }
        let residual = self.residual_for(obs)?;
        if let Some(c) = self.corrections.iter_mut().find(|c| c.mode == obs.cell) {
            c.residual = residual;
        }
        Ok(true)
    }

    /// Residual of a correction in physical units.
    pub fn residual_physical(&self, c: &CorrectionTerm) -> Vec<f64> {
        self.bounds.scale_quality_delta(&c.residual)
    }

    /// Steady-state mode map and predictions on an `nx × ny` grid of cell
    /// centres spanning the feature bounds; row-major with x varying fastest.
    pub fn evaluate_grid(&self, nx: usize, ny: usize) -> Result<Vec<GridPoint>> {
        if self.bounds.d() != 2 {
            return Err(Error::Domain(
                "grid evaluation needs a planar workspace".into(),
            ));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::config("grid_res", "resolution must be positive"));
        }
        let (lo, hi) = (&self.bounds.x_min, &self.bounds.x_max);
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = vec![
                    lo[0] + (i as f64 + 0.5) / nx as f64 * (hi[0] - lo[0]),
                    lo[1] + (j as f64 + 0.5) / ny as f64 * (hi[1] - lo[1]),
                ];
                let region = self.region_of(&x)?;
                out.push(GridPoint {
                    mode: self.codevectors[region].label,
                    q: self.local_model(region),
                    region,
                    x,
                });
            }
        }
        Ok(out)
    }
}
