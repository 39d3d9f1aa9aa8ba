//! Spatially correlated log-normal shadowing on a regular grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Zero-mean Gaussian field with separable correlation
/// `exp(-|Δx|/d_corr) · exp(-|Δy|/d_corr)`, sampled on a grid of spacing
/// `d_corr / 4` and bilinearly interpolated between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowField {
    origin: [f64; 2],
    spacing: f64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl ShadowField {
    /// Field identically zero.
    pub fn zero() -> Self {
        ShadowField {
            origin: [0.0, 0.0],
            spacing: 1.0,
            nx: 1,
            ny: 1,
            values: vec![0.0],
        }
    }

    pub fn generate(seed: u64, lower: [f64; 2], upper: [f64; 2], sigma: f64, d_corr: f64) -> Self {
        if sigma == 0.0 {
            return Self::zero();
        }
        let spacing = d_corr / 4.0;
        let nx = ((upper[0] - lower[0]) / spacing).ceil() as usize + 2;
        let ny = ((upper[1] - lower[1]) / spacing).ceil() as usize + 2;
        let rho: f64 = (-spacing / d_corr).exp();
        let edge = (1.0 - rho * rho).sqrt();
        let inner = 1.0 - rho * rho;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let e: f64 = StandardNormal.sample(&mut rng);
                g[j * nx + i] = match (i, j) {
                    (0, 0) => e,
                    (_, 0) => rho * g[i - 1] + edge * e,
                    (0, _) => rho * g[(j - 1) * nx] + edge * e,
                    _ => {
                        rho * g[j * nx + i - 1] + rho * g[(j - 1) * nx + i]
                            - rho * rho * g[(j - 1) * nx + i - 1]
                            + inner * e
                    }
                };
            }
        }
        for v in &mut g {
            *v *= sigma;
        }
        ShadowField {
            origin: lower,
            spacing,
            nx,
            ny,
            values: g,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Node values, row-major with x varying fastest.
    pub fn nodes(&self) -> &[f64] {
        &self.values
    }

    /// Bilinear interpolation; positions beyond the grid use the edge values.
    pub fn at(&self, x: &[f64]) -> f64 {
        if self.values.len() == 1 {
            return self.values[0];
        }
        let u = ((x[0] - self.origin[0]) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let v = ((x[1] - self.origin[1]) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let i = (u.floor() as usize).min(self.nx - 2);
        let j = (v.floor() as usize).min(self.ny - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let at = |i: usize, j: usize| self.values[j * self.nx + i];
        (1.0 - fu) * (1.0 - fv) * at(i, j)
            + fu * (1.0 - fv) * at(i + 1, j)
            + (1.0 - fu) * fv * at(i, j + 1)
            + fu * fv * at(i + 1, j + 1)
    }
}
