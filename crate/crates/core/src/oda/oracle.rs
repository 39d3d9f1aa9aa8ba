//! Batch fixed-point iteration of the annealing optimality conditions on an
//! empirical measure. Used as an independent check of the online recursion.

use crate::divergence::{bregman, DivergenceKind};
use crate::error::{Error, Result};
use crate::types::{CellId, ObservationVector};

const DISPLACEMENT_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 10_000;

/// Which association rule the iteration alternates with the mean update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// `p(μ_i|z) ∝ exp(-(1-λ)/λ · d)`.
    Plain,
    /// `p(μ_i|z) ∝ p(μ_i) exp(-(1-λ)/λ · d)` with `p(μ_i)` re-estimated each
    /// sweep; the fixed point the online recursion tracks.
    MassWeighted,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub mus: Vec<Vec<f64>>,
    pub labels: Vec<CellId>,
    pub masses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Free energy after every sweep (plain or mass-weighted form, matching the mode).
    pub energy_trace: Vec<f64>,
}

fn associations(
    batch: &[ObservationVector],
    mus: &[Vec<f64>],
    labels: &[CellId],
    masses: Option<&[f64]>,
    lambda: f64,
    div: &DivergenceKind,
) -> Result<Vec<Vec<f64>>> {
    let beta = (1.0 - lambda) / lambda;
    let mut out = Vec::with_capacity(batch.len());
    for z in batch {
        let mut logits = vec![f64::NEG_INFINITY; mus.len()];
        let mut max = f64::NEG_INFINITY;
        for (i, (mu, label)) in mus.iter().zip(labels).enumerate() {
            if *label != z.label {
                continue;
            }
            let prior = masses.map_or(0.0, |m| m[i].ln());
            if prior == f64::NEG_INFINITY {
                continue;
            }
            logits[i] = prior - beta * bregman(div, &z.z, mu)?;
            max = max.max(logits[i]);
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::Unassignable(z.label));
        }
        let mut total = 0.0;
        for l in &mut logits {
            *l = if l.is_finite() { (*l - max).exp() } else { 0.0 };
            total += *l;
        }
        logits.iter_mut().for_each(|l| *l /= total);
        out.push(logits);
    }
    Ok(out)
}

/// `F = (1-λ) D − λ H` on the empirical measure with plain Gibbs
/// associations (the association entropy term; `H(Z)` is constant).
pub fn free_energy(
    batch: &[ObservationVector],
    mus: &[Vec<f64>],
    labels: &[CellId],
    lambda: f64,
    div: &DivergenceKind,
) -> Result<f64> {
    let p = associations(batch, mus, labels, None, lambda, div)?;
    let n = batch.len() as f64;
    let (mut distortion, mut entropy) = (0.0, 0.0);
    for (z, pz) in batch.iter().zip(&p) {
        for (i, pi) in pz.iter().enumerate() {
            if *pi > 0.0 {
                distortion += pi * bregman(div, &z.z, &mus[i])?;
                entropy -= pi * pi.ln();
            }
        }
    }
    Ok((1.0 - lambda) * distortion / n - lambda * entropy / n)
}

/// `−λ · mean_z log Σ_i p(μ_i) exp(-(1-λ)/λ · d(z, μ_i))`, the objective
/// decreased by the mass-weighted sweep.
pub fn mass_weighted_free_energy(
    batch: &[ObservationVector],
    mus: &[Vec<f64>],
    labels: &[CellId],
    masses: &[f64],
    lambda: f64,
    div: &DivergenceKind,
) -> Result<f64> {
    let beta = (1.0 - lambda) / lambda;
    let mut acc = 0.0;
    for z in batch {
        let mut terms = Vec::new();
        for ((mu, label), m) in mus.iter().zip(labels).zip(masses) {
            if *label == z.label && *m > 0.0 {
                terms.push(m.ln() - beta * bregman(div, &z.z, mu)?);
            }
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Unassignable(z.label));
        }
        acc += max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    }
    Ok(-lambda * acc / batch.len() as f64)
}

/// Alternates associations and conditional means until no codevector moves
/// more than 1e-10, or 10 000 sweeps pass (then `converged` is false).
pub fn fixed_point_oracle(
    batch: &[ObservationVector],
    lambda: f64,
    initial: &[(Vec<f64>, CellId)],
    div: &DivergenceKind,
    mode: OracleMode,
) -> Result<OracleResult> {
    if batch.is_empty() {
        return Err(Error::config("oracle.batch", "batch must not be empty"));
    }
    if initial.is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut mus: Vec<Vec<f64>> = initial.iter().map(|(m, _)| m.clone()).collect();
    let labels: Vec<CellId> = initial.iter().map(|(_, l)| *l).collect();
    let mut masses = vec![1.0 / mus.len() as f64; mus.len()];
    let n = batch.len() as f64;
    let dim = mus[0].len();
    let mut energy_trace = Vec::new();

    for iteration in 1..=MAX_ITERATIONS {
        let prior = matches!(mode, OracleMode::MassWeighted).then_some(masses.as_slice());
        let p = associations(batch, &mus, &labels, prior, lambda, div)?;
        let mut displacement: f64 = 0.0;
        for i in 0..mus.len() {
            let weight: f64 = p.iter().map(|pz| pz[i]).sum();
            masses[i] = weight / n;
            if weight <= 0.0 {
                continue;
            }
            let mut next = vec![0.0; dim];
            for (z, pz) in batch.iter().zip(&p) {
                for (acc, v) in next.iter_mut().zip(&z.z) {
                    *acc += pz[i] * v;
                }
            }
            next.iter_mut().for_each(|v| *v /= weight);
            let moved = next
                .iter()
                .zip(&mus[i])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            displacement = displacement.max(moved);
            mus[i] = next;
        }
        energy_trace.push(match mode {
            OracleMode::Plain => free_energy(batch, &mus, &labels, lambda, div)?,
            OracleMode::MassWeighted => {
                mass_weighted_free_energy(batch, &mus, &labels, &masses, lambda, div)?
            }
        });
        if displacement < DISPLACEMENT_TOL {
            return Ok(OracleResult {
                mus,
                labels,
                masses,
                iterations: iteration,
                converged: true,
                energy_trace,
            });
        }
    }
    Ok(OracleResult {
        mus,
        labels,
        masses,
        iterations: MAX_ITERATIONS,
        converged: false,
        energy_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ov(z: &[f64], label: CellId) -> ObservationVector {
        ObservationVector {
            z: z.to_vec(),
            label,
        }
    }

    #[test]
    fn high_temperature_collapses_to_mean() {
        let batch = [ov(&[-1.0], 1), ov(&[1.0], 1)];
        let div = DivergenceKind::unit(1);
        for mode in [OracleMode::Plain, OracleMode::MassWeighted] {
            let r =
                fixed_point_oracle(&batch, 0.99, &[(vec![-0.3], 1), (vec![0.2], 1)], &div, mode)
                    .unwrap();
            assert!(r.converged);
            for mu in &r.mus {
                assert!(mu[0].abs() < 1e-8, "{mu:?}");
            }
        }
    }

    #[test]
    fn singleton_batch() {
        let div = DivergenceKind::unit(2);
        let r = fixed_point_oracle(
            &[ov(&[0.3, 0.7], 1)],
            0.5,
            &[(vec![0.0, 0.0], 1)],
            &div,
            OracleMode::MassWeighted,
        )
        .unwrap();
        assert_eq!(r.mus[0], vec![0.3, 0.7]);
    }

    #[test]
    fn low_temperature_recovers_cluster_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut batch = Vec::new();
        let (mut sum_a, mut sum_b) = (0.0, 0.0);
        for i in 0..200 {
            let centre = if i % 2 == 0 { 0.2 } else { 0.8 };
            let v = centre + rng.random_range(-0.05..0.05);
            if i % 2 == 0 {
                sum_a += v;
            } else {
                sum_b += v;
            }
            batch.push(ov(&[v], 1));
        }
        let div = DivergenceKind::unit(1);
        let r = fixed_point_oracle(
            &batch,
            0.002,
            &[(vec![0.1], 1), (vec![0.9], 1)],
            &div,
            OracleMode::Plain,
        )
        .unwrap();
        assert!((r.mus[0][0] - sum_a / 100.0).abs() < 1e-9);
        assert!((r.mus[1][0] - sum_b / 100.0).abs() < 1e-9);
    }

    #[test]
    fn free_energy_closed_form() {
        // F = -λ mean log Σ exp(-β d) for plain associations.
        let batch = [ov(&[0.0], 1), ov(&[1.0], 1), ov(&[0.4], 1)];
        let mus = vec![vec![0.1], vec![0.8]];
        let labels = [1, 1];
        let lambda: f64 = 0.4;
        let beta = (1.0 - lambda) / lambda;
        let expected = -lambda
            * batch
                .iter()
                .map(|z| {
                    mus.iter()
                        .map(|m| (-beta * (z.z[0] - m[0]).powi(2)).exp())
                        .sum::<f64>()
                        .ln()
                })
                .sum::<f64>()
            / 3.0;
        let f = free_energy(&batch, &mus, &labels, lambda, &DivergenceKind::unit(1)).unwrap();
        assert!((f - expected).abs() < 1e-12);
    }

    #[test]
    fn energy_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch: Vec<_> = (0..60)
            .map(|i| {
                let c = [0.2, 0.5, 0.85][i % 3];
                ov(
                    &[c + rng.random_range(-0.1..0.1), rng.random_range(0.0..1.0)],
                    (i % 2) as u32,
                )
            })
            .collect();
        let init = [
            (vec![0.1, 0.1], 0),
            (vec![0.9, 0.2], 0),
            (vec![0.5, 0.9], 1),
            (vec![0.4, 0.3], 1),
        ];
        let div = DivergenceKind::unit(2);
        for mode in [OracleMode::Plain, OracleMode::MassWeighted] {
            let r = fixed_point_oracle(&batch, 0.05, &init, &div, mode).unwrap();
            for w in r.energy_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{mode:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let div = DivergenceKind::unit(1);
        assert!(fixed_point_oracle(&[], 0.5, &[(vec![0.0], 1)], &div, OracleMode::Plain).is_err());
    }
}
