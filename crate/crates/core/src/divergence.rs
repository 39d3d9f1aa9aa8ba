//! Bregman divergences and the class-constrained dissimilarity.
//!
//! The class-constrained form returns `f64::INFINITY` across labels. Gibbs
//! weights `exp(-(1-λ)/λ · d)` with `λ < 1` then evaluate to exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CellId;

/// Tolerance on the simplex constraint for the KL divergence.
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceKind {
    /// `Σ w_k (a_k − b_k)²`.
    WeightedSquaredEuclidean { weights: Vec<f64> },
    /// `Σ a_k ln(a_k / b_k)` on the probability simplex.
    KullbackLeibler,
}

impl DivergenceKind {
    pub fn euclidean(weights: Vec<f64>) -> Self {
        DivergenceKind::WeightedSquaredEuclidean { weights }
    }

    pub fn unit(len: usize) -> Self {
        Self::euclidean(vec![1.0; len])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DivergenceKind::WeightedSquaredEuclidean { weights } => {
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || !weights.iter().any(|w| *w > 0.0)
                {
                    return Err(Error::config(
                        "divergence.weights",
                        "weights must be finite, nonnegative and not all zero",
                    ));
                }
                Ok(())
            }
            DivergenceKind::KullbackLeibler => Ok(()),
        }
    }
}

pub fn bregman(kind: &DivergenceKind, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    match kind {
        DivergenceKind::WeightedSquaredEuclidean { weights } => {
            if weights.len() != a.len() {
                return Err(Error::LengthMismatch {
                    expected: weights.len(),
                    got: a.len(),
                });
            }
            Ok(weighted_sq(weights, a, b))
        }
        DivergenceKind::KullbackLeibler => {
            check_simplex(a)?;
            check_simplex(b)?;
            let d: f64 = a.iter().zip(b).map(|(p, q)| p * (p / q).ln()).sum();
            // Rounding can leave a tiny negative residue when a ≈ b.
            Ok(d.max(0.0))
        }
    }
}

/// Unchecked weighted squared Euclidean distance for hot loops.
#[inline]
pub fn weighted_sq(weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
    weights
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| {
            let diff = x - y;
            w * diff * diff
        })
        .sum()
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Domain(
            "KL divergence needs strictly positive components".into(),
        ));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!(
            "KL divergence needs points on the simplex (sum = {s})"
        )));
    }
    Ok(())
}

/// `d(a, b)` when the labels agree, `+∞` otherwise.
pub fn class_constrained(
    kind: &DivergenceKind,
    a: &[f64],
    ca: CellId,
    b: &[f64],
    cb: CellId,
) -> Result<f64> {
    let d = bregman(kind, a, b)?;
    Ok(if ca == cb { d } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_hand_values() {
        let unit = DivergenceKind::unit(2);
        assert_eq!(bregman(&unit, &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        assert_eq!(bregman(&unit, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        let w = DivergenceKind::euclidean(vec![2.0, 1.0]);
        assert_eq!(bregman(&w, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn class_constraint() {
        let unit = DivergenceKind::unit(1);
        assert_eq!(class_constrained(&unit, &[0.5], 1, &[0.5], 1).unwrap(), 0.0);
        assert_eq!(
            class_constrained(&unit, &[0.5], 1, &[0.1], 2).unwrap(),
            f64::INFINITY
        );
        assert_eq!(class_constrained(&unit, &[1.0], 3, &[0.0], 3).unwrap(), 1.0);
        // The sentinel annihilates a Gibbs weight without producing NaN.
        let lambda: f64 = 0.3;
        let w = (-(1.0 - lambda) / lambda * f64::INFINITY).exp();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn errors() {
        let unit = DivergenceKind::unit(2);
        assert!(matches!(
            bregman(&unit, &[0.0], &[0.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        let kl = DivergenceKind::KullbackLeibler;
        assert!(matches!(
            bregman(&kl, &[0.0, 1.0], &[0.5, 0.5]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            bregman(&kl, &[0.2, 0.2], &[0.5, 0.5]),
            Err(Error::Domain(_))
        ));
        assert!(DivergenceKind::euclidean(vec![0.0, 0.0])
            .validate()
            .is_err());
        assert!(DivergenceKind::euclidean(vec![1.0, -1.0])
            .validate()
            .is_err());
    }

    #[test]
    fn kl_is_asymmetric() {
        let kl = DivergenceKind::KullbackLeibler;
        let a = [0.7, 0.2, 0.1];
        let b = [0.2, 0.3, 0.5];
        let ab = bregman(&kl, &a, &b).unwrap();
        let ba = bregman(&kl, &b, &a).unwrap();
        assert!((ab - ba).abs() > 1e-3);
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn euclidean_nonneg_symmetric_identity(
            a in prop::collection::vec(-5.0..5.0f64, 4),
            b in prop::collection::vec(-5.0..5.0f64, 4),
            w in prop::collection::vec(0.01..3.0f64, 4),
        ) {
            let k = DivergenceKind::euclidean(w);
            let ab = bregman(&k, &a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, bregman(&k, &b, &a).unwrap());
            prop_assert_eq!(bregman(&k, &a, &a).unwrap(), 0.0);
            if a != b {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn kl_nonneg_identity(
            a in prop::collection::vec(0.01..1.0f64, 3),
            b in prop::collection::vec(0.01..1.0f64, 3),
        ) {
            let (a, b) = (simplex(&a), simplex(&b));
            let k = DivergenceKind::KullbackLeibler;
            prop_assert!(bregman(&k, &a, &b).unwrap() >= 0.0);
            prop_assert!(bregman(&k, &a, &a).unwrap() <= 1e-15);
        }

        #[test]
        fn voronoi_cells_are_convex(
            protos in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 2), 2..6),
            p in prop::collection::vec(0.0..1.0f64, 2),
            q in prop::collection::vec(0.0..1.0f64, 2),
            w in prop::collection::vec(0.1..3.0f64, 2),
        ) {
            let k = DivergenceKind::euclidean(w);
            let cell = |x: &[f64]| {
                let mut best = (f64::INFINITY, 0usize);
                for (i, c) in protos.iter().enumerate() {
                    let d = bregman(&k, x, c).unwrap();
                    if d < best.0 { best = (d, i); }
                }
                best.1
            };
            if cell(&p) == cell(&q) {
                let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
                prop_assert_eq!(cell(&mid), cell(&p));
            }
        }
    }
}
