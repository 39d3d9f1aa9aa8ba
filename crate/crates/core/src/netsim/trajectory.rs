//! UE mobility: boustrophedon sweeps and random waypoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Workspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    /// Rows along x starting at the lower-left corner, `spacing` apart in y;
    /// at the last row the sweep retraces its path.
    Lawnmower { spacing: f64, speed: f64 },
    /// Straight legs between uniformly drawn waypoints.
    RandomWaypoint { speed: f64, seed: u64 },
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory::Lawnmower {
            spacing: 5.0,
            speed: 1.0,
        }
    }
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let (speed, spacing) = match self {
            Trajectory::Lawnmower { spacing, speed } => (*speed, Some(*spacing)),
            Trajectory::RandomWaypoint { speed, .. } => (*speed, None),
        };
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::config("trajectory.speed", "must be nonnegative"));
        }
        if let Some(s) = spacing {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("trajectory.spacing", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Folds a coordinate back into `[lo, hi]` by mirror reflection.
pub fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut u = (v - lo).rem_euclid(2.0 * w);
    if u > w {
        u = 2.0 * w - u;
    }
    lo + u
}

/// A trajectory resolved into a polyline parametrised by time.
#[derive(Debug, Clone)]
pub struct Path {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    speed: f64,
    retrace: bool,
    lower: [f64; 2],
    upper: [f64; 2],
}

impl Path {
    pub fn new(trajectory: &Trajectory, ws: &Workspace, duration: f64) -> Result<Self> {
        trajectory.validate()?;
        if ws.dim() != 2 {
            return Err(Error::config(
                "workspace",
                "the simulator supports planar workspaces only",
            ));
        }
        let lower = [ws.lower[0], ws.lower[1]];
        let upper = [ws.upper[0], ws.upper[1]];
        let (points, speed, retrace) = match trajectory {
            Trajectory::Lawnmower { spacing, speed } => {
                let mut rows = Vec::new();
                let mut y = lower[1];
                while y < upper[1] - 1e-9 {
                    rows.push(y);
                    y += spacing;
                }
                rows.push(upper[1]);
                let mut pts = Vec::with_capacity(rows.len() * 2);
                for (k, y) in rows.iter().enumerate() {
                    let (a, b) = if k % 2 == 0 {
                        (lower[0], upper[0])
                    } else {
                        (upper[0], lower[0])
                    };
                    pts.push([a, *y]);
                    pts.push([b, *y]);
                }
                (pts, *speed, true)
            }
            Trajectory::RandomWaypoint { speed, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut draw = || {
                    [
                        rng.random_range(lower[0]..=upper[0]),
                        rng.random_range(lower[1]..=upper[1]),
                    ]
                };
                let needed = speed * duration;
                let mut pts = vec![draw()];
                let mut length = 0.0;
                while length <= needed {
                    let next = draw();
                    let last = pts[pts.len() - 1];
                    length += ((next[0] - last[0]).powi(2) + (next[1] - last[1]).powi(2)).sqrt();
                    pts.push(next);
                }
                (pts, *speed, false)
            }
        };
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let seg = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative[cumulative.len() - 1] + seg);
        }
        Ok(Path {
            points,
            cumulative,
            speed,
            retrace,
            lower,
            upper,
        })
    }

    pub fn length(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    pub fn position_at(&self, t: f64) -> [f64; 2] {
        let total = self.length();
        let mut s = self.speed * t;
        if total <= 0.0 {
            s = 0.0;
        } else if self.retrace {
            s = s.rem_euclid(2.0 * total);
            if s > total {
                s = 2.0 * total - s;
            }
        } else {
            s = s.min(total);
        }
        let k = self
            .cumulative
            .partition_point(|c| *c <= s)
            .clamp(1, self.points.len().max(2) - 1);
        let (a, b) = (
            self.points[k - 1],
            self.points.get(k).copied().unwrap_or(self.points[k - 1]),
        );
        let seg = self.cumulative.get(k).copied().unwrap_or(total) - self.cumulative[k - 1];
        let f = if seg > 0.0 {
            (s - self.cumulative[k - 1]) / seg
        } else {
            0.0
        };
        [
            reflect(a[0] + f * (b[0] - a[0]), self.lower[0], self.upper[0]),
            reflect(a[1] + f * (b[1] - a[1]), self.lower[1], self.upper[1]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws() -> Workspace {
        Workspace::new(vec![0.0, 0.0], vec![10.0, 4.0]).unwrap()
    }

    #[test]
    fn lawnmower_rows() {
        let t = Trajectory::Lawnmower {
            spacing: 2.0,
            speed: 1.0,
        };
        let p = Path::new(&t, &ws(), 100.0).unwrap();
        assert_eq!(p.length(), 3.0 * 10.0 + 2.0 * 2.0);
        assert_eq!(p.position_at(0.0), [0.0, 0.0]);
        assert_eq!(p.position_at(5.0), [5.0, 0.0]);
        assert_eq!(p.position_at(11.0), [10.0, 1.0]);
        assert_eq!(p.position_at(14.0), [8.0, 2.0]);
        // Retraces after the last row.
        assert_eq!(p.position_at(34.0), [10.0, 4.0]);
        assert_eq!(p.position_at(35.0), [9.0, 4.0]);
        assert_eq!(p.position_at(68.0), [0.0, 0.0]);
    }

    #[test]
    fn random_waypoint_stays_inside() {
        let t = Trajectory::RandomWaypoint {
            speed: 2.0,
            seed: 5,
        };
        let p = Path::new(&t, &ws(), 60.0).unwrap();
        let q = Path::new(&t, &ws(), 60.0).unwrap();
        for i in 0..1200 {
            let x = p.position_at(i as f64 * 0.05);
            assert!(ws().contains(&x));
            assert_eq!(x, q.position_at(i as f64 * 0.05));
        }
        assert!(p.length() >= 120.0);
    }

    #[test]
    fn reflection() {
        assert_eq!(reflect(11.0, 0.0, 10.0), 9.0);
        assert_eq!(reflect(-2.0, 0.0, 10.0), 2.0);
        assert_eq!(reflect(5.0, 0.0, 10.0), 5.0);
        assert_eq!(reflect(23.0, 0.0, 10.0), 3.0);
    }

    #[test]
    fn stationary_ue() {
        let t = Trajectory::Lawnmower {
            spacing: 2.0,
            speed: 0.0,
        };
        let p = Path::new(&t, &ws(), 10.0).unwrap();
        assert_eq!(p.position_at(7.0), [0.0, 0.0]);
    }
}
