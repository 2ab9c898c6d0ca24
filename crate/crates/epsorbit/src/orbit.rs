//! Orbits of `g = id - f` tending to the fixed point 0.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::expr::{EvalError, Expression};

pub const DEFAULT_X_MIN: f64 = 1e-9;
pub const DEFAULT_N_MAX: usize = 5_000_000;

#[derive(Debug, Error)]
pub enum OrbitError {
    #[error("map is not contracting at step {step} (x = {x}): f(x) must stay in (0, x)")]
    NotContracting { step: usize, x: f64 },
    #[error("line {line}: cannot parse '{text}'")]
    Parse { line: usize, text: String },
    #[error("line {line}: points must be strictly decreasing")]
    NotDecreasing { line: usize },
    #[error("line {line}: points must be positive")]
    NonPositive { line: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Generated { f: String, x0: f64 },
    Imported { path: PathBuf },
    Crossings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    ReachedXMin,
    ReachedNMax,
    /// `f(x_n)` vanished at double precision; the iteration stalled.
    FixedPointHit,
    /// Imported or crossing data: whatever the producer stopped at.
    External,
}

/// A finite, strictly decreasing, positive orbit.
#[derive(Debug, Clone)]
pub struct Orbit {
    points: Vec<f64>,
    source: Source,
    truncation: Truncation,
    gaps_monotone: bool,
}

impl Orbit {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Whether the gap sequence `x_n - x_{n+1}` is non-increasing. Holds for
    /// every orbit generated from an increasing contraction.
    pub fn gaps_monotone(&self) -> bool {
        self.gaps_monotone
    }

    /// Iterate `x_{n+1} = x_n - f(x_n)` until `x <= x_min` or `n_max` points.
    ///
    /// `0 < f(x) < x` is first checked by sampling 1000 geometric points on
    /// `(0, x0]`, then again at every step taken.
    pub fn generate(
        f: &Expression,
        x0: f64,
        x_min: f64,
        n_max: usize,
    ) -> Result<Orbit, OrbitError> {
        assert!(x_min > 0.0 && x_min < x0, "need 0 < x_min < x0");
        sample_contraction(f, x0, x_min)?;
        let mut points = Vec::new();
        let mut gaps_monotone = true;
        let mut prev_gap = f64::INFINITY;
        let mut x = x0;
        points.push(x);
        let truncation = loop {
            if x <= x_min {
                break Truncation::ReachedXMin;
            }
            if points.len() >= n_max {
                break Truncation::ReachedNMax;
            }
            let fx = f.eval(x)?;
            if fx < 0.0 || fx > x {
                return Err(OrbitError::NotContracting {
                    step: points.len() - 1,
                    x,
                });
            }
            let next = x - fx;
            if next >= x || next <= 0.0 {
                // step stalled below one ulp of x, or landed exactly on 0
                break Truncation::FixedPointHit;
            }
            if fx > prev_gap {
                gaps_monotone = false;
            }
            prev_gap = fx;
            points.push(next);
            x = next;
        };
        Ok(Orbit {
            points,
            source: Source::Generated {
                f: f.to_string(),
                x0,
            },
            truncation,
            gaps_monotone,
        })
    }

    pub fn from_points(points: Vec<f64>, source: Source) -> Result<Orbit, OrbitError> {
        validate_points(&points)?;
        let gaps_monotone = gaps_are_monotone(&points);
        Ok(Orbit {
            points,
            source,
            truncation: Truncation::External,
            gaps_monotone,
        })
    }

    /// One positive decimal per line; `#` starts a comment line.
    pub fn import_csv(path: impl AsRef<Path>) -> Result<Orbit, OrbitError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut points = Vec::new();
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let v: f64 = text.parse().map_err(|_| OrbitError::Parse {
                line: line_no,
                text: text.to_string(),
            })?;
            // rejects NaN from the file as well
            if !v.is_finite() || v <= 0.0 {
                return Err(OrbitError::NonPositive { line: line_no });
            }
            if let Some(&prev) = points.last() {
                if v >= prev {
                    return Err(OrbitError::NotDecreasing { line: line_no });
                }
            }
            points.push(v);
        }
        if points.is_empty() {
            return Err(OrbitError::Parse {
                line: 0,
                text: "empty orbit file".into(),
            });
        }
        let gaps_monotone = gaps_are_monotone(&points);
        Ok(Orbit {
            points,
            source: Source::Imported {
                path: path.to_path_buf(),
            },
            truncation: Truncation::External,
            gaps_monotone,
        })
    }

    /// Shortest round-trip decimal formatting, one point per line.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<(), OrbitError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        for x in &self.points {
            writeln!(w, "{x}")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validate_points(points: &[f64]) -> Result<(), OrbitError> {
    if points.is_empty() {
        return Err(OrbitError::Parse {
            line: 0,
            text: "empty orbit".into(),
        });
    }
    for (i, &x) in points.iter().enumerate() {
        if !x.is_finite() || x <= 0.0 {
            return Err(OrbitError::NonPositive { line: i + 1 });
        }
        if i > 0 && x >= points[i - 1] {
            return Err(OrbitError::NotDecreasing { line: i + 1 });
        }
    }
    Ok(())
}

fn gaps_are_monotone(points: &[f64]) -> bool {
    points.windows(3).all(|w| w[0] - w[1] >= w[1] - w[2])
}

// The comparisons run in the value domain; a value that underflowed to 0 is
// re-examined through the (sign, ln) evaluation so flat maps deep in the
// domain still count as positive.
fn sample_contraction(f: &Expression, x0: f64, x_min: f64) -> Result<(), OrbitError> {
    let lo = x_min.min(x0 * 1e-6);
    let ratio = (x0 / lo).powf(1.0 / 999.0);
    let mut x = x0;
    for _ in 0..1000 {
        let fx = f.eval(x)?;
        // fx == 0 can be an underflowed positive; fx == x a sub-ulp
        // contraction. Both pass here; the iteration itself still rejects
        // maps that genuinely leave (0, x).
        let ok = if fx == 0.0 {
            f.eval_sign_ln(x)?.0 > 0
        } else {
            fx > 0.0 && fx <= x
        };
        if !ok {
            return Err(OrbitError::NotContracting { step: 0, x });
        }
        x /= ratio;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use approx::assert_relative_eq;

    #[test]
    fn geometric_orbit() {
        let f = parse("0.5*x").unwrap();
        let orbit = Orbit::generate(&f, 0.8, 1e-6, 1000).unwrap();
        assert_eq!(orbit.len(), 21);
        assert_relative_eq!(orbit.points()[1], 0.4, max_relative = 1e-14);
        assert_relative_eq!(orbit.points()[2], 0.2, max_relative = 1e-14);
        assert_eq!(orbit.truncation(), Truncation::ReachedXMin);
        assert!(orbit.gaps_monotone());
    }

    #[test]
    fn quadratic_orbit_prefix() {
        let f = parse("x^2").unwrap();
        let orbit = Orbit::generate(&f, 0.5, 1e-3, 10).unwrap();
        assert_relative_eq!(orbit.points()[1], 0.25, max_relative = 1e-14);
        assert_relative_eq!(orbit.points()[2], 0.1875, max_relative = 1e-14);
        assert_relative_eq!(orbit.points()[3], 0.15234375, max_relative = 1e-13);
        assert_eq!(orbit.truncation(), Truncation::ReachedNMax);
    }

    #[test]
    fn expanding_map_rejected() {
        let f = parse("2*x").unwrap();
        match Orbit::generate(&f, 0.5, 1e-6, 100) {
            Err(OrbitError::NotContracting { step: 0, .. }) => {}
            other => panic!("expected NotContracting, got {other:?}"),
        }
    }

    #[test]
    fn gaps_decrease_for_increasing_maps() {
        for src in ["x^2", "x^3", "x^2*(-log(x))"] {
            let f = parse(src).unwrap();
            let orbit = Orbit::generate(&f, 0.3, 1e-4, 200_000).unwrap();
            assert!(orbit.gaps_monotone(), "{src}");
        }
    }

    #[test]
    fn termination_for_power_maps() {
        // k = 2 reaches 1e-6 comfortably; the orbit of x^k decays like
        // n^(-1/(k-1)), so k = 3, 4 can only be driven to n_max here.
        let f = parse("x^2").unwrap();
        let orbit = Orbit::generate(&f, 0.5, 1e-6, 10_000_000).unwrap();
        assert_eq!(orbit.truncation(), Truncation::ReachedXMin);
        assert!(orbit.last() <= 1e-6);

        for src in ["x^3", "x^4"] {
            let f = parse(src).unwrap();
            let orbit = Orbit::generate(&f, 0.5, 1e-6, 50_000).unwrap();
            assert_eq!(orbit.truncation(), Truncation::ReachedNMax);
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("orbit.csv");
        std::fs::write(&good, "# comment\n0.8\n0.4\n0.2\n").unwrap();
        let orbit = Orbit::import_csv(&good).unwrap();
        assert_eq!(orbit.len(), 3);

        let out = dir.path().join("out.csv");
        orbit.export_csv(&out).unwrap();
        let back = Orbit::import_csv(&out).unwrap();
        assert_eq!(back.points(), orbit.points());

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "0.4\n0.8\n").unwrap();
        assert!(matches!(
            Orbit::import_csv(&bad),
            Err(OrbitError::NotDecreasing { line: 2 })
        ));

        std::fs::write(&bad, "0.4\n-1\n").unwrap();
        assert!(matches!(
            Orbit::import_csv(&bad),
            Err(OrbitError::NonPositive { line: 2 })
        ));

        std::fs::write(&bad, "0.4\nnot-a-number\n").unwrap();
        assert!(matches!(
            Orbit::import_csv(&bad),
            Err(OrbitError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn export_is_full_precision() {
        let f = parse("x^2*(-log(x))").unwrap();
        let orbit = Orbit::generate(&f, 0.02, 1e-4, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        orbit.export_csv(&path).unwrap();
        let back = Orbit::import_csv(&path).unwrap();
        for (a, b) in orbit.points().iter().zip(back.points()) {
            assert_eq!(a, b);
        }
    }
}
