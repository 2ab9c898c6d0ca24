//! Length of ε-neighborhoods of orbits: nucleus/tail decomposition over an
//! ε-grid, cross-checked by an interval-union sweep.
//!
//! For a strictly decreasing orbit and a radius ε, the tail is the union of
//! the pairwise disjoint intervals around points whose following gap exceeds
//! 2ε; the nucleus is everything below the first point whose gap is ≤ 2ε
//! (ties join the nucleus). With `n_ε` the separating index,
//!
//! ```text
//! |N_ε| = x_{n_ε} + ε,   |T_ε| = 2ε·n_ε,   |A_ε| = |N_ε| + |T_ε|.
//! ```
//!
//! The nucleus convention treats the accumulation at 0 as filling
//! `[0, x_{n_ε} + ε]`. The `exact` column is the length of
//! `∪ [x_n - ε, x_n + ε] ∪ [0, x_last + ε]`, computed by a descending merge
//! sweep clipped at 0, so it accounts for the unmaterialized remainder of the
//! orbit the same way. The bare interval union without that closure is
//! exposed as [`exact_union_length`] (it is the natural oracle for fully
//! materialized finite point sets).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expression;
use crate::orbit::{Orbit, OrbitError};

#[derive(Debug, Error)]
pub enum NeighborhoodError {
    #[error("orbit too short for epsilon = {epsilon}: final gap exceeds 2*epsilon")]
    OrbitTooShort { epsilon: f64 },
    #[error("bad grid: {0}")]
    InvalidGrid(String),
    #[error("gap sequence is not monotone at step {step}; lazy profiling needs a monotone map")]
    NonMonotoneGaps { step: usize },
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error("bad profile data: {0}")]
    Format(String),
}

/// Geometric ε-grid, descending from `eps_max` to `eps_min`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    pub eps_max: f64,
    pub eps_min: f64,
    pub points_per_decade: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            eps_max: 1e-2,
            eps_min: 1e-9,
            points_per_decade: 8,
        }
    }
}

impl GridSpec {
    pub fn new(eps_max: f64, eps_min: f64, points_per_decade: usize) -> GridSpec {
        GridSpec {
            eps_max,
            eps_min,
            points_per_decade,
        }
    }

    pub fn epsilons(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let floor = self.eps_min * (1.0 - 1e-9);
        for j in 0.. {
            let eps = self.eps_max * 10f64.powf(-(j as f64) / self.points_per_decade as f64);
            if eps < floor {
                break;
            }
            out.push(eps);
            if self.eps_max == self.eps_min {
                break;
            }
        }
        out
    }

    fn check(&self) -> Result<(), NeighborhoodError> {
        if !(self.eps_min > 0.0 && self.eps_max >= self.eps_min) {
            return Err(NeighborhoodError::InvalidGrid(
                "need 0 < eps_min <= eps_max".into(),
            ));
        }
        if self.points_per_decade == 0 {
            return Err(NeighborhoodError::InvalidGrid(
                "points_per_decade must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One ε-row of a profile.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfileRow {
    pub epsilon: f64,
    pub total: f64,
    pub nucleus: f64,
    pub tail: f64,
    pub n_eps: usize,
    pub exact: f64,
}

/// Table of ε-neighborhood lengths over a geometric grid (rows descend in ε).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonProfile {
    pub grid: GridSpec,
    pub x0: Option<f64>,
    pub rows: Vec<ProfileRow>,
}

/// Single-ε decomposition of an orbit's neighborhood length.
#[derive(Debug, Clone, Copy)]
pub struct LengthBreakdown {
    pub nucleus: f64,
    pub tail: f64,
    pub n_eps: usize,
    pub total: f64,
    pub exact: f64,
}

/// Length of `∪ [max(x - eps, 0), x + eps]` for a strictly decreasing list.
pub fn exact_union_length(points: &[f64], eps: f64) -> f64 {
    assert!(eps > 0.0);
    let mut committed = 0.0;
    let mut open: Option<(f64, f64)> = None;
    for &x in points {
        let (a, b) = ((x - eps).max(0.0), x + eps);
        match open {
            None => open = Some((a, b)),
            Some((lo, hi)) => {
                if b >= lo {
                    open = Some((a.min(lo), hi));
                } else {
                    committed += hi - lo;
                    open = Some((a, b));
                }
            }
        }
    }
    if let Some((lo, hi)) = open {
        committed += hi - lo;
    }
    committed
}

struct RowState {
    eps: f64,
    committed: f64,
    open_lo: f64,
    open_hi: f64,
    tail_count: usize,
    frozen: Option<ProfileRow>,
}

impl RowState {
    fn new(eps: f64) -> RowState {
        RowState {
            eps,
            committed: 0.0,
            open_lo: 0.0,
            open_hi: 0.0,
            tail_count: 0,
            frozen: None,
        }
    }

    fn start(&mut self, x0: f64) {
        self.open_lo = (x0 - self.eps).max(0.0);
        self.open_hi = x0 + self.eps;
    }

    /// Advance by the next point `x` (previous point `prev`, index `idx - 1`).
    /// Freezes the paper columns the first time a gap is ≤ 2ε.
    fn push(&mut self, prev: f64, x: f64, idx: usize) {
        let eps = self.eps;
        if self.frozen.is_none() && prev - x <= 2.0 * eps {
            let n_eps = idx - 1;
            let nucleus = prev + eps;
            let tail = 2.0 * eps * n_eps as f64;
            self.frozen = Some(ProfileRow {
                epsilon: eps,
                total: nucleus + tail,
                nucleus,
                tail,
                n_eps,
                // every deeper interval merges into the open segment and the
                // closure [0, x_last + eps] caps it at 0
                exact: self.committed + self.open_hi,
            });
        }
        // keep sweeping (needed when gaps are not monotone)
        let (a, b) = ((x - eps).max(0.0), x + eps);
        if b >= self.open_lo {
            self.open_lo = a.min(self.open_lo);
        } else {
            self.committed += self.open_hi - self.open_lo;
            self.open_lo = a;
            self.open_hi = b;
            if self.frozen.is_none() {
                self.tail_count += 1;
            }
        }
    }

    fn finish(&self, last: f64) -> Option<ProfileRow> {
        match self.frozen {
            Some(mut row) => {
                // exact over the full materialized orbit with the closure to 0
                row.exact = self.committed + self.open_hi.max(last + self.eps);
                Some(row)
            }
            None => None,
        }
    }
}

/// `length_at` for one ε; see the module docs for conventions.
pub fn length_at(orbit: &Orbit, eps: f64) -> Result<LengthBreakdown, NeighborhoodError> {
    assert!(eps > 0.0);
    let points = orbit.points();
    let mut row = RowState::new(eps);
    row.start(points[0]);
    for i in 1..points.len() {
        row.push(points[i - 1], points[i], i);
    }
    match row.finish(*points.last().unwrap()) {
        Some(r) => Ok(LengthBreakdown {
            nucleus: r.nucleus,
            tail: r.tail,
            n_eps: r.n_eps,
            total: r.total,
            exact: r.exact,
        }),
        None => Err(NeighborhoodError::OrbitTooShort { epsilon: eps }),
    }
}

/// Input to [`profile`]: a materialized orbit, or a map extended lazily until
/// every row resolves (chunked so deep ε never stores the whole orbit).
pub enum ProfileInput<'a> {
    Orbit(&'a Orbit),
    Map {
        f: &'a Expression,
        x0: f64,
        x_min: f64,
        n_max: usize,
    },
}

const LAZY_CHUNK: usize = 100_000;

pub fn profile(
    input: ProfileInput<'_>,
    grid: GridSpec,
) -> Result<EpsilonProfile, NeighborhoodError> {
    grid.check()?;
    match input {
        ProfileInput::Orbit(orbit) => profile_orbit(orbit, grid),
        ProfileInput::Map {
            f,
            x0,
            x_min,
            n_max,
        } => profile_map(f, x0, x_min, n_max, grid),
    }
}

fn make_rows(grid: &GridSpec, x0: f64) -> Result<Vec<RowState>, NeighborhoodError> {
    if grid.eps_max >= x0 {
        return Err(NeighborhoodError::InvalidGrid(format!(
            "eps_max = {} must be below x0 = {x0}",
            grid.eps_max
        )));
    }
    let mut rows: Vec<RowState> = grid.epsilons().into_iter().map(RowState::new).collect();
    for r in &mut rows {
        r.start(x0);
    }
    Ok(rows)
}

fn collect_rows(
    rows: Vec<RowState>,
    last: f64,
    grid: GridSpec,
    x0: f64,
) -> Result<EpsilonProfile, NeighborhoodError> {
    let mut out = Vec::with_capacity(rows.len());
    for r in &rows {
        match r.finish(last) {
            Some(row) => out.push(row),
            None => return Err(NeighborhoodError::OrbitTooShort { epsilon: r.eps }),
        }
    }
    Ok(EpsilonProfile {
        grid,
        x0: Some(x0),
        rows: out,
    })
}

fn profile_orbit(orbit: &Orbit, grid: GridSpec) -> Result<EpsilonProfile, NeighborhoodError> {
    let points = orbit.points();
    let mut rows = make_rows(&grid, points[0])?;
    for i in 1..points.len() {
        for r in &mut rows {
            r.push(points[i - 1], points[i], i);
        }
    }
    collect_rows(rows, *points.last().unwrap(), grid, points[0])
}

fn profile_map(
    f: &Expression,
    x0: f64,
    x_min: f64,
    n_max: usize,
    grid: GridSpec,
) -> Result<EpsilonProfile, NeighborhoodError> {
    let mut rows = make_rows(&grid, x0)?;
    // all rows share the point stream; freeze in descending-ε order
    let mut first_undone = 0usize;
    let mut prev = x0;
    let mut prev_gap = f64::INFINITY;
    let mut idx = 0usize;
    'outer: while first_undone < rows.len() {
        // generate one chunk of further iterates
        let mut chunk = Vec::with_capacity(LAZY_CHUNK);
        let mut x = prev;
        for _ in 0..LAZY_CHUNK {
            if x <= x_min || idx + chunk.len() + 1 >= n_max {
                break;
            }
            let fx = f.eval(x).map_err(OrbitError::from)?;
            if fx < 0.0 || fx > x {
                return Err(OrbitError::NotContracting {
                    step: idx + chunk.len(),
                    x,
                }
                .into());
            }
            if fx > prev_gap {
                return Err(NeighborhoodError::NonMonotoneGaps {
                    step: idx + chunk.len(),
                });
            }
            prev_gap = fx;
            let next = x - fx;
            if next >= x || next <= 0.0 {
                break;
            }
            chunk.push(next);
            x = next;
        }
        if chunk.is_empty() {
            break 'outer;
        }
        for &x in &chunk {
            idx += 1;
            for r in rows[first_undone..].iter_mut() {
                r.push(prev, x, idx);
            }
            prev = x;
            while first_undone < rows.len() && rows[first_undone].frozen.is_some() {
                first_undone += 1;
            }
            if first_undone == rows.len() {
                break 'outer;
            }
        }
    }
    if first_undone < rows.len() {
        return Err(NeighborhoodError::OrbitTooShort {
            epsilon: rows[first_undone].eps,
        });
    }
    let mut out = Vec::with_capacity(rows.len());
    for r in &rows {
        out.push(r.frozen.expect("all rows frozen"));
    }
    Ok(EpsilonProfile {
        grid,
        x0: Some(x0),
        rows: out,
    })
}

impl EpsilonProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,total,nucleus,tail,n_eps,exact\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epsilon, r.total, r.nucleus, r.tail, r.n_eps, r.exact
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<EpsilonProfile, NeighborhoodError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| NeighborhoodError::Format("empty profile".into()))?;
        if header.trim() != "epsilon,total,nucleus,tail,n_eps,exact" {
            return Err(NeighborhoodError::Format(format!(
                "unexpected header '{header}'"
            )));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(NeighborhoodError::Format(format!(
                    "row {}: expected 6 columns",
                    i + 2
                )));
            }
            let num = |j: usize| -> Result<f64, NeighborhoodError> {
                cols[j].trim().parse().map_err(|_| {
                    NeighborhoodError::Format(format!("row {}: bad number '{}'", i + 2, cols[j]))
                })
            };
            rows.push(ProfileRow {
                epsilon: num(0)?,
                total: num(1)?,
                nucleus: num(2)?,
                tail: num(3)?,
                n_eps: cols[4].trim().parse().map_err(|_| {
                    NeighborhoodError::Format(format!("row {}: bad count '{}'", i + 2, cols[4]))
                })?,
                exact: num(5)?,
            });
        }
        if rows.is_empty() {
            return Err(NeighborhoodError::Format("no rows".into()));
        }
        let eps_max = rows[0].epsilon;
        let eps_min = rows.last().unwrap().epsilon;
        let ppd = if rows.len() > 1 {
            let decades = (eps_max / eps_min).log10();
            ((rows.len() - 1) as f64 / decades).round() as usize
        } else {
            1
        };
        Ok(EpsilonProfile {
            grid: GridSpec::new(eps_max, eps_min, ppd.max(1)),
            x0: None,
            rows,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<EpsilonProfile, NeighborhoodError> {
        serde_json::from_str(text).map_err(|e| NeighborhoodError::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::orbit::Source;
    use approx::assert_relative_eq;

    fn halving_orbit() -> Orbit {
        let f = parse("0.5*x").unwrap();
        Orbit::generate(&f, 0.8, 1e-6, 1000).unwrap()
    }

    #[test]
    fn length_at_examples() {
        let orbit = halving_orbit();
        let b = length_at(&orbit, 0.3).unwrap();
        assert_eq!(b.n_eps, 0);
        assert_relative_eq!(b.nucleus, 1.1, max_relative = 1e-12);
        assert_relative_eq!(b.tail, 0.0);

        let b = length_at(&orbit, 0.05).unwrap();
        assert_eq!(b.n_eps, 2);
        assert_relative_eq!(b.nucleus, 0.25, max_relative = 1e-12);
        assert_relative_eq!(b.tail, 0.2, max_relative = 1e-12);
        assert_relative_eq!(b.total, 0.45, max_relative = 1e-12);
        assert_relative_eq!(b.exact, 0.45, max_relative = 1e-12);
    }

    #[test]
    fn single_point_orbit() {
        let orbit = Orbit::from_points(vec![0.5], Source::Crossings).unwrap();
        assert!(matches!(
            length_at(&orbit, 0.1),
            Err(NeighborhoodError::OrbitTooShort { .. })
        ));
        assert_relative_eq!(exact_union_length(&[0.5], 0.1), 0.2, max_relative = 1e-15);
    }

    #[test]
    fn orbit_too_short_for_deep_epsilon() {
        let orbit = halving_orbit();
        // final gap is ~ 4e-7, so eps = 1e-9 cannot resolve
        assert!(matches!(
            length_at(&orbit, 1e-9),
            Err(NeighborhoodError::OrbitTooShort { .. })
        ));
    }

    #[test]
    fn grid_row_counts() {
        let g = GridSpec::new(1e-2, 1e-8, 4);
        assert_eq!(g.epsilons().len(), 25);
        let g = GridSpec::new(1e-3, 1e-3, 8);
        assert_eq!(g.epsilons().len(), 1);
    }

    #[test]
    fn profile_of_quadratic_map() {
        let f = parse("x^2").unwrap();
        let grid = GridSpec::new(1e-2, 1e-8, 4);
        let p = profile(
            ProfileInput::Map {
                f: &f,
                x0: 0.4,
                x_min: 1e-12,
                n_max: 5_000_000,
            },
            grid,
        )
        .unwrap();
        assert_eq!(p.rows.len(), 25);
        // Theorem band at eps = 1e-6: |A| comparable to sqrt(eps)
        let row = p
            .rows
            .iter()
            .min_by(|a, b| {
                (a.epsilon - 1e-6)
                    .abs()
                    .partial_cmp(&(b.epsilon - 1e-6).abs())
                    .unwrap()
            })
            .unwrap();
        assert!(
            row.total > 0.5e-3 && row.total < 5e-3,
            "total {}",
            row.total
        );
        // row invariants
        for r in &p.rows {
            assert_relative_eq!(r.total, r.nucleus + r.tail, max_relative = 1e-12);
            assert!(r.total <= 0.4 + 2.0 * r.epsilon);
            assert!(r.total >= r.epsilon);
            assert!((r.exact - r.total).abs() <= 2.0 * r.epsilon);
        }
        // n_eps non-increasing in eps (rows descend in eps)
        for w in p.rows.windows(2) {
            assert!(w[1].n_eps >= w[0].n_eps);
        }
    }

    #[test]
    fn profile_matches_fixed_orbit_path() {
        let f = parse("x^2").unwrap();
        let orbit = Orbit::generate(&f, 0.4, 1e-5, 1_000_000).unwrap();
        let grid = GridSpec::new(1e-2, 1e-4, 6);
        let from_orbit = profile(ProfileInput::Orbit(&orbit), grid).unwrap();
        let from_map = profile(
            ProfileInput::Map {
                f: &f,
                x0: 0.4,
                x_min: 1e-5,
                n_max: 1_000_000,
            },
            grid,
        )
        .unwrap();
        for (a, b) in from_orbit.rows.iter().zip(&from_map.rows) {
            assert_eq!(a.n_eps, b.n_eps);
            assert_relative_eq!(a.total, b.total, max_relative = 1e-13);
            assert_relative_eq!(a.exact, b.exact, max_relative = 1e-13);
        }
    }

    #[test]
    fn linear_case_band() {
        let f = parse("0.5*x").unwrap();
        let grid = GridSpec::new(1e-3, 1e-9, 8);
        let p = profile(
            ProfileInput::Map {
                f: &f,
                x0: 0.8,
                x_min: 1e-30,
                n_max: 10_000,
            },
            grid,
        )
        .unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for r in &p.rows {
            let v = r.total / (r.epsilon * (-r.epsilon.ln()));
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(hi / lo <= 3.0, "band [{lo}, {hi}]");
    }

    #[test]
    fn scaling_sanity() {
        let f = parse("x^2").unwrap();
        let orbit = Orbit::generate(&f, 0.4, 1e-4, 100_000).unwrap();
        for c in [0.5, 0.25, 0.125] {
            let scaled: Vec<f64> = orbit.points().iter().map(|x| c * x).collect();
            for eps in [1e-2, 1e-3, 2.5e-4] {
                let a = exact_union_length(orbit.points(), eps);
                let b = exact_union_length(&scaled, c * eps);
                assert_eq!(b, c * a, "c={c} eps={eps}");
            }
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let f = parse("x^2").unwrap();
        let grid = GridSpec::new(1e-2, 1e-4, 4);
        let p = profile(
            ProfileInput::Map {
                f: &f,
                x0: 0.4,
                x_min: 1e-8,
                n_max: 1_000_000,
            },
            grid,
        )
        .unwrap();
        let csv = p.to_csv();
        let back = EpsilonProfile::from_csv(&csv).unwrap();
        assert_eq!(back.rows.len(), p.rows.len());
        for (a, b) in p.rows.iter().zip(&back.rows) {
            assert_eq!(a.epsilon, b.epsilon);
            assert_eq!(a.total, b.total);
            assert_eq!(a.exact, b.exact);
        }
        let back = EpsilonProfile::from_json(&p.to_json()).unwrap();
        assert_eq!(back.rows.len(), p.rows.len());
        assert_eq!(back.x0, Some(0.4));
    }
}
