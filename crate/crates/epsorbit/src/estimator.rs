//! Classification of |A_ε| growth against inverted scale members.
//!
//! For each invertible member `u_i` the ratios `r_j = |A_{ε_j}| / u_i⁻¹(ε_j)`
//! are classified as diverging, comparable, or vanishing. The limsup/liminf
//! of the paper quantities are unobservable; the declared finite-sample
//! semantics is: a bounded band with a flat trend against `log(-log ε)` is
//! comparable, a monotone total factor of `F` (or a decisive iterated-log
//! slope) is divergence/vanishing. Adjacent members of log-corrected scales
//! differ by slowly varying factors, whose log-log slope tends to 0 — the
//! iterated-log regressor separates them where the plain factor test cannot.
//!
//! The critical order `m` is the index of the last member whose ratio does
//! not vanish; when the verdict vector has a (unique) comparable member this
//! is exactly the comparable index. `dim_GB = 1 - 1/m`, and `m` bounds the
//! multiplicity of the fixed point in any family developing in the scale.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{log_derivative_range, EvalError, Expression};
use crate::neighborhood::{profile, EpsilonProfile, GridSpec, NeighborhoodError, ProfileInput};
use crate::orbit::{OrbitError, DEFAULT_N_MAX};
use crate::scales::{first_derivative_scale, ChebyshevScale, ScaleError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Neighborhood(#[from] NeighborhoodError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Finite-sample comparability thresholds, recorded in every report.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Thresholds {
    /// Max over min ratio allowed inside a comparable band.
    pub r_band: f64,
    /// Max |slope| of log r against log(-log ε) for a comparable band.
    pub tau: f64,
    /// Total growth/decay factor across the grid declaring divergence.
    pub trend_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            r_band: 10.0,
            tau: 0.1,
            trend_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictClass {
    Diverges,
    Comparable,
    Vanishes,
    Indeterminate,
}

/// Classification of one scale member against a profile.
#[derive(Debug, Clone, Serialize)]
pub struct ComparabilityVerdict {
    pub position: usize,
    pub index: usize,
    pub label: String,
    pub class: VerdictClass,
    pub band_min: f64,
    pub band_max: f64,
    /// Regression slope of log r against log(-log ε).
    pub trend_slope: f64,
    /// Smoothed ratio of the deep end to the shallow end of the grid.
    pub total_factor: f64,
    /// (ε, r) samples actually used (shallow rows the member cannot resolve
    /// are skipped).
    pub samples: Vec<(f64, f64)>,
}

/// Classify member `position` of `scale` against the profile rows.
pub fn classify(
    profile: &EpsilonProfile,
    scale: &ChebyshevScale,
    position: usize,
    thresholds: &Thresholds,
) -> Result<ComparabilityVerdict, EstimatorError> {
    let mut samples = Vec::with_capacity(profile.rows.len());
    for row in &profile.rows {
        match scale.invert_member(position, row.epsilon) {
            Ok(x) => samples.push((row.epsilon, row.total / x)),
            // a shallow ε above the member's range: drop the row
            Err(ScaleError::OutOfRange { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if samples.len() < 6 {
        return Err(EstimatorError::InsufficientData(format!(
            "member {position}: only {} resolvable rows",
            samples.len()
        )));
    }
    let rs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let band_min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
    let band_max = rs.iter().cloned().fold(0.0f64, f64::max);
    // geometric means of the three extreme samples at each end tame the
    // integer jitter of n_eps
    let gm = |vals: &[f64]| -> f64 {
        (vals.iter().map(|v| v.ln()).sum::<f64>() / vals.len() as f64).exp()
    };
    let k = 3.min(rs.len());
    let shallow = gm(&rs[..k]);
    let deep = gm(&rs[rs.len() - k..]);
    let total_factor = deep / shallow;
    // slope of ln r on ln(-ln ε)
    let xs: Vec<f64> = samples.iter().map(|s| (-(s.0.ln())).ln()).collect();
    let ys: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
    let (trend_slope, _) = ols_slope(&xs, &ys);

    let t = thresholds;
    let class = if band_max / band_min <= t.r_band && trend_slope.abs() <= t.tau {
        VerdictClass::Comparable
    } else if total_factor >= t.trend_factor || (trend_slope > t.tau && total_factor > 1.0) {
        VerdictClass::Diverges
    } else if total_factor <= 1.0 / t.trend_factor || (trend_slope < -t.tau && total_factor < 1.0) {
        VerdictClass::Vanishes
    } else {
        VerdictClass::Indeterminate
    };
    Ok(ComparabilityVerdict {
        position,
        index: scale.index(position),
        label: scale.label(position).to_string(),
        class,
        band_min,
        band_max,
        trend_slope,
        total_factor,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalOrder {
    Order(usize),
    BeyondScale,
    Indeterminate,
}

impl Serialize for CriticalOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CriticalOrder::Order(m) => s.serialize_u64(*m as u64),
            CriticalOrder::BeyondScale => s.serialize_str("beyond scale"),
            CriticalOrder::Indeterminate => s.serialize_str("indeterminate"),
        }
    }
}

impl CriticalOrder {
    pub fn order(&self) -> Option<usize> {
        match self {
            CriticalOrder::Order(m) => Some(*m),
            _ => None,
        }
    }
}

/// Full classification report for a profile against a scale.
#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub scale: String,
    pub verdicts: Vec<ComparabilityVerdict>,
    pub m: CriticalOrder,
    /// Index of the comparable member, when one exists (then equal to `m`).
    pub comparable_at: Option<usize>,
    #[serde(rename = "dim_B")]
    pub dim_b: Option<f64>,
    #[serde(rename = "dim_B_stderr")]
    pub dim_b_stderr: Option<f64>,
    #[serde(rename = "dim_GB")]
    pub dim_gb: Option<f64>,
    /// Multiplicity bound `μ ≤ m`; `bound_exact` when the coefficient-map
    /// rank hypothesis was certified, upgrading the bound to equality.
    pub bound: Option<usize>,
    pub bound_exact: bool,
    pub thresholds: Thresholds,
    pub grid: GridSpec,
    pub x0: Option<f64>,
    pub diagnostics: Vec<String>,
}

pub fn critical_order(
    profile: &EpsilonProfile,
    scale: &ChebyshevScale,
    thresholds: &Thresholds,
) -> Result<OrderReport, EstimatorError> {
    critical_order_certified(profile, scale, thresholds, false)
}

pub fn critical_order_certified(
    profile: &EpsilonProfile,
    scale: &ChebyshevScale,
    thresholds: &Thresholds,
    rank_certified: bool,
) -> Result<OrderReport, EstimatorError> {
    critical_order_with_threads(profile, scale, thresholds, rank_certified, 1)
}

/// Per-member classification may run on up to `threads` worker threads; the
/// verdict vector is identical to the sequential one.
pub fn critical_order_with_threads(
    profile: &EpsilonProfile,
    scale: &ChebyshevScale,
    thresholds: &Thresholds,
    rank_certified: bool,
    threads: usize,
) -> Result<OrderReport, EstimatorError> {
    let positions = scale.invertible_positions();
    let verdicts = if threads > 1 && positions.len() > 1 {
        let workers = threads.min(positions.len());
        let mut slots: Vec<Option<Result<ComparabilityVerdict, EstimatorError>>> =
            (0..positions.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..workers {
                let positions = &positions;
                let handle = scope.spawn(move || {
                    let mut out = Vec::new();
                    for (slot, &p) in positions.iter().enumerate().skip(w).step_by(workers) {
                        out.push((slot, classify(profile, scale, p, thresholds)));
                    }
                    out
                });
                handles.push(handle);
            }
            for handle in handles {
                for (slot, res) in handle.join().expect("classifier thread") {
                    slots[slot] = Some(res);
                }
            }
        });
        let mut verdicts = Vec::with_capacity(slots.len());
        for s in slots {
            verdicts.push(s.expect("slot filled")?);
        }
        verdicts
    } else {
        let mut verdicts = Vec::with_capacity(positions.len());
        for p in positions {
            verdicts.push(classify(profile, scale, p, thresholds)?);
        }
        verdicts
    };
    let mut diagnostics = Vec::new();
    let m = decide_order(&verdicts, &mut diagnostics);
    let comparable_at = verdicts
        .iter()
        .find(|v| v.class == VerdictClass::Comparable)
        .map(|v| v.index)
        .filter(|_| matches!(m, CriticalOrder::Order(_)));
    let (dim_b, dim_b_stderr) = match box_dimension(profile) {
        Ok((d, se)) => (Some(d), Some(se)),
        Err(e) => {
            diagnostics.push(format!("box dimension unavailable: {e}"));
            (None, None)
        }
    };
    let dim_gb = match m {
        CriticalOrder::Order(k) if k >= 1 => Some(1.0 - 1.0 / k as f64),
        _ => None,
    };
    let bound = m.order();
    Ok(OrderReport {
        scale: scale.name().to_string(),
        verdicts,
        m,
        comparable_at,
        dim_b,
        dim_b_stderr,
        dim_gb,
        bound,
        bound_exact: rank_certified && bound.is_some(),
        thresholds: *thresholds,
        grid: profile.grid,
        x0: profile.x0,
        diagnostics,
    })
}

/// Monotone-pattern analysis of the verdict vector:
/// `diverges* (comparable|∅) vanishes*`.
fn decide_order(verdicts: &[ComparabilityVerdict], diagnostics: &mut Vec<String>) -> CriticalOrder {
    let rank = |c: VerdictClass| match c {
        VerdictClass::Diverges => 0u8,
        VerdictClass::Comparable => 1,
        VerdictClass::Vanishes => 2,
        VerdictClass::Indeterminate => 3,
    };
    for v in verdicts {
        if v.class == VerdictClass::Indeterminate {
            diagnostics.push(format!(
                "member {} ({}) is indeterminate (band [{:.3e}, {:.3e}], slope {:.3})",
                v.index, v.label, v.band_min, v.band_max, v.trend_slope
            ));
        }
    }
    if verdicts
        .iter()
        .any(|v| v.class == VerdictClass::Indeterminate)
    {
        return CriticalOrder::Indeterminate;
    }
    let comparables = verdicts
        .iter()
        .filter(|v| v.class == VerdictClass::Comparable)
        .count();
    if comparables > 1 {
        diagnostics.push(format!(
            "{comparables} comparable members; no unique critical order"
        ));
        return CriticalOrder::Indeterminate;
    }
    let ranks: Vec<u8> = verdicts.iter().map(|v| rank(v.class)).collect();
    if ranks.windows(2).any(|w| w[1] < w[0]) {
        diagnostics.push("verdict vector violates the monotone pattern".into());
        return CriticalOrder::Indeterminate;
    }
    if ranks.iter().all(|&r| r == 0) {
        return CriticalOrder::BeyondScale;
    }
    if ranks.iter().all(|&r| r == 2) {
        diagnostics.push("all members vanish: profile grows above the whole scale".into());
        return CriticalOrder::Indeterminate;
    }
    let last_alive = verdicts
        .iter()
        .rfind(|v| v.class != VerdictClass::Vanishes)
        .expect("some member does not vanish");
    CriticalOrder::Order(last_alive.index)
}

/// Least-squares slope of `log |A_ε|` against `log ε` over the small-ε half
/// of the grid; `dim_B = 1 - slope`.
pub fn box_dimension(profile: &EpsilonProfile) -> Result<(f64, f64), EstimatorError> {
    let rows = &profile.rows;
    if rows.len() < 8 {
        return Err(EstimatorError::InsufficientData(format!(
            "{} rows, need at least 8",
            rows.len()
        )));
    }
    let span = (rows[0].epsilon / rows.last().unwrap().epsilon).log10();
    if span < 3.0 {
        return Err(EstimatorError::InsufficientData(format!(
            "grid spans {span:.2} decades, need at least 3"
        )));
    }
    let half = rows.len().div_ceil(2);
    let window = &rows[rows.len() - half..];
    let xs: Vec<f64> = window.iter().map(|r| r.epsilon.ln()).collect();
    let ys: Vec<f64> = window.iter().map(|r| r.total.ln()).collect();
    let (slope, stderr) = ols_slope(&xs, &ys);
    Ok((1.0 - slope, stderr))
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    if xs.len() <= 2 {
        return (slope, 0.0);
    }
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let fit = ybar + slope * (x - xbar);
            (y - fit).powi(2)
        })
        .sum();
    let stderr = (ss_res / (n - 2.0) / sxx).sqrt();
    (slope, stderr)
}

/// End-to-end run over a map: lazy profile plus order report.
pub fn run_order(
    f: &Expression,
    x0: f64,
    scale: &ChebyshevScale,
    grid: GridSpec,
    thresholds: &Thresholds,
) -> Result<(EpsilonProfile, OrderReport), EstimatorError> {
    let prof = profile(
        ProfileInput::Map {
            f,
            x0,
            x_min: 1e-300,
            n_max: DEFAULT_N_MAX,
        },
        grid,
    )?;
    let report = critical_order(&prof, scale, thresholds)?;
    Ok((prof, report))
}

/// Behavior of the critical order under generalized differentiation:
/// runs `g = id - f` against the scale and `h = id - D_1(f)` against the
/// scale of first derivatives `D_1(I)`.
#[derive(Debug, Clone, Serialize)]
pub struct ShiftOutcome {
    pub m_g: CriticalOrder,
    pub m_h: CriticalOrder,
    /// `D_1(f)` is in the linear comparability class: the h-side length obeys
    /// the `ε(-log ε)` law and sits strictly between the first two inverted
    /// members, so it is reported as order 1 without a comparable member.
    pub h_linear_regime: bool,
    /// Contraction rescale applied to `D_1(f)` before iterating (pure
    /// rescaling does not move the comparability class).
    pub h_rescale: f64,
    pub g_report: OrderReport,
    pub h_report: Option<OrderReport>,
}

pub fn differentiation_shift(
    f: &Expression,
    x0: f64,
    scale: &ChebyshevScale,
    grid: GridSpec,
    thresholds: &Thresholds,
) -> Result<ShiftOutcome, EstimatorError> {
    let (_, g_report) = run_order(f, x0, scale, grid, thresholds)?;
    let m_g = g_report.m;

    let d1f = scale.derivative_expression(f, 1);
    let d1_scale = first_derivative_scale(scale);
    let hi = x0.min(0.9 * d1f.domain());
    let ldr = log_derivative_range(&d1f, hi * 1e-8, hi, 200)?;
    let linear = ldr.min > 0.8 && ldr.max < 1.2;

    let kappa = contraction_rescale(&d1f, hi)?;
    let h_map = d1f.scaled(kappa);
    let prof = profile(
        ProfileInput::Map {
            f: &h_map,
            x0: hi,
            x_min: 1e-300,
            n_max: DEFAULT_N_MAX,
        },
        grid,
    )?;

    if linear {
        // μ = 1 regime: check the ε(-log ε) law instead of member comparability
        let mut lo = f64::INFINITY;
        let mut hi_band = 0.0f64;
        for r in &prof.rows {
            let v = r.total / (r.epsilon * (-r.epsilon.ln()));
            lo = lo.min(v);
            hi_band = hi_band.max(v);
        }
        let m_h = if hi_band / lo <= 10.0 {
            CriticalOrder::Order(d1_scale.index(1))
        } else {
            CriticalOrder::Indeterminate
        };
        return Ok(ShiftOutcome {
            m_g,
            m_h,
            h_linear_regime: true,
            h_rescale: kappa,
            g_report,
            h_report: None,
        });
    }

    let h_report = critical_order(&prof, &d1_scale, thresholds)?;
    Ok(ShiftOutcome {
        m_g,
        m_h: h_report.m,
        h_linear_regime: false,
        h_rescale: kappa,
        g_report,
        h_report: Some(h_report),
    })
}

/// Largest safe constant κ ≤ 1 making `id - κ·f` a sampled contraction on
/// `(0, x0]`.
fn contraction_rescale(f: &Expression, x0: f64) -> Result<f64, EstimatorError> {
    let lo = x0 * 1e-8;
    let ratio = (x0 / lo).powf(1.0 / 999.0);
    let mut x = x0;
    let mut rho_min = f64::INFINITY;
    for _ in 0..1000 {
        let fx = f.eval(x)?;
        if fx <= 0.0 {
            return Err(EstimatorError::InsufficientData(format!(
                "derivative map is not positive at x = {x}"
            )));
        }
        rho_min = rho_min.min(x / fx);
        x /= ratio;
    }
    Ok(if rho_min > 2.2 { 1.0 } else { rho_min / 2.2 })
}

/// Plot data: ε plus one ratio column per invertible member
/// (`r_<index>`); cells the member cannot resolve are left empty.
pub fn plot_data_csv(
    profile: &EpsilonProfile,
    scale: &ChebyshevScale,
) -> Result<String, EstimatorError> {
    use std::fmt::Write as _;
    let positions = scale.invertible_positions();
    let mut header = String::from("epsilon");
    for &p in &positions {
        let _ = write!(header, ",r_{}", scale.index(p));
    }
    let mut out = header;
    out.push('\n');
    for row in &profile.rows {
        let _ = write!(out, "{}", row.epsilon);
        for &p in &positions {
            match scale.invert_member(p, row.epsilon) {
                Ok(x) => {
                    let _ = write!(out, ",{}", row.total / x);
                }
                Err(ScaleError::OutOfRange { .. }) => out.push(','),
                Err(e) => return Err(e.into()),
            }
        }
        out.push('\n');
    }
    Ok(out)
}
