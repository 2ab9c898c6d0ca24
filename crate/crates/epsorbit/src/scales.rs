//! Chebyshev scales and their division–differentiation operators.
//!
//! A scale is an ordered list of monomial-like members `u_0, u_1, …` on
//! `(0, d)`, ordered by increasing flatness at 0. The operators
//!
//! ```text
//! D_0(f) = f / u_0,      D_{i+1}(f) = (D_i f)' / (D_i u_{i+1})'
//! ```
//!
//! stay inside the expression grammar, and `D_i(f)(0)` plays the role of the
//! i-th development coefficient of `f` in the scale.
//!
//! Limits at 0 are numerical by declared semantics: samples on the geometric
//! grid `d·10⁻¹ … d·10⁻¹²` are fed to a stabilization test (see
//! [`LimitDecl`]). Axiom checks are sampled, not proved.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, EvalError, Expression, NonFiniteKind};

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("scale operator {position} is degenerate: denominator vanishes at x = {x}")]
    DegenerateScale { position: usize, x: f64 },
    #[error("y = {y} is out of range for member {position} (sup on (0,d) is {sup})")]
    OutOfRange { position: usize, y: f64, sup: f64 },
    #[error("could not bracket member {position} for inversion")]
    NotMonotone { position: usize },
    #[error("coefficient map failed: {0}")]
    CoeffMap(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] expr::ParseError),
    #[error("bad scale file: {0}")]
    Format(String),
}

// ---------------------------------------------------------------------------
// stabilization test
// ---------------------------------------------------------------------------

/// Declared limit of a sample trend at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LimitDecl {
    Finite(f64),
    Diverges,
    Indeterminate,
}

impl Serialize for LimitDecl {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LimitDecl::Finite(v) => s.serialize_f64(*v),
            LimitDecl::Diverges => s.serialize_str("diverges"),
            LimitDecl::Indeterminate => s.serialize_str("indeterminate"),
        }
    }
}

impl LimitDecl {
    pub fn is_zero(&self) -> bool {
        matches!(self, LimitDecl::Finite(v) if *v == 0.0)
    }

    pub fn nonzero_value(&self) -> Option<f64> {
        match self {
            LimitDecl::Finite(v) if *v != 0.0 => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Sample {
    Value(f64),
    Overflow,
    Invalid,
}

/// Stabilization parameters; the defaults are the declared limit semantics:
/// a 12-decade grid, three-sample agreement at rel 1e-3, a zero tie below
/// 1e-9 of the trend scale, and monotone growth/decay by a total factor of 5
/// across the grid for divergence/vanishing.
#[derive(Debug, Clone, Copy)]
pub struct StabilizationParams {
    pub depth: usize,
    pub agree_rel: f64,
    pub zero_tie: f64,
    pub trend_factor: f64,
}

impl Default for StabilizationParams {
    fn default() -> Self {
        StabilizationParams {
            depth: 12,
            agree_rel: 1e-3,
            zero_tie: 1e-9,
            trend_factor: 5.0,
        }
    }
}

fn rel_agree(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn declare_limit(samples: &[Sample], p: &StabilizationParams) -> LimitDecl {
    let mut vals = Vec::with_capacity(samples.len());
    let mut tail_overflow = false;
    for s in samples {
        match s {
            Sample::Value(v) => vals.push(*v),
            Sample::Overflow => {
                tail_overflow = true;
                break;
            }
            Sample::Invalid => break,
        }
    }
    if vals.len() < 2 {
        return if tail_overflow {
            LimitDecl::Diverges
        } else {
            LimitDecl::Indeterminate
        };
    }
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return LimitDecl::Finite(0.0);
    }
    if tail_overflow {
        // Grew out of f64 range: divergence if the valid prefix was heading up.
        let w = &vals[vals.len().saturating_sub(4)..];
        let up = w.windows(2).all(|p| p[1].abs() >= p[0].abs());
        return if up {
            LimitDecl::Diverges
        } else {
            LimitDecl::Indeterminate
        };
    }
    let n = vals.len();
    if n >= 3
        && rel_agree(vals[n - 1], vals[n - 2], p.agree_rel)
        && rel_agree(vals[n - 2], vals[n - 3], p.agree_rel)
    {
        let v = vals[n - 1];
        return LimitDecl::Finite(if v.abs() < p.zero_tie * scale { 0.0 } else { v });
    }
    if n >= 4 {
        let w = &vals[n - 4..];
        let increasing = w.windows(2).all(|p| p[1].abs() > p[0].abs());
        let decreasing = w.windows(2).all(|p| p[1].abs() < p[0].abs());
        if increasing && vals[n - 1].abs() >= p.trend_factor * vals[0].abs() {
            return LimitDecl::Diverges;
        }
        if decreasing && vals[0].abs() >= p.trend_factor * vals[n - 1].abs() {
            return LimitDecl::Finite(0.0);
        }
        // Slowly varying decays (1/log terms) shrink by less than the trend
        // factor over the grid; monotone decrease at every step is accepted
        // with a weaker factor.
        let all_decreasing = vals.windows(2).all(|p| p[1].abs() < p[0].abs());
        if all_decreasing && vals[0].abs() >= 2.0 * vals[n - 1].abs() {
            return LimitDecl::Finite(0.0);
        }
    }
    LimitDecl::Indeterminate
}

// ---------------------------------------------------------------------------
// scale type
// ---------------------------------------------------------------------------

/// On-disk form: `{"name", "d", "members": [expression text], "indices"?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleFile {
    pub name: String,
    pub d: f64,
    pub members: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

/// An ordered Chebyshev scale with a shared domain bound.
///
/// Construction does not validate the scale axioms; run
/// [`ChebyshevScale::validate`] for a per-axiom report (the flat
/// counterexample scale ships precisely because its axioms fail).
///
/// Members carry an `index` used to report the critical order. It defaults
/// to the list position; the odd-power scale `{x, x³, x⁵}` overrides it with
/// `1, 3, 5` to match the usual numbering of focus coefficients.
#[derive(Debug)]
pub struct ChebyshevScale {
    name: String,
    labels: Vec<String>,
    members: Vec<Expression>,
    indices: Vec<usize>,
    d: f64,
    ops: OnceLock<DividedOps>,
}

#[derive(Debug)]
struct DividedOps {
    /// `D_i(u_{i+1})` for `i = 0 .. len-2`.
    operators: Vec<Expression>,
    /// Their derivatives: the denominators of the recursion.
    denoms: Vec<Expression>,
}

impl ChebyshevScale {
    pub fn new(
        name: impl Into<String>,
        d: f64,
        members: Vec<(String, Expression)>,
    ) -> ChebyshevScale {
        assert!(members.len() >= 2, "a scale needs at least two members");
        assert!(d > 0.0);
        let (labels, members): (Vec<_>, Vec<_>) = members
            .into_iter()
            .map(|(l, e)| (l, e.with_domain(d)))
            .unzip();
        let indices = (0..members.len()).collect();
        ChebyshevScale {
            name: name.into(),
            labels,
            members,
            indices,
            d,
            ops: OnceLock::new(),
        }
    }

    pub fn with_indices(mut self, indices: Vec<usize>) -> ChebyshevScale {
        assert_eq!(indices.len(), self.members.len());
        self.indices = indices;
        self
    }

    pub fn from_file(file: &ScaleFile) -> Result<ChebyshevScale, ScaleError> {
        if file.members.len() < 2 {
            return Err(ScaleError::Format(
                "a scale needs at least two members".into(),
            ));
        }
        if !file.d.is_finite() || file.d <= 0.0 {
            return Err(ScaleError::Format("d must be positive".into()));
        }
        let mut members = Vec::new();
        for src in &file.members {
            members.push((src.clone(), expr::parse(src)?));
        }
        let mut scale = ChebyshevScale::new(file.name.clone(), file.d, members);
        if let Some(idx) = &file.indices {
            if idx.len() != scale.members.len() {
                return Err(ScaleError::Format(
                    "indices length must match members".into(),
                ));
            }
            scale = scale.with_indices(idx.clone());
        }
        Ok(scale)
    }

    pub fn from_json(json: &str) -> Result<ChebyshevScale, ScaleError> {
        let file: ScaleFile =
            serde_json::from_str(json).map_err(|e| ScaleError::Format(e.to_string()))?;
        ChebyshevScale::from_file(&file)
    }

    pub fn to_file(&self) -> ScaleFile {
        let default_indices: Vec<usize> = (0..self.members.len()).collect();
        ScaleFile {
            name: self.name.clone(),
            d: self.d,
            members: self.labels.clone(),
            indices: (self.indices != default_indices).then(|| self.indices.clone()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn member(&self, position: usize) -> &Expression {
        &self.members[position]
    }

    pub fn label(&self, position: usize) -> &str {
        &self.labels[position]
    }

    /// Reporting index of a member (defaults to its position).
    pub fn index(&self, position: usize) -> usize {
        self.indices[position]
    }

    /// Positions that can be inverted: the non-constant members.
    pub fn invertible_positions(&self) -> Vec<usize> {
        (0..self.members.len())
            .filter(|&p| self.members[p].constant_value().is_none())
            .collect()
    }

    fn ops(&self) -> &DividedOps {
        self.ops.get_or_init(|| {
            let n = self.members.len();
            let mut current: Vec<Expression> = self
                .members
                .iter()
                .map(|u| Expression::div(u, &self.members[0]))
                .collect();
            let mut operators = Vec::with_capacity(n - 1);
            let mut denoms = Vec::with_capacity(n - 1);
            for i in 0..n - 1 {
                let op = current[i + 1].clone();
                let w = op.differentiate();
                operators.push(op);
                denoms.push(w.clone());
                if i + 1 < n - 1 {
                    for item in current.iter_mut().skip(i + 2) {
                        *item = Expression::div(&item.differentiate(), &w);
                    }
                }
            }
            DividedOps { operators, denoms }
        })
    }

    /// The generalized derivative `D_i(f)` as an expression on `(0, d)`.
    pub fn derivative_expression(&self, f: &Expression, i: usize) -> Expression {
        assert!(i < self.members.len(), "operator order exceeds the scale");
        let ops = self.ops();
        let mut d = Expression::div(f, &self.members[0]).with_domain(self.d);
        for w in ops.denoms.iter().take(i) {
            d = Expression::div(&d.differentiate(), w);
        }
        d
    }

    /// Evaluate `D_i(f)` on the limit grid and declare `D_i(f)(0)`.
    pub fn generalized_derivative(
        &self,
        f: &Expression,
        i: usize,
    ) -> Result<GeneralizedDerivativeValue, ScaleError> {
        self.generalized_derivative_with(f, i, &StabilizationParams::default())
    }

    pub fn generalized_derivative_with(
        &self,
        f: &Expression,
        i: usize,
        params: &StabilizationParams,
    ) -> Result<GeneralizedDerivativeValue, ScaleError> {
        let d_expr = self.derivative_expression(f, i);
        let mut samples = Vec::with_capacity(params.depth);
        let mut trend = Vec::with_capacity(params.depth);
        for j in 1..=params.depth {
            let x = self.d * 10f64.powi(-(j as i32));
            match d_expr.eval_memo(x) {
                Ok(v) => {
                    samples.push(Sample::Value(v));
                    trend.push((x, Some(v)));
                }
                Err(EvalError::NonFinite(NonFiniteKind::DivByZero)) => {
                    return Err(ScaleError::DegenerateScale { position: i, x });
                }
                Err(EvalError::NonFinite(NonFiniteKind::Overflow)) => {
                    samples.push(Sample::Overflow);
                    trend.push((x, None));
                }
                Err(_) => {
                    samples.push(Sample::Invalid);
                    trend.push((x, None));
                }
            }
        }
        let value = declare_limit(&samples, params);
        Ok(GeneralizedDerivativeValue {
            index: i,
            value,
            trend,
        })
    }

    /// First position with a finite nonzero generalized derivative at 0.
    ///
    /// Divergent earlier operators are tolerated but flagged: for scales
    /// violating the upper power condition the recursion can blow up below
    /// the first development coefficient while the coefficient itself is
    /// still read off cleanly.
    pub fn multiplicity_bound(&self, f: &Expression) -> Result<MultiplicityBound, ScaleError> {
        let mut divergent_below = false;
        for i in 0..self.members.len() {
            let gd = self.generalized_derivative(f, i)?;
            match gd.value {
                LimitDecl::Finite(v) if v != 0.0 => {
                    return Ok(MultiplicityBound::Bound {
                        k0: i,
                        divergent_below,
                    });
                }
                LimitDecl::Finite(_) => {}
                LimitDecl::Diverges => divergent_below = true,
                LimitDecl::Indeterminate => {
                    return Ok(MultiplicityBound::Indeterminate { position: i });
                }
            }
        }
        Ok(MultiplicityBound::BeyondScale)
    }

    /// Solve `u_p(x) = y` on `(0, d)` by bisection (geometric midpoint,
    /// 200-iteration cap, deterministic).
    pub fn invert_member(&self, position: usize, y: f64) -> Result<f64, ScaleError> {
        assert!(y > 0.0, "invert_member needs y > 0");
        let u = &self.members[position];
        if u.constant_value().is_some() {
            return Err(ScaleError::NotMonotone { position });
        }
        let hi0 = self.d * (1.0 - 1e-9);
        let sup = u.eval(hi0)?;
        if y >= sup {
            return Err(ScaleError::OutOfRange { position, y, sup });
        }
        let mut lo = hi0 * 0.5;
        let mut halvings = 0;
        loop {
            match u.eval(lo) {
                Ok(v) if v <= y => break,
                Ok(_) => {}
                Err(EvalError::Domain { .. }) => return Err(ScaleError::NotMonotone { position }),
                Err(e) => return Err(e.into()),
            }
            lo *= 0.5;
            halvings += 1;
            if halvings > 4000 || lo == 0.0 {
                return Err(ScaleError::NotMonotone { position });
            }
        }
        let mut hi = hi0;
        // Early exit well inside the promised |u(x) - y| <= max(1e-14, 1e-12 y)
        // so round-trips stay at rel 1e-10 even for small y; otherwise run the
        // bracket down to floating-point exhaustion (cap 200).
        let tol = 1e-13 * y;
        let mut best = lo;
        let mut best_err = f64::INFINITY;
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            let v = u.eval(mid)?;
            let err = (v - y).abs();
            if err < best_err {
                best = mid;
                best_err = err;
            }
            if err <= tol {
                return Ok(mid);
            }
            if v < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(best)
    }

    /// Per-axiom sampled validation.
    pub fn validate(&self) -> ValidationReport {
        self.validate_with(
            &AxiomCheckParams::default(),
            &StabilizationParams::default(),
        )
    }

    pub fn validate_with(
        &self,
        grid: &AxiomCheckParams,
        stab: &StabilizationParams,
    ) -> ValidationReport {
        let mut checks = Vec::new();
        let xs = axiom_grid(self.d, grid);

        for p in 1..self.members.len() {
            let (pass, witness) = check_positive_increasing(&self.members[p], &xs);
            checks.push(AxiomCheck {
                axiom: Axiom::MemberPositiveIncreasing { position: p },
                pass,
                witness,
            });
        }

        let ops = self.ops();
        for (i, op) in ops.operators.iter().enumerate() {
            let (pass, witness) = check_increasing(op, &xs);
            checks.push(AxiomCheck {
                axiom: Axiom::OperatorIncreasing { i },
                pass,
                witness,
            });
        }

        for i in 1..self.members.len() {
            for j in 0..i {
                let member = self.members[i].clone();
                let (pass, witness) = match self.generalized_derivative_with(&member, j, stab) {
                    Ok(gd) => {
                        if gd.value.is_zero() {
                            (true, None)
                        } else {
                            let deepest = gd.trend.last().map(|t| t.0).unwrap_or(0.0);
                            (
                                false,
                                Some(Witness {
                                    x: deepest,
                                    detail: format!("D_{j}(u_{i}) declared {:?}", gd.value),
                                }),
                            )
                        }
                    }
                    Err(e) => (
                        false,
                        Some(Witness {
                            x: f64::NAN,
                            detail: e.to_string(),
                        }),
                    ),
                };
                checks.push(AxiomCheck {
                    axiom: Axiom::FlatnessLimit { j, i },
                    pass,
                    witness,
                });
            }
        }

        let passed = checks.iter().all(|c| c.pass);
        ValidationReport {
            scale: self.name.clone(),
            passed,
            checks,
        }
    }
}

/// Result of reading a development coefficient numerically.
#[derive(Debug, Clone)]
pub struct GeneralizedDerivativeValue {
    pub index: usize,
    pub value: LimitDecl,
    pub trend: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MultiplicityBound {
    /// Multiplicity of 0 in any family developing in the scale is at most `k0`.
    Bound { k0: usize, divergent_below: bool },
    /// All generalized derivatives vanish within the scale.
    BeyondScale,
    /// The stabilization test could not settle a limit.
    Indeterminate { position: usize },
}

// ---------------------------------------------------------------------------
// axiom checks
// ---------------------------------------------------------------------------

/// Sampling density for the axiom checks.
#[derive(Debug, Clone, Copy)]
pub struct AxiomCheckParams {
    pub points_per_decade: usize,
    pub decades: usize,
}

impl Default for AxiomCheckParams {
    fn default() -> Self {
        AxiomCheckParams {
            points_per_decade: 40,
            decades: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub scale: String,
    pub passed: bool,
    pub checks: Vec<AxiomCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomCheck {
    pub axiom: Axiom,
    pub pass: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind")]
pub enum Axiom {
    /// `u_p` positive and strictly increasing on `(0, d)`, for p ≥ 1.
    MemberPositiveIncreasing { position: usize },
    /// `D_i(u_{i+1})` strictly increasing on `(0, d)`.
    OperatorIncreasing { i: usize },
    /// `D_j(u_i)(x) → 0` as `x → 0`, for `j < i`.
    FlatnessLimit { j: usize, i: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub x: f64,
    pub detail: String,
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "scale '{}': {}",
            self.scale,
            if self.passed { "valid" } else { "INVALID" }
        )?;
        for c in &self.checks {
            let name = match &c.axiom {
                Axiom::MemberPositiveIncreasing { position } => {
                    format!("member u_{position} positive increasing")
                }
                Axiom::OperatorIncreasing { i } => format!("D_{i}(u_{}) increasing", i + 1),
                Axiom::FlatnessLimit { j, i } => format!("D_{j}(u_{i}) -> 0"),
            };
            write!(f, "  [{}] {name}", if c.pass { "pass" } else { "FAIL" })?;
            if let Some(w) = &c.witness {
                write!(f, " (at x = {}: {})", w.x, w.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Descending geometric grid just inside `(0, d)`.
fn axiom_grid(d: f64, p: &AxiomCheckParams) -> Vec<f64> {
    let top = d * (1.0 - 1e-9);
    let n = p.points_per_decade * p.decades;
    let step = 10f64.powf(-1.0 / p.points_per_decade as f64);
    let mut xs = Vec::with_capacity(n + 1);
    let mut x = top;
    for _ in 0..=n {
        xs.push(x);
        x *= step;
    }
    xs
}

/// Compare values robustly via (sign, ln magnitude).
fn sign_ln_greater(a: (i8, f64), b: (i8, f64)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    match a.0 {
        1 => a.1 > b.1,
        -1 => a.1 < b.1,
        _ => false,
    }
}

fn check_positive_increasing(u: &Expression, xs: &[f64]) -> (bool, Option<Witness>) {
    let mut prev: Option<(i8, f64)> = None;
    for &x in xs {
        let sl = match u.eval_sign_ln(x) {
            Ok(sl) => sl,
            Err(e) => {
                return (
                    false,
                    Some(Witness {
                        x,
                        detail: e.to_string(),
                    }),
                )
            }
        };
        if sl.0 <= 0 {
            return (
                false,
                Some(Witness {
                    x,
                    detail: "not positive".into(),
                }),
            );
        }
        if let Some(p) = prev {
            // grid descends, so values must strictly descend too
            if !sign_ln_greater(p, sl) {
                return (
                    false,
                    Some(Witness {
                        x,
                        detail: "not strictly increasing".into(),
                    }),
                );
            }
        }
        prev = Some(sl);
    }
    (true, None)
}

fn check_increasing(u: &Expression, xs: &[f64]) -> (bool, Option<Witness>) {
    let mut prev: Option<(i8, f64)> = None;
    for &x in xs {
        let sl = match u.eval_sign_ln(x) {
            Ok(sl) => sl,
            Err(e) => {
                return (
                    false,
                    Some(Witness {
                        x,
                        detail: e.to_string(),
                    }),
                )
            }
        };
        if let Some(p) = prev {
            if !sign_ln_greater(p, sl) {
                return (
                    false,
                    Some(Witness {
                        x,
                        detail: "not strictly increasing".into(),
                    }),
                );
            }
        }
        prev = Some(sl);
    }
    (true, None)
}

// ---------------------------------------------------------------------------
// rank of the coefficient Jacobian
// ---------------------------------------------------------------------------

/// Numerical rank of the forward-difference Jacobian `∂α_i/∂λ_j` (k rows),
/// with singular values below `1e-8·σ_max` treated as zero. Rank `k`
/// certifies that the multiplicity bound is attained in the family.
pub fn jacobian_rank<F>(
    coeff_map: F,
    lambda0: &[f64],
    k: usize,
    h: f64,
) -> Result<usize, ScaleError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String>,
{
    assert!(h > 0.0);
    let n = lambda0.len();
    if n < k {
        return Err(ScaleError::CoeffMap(format!(
            "parameter dimension {n} is below the requested rank {k}"
        )));
    }
    let base = coeff_map(lambda0).map_err(ScaleError::CoeffMap)?;
    if base.len() < k {
        return Err(ScaleError::CoeffMap(format!(
            "coefficient map returned {} values, need {k}",
            base.len()
        )));
    }
    let mut jac = nalgebra::DMatrix::<f64>::zeros(k, n);
    let mut lam = lambda0.to_vec();
    for j in 0..n {
        lam[j] += h;
        let pert = coeff_map(&lam).map_err(ScaleError::CoeffMap)?;
        if pert.len() < k {
            return Err(ScaleError::CoeffMap("coefficient map changed arity".into()));
        }
        for i in 0..k {
            jac[(i, j)] = (pert[i] - base[i]) / h;
        }
        lam[j] = lambda0[j];
    }
    let svd = jac.svd(false, false);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-8 * smax)
        .count())
}

// ---------------------------------------------------------------------------
// shipped scales
// ---------------------------------------------------------------------------

pub const BUILTIN_SCALES: [&str; 7] = [
    "power",
    "odd_power",
    "two_sided_log",
    "loop",
    "two_cycle",
    "abelian",
    "flat_counterexample",
];

/// Definitions of the scale fixtures the repository ships (also emitted as
/// JSON files under `scales/`).
pub fn builtin_file(name: &str) -> Option<ScaleFile> {
    let (d, members, indices): (f64, &[&str], Option<Vec<usize>>) = match name {
        "power" => (1.0, &["1", "x", "x^2", "x^3", "x^4", "x^5", "x^6"], None),
        "odd_power" => (1.0, &["x", "x^3", "x^5"], Some(vec![1, 3, 5])),
        "two_sided_log" => (
            0.03,
            &[
                "1",
                "x*(-log(x))",
                "x",
                "x^2*(-log(x))",
                "x^2",
                "x^3*(-log(x))",
                "x^3",
            ],
            None,
        ),
        "loop" => (
            0.05,
            &["1", "x", "x^2*(-log(x))", "x^2", "x^3*(-log(x))", "x^3"],
            None,
        ),
        // Prefixes of the infinite scales: deeper members push the operator
        // monotonicity thresholds below what a 12-decade grid can certify in
        // double precision.
        "two_cycle" => (
            0.05,
            &["1", "x", "x^2*(-log(x))^2", "x^2*(-log(x))", "x^2"],
            None,
        ),
        "abelian" => (
            0.01,
            &["x^0.5*(-log(x))", "x^0.5", "x*(-log(x))", "x"],
            None,
        ),
        "flat_counterexample" => (0.25, &["exp(-1/x)", "exp(-1/(2*x))", "exp(-1/(3*x))"], None),
        _ => return None,
    };
    Some(ScaleFile {
        name: name.to_string(),
        d,
        members: members.iter().map(|s| s.to_string()).collect(),
        indices,
    })
}

pub fn builtin(name: &str) -> Option<ChebyshevScale> {
    let file = builtin_file(name)?;
    Some(ChebyshevScale::from_file(&file).expect("builtin scales parse"))
}

/// First generalized derivatives `D_1(I) = {D_1(u_1), …}`, assembled as a
/// scale in its own right (used by the differentiation corollary).
pub fn first_derivative_scale(scale: &ChebyshevScale) -> ChebyshevScale {
    let n = scale.len();
    let members: Vec<(String, Expression)> = (1..n)
        .map(|k| {
            let e = scale.derivative_expression(scale.member(k), 1);
            (format!("D_1({})", scale.label(k)), e)
        })
        .collect();
    ChebyshevScale::new(format!("D_1({})", scale.name()), scale.d(), members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn scale_of(name: &str, d: f64, members: &[&str]) -> ChebyshevScale {
        ChebyshevScale::new(
            name,
            d,
            members
                .iter()
                .map(|s| (s.to_string(), parse(s).unwrap()))
                .collect(),
        )
    }

    #[test]
    fn validate_differentiable_scale() {
        let s = scale_of("p", 1.0, &["1", "x", "x^2", "x^3"]);
        let report = s.validate();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn validate_log_scale() {
        let s = scale_of(
            "l",
            0.05,
            &["1", "x*(-log(x))", "x", "x^2*(-log(x))", "x^2"],
        );
        let report = s.validate();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn validate_flags_flatness_violation() {
        // D_1 of x(-log x) against {1, x, x(-log x)} is -log x - 1, divergent.
        let s = scale_of("bad", 0.35, &["1", "x", "x*(-log(x))"]);
        let report = s.validate();
        assert!(!report.passed);
        assert!(report
            .checks
            .iter()
            .any(|c| !c.pass && matches!(c.axiom, Axiom::FlatnessLimit { j: 1, i: 2 })));
    }

    #[test]
    fn generalized_derivative_examples() {
        let s = scale_of("p", 1.0, &["1", "x", "x^2"]);
        let f = parse("3*x^2").unwrap();
        let gd = s.generalized_derivative(&f, 2).unwrap();
        match gd.value {
            LimitDecl::Finite(v) => assert_relative_eq!(v, 3.0, max_relative = 1e-9),
            other => panic!("expected 3.0, got {other:?}"),
        }

        let s = scale_of("l", 0.35, &["1", "x*(-log(x))", "x"]);
        let f = parse("x*(-log(x))").unwrap();
        let gd = s.generalized_derivative(&f, 1).unwrap();
        match gd.value {
            LimitDecl::Finite(v) => assert_relative_eq!(v, 1.0, max_relative = 1e-9),
            other => panic!("expected 1.0, got {other:?}"),
        }

        let s = scale_of("lin", 1.0, &["1", "x"]);
        let f = parse("2*x").unwrap();
        let gd = s.generalized_derivative(&f, 1).unwrap();
        match gd.value {
            LimitDecl::Finite(v) => assert_relative_eq!(v, 2.0, max_relative = 1e-9),
            other => panic!("expected 2.0, got {other:?}"),
        }
    }

    #[test]
    fn d_i_of_u_i_is_one() {
        for name in ["power", "two_sided_log", "loop"] {
            let s = builtin(name).unwrap();
            for i in 1..s.len() {
                let member = s.member(i).clone();
                let gd = s.generalized_derivative(&member, i).unwrap();
                match gd.value {
                    LimitDecl::Finite(v) => {
                        assert_relative_eq!(v, 1.0, max_relative = 1e-9)
                    }
                    other => panic!("{name}: D_{i}(u_{i}) declared {other:?}"),
                }
            }
        }
    }

    #[test]
    fn polynomial_coefficients_recovered() {
        let s = builtin("power").unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let coeffs: Vec<f64> = (0..7).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let mut f = Expression::constant(coeffs[0]);
            for (j, c) in coeffs.iter().enumerate().skip(1) {
                f = Expression::add(
                    &f,
                    &Expression::pow(&Expression::var(), j as f64).scaled(*c),
                );
            }
            for (i, expect) in coeffs.iter().enumerate() {
                let gd = s.generalized_derivative(&f, i).unwrap();
                match gd.value {
                    LimitDecl::Finite(v) => assert!(
                        (v - expect).abs() <= 1e-6 * expect.abs().max(1e-6),
                        "coeff {i}: {v} vs {expect}"
                    ),
                    other => panic!("coeff {i} declared {other:?}"),
                }
            }
        }
    }

    #[test]
    fn multiplicity_bound_examples() {
        let s = scale_of(
            "l",
            0.05,
            &["1", "x*(-log(x))", "x", "x^2*(-log(x))", "x^2"],
        );
        let f = parse("0.5*x").unwrap();
        assert_eq!(
            s.multiplicity_bound(&f).unwrap(),
            MultiplicityBound::Bound {
                k0: 2,
                divergent_below: false
            }
        );

        let s = scale_of("p", 1.0, &["1", "x", "x^2", "x^3"]);
        let f = parse("x^3").unwrap();
        assert_eq!(
            s.multiplicity_bound(&f).unwrap(),
            MultiplicityBound::Bound {
                k0: 3,
                divergent_below: false
            }
        );

        let s = builtin("flat_counterexample").unwrap();
        let f = parse("exp(-1/(3*x))").unwrap();
        assert_eq!(
            s.multiplicity_bound(&f).unwrap(),
            MultiplicityBound::Bound {
                k0: 2,
                divergent_below: true
            }
        );
    }

    #[test]
    fn invert_member_examples() {
        let s = scale_of("p", 1.0, &["1", "x", "x^2"]);
        let x = s.invert_member(2, 0.04).unwrap();
        assert_relative_eq!(x, 0.2, max_relative = 1e-10);

        let s = scale_of("l", 0.35, &["1", "x*(-log(x))", "x"]);
        let y = s.member(1).eval(0.1).unwrap();
        assert_relative_eq!(y, 0.2302585092994046, max_relative = 1e-14);
        let x = s.invert_member(1, y).unwrap();
        assert_relative_eq!(x, 0.1, max_relative = 1e-10);

        let s = builtin("flat_counterexample").unwrap();
        let x = s.invert_member(2, (-10.0f64).exp()).unwrap();
        assert_relative_eq!(x, 1.0 / 30.0, max_relative = 1e-10);
    }

    #[test]
    fn invert_member_errors() {
        let s = scale_of("p", 1.0, &["1", "x", "x^2"]);
        assert!(matches!(
            s.invert_member(2, 2.0),
            Err(ScaleError::OutOfRange { .. })
        ));
        assert!(matches!(
            s.invert_member(0, 0.5),
            Err(ScaleError::NotMonotone { .. })
        ));
    }

    #[test]
    fn invert_round_trip() {
        for name in ["power", "two_sided_log", "flat_counterexample"] {
            let s = builtin(name).unwrap();
            for p in s.invertible_positions() {
                let sup = s.member(p).eval(s.d() * (1.0 - 1e-9)).unwrap();
                let mut y = sup * 0.5;
                while y > sup * 1e-8 {
                    let x = s.invert_member(p, y).unwrap();
                    let back = s.member(p).eval(x).unwrap();
                    assert_relative_eq!(back, y, max_relative = 1e-10);
                    y *= 0.12;
                }
            }
        }
    }

    #[test]
    fn inverse_comparability_properties() {
        // f = x², g = 2x²: inverse ratio constant (lower power condition).
        let f = scale_of("f", 1.0, &["1", "x^2"]);
        let g = scale_of("g", 1.0, &["1", "2*x^2"]);
        let mut band: (f64, f64) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = 1e-2;
        while y >= 1e-10 {
            let r = f.invert_member(1, y).unwrap() / g.invert_member(1, y).unwrap();
            band = (band.0.min(r), band.1.max(r));
            y *= 0.3;
        }
        assert!(band.1 / band.0 <= 4.0, "band {band:?}");

        // f = x², g = x³: f/g → ∞ so f⁻¹/g⁻¹ → 0, monotonically here.
        let g3 = scale_of("g3", 1.0, &["1", "x^3"]);
        let mut prev = f64::INFINITY;
        let mut y = 1e-2;
        while y >= 1e-10 {
            let r = f.invert_member(1, y).unwrap() / g3.invert_member(1, y).unwrap();
            assert!(r < prev, "not monotone at y={y}");
            prev = r;
            y *= 0.3;
        }
        assert!(prev < 0.05);
    }

    #[test]
    fn jacobian_rank_examples() {
        let id3 = |l: &[f64]| Ok(vec![l[0], l[1], l[2]]);
        assert_eq!(jacobian_rank(id3, &[0.0, 0.0, 0.0], 3, 1e-6).unwrap(), 3);

        let dup = |l: &[f64]| Ok(vec![l[0], l[0]]);
        assert_eq!(jacobian_rank(dup, &[0.3, 0.7], 2, 1e-6).unwrap(), 1);

        let sq = |l: &[f64]| Ok(vec![l[0], l[1] * l[1]]);
        assert_eq!(jacobian_rank(sq, &[0.0, 0.0], 2, 1e-9).unwrap(), 1);

        let fail = |_: &[f64]| Err("boom".to_string());
        assert!(matches!(
            jacobian_rank(fail, &[0.0], 1, 1e-6),
            Err(ScaleError::CoeffMap(m)) if m == "boom"
        ));
    }

    #[test]
    fn builtin_scales_parse_and_validate() {
        for name in BUILTIN_SCALES {
            let s = builtin(name).expect(name);
            assert_eq!(s.name(), name);
            let report = s.validate();
            if name == "flat_counterexample" {
                assert!(!report.passed, "flat counterexample must fail validation");
            } else {
                assert!(report.passed, "{name}: {report}");
            }
        }
    }

    #[test]
    fn scale_file_round_trip() {
        let s = builtin("odd_power").unwrap();
        let json = serde_json::to_string(&s.to_file()).unwrap();
        let back = ChebyshevScale::from_json(&json).unwrap();
        assert_eq!(back.index(1), 3);
        assert_eq!(back.len(), 3);
        assert_eq!(back.d(), 1.0);
    }

    #[test]
    fn random_rng_smoke() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v: f64 = rng.gen_range(0.0..1.0);
        assert!((0.0..1.0).contains(&v));
    }
}
