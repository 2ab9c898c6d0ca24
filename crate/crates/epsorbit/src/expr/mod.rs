//! Closed-form expressions on `(0, d)` with stable evaluation and exact
//! differentiation.
//!
//! The grammar is fixed to the node set needed by the shipped scales:
//! constants, the variable, sums, products, quotients, real powers, `-log x`,
//! `exp`, and the compensator `ω(·, α)`. It is closed under differentiation,
//! so generalized-derivative chains stay inside the grammar.
//!
//! Products, quotients, powers and `exp` are evaluated in a signed log
//! domain, so intermediate under/overflow cancels whenever the final value is
//! representable (e.g. quotients of huge exponentials evaluate exactly).
//! Expressions are immutable and `Send + Sync`; all operations are pure.

mod parse;

pub use parse::{parse, ParseError};
pub(crate) use parse::{parse_root, ParseOptions};

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Default domain bound for expressions containing `-log` or `ω`: keeps
/// log-power monomials positive and increasing.
pub const LOG_DOMAIN: f64 = 0.36787944117144233; // e^{-1}

const VAR_NAMES: [&str; 2] = ["x", "y"];

#[derive(Debug, Clone)]
pub(crate) enum Node {
    Const(f64),
    Var(usize),
    Add(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    /// Base raised to a fixed real exponent.
    Pow(Arc<Node>, f64),
    /// `u ↦ -log u`.
    NegLog(Arc<Node>),
    Exp(Arc<Node>),
    /// Compensator `ω(u, α) = (u^{-α} - 1)/α`, continuously `-log u` at α = 0.
    Omega(Arc<Node>, f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("argument {x} outside domain (0, {domain})")]
    Domain { x: f64, domain: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(NonFiniteKind),
}

/// What made a sub-node non-finite. `Overflow` is kept separate because limit
/// detection treats a sample that grew out of range as evidence of divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonFiniteKind {
    DivByZero,
    Overflow,
    LogNonPositive,
    NegativeBase,
    Nan,
}

impl fmt::Display for NonFiniteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NonFiniteKind::DivByZero => "quotient by zero",
            NonFiniteKind::Overflow => "overflow",
            NonFiniteKind::LogNonPositive => "log of a non-positive value",
            NonFiniteKind::NegativeBase => "negative base with fractional exponent",
            NonFiniteKind::Nan => "NaN",
        };
        f.write_str(s)
    }
}

/// Value in the signed log domain: `sign · exp(ln)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogVal {
    sign: i8,
    ln: f64,
}

impl LogVal {
    const ZERO: LogVal = LogVal {
        sign: 0,
        ln: f64::NEG_INFINITY,
    };

    fn from_value(v: f64) -> Result<LogVal, EvalError> {
        if v.is_nan() {
            return Err(EvalError::NonFinite(NonFiniteKind::Nan));
        }
        if v.is_infinite() {
            return Err(EvalError::NonFinite(NonFiniteKind::Overflow));
        }
        if v == 0.0 {
            Ok(LogVal::ZERO)
        } else {
            Ok(LogVal {
                sign: if v > 0.0 { 1 } else { -1 },
                ln: v.abs().ln(),
            })
        }
    }

    pub(crate) fn value(self) -> Result<f64, EvalError> {
        if self.sign == 0 {
            return Ok(0.0);
        }
        let m = self.ln.exp();
        if m.is_infinite() {
            return Err(EvalError::NonFinite(NonFiniteKind::Overflow));
        }
        Ok(if self.sign > 0 { m } else { -m })
    }
}

/// Evaluate a node over the signed log domain. `env` holds the variable
/// values (one slot per variable).
pub(crate) fn eval_log(node: &Node, env: &[f64]) -> Result<LogVal, EvalError> {
    match node {
        Node::Const(c) => LogVal::from_value(*c),
        Node::Var(i) => LogVal::from_value(env[*i]),
        Node::Add(a, b) => {
            let la = eval_log(a, env)?;
            let lb = eval_log(b, env)?;
            log_add(la, lb)
        }
        Node::Mul(a, b) => {
            let la = eval_log(a, env)?;
            let lb = eval_log(b, env)?;
            if la.sign == 0 || lb.sign == 0 {
                return Ok(LogVal::ZERO);
            }
            Ok(LogVal {
                sign: la.sign * lb.sign,
                ln: la.ln + lb.ln,
            })
        }
        Node::Div(a, b) => {
            let la = eval_log(a, env)?;
            let lb = eval_log(b, env)?;
            if lb.sign == 0 {
                return Err(EvalError::NonFinite(NonFiniteKind::DivByZero));
            }
            if la.sign == 0 {
                return Ok(LogVal::ZERO);
            }
            Ok(LogVal {
                sign: la.sign * lb.sign,
                ln: la.ln - lb.ln,
            })
        }
        Node::Pow(base, p) => {
            let lb = eval_log(base, env)?;
            if lb.sign == 0 {
                return if *p > 0.0 {
                    Ok(LogVal::ZERO)
                } else if *p == 0.0 {
                    Ok(LogVal { sign: 1, ln: 0.0 })
                } else {
                    Err(EvalError::NonFinite(NonFiniteKind::DivByZero))
                };
            }
            let sign = if lb.sign > 0 {
                1
            } else if p.fract() == 0.0 && p.abs() < 9.0e15 {
                if (*p as i64) % 2 == 0 {
                    1
                } else {
                    -1
                }
            } else {
                return Err(EvalError::NonFinite(NonFiniteKind::NegativeBase));
            };
            Ok(LogVal {
                sign,
                ln: p * lb.ln,
            })
        }
        Node::NegLog(u) => {
            let lu = eval_log(u, env)?;
            if lu.sign <= 0 {
                return Err(EvalError::NonFinite(NonFiniteKind::LogNonPositive));
            }
            LogVal::from_value(-lu.ln)
        }
        Node::Exp(u) => {
            let vu = eval_log(u, env)?.value()?;
            Ok(LogVal { sign: 1, ln: vu })
        }
        Node::Omega(u, alpha) => {
            let lu = eval_log(u, env)?;
            if lu.sign <= 0 {
                return Err(EvalError::NonFinite(NonFiniteKind::LogNonPositive));
            }
            LogVal::from_value(omega_of_ln(lu.ln, *alpha)?)
        }
    }
}

/// Plain IEEE evaluation. Fast and bit-faithful to the written arithmetic,
/// but intermediate under/overflow poisons the result with inf/NaN; callers
/// fall back to the log-domain walk when the outcome is not finite.
fn eval_plain(node: &Node, env: &[f64]) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(i) => env[*i],
        Node::Add(a, b) => eval_plain(a, env) + eval_plain(b, env),
        Node::Mul(a, b) => eval_plain(a, env) * eval_plain(b, env),
        Node::Div(a, b) => eval_plain(a, env) / eval_plain(b, env),
        Node::Pow(u, p) => eval_plain(u, env).powf(*p),
        Node::NegLog(u) => {
            let v = eval_plain(u, env);
            if v > 0.0 {
                -v.ln()
            } else {
                f64::NAN
            }
        }
        Node::Exp(u) => eval_plain(u, env).exp(),
        Node::Omega(u, alpha) => {
            let v = eval_plain(u, env);
            if v > 0.0 {
                omega_of_ln(v.ln(), *alpha).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            }
        }
    }
}

/// Sum of two log-domain values. Uses plain addition when both operands are
/// representable; falls back to log-sum-exp when an operand overflows f64
/// (sums inside deep quotient-rule numerators cancel huge terms).
fn log_add(la: LogVal, lb: LogVal) -> Result<LogVal, EvalError> {
    if la.sign == 0 {
        return Ok(lb);
    }
    if lb.sign == 0 {
        return Ok(la);
    }
    let (hi, lo) = if la.ln >= lb.ln { (la, lb) } else { (lb, la) };
    // Plain addition while the dominant operand is comfortably inside the
    // normal f64 range; log-sum-exp otherwise (plain values would flush to
    // 0 or inf and poison signs downstream).
    if hi.ln.abs() < 650.0 {
        let va = la.value()?;
        let vb = lb.value()?;
        return LogVal::from_value(va + vb);
    }
    let delta = lo.ln - hi.ln; // <= 0
    if hi.sign == lo.sign {
        Ok(LogVal {
            sign: hi.sign,
            ln: hi.ln + delta.exp().ln_1p(),
        })
    } else if delta == 0.0 {
        Ok(LogVal::ZERO)
    } else {
        Ok(LogVal {
            sign: hi.sign,
            ln: hi.ln + (-delta.exp_m1()).ln(),
        })
    }
}

/// ω from the log of its argument: `(exp(-α·ln u) - 1)/α`, `-ln u` at α = 0.
/// The `expm1` form is exact and stays continuous through α = 0.
fn omega_of_ln(ln_u: f64, alpha: f64) -> Result<f64, EvalError> {
    if alpha == 0.0 {
        return Ok(-ln_u);
    }
    let t = (-alpha * ln_u).exp_m1();
    if t.is_infinite() {
        return Err(EvalError::NonFinite(NonFiniteKind::Overflow));
    }
    Ok(t / alpha)
}

fn eval_plain_memo(node: &Arc<Node>, env: &[f64], cache: &mut HashMap<usize, f64>) -> f64 {
    let key = Arc::as_ptr(node) as usize;
    if let Some(hit) = cache.get(&key) {
        return *hit;
    }
    let v = match node.as_ref() {
        Node::Add(a, b) => eval_plain_memo(a, env, cache) + eval_plain_memo(b, env, cache),
        Node::Mul(a, b) => eval_plain_memo(a, env, cache) * eval_plain_memo(b, env, cache),
        Node::Div(a, b) => eval_plain_memo(a, env, cache) / eval_plain_memo(b, env, cache),
        Node::Pow(u, p) => eval_plain_memo(u, env, cache).powf(*p),
        _ => eval_plain(node, env),
    };
    cache.insert(key, v);
    v
}

/// Memoized variant of [`eval_log`] for DAG-shaped trees (generalized
/// derivative chains share subtrees heavily). Keyed by node address; valid
/// for a single `env`.
pub(crate) fn eval_log_memo(
    node: &Arc<Node>,
    env: &[f64],
    cache: &mut HashMap<usize, Result<LogVal, EvalError>>,
) -> Result<LogVal, EvalError> {
    let key = Arc::as_ptr(node) as usize;
    if let Some(hit) = cache.get(&key) {
        return hit.clone();
    }
    let out = eval_log_memo_inner(node, env, cache);
    cache.insert(key, out.clone());
    out
}

fn eval_log_memo_inner(
    node: &Arc<Node>,
    env: &[f64],
    cache: &mut HashMap<usize, Result<LogVal, EvalError>>,
) -> Result<LogVal, EvalError> {
    match node.as_ref() {
        Node::Const(_) | Node::Var(_) => eval_log(node, env),
        Node::Add(a, b) => {
            let la = eval_log_memo(a, env, cache)?;
            let lb = eval_log_memo(b, env, cache)?;
            log_add(la, lb)
        }
        Node::Mul(a, b) => {
            let la = eval_log_memo(a, env, cache)?;
            let lb = eval_log_memo(b, env, cache)?;
            if la.sign == 0 || lb.sign == 0 {
                return Ok(LogVal::ZERO);
            }
            Ok(LogVal {
                sign: la.sign * lb.sign,
                ln: la.ln + lb.ln,
            })
        }
        Node::Div(a, b) => {
            let la = eval_log_memo(a, env, cache)?;
            let lb = eval_log_memo(b, env, cache)?;
            if lb.sign == 0 {
                return Err(EvalError::NonFinite(NonFiniteKind::DivByZero));
            }
            if la.sign == 0 {
                return Ok(LogVal::ZERO);
            }
            Ok(LogVal {
                sign: la.sign * lb.sign,
                ln: la.ln - lb.ln,
            })
        }
        Node::Pow(base, p) => {
            let lb = eval_log_memo(base, env, cache)?;
            if lb.sign == 0 {
                return if *p > 0.0 {
                    Ok(LogVal::ZERO)
                } else if *p == 0.0 {
                    Ok(LogVal { sign: 1, ln: 0.0 })
                } else {
                    Err(EvalError::NonFinite(NonFiniteKind::DivByZero))
                };
            }
            let sign = if lb.sign > 0 {
                1
            } else if p.fract() == 0.0 && p.abs() < 9.0e15 {
                if (*p as i64) % 2 == 0 {
                    1
                } else {
                    -1
                }
            } else {
                return Err(EvalError::NonFinite(NonFiniteKind::NegativeBase));
            };
            Ok(LogVal {
                sign,
                ln: p * lb.ln,
            })
        }
        Node::NegLog(u) => {
            let lu = eval_log_memo(u, env, cache)?;
            if lu.sign <= 0 {
                return Err(EvalError::NonFinite(NonFiniteKind::LogNonPositive));
            }
            LogVal::from_value(-lu.ln)
        }
        Node::Exp(u) => {
            let vu = eval_log_memo(u, env, cache)?.value()?;
            Ok(LogVal { sign: 1, ln: vu })
        }
        Node::Omega(u, alpha) => {
            let lu = eval_log_memo(u, env, cache)?;
            if lu.sign <= 0 {
                return Err(EvalError::NonFinite(NonFiniteKind::LogNonPositive));
            }
            LogVal::from_value(omega_of_ln(lu.ln, *alpha)?)
        }
    }
}

// ---------------------------------------------------------------------------
// smart constructors
// ---------------------------------------------------------------------------

pub(crate) fn c_const(c: f64) -> Arc<Node> {
    Arc::new(Node::Const(c))
}

pub(crate) fn c_add(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    match (a.as_ref(), b.as_ref()) {
        (Node::Const(x), Node::Const(y)) => c_const(x + y),
        (Node::Const(x), _) if *x == 0.0 => b,
        (_, Node::Const(y)) if *y == 0.0 => a,
        _ => Arc::new(Node::Add(a, b)),
    }
}

pub(crate) fn c_mul(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    // Pull constants to the left so (-1)·(-1)·e folds away.
    let (a, b) = if matches!(b.as_ref(), Node::Const(_)) && !matches!(a.as_ref(), Node::Const(_)) {
        (b, a)
    } else {
        (a, b)
    };
    match (a.as_ref(), b.as_ref()) {
        (Node::Const(x), Node::Const(y)) => c_const(x * y),
        (Node::Const(x), _) if *x == 0.0 => c_const(0.0),
        (Node::Const(x), _) if *x == 1.0 => b,
        (Node::Const(x), Node::Mul(l, r)) => {
            if let Node::Const(y) = l.as_ref() {
                c_mul(c_const(x * y), r.clone())
            } else {
                Arc::new(Node::Mul(a, b))
            }
        }
        _ => Arc::new(Node::Mul(a, b)),
    }
}

pub(crate) fn c_div(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    match (a.as_ref(), b.as_ref()) {
        (Node::Const(x), _) if *x == 0.0 => c_const(0.0),
        (_, Node::Const(y)) if *y == 1.0 => a,
        (Node::Const(x), Node::Const(y)) if *y != 0.0 => c_const(x / y),
        _ => Arc::new(Node::Div(a, b)),
    }
}

pub(crate) fn c_pow(base: Arc<Node>, p: f64) -> Arc<Node> {
    if p == 0.0 {
        return c_const(1.0);
    }
    if p == 1.0 {
        return base;
    }
    if let Node::Const(c) = base.as_ref() {
        if *c > 0.0 {
            return c_const(c.powf(p));
        }
    }
    Arc::new(Node::Pow(base, p))
}

fn c_neg(a: Arc<Node>) -> Arc<Node> {
    c_mul(c_const(-1.0), a)
}

fn c_sub(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    c_add(a, c_neg(b))
}

/// Derivative of a node DAG with respect to `Var(0)`, memoized so shared
/// subtrees differentiate once and the result stays a compact DAG.
pub(crate) fn diff_node(node: &Arc<Node>, memo: &mut HashMap<usize, Arc<Node>>) -> Arc<Node> {
    let key = Arc::as_ptr(node) as usize;
    if let Some(hit) = memo.get(&key) {
        return hit.clone();
    }
    let d = match node.as_ref() {
        Node::Const(_) => c_const(0.0),
        Node::Var(_) => c_const(1.0),
        Node::Add(a, b) => c_add(diff_node(a, memo), diff_node(b, memo)),
        Node::Mul(a, b) => c_add(
            c_mul(diff_node(a, memo), b.clone()),
            c_mul(a.clone(), diff_node(b, memo)),
        ),
        Node::Div(a, b) => c_div(
            c_sub(
                c_mul(diff_node(a, memo), b.clone()),
                c_mul(a.clone(), diff_node(b, memo)),
            ),
            c_mul(b.clone(), b.clone()),
        ),
        Node::Pow(u, p) => c_mul(
            c_mul(c_const(*p), c_pow(u.clone(), p - 1.0)),
            diff_node(u, memo),
        ),
        Node::NegLog(u) => c_neg(c_div(diff_node(u, memo), u.clone())),
        Node::Exp(u) => c_mul(node.clone(), diff_node(u, memo)),
        // dω(u,α)/du = -u^{-α-1}, uniformly in α.
        Node::Omega(u, alpha) => c_mul(c_neg(c_pow(u.clone(), -alpha - 1.0)), diff_node(u, memo)),
    };
    memo.insert(key, d.clone());
    d
}

// ---------------------------------------------------------------------------
// Expression
// ---------------------------------------------------------------------------

/// A univariate closed-form function on `(0, d)`.
///
/// Immutable after construction; cloning is cheap (the tree is shared).
#[derive(Debug, Clone)]
pub struct Expression {
    root: Arc<Node>,
    domain: f64,
}

impl Expression {
    pub(crate) fn from_root(root: Arc<Node>) -> Expression {
        let domain = if node_caps_domain(&root) {
            LOG_DOMAIN
        } else {
            1.0
        };
        Expression { root, domain }
    }

    /// Upper end of the validity interval `(0, d)`.
    pub fn domain(&self) -> f64 {
        self.domain
    }

    /// Same expression with an explicit domain bound.
    pub fn with_domain(mut self, d: f64) -> Expression {
        assert!(d > 0.0, "domain bound must be positive");
        self.domain = d;
        self
    }

    pub fn constant(c: f64) -> Expression {
        Expression {
            root: c_const(c),
            domain: f64::INFINITY,
        }
    }

    pub fn var() -> Expression {
        Expression {
            root: Arc::new(Node::Var(0)),
            domain: 1.0,
        }
    }

    pub fn add(a: &Expression, b: &Expression) -> Expression {
        Expression {
            root: c_add(a.root.clone(), b.root.clone()),
            domain: a.domain.min(b.domain),
        }
    }

    pub fn mul(a: &Expression, b: &Expression) -> Expression {
        Expression {
            root: c_mul(a.root.clone(), b.root.clone()),
            domain: a.domain.min(b.domain),
        }
    }

    pub fn div(a: &Expression, b: &Expression) -> Expression {
        Expression {
            root: c_div(a.root.clone(), b.root.clone()),
            domain: a.domain.min(b.domain),
        }
    }

    pub fn pow(base: &Expression, p: f64) -> Expression {
        Expression {
            root: c_pow(base.root.clone(), p),
            domain: base.domain,
        }
    }

    pub fn neglog(u: &Expression) -> Expression {
        Expression {
            root: Arc::new(Node::NegLog(u.root.clone())),
            domain: u.domain.min(LOG_DOMAIN),
        }
    }

    pub fn exp(u: &Expression) -> Expression {
        Expression {
            root: Arc::new(Node::Exp(u.root.clone())),
            domain: u.domain,
        }
    }

    pub fn omega(u: &Expression, alpha: f64) -> Expression {
        Expression {
            root: Arc::new(Node::Omega(u.root.clone(), alpha)),
            domain: u.domain,
        }
    }

    /// Scale by a positive constant, keeping the domain.
    pub fn scaled(&self, c: f64) -> Expression {
        Expression {
            root: c_mul(c_const(c), self.root.clone()),
            domain: self.domain,
        }
    }

    /// Value at `x ∈ (0, d)`. Plain IEEE arithmetic when it stays finite;
    /// log-domain otherwise (so representable values survive intermediate
    /// under/overflow, e.g. `x^(-2)*x^3` deep in the domain).
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        if !(x > 0.0 && x < self.domain) {
            return Err(EvalError::Domain {
                x,
                domain: self.domain,
            });
        }
        let plain = eval_plain(&self.root, &[x]);
        if plain.is_finite() {
            return Ok(plain);
        }
        eval_log(&self.root, &[x])?.value()
    }

    /// Memoized evaluation; worthwhile for DAG-shaped derivative chains.
    pub(crate) fn eval_memo(&self, x: f64) -> Result<f64, EvalError> {
        if !(x > 0.0 && x < self.domain) {
            return Err(EvalError::Domain {
                x,
                domain: self.domain,
            });
        }
        let plain = eval_plain_memo(&self.root, &[x], &mut HashMap::new());
        if plain.is_finite() {
            return Ok(plain);
        }
        let mut cache = HashMap::new();
        eval_log_memo(&self.root, &[x], &mut cache)?.value()
    }

    /// Sign and log-magnitude at `x`. Robust where the plain value would
    /// under- or overflow (flat members like `exp(-1/x)` deep in the domain).
    pub(crate) fn eval_sign_ln(&self, x: f64) -> Result<(i8, f64), EvalError> {
        if !(x > 0.0 && x < self.domain) {
            return Err(EvalError::Domain {
                x,
                domain: self.domain,
            });
        }
        let mut cache = HashMap::new();
        let lv = eval_log_memo(&self.root, &[x], &mut cache)?;
        Ok((lv.sign, lv.ln))
    }

    /// Exact derivative within the grammar; the domain hint carries over.
    pub fn differentiate(&self) -> Expression {
        let mut memo = HashMap::new();
        Expression {
            root: diff_node(&self.root, &mut memo),
            domain: self.domain,
        }
    }

    /// Value of the subtree if it contains no variable.
    pub fn constant_value(&self) -> Option<f64> {
        const_value(&self.root)
    }
}

/// Two-variable evaluation for the planar-field grammar.
pub(crate) fn eval_field(root: &Arc<Node>, x: f64, y: f64) -> Result<f64, EvalError> {
    let env = [x, y];
    let plain = eval_plain(root, &env);
    if plain.is_finite() {
        return Ok(plain);
    }
    eval_log(root, &env)?.value()
}

fn node_caps_domain(node: &Node) -> bool {
    match node {
        Node::NegLog(_) => true,
        Node::Const(_) | Node::Var(_) | Node::Omega(..) => false,
        Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            node_caps_domain(a) || node_caps_domain(b)
        }
        Node::Pow(u, _) | Node::Exp(u) => node_caps_domain(u),
    }
}

pub(crate) fn const_value(node: &Node) -> Option<f64> {
    match node {
        Node::Const(c) => Some(*c),
        Node::Var(_) => None,
        Node::Add(a, b) => Some(const_value(a)? + const_value(b)?),
        Node::Mul(a, b) => Some(const_value(a)? * const_value(b)?),
        Node::Div(a, b) => {
            let d = const_value(b)?;
            if d == 0.0 {
                None
            } else {
                Some(const_value(a)? / d)
            }
        }
        Node::Pow(u, p) => Some(const_value(u)?.powf(*p)),
        Node::NegLog(u) => {
            let v = const_value(u)?;
            if v > 0.0 {
                Some(-v.ln())
            } else {
                None
            }
        }
        Node::Exp(u) => Some(const_value(u)?.exp()),
        Node::Omega(u, alpha) => {
            let v = const_value(u)?;
            if v > 0.0 {
                omega_of_ln(v.ln(), *alpha).ok()
            } else {
                None
            }
        }
    }
}

impl std::str::FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

// ---------------------------------------------------------------------------
// display (round-trips through the parser)
// ---------------------------------------------------------------------------

fn fmt_node(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Const(c) => {
            if *c < 0.0 {
                write!(f, "({c})")
            } else {
                write!(f, "{c}")
            }
        }
        Node::Var(i) => f.write_str(VAR_NAMES[*i]),
        Node::Add(a, b) => {
            fmt_node(a, f)?;
            f.write_str(" + ")?;
            fmt_node(b, f)
        }
        Node::Mul(a, b) => {
            if let Node::Const(c) = a.as_ref() {
                if *c == -1.0 {
                    f.write_str("-")?;
                    return fmt_factor(b, f);
                }
            }
            fmt_factor(a, f)?;
            f.write_str("*")?;
            fmt_factor(b, f)
        }
        Node::Div(a, b) => {
            fmt_factor(a, f)?;
            f.write_str("/")?;
            fmt_factor(b, f)
        }
        Node::Pow(u, p) => {
            match u.as_ref() {
                Node::Var(_) => fmt_node(u, f)?,
                _ => {
                    f.write_str("(")?;
                    fmt_node(u, f)?;
                    f.write_str(")")?;
                }
            }
            if *p < 0.0 {
                write!(f, "^({p})")
            } else {
                write!(f, "^{p}")
            }
        }
        Node::NegLog(u) => {
            f.write_str("(-log(")?;
            fmt_node(u, f)?;
            f.write_str("))")
        }
        Node::Exp(u) => {
            f.write_str("exp(")?;
            fmt_node(u, f)?;
            f.write_str(")")
        }
        Node::Omega(u, alpha) => {
            f.write_str("omega(")?;
            fmt_node(u, f)?;
            write!(f, ",{alpha})")
        }
    }
}

fn fmt_factor(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Add(..) | Node::Div(..) | Node::Mul(..) => {
            f.write_str("(")?;
            fmt_node(node, f)?;
            f.write_str(")")
        }
        _ => fmt_node(node, f),
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_node(&self.root, f)
    }
}

// ---------------------------------------------------------------------------
// log-derivative range
// ---------------------------------------------------------------------------

/// Range of `x·(log e)'(x)` over a geometric grid, with the power-condition
/// flags attached.
#[derive(Debug, Clone)]
pub struct LogDerivativeRange {
    pub min: f64,
    pub max: f64,
    /// Lower power condition with constant > 1.
    pub sublinear: bool,
    /// Upper power condition plausible: finite max and no monotone divergence
    /// toward the lower end of the grid.
    pub upper_power_ok: bool,
    pub samples: Vec<(f64, f64)>,
}

/// Samples `x·e'(x)/e(x)` on an `n`-point geometric grid over `[x_lo, x_hi]`.
///
/// `e` must be positive on the grid; errors with
/// [`EvalError::NonFinite`]`(LogNonPositive)` otherwise.
pub fn log_derivative_range(
    e: &Expression,
    x_lo: f64,
    x_hi: f64,
    n: usize,
) -> Result<LogDerivativeRange, EvalError> {
    assert!(n >= 2 && x_lo > 0.0 && x_lo < x_hi, "bad grid");
    // e'/e as one quotient so log-domain evaluation cancels flat factors
    // (e = exp(-1/x) underflows at small x; the ratio does not).
    let ratio_expr = Expression::div(&e.differentiate(), e);
    let ratio = (x_hi / x_lo).powf(1.0 / (n - 1) as f64);
    let mut samples = Vec::with_capacity(n);
    let mut x = x_lo;
    for k in 0..n {
        let (sign, _) = e.eval_sign_ln(x)?;
        if sign <= 0 {
            return Err(EvalError::NonFinite(NonFiniteKind::LogNonPositive));
        }
        let d = ratio_expr.eval_memo(x)?;
        samples.push((x, x * d));
        x = if k + 1 == n - 1 { x_hi } else { x * ratio };
    }
    let min = samples
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let max = samples
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    // Divergence toward x_lo: strictly increasing over the lower half of the
    // grid (as x decreases) and at least doubling across it.
    let half = n / 2;
    let lower: Vec<f64> = samples[..half.max(2)].iter().map(|&(_, v)| v).collect();
    let mut increasing_toward_lo = true;
    for w in lower.windows(2) {
        if w[0] <= w[1] {
            increasing_toward_lo = false;
            break;
        }
    }
    let diverges = increasing_toward_lo
        && lower.first().copied().unwrap_or(0.0) >= 2.0 * lower.last().copied().unwrap_or(0.0)
        && lower.last().copied().unwrap_or(0.0) > 0.0;
    Ok(LogDerivativeRange {
        min,
        max,
        sublinear: min > 1.0,
        upper_power_ok: max.is_finite() && !diverges,
        samples,
    })
}
