//! Closed-form scalar expressions in variables `x1..xn`.
//!
//! Grammar (parsed by [`Expr::parse`]):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' integer)?
//! base   := number | ident | func '(' expr ')' | '(' expr ')'
//! ident  := 'x' digit+
//! func   := sin | cos | exp | log | sqrt
//! ```
//!
//! Constants are exact rationals; decimal literals parse exactly. A leading
//! unary minus is accepted as a superset of the grammar so that canonical
//! printing round-trips. Simplification is conservative: constant folding and
//! 0/1 identities only.

use crate::scalar::{Coeff, ScalarError};
use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("expression singular at substitution point")]
    SingularAtPoint,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Expr {
    Const(BigRational),
    /// 1-based variable index: `Var(3)` is `x3`.
    Var(usize),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, i64),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Sqrt(Box<Expr>),
}

fn rat_pow(r: &BigRational, k: i64) -> Option<BigRational> {
    if r.is_zero() {
        return if k >= 0 {
            Some(if k == 0 {
                BigRational::one()
            } else {
                BigRational::zero()
            })
        } else {
            None
        };
    }
    let mut acc = BigRational::one();
    let base = if k >= 0 { r.clone() } else { r.recip() };
    for _ in 0..k.unsigned_abs() {
        acc *= &base;
    }
    Some(acc)
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Const(BigRational::from(BigInt::from(v)))
    }

    pub fn ratio(num: i64, den: i64) -> Expr {
        Expr::Const(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn var(axis: usize) -> Expr {
        Expr::Var(axis)
    }

    /// Flattening sum with constant folding and like-term collection:
    /// addends are keyed by their non-constant part and rational
    /// coefficients are merged, so `x - x` folds to 0 structurally.
    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut by_term: BTreeMap<Expr, BigRational> = BTreeMap::new();
        let mut konst = BigRational::zero();
        let take = |t: Expr, by_term: &mut BTreeMap<Expr, BigRational>| {
            let (coeff, key) = match t {
                Expr::Mul(mut inner) => {
                    let coeff = if let Some(Expr::Const(_)) = inner.first() {
                        if let Expr::Const(c) = inner.remove(0) {
                            c
                        } else {
                            unreachable!()
                        }
                    } else {
                        BigRational::one()
                    };
                    let key = match inner.len() {
                        0 => Expr::int(1),
                        1 => inner.pop().unwrap(),
                        _ => Expr::Mul(inner),
                    };
                    (coeff, key)
                }
                other => (BigRational::one(), other),
            };
            let slot = by_term.entry(key.clone()).or_insert_with(BigRational::zero);
            *slot += coeff;
            if slot.is_zero() {
                by_term.remove(&key);
            }
        };
        for t in terms {
            match t {
                Expr::Add(inner) => {
                    for u in inner {
                        match u {
                            Expr::Const(c) => konst += c,
                            other => take(other, &mut by_term),
                        }
                    }
                }
                Expr::Const(c) => konst += c,
                other => take(other, &mut by_term),
            }
        }
        let mut flat: Vec<Expr> = Vec::new();
        if !konst.is_zero() {
            flat.push(Expr::Const(konst));
        }
        for (key, coeff) in by_term {
            if coeff.is_one() {
                flat.push(key);
            } else {
                flat.push(Expr::product(vec![Expr::Const(coeff), key]));
            }
        }
        match flat.len() {
            0 => Expr::int(0),
            1 => flat.pop().unwrap(),
            _ => Expr::Add(flat),
        }
    }

    /// Flattening product with constant folding and base-exponent merging
    /// (`b^a * b^c -> b^{a+c}`), so rational-function factors cancel
    /// structurally; a zero factor annihilates.
    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut by_base: BTreeMap<Expr, i64> = BTreeMap::new();
        let mut konst = BigRational::one();
        let take = |f: Expr, by_base: &mut BTreeMap<Expr, i64>| {
            let (base, exp) = match f {
                Expr::Pow(b, e) => (*b, e),
                other => (other, 1),
            };
            let slot = by_base.entry(base.clone()).or_insert(0);
            *slot += exp;
            if *slot == 0 {
                by_base.remove(&base);
            }
        };
        for f in factors {
            match f {
                Expr::Mul(inner) => {
                    for u in inner {
                        match u {
                            Expr::Const(c) => konst *= c,
                            other => take(other, &mut by_base),
                        }
                    }
                }
                Expr::Const(c) => konst *= c,
                other => take(other, &mut by_base),
            }
        }
        if konst.is_zero() {
            return Expr::int(0);
        }
        let mut flat: Vec<Expr> = Vec::new();
        for (base, exp) in by_base {
            flat.push(Expr::pow(base, exp));
        }
        // exponent merging may have produced new constants (e.g. c^1 * c^-1)
        flat.retain(|f| match f {
            Expr::Const(c) => {
                konst *= c;
                false
            }
            _ => true,
        });
        if konst.is_zero() {
            return Expr::int(0);
        }
        if !konst.is_one() {
            flat.insert(0, Expr::Const(konst));
        }
        match flat.len() {
            0 => Expr::int(1),
            1 => flat.pop().unwrap(),
            _ => Expr::Mul(flat),
        }
    }

    pub fn add2(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, b])
    }

    pub fn mul2(a: Expr, b: Expr) -> Expr {
        Expr::product(vec![a, b])
    }

    pub fn neg1(a: Expr) -> Expr {
        Expr::mul2(Expr::int(-1), a)
    }

    pub fn sub2(a: Expr, b: Expr) -> Expr {
        Expr::add2(a, Expr::neg1(b))
    }

    pub fn div2(a: Expr, b: Expr) -> Expr {
        Expr::mul2(a, Expr::pow(b, -1))
    }

    pub fn pow(base: Expr, exp: i64) -> Expr {
        match (&base, exp) {
            (_, 1) => return base,
            (Expr::Const(c), _) => {
                if let Some(v) = rat_pow(c, exp) {
                    return Expr::Const(v);
                }
                // 0^negative stays symbolic; evaluation reports it
                return Expr::Pow(Box::new(base), exp);
            }
            (_, 0) => return Expr::int(1),
            _ => {}
        }
        if let Expr::Pow(inner, k) = base {
            return Expr::pow(*inner, k * exp);
        }
        Expr::Pow(Box::new(base), exp)
    }

    pub fn sin(e: Expr) -> Expr {
        if e.is_const_zero() {
            return Expr::int(0);
        }
        Expr::Sin(Box::new(e))
    }

    pub fn cos(e: Expr) -> Expr {
        if e.is_const_zero() {
            return Expr::int(1);
        }
        Expr::Cos(Box::new(e))
    }

    pub fn exp(e: Expr) -> Expr {
        if e.is_const_zero() {
            return Expr::int(1);
        }
        Expr::Exp(Box::new(e))
    }

    pub fn log(e: Expr) -> Expr {
        if matches!(&e, Expr::Const(c) if c.is_one()) {
            return Expr::int(0);
        }
        Expr::Log(Box::new(e))
    }

    pub fn sqrt(e: Expr) -> Expr {
        if let Expr::Const(c) = &e {
            if let Ok(r) = c.try_sqrt() {
                return Expr::Const(r);
            }
        }
        Expr::Sqrt(Box::new(e))
    }

    pub fn as_const(&self) -> Option<&BigRational> {
        match self {
            Expr::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if c.is_zero())
    }

    /// Exact partial derivative with respect to `x{axis}`.
    pub fn diff(&self, axis: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::int(0),
            Expr::Var(i) => {
                if *i == axis {
                    Expr::int(1)
                } else {
                    Expr::int(0)
                }
            }
            Expr::Add(terms) => Expr::sum(terms.iter().map(|t| t.diff(axis)).collect()),
            Expr::Mul(factors) => {
                let mut terms = Vec::new();
                for (i, f) in factors.iter().enumerate() {
                    let mut parts: Vec<Expr> = Vec::with_capacity(factors.len());
                    for (j, g) in factors.iter().enumerate() {
                        parts.push(if i == j { f.diff(axis) } else { g.clone() });
                    }
                    terms.push(Expr::product(parts));
                }
                Expr::sum(terms)
            }
            Expr::Pow(b, k) => Expr::product(vec![
                Expr::int(*k),
                Expr::pow((**b).clone(), k - 1),
                b.diff(axis),
            ]),
            Expr::Sin(e) => Expr::mul2(Expr::cos((**e).clone()), e.diff(axis)),
            Expr::Cos(e) => Expr::neg1(Expr::mul2(Expr::sin((**e).clone()), e.diff(axis))),
            Expr::Exp(e) => Expr::mul2(Expr::exp((**e).clone()), e.diff(axis)),
            Expr::Log(e) => Expr::div2(e.diff(axis), (**e).clone()),
            Expr::Sqrt(e) => Expr::div2(
                e.diff(axis),
                Expr::mul2(Expr::int(2), Expr::sqrt((**e).clone())),
            ),
        }
    }

    /// Numeric evaluation; `point[i]` is the value of `x{i+1}`.
    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(c.to_f64().ok_or_else(|| {
                ExprError::Eval("rational constant out of f64 range".into())
            })?),
            Expr::Var(i) => point
                .get(i - 1)
                .copied()
                .ok_or_else(|| ExprError::Eval(format!("x{} beyond point dimension", i))),
            Expr::Add(terms) => {
                let mut acc = 0.0;
                for t in terms {
                    acc += t.eval(point)?;
                }
                Ok(acc)
            }
            Expr::Mul(factors) => {
                let mut acc = 1.0;
                for f in factors {
                    acc *= f.eval(point)?;
                }
                Ok(acc)
            }
            Expr::Pow(b, k) => {
                let base = b.eval(point)?;
                if base == 0.0 && *k < 0 {
                    return Err(ExprError::Eval("zero raised to negative power".into()));
                }
                Ok(base.powi(*k as i32))
            }
            Expr::Sin(e) => Ok(e.eval(point)?.sin()),
            Expr::Cos(e) => Ok(e.eval(point)?.cos()),
            Expr::Exp(e) => Ok(e.eval(point)?.exp()),
            Expr::Log(e) => {
                let v = e.eval(point)?;
                if v <= 0.0 {
                    return Err(ExprError::Eval(format!("log of non-positive value {}", v)));
                }
                Ok(v.ln())
            }
            Expr::Sqrt(e) => {
                let v = e.eval(point)?;
                if v < 0.0 {
                    return Err(ExprError::Eval(format!("sqrt of negative value {}", v)));
                }
                Ok(v.sqrt())
            }
        }
    }

    /// Largest variable index mentioned, 0 if constant.
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => *i,
            Expr::Add(v) | Expr::Mul(v) => v.iter().map(|e| e.max_var()).max().unwrap_or(0),
            Expr::Pow(e, _) => e.max_var(),
            Expr::Sin(e) | Expr::Cos(e) | Expr::Exp(e) | Expr::Log(e) | Expr::Sqrt(e) => {
                e.max_var()
            }
        }
    }

    pub fn depends_on(&self, axis: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == axis,
            Expr::Add(v) | Expr::Mul(v) => v.iter().any(|e| e.depends_on(axis)),
            Expr::Pow(e, _) => e.depends_on(axis),
            Expr::Sin(e) | Expr::Cos(e) | Expr::Exp(e) | Expr::Log(e) | Expr::Sqrt(e) => {
                e.depends_on(axis)
            }
        }
    }

    /// Replace `x{axis}` by `value`, rebuilding through the simplifying
    /// constructors.
    pub fn substitute(&self, axis: usize, value: &Expr) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(i) => {
                if *i == axis {
                    value.clone()
                } else {
                    self.clone()
                }
            }
            Expr::Add(v) => Expr::sum(v.iter().map(|e| e.substitute(axis, value)).collect()),
            Expr::Mul(v) => Expr::product(v.iter().map(|e| e.substitute(axis, value)).collect()),
            Expr::Pow(e, k) => Expr::pow(e.substitute(axis, value), *k),
            Expr::Sin(e) => Expr::sin(e.substitute(axis, value)),
            Expr::Cos(e) => Expr::cos(e.substitute(axis, value)),
            Expr::Exp(e) => Expr::exp(e.substitute(axis, value)),
            Expr::Log(e) => Expr::log(e.substitute(axis, value)),
            Expr::Sqrt(e) => Expr::sqrt(e.substitute(axis, value)),
        }
    }

    fn has_singular_constant(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Add(v) | Expr::Mul(v) => v.iter().any(|e| e.has_singular_constant()),
            Expr::Pow(e, k) => (*k < 0 && e.is_const_zero()) || e.has_singular_constant(),
            Expr::Log(e) => {
                matches!(e.as_const(), Some(c) if !c.is_positive()) || e.has_singular_constant()
            }
            Expr::Sin(e) | Expr::Cos(e) | Expr::Exp(e) | Expr::Sqrt(e) => {
                e.has_singular_constant()
            }
        }
    }

    /// Taylor coefficients in `x{n_axis}` at 0: returns `e_0..e_order` with
    /// `e_j = (d^j e / dx_n^j)|_{x_n=0} / j!`, each an expression in the
    /// remaining variables.
    pub fn taylor_in_normal(&self, n_axis: usize, order: usize) -> Result<Vec<Expr>, ExprError> {
        let mut out = Vec::with_capacity(order + 1);
        let mut current = self.clone();
        let mut factorial = BigRational::one();
        for j in 0..=order {
            if j > 0 {
                current = current.diff(n_axis);
                factorial *= BigRational::from(BigInt::from(j as i64));
            }
            let at_zero = current.substitute(n_axis, &Expr::int(0));
            if at_zero.has_singular_constant() {
                return Err(ExprError::SingularAtPoint);
            }
            out.push(Expr::mul2(
                Expr::Const(factorial.clone().recip()),
                at_zero,
            ));
        }
        Ok(out)
    }

    /// Parse the expression grammar. Errors carry byte offsets.
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            bytes: text.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(ExprError::Syntax {
                offset: p.pos,
                message: "unexpected trailing input".into(),
            });
        }
        Ok(e)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn atom(e: &Expr) -> bool {
            match e {
                Expr::Var(_)
                | Expr::Sin(_)
                | Expr::Cos(_)
                | Expr::Exp(_)
                | Expr::Log(_)
                | Expr::Sqrt(_) => true,
                Expr::Const(c) => !c.is_negative(),
                _ => false,
            }
        }
        fn paren(e: &Expr) -> String {
            if atom(e) {
                format!("{}", e)
            } else {
                format!("({})", e)
            }
        }
        match self {
            Expr::Const(c) => {
                if c.denom().is_one() {
                    write!(f, "{}", c.numer())
                } else {
                    write!(f, "{}/{}", c.numer(), c.denom())
                }
            }
            Expr::Var(i) => write!(f, "x{}", i),
            Expr::Add(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    let s = format!("{}", t);
                    if i == 0 {
                        write!(f, "{}", s)?;
                    } else if let Some(rest) = s.strip_prefix('-') {
                        write!(f, " - {}", rest)?;
                    } else {
                        write!(f, " + {}", s)?;
                    }
                }
                Ok(())
            }
            Expr::Mul(factors) => {
                let mut rest = &factors[..];
                let mut lead = String::new();
                if let Expr::Const(c) = &factors[0] {
                    if *c == -BigRational::one() {
                        lead = "-".into();
                        rest = &factors[1..];
                    }
                }
                let body: Vec<String> = rest
                    .iter()
                    .map(|e| match e {
                        Expr::Pow(_, _) => format!("{}", e),
                        _ => paren_mul(e),
                    })
                    .collect();
                write!(f, "{}{}", lead, body.join("*"))
            }
            Expr::Pow(b, k) => write!(f, "{}^{}", paren(b), k),
            Expr::Sin(e) => write!(f, "sin({})", e),
            Expr::Cos(e) => write!(f, "cos({})", e),
            Expr::Exp(e) => write!(f, "exp({})", e),
            Expr::Log(e) => write!(f, "log({})", e),
            Expr::Sqrt(e) => write!(f, "sqrt({})", e),
        }
    }
}

fn paren_mul(e: &Expr) -> String {
    match e {
        Expr::Add(_) => format!("({})", e),
        Expr::Const(c) if c.is_negative() => format!("({})", e),
        _ => format!("{}", e),
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn err(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    self.skip_ws();
                    let t = self.term()?;
                    acc = Expr::add2(acc, t);
                }
                Some(b'-') => {
                    self.pos += 1;
                    self.skip_ws();
                    let t = self.term()?;
                    acc = Expr::sub2(acc, t);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    self.skip_ws();
                    let t = self.factor()?;
                    acc = Expr::mul2(acc, t);
                }
                Some(b'/') => {
                    self.pos += 1;
                    self.skip_ws();
                    let t = self.factor()?;
                    acc = Expr::div2(acc, t);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let exp = self.integer()?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<i64, ExprError> {
        let mut negative = false;
        if self.peek() == Some(b'-') {
            negative = true;
            self.pos += 1;
        }
        let start = self.pos;
        while self.peek().map_or(false, |b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected integer exponent"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let v: i64 = s
            .parse()
            .map_err(|_| self.err("integer exponent out of range"))?;
        Ok(if negative { -v } else { v })
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'-') => {
                // unary minus: accepted superset of the grammar
                self.pos += 1;
                self.skip_ws();
                let inner = self.factor()?;
                Ok(Expr::neg1(inner))
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(b) if b.is_ascii_digit() => self.number(),
            Some(b) if b.is_ascii_alphabetic() => self.ident_or_func(),
            Some(_) => Err(self.err("expected number, identifier, or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.peek().map_or(false, |b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        let int_part = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let mut value = BigRational::from(int_part.parse::<BigInt>().unwrap());
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let fstart = self.pos;
            while self.peek().map_or(false, |b| b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == fstart {
                return Err(self.err("expected digits after decimal point"));
            }
            let frac = std::str::from_utf8(&self.bytes[fstart..self.pos]).unwrap();
            let numer: BigInt = frac.parse().unwrap();
            let denom = BigInt::from(10u32).pow((self.pos - fstart) as u32);
            value += BigRational::new(numer, denom);
        }
        Ok(Expr::Const(value))
    }

    fn ident_or_func(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .map_or(false, |b| b.is_ascii_alphanumeric())
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if let Some(rest) = name.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let idx: usize = rest.parse().map_err(|_| ExprError::UnknownIdentifier {
                    name: name.into(),
                    offset: start,
                })?;
                if idx == 0 {
                    return Err(ExprError::UnknownIdentifier {
                        name: name.into(),
                        offset: start,
                    });
                }
                return Ok(Expr::Var(idx));
            }
        }
        let func: fn(Expr) -> Expr = match name {
            "sin" => Expr::sin,
            "cos" => Expr::cos,
            "exp" => Expr::exp,
            "log" => Expr::log,
            "sqrt" => Expr::sqrt,
            _ => {
                return Err(ExprError::UnknownIdentifier {
                    name: name.into(),
                    offset: start,
                })
            }
        };
        self.skip_ws();
        if self.peek() != Some(b'(') {
            return Err(self.err("expected `(` after function name"));
        }
        self.pos += 1;
        let arg = self.expr()?;
        self.skip_ws();
        if self.peek() != Some(b')') {
            return Err(self.err("expected `)`"));
        }
        self.pos += 1;
        Ok(func(arg))
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add2(self, rhs)
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub2(self, rhs)
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul2(self, rhs)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg1(self)
    }
}

impl Zero for Expr {
    fn zero() -> Self {
        Expr::int(0)
    }
    fn is_zero(&self) -> bool {
        self.is_const_zero()
    }
}

impl One for Expr {
    fn one() -> Self {
        Expr::int(1)
    }
}

impl Coeff for Expr {
    fn from_ratio(num: i64, den: i64) -> Self {
        Expr::ratio(num, den)
    }

    fn try_div(&self, rhs: &Self) -> Result<Self, ScalarError> {
        if rhs.is_const_zero() {
            return Err(ScalarError::DivisionByZero);
        }
        Ok(Expr::div2(self.clone(), rhs.clone()))
    }

    fn try_sqrt(&self) -> Result<Self, ScalarError> {
        Ok(Expr::sqrt(self.clone()))
    }
}
