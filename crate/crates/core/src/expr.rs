//! Polynomial expressions over `ξ₁`, `ξ₂`, `κ` with complex coefficients.
//!
//! Expressions are immutable trees. Evaluation is total (there is no division
//! node), symbolic differentiation is exact, and `Display` output parses back
//! to an equivalent tree.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geom::{Window, P2};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Independent variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Xi1,
    Xi2,
    Kappa,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::Xi1 => "xi1",
            Var::Xi2 => "xi2",
            Var::Kappa => "kappa",
        }
    }
}

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(C64),
    Var(Var),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Pow(Box<Expr>, u32),
    Neg(Box<Expr>),
}

impl Expr {
    pub fn real(v: f64) -> Self {
        Expr::Const(C64::new(v, 0.0))
    }

    pub fn zero() -> Self {
        Expr::real(0.0)
    }

    pub fn one() -> Self {
        Expr::real(1.0)
    }

    pub fn var(v: Var) -> Self {
        Expr::Var(v)
    }

    fn as_const(&self) -> Option<C64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(C64::new(0.0, 0.0))
    }

    /// Sum with constant folding and flattening.
    pub fn sum(terms: Vec<Expr>) -> Self {
        let mut acc = C64::new(0.0, 0.0);
        let mut out = Vec::with_capacity(terms.len());
        for t in terms {
            match t {
                Expr::Const(c) => acc += c,
                Expr::Sum(inner) => {
                    for u in inner {
                        match u {
                            Expr::Const(c) => acc += c,
                            u => out.push(u),
                        }
                    }
                }
                t => out.push(t),
            }
        }
        if acc != C64::new(0.0, 0.0) || out.is_empty() {
            out.push(Expr::Const(acc));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Expr::Sum(out)
        }
    }

    /// Product with constant folding and flattening.
    pub fn product(factors: Vec<Expr>) -> Self {
        let mut acc = C64::new(1.0, 0.0);
        let mut out = Vec::with_capacity(factors.len());
        for f in factors {
            match f {
                Expr::Const(c) => acc *= c,
                Expr::Product(inner) => {
                    for u in inner {
                        match u {
                            Expr::Const(c) => acc *= c,
                            u => out.push(u),
                        }
                    }
                }
                f => out.push(f),
            }
        }
        if acc == C64::new(0.0, 0.0) {
            return Expr::zero();
        }
        if acc != C64::new(1.0, 0.0) || out.is_empty() {
            out.insert(0, Expr::Const(acc));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Expr::Product(out)
        }
    }

    pub fn pow(base: Expr, n: u32) -> Self {
        match (n, &base) {
            (0, _) => Expr::one(),
            (1, _) => base,
            (_, Expr::Const(c)) => Expr::Const(c.powu(n)),
            _ => Expr::Pow(Box::new(base), n),
        }
    }

    pub fn neg(e: Expr) -> Self {
        match e {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            e => Expr::Neg(Box::new(e)),
        }
    }

    /// Evaluates at a complex point.
    pub fn eval(&self, xi1: C64, xi2: C64, kappa: C64) -> C64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::Xi1) => xi1,
            Expr::Var(Var::Xi2) => xi2,
            Expr::Var(Var::Kappa) => kappa,
            Expr::Sum(ts) => ts.iter().map(|t| t.eval(xi1, xi2, kappa)).sum(),
            Expr::Product(fs) => fs.iter().map(|f| f.eval(xi1, xi2, kappa)).product(),
            Expr::Pow(b, n) => b.eval(xi1, xi2, kappa).powu(*n),
            Expr::Neg(e) => -e.eval(xi1, xi2, kappa),
        }
    }

    /// Evaluates at a real point with `κ = 0`.
    pub fn eval_real(&self, p: P2) -> C64 {
        self.eval(C64::new(p[0], 0.0), C64::new(p[1], 0.0), C64::new(0.0, 0.0))
    }

    /// Exact symbolic derivative.
    pub fn diff(&self, v: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Sum(ts) => Expr::sum(ts.iter().map(|t| t.diff(v)).collect()),
            Expr::Product(fs) => {
                let mut terms = Vec::new();
                for k in 0..fs.len() {
                    let dk = fs[k].diff(v);
                    if dk.is_zero() {
                        continue;
                    }
                    let mut fac: Vec<Expr> = Vec::with_capacity(fs.len());
                    for (j, f) in fs.iter().enumerate() {
                        fac.push(if j == k { dk.clone() } else { f.clone() });
                    }
                    terms.push(Expr::product(fac));
                }
                Expr::sum(terms)
            }
            Expr::Pow(b, n) => {
                let db = b.diff(v);
                if *n == 0 || db.is_zero() {
                    return Expr::zero();
                }
                Expr::product(vec![
                    Expr::real(*n as f64),
                    Expr::pow((**b).clone(), n - 1),
                    db,
                ])
            }
            Expr::Neg(e) => Expr::neg(e.diff(v)),
        }
    }

    /// Whether the variable occurs in the tree.
    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Sum(xs) | Expr::Product(xs) => xs.iter().any(|x| x.depends_on(v)),
            Expr::Pow(b, _) | Expr::Neg(b) => b.depends_on(v),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Sum(_) => 1,
            Expr::Product(_) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if c.im == 0.0 && c.re.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

fn fmt_real(v: f64) -> String {
    // `{:?}` is the shortest representation that round-trips exactly.
    let s = format!("{v:?}");
    s.replace("inf", "1e999")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.im == 0.0 {
                    write!(f, "{}", fmt_real(c.re))
                } else if c.re == 0.0 {
                    write!(f, "({}*i)", fmt_real(c.im))
                } else {
                    write!(f, "({} + {}*i)", fmt_real(c.re), fmt_real(c.im))
                }
            }
            Expr::Var(v) => write!(f, "{}", v.name()),
            Expr::Sum(ts) => {
                for (k, t) in ts.iter().enumerate() {
                    if k > 0 {
                        write!(f, " + ")?;
                    }
                    t.fmt_child(f, 2)?;
                }
                Ok(())
            }
            Expr::Product(fs) => {
                for (k, x) in fs.iter().enumerate() {
                    if k > 0 {
                        write!(f, "*")?;
                    }
                    x.fmt_child(f, 3)?;
                }
                Ok(())
            }
            Expr::Pow(b, n) => {
                b.fmt_child(f, 5)?;
                write!(f, "^{n}")
            }
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_child(f, 3)
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_expression(s)
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let (pos, c) = chars[k];
        match c {
            c if c.is_whitespace() => k += 1,
            '+' => {
                out.push((pos, Tok::Plus));
                k += 1;
            }
            '-' | '\u{2212}' => {
                out.push((pos, Tok::Minus));
                k += 1;
            }
            '*' => {
                out.push((pos, Tok::Star));
                k += 1;
            }
            '^' => {
                out.push((pos, Tok::Caret));
                k += 1;
            }
            '(' => {
                out.push((pos, Tok::LParen));
                k += 1;
            }
            ')' => {
                out.push((pos, Tok::RParen));
                k += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = k;
                while k < chars.len() && (chars[k].1.is_ascii_digit() || chars[k].1 == '.') {
                    k += 1;
                }
                if k < chars.len() && matches!(chars[k].1, 'e' | 'E') {
                    let mut j = k + 1;
                    if j < chars.len() && matches!(chars[j].1, '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        k = j;
                        while k < chars.len() && chars[k].1.is_ascii_digit() {
                            k += 1;
                        }
                    }
                }
                let lit: String = chars[start..k].iter().map(|(_, c)| *c).collect();
                let v: f64 = lit.parse().map_err(|_| Error::Syntax {
                    pos,
                    msg: format!("malformed number `{lit}`"),
                })?;
                out.push((pos, Tok::Num(v)));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = k;
                while k < chars.len() && (chars[k].1.is_ascii_alphanumeric() || chars[k].1 == '_') {
                    k += 1;
                }
                let id: String = chars[start..k].iter().map(|(_, c)| *c).collect();
                out.push((pos, Tok::Ident(id)));
            }
            c => {
                return Err(Error::Syntax {
                    pos,
                    msg: format!("unexpected character `{c}`"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    k: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.k).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.k).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.k += 1;
                    terms.push(self.term()?);
                }
                Some(Tok::Minus) => {
                    self.k += 1;
                    terms.push(Expr::neg(self.term()?));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::Sum(terms)
        })
    }

    fn term(&mut self) -> Result<Expr> {
        let mut fs = vec![self.unary()?];
        while let Some(Tok::Star) = self.peek() {
            self.k += 1;
            fs.push(self.unary()?);
        }
        Ok(if fs.len() == 1 {
            fs.pop().unwrap()
        } else {
            Expr::Product(fs)
        })
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.k += 1;
                Ok(Expr::neg(self.unary()?))
            }
            Some(Tok::Plus) => {
                self.k += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.k += 1;
            let pos = self.pos();
            let paren = matches!(self.peek(), Some(Tok::LParen));
            if paren {
                self.k += 1;
            }
            let n = match self.peek() {
                Some(Tok::Num(v)) if *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64 => {
                    *v as u32
                }
                Some(Tok::Minus) => {
                    return Err(Error::Syntax {
                        pos,
                        msg: "negative exponents are not allowed inside expressions".into(),
                    })
                }
                _ => {
                    return Err(Error::Syntax {
                        pos,
                        msg: "exponent must be a non-negative integer literal".into(),
                    })
                }
            };
            self.k += 1;
            if paren {
                self.expect_rparen()?;
            }
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.k += 1;
                Ok(())
            }
            _ => Err(Error::Syntax {
                pos: self.pos(),
                msg: "expected `)`".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.k += 1;
                Ok(Expr::real(v))
            }
            Some(Tok::Ident(id)) => {
                self.k += 1;
                match id.as_str() {
                    "xi1" => Ok(Expr::Var(Var::Xi1)),
                    "xi2" => Ok(Expr::Var(Var::Xi2)),
                    "kappa" => Ok(Expr::Var(Var::Kappa)),
                    "i" => Ok(Expr::Const(I)),
                    _ => Err(Error::UnknownIdentifier { pos, name: id }),
                }
            }
            Some(Tok::LParen) => {
                self.k += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(t) => Err(Error::Syntax {
                pos,
                msg: format!("unexpected token {t:?}"),
            }),
            None => Err(Error::Syntax {
                pos,
                msg: "unexpected end of input".into(),
            }),
        }
    }
}

/// Parses an arithmetic expression over `xi1`, `xi2`, `kappa` and `i`.
pub fn parse_expression(text: &str) -> Result<Expr> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        k: 0,
        end: text.len(),
    };
    let e = p.expr()?;
    if p.k < p.toks.len() {
        return Err(Error::Syntax {
            pos: p.pos(),
            msg: "trailing input".into(),
        });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Jets

/// Value, first derivatives and the ξ-Hessian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: C64,
    pub d_xi1: C64,
    pub d_xi2: C64,
    pub d_kappa: C64,
    pub hessian: [[C64; 2]; 2],
}

/// An expression with its first and second symbolic derivatives precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    pub expr: Expr,
    d1: Expr,
    d2: Expr,
    dk: Expr,
    h11: Expr,
    h12: Expr,
    h22: Expr,
}

impl CompiledExpr {
    pub fn new(expr: Expr) -> Self {
        let d1 = expr.diff(Var::Xi1);
        let d2 = expr.diff(Var::Xi2);
        let dk = expr.diff(Var::Kappa);
        let h11 = d1.diff(Var::Xi1);
        let h12 = d1.diff(Var::Xi2);
        let h22 = d2.diff(Var::Xi2);
        Self {
            expr,
            d1,
            d2,
            dk,
            h11,
            h12,
            h22,
        }
    }

    pub fn value(&self, xi: [C64; 2], kappa: C64) -> C64 {
        self.expr.eval(xi[0], xi[1], kappa)
    }

    pub fn gradient(&self, xi: [C64; 2], kappa: C64) -> [C64; 2] {
        [
            self.d1.eval(xi[0], xi[1], kappa),
            self.d2.eval(xi[0], xi[1], kappa),
        ]
    }

    pub fn jet(&self, xi: [C64; 2], kappa: C64) -> Jet {
        let (x, y) = (xi[0], xi[1]);
        let h12 = self.h12.eval(x, y, kappa);
        Jet {
            value: self.expr.eval(x, y, kappa),
            d_xi1: self.d1.eval(x, y, kappa),
            d_xi2: self.d2.eval(x, y, kappa),
            d_kappa: self.dk.eval(x, y, kappa),
            hessian: [
                [self.h11.eval(x, y, kappa), h12],
                [h12, self.h22.eval(x, y, kappa)],
            ],
        }
    }

    /// True when the ξ-Hessian is identically zero (affine in ξ).
    pub fn is_affine(&self) -> bool {
        self.h11.is_zero() && self.h12.is_zero() && self.h22.is_zero()
    }
}

/// Exact value, gradient, κ-derivative and ξ-Hessian of `e` at a point.
pub fn evaluate_jet(e: &Expr, xi: [C64; 2], kappa: C64) -> Jet {
    CompiledExpr::new(e.clone()).jet(xi, kappa)
}

// ---------------------------------------------------------------------------
// Components and models

/// Whether the singularity is a pole or a branch set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Pole,
    Branch,
}

/// One irreducible singular set `{g = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularComponent {
    pub id: String,
    pub kind: ComponentKind,
    pub g: CompiledExpr,
}

fn real_pt(p: P2) -> [C64; 2] {
    [C64::new(p[0], 0.0), C64::new(p[1], 0.0)]
}

impl SingularComponent {
    pub fn new(id: impl Into<String>, g: Expr, kind: ComponentKind) -> Self {
        Self {
            id: id.into(),
            kind,
            g: CompiledExpr::new(g),
        }
    }

    pub fn parse(id: impl Into<String>, text: &str, kind: ComponentKind) -> Result<Self> {
        Ok(Self::new(id, parse_expression(text)?, kind))
    }

    pub fn expr(&self) -> &Expr {
        &self.g.expr
    }

    /// `g(ξ; κ)` at a complex point.
    pub fn value(&self, xi: [C64; 2], kappa: C64) -> C64 {
        self.g.value(xi, kappa)
    }

    /// Real part of `g(ξʳ; 0)`.
    pub fn g_real(&self, p: P2) -> f64 {
        self.g.value(real_pt(p), C64::new(0.0, 0.0)).re
    }

    /// Real gradient `(a, b)` at `κ = 0`.
    pub fn grad_real(&self, p: P2) -> P2 {
        let g = self.g.gradient(real_pt(p), C64::new(0.0, 0.0));
        [g[0].re, g[1].re]
    }

    /// Real ξ-Hessian at `κ = 0`.
    pub fn hessian_real(&self, p: P2) -> [[f64; 2]; 2] {
        let j = self.g.jet(real_pt(p), C64::new(0.0, 0.0));
        [
            [j.hessian[0][0].re, j.hessian[0][1].re],
            [j.hessian[1][0].re, j.hessian[1][1].re],
        ]
    }

    /// `∂g/∂κ` at `(ξʳ; 0)`.
    pub fn d_kappa_real(&self, p: P2) -> C64 {
        self.g.jet(real_pt(p), C64::new(0.0, 0.0)).d_kappa
    }

    pub fn jet(&self, xi: [C64; 2], kappa: C64) -> Jet {
        self.g.jet(xi, kappa)
    }
}

/// A factor `g_j^(−μ)` of a term.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub component: usize,
    pub mu: f64,
}

/// `A(ξ) · Π g_j^(−μ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub amplitude: CompiledExpr,
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn exponent_of(&self, component: usize) -> f64 {
        self.factors
            .iter()
            .filter(|f| f.component == component)
            .map(|f| f.mu)
            .sum()
    }
}

/// The transform `F` as a finite sum of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunctionModel {
    pub components: Vec<SingularComponent>,
    pub terms: Vec<Term>,
}

impl WaveFunctionModel {
    /// Builds a model; `terms` reference components by id.
    pub fn new(
        components: Vec<SingularComponent>,
        terms: Vec<(Expr, Vec<(String, f64)>)>,
    ) -> Result<Self> {
        for (k, c) in components.iter().enumerate() {
            if components[..k].iter().any(|d| d.id == c.id) {
                return Err(Error::Precondition(format!(
                    "duplicate component id `{}`",
                    c.id
                )));
            }
        }
        let mut out = Vec::with_capacity(terms.len());
        for (amp, facs) in terms {
            let mut factors = Vec::with_capacity(facs.len());
            for (id, mu) in facs {
                let component = components
                    .iter()
                    .position(|c| c.id == id)
                    .ok_or_else(|| Error::UnknownComponent(id.clone()))?;
                if !mu.is_finite() {
                    return Err(Error::Precondition(format!(
                        "non-finite exponent for `{id}`"
                    )));
                }
                factors.push(Factor { component, mu });
            }
            out.push(Term {
                amplitude: CompiledExpr::new(amp),
                factors,
            });
        }
        Ok(Self {
            components,
            terms: out,
        })
    }

    pub fn component_index(&self, id: &str) -> Result<usize> {
        self.components
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::UnknownComponent(id.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Real-property check

/// Which real-property condition failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealCondition {
    ImagValue,
    ImagGradient,
    RealKappaDerivative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub condition: RealCondition,
    pub point: P2,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealPropertyReport {
    pub pass: bool,
    pub samples: usize,
    pub max_imag_value: f64,
    pub max_imag_gradient: f64,
    pub max_real_kappa_derivative: f64,
    /// Largest violation found, if any.
    pub worst: Option<Violation>,
}

pub const REAL_PROPERTY_TOL: f64 = 1e-12;

/// Samples a regular lattice of about `samples` real points and checks that
/// `g` and `∇g` are real and `∂g/∂κ` is purely imaginary there.
pub fn check_real_property(
    c: &SingularComponent,
    window: &Window,
    samples: usize,
) -> RealPropertyReport {
    let side = (samples.max(1) as f64).sqrt().ceil() as usize;
    let mut rep = RealPropertyReport {
        pass: true,
        samples: side * side,
        max_imag_value: 0.0,
        max_imag_gradient: 0.0,
        max_real_kappa_derivative: 0.0,
        worst: None,
    };
    let mut worst_excess = 0.0;
    for i in 0..side {
        for j in 0..side {
            let p = [
                window.x0 + window.width() * (i as f64 + 0.5) / side as f64,
                window.y0 + window.height() * (j as f64 + 0.5) / side as f64,
            ];
            let jet = c.jet(real_pt(p), C64::new(0.0, 0.0));
            let checks = [
                (RealCondition::ImagValue, jet.value.im.abs()),
                (
                    RealCondition::ImagGradient,
                    jet.d_xi1.im.abs().max(jet.d_xi2.im.abs()),
                ),
                (RealCondition::RealKappaDerivative, jet.d_kappa.re.abs()),
            ];
            rep.max_imag_value = rep.max_imag_value.max(checks[0].1);
            rep.max_imag_gradient = rep.max_imag_gradient.max(checks[1].1);
            rep.max_real_kappa_derivative = rep.max_real_kappa_derivative.max(checks[2].1);
            for (condition, m) in checks {
                if m > REAL_PROPERTY_TOL && m > worst_excess {
                    worst_excess = m;
                    rep.pass = false;
                    rep.worst = Some(Violation {
                        condition,
                        point: p,
                        magnitude: m,
                    });
                }
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn parses_circle() {
        let e = parse_expression("xi1^2 + xi2^2 - 1").unwrap();
        assert_eq!(e.eval(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)), c(0.0, 0.0));
        assert_eq!(e.eval(c(2.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)), c(4.0, 0.0));
    }

    #[test]
    fn parses_zero_and_parabola() {
        assert!(parse_expression("0").unwrap().is_zero());
        let e = parse_expression("xi2 - xi1^2 + i*kappa").unwrap();
        assert_eq!(e.eval(c(2.0, 0.0), c(4.0, 0.0), c(0.0, 0.0)), c(0.0, 0.0));
    }

    #[test]
    fn parses_scientific_and_unicode_minus() {
        let e = parse_expression("2.5e-1 * xi1 \u{2212} 1E+1").unwrap();
        assert_eq!(e.eval(c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)), c(-9.0, 0.0));
        let e = parse_expression("-xi1^2").unwrap();
        assert_eq!(e.eval(c(3.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)), c(-9.0, 0.0));
    }

    #[test]
    fn reports_errors_with_position() {
        assert_eq!(
            parse_expression("xi1 + foo"),
            Err(Error::UnknownIdentifier {
                pos: 6,
                name: "foo".into()
            })
        );
        assert!(matches!(
            parse_expression("xi1 + "),
            Err(Error::Syntax { pos: 6, .. })
        ));
        assert!(matches!(
            parse_expression("xi1 ^ -1"),
            Err(Error::Syntax { pos: 6, .. })
        ));
        assert!(matches!(
            parse_expression("xi1 ^ 0.5"),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression("(xi1"),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression("xi1 xi2"),
            Err(Error::Syntax { pos: 4, .. })
        ));
        assert!(matches!(
            parse_expression("xi1 / 2"),
            Err(Error::Syntax { pos: 4, .. })
        ));
    }

    #[test]
    fn jet_of_circle() {
        let e = parse_expression("xi1^2 + xi2^2 - 1").unwrap();
        let j = evaluate_jet(&e, [c(1.0, 0.0), c(0.0, 0.0)], c(0.0, 0.0));
        assert_eq!(j.value, c(0.0, 0.0));
        assert_eq!((j.d_xi1, j.d_xi2), (c(2.0, 0.0), c(0.0, 0.0)));
        assert_eq!(
            j.hessian,
            [[c(2.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(2.0, 0.0)]]
        );
    }

    #[test]
    fn jet_of_line_and_kappa_shift() {
        let e = parse_expression("xi2 - 2").unwrap();
        let j = evaluate_jet(&e, [c(0.3, 1.0), c(-4.0, 0.2)], c(0.1, 0.0));
        assert_eq!((j.d_xi1, j.d_xi2), (c(0.0, 0.0), c(1.0, 0.0)));
        assert!(j.hessian.iter().flatten().all(|h| *h == c(0.0, 0.0)));
        let e = parse_expression("xi1 + i*kappa").unwrap();
        let j = evaluate_jet(&e, [c(0.0, 0.0), c(0.0, 0.0)], c(0.0, 0.0));
        assert_eq!(j.d_kappa, c(0.0, 1.0));
    }

    #[test]
    fn real_property_examples() {
        let w = Window::square(2.0);
        let circle = SingularComponent::parse(
            "c",
            "(1 + i*kappa)^2 - xi1^2 - xi2^2",
            ComponentKind::Branch,
        )
        .unwrap();
        assert!(check_real_property(&circle, &w, 400).pass);
        let shifted = SingularComponent::parse("s", "xi1 - i", ComponentKind::Branch).unwrap();
        let r = check_real_property(&shifted, &w, 400);
        assert!(!r.pass);
        assert_eq!(r.worst.unwrap().condition, RealCondition::ImagValue);
        let real_k = SingularComponent::parse("k", "xi1 + kappa", ComponentKind::Branch).unwrap();
        let r = check_real_property(&real_k, &w, 400);
        assert!(!r.pass);
        assert_eq!(
            r.worst.unwrap().condition,
            RealCondition::RealKappaDerivative
        );
    }

    #[test]
    fn model_rejects_unknown_component() {
        let g = SingularComponent::parse("g1", "xi1", ComponentKind::Branch).unwrap();
        let r = WaveFunctionModel::new(vec![g], vec![(Expr::one(), vec![("g2".into(), 0.5)])]);
        assert_eq!(r, Err(Error::UnknownComponent("g2".into())));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| Expr::Const(C64::new(a, b))),
            (-3.0..3.0f64).prop_map(Expr::real),
            Just(Expr::Var(Var::Xi1)),
            Just(Expr::Var(Var::Xi2)),
            Just(Expr::Var(Var::Kappa)),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::Sum),
                prop::collection::vec(inner.clone(), 2..3).prop_map(Expr::Product),
                (inner.clone(), 0u32..4).prop_map(|(b, n)| Expr::Pow(Box::new(b), n)),
                inner.prop_map(|e| Expr::Neg(Box::new(e))),
            ]
        })
    }

    fn arb_point() -> impl Strategy<Value = [C64; 3]> {
        prop::array::uniform6(-1.5..1.5f64).prop_map(|v| {
            [
                C64::new(v[0], v[1]),
                C64::new(v[2], v[3]),
                C64::new(v[4], v[5]),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn derivative_matches_central_difference(e in arb_expr(), p in arb_point()) {
            let h = 1e-5;
            let val = e.eval(p[0], p[1], p[2]);
            for (k, v) in [Var::Xi1, Var::Xi2, Var::Kappa].into_iter().enumerate() {
                let mut lo = p;
                let mut hi = p;
                lo[k] -= h;
                hi[k] += h;
                let fd = (e.eval(hi[0], hi[1], hi[2]) - e.eval(lo[0], lo[1], lo[2])) / (2.0 * h);
                let sym = e.diff(v).eval(p[0], p[1], p[2]);
                prop_assert!((sym - fd).norm() <= 1e-6 * (1.0 + val.norm()),
                    "d/d{} of {}: sym {} fd {}", v.name(), e, sym, fd);
            }
        }

        #[test]
        fn print_parse_round_trip(e in arb_expr(), p in arb_point()) {
            let text = e.to_string();
            let back = parse_expression(&text).unwrap();
            let a = e.eval(p[0], p[1], p[2]);
            let b = back.eval(p[0], p[1], p[2]);
            prop_assert!((a - b).norm() <= 1e-14 * (1.0 + a.norm()), "{} -> {}: {} vs {}", e, back, a, b);
        }
    }
}
