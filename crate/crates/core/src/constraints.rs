//! Parameter constraints with exact and smooth semantics.
//!
//! Constraints form a tree whose root is a conjunction. Every node has two
//! interpretations:
//!
//! * [`ConstraintTree::exact`] evaluates the discrete meaning on a concrete
//!   configuration (integer arithmetic, material implication, modulo).
//! * [`ConstraintTree::smooth`] evaluates a real-valued relaxation over numeric
//!   parameter magnitudes that is non-negative exactly when the constraint is
//!   met at every admissible configuration. Conjunctions take the minimum of
//!   their children, disjunctions the maximum.
//!
//! Leaf relaxations:
//!
//! | leaf          | smooth value                                           |
//! |---------------|--------------------------------------------------------|
//! | inequality    | `ka * xa - kb * xb + t`                                |
//! | interval atom | `-(v - a)(v - b)`                                      |
//! | conditional   | `max(outside(v1), min(atom1(v1), atom2(v2)))`          |
//! | divisibility  | `-sin^2(pi * xa / xb)`, zero iff `xb` divides `xa`     |
//!
//! `outside(v) = (v - lo)(v - hi)` where `lo`/`hi` are the nearest admissible
//! values strictly below/above the condition interval, so it is non-negative
//! exactly on admissible values that fall outside the condition.

use std::f64::consts::PI;
use std::path::Path;

use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::space::{Configuration, ParameterSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct Inequality {
    pub ka: f64,
    pub xa: usize,
    pub kb: f64,
    pub xb: usize,
    pub t: f64,
}

impl Inequality {
    pub fn smooth(&self, values: &[f64]) -> f64 {
        self.ka * values[self.xa] - self.kb * values[self.xb] + self.t
    }
}

/// `param ∈ [lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalAtom {
    pub param: usize,
    pub lo: f64,
    pub hi: f64,
}

impl IntervalAtom {
    pub fn smooth(&self, v: f64) -> f64 {
        interval_value(self.lo, self.hi, v)
    }

    pub fn derivative(&self, v: f64) -> f64 {
        -(2.0 * v - self.lo - self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// `-(v - a)(v - b)`: non-negative iff `v ∈ [a, b]`.
pub fn interval_value(a: f64, b: f64, v: f64) -> f64 {
    -(v - a) * (v - b)
}

/// If `condition` holds then `consequence` must hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub condition: IntervalAtom,
    pub consequence: IntervalAtom,
    outside_lo: f64,
    outside_hi: f64,
}

impl Conditional {
    /// Builds the implication and derives the outside bracket from the
    /// admissible values of the condition parameter.
    pub fn new(condition: IntervalAtom, consequence: IntervalAtom, admissible: &[i64]) -> Self {
        let below = admissible
            .iter()
            .map(|&v| v as f64)
            .filter(|&v| v < condition.lo)
            .fold(f64::NEG_INFINITY, f64::max);
        let above = admissible
            .iter()
            .map(|&v| v as f64)
            .filter(|&v| v > condition.hi)
            .fold(f64::INFINITY, f64::min);
        let outside_lo = if below.is_finite() {
            below
        } else {
            condition.lo - 1.0
        };
        let outside_hi = if above.is_finite() {
            above
        } else {
            condition.hi + 1.0
        };
        Self {
            condition,
            consequence,
            outside_lo,
            outside_hi,
        }
    }

    fn outside(&self, v: f64) -> f64 {
        (v - self.outside_lo) * (v - self.outside_hi)
    }

    fn outside_derivative(&self, v: f64) -> f64 {
        2.0 * v - self.outside_lo - self.outside_hi
    }

    pub fn smooth(&self, values: &[f64]) -> f64 {
        let v1 = values[self.condition.param];
        let v2 = values[self.consequence.param];
        let both = self.condition.smooth(v1).min(self.consequence.smooth(v2));
        self.outside(v1).max(both)
    }

    fn smooth_grad(&self, values: &[f64], grad: &mut [f64]) -> f64 {
        let (p1, p2) = (self.condition.param, self.consequence.param);
        let (v1, v2) = (values[p1], values[p2]);
        let out = self.outside(v1);
        let c1 = self.condition.smooth(v1);
        let c2 = self.consequence.smooth(v2);
        let both = c1.min(c2);
        if out >= both {
            grad[p1] += self.outside_derivative(v1);
            out
        } else if c1 <= c2 {
            grad[p1] += self.condition.derivative(v1);
            c1
        } else {
            grad[p2] += self.consequence.derivative(v2);
            c2
        }
    }
}

/// `xb` divides `xa`.
#[derive(Debug, Clone, PartialEq)]
pub struct Divisibility {
    pub xa: usize,
    pub xb: usize,
}

impl Divisibility {
    /// Phase `pi * (r - round(r))` with `r = xa / xb`. Equal to `pi * r` modulo
    /// `pi`, so `sin^2` is unchanged, and exactly zero for integer ratios.
    fn phase(a: f64, b: f64) -> f64 {
        let r = a / b;
        PI * (r - r.round())
    }

    pub fn value(a: f64, b: f64) -> f64 {
        let s = Self::phase(a, b).sin();
        -s * s
    }

    pub fn smooth(&self, values: &[f64], names: &[String]) -> Result<f64> {
        let b = values[self.xb];
        if b == 0.0 {
            return Err(Error::ZeroDivisor(names[self.xb].clone()));
        }
        Ok(Self::value(values[self.xa], b))
    }

    fn smooth_grad(&self, values: &[f64], names: &[String], grad: &mut [f64]) -> Result<f64> {
        let (a, b) = (values[self.xa], values[self.xb]);
        if b == 0.0 {
            return Err(Error::ZeroDivisor(names[self.xb].clone()));
        }
        let u = Self::phase(a, b);
        // d/du of -sin^2(u) is -sin(2u); du/da = pi/b, du/db = -pi a/b^2.
        let d = -(2.0 * u).sin();
        grad[self.xa] += d * PI / b;
        grad[self.xb] += -d * PI * a / (b * b);
        let s = u.sin();
        Ok(-s * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Inequality(Inequality),
    Conditional(Conditional),
    Divisibility(Divisibility),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintNode {
    All(Vec<ConstraintNode>),
    Any(Vec<ConstraintNode>),
    Leaf(Constraint),
}

impl ConstraintNode {
    fn smooth(&self, values: &[f64], names: &[String]) -> Result<f64> {
        match self {
            ConstraintNode::All(cs) => {
                cs.iter().try_fold(
                    f64::INFINITY,
                    |acc, c| Ok(acc.min(c.smooth(values, names)?)),
                )
            }
            ConstraintNode::Any(cs) => cs.iter().try_fold(f64::NEG_INFINITY, |acc, c| {
                Ok(acc.max(c.smooth(values, names)?))
            }),
            ConstraintNode::Leaf(Constraint::Inequality(c)) => Ok(c.smooth(values)),
            ConstraintNode::Leaf(Constraint::Conditional(c)) => Ok(c.smooth(values)),
            ConstraintNode::Leaf(Constraint::Divisibility(c)) => c.smooth(values, names),
        }
    }

    fn smooth_grad(&self, values: &[f64], names: &[String]) -> Result<(f64, Vec<f64>)> {
        match self {
            ConstraintNode::All(cs) => extremum_grad(cs, true, values, names),
            ConstraintNode::Any(cs) => extremum_grad(cs, false, values, names),
            ConstraintNode::Leaf(leaf) => {
                let mut grad = vec![0.0; values.len()];
                let v = match leaf {
                    Constraint::Inequality(c) => {
                        grad[c.xa] += c.ka;
                        grad[c.xb] -= c.kb;
                        c.smooth(values)
                    }
                    Constraint::Conditional(c) => c.smooth_grad(values, &mut grad),
                    Constraint::Divisibility(c) => c.smooth_grad(values, names, &mut grad)?,
                };
                Ok((v, grad))
            }
        }
    }

    fn exact(&self, ints: &[i64]) -> bool {
        match self {
            ConstraintNode::All(cs) => cs.iter().all(|c| c.exact(ints)),
            ConstraintNode::Any(cs) => cs.iter().any(|c| c.exact(ints)),
            ConstraintNode::Leaf(Constraint::Inequality(c)) => {
                c.ka * ints[c.xa] as f64 - c.kb * ints[c.xb] as f64 + c.t >= 0.0
            }
            ConstraintNode::Leaf(Constraint::Conditional(c)) => {
                !c.condition.contains(ints[c.condition.param] as f64)
                    || c.consequence.contains(ints[c.consequence.param] as f64)
            }
            ConstraintNode::Leaf(Constraint::Divisibility(c)) => {
                let b = ints[c.xb];
                b != 0 && ints[c.xa] % b == 0
            }
        }
    }

    fn leaves<'a>(&'a self, out: &mut Vec<&'a Constraint>) {
        match self {
            ConstraintNode::All(cs) | ConstraintNode::Any(cs) => {
                cs.iter().for_each(|c| c.leaves(out))
            }
            ConstraintNode::Leaf(l) => out.push(l),
        }
    }
}

/// Min (or max) over children, carrying the gradient of the attaining child.
fn extremum_grad(
    children: &[ConstraintNode],
    is_min: bool,
    values: &[f64],
    names: &[String],
) -> Result<(f64, Vec<f64>)> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for c in children {
        let (v, g) = c.smooth_grad(values, names)?;
        let better = match &best {
            None => true,
            Some((bv, _)) if is_min => v < *bv,
            Some((bv, _)) => v > *bv,
        };
        if better {
            best = Some((v, g));
        }
    }
    Ok(best.unwrap_or_else(|| {
        let v = if is_min {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        (v, vec![0.0; values.len()])
    }))
}

/// A conjunction of constraint nodes over the parameters of one space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTree {
    children: Vec<ConstraintNode>,
    names: Vec<String>,
}

impl ConstraintTree {
    /// The empty conjunction: every configuration is feasible.
    pub fn unconstrained(space: &ParameterSpace) -> Self {
        Self {
            children: Vec::new(),
            names: space.params().iter().map(|p| p.name().to_owned()).collect(),
        }
    }

    pub fn from_nodes(space: &ParameterSpace, children: Vec<ConstraintNode>) -> Self {
        Self {
            children,
            names: space.params().iter().map(|p| p.name().to_owned()).collect(),
        }
    }

    pub fn children(&self) -> &[ConstraintNode] {
        &self.children
    }

    pub fn is_unconstrained(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaves(&self) -> Vec<&Constraint> {
        let mut out = Vec::new();
        self.children.iter().for_each(|c| c.leaves(&mut out));
        out
    }

    /// Indices of every parameter referenced by a leaf, sorted and unique.
    pub fn referenced_params(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .leaves()
            .into_iter()
            .flat_map(|l| match l {
                Constraint::Inequality(c) => vec![c.xa, c.xb],
                Constraint::Conditional(c) => vec![c.condition.param, c.consequence.param],
                Constraint::Divisibility(c) => vec![c.xa, c.xb],
            })
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Smooth constraint value over per-parameter numeric magnitudes
    /// (categorical entries are ignored). `+inf` when unconstrained.
    pub fn smooth(&self, values: &[f64]) -> Result<f64> {
        self.children.iter().try_fold(f64::INFINITY, |acc, c| {
            Ok(acc.min(c.smooth(values, &self.names)?))
        })
    }

    /// Smooth value and its subgradient with respect to `values`. At min/max
    /// kinks the gradient of the attaining child is used, lowest index first.
    pub fn smooth_gradient(&self, values: &[f64]) -> Result<(f64, Vec<f64>)> {
        extremum_grad(&self.children, true, values, &self.names)
    }

    pub fn smooth_config(&self, space: &ParameterSpace, cfg: &Configuration) -> Result<f64> {
        self.smooth(&space.numeric_values(cfg))
    }

    pub fn exact(&self, space: &ParameterSpace, cfg: &Configuration) -> bool {
        let ints: Vec<i64> = space
            .params()
            .iter()
            .zip(cfg.levels())
            .map(|(p, &l)| p.ordinal_values().map_or(0, |v| v[l]))
            .collect();
        self.children.iter().all(|c| c.exact(&ints))
    }

    pub fn parse_str(text: &str, space: &ParameterSpace) -> Result<Self> {
        let json: Json = serde_json::from_str(text).map_err(|e| Error::ConstraintSyntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let parser = Parser { text, space };
        let root = parser.node(&json)?;
        let children = match root {
            ConstraintNode::All(cs) => cs,
            other => vec![other],
        };
        Ok(Self::from_nodes(space, children))
    }

    pub fn from_file(path: &Path, space: &ParameterSpace) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, space)
    }
}

struct Parser<'a> {
    text: &'a str,
    space: &'a ParameterSpace,
}

impl Parser<'_> {
    /// Line/column of `needle` inside the source, offset by `extra` chars.
    fn locate(&self, needle: &str, extra: usize) -> (usize, usize) {
        let quoted = format!("\"{needle}\"");
        match self.text.find(&quoted) {
            Some(pos) => {
                let before = &self.text[..pos];
                let line = before.matches('\n').count() + 1;
                let col = pos - before.rfind('\n').map_or(0, |p| p + 1) + 2 + extra;
                (line, col)
            }
            None => (0, 0),
        }
    }

    fn syntax(&self, context: &str, extra: usize, message: impl Into<String>) -> Error {
        let (line, column) = self.locate(context, extra);
        Error::ConstraintSyntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn ordinal(&self, name: &str) -> Result<usize> {
        let i = self
            .space
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))?;
        if !self.space.param(i).is_ordinal() {
            return Err(Error::CategoricalInNumericConstraint(name.to_owned()));
        }
        Ok(i)
    }

    fn node(&self, json: &Json) -> Result<ConstraintNode> {
        match json {
            Json::String(expr) => self.expression(expr),
            Json::Object(obj) if obj.len() == 1 => {
                let (key, body) = obj.iter().next().expect("one entry");
                match key.as_str() {
                    "all" | "any" => {
                        let items = body.as_array().ok_or_else(|| {
                            self.syntax(key, 0, format!("`{key}` expects an array"))
                        })?;
                        if items.is_empty() {
                            return Err(self.syntax(key, 0, format!("`{key}` must not be empty")));
                        }
                        let children = items.iter().map(|c| self.node(c)).collect::<Result<_>>()?;
                        Ok(if key == "all" {
                            ConstraintNode::All(children)
                        } else {
                            ConstraintNode::Any(children)
                        })
                    }
                    "ineq" => self.inequality_object(body),
                    "cond" => self.conditional_object(body),
                    "div" => {
                        let xa = self.ordinal(self.str_field(body, "xa")?)?;
                        let xb = self.ordinal(self.str_field(body, "xb")?)?;
                        self.divisibility(xa, xb)
                    }
                    other => {
                        Err(self.syntax(other, 0, format!("unknown constraint kind `{other}`")))
                    }
                }
            }
            other => Err(Error::ConstraintSyntax {
                line: 0,
                column: 0,
                message: format!("expected a constraint object or expression, found {other}"),
            }),
        }
    }

    fn str_field<'j>(&self, body: &'j Json, field: &str) -> Result<&'j str> {
        body.get(field)
            .and_then(Json::as_str)
            .ok_or_else(|| self.syntax(field, 0, format!("missing string field `{field}`")))
    }

    fn num_field(&self, body: &Json, field: &str, default: Option<f64>) -> Result<f64> {
        match body.get(field) {
            Some(v) => v
                .as_f64()
                .ok_or_else(|| self.syntax(field, 0, format!("field `{field}` must be a number"))),
            None => {
                default.ok_or_else(|| self.syntax(field, 0, format!("missing field `{field}`")))
            }
        }
    }

    fn inequality_object(&self, body: &Json) -> Result<ConstraintNode> {
        let ineq = Inequality {
            ka: self.num_field(body, "ka", Some(1.0))?,
            xa: self.ordinal(self.str_field(body, "xa")?)?,
            kb: self.num_field(body, "kb", Some(1.0))?,
            xb: self.ordinal(self.str_field(body, "xb")?)?,
            t: self.num_field(body, "t", Some(0.0))?,
        };
        Ok(ConstraintNode::Leaf(Constraint::Inequality(ineq)))
    }

    fn atom(&self, body: Option<&Json>, which: &str) -> Result<IntervalAtom> {
        let body = body.ok_or_else(|| self.syntax(which, 0, format!("missing `{which}` atom")))?;
        let param = self.ordinal(self.str_field(body, "param")?)?;
        let range = body
            .get("in")
            .and_then(Json::as_array)
            .filter(|a| a.len() == 2)
            .ok_or_else(|| self.syntax("in", 0, "`in` must be a two-element array"))?;
        let lo = range[0]
            .as_f64()
            .ok_or_else(|| self.syntax("in", 0, "interval bounds must be numbers"))?;
        let hi = range[1]
            .as_f64()
            .ok_or_else(|| self.syntax("in", 0, "interval bounds must be numbers"))?;
        if lo > hi {
            return Err(self.syntax("in", 0, format!("empty interval [{lo}, {hi}]")));
        }
        Ok(IntervalAtom { param, lo, hi })
    }

    fn conditional_object(&self, body: &Json) -> Result<ConstraintNode> {
        let condition = self.atom(body.get("if"), "if")?;
        let consequence = self.atom(body.get("then"), "then")?;
        let admissible = self
            .space
            .param(condition.param)
            .ordinal_values()
            .expect("checked ordinal");
        Ok(ConstraintNode::Leaf(Constraint::Conditional(
            Conditional::new(condition, consequence, admissible),
        )))
    }

    fn divisibility(&self, xa: usize, xb: usize) -> Result<ConstraintNode> {
        for &i in &[xa, xb] {
            let p = self.space.param(i);
            if p.ordinal_values()
                .is_some_and(|v| v.iter().any(|&x| x <= 0))
            {
                return Err(Error::InvalidArgument(format!(
                    "divisibility operand `{}` must have strictly positive values",
                    p.name()
                )));
            }
        }
        Ok(ConstraintNode::Leaf(Constraint::Divisibility(
            Divisibility { xa, xb },
        )))
    }

    /// `[k*]A op [k*]B [(+|-) c]` with `op` in `>=, >, <=, <`, or `A %| B`
    /// (B divides A).
    fn expression(&self, expr: &str) -> Result<ConstraintNode> {
        let tokens = tokenize(expr).map_err(|(pos, msg)| self.syntax(expr, pos, msg))?;
        let mut it = Cursor {
            tokens: &tokens,
            pos: 0,
        };
        let err = |pos: usize, msg: &str| self.syntax(expr, pos, msg.to_owned());

        let (ka, a, a_pos) = it.term().map_err(|p| err(p, "expected a parameter term"))?;
        let (op, op_pos) = match it.next() {
            Some((Tok::Op(op), p)) => (op.clone(), *p),
            Some((_, p)) => return Err(err(*p, "expected a comparison operator")),
            None => return Err(err(expr.len(), "expected a comparison operator")),
        };
        let (kb, b, b_pos) = it.term().map_err(|p| err(p, "expected a parameter term"))?;
        let xa = self.ordinal(&a).map_err(|e| match e {
            Error::UnknownParameter(_) | Error::CategoricalInNumericConstraint(_) => e,
            _ => err(a_pos, "bad operand"),
        })?;
        let xb = self.ordinal(&b).map_err(|e| match e {
            Error::UnknownParameter(_) | Error::CategoricalInNumericConstraint(_) => e,
            _ => err(b_pos, "bad operand"),
        })?;

        if op == "%|" {
            if ka != 1.0 || kb != 1.0 || it.peek().is_some() {
                return Err(err(op_pos, "divisibility takes two bare parameters"));
            }
            return self.divisibility(xa, xb);
        }

        let mut offset = 0.0;
        if let Some((tok, p)) = it.next() {
            let sign = match tok {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                _ => return Err(err(*p, "expected `+` or `-`")),
            };
            match it.next() {
                Some((Tok::Num(c), _)) => offset = sign * c,
                Some((_, p)) => return Err(err(*p, "expected a number")),
                None => return Err(err(expr.len(), "expected a number")),
            }
        }
        if let Some((_, p)) = it.next() {
            return Err(err(*p, "unexpected trailing input"));
        }

        // lhs = ka*A, rhs = kb*B + offset
        let mut ineq = match op.as_str() {
            ">=" | ">" => Inequality {
                ka,
                xa,
                kb,
                xb,
                t: -offset,
            },
            "<=" | "<" => Inequality {
                ka: kb,
                xa: xb,
                kb: ka,
                xb: xa,
                t: offset,
            },
            _ => return Err(err(op_pos, "unsupported operator")),
        };
        if op == ">" || op == "<" {
            ineq.t -= self.strict_gap(&ineq);
        }
        Ok(ConstraintNode::Leaf(Constraint::Inequality(ineq)))
    }

    /// Smallest positive value of `ka*xa - kb*xb + t` over admissible pairs,
    /// so that `> 0` can be rewritten as `- gap >= 0`.
    fn strict_gap(&self, c: &Inequality) -> f64 {
        let va = self.space.param(c.xa).ordinal_values().expect("ordinal");
        let vb = self.space.param(c.xb).ordinal_values().expect("ordinal");
        let mut gap = f64::INFINITY;
        for &a in va {
            for &b in vb {
                let d = c.ka * a as f64 - c.kb * b as f64 + c.t;
                if d > 0.0 && d < gap {
                    gap = d;
                }
            }
        }
        if gap.is_finite() {
            gap
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Op(String),
    Star,
    Plus,
    Minus,
}

fn tokenize(s: &str) -> std::result::Result<Vec<(Tok, usize)>, (usize, String)> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(s[start..i].to_owned()), start));
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            let n = s[start..i]
                .parse::<f64>()
                .map_err(|_| (start, format!("bad number `{}`", &s[start..i])))?;
            out.push((Tok::Num(n), start));
        } else {
            let two = s.get(i..i + 2).unwrap_or("");
            match two {
                ">=" | "<=" | "%|" => {
                    out.push((Tok::Op(two.to_owned()), i));
                    i += 2;
                    continue;
                }
                _ => {}
            }
            let tok = match c {
                '>' => Tok::Op(">".into()),
                '<' => Tok::Op("<".into()),
                '*' => Tok::Star,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                _ => return Err((i, format!("unexpected character `{c}`"))),
            };
            out.push((tok, i));
            i += 1;
        }
    }
    Ok(out)
}

struct Cursor<'t> {
    tokens: &'t [(Tok, usize)],
    pos: usize,
}

impl<'t> Cursor<'t> {
    fn next(&mut self) -> Option<&'t (Tok, usize)> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&'t (Tok, usize)> {
        self.tokens.get(self.pos)
    }

    /// `[num *] ident`
    fn term(&mut self) -> std::result::Result<(f64, String, usize), usize> {
        let end = self.tokens.last().map_or(0, |t| t.1 + 1);
        match self.next() {
            Some((Tok::Ident(name), p)) => Ok((1.0, name.clone(), *p)),
            Some((Tok::Num(k), p)) => {
                match self.next() {
                    Some((Tok::Star, _)) => {}
                    Some((_, q)) => return Err(*q),
                    None => return Err(end),
                }
                match self.next() {
                    Some((Tok::Ident(name), _)) => Ok((*k, name.clone(), *p)),
                    Some((_, q)) => Err(*q),
                    None => Err(end),
                }
            }
            Some((_, p)) => Err(*p),
            None => Err(end),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterDef;

    fn space() -> ParameterSpace {
        ParameterSpace::new(
            "t",
            vec![
                ParameterDef::ordinal("FetchWidth", vec![1, 4, 8], 4).unwrap(),
                ParameterDef::ordinal("DecodeWidth", vec![1, 2, 3, 4, 5, 6], 1).unwrap(),
                ParameterDef::ordinal("FetchBufferEntry", vec![8, 16, 24, 32, 35, 40], 16).unwrap(),
                ParameterDef::ordinal("dcache_nWays", vec![2, 4, 8, 16, 32, 64], 4).unwrap(),
                ParameterDef::ordinal("dcache_nSets", vec![2, 4, 8, 16, 32, 64], 64).unwrap(),
                ParameterDef::categorical("bpd", vec!["A", "B"], "A").unwrap(),
            ],
        )
        .unwrap()
    }

    fn leaf(tree: &ConstraintTree) -> &Constraint {
        tree.leaves()[0]
    }

    #[test]
    fn parses_inequality_expression() {
        let s = space();
        let t = ConstraintTree::parse_str(r#""FetchWidth >= DecodeWidth""#, &s).unwrap();
        assert_eq!(
            leaf(&t),
            &Constraint::Inequality(Inequality {
                ka: 1.0,
                xa: 0,
                kb: 1.0,
                xb: 1,
                t: 0.0
            })
        );
    }

    #[test]
    fn parses_divisibility_expression() {
        let s = space();
        let t = ConstraintTree::parse_str(r#"{"all":["FetchBufferEntry %| DecodeWidth"]}"#, &s)
            .unwrap();
        assert_eq!(
            leaf(&t),
            &Constraint::Divisibility(Divisibility { xa: 2, xb: 1 })
        );
    }

    #[test]
    fn strict_inequality_uses_min_gap() {
        let s = space();
        let t = ConstraintTree::parse_str(r#""FetchBufferEntry > FetchWidth""#, &s).unwrap();
        match leaf(&t) {
            Constraint::Inequality(c) => assert_eq!(c.t, -4.0),
            other => panic!("unexpected {other:?}"),
        }
        let t2 = ConstraintTree::parse_str(r#""FetchWidth < FetchBufferEntry""#, &s).unwrap();
        assert_eq!(t.leaves(), t2.leaves());
    }

    #[test]
    fn parse_errors() {
        let s = space();
        let e = ConstraintTree::parse_str("{\"all\": [\n  \"FetchWidth >= \"\n]}", &s).unwrap_err();
        match e {
            Error::ConstraintSyntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ConstraintTree::parse_str("{\"all\": [", &s),
            Err(Error::ConstraintSyntax { line: 1, .. })
        ));
        assert!(matches!(
            ConstraintTree::parse_str(r#""Nope >= DecodeWidth""#, &s),
            Err(Error::UnknownParameter(_))
        ));
        assert!(matches!(
            ConstraintTree::parse_str(r#""bpd >= DecodeWidth""#, &s),
            Err(Error::CategoricalInNumericConstraint(_))
        ));
        assert!(matches!(
            ConstraintTree::parse_str(r#"{"any":[]}"#, &s),
            Err(Error::ConstraintSyntax { .. })
        ));
    }

    #[test]
    fn smooth_inequality_examples() {
        let c = Inequality {
            ka: 1.0,
            xa: 0,
            kb: 1.0,
            xb: 1,
            t: 0.0,
        };
        assert_eq!(c.smooth(&[4.0, 2.0]), 2.0);
        assert_eq!(c.smooth(&[1.0, 1.0]), 0.0);
        let strict = Inequality {
            ka: 1.0,
            xa: 0,
            kb: 1.0,
            xb: 1,
            t: -1.0,
        };
        assert_eq!(strict.smooth(&[8.0, 8.0]), -1.0);
    }

    #[test]
    fn interval_atom_examples() {
        assert_eq!(interval_value(2.0, 4.0, 3.0), 1.0);
        assert_eq!(interval_value(2.0, 4.0, 2.0), 0.0);
        assert_eq!(interval_value(2.0, 4.0, 5.0), -3.0);
        let atom = IntervalAtom {
            param: 0,
            lo: 2.0,
            hi: 4.0,
        };
        assert_eq!(atom.derivative(3.0), 0.0);
    }

    #[test]
    fn divisibility_examples() {
        assert_eq!(Divisibility::value(4.0, 2.0), 0.0);
        assert!((Divisibility::value(3.0, 2.0) + 1.0).abs() < 1e-15);
        // periodic in xa with period xb
        for (a, b) in [(5.0, 3.0), (7.0, 4.0), (9.0, 6.0)] {
            let v = Divisibility::value(a, b);
            assert!((v - Divisibility::value(a + b, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_divisor_is_domain_error() {
        let s = space();
        let t = ConstraintTree::from_nodes(
            &s,
            vec![ConstraintNode::Leaf(Constraint::Divisibility(
                Divisibility { xa: 0, xb: 1 },
            ))],
        );
        let vals = [4.0, 0.0, 8.0, 2.0, 2.0, f64::NAN];
        assert!(matches!(t.smooth(&vals), Err(Error::ZeroDivisor(_))));
        assert!(matches!(
            t.smooth_gradient(&vals),
            Err(Error::ZeroDivisor(_))
        ));
    }

    #[test]
    fn conditional_semantics() {
        let s = space();
        let t = ConstraintTree::parse_str(
            r#"{"cond":{"if":{"param":"dcache_nWays","in":[16,32]},"then":{"param":"dcache_nSets","in":[2,4]}}}"#,
            &s,
        )
        .unwrap();
        let cfg = |ways: usize, sets: usize| {
            s.default_configuration()
                .with_level(3, ways)
                .with_level(4, sets)
        };
        // vacuous: nWays = 4 outside [16, 32]
        assert!(t.exact(&s, &cfg(1, 5)));
        assert!(t.smooth_config(&s, &cfg(1, 5)).unwrap() >= 0.0);
        // boundary of the condition: consequence must hold
        assert!(!t.exact(&s, &cfg(3, 5)));
        assert!(t.smooth_config(&s, &cfg(3, 5)).unwrap() < 0.0);
        assert!(t.exact(&s, &cfg(3, 1)));
        assert!(t.smooth_config(&s, &cfg(3, 1)).unwrap() >= 0.0);
    }

    #[test]
    fn gradient_of_inequality_leaf() {
        let s = space();
        let t = ConstraintTree::parse_str(r#""2*FetchWidth >= 3*DecodeWidth + 1""#, &s).unwrap();
        let (v, g) = t
            .smooth_gradient(&[4.0, 2.0, 8.0, 2.0, 2.0, f64::NAN])
            .unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(&g[..2], &[2.0, -3.0]);
    }

    #[test]
    fn unconstrained_tree_accepts_everything() {
        let s = space();
        let t = ConstraintTree::unconstrained(&s);
        assert!(t.exact(&s, &s.default_configuration()));
        assert_eq!(
            t.smooth(&s.numeric_values(&s.default_configuration()))
                .unwrap(),
            f64::INFINITY
        );
    }
}
