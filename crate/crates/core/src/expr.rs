//! Small arithmetic expression language for scenario files: parsing,
//! evaluation and symbolic differentiation.
//!
//! Grammar: `+ - * / ^`, unary minus, numbers, variables, the constants `pi`
//! and `e`, and the functions exp, log, sqrt, sin, cos, tanh, atan (alias
//! arctan), sigmoid, abs, sign, max, min.

use std::fmt;
use std::sync::Arc;

use crate::certificates::ScalarField;
use crate::error::{Error, Result};
use crate::geometry::Vector;
use crate::hybrid::VectorField;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Atan,
    Sigmoid,
    Abs,
    Sign,
    Max,
    Min,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" | "ln" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tanh" => (Func::Tanh, 1),
            "atan" | "arctan" => (Func::Atan, 1),
            "sigmoid" => (Func::Sigmoid, 1),
            "abs" => (Func::Abs, 1),
            "sign" => (Func::Sign, 1),
            "max" => (Func::Max, 2),
            "min" => (Func::Min, 2),
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
            Func::Sigmoid => "sigmoid",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Max => "max",
            Func::Min => "min",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    /// `if a >= b { then } else { otherwise }`, produced by differentiating max/min.
    IfGe(Box<[Expr; 4]>),
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, c) => a.eval(x) + c.eval(x),
            Expr::Sub(a, c) => a.eval(x) - c.eval(x),
            Expr::Mul(a, c) => a.eval(x) * c.eval(x),
            Expr::Div(a, c) => a.eval(x) / c.eval(x),
            Expr::Pow(a, c) => {
                let base = a.eval(x);
                match **c {
                    Expr::Num(n) if n.fract() == 0.0 && n.abs() < 64.0 => base.powi(n as i32),
                    _ => base.powf(c.eval(x)),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tanh => a.tanh(),
                    Func::Atan => a.atan(),
                    Func::Sigmoid => 1.0 / (1.0 + (-a).exp()),
                    Func::Abs => a.abs(),
                    Func::Sign => {
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Max => a.max(args[1].eval(x)),
                    Func::Min => a.min(args[1].eval(x)),
                }
            }
            Expr::IfGe(p) => {
                if p[0].eval(x) >= p[1].eval(x) {
                    p[2].eval(x)
                } else {
                    p[3].eval(x)
                }
            }
        }
    }

    /// Symbolic partial derivative with light constant folding.
    pub fn diff(&self, v: usize) -> Expr {
        use Expr::*;
        match self {
            Num(_) => Num(0.0),
            Var(i) => Num(if *i == v { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(v)),
            Add(a, c) => add(a.diff(v), c.diff(v)),
            Sub(a, c) => sub(a.diff(v), c.diff(v)),
            Mul(a, c) => add(mul(a.diff(v), (**c).clone()), mul((**a).clone(), c.diff(v))),
            Div(a, c) => div(
                sub(mul(a.diff(v), (**c).clone()), mul((**a).clone(), c.diff(v))),
                mul((**c).clone(), (**c).clone()),
            ),
            Pow(a, c) => match **c {
                Num(n) => mul(
                    mul(Num(n), pow((**a).clone(), Num(n - 1.0))),
                    a.diff(v),
                ),
                _ => mul(
                    self.clone(),
                    add(
                        mul(c.diff(v), call(Func::Log, (**a).clone())),
                        div(mul((**c).clone(), a.diff(v)), (**a).clone()),
                    ),
                ),
            },
            Call(f, args) => {
                let a = args[0].clone();
                let da = a.diff(v);
                let outer = match f {
                    Func::Exp => call(Func::Exp, a),
                    Func::Log => div(Num(1.0), a),
                    Func::Sqrt => div(Num(0.5), call(Func::Sqrt, a)),
                    Func::Sin => call(Func::Cos, a),
                    Func::Cos => neg(call(Func::Sin, a)),
                    Func::Tanh => sub(Num(1.0), pow(call(Func::Tanh, a), Num(2.0))),
                    Func::Atan => div(Num(1.0), add(Num(1.0), pow(a, Num(2.0)))),
                    Func::Sigmoid => {
                        let s = call(Func::Sigmoid, a);
                        mul(s.clone(), sub(Num(1.0), s))
                    }
                    Func::Abs => call(Func::Sign, a),
                    Func::Sign => Num(0.0),
                    Func::Max | Func::Min => {
                        let c = args[1].clone();
                        let dc = c.diff(v);
                        let (hi, lo) = if *f == Func::Max { (da, dc) } else { (dc, da) };
                        return IfGe(Box::new([a, c, hi, lo]));
                    }
                };
                mul(outer, da)
            }
            IfGe(p) => IfGe(Box::new([
                p[0].clone(),
                p[1].clone(),
                p[2].diff(v),
                p[3].diff(v),
            ])),
        }
    }
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        a => Expr::Neg(b(a)),
    }
}

fn add(a: Expr, c: Expr) -> Expr {
    match (&a, &c) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if is_num(&a, 0.0) => c,
        _ if is_num(&c, 0.0) => a,
        _ => Expr::Add(b(a), b(c)),
    }
}

fn sub(a: Expr, c: Expr) -> Expr {
    match (&a, &c) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if is_num(&c, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(c),
        _ => Expr::Sub(b(a), b(c)),
    }
}

fn mul(a: Expr, c: Expr) -> Expr {
    match (&a, &c) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if is_num(&a, 0.0) || is_num(&c, 0.0) => Expr::Num(0.0),
        _ if is_num(&a, 1.0) => c,
        _ if is_num(&c, 1.0) => a,
        _ => Expr::Mul(b(a), b(c)),
    }
}

fn div(a: Expr, c: Expr) -> Expr {
    match (&a, &c) {
        _ if is_num(&a, 0.0) => Expr::Num(0.0),
        _ if is_num(&c, 1.0) => a,
        _ => Expr::Div(b(a), b(c)),
    }
}

fn pow(a: Expr, c: Expr) -> Expr {
    match (&a, &c) {
        _ if is_num(&c, 1.0) => a,
        _ if is_num(&c, 0.0) => Expr::Num(1.0),
        _ => Expr::Pow(b(a), b(c)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, vec![a])
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, c) => write!(f, "({a} + {c})"),
            Expr::Sub(a, c) => write!(f, "({a} - {c})"),
            Expr::Mul(a, c) => write!(f, "({a} * {c})"),
            Expr::Div(a, c) => write!(f, "({a} / {c})"),
            Expr::Pow(a, c) => write!(f, "({a} ^ {c})"),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::IfGe(p) => write!(f, "({} >= {} ? {} : {})", p[0], p[1], p[2], p[3]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut k = i + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    i = k;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(Error::Parse(format!("expected '{op}'")))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut e = self.product()?;
        loop {
            if self.eat('+') {
                e = Expr::Add(b(e), b(self.product()?));
            } else if self.eat('-') {
                e = Expr::Sub(b(e), b(self.product()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        loop {
            if self.eat('*') {
                e = Expr::Mul(b(e), b(self.unary()?));
            } else if self.eat('/') {
                e = Expr::Div(b(e), b(self.unary()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(b(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Pow(b(base), b(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Parse("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op('(') => {
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(i));
                }
                if let Some((f, arity)) = Func::lookup(&name) {
                    self.expect('(')?;
                    let mut args = vec![self.sum()?];
                    while self.eat(',') {
                        args.push(self.sum()?);
                    }
                    self.expect(')')?;
                    if args.len() != arity {
                        return Err(Error::Parse(format!(
                            "{name} takes {arity} argument(s), got {}",
                            args.len()
                        )));
                    }
                    return Ok(Expr::Call(f, args));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => Err(Error::Parse(format!("unknown identifier '{name}'"))),
                }
            }
            Tok::Op(c) => Err(Error::Parse(format!("unexpected '{c}'"))),
        }
    }
}

pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        vars,
    };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return Err(Error::Parse(format!("trailing input in '{src}'")));
    }
    Ok(e)
}

/// A scalar field with a symbolic gradient.
pub fn scalar_field(name: &str, src: &str, vars: &[&str]) -> Result<ScalarField> {
    let e = Arc::new(parse(src, vars)?);
    let grads: Arc<Vec<Expr>> = Arc::new((0..vars.len()).map(|i| e.diff(i)).collect());
    let f = e.clone();
    Ok(ScalarField::new(name, move |x: &Vector| f.eval(x.as_slice()))
        .with_grad(move |x: &Vector| {
            Vector::from_iterator(grads.len(), grads.iter().map(|g| g.eval(x.as_slice())))
        }))
}

/// A vector field from one expression per component.
pub fn vector_field(
    srcs: &[String],
    vars: &[&str],
) -> Result<VectorField> {
    let exprs: Vec<Expr> = srcs.iter().map(|s| parse(s, vars)).collect::<Result<_>>()?;
    Ok(Arc::new(move |x: &Vector| {
        Vector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(x.as_slice())))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64]) -> f64 {
        parse(src, &["x", "y", "z"]).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_unary() {
        assert_eq!(ev("1 + 2 * 3", &[0.0; 3]), 7.0);
        assert_eq!(ev("-x^2", &[3.0, 0.0, 0.0]), -9.0);
        assert_eq!(ev("2^3^2", &[0.0; 3]), 512.0);
        assert_eq!(ev("(1 - 2) - 3", &[0.0; 3]), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[0.0; 3]), 1.0);
        assert!((ev("1.5e-3 * 2", &[0.0; 3]) - 3e-3).abs() < 1e-18);
        assert_eq!(ev("max(x, y) - min(x, y)", &[1.0, 4.0, 0.0]), 3.0);
        assert!((ev("sigmoid(0) + atan(1) * 4 / pi", &[0.0; 3]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn errors_are_reported() {
        for bad in ["1 +", "foo(1)", "max(1)", "w", "(1", "1 2", "3 $ 4"] {
            assert!(matches!(parse(bad, &["x"]), Err(Error::Parse(_))), "{bad}");
        }
    }

    #[test]
    fn symbolic_gradient_matches_differences() {
        let vars = ["x", "y", "z"];
        let srcs = [
            "(1 + 0.1*arctan(z)) * (z^2/2 + 9.8*y)",
            "0.5*sigmoid(5*x) - y - z^2/(2*9.8) + 9.5",
            "exp(-x*y) / (1 + z^2) + sqrt(x^2 + 1) * log(y + 2)",
            "x^y + tanh(z) * sin(x) - cos(y)",
            "abs(x - 0.3) + max(y, z)",
        ];
        let probes = [[0.7, 1.3, -0.4], [1.1, 0.2, 2.0], [0.4, 2.5, 0.9]];
        for src in srcs {
            let f = scalar_field("f", src, &vars).unwrap();
            let probes: Vec<Vector> = probes.iter().map(|p| Vector::from_column_slice(p)).collect();
            let err = crate::certificates::grad_check(&f, &probes).unwrap();
            assert!(err < 1e-6, "{src}: {err}");
        }
    }

    #[test]
    fn vector_fields_evaluate_componentwise() {
        let f = vector_field(&["1".into(), "z".into(), "-9.8".into()], &["x", "y", "z"]).unwrap();
        let v = f(&Vector::from_column_slice(&[0.0, 1.0, 2.0]));
        assert_eq!(v.as_slice(), &[1.0, 2.0, -9.8]);
    }
}
