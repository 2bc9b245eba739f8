//! Small expression language over `x`, `y`, `t` used for space-time
//! coefficients and data in configuration files.
//!
//! Grammar: numbers (with exponents), `pi`, the variables, `+ - * / ^`
//! (right-associative power), parentheses and the functions `sin`, `cos`,
//! `exp`, `log`, `sqrt`. Expressions can be differentiated symbolically.

use std::fmt;

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
#[error("expression error at position {position}: {message}")]
pub struct ExprError {
    pub position: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

use Expr::*;

fn num(v: f64) -> Expr {
    Num(v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Num(x), Num(y)) => Num(x + y),
        (Num(z), _) if *z == 0.0 => b,
        (_, Num(z)) if *z == 0.0 => a,
        _ => Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Num(x), Num(y)) => Num(x - y),
        (_, Num(z)) if *z == 0.0 => a,
        (Num(z), _) if *z == 0.0 => neg(b),
        _ => Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Num(x), Num(y)) => Num(x * y),
        (Num(z), _) | (_, Num(z)) if *z == 0.0 => Num(0.0),
        (Num(o), _) if *o == 1.0 => b,
        (_, Num(o)) if *o == 1.0 => a,
        _ => Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Num(z), _) if *z == 0.0 => Num(0.0),
        (_, Num(o)) if *o == 1.0 => a,
        _ => Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Num(x) => Num(-x),
        Neg(inner) => *inner,
        _ => Neg(Box::new(a)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match a {
        Num(v) => Num(f.apply(v)),
        _ => Call(f, Box::new(a)),
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Num(v) => *v,
            Var(Var::X) => x,
            Var(Var::Y) => y,
            Var(Var::T) => t,
            Neg(a) => -a.eval(x, y, t),
            Add(a, b) => a.eval(x, y, t) + b.eval(x, y, t),
            Sub(a, b) => a.eval(x, y, t) - b.eval(x, y, t),
            Mul(a, b) => a.eval(x, y, t) * b.eval(x, y, t),
            Div(a, b) => a.eval(x, y, t) / b.eval(x, y, t),
            Pow(a, b) => {
                let e = b.eval(x, y, t);
                let base = a.eval(x, y, t);
                if e.fract() == 0.0 && e.abs() < 64.0 {
                    base.powi(e as i32)
                } else {
                    base.powf(e)
                }
            }
            Call(f, a) => f.apply(a.eval(x, y, t)),
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Num(_) => false,
            Var(w) => *w == v,
            Neg(a) | Call(_, a) => a.depends_on(v),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => a.depends_on(v) || b.depends_on(v),
        }
    }

    pub fn is_constant(&self) -> bool {
        ![Var::X, Var::Y, Var::T].iter().any(|&v| self.depends_on(v))
    }

    /// Symbolic partial derivative.
    pub fn derivative(&self, v: Var) -> Expr {
        if !self.depends_on(v) {
            return num(0.0);
        }
        match self {
            Num(_) => num(0.0),
            Var(w) => num(if *w == v { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(v)),
            Add(a, b) => add(a.derivative(v), b.derivative(v)),
            Sub(a, b) => sub(a.derivative(v), b.derivative(v)),
            Mul(a, b) => add(
                mul(a.derivative(v), (**b).clone()),
                mul((**a).clone(), b.derivative(v)),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(v), (**b).clone()),
                    mul((**a).clone(), b.derivative(v)),
                ),
                Pow(b.clone(), Box::new(num(2.0))),
            ),
            Pow(a, b) => {
                if !b.depends_on(v) {
                    // d(a^n) = n a^(n-1) a'
                    let reduced = Pow(a.clone(), Box::new(sub((**b).clone(), num(1.0))));
                    mul(mul((**b).clone(), reduced), a.derivative(v))
                } else {
                    // d(a^b) = a^b (b' log a + b a' / a)
                    mul(
                        self.clone(),
                        add(
                            mul(b.derivative(v), call(Func::Log, (**a).clone())),
                            div(mul((**b).clone(), a.derivative(v)), (**a).clone()),
                        ),
                    )
                }
            }
            Call(f, a) => {
                let inner = a.derivative(v);
                let outer = match f {
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Exp => self.clone(),
                    Func::Log => div(num(1.0), (**a).clone()),
                    Func::Sqrt => div(num(0.5), self.clone()),
                };
                mul(outer, inner)
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num(v) => {
                if *v < 0.0 {
                    write!(f, "({v:e})")
                } else {
                    write!(f, "{v:e}")
                }
            }
            Var(Var::X) => write!(f, "x"),
            Var(Var::Y) => write!(f, "y"),
            Var(Var::T) => write!(f, "t"),
            Neg(a) => write!(f, "(-{a})"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "({a} * {b})"),
            Div(a, b) => write!(f, "({a} / {b})"),
            Pow(a, b) => write!(f, "({a} ^ {b})"),
            Call(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == b'+' {
                Add(Box::new(lhs), Box::new(rhs))
            } else {
                Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == b'*' {
                Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
                let func = match name {
                    "x" => return Ok(Var(Var::X)),
                    "y" => return Ok(Var(Var::Y)),
                    "t" => return Ok(Var(Var::T)),
                    "pi" => return Ok(Num(std::f64::consts::PI)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "log" => Func::Log,
                    "sqrt" => Func::Sqrt,
                    _ => {
                        self.pos = start;
                        return Err(self.error(&format!("unknown identifier '{name}'")));
                    }
                };
                if self.peek() != Some(b'(') {
                    return Err(self.error(&format!("expected '(' after {name}")));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(Call(func, Box::new(arg)))
            }
            Some(c) => Err(self.error(&format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < s.len() && (s[look] == b'+' || s[look] == b'-') {
                look += 1;
            }
            if look < s.len() && s[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap_or_default();
        text.parse::<f64>().map(Num).map_err(|_| ExprError {
            position: start,
            message: format!("invalid number '{text}'"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str) -> f64 {
        Expr::parse(s).unwrap().eval(0.3, -0.7, 2.0)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3"), 7.0);
        assert_eq!(ev("(1 + 2) * 3"), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2"), 512.0);
        assert_eq!(ev("-2 ^ 2"), -4.0);
        assert_eq!(ev("8 / 4 / 2"), 1.0);
        assert_eq!(ev("10 - 4 - 3"), 3.0);
        assert_eq!(ev("1.5e4"), 15000.0);
        assert_eq!(ev("2E-3 * 1000"), 2.0);
        assert_eq!(ev("t * x"), 0.6);
        assert!((ev("sin(pi / 2) + cos(0) + exp(0) + log(1) + sqrt(4)") - 5.0).abs() < 1e-15);
    }

    #[test]
    fn syntax_errors() {
        for bad in ["", "1 +", "(1", "foo(2)", "sin 2", "1 $ 2", "x y", "1e"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
        assert_eq!(Expr::parse("x + z").unwrap_err().position, 4);
    }

    #[test]
    fn symbolic_derivatives() {
        let e = Expr::parse("x^3 * sin(t) + exp(2*y) / (1 + x^2)").unwrap();
        let (x, y, t) = (0.4, -0.3, 1.2);
        let dx = e.derivative(Var::X).eval(x, y, t);
        let want_dx = 3.0 * x * x * t.sin() - (2.0 * y).exp() * 2.0 * x / (1.0 + x * x).powi(2);
        assert!((dx - want_dx).abs() < 1e-13);
        let dy = e.derivative(Var::Y).eval(x, y, t);
        assert!((dy - 2.0 * (2.0 * y).exp() / (1.0 + x * x)).abs() < 1e-13);
        let dt = e.derivative(Var::T).eval(x, y, t);
        assert!((dt - x.powi(3) * t.cos()).abs() < 1e-13);
        assert_eq!(Expr::parse("3 * y").unwrap().derivative(Var::X), Num(0.0));
        let p = Expr::parse("x ^ x").unwrap().derivative(Var::X).eval(1.5, 0.0, 0.0);
        assert!((p - 1.5f64.powf(1.5) * (1.5f64.ln() + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn display_round_trip() {
        let e = Expr::parse("-(x - 2)^2 / 3 + sin(-t)").unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        assert_eq!(e.eval(0.1, 0.2, 0.3), again.eval(0.1, 0.2, 0.3));
    }

    proptest! {
        #[test]
        fn derivative_matches_finite_difference(a in -2.0f64..2.0, b in -2.0f64..2.0, x in -1.0f64..1.0, t in 0.0f64..1.0) {
            let src = format!("{a} * sin(x * t) + {b} * x^2 * exp(-t) + cos({a} * x) / (2 + x^2)");
            let e = Expr::parse(&src).unwrap();
            let h = 1e-6;
            for v in [Var::X, Var::T] {
                let d = e.derivative(v).eval(x, 0.0, t);
                let (xp, xm, tp, tm) = match v {
                    Var::X => (x + h, x - h, t, t),
                    _ => (x, x, t + h, t - h),
                };
                let fd = (e.eval(xp, 0.0, tp) - e.eval(xm, 0.0, tm)) / (2.0 * h);
                prop_assert!((d - fd).abs() < 1e-6 * (1.0 + d.abs()));
            }
        }
    }
}
