//! Smooth time-expression mini-language.
//!
//! Scenario files specify time-varying parameters (reference velocities,
//! distance bounds, apex angles) as strings over the single variable `t`:
//!
//! ```text
//! 2*sin(5*t/4)
//! 1.3 - 0.2*sin(t)^2
//! ```
//!
//! Supported syntax: literals, `t`, `+ - * /`, unary minus, `^` with a
//! constant integer exponent, and the smooth functions `sin`, `cos`, `tan`,
//! `exp`, `sqrt`. Precedence is `^` over unary minus over `* /` over `+ -`,
//! left-associative within a level. Non-smooth primitives (`abs`, `min`,
//! `max`, `floor`) are deliberately absent: every expression is C¹ in `t`
//! wherever it evaluates, so constraint right-hand sides built from them
//! stay Lipschitz in time.
//!
//! Parsing also builds the exact symbolic derivative, used for the
//! time-partial terms of time-varying constraints.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Guard band around tan poles: evaluation fails when |cos(arg)| falls below.
const TAN_GUARD: f64 = 1e-9;

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Time,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    /// Power with a constant integer exponent.
    Pow(Box<Node>, i32),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Tan(Box<Node>),
    Exp(Box<Node>),
    Sqrt(Box<Node>),
}

impl Node {
    fn eval(&self, t: f64) -> Result<f64> {
        use Node::*;
        Ok(match self {
            Const(c) => *c,
            Time => t,
            Neg(e) => -e.eval(t)?,
            Add(a, b) => a.eval(t)? + b.eval(t)?,
            Sub(a, b) => a.eval(t)? - b.eval(t)?,
            Mul(a, b) => a.eval(t)? * b.eval(t)?,
            Div(a, b) => {
                let den = b.eval(t)?;
                if den == 0.0 {
                    return Err(Error::EvalError {
                        t,
                        detail: "division by zero".into(),
                    });
                }
                a.eval(t)? / den
            }
            Pow(e, n) => {
                let base = e.eval(t)?;
                if *n < 0 && base == 0.0 {
                    return Err(Error::EvalError {
                        t,
                        detail: "zero raised to a negative power".into(),
                    });
                }
                base.powi(*n)
            }
            Sin(e) => e.eval(t)?.sin(),
            Cos(e) => e.eval(t)?.cos(),
            Tan(e) => {
                let arg = e.eval(t)?;
                if arg.cos().abs() <= TAN_GUARD {
                    return Err(Error::EvalError {
                        t,
                        detail: "tan argument too close to a pole".into(),
                    });
                }
                arg.tan()
            }
            Exp(e) => e.eval(t)?.exp(),
            Sqrt(e) => {
                let arg = e.eval(t)?;
                if arg < 0.0 {
                    return Err(Error::EvalError {
                        t,
                        detail: format!("sqrt of negative value {arg}"),
                    });
                }
                arg.sqrt()
            }
        })
    }

    /// Exact symbolic derivative with respect to `t`.
    ///
    /// Light constant folding keeps the trees small; negative constants are
    /// always represented as `Neg(Const(..))` so printed derivatives re-parse
    /// to the same tree.
    fn derivative(&self) -> Node {
        use Node::*;
        match self {
            Const(_) => Const(0.0),
            Time => Const(1.0),
            Neg(e) => neg(e.derivative()),
            Add(a, b) => add(a.derivative(), b.derivative()),
            Sub(a, b) => sub(a.derivative(), b.derivative()),
            Mul(a, b) => add(
                mul(a.derivative(), (**b).clone()),
                mul((**a).clone(), b.derivative()),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(), (**b).clone()),
                    mul((**a).clone(), b.derivative()),
                ),
                Pow(Box::new((**b).clone()), 2),
            ),
            Pow(e, n) => match *n {
                0 => Const(0.0),
                1 => e.derivative(),
                n => mul(
                    mul(int_const(n), Pow(Box::new((**e).clone()), n - 1)),
                    e.derivative(),
                ),
            },
            Sin(e) => mul(Cos(e.clone()), e.derivative()),
            Cos(e) => neg(mul(Sin(e.clone()), e.derivative())),
            Tan(e) => div(e.derivative(), Pow(Box::new(Cos(e.clone())), 2)),
            Exp(e) => mul(Exp(e.clone()), e.derivative()),
            Sqrt(e) => div(e.derivative(), mul(Const(2.0), Sqrt(e.clone()))),
        }
    }
}

fn int_const(n: i32) -> Node {
    if n >= 0 {
        Node::Const(n as f64)
    } else {
        Node::Neg(Box::new(Node::Const(-(n as f64))))
    }
}

fn is_zero(e: &Node) -> bool {
    matches!(e, Node::Const(c) if *c == 0.0)
}

fn is_one(e: &Node) -> bool {
    matches!(e, Node::Const(c) if *c == 1.0)
}

fn neg(e: Node) -> Node {
    if is_zero(&e) {
        e
    } else {
        Node::Neg(Box::new(e))
    }
}

fn add(a: Node, b: Node) -> Node {
    if is_zero(&a) {
        b
    } else if is_zero(&b) {
        a
    } else {
        Node::Add(Box::new(a), Box::new(b))
    }
}

fn sub(a: Node, b: Node) -> Node {
    if is_zero(&b) {
        a
    } else if is_zero(&a) {
        neg(b)
    } else {
        Node::Sub(Box::new(a), Box::new(b))
    }
}

fn mul(a: Node, b: Node) -> Node {
    if is_zero(&a) || is_zero(&b) {
        Node::Const(0.0)
    } else if is_one(&a) {
        b
    } else if is_one(&b) {
        a
    } else {
        Node::Mul(Box::new(a), Box::new(b))
    }
}

fn div(a: Node, b: Node) -> Node {
    if is_zero(&a) {
        a
    } else if is_one(&b) {
        a
    } else {
        Node::Div(Box::new(a), Box::new(b))
    }
}

impl fmt::Display for Node {
    /// Fully parenthesized form; re-parsing reproduces the tree exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Node::*;
        match self {
            Const(c) => write!(f, "{c}"),
            Time => write!(f, "t"),
            Neg(e) => write!(f, "(-{e})"),
            Add(a, b) => write!(f, "({a}+{b})"),
            Sub(a, b) => write!(f, "({a}-{b})"),
            Mul(a, b) => write!(f, "({a}*{b})"),
            Div(a, b) => write!(f, "({a}/{b})"),
            Pow(e, n) => write!(f, "({e}^{n})"),
            Sin(e) => write!(f, "sin({e})"),
            Cos(e) => write!(f, "cos({e})"),
            Tan(e) => write!(f, "tan({e})"),
            Exp(e) => write!(f, "exp({e})"),
            Sqrt(e) => write!(f, "sqrt({e})"),
        }
    }
}

/// A parsed time expression together with its exact symbolic derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeExpr {
    tree: Node,
    deriv: Node,
}

impl TimeExpr {
    /// Wrap a constant value.
    pub fn constant(c: f64) -> Self {
        TimeExpr {
            tree: Node::Const(c),
            deriv: Node::Const(0.0),
        }
    }

    /// Value at time `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.tree.eval(t)
    }

    /// Derivative value at time `t`.
    pub fn eval_deriv(&self, t: f64) -> Result<f64> {
        self.deriv.eval(t)
    }

    /// The expression tree.
    pub fn tree(&self) -> &Node {
        &self.tree
    }

    /// The derivative tree.
    pub fn deriv_tree(&self) -> &Node {
        &self.deriv
    }

    /// Whether the expression is a constant (no dependence on `t`).
    pub fn is_constant(&self) -> bool {
        fn depends_on_t(n: &Node) -> bool {
            use Node::*;
            match n {
                Const(_) => false,
                Time => true,
                Neg(e) | Sin(e) | Cos(e) | Tan(e) | Exp(e) | Sqrt(e) => depends_on_t(e),
                Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => {
                    depends_on_t(a) || depends_on_t(b)
                }
                Pow(e, _) => depends_on_t(e),
            }
        }
        !depends_on_t(&self.tree)
    }
}

impl fmt::Display for TimeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tree)
    }
}

impl std::str::FromStr for TimeExpr {
    type Err = Error;

    fn from_str(src: &str) -> Result<Self> {
        parse_expr(src)
    }
}

/// Scenario files accept either a bare number or an expression string.
impl Serialize for TimeExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.tree {
            Node::Const(c) => s.serialize_f64(*c),
            _ => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for TimeExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Src(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(c) => Ok(TimeExpr::constant(c)),
            Raw::Src(src) => parse_expr(&src).map_err(|e| D::Error::custom(e.to_string())),
        }
    }
}

/// Parse an expression and build its derivative tree.
pub fn parse_expr(src: &str) -> Result<TimeExpr> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let tree = p.parse_sum()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("end of input or an operator"));
    }
    let deriv = tree.derivative();
    Ok(TimeExpr { tree, deriv })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, expected: &str) -> Error {
        Error::ParseError {
            offset: self.pos,
            expected: expected.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn parse_sum(&mut self) -> Result<Node> {
        let mut lhs = self.parse_product()?;
        loop {
            self.skip_ws();
            if self.eat(b'+') {
                let rhs = self.parse_product()?;
                lhs = Node::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.parse_product()?;
                lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_product(&mut self) -> Result<Node> {
        let mut lhs = self.parse_unary()?;
        loop {
            self.skip_ws();
            if self.eat(b'*') {
                let rhs = self.parse_unary()?;
                lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.parse_unary()?;
                lhs = Node::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Node> {
        self.skip_ws();
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.parse_unary()?)))
        } else {
            self.parse_power()
        }
    }

    fn parse_power(&mut self) -> Result<Node> {
        let base = self.parse_atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            self.skip_ws();
            let n = self.parse_int_exponent()?;
            Ok(Node::Pow(Box::new(base), n))
        } else {
            Ok(base)
        }
    }

    fn parse_int_exponent(&mut self) -> Result<i32> {
        let start = self.pos;
        let negative = self.eat(b'-');
        let digits_start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(self.error("an integer exponent"));
        }
        let text = std::str::from_utf8(&self.src[digits_start..self.pos]).unwrap();
        let mag: i32 = text.parse().map_err(|_| Error::ParseError {
            offset: start,
            expected: "an integer exponent in range".into(),
        })?;
        Ok(if negative { -mag } else { mag })
    }

    fn parse_atom(&mut self) -> Result<Node> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_sum()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.error("`)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() => self.parse_ident(),
            _ => Err(self.error("a number, `t`, a function call, or `(`")),
        }
    }

    fn parse_number(&mut self) -> Result<Node> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.eat(b'.') {
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // Not an exponent suffix after all (e.g. `2*exp(t)` never
                // reaches here, but `2e` alone would); rewind.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| Error::ParseError {
            offset: start,
            expected: "a numeric literal".into(),
        })?;
        Ok(Node::Const(value))
    }

    fn parse_ident(&mut self) -> Result<Node> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if name == "t" {
            return Ok(Node::Time);
        }
        let ctor: fn(Box<Node>) -> Node = match name {
            "sin" => Node::Sin,
            "cos" => Node::Cos,
            "tan" => Node::Tan,
            "exp" => Node::Exp,
            "sqrt" => Node::Sqrt,
            _ => {
                self.pos = start;
                return Err(self.error("`t` or one of sin, cos, tan, exp, sqrt"));
            }
        };
        self.skip_ws();
        if !self.eat(b'(') {
            return Err(self.error("`(` after function name"));
        }
        let arg = self.parse_sum()?;
        self.skip_ws();
        if !self.eat(b')') {
            return Err(self.error("`)`"));
        }
        Ok(ctor(Box::new(arg)))
    }
}
