//! Arithmetic expressions over fiber components, spatial coordinates and time.
//!
//! Grammar (usual precedence, `^` binds tightest and associates right):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := unary ('^' factor)?
//! unary   := '-' unary | primary
//! primary := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names: `x`, `y` (spatial coordinates), `t` (time), `s1`..`s4` (fiber
//! components), `pi`; functions `sin`, `cos`, `exp`. An expression keeps its
//! source text so it serializes exactly as written.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    X,
    Y,
    T,
    Fiber(usize),
}

#[derive(Debug, Clone, Copy)]
enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expression {
    source: String,
    #[serde(skip)]
    ast: Node,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl TryFrom<String> for Expression {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Expression::parse(&s)
    }
}

impl From<Expression> for String {
    fn from(e: Expression) -> String {
        e.source
    }
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser {
            chars: source.as_bytes(),
            pos: 0,
            src: source,
        };
        p.skip_ws();
        let ast = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(Error::invalid(
                "expression",
                format!("unexpected input at byte {} of {:?}", p.pos, source),
            ));
        }
        Ok(Expression {
            source: source.to_string(),
            ast,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Largest fiber index mentioned (1-based), or 0 when none appears.
    pub fn max_fiber_component(&self) -> usize {
        fn walk(n: &Node, max: &mut usize) {
            match n {
                Node::Var(Var::Fiber(i)) => *max = (*max).max(*i + 1),
                Node::Neg(a) | Node::Call(_, a) => walk(a, max),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b) => {
                    walk(a, max);
                    walk(b, max);
                }
                _ => {}
            }
        }
        let mut max = 0;
        walk(&self.ast, &mut max);
        max
    }

    pub fn uses_spatial(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Var(Var::X) | Node::Var(Var::Y) => true,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b) => walk(a) || walk(b),
                _ => false,
            }
        }
        walk(&self.ast)
    }

    /// Evaluates with spatial coordinates `x` (length 1 or 2), fiber value
    /// `sigma`, and time `t`. A fiber index beyond `sigma` yields NaN so the
    /// mistake surfaces in downstream finiteness checks.
    pub fn eval(&self, x: &[f64], sigma: &[f64], t: f64) -> f64 {
        fn ev(n: &Node, x: &[f64], sigma: &[f64], t: f64) -> f64 {
            match n {
                Node::Num(v) => *v,
                Node::Var(Var::X) => x.first().copied().unwrap_or(f64::NAN),
                Node::Var(Var::Y) => x.get(1).copied().unwrap_or(f64::NAN),
                Node::Var(Var::T) => t,
                Node::Var(Var::Fiber(i)) => sigma.get(*i).copied().unwrap_or(f64::NAN),
                Node::Neg(a) => -ev(a, x, sigma, t),
                Node::Add(a, b) => ev(a, x, sigma, t) + ev(b, x, sigma, t),
                Node::Sub(a, b) => ev(a, x, sigma, t) - ev(b, x, sigma, t),
                Node::Mul(a, b) => ev(a, x, sigma, t) * ev(b, x, sigma, t),
                Node::Div(a, b) => ev(a, x, sigma, t) / ev(b, x, sigma, t),
                Node::Pow(a, b) => ev(a, x, sigma, t).powf(ev(b, x, sigma, t)),
                Node::Call(Func::Sin, a) => ev(a, x, sigma, t).sin(),
                Node::Call(Func::Cos, a) => ev(a, x, sigma, t).cos(),
                Node::Call(Func::Exp, a) => ev(a, x, sigma, t).exp(),
            }
        }
        ev(&self.ast, x, sigma, t)
    }
}

struct Parser<'a> {
    chars: &'a [u8],
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn fail(&self, what: &str) -> Error {
        Error::invalid(
            "expression",
            format!("{} at byte {} of {:?}", what, self.pos, self.src),
        )
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Node> {
        let base = self.unary()?;
        if self.eat(b'^') {
            let exp = self.factor()?;
            Ok(Node::Pow(Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else {
            self.primary()
        }
    }

    fn primary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.fail("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.name(),
            _ => Err(self.fail("expected a number, a name, or '('")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                self.pos += 1;
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        self.skip_ws();
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| self.fail("bad number"))
    }

    fn name(&mut self) -> Result<Node> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let word = &self.src[start..self.pos];
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let func = match word {
                "sin" => Func::Sin,
                "cos" => Func::Cos,
                "exp" => Func::Exp,
                _ => return Err(self.fail("unknown function (expected sin, cos, exp)")),
            };
            self.pos += 1;
            self.skip_ws();
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.fail("expected ')'"));
            }
            return Ok(Node::Call(func, Box::new(arg)));
        }
        let var = match word {
            "x" => Node::Var(Var::X),
            "y" => Node::Var(Var::Y),
            "t" => Node::Var(Var::T),
            "pi" => Node::Num(std::f64::consts::PI),
            "s1" => Node::Var(Var::Fiber(0)),
            "s2" => Node::Var(Var::Fiber(1)),
            "s3" => Node::Var(Var::Fiber(2)),
            "s4" => Node::Var(Var::Fiber(3)),
            _ => return Err(self.fail("unknown name (expected x, y, t, pi, s1..s4)")),
        };
        Ok(var)
    }
}
