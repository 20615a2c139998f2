//! Data expressions over `(n, t, W)`, plus `s` in anticipative hazards.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! cmp   := sum (("<" | "<=" | ">" | ">=" | "==" | "!=") sum)?
//! sum   := prod (("+" | "-") prod)*
//! prod  := unary (("*" | "/") unary)*
//! unary := "-" unary | power
//! power := atom ("^" unary)?
//! atom  := number | var | func "(" cmp ("," cmp)* ")" | "(" cmp ")"
//! ```
//!
//! Comparisons evaluate to `1` or `0`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// 0-based byte offset into the expression.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at character {})", self.message, self.offset + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    N,
    T,
    W,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Max,
    Min,
    Abs,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl Func {
    fn parse(name: &str) -> Option<(Self, usize)> {
        Some(match name {
            "max" => (Func::Max, 2),
            "min" => (Func::Min, 2),
            "abs" => (Func::Abs, 1),
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "tanh" => (Func::Tanh, 1),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
}

/// Values of the free variables at one node.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env {
    pub n: f64,
    pub t: f64,
    pub w: f64,
    pub s: f64,
}

impl Expr {
    /// Parses `src`, accepting only the variables in `allowed`.
    pub fn parse(src: &str, allowed: &[Var]) -> Result<Self, ParseError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0, allowed };
        let root = p.cmp()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.error(format!("unexpected '{}'", p.src[p.pos] as char)));
        }
        Ok(Self { root })
    }

    pub fn eval(&self, env: &Env) -> f64 {
        eval(&self.root, env)
    }
}

fn eval(node: &Node, env: &Env) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(Var::N) => env.n,
        Node::Var(Var::T) => env.t,
        Node::Var(Var::W) => env.w,
        Node::Var(Var::S) => env.s,
        Node::Neg(a) => -eval(a, env),
        Node::Bin(op, a, b) => {
            let (x, y) = (eval(a, env), eval(b, env));
            let ind = |c: bool| if c { 1.0 } else { 0.0 };
            match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                Op::Div => x / y,
                Op::Pow => x.powf(y),
                Op::Lt => ind(x < y),
                Op::Le => ind(x <= y),
                Op::Gt => ind(x > y),
                Op::Ge => ind(x >= y),
                Op::Eq => ind(x == y),
                Op::Ne => ind(x != y),
            }
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], env);
            match f {
                Func::Max => a.max(eval(&args[1], env)),
                Func::Min => a.min(eval(&args[1], env)),
                Func::Abs => a.abs(),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Tanh => a.tanh(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    allowed: &'a [Var],
}

impl Parser<'_> {
    fn error(&self, message: String) -> ParseError {
        ParseError { offset: self.pos, message }
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

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s.as_bytes()) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn cmp(&mut self) -> Result<Node, ParseError> {
        let lhs = self.sum()?;
        let op = if self.eat("<=") {
            Op::Le
        } else if self.eat(">=") {
            Op::Ge
        } else if self.eat("==") {
            Op::Eq
        } else if self.eat("!=") {
            Op::Ne
        } else if self.eat("<") {
            Op::Lt
        } else if self.eat(">") {
            Op::Gt
        } else {
            return Ok(lhs);
        };
        let rhs = self.sum()?;
        Ok(Node::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.prod()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => Op::Add,
                Some(b'-') => Op::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.prod()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn prod(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => Op::Mul,
                Some(b'/') => Op::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression".into())),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.cmp()?;
                if !self.eat(")") {
                    return Err(self.error("expected ')'".into()));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                digits(self);
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Node::Num).map_err(|_| ParseError {
            offset: start,
            message: format!("malformed number '{text}'"),
        })
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let var = match name {
            "n" => Some(Var::N),
            "t" => Some(Var::T),
            "W" => Some(Var::W),
            "s" => Some(Var::S),
            _ => None,
        };
        if let Some(v) = var {
            if !self.allowed.contains(&v) {
                return Err(ParseError { offset: start, message: format!("variable '{name}' is not available here") });
            }
            return Ok(Node::Var(v));
        }
        if let Some((func, arity)) = Func::parse(name) {
            if !self.eat("(") {
                return Err(self.error(format!("expected '(' after {name}")));
            }
            let mut args = vec![self.cmp()?];
            while self.eat(",") {
                args.push(self.cmp()?);
            }
            if !self.eat(")") {
                return Err(self.error("expected ')'".into()));
            }
            if args.len() != arity {
                return Err(ParseError {
                    offset: start,
                    message: format!("{name} takes {arity} argument(s), got {}", args.len()),
                });
            }
            return Ok(Node::Call(func, args));
        }
        if name == "pi" {
            return Ok(Node::Num(std::f64::consts::PI));
        }
        Err(ParseError { offset: start, message: format!("unknown name '{name}'") })
    }
}
