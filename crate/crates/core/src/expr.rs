//! Arithmetic expression grammar for config-defined systems.
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := unary ('^' factor)?            (right associative)
//! unary  := '-' unary | atom
//! atom   := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names resolve against the state variables (`x`, `y`, `z` for dim <= 3 or
//! `x1..xN`), the noise variables (`w` or `w1..wK`) and the declared
//! parameters. `sin`, `cos`, `tanh` and `exp` are the built-in functions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    State(usize),
    Noise(usize),
    Param(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tanh(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, state: &[f64], noise: &[f64], params: &[f64]) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::State(i) => state[*i],
            Expr::Noise(i) => noise[*i],
            Expr::Param(i) => params[*i],
            Expr::Add(a, b) => a.eval(state, noise, params) + b.eval(state, noise, params),
            Expr::Sub(a, b) => a.eval(state, noise, params) - b.eval(state, noise, params),
            Expr::Mul(a, b) => a.eval(state, noise, params) * b.eval(state, noise, params),
            Expr::Div(a, b) => a.eval(state, noise, params) / b.eval(state, noise, params),
            Expr::Pow(a, b) => a.eval(state, noise, params).powf(b.eval(state, noise, params)),
            Expr::Neg(a) => -a.eval(state, noise, params),
            Expr::Sin(a) => a.eval(state, noise, params).sin(),
            Expr::Cos(a) => a.eval(state, noise, params).cos(),
            Expr::Tanh(a) => a.eval(state, noise, params).tanh(),
            Expr::Exp(a) => a.eval(state, noise, params).exp(),
        }
    }

    /// Highest noise channel referenced, if any.
    pub fn max_noise_channel(&self) -> Option<usize> {
        match self {
            Expr::Noise(i) => Some(*i),
            Expr::Const(_) | Expr::State(_) | Expr::Param(_) => None,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                match (a.max_noise_channel(), b.max_noise_channel()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Tanh(a) | Expr::Exp(a) => {
                a.max_noise_channel()
            }
        }
    }

    /// True if the expression is the literal constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(v) if *v == 0.0)
    }
}

/// Name resolution context for parsing.
pub struct VarTable {
    pub state: Vec<String>,
    pub noise: Vec<String>,
    pub params: Vec<String>,
}

impl VarTable {
    /// Conventional names for a system of dimension `dim` driven by
    /// `channels` noise variables.
    pub fn conventional(dim: usize, channels: usize, params: Vec<String>) -> Self {
        let state = if dim <= 3 {
            ["x", "y", "z"][..dim].iter().map(|s| s.to_string()).collect()
        } else {
            (1..=dim).map(|i| format!("x{i}")).collect()
        };
        let noise = if channels == 1 {
            vec!["w".to_string()]
        } else {
            (1..=channels).map(|i| format!("w{i}")).collect()
        };
        Self { state, noise, params }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a VarTable,
}

pub fn parse(src: &str, vars: &VarTable) -> Result<Expr> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        vars,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Expr(format!(
            "{msg} at byte {} in {:?}",
            self.pos,
            String::from_utf8_lossy(self.src)
        ))
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.eat(b'^') {
            let exp = self.factor()?; // right associative
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name(),
            _ => Err(self.err("expected a number, name or '('")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                self.pos += 1;
                if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| self.err("bad number"))
    }

    fn name(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        if self.eat(b'(') {
            let arg = Box::new(self.expr()?);
            if !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
            return match name.as_str() {
                "sin" => Ok(Expr::Sin(arg)),
                "cos" => Ok(Expr::Cos(arg)),
                "tanh" => Ok(Expr::Tanh(arg)),
                "exp" => Ok(Expr::Exp(arg)),
                _ => Err(self.err(&format!("unknown function '{name}'"))),
            };
        }
        if let Some(i) = self.vars.state.iter().position(|s| *s == name) {
            return Ok(Expr::State(i));
        }
        if let Some(i) = self.vars.noise.iter().position(|s| *s == name) {
            return Ok(Expr::Noise(i));
        }
        if let Some(i) = self.vars.params.iter().position(|s| *s == name) {
            return Ok(Expr::Param(i));
        }
        Err(self.err(&format!("unknown name '{name}'")))
    }
}
