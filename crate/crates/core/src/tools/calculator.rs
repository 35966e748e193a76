//! Exact arithmetic over formulas such as `(135-114)/135`.
//!
//! Grammar:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number '%'? | '(' expr ')'
//! number  := digits (',' ddd)* ('.' digits)? | '.' digits
//! ```
//!
//! A `%` suffix divides the literal it follows by 100.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CalcError {
    #[error("not a formula: {0}")]
    NotAFormula(String),
    #[error("division by zero")]
    DivisionByZero,
}

/// Value of a formula and its canonical decimal rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalcResult {
    pub value: BigRational,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(BigRational),
    Percent,
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
}

fn ten_pow(n: usize) -> BigInt {
    num_traits::pow(BigInt::from(10), n)
}

/// Parses the number literal at the start of `s`, returning its value and byte length.
pub(crate) fn lex_number(s: &str) -> Option<(BigRational, usize)> {
    let b = s.as_bytes();
    let mut i = 0;
    let mut digits = String::new();
    while i < b.len() && b[i].is_ascii_digit() {
        digits.push(b[i] as char);
        i += 1;
    }
    if !digits.is_empty() {
        while i + 3 < b.len() && b[i] == b',' && b[i + 1..i + 4].iter().all(u8::is_ascii_digit) {
            if b.get(i + 4).is_some_and(u8::is_ascii_digit) {
                break;
            }
            digits.push_str(&s[i + 1..i + 4]);
            i += 4;
        }
    }
    let mut frac = String::new();
    if b.get(i) == Some(&b'.') && b.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            frac.push(b[i] as char);
            i += 1;
        }
    }
    if digits.is_empty() && frac.is_empty() {
        return None;
    }
    let numer: BigInt = format!("{digits}{frac}").parse().ok()?;
    Some((BigRational::new(numer, ten_pow(frac.len())), i))
}

fn tokenize(expr: &str) -> Result<Vec<Token>, CalcError> {
    let not_formula = || CalcError::NotAFormula(expr.to_string());
    let mut tokens = Vec::new();
    let mut rest = expr;
    while let Some(c) = rest.chars().next() {
        if c.is_whitespace() {
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let (value, len) = lex_number(rest).ok_or_else(not_formula)?;
            tokens.push(Token::Num(value));
            rest = &rest[len..];
            continue;
        }
        tokens.push(match c {
            '%' => Token::Percent,
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '(' => Token::Open,
            ')' => Token::Close,
            _ => return Err(not_formula()),
        });
        rest = &rest[c.len_utf8()..];
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    source: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn fail(&self) -> CalcError {
        CalcError::NotAFormula(self.source.to_string())
    }

    fn expr(&mut self) -> Result<Expr, CalcError> {
        let mut lhs = self.term()?;
        while let Some(op @ (Token::Plus | Token::Minus)) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == Token::Plus {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, CalcError> {
        let mut lhs = self.unary()?;
        while let Some(op @ (Token::Star | Token::Slash)) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == Token::Star {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, CalcError> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, CalcError> {
        match self.bump().cloned() {
            Some(Token::Num(v)) => {
                if self.peek() == Some(&Token::Percent) {
                    self.pos += 1;
                    return Ok(Expr::Num(v / BigRational::from_integer(BigInt::from(100))));
                }
                Ok(Expr::Num(v))
            }
            Some(Token::Open) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Token::Close) => Ok(inner),
                    _ => Err(self.fail()),
                }
            }
            _ => Err(self.fail()),
        }
    }
}

#[derive(Debug, Clone)]
enum Expr {
    Num(BigRational),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

impl Expr {
    fn eval(&self) -> Result<BigRational, CalcError> {
        Ok(match self {
            Expr::Num(v) => v.clone(),
            Expr::Neg(e) => -e.eval()?,
            Expr::Add(a, b) => a.eval()? + b.eval()?,
            Expr::Sub(a, b) => a.eval()? - b.eval()?,
            Expr::Mul(a, b) => a.eval()? * b.eval()?,
            Expr::Div(a, b) => {
                let (num, den) = (a.eval()?, b.eval()?);
                if den.is_zero() {
                    return Err(CalcError::DivisionByZero);
                }
                num / den
            }
        })
    }
}

fn parse(expr: &str) -> Result<Expr, CalcError> {
    let tokens = tokenize(expr)?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        source: expr,
    };
    let tree = parser.expr()?;
    if parser.pos != tokens.len() {
        return Err(parser.fail());
    }
    Ok(tree)
}

/// True when `text` is a well-formed formula (it may still divide by zero).
pub fn is_formula(text: &str) -> bool {
    parse(text).is_ok()
}

/// Evaluates a formula exactly and renders the result.
pub fn eval_formula(expr: &str) -> Result<CalcResult, CalcError> {
    let value = parse(expr)?.eval()?;
    let rendered = render_rational(&value);
    Ok(CalcResult { value, rendered })
}

/// Decimal places kept for non-integers.
pub const RENDER_DECIMALS: usize = 4;

/// Integers print without a decimal point; other values are rounded half away
/// from zero to four decimal places and trailing zeros are dropped.
pub fn render_rational(value: &BigRational) -> String {
    if value.is_integer() {
        return value.to_integer().to_string();
    }
    let scale = BigRational::from_integer(ten_pow(RENDER_DECIMALS));
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let scaled = (value.abs() * scale + half).floor().to_integer();
    if scaled.is_zero() {
        return "0".to_string();
    }
    let digits = format!("{:0>width$}", scaled.to_string(), width = RENDER_DECIMALS + 1);
    let (int_part, frac_part) = digits.split_at(digits.len() - RENDER_DECIMALS);
    let frac_part = frac_part.trim_end_matches('0');
    let sign = if value.is_negative() { "-" } else { "" };
    if frac_part.is_empty() {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}
