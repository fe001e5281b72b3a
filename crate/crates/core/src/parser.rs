//! Lexer and recursive-descent parser for the real-valued source language.
//!
//! The surface syntax is a small Scala-like subset:
//!
//! ```text
//! def sine(x: Real): Real = {
//!   require(-2.0 <= x && x <= 2.0 && x +/- 1e-11)
//!   x - (x*x*x)/6.0 + (x*x*x*x*x)/120.0
//! } ensuring(res => res +/- 1.001e-11)
//! ```
//!
//! Numeric literals are parsed exactly as rationals; no binary floating
//! point is involved. See `docs/grammar.md` for the full grammar.

use crate::ast::{Cond, Expr, ExprKind, Pred, RcExpr, RelOp, Sym};
use crate::rational::Rat;
use std::fmt;
use std::sync::Arc;

/// Parse failure with 1-based source position.
#[derive(Debug, Clone)]
pub struct SyntaxError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for SyntaxError {}

/// Parameter type annotation.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PType {
    Real,
    Int,
}

/// Precondition predicate, before range/error decomposition: comparisons
/// plus `x +/- e` uncertainty markers.
#[derive(Clone, Debug)]
pub enum RawPred {
    Rel(Cond),
    Uncert(Sym, Rat),
    And(Vec<RawPred>),
    Or(Vec<RawPred>),
    Not(Box<RawPred>),
}

impl RawPred {
    /// Convert to a plain predicate; errors if any uncertainty marker is
    /// present (only permitted in preconditions, already stripped there).
    pub fn to_pred(&self) -> Option<Pred> {
        Some(match self {
            RawPred::Rel(c) => Pred::Rel(c.clone()),
            RawPred::Uncert(..) => return None,
            RawPred::And(ps) => {
                Pred::And(ps.iter().map(|p| p.to_pred()).collect::<Option<_>>()?)
            }
            RawPred::Or(ps) => {
                Pred::Or(ps.iter().map(|p| p.to_pred()).collect::<Option<_>>()?)
            }
            RawPred::Not(p) => Pred::Not(Box::new(p.to_pred()?)),
        })
    }
}

/// Statement block: `val` bindings followed by a result.
#[derive(Clone, Debug)]
pub struct RawStmts {
    pub vals: Vec<(Sym, RcExpr)>,
    pub tail: RawTail,
}

#[derive(Clone, Debug)]
pub enum RawTail {
    /// Result expression(s); more than one means a tuple result.
    Expr(Vec<RcExpr>),
    If {
        cond: Pred,
        then_b: Box<RawStmts>,
        else_b: Box<RawStmts>,
    },
}

/// One parsed function definition, prior to semantic lowering.
#[derive(Clone, Debug)]
pub struct RawFn {
    pub name: Sym,
    pub params: Vec<(Sym, PType)>,
    pub ret_arity: usize,
    pub pre: RawPred,
    pub body: RawStmts,
    pub post_error: Option<Rat>,
    pub line: u32,
}

pub fn parse_program(src: &str) -> Result<Vec<RawFn>, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        allow_tilde: false,
        allow_uncert: false,
    };
    let mut fns = Vec::new();
    while !p.at_end() {
        fns.push(p.fndef()?);
    }
    Ok(fns)
}

/// Parse a standalone arithmetic expression (used by tests and tools).
pub fn parse_expr(src: &str) -> Result<RcExpr, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        allow_tilde: false,
        allow_uncert: false,
    };
    let e = p.expr()?;
    if !p.at_end() {
        return Err(p.err_here("trailing input after expression"));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(Rat),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Semi,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Arrow,
    AndAnd,
    OrOr,
    Bang,
    PlusMinus,
    Tilde,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(_) => "number".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Arrow => "`=>`".into(),
            Tok::AndAnd => "`&&`".into(),
            Tok::OrOr => "`||`".into(),
            Tok::Bang => "`!`".into(),
            Tok::PlusMinus => "`+/-`".into(),
            Tok::Tilde => "`~`".into(),
        }
    }
}

struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

fn lex(src: &str) -> Result<Vec<Spanned>, SyntaxError> {
    let mut out = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    let (mut line, mut col) = (1u32, 1u32);
    let err = |line, col, m: &str| SyntaxError {
        line,
        col,
        message: m.to_string(),
    };
    while i < bytes.len() {
        let c = bytes[i];
        let (tl, tc) = (line, col);
        let mut push = |tok: Tok| {
            out.push(Spanned {
                tok,
                line: tl,
                col: tc,
            })
        };
        macro_rules! adv {
            ($n:expr) => {{
                i += $n;
                col += $n as u32;
            }};
        }
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => adv!(1),
            '/' if i + 1 < bytes.len() && bytes[i + 1] == '/' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '(' => {
                push(Tok::LParen);
                adv!(1)
            }
            ')' => {
                push(Tok::RParen);
                adv!(1)
            }
            '{' => {
                push(Tok::LBrace);
                adv!(1)
            }
            '}' => {
                push(Tok::RBrace);
                adv!(1)
            }
            ',' => {
                push(Tok::Comma);
                adv!(1)
            }
            ':' => {
                push(Tok::Colon);
                adv!(1)
            }
            ';' => {
                push(Tok::Semi);
                adv!(1)
            }
            '~' => {
                push(Tok::Tilde);
                adv!(1)
            }
            '*' => {
                push(Tok::Star);
                adv!(1)
            }
            '/' => {
                push(Tok::Slash);
                adv!(1)
            }
            '+' => {
                if i + 2 < bytes.len() && bytes[i + 1] == '/' && bytes[i + 2] == '-' {
                    push(Tok::PlusMinus);
                    adv!(3)
                } else {
                    push(Tok::Plus);
                    adv!(1)
                }
            }
            '-' => {
                push(Tok::Minus);
                adv!(1)
            }
            '<' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '=' {
                    push(Tok::Le);
                    adv!(2)
                } else {
                    push(Tok::Lt);
                    adv!(1)
                }
            }
            '>' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '=' {
                    push(Tok::Ge);
                    adv!(2)
                } else {
                    push(Tok::Gt);
                    adv!(1)
                }
            }
            '=' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '>' {
                    push(Tok::Arrow);
                    adv!(2)
                } else {
                    push(Tok::Eq);
                    adv!(1)
                }
            }
            '&' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '&' {
                    push(Tok::AndAnd);
                    adv!(2)
                } else {
                    return Err(err(line, col, "expected `&&`"));
                }
            }
            '|' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '|' {
                    push(Tok::OrOr);
                    adv!(2)
                } else {
                    return Err(err(line, col, "expected `||`"));
                }
            }
            '!' => {
                push(Tok::Bang);
                adv!(1)
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == '.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit()
                {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = bytes[start..i].iter().collect();
                let v: Rat = text
                    .parse()
                    .map_err(|_| err(tl, tc, &format!("bad numeric literal `{text}`")))?;
                push(Tok::Num(v));
                col += (i - start) as u32;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_')
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                push(Tok::Ident(text));
                col += (i - start) as u32;
            }
            other => {
                return Err(err(line, col, &format!("unexpected character `{other}`")));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    /// `~x` (actual-value variable) permitted — inside `require` only.
    allow_tilde: bool,
    /// `x +/- e` uncertainty permitted — inside `require`/`ensuring` only.
    allow_uncert: bool,
}

impl Parser {
    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|s| &s.tok)
    }

    fn err_here(&self, msg: &str) -> SyntaxError {
        let (line, col) = self
            .toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((0, 0));
        let found = match self.toks.get(self.pos) {
            Some(s) => format!("{msg} (found {})", s.tok.describe()),
            None => format!("{msg} (found end of input)"),
        };
        SyntaxError {
            line,
            col,
            message: found,
        }
    }

    fn expect(&mut self, t: Tok) -> Result<(), SyntaxError> {
        match self.peek() {
            Some(tok) if *tok == t => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err_here(&format!("expected {}", t.describe()))),
        }
    }

    fn ident(&mut self) -> Result<Sym, SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(Arc::from(s.as_str()))
            }
            _ => Err(self.err_here("expected identifier")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err_here(&format!("expected `{kw}`"))),
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn number(&mut self) -> Result<Rat, SyntaxError> {
        // Allow a leading minus for bounds like `+/- -0` never appears, but
        // keep symmetric with expression literals.
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = v.clone();
                self.pos += 1;
                Ok(if neg { -&v } else { v })
            }
            _ => Err(self.err_here("expected number")),
        }
    }

    // def name(params): ret = { require(pred) stmts } [ensuring(...)]
    fn fndef(&mut self) -> Result<RawFn, SyntaxError> {
        let line = self.toks.get(self.pos).map(|s| s.line).unwrap_or(0);
        self.keyword("def")?;
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        loop {
            let p = self.ident()?;
            self.expect(Tok::Colon)?;
            let ty = match self.peek() {
                Some(Tok::Ident(s)) if s == "Real" => PType::Real,
                Some(Tok::Ident(s)) if s == "Int" => PType::Int,
                _ => return Err(self.err_here("expected `Real` or `Int`")),
            };
            self.pos += 1;
            params.push((p, ty));
            if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Colon)?;
        let ret_arity = match self.peek() {
            Some(Tok::Ident(s)) if s == "Real" => {
                self.pos += 1;
                1
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let mut n = 0;
                loop {
                    self.keyword("Real")?;
                    n += 1;
                    if self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RParen)?;
                n
            }
            _ => return Err(self.err_here("expected return type")),
        };
        self.expect(Tok::Eq)?;
        self.expect(Tok::LBrace)?;
        self.keyword("require")?;
        self.expect(Tok::LParen)?;
        self.allow_tilde = true;
        self.allow_uncert = true;
        let pre = self.raw_pred()?;
        self.allow_tilde = false;
        self.allow_uncert = false;
        self.expect(Tok::RParen)?;
        if self.peek() == Some(&Tok::Semi) {
            self.pos += 1;
        }
        let body = self.stmts()?;
        self.expect(Tok::RBrace)?;
        let post_error = if self.peek_keyword("ensuring") {
            self.pos += 1;
            self.expect(Tok::LParen)?;
            let bound_name = self.ident()?;
            self.expect(Tok::Arrow)?;
            let used = self.ident()?;
            if used != bound_name {
                return Err(self.err_here("ensuring clause must bound its own result variable"));
            }
            self.expect(Tok::PlusMinus)?;
            let e = self.number()?;
            self.expect(Tok::RParen)?;
            Some(e)
        } else {
            None
        };
        Ok(RawFn {
            name,
            params,
            ret_arity,
            pre,
            body,
            post_error,
            line,
        })
    }

    fn stmts(&mut self) -> Result<RawStmts, SyntaxError> {
        let mut vals = Vec::new();
        while self.peek_keyword("val") {
            self.pos += 1;
            let name = self.ident()?;
            self.expect(Tok::Eq)?;
            let e = self.expr()?;
            if self.peek() == Some(&Tok::Semi) {
                self.pos += 1;
            }
            vals.push((name, e));
        }
        let tail = if self.peek_keyword("if") {
            self.if_tail()?
        } else {
            RawTail::Expr(self.result_exprs()?)
        };
        Ok(RawStmts { vals, tail })
    }

    fn if_tail(&mut self) -> Result<RawTail, SyntaxError> {
        self.keyword("if")?;
        self.expect(Tok::LParen)?;
        let raw = self.raw_pred()?;
        let cond = raw
            .to_pred()
            .ok_or_else(|| self.err_here("`+/-` is not allowed in branch conditions"))?;
        self.expect(Tok::RParen)?;
        let then_b = self.block_or_stmts()?;
        self.keyword("else")?;
        let else_b = if self.peek_keyword("if") {
            let tail = self.if_tail()?;
            RawStmts {
                vals: Vec::new(),
                tail,
            }
        } else {
            self.block_or_stmts()?
        };
        Ok(RawTail::If {
            cond,
            then_b: Box::new(then_b),
            else_b: Box::new(else_b),
        })
    }

    fn block_or_stmts(&mut self) -> Result<RawStmts, SyntaxError> {
        if self.peek() == Some(&Tok::LBrace) {
            self.pos += 1;
            let s = self.stmts()?;
            self.expect(Tok::RBrace)?;
            Ok(s)
        } else {
            Ok(RawStmts {
                vals: Vec::new(),
                tail: RawTail::Expr(self.result_exprs()?),
            })
        }
    }

    /// Result position: a single expression, or `(e1, e2, ...)` tuple.
    fn result_exprs(&mut self) -> Result<Vec<RcExpr>, SyntaxError> {
        if self.peek() == Some(&Tok::LParen) {
            // Could be a tuple or a parenthesized expression; decide by
            // trying the tuple route and backtracking.
            let snap = self.pos;
            self.pos += 1;
            let first = self.expr()?;
            if self.peek() == Some(&Tok::Comma) {
                let mut items = vec![first];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    items.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                return Ok(items);
            }
            self.pos = snap;
        }
        Ok(vec![self.expr()?])
    }

    // ---- predicates ----

    fn raw_pred(&mut self) -> Result<RawPred, SyntaxError> {
        let mut parts = vec![self.and_pred()?];
        while self.peek() == Some(&Tok::OrOr) {
            self.pos += 1;
            parts.push(self.and_pred()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            RawPred::Or(parts)
        })
    }

    fn and_pred(&mut self) -> Result<RawPred, SyntaxError> {
        let mut parts = vec![self.not_pred()?];
        while self.peek() == Some(&Tok::AndAnd) {
            self.pos += 1;
            parts.push(self.not_pred()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            RawPred::And(parts)
        })
    }

    fn not_pred(&mut self) -> Result<RawPred, SyntaxError> {
        if self.peek() == Some(&Tok::Bang) {
            self.pos += 1;
            return Ok(RawPred::Not(Box::new(self.not_pred()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            // Try `( pred )`; backtrack to comparison if that reading fails
            // or is immediately continued by an arithmetic operator.
            let snap = self.pos;
            self.pos += 1;
            if let Ok(p) = self.raw_pred() {
                if self.peek() == Some(&Tok::RParen) {
                    let after = self.peek2().cloned();
                    let continues = matches!(
                        after,
                        Some(Tok::Plus)
                            | Some(Tok::Minus)
                            | Some(Tok::Star)
                            | Some(Tok::Slash)
                            | Some(Tok::Lt)
                            | Some(Tok::Le)
                            | Some(Tok::Gt)
                            | Some(Tok::Ge)
                    );
                    if !continues {
                        self.pos += 1;
                        return Ok(p);
                    }
                }
            }
            self.pos = snap;
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<RawPred, SyntaxError> {
        let lhs = self.expr()?;
        match self.peek() {
            Some(Tok::PlusMinus) => {
                if !self.allow_uncert {
                    return Err(self.err_here("`+/-` is only allowed in preconditions"));
                }
                self.pos += 1;
                let bound = self.number()?;
                match &lhs.kind {
                    ExprKind::Var(v) => Ok(RawPred::Uncert(v.clone(), bound)),
                    _ => Err(self.err_here("`+/-` applies to a plain input variable")),
                }
            }
            Some(t) => {
                let op = match t {
                    Tok::Lt => RelOp::Lt,
                    Tok::Le => RelOp::Le,
                    Tok::Gt => RelOp::Gt,
                    Tok::Ge => RelOp::Ge,
                    _ => return Err(self.err_here("expected comparison operator")),
                };
                self.pos += 1;
                let rhs = self.expr()?;
                Ok(RawPred::Rel(Cond::new(lhs, op, rhs)))
            }
            None => Err(self.err_here("expected comparison operator")),
        }
    }

    // ---- expressions ----

    fn expr(&mut self) -> Result<RcExpr, SyntaxError> {
        let mut e = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    e = Expr::add(e, self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    e = Expr::sub(e, self.term()?);
                }
                _ => return Ok(e),
            }
        }
    }

    fn term(&mut self) -> Result<RcExpr, SyntaxError> {
        let mut e = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    e = Expr::mul(e, self.unary()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    e = Expr::div(e, self.unary()?);
                }
                _ => return Ok(e),
            }
        }
    }

    fn unary(&mut self) -> Result<RcExpr, SyntaxError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.unary()?;
            // Fold literal negation for exactness; otherwise 0 - e, which
            // downstream treats as the exact sign flip.
            return Ok(match &inner.kind {
                ExprKind::Const(c) => Expr::konst(-c),
                _ => Expr::neg(inner),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<RcExpr, SyntaxError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::konst(v))
            }
            Some(Tok::Tilde) => {
                if !self.allow_tilde {
                    return Err(self.err_here("`~x` is only allowed in preconditions"));
                }
                self.pos += 1;
                let name = self.ident()?;
                Ok(Expr::var(&format!("~{name}")))
            }
            Some(Tok::Ident(id)) if id == "sqrt" => {
                self.pos += 1;
                self.expect(Tok::LParen)?;
                let a = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::sqrt(a))
            }
            Some(Tok::Ident(_)) => {
                let name = self.ident()?;
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Expr::call(name, args))
                } else {
                    Ok(Expr::var_sym(name))
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => Err(self.err_here("expected expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Expr;

    #[test]
    fn lex_plus_minus_token() {
        let toks = lex("x +/- 1e-11").unwrap();
        assert_eq!(toks.len(), 3);
        assert!(matches!(toks[1].tok, Tok::PlusMinus));
    }

    #[test]
    fn parse_simple_fn() {
        let src = r#"
def sine(x: Real): Real = {
  require(-2.0 <= x && x <= 2.0 && x +/- 1e-11)
  x - (x*x*x)/6.0 + (x*x*x*x*x)/120.0 - (x*x*x*x*x*x*x)/5040.0
} ensuring(res => res +/- 1.001e-11)
"#;
        let fns = parse_program(src).unwrap();
        assert_eq!(fns.len(), 1);
        let f = &fns[0];
        assert_eq!(f.name.as_ref(), "sine");
        assert_eq!(f.params.len(), 1);
        assert_eq!(f.ret_arity, 1);
        assert_eq!(f.post_error, Some("1.001e-11".parse().unwrap()));
        match &f.body.tail {
            RawTail::Expr(es) => assert_eq!(es.len(), 1),
            _ => panic!("expected expression tail"),
        }
    }

    #[test]
    fn parse_branch_fn() {
        let src = r#"
def q(x: Real, y: Real): Real = {
  require(-5.0 <= x && x <= 5.0 && -5.0 <= y && y <= 5.0)
  if (y < x) {
    x * y - x
  } else {
    x * y + y
  }
}
"#;
        let f = &parse_program(src).unwrap()[0];
        match &f.body.tail {
            RawTail::If { cond, .. } => match cond {
                Pred::Rel(c) => assert_eq!(c.op, RelOp::Lt),
                _ => panic!("expected bare comparison"),
            },
            _ => panic!("expected if tail"),
        }
    }

    #[test]
    fn parse_loop_shape() {
        let src = r#"
def pendulum(t: Real, w: Real, n: Int): (Real, Real) = {
  require(-2.0 <= t && t <= 2.0 && -5.0 <= w && w <= 5.0 &&
          -2.01 <= ~t && ~t <= 2.01 && -5.01 <= ~w && ~w <= 5.01)
  if (n < 100) {
    val h = 0.01
    val wNew = w - h * (9.80665 / 2.0) * t
    pendulum(t + h * w, wNew, n + 1)
  } else {
    (t, w)
  }
}
"#;
        let f = &parse_program(src).unwrap()[0];
        assert_eq!(f.ret_arity, 2);
        assert_eq!(f.params[2].1, PType::Int);
        match &f.body.tail {
            RawTail::If { then_b, else_b, .. } => {
                assert_eq!(then_b.vals.len(), 2);
                match &then_b.tail {
                    RawTail::Expr(es) => {
                        assert_eq!(es.len(), 1);
                        assert!(matches!(es[0].kind, ExprKind::Call(..)));
                    }
                    _ => panic!(),
                }
                match &else_b.tail {
                    RawTail::Expr(es) => assert_eq!(es.len(), 2),
                    _ => panic!("expected tuple else"),
                }
            }
            _ => panic!("expected if tail"),
        }
    }

    #[test]
    fn exact_literals() {
        let e = parse_expr("0.1 + 1e-3").unwrap();
        match &e.kind {
            ExprKind::Add(a, b) => {
                match (&a.kind, &b.kind) {
                    (ExprKind::Const(x), ExprKind::Const(y)) => {
                        assert_eq!(*x, Rat::from_ratio(1, 10));
                        assert_eq!(*y, Rat::from_ratio(1, 1000));
                    }
                    _ => panic!(),
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn unary_minus_folds_literals() {
        let e = parse_expr("-2.5 * x").unwrap();
        match &e.kind {
            ExprKind::Mul(a, _) => match &a.kind {
                ExprKind::Const(c) => assert_eq!(*c, "-2.5".parse().unwrap()),
                _ => panic!("literal not folded"),
            },
            _ => panic!(),
        }
        // Non-literal: becomes 0 - x (exact negation marker).
        let e = parse_expr("-x").unwrap();
        match &e.kind {
            ExprKind::Sub(z, _) => match &z.kind {
                ExprKind::Const(c) => assert!(c.is_zero()),
                _ => panic!(),
            },
            _ => panic!(),
        }
    }

    #[test]
    fn pretty_print_roundtrip() {
        for src in [
            "x + y * z - (y + 1)",
            "x / (y * z)",
            "x - x * x * x / 6.0",
            "sqrt(x * x + 1.5)",
            "(x + y) * (x - y)",
            "0.0015 * x",
        ] {
            let e1 = parse_expr(src).unwrap();
            let printed = e1.to_string();
            let e2 = parse_expr(&printed).unwrap();
            assert!(Expr::same(&e1, &e2), "{src} -> {printed}");
        }
    }

    #[test]
    fn error_positions() {
        let err = parse_program("def f(x: Real): Real = {\n  require(x <' 1)\n  x\n}")
            .unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_expr("x + ").unwrap_err();
        assert!(err.message.contains("expected expression"));
    }

    #[test]
    fn tilde_only_in_require() {
        assert!(parse_expr("~x + 1").is_err());
        let src = "def f(x: Real): Real = {\n require(0 <= x && x <= 1 && 0 <= ~x && ~x <= 1.1)\n x + ~x\n}";
        // tilde in the body is rejected
        assert!(parse_program(src).is_err());
    }

    #[test]
    fn nested_if_else_if() {
        let src = r#"
def f(x: Real): Real = {
  require(0.0 <= x && x <= 10.0)
  if (x < 3.0) { x } else if (x < 7.0) { x * 2.0 } else { x * 3.0 }
}
"#;
        let f = &parse_program(src).unwrap()[0];
        match &f.body.tail {
            RawTail::If { else_b, .. } => {
                assert!(matches!(else_b.tail, RawTail::If { .. }));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn paren_pred_and_compound_comparisons() {
        let src = r#"
def f(x: Real, y: Real): Real = {
  require((0.0 <= x && x <= 1.0) && 0.0 <= y && y <= 1.0 && (x + y) * 2.0 <= 1.5)
  x + y
}
"#;
        let f = &parse_program(src).unwrap()[0];
        match &f.pre {
            RawPred::And(ps) => assert!(ps.len() >= 3),
            _ => panic!("expected conjunction, got {:?}", f.pre),
        }
    }
}
