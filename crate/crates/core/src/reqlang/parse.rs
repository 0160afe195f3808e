//! Lexer and parser for the requirement language.
//!
//! A program is a sequence of `name = expression` definitions plus an
//! optional `cpspec { … }` block. Expressions cover both packet-space
//! predicates (`(srcIp = 10.0.1.0/24) ∩ …`) and path sets (regexes over
//! `[label]` atoms combined with ∩/∪). The parser builds untyped expressions;
//! `mod.rs` types them into predicates, path sets, and requirements. ASCII
//! spellings (`&`, `|`, `->`, `!=`) are accepted alongside `∩`, `∪`, `→`, `≠`.

use std::fmt;

use super::{CmpOp, RawCpSpec, ReqError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) enum Tok {
    Ident(String),
    Value(String),
    LBrack,
    RBrack,
    Caret,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Dot,
    Star,
    Plus,
    Question,
    And,
    Or,
    Eq,
    Ne,
    Arrow,
    Comma,
    Colon,
    Semi,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "{s}"),
            Tok::Value(s) => write!(f, "{s}"),
            Tok::LBrack => write!(f, "["),
            Tok::RBrack => write!(f, "]"),
            Tok::Caret => write!(f, "^"),
            Tok::LParen => write!(f, "("),
            Tok::RParen => write!(f, ")"),
            Tok::LBrace => write!(f, "{{"),
            Tok::RBrace => write!(f, "}}"),
            Tok::Dot => write!(f, "."),
            Tok::Star => write!(f, "*"),
            Tok::Plus => write!(f, "+"),
            Tok::Question => write!(f, "?"),
            Tok::And => write!(f, "∩"),
            Tok::Or => write!(f, "∪"),
            Tok::Eq => write!(f, "="),
            Tok::Ne => write!(f, "≠"),
            Tok::Arrow => write!(f, "->"),
            Tok::Comma => write!(f, ","),
            Tok::Colon => write!(f, ":"),
            Tok::Semi => write!(f, ";"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

/// Untyped syntax tree; typing happens against the definition environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) enum RawExpr {
    FieldCmp {
        field: String,
        op: CmpOp,
        value: String,
    },
    Label {
        atom: String,
        negate: bool,
    },
    AnyDev,
    Ref(String),
    And(Box<RawExpr>, Box<RawExpr>),
    Or(Box<RawExpr>, Box<RawExpr>),
    Concat(Box<RawExpr>, Box<RawExpr>),
    Star(Box<RawExpr>),
    Plus(Box<RawExpr>),
    Opt(Box<RawExpr>),
    /// `([S]: pred)` — a predicate annotated with a source selector; only
    /// legal as the left arm of a requirement.
    SrcPred {
        source: String,
        pred: Box<RawExpr>,
    },
    /// `pred -> path`, `([S]: pred) -> path`, or `(pred, path)`.
    Req {
        sources: Option<String>,
        pred: Box<RawExpr>,
        path: Box<RawExpr>,
    },
}

#[derive(Debug, Clone)]
pub(super) enum RawItem {
    Def { name: String, expr: RawExpr },
    CpSpec(RawCpSpec),
}

fn err(pos: Pos, message: impl Into<String>) -> ReqError {
    ReqError::Syntax {
        line: pos.line,
        col: pos.col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ReqError> {
    let mut out = Vec::new();
    let mut line = 1u32;
    let mut col = 1u32;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        let mut advance = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                advance(&mut chars);
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    advance(&mut chars);
                    if c == '\n' {
                        break;
                    }
                }
            }
            '[' => {
                advance(&mut chars);
                out.push((Tok::LBrack, pos));
            }
            ']' => {
                advance(&mut chars);
                out.push((Tok::RBrack, pos));
            }
            '^' => {
                advance(&mut chars);
                out.push((Tok::Caret, pos));
            }
            '(' => {
                advance(&mut chars);
                out.push((Tok::LParen, pos));
            }
            ')' => {
                advance(&mut chars);
                out.push((Tok::RParen, pos));
            }
            '{' => {
                advance(&mut chars);
                out.push((Tok::LBrace, pos));
            }
            '}' => {
                advance(&mut chars);
                out.push((Tok::RBrace, pos));
            }
            '.' => {
                advance(&mut chars);
                out.push((Tok::Dot, pos));
            }
            '*' => {
                advance(&mut chars);
                out.push((Tok::Star, pos));
            }
            '+' => {
                advance(&mut chars);
                out.push((Tok::Plus, pos));
            }
            '?' => {
                advance(&mut chars);
                out.push((Tok::Question, pos));
            }
            '∩' | '&' => {
                advance(&mut chars);
                out.push((Tok::And, pos));
            }
            '∪' | '|' => {
                advance(&mut chars);
                out.push((Tok::Or, pos));
            }
            '≠' => {
                advance(&mut chars);
                out.push((Tok::Ne, pos));
            }
            '→' => {
                advance(&mut chars);
                out.push((Tok::Arrow, pos));
            }
            '=' => {
                advance(&mut chars);
                out.push((Tok::Eq, pos));
            }
            '!' => {
                advance(&mut chars);
                if chars.peek() == Some(&'=') {
                    advance(&mut chars);
                    out.push((Tok::Ne, pos));
                } else {
                    return Err(err(pos, "expected != after !"));
                }
            }
            '-' => {
                advance(&mut chars);
                if chars.peek() == Some(&'>') {
                    advance(&mut chars);
                    out.push((Tok::Arrow, pos));
                } else {
                    return Err(err(pos, "stray '-' (idents may contain '-' only after a letter)"));
                }
            }
            ',' => {
                advance(&mut chars);
                out.push((Tok::Comma, pos));
            }
            ':' => {
                advance(&mut chars);
                out.push((Tok::Colon, pos));
            }
            ';' => {
                advance(&mut chars);
                out.push((Tok::Semi, pos));
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() || c == '.' || c == '/' {
                        s.push(advance(&mut chars));
                    } else {
                        break;
                    }
                }
                // Trailing dots belong to following tokens, not the value.
                let mut dots = 0;
                while s.ends_with('.') {
                    s.pop();
                    dots += 1;
                }
                let len = s.len() as u32;
                out.push((Tok::Value(s), pos));
                for i in 0..dots {
                    out.push((
                        Tok::Dot,
                        Pos {
                            line: pos.line,
                            col: pos.col + len + i,
                        },
                    ));
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        s.push(advance(&mut chars));
                    } else if c == '-' {
                        // '-' continues an ident unless it starts an arrow.
                        let mut ahead = chars.clone();
                        ahead.next();
                        if ahead.peek() == Some(&'>') {
                            break;
                        }
                        s.push(advance(&mut chars));
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(s), pos));
            }
            other => return Err(err(pos, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

pub(super) struct Parser {
    toks: Vec<(Tok, Pos)>,
    pos: usize,
}

impl Parser {
    pub(super) fn new(text: &str) -> Result<Self, ReqError> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n).map(|(t, _)| t)
    }

    fn here(&self) -> Pos {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, p)| *p)
            .unwrap_or(Pos { line: 1, col: 1 })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ReqError> {
        let pos = self.here();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(err(pos, format!("expected {want}, found {t}"))),
            None => Err(err(pos, format!("expected {want}, found end of input"))),
        }
    }

    fn expect_ident(&mut self) -> Result<String, ReqError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s),
            Some(t) => Err(err(pos, format!("expected a name, found {t}"))),
            None => Err(err(pos, "expected a name, found end of input")),
        }
    }

    pub(super) fn parse_items(&mut self) -> Result<Vec<RawItem>, ReqError> {
        let mut items = Vec::new();
        while let Some(tok) = self.peek() {
            let pos = self.here();
            match tok {
                Tok::Ident(name) if name == "cpspec" && self.peek_at(1) == Some(&Tok::LBrace) => {
                    self.bump();
                    items.push(RawItem::CpSpec(self.parse_cpspec_block()?));
                }
                Tok::Ident(_) if self.peek_at(1) == Some(&Tok::Eq) => {
                    let name = self.expect_ident()?;
                    self.expect(Tok::Eq)?;
                    let expr = self.parse_rhs()?;
                    if self.peek() == Some(&Tok::Semi) {
                        self.bump();
                    }
                    items.push(RawItem::Def { name, expr });
                }
                _ => {
                    return Err(err(
                        pos,
                        format!("expected a definition (name = …) or cpspec block, found {tok}"),
                    ))
                }
            }
        }
        Ok(items)
    }

    /// A definition's right-hand side; `expr -> expr` forms a requirement.
    pub(super) fn parse_rhs(&mut self) -> Result<RawExpr, ReqError> {
        let lhs = self.parse_expr()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.bump();
            let path = self.parse_expr()?;
            let (sources, pred) = match lhs {
                RawExpr::Req { .. } => {
                    return Err(err(self.here(), "nested '->' in requirement"))
                }
                other => split_sources(other),
            };
            return Ok(RawExpr::Req {
                sources,
                pred: Box::new(pred),
                path: Box::new(path),
            });
        }
        Ok(lhs)
    }

    fn parse_expr(&mut self) -> Result<RawExpr, ReqError> {
        let mut lhs = self.parse_and()?;
        while self.peek() == Some(&Tok::Or) {
            self.bump();
            let rhs = self.parse_and()?;
            lhs = RawExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<RawExpr, ReqError> {
        let mut lhs = self.parse_concat()?;
        while self.peek() == Some(&Tok::And) {
            self.bump();
            let rhs = self.parse_concat()?;
            lhs = RawExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_concat(&mut self) -> Result<RawExpr, ReqError> {
        let mut lhs = self.parse_postfix()?;
        loop {
            let starts_atom = match self.peek() {
                Some(Tok::LBrack) | Some(Tok::Dot) | Some(Tok::LParen) => true,
                // An ident starts the next definition when followed by '=',
                // or a cpspec block when followed by '{'.
                Some(Tok::Ident(name)) => {
                    self.peek_at(1) != Some(&Tok::Eq)
                        && !(name == "cpspec" && self.peek_at(1) == Some(&Tok::LBrace))
                }
                _ => false,
            };
            if !starts_atom {
                return Ok(lhs);
            }
            let rhs = self.parse_postfix()?;
            lhs = RawExpr::Concat(Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_postfix(&mut self) -> Result<RawExpr, ReqError> {
        let mut e = self.parse_atom()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    e = RawExpr::Star(Box::new(e));
                }
                Some(Tok::Plus) => {
                    self.bump();
                    e = RawExpr::Plus(Box::new(e));
                }
                Some(Tok::Question) => {
                    self.bump();
                    e = RawExpr::Opt(Box::new(e));
                }
                _ => return Ok(e),
            }
        }
    }

    fn parse_atom(&mut self) -> Result<RawExpr, ReqError> {
        let pos = self.here();
        match self.peek() {
            Some(Tok::LBrack) => {
                self.bump();
                let negate = if self.peek() == Some(&Tok::Caret) {
                    self.bump();
                    true
                } else {
                    false
                };
                let atom = self.parse_label()?;
                self.expect(Tok::RBrack)?;
                Ok(RawExpr::Label { atom, negate })
            }
            Some(Tok::Dot) => {
                self.bump();
                Ok(RawExpr::AnyDev)
            }
            Some(Tok::LParen) => {
                self.bump();
                // `([S]: pred)` — source selector, then the predicate.
                if self.peek() == Some(&Tok::LBrack)
                    && self.peek_at(2) == Some(&Tok::RBrack)
                    && self.peek_at(3) == Some(&Tok::Colon)
                {
                    self.bump();
                    let source = self.parse_label()?;
                    self.expect(Tok::RBrack)?;
                    self.expect(Tok::Colon)?;
                    let pred = self.parse_expr()?;
                    self.expect(Tok::RParen)?;
                    return Ok(RawExpr::SrcPred {
                        source,
                        pred: Box::new(pred),
                    });
                }
                let inner = self.parse_rhs()?;
                if self.peek() == Some(&Tok::Comma) {
                    // Tuple requirement (pred, path).
                    self.bump();
                    let path = self.parse_expr()?;
                    self.expect(Tok::RParen)?;
                    let (sources, pred) = split_sources(inner);
                    return Ok(RawExpr::Req {
                        sources,
                        pred: Box::new(pred),
                        path: Box::new(path),
                    });
                }
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Ident(_)) => {
                let name = self.expect_ident()?;
                // `h.field` is sugar for the field itself.
                let field = if name == "h" && self.peek() == Some(&Tok::Dot) {
                    self.bump();
                    self.expect_ident()?
                } else {
                    name
                };
                match self.peek() {
                    Some(Tok::Eq) | Some(Tok::Ne) => {
                        let op = if self.bump() == Some(Tok::Eq) {
                            CmpOp::Eq
                        } else {
                            CmpOp::Ne
                        };
                        let vpos = self.here();
                        let value = match self.bump() {
                            Some(Tok::Value(v)) => v,
                            Some(Tok::Ident(v)) => v,
                            other => {
                                return Err(err(
                                    vpos,
                                    format!(
                                        "expected a value after comparison, found {}",
                                        other.map(|t| t.to_string()).unwrap_or("end of input".into())
                                    ),
                                ))
                            }
                        };
                        Ok(RawExpr::FieldCmp { field, op, value })
                    }
                    _ => Ok(RawExpr::Ref(field)),
                }
            }
            Some(t) => Err(err(pos, format!("expected an atom, found {t}"))),
            None => Err(err(pos, "expected an atom, found end of input")),
        }
    }

    /// Labels are identifiers or dotted values like `10.0.1.0/24`.
    fn parse_label(&mut self) -> Result<String, ReqError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s),
            Some(Tok::Value(s)) => Ok(s),
            other => Err(err(
                pos,
                format!(
                    "expected a device label, found {}",
                    other.map(|t| t.to_string()).unwrap_or("end of input".into())
                ),
            )),
        }
    }

    fn parse_cpspec_block(&mut self) -> Result<RawCpSpec, ReqError> {
        self.expect(Tok::LBrace)?;
        let mut spec = RawCpSpec::default();
        loop {
            match self.peek() {
                Some(Tok::RBrace) => {
                    self.bump();
                    return Ok(spec);
                }
                Some(Tok::Ident(_)) => {
                    let pos = self.here();
                    let key = self.expect_ident()?;
                    self.expect(Tok::Colon)?;
                    match key.as_str() {
                        "space" => spec.space = Some(self.parse_expr()?),
                        "rank" => {
                            self.expect(Tok::LBrack)?;
                            loop {
                                if self.peek() == Some(&Tok::RBrack) {
                                    self.bump();
                                    break;
                                }
                                self.expect(Tok::LParen)?;
                                let req = self.expect_ident()?;
                                self.expect(Tok::Comma)?;
                                let cp = self.expect_ident()?;
                                self.expect(Tok::RParen)?;
                                spec.rank.push((req, cp));
                                if self.peek() == Some(&Tok::Comma) {
                                    self.bump();
                                }
                            }
                        }
                        "option" => spec.option = Some(self.expect_ident()?),
                        other => {
                            return Err(err(
                                pos,
                                format!("unknown cpspec key {other:?} (space, rank, option)"),
                            ))
                        }
                    }
                    self.expect(Tok::Semi)?;
                }
                other => {
                    return Err(err(
                        self.here(),
                        format!(
                            "expected a cpspec key or '}}', found {}",
                            other.map(|t| t.to_string()).unwrap_or("end of input".into())
                        ),
                    ))
                }
            }
        }
    }
}

/// Peels a `([S]: pred)` source selector off a requirement's left arm.
fn split_sources(expr: RawExpr) -> (Option<String>, RawExpr) {
    match expr {
        RawExpr::SrcPred { source, pred } => (Some(source), *pred),
        other => (None, other),
    }
}
