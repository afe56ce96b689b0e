//! Concrete syntax: `G`, `F`, `X` (prefix) and `U` (infix) each take an
//! interval `[a,b]` or `[a,inf)`; `!`, `&`, `|` and parentheses as usual.
//! Unary operators bind tighter than `U`, which binds tighter than `&`,
//! which binds tighter than `|`.

use std::collections::BTreeSet;

use thiserror::Error;

use super::{Interval, MitlFormula};
use crate::exact::{parse_rational, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown atom `{atom}` at {pos}")]
    UnknownAtom { pos: usize, atom: String },
    #[error("malformed interval at {pos}: {msg}")]
    Interval { pos: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Not,
    And,
    Or,
    LParen,
    RParen,
    Op(char, Interval),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        let start = self.pos;
        let rest = &self.src[self.pos..];
        let close = rest.find([']', ')']).ok_or_else(|| ParseError::Interval {
            pos: start,
            msg: "missing `]` or `)`".into(),
        })?;
        let body = &rest[1..close];
        let closer = rest.as_bytes()[close] as char;
        self.pos += close + 1;
        let bad = |msg: String| ParseError::Interval { pos: start, msg };
        let (lo, hi) = body
            .split_once(',')
            .ok_or_else(|| bad(format!("expected `a,b` in `{body}`")))?;
        let lower: Rational = parse_rational(lo).map_err(|e| bad(e.to_string()))?;
        let hi = hi.trim();
        let upper = if hi == "inf" || hi == "∞" {
            if closer != ')' {
                return Err(bad("an unbounded interval must end with `)`".into()));
            }
            None
        } else {
            if closer != ']' {
                return Err(bad("a bounded interval must end with `]`".into()));
            }
            Some(parse_rational(hi).map_err(|e| bad(e.to_string()))?)
        };
        Interval::new(lower, upper).map_err(bad)
    }

    fn next(&mut self) -> Result<(usize, Tok), ParseError> {
        self.skip_ws();
        let pos = self.pos;
        let Some(c) = self.peek_char() else {
            return Ok((pos, Tok::End));
        };
        let single = match c {
            '!' | '¬' => Some(Tok::Not),
            '&' | '∧' => Some(Tok::And),
            '|' | '∨' => Some(Tok::Or),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += c.len_utf8();
            return Ok((pos, t));
        }
        if c.is_alphabetic() || c == '_' {
            let len = self.src[pos..]
                .find(|ch: char| !(ch.is_alphanumeric() || ch == '_'))
                .unwrap_or(self.src.len() - pos);
            let word = &self.src[pos..pos + len];
            self.pos += len;
            if matches!(word, "G" | "F" | "X" | "U") {
                self.skip_ws();
                if self.peek_char() == Some('[') {
                    let i = self.interval()?;
                    return Ok((pos, Tok::Op(word.chars().next().unwrap_or('G'), i)));
                }
                if word == "U" {
                    return Err(ParseError::Syntax {
                        pos,
                        msg: "`U` needs an interval".into(),
                    });
                }
            }
            return Ok((pos, Tok::Ident(word.to_string())));
        }
        Err(ParseError::Syntax {
            pos,
            msg: format!("unexpected character `{c}`"),
        })
    }
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    sigma: &'a BTreeSet<String>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn or(&mut self) -> Result<MitlFormula, ParseError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = MitlFormula::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<MitlFormula, ParseError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = MitlFormula::And(Box::new(lhs), Box::new(self.until()?));
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<MitlFormula, ParseError> {
        let lhs = self.unary()?;
        if let Tok::Op('U', i) = *self.peek() {
            self.bump();
            let rhs = self.until()?;
            return Ok(MitlFormula::Until(i, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<MitlFormula, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Not => Ok(MitlFormula::Not(Box::new(self.unary()?))),
            Tok::Op('G', i) => Ok(MitlFormula::Always(i, Box::new(self.unary()?))),
            Tok::Op('F', i) => Ok(MitlFormula::Eventually(i, Box::new(self.unary()?))),
            Tok::Op('X', i) => Ok(MitlFormula::Next(i, Box::new(self.unary()?))),
            Tok::LParen => {
                let inner = self.or()?;
                match self.bump() {
                    Tok::RParen => Ok(inner),
                    _ => Err(ParseError::Syntax {
                        pos: self.pos(),
                        msg: "expected `)`".into(),
                    }),
                }
            }
            Tok::Ident(name) => {
                if self.sigma.contains(&name) {
                    Ok(MitlFormula::Atom(name))
                } else {
                    Err(ParseError::UnknownAtom { pos, atom: name })
                }
            }
            Tok::End => Err(ParseError::Syntax {
                pos,
                msg: "unexpected end of formula".into(),
            }),
            t => Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected {t:?}"),
            }),
        }
    }
}

/// Parses `text` over the alphabet `sigma`.
pub fn parse(text: &str, sigma: &BTreeSet<String>) -> Result<MitlFormula, ParseError> {
    let mut lexer = Lexer { src: text, pos: 0 };
    let mut toks = Vec::new();
    loop {
        let (pos, t) = lexer.next()?;
        let end = t == Tok::End;
        toks.push((pos, t));
        if end {
            break;
        }
    }
    let mut p = Parser { toks, at: 0, sigma };
    let f = p.or()?;
    match p.peek() {
        Tok::End => Ok(f),
        _ => Err(ParseError::Syntax {
            pos: p.pos(),
            msg: "trailing input".into(),
        }),
    }
}
