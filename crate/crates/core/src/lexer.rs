//! Lexer for `.pap` source files. Comments run from `//` to end of line.

use std::fmt;

use crate::diag::{Diagnostic, FileId, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    // keywords
    KwClass,
    KwEnum,
    KwVal,
    KwFun,
    KwMain,
    KwIf,
    KwElse,
    KwMatch,
    KwLabel,
    KwContinue,
    KwNew,
    KwUnit,
    KwNull,
    KwTrue,
    KwFalse,
    KwRec,
    KwEnd,
    KwVoid,
    KwBool,
    KwFloat,
    KwThis,
    // punctuation
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Lt,
    Gt,
    Dot,
    Comma,
    Semi,
    Colon,
    Hash,
    Eq,
    Star,
    Plus,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Ident(n) => return write!(f, "identifier `{n}`"),
            Tok::Number(_) => "number",
            Tok::KwClass => "`class`",
            Tok::KwEnum => "`enum`",
            Tok::KwVal => "`val`",
            Tok::KwFun => "`fun`",
            Tok::KwMain => "`main`",
            Tok::KwIf => "`if`",
            Tok::KwElse => "`else`",
            Tok::KwMatch => "`match`",
            Tok::KwLabel => "`label`",
            Tok::KwContinue => "`continue`",
            Tok::KwNew => "`new`",
            Tok::KwUnit => "`unit`",
            Tok::KwNull => "`null`",
            Tok::KwTrue => "`true`",
            Tok::KwFalse => "`false`",
            Tok::KwRec => "`rec`",
            Tok::KwEnd => "`end`",
            Tok::KwVoid => "`void`",
            Tok::KwBool => "`bool`",
            Tok::KwFloat => "`float`",
            Tok::KwThis => "`this`",
            Tok::LBrace => "`{`",
            Tok::RBrace => "`}`",
            Tok::LBracket => "`[`",
            Tok::RBracket => "`]`",
            Tok::LParen => "`(`",
            Tok::RParen => "`)`",
            Tok::Lt => "`<`",
            Tok::Gt => "`>`",
            Tok::Dot => "`.`",
            Tok::Comma => "`,`",
            Tok::Semi => "`;`",
            Tok::Colon => "`:`",
            Tok::Hash => "`#`",
            Tok::Eq => "`=`",
            Tok::Star => "`*`",
            Tok::Plus => "`+`",
            Tok::Eof => "end of input",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(text: &str, file: FileId) -> Result<Vec<Token>, Vec<Diagnostic>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    let span_at = |start: usize, end: usize, line: u32, col: u32| {
        Span::new(file, start as u32, end as u32, line, col)
    };

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            b' ' | b'\t' | b'\r' => {
                i += 1;
                col += 1;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            _ => {
                let start = i;
                let (sline, scol) = (line, col);
                let tok = if c.is_ascii_alphabetic() || c == b'_' {
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    let word = &text[start..i];
                    match word {
                        "class" => Tok::KwClass,
                        "enum" => Tok::KwEnum,
                        "val" => Tok::KwVal,
                        "fun" => Tok::KwFun,
                        "main" => Tok::KwMain,
                        "if" => Tok::KwIf,
                        "else" => Tok::KwElse,
                        "match" => Tok::KwMatch,
                        "label" => Tok::KwLabel,
                        "continue" => Tok::KwContinue,
                        "new" => Tok::KwNew,
                        "unit" => Tok::KwUnit,
                        "null" => Tok::KwNull,
                        "true" => Tok::KwTrue,
                        "false" => Tok::KwFalse,
                        "rec" => Tok::KwRec,
                        "end" => Tok::KwEnd,
                        "void" => Tok::KwVoid,
                        "bool" => Tok::KwBool,
                        "float" => Tok::KwFloat,
                        "this" => Tok::KwThis,
                        _ => Tok::Ident(word.to_string()),
                    }
                } else if c.is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if bytes.get(i) == Some(&b'.')
                        && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())
                    {
                        i += 1;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    match text[start..i].parse::<f64>() {
                        Ok(v) => Tok::Number(v),
                        Err(_) => {
                            errors.push(Diagnostic::error(
                                "SyntaxError",
                                span_at(start, i, sline, scol),
                                format!("invalid number literal `{}`", &text[start..i]),
                            ));
                            col += (i - start) as u32;
                            continue;
                        }
                    }
                } else {
                    i += 1;
                    match c {
                        b'{' => Tok::LBrace,
                        b'}' => Tok::RBrace,
                        b'[' => Tok::LBracket,
                        b']' => Tok::RBracket,
                        b'(' => Tok::LParen,
                        b')' => Tok::RParen,
                        b'<' => Tok::Lt,
                        b'>' => Tok::Gt,
                        b'.' => Tok::Dot,
                        b',' => Tok::Comma,
                        b';' => Tok::Semi,
                        b':' => Tok::Colon,
                        b'#' => Tok::Hash,
                        b'=' => Tok::Eq,
                        b'*' => Tok::Star,
                        b'+' => Tok::Plus,
                        other => {
                            errors.push(Diagnostic::error(
                                "SyntaxError",
                                span_at(start, i, sline, scol),
                                format!("unexpected character `{}`", other as char),
                            ));
                            col += 1;
                            continue;
                        }
                    }
                };
                tokens.push(Token { tok, span: span_at(start, i, sline, scol) });
                col += (i - start) as u32;
            }
        }
    }
    let end = bytes.len();
    tokens.push(Token { tok: Tok::Eof, span: span_at(end, end, line, col) });
    if errors.is_empty() {
        Ok(tokens)
    } else {
        Err(errors)
    }
}
