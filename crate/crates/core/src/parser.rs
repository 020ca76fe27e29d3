//! Recursive-descent parser for the surface grammar.
//!
//! ```text
//! program   := decl* mainblock?
//! decl      := classdecl | enumdecl
//! classdecl := "class" IDENT "[" usage "]" "{" (field | method)* "}"
//! enumdecl  := "enum" IDENT "{" IDENT ("," IDENT)* "}"
//! field     := "val" IDENT ":" type ";"
//! method    := "fun" IDENT "(" param? ")" (":" type)? block
//! type      := "void" | "bool" | "float" | IDENT
//! usage     := "end" | IDENT | "rec" IDENT "." usage | "{" branch ("," branch)* "}"
//! branch    := IDENT ";" (usage | "<" lchoice ("," lchoice)* ">")
//! lchoice   := IDENT ":" usage
//! mainblock := "main" "{" field* expr ";"? "}"
//! expr      := stmt (";" expr)?
//! stmt      := assign | call | if | match | label | "continue" IDENT | arith
//! assign    := lval "=" ("new" IDENT | expr)
//! call      := receiver "." IDENT "(" expr? ")"
//! receiver  := "this" | "this" "." IDENT | IDENT
//! arith     := atom (("*" | "+") atom)*      -- "*" binds tighter than "+"
//! atom      := "unit" | "null" | "true" | "false" | FLOAT | "#" IDENT | lval
//! block     := "{" expr ";"? "}"
//! ```
//!
//! Sequencing is right-associative. A trailing semicolon inside a block
//! discards the value (the block ends in `unit` after lowering). Error
//! recovery resynchronizes at declaration boundaries.

use crate::ast::{FloatOp, Usage};
use crate::diag::{Diagnostic, FileId, Span};
use crate::lexer::{lex, Tok, Token};
use crate::surface::*;

pub fn parse(text: &str, file: FileId) -> Result<SurfaceProgram, Vec<Diagnostic>> {
    let tokens = lex(text, file)?;
    let mut p = Parser { toks: tokens, pos: 0 };
    let mut diags = Vec::new();
    let mut decls = Vec::new();
    let mut main = None;

    loop {
        match p.peek() {
            Tok::Eof => break,
            Tok::KwClass => match p.parse_class() {
                Ok(c) => decls.push(SDecl::Class(c)),
                Err(d) => {
                    diags.push(d);
                    p.resync_decl();
                }
            },
            Tok::KwEnum => match p.parse_enum() {
                Ok(e) => decls.push(SDecl::Enum(e)),
                Err(d) => {
                    diags.push(d);
                    p.resync_decl();
                }
            },
            Tok::KwMain => match p.parse_main() {
                Ok(m) => {
                    if main.is_some() {
                        diags.push(Diagnostic::error(
                            "SyntaxError",
                            m.span,
                            "more than one `main` block",
                        ));
                    }
                    main = Some(m);
                }
                Err(d) => {
                    diags.push(d);
                    p.resync_decl();
                }
            },
            _ => {
                diags.push(p.err_expected("`class`, `enum`, or `main`"));
                p.resync_decl();
            }
        }
    }

    if diags.is_empty() {
        Ok(SurfaceProgram { decls, main })
    } else {
        Err(diags)
    }
}

/// Standalone usage parser, for tests and tooling.
pub fn parse_usage(text: &str) -> Result<Usage, Diagnostic> {
    let tokens = lex(text, FileId(0)).map_err(|mut ds| ds.remove(0))?;
    let mut p = Parser { toks: tokens, pos: 0 };
    let u = p.parse_usage()?;
    p.expect(Tok::Eof)?;
    Ok(u)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<Token> {
        if self.peek() == &tok {
            Ok(self.bump())
        } else {
            Err(self.err_expected(&tok.to_string()))
        }
    }

    fn err_expected(&self, what: &str) -> Diagnostic {
        Diagnostic::error(
            "SyntaxError",
            self.here(),
            format!("expected {what}, found {}", self.peek()),
        )
    }

    fn ident(&mut self) -> PResult<Ident> {
        match self.peek().clone() {
            Tok::Ident(text) => {
                let t = self.bump();
                Ok(Ident { text, span: t.span })
            }
            _ => Err(self.err_expected("an identifier")),
        }
    }

    fn resync_decl(&mut self) {
        while !matches!(self.peek(), Tok::Eof | Tok::KwClass | Tok::KwEnum | Tok::KwMain) {
            self.bump();
        }
    }

    // ── Declarations ────────────────────────────────────────────

    fn parse_class(&mut self) -> PResult<SClass> {
        let start = self.expect(Tok::KwClass)?.span;
        let name = self.ident()?;
        self.expect(Tok::LBracket)?;
        let usage = self.parse_usage()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::LBrace)?;
        let mut fields = Vec::new();
        let mut methods = Vec::new();
        loop {
            match self.peek() {
                Tok::KwVal => fields.push(self.parse_field()?),
                Tok::KwFun => methods.push(self.parse_method()?),
                Tok::RBrace => break,
                _ => return Err(self.err_expected("`val`, `fun`, or `}`")),
            }
        }
        let end = self.expect(Tok::RBrace)?.span;
        Ok(SClass { name, usage, fields, methods, span: join(start, end) })
    }

    fn parse_enum(&mut self) -> PResult<SEnum> {
        let start = self.expect(Tok::KwEnum)?.span;
        let name = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut labels = vec![self.ident()?];
        while self.eat(&Tok::Comma) {
            labels.push(self.ident()?);
        }
        let end = self.expect(Tok::RBrace)?.span;
        Ok(SEnum { name, labels, span: join(start, end) })
    }

    fn parse_field(&mut self) -> PResult<SField> {
        let start = self.expect(Tok::KwVal)?.span;
        let name = self.ident()?;
        self.expect(Tok::Colon)?;
        let ty = self.parse_type()?;
        let end = self.expect(Tok::Semi)?.span;
        Ok(SField { name, ty, span: join(start, end) })
    }

    fn parse_method(&mut self) -> PResult<SMethod> {
        let start = self.expect(Tok::KwFun)?.span;
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let param = if self.peek() == &Tok::RParen {
            None
        } else {
            let pname = self.ident()?;
            self.expect(Tok::Colon)?;
            let pty = self.parse_type()?;
            Some((pname, pty))
        };
        self.expect(Tok::RParen)?;
        let ret = if self.eat(&Tok::Colon) { Some(self.parse_type()?) } else { None };
        let body = self.parse_block()?;
        let span = join(start, body.span);
        Ok(SMethod { name, param, ret, body, span })
    }

    fn parse_main(&mut self) -> PResult<SMain> {
        let start = self.expect(Tok::KwMain)?.span;
        self.expect(Tok::LBrace)?;
        let mut fields = Vec::new();
        while self.peek() == &Tok::KwVal {
            fields.push(self.parse_field()?);
        }
        let (expr, trailing_semi) = self.parse_expr()?;
        let end = self.expect(Tok::RBrace)?.span;
        let span = join(start, end);
        let body_span = expr.span;
        Ok(SMain {
            fields,
            body: SBlock { expr, trailing_semi, span: body_span },
            span,
        })
    }

    fn parse_type(&mut self) -> PResult<SType> {
        match self.peek().clone() {
            Tok::KwVoid => {
                self.bump();
                Ok(SType::Void)
            }
            Tok::KwBool => {
                self.bump();
                Ok(SType::Bool)
            }
            Tok::KwFloat => {
                self.bump();
                Ok(SType::Float)
            }
            Tok::Ident(_) => Ok(SType::Named(self.ident()?)),
            _ => Err(self.err_expected("a type (`void`, `bool`, `float`, or a name)")),
        }
    }

    // ── Usages ──────────────────────────────────────────────────

    fn parse_usage(&mut self) -> PResult<Usage> {
        match self.peek().clone() {
            Tok::KwEnd => {
                self.bump();
                Ok(Usage::End)
            }
            Tok::Ident(_) => {
                let x = self.ident()?;
                Ok(Usage::Var(x.text))
            }
            Tok::KwRec => {
                let start = self.bump().span;
                let x = self.ident()?;
                self.expect(Tok::Dot)?;
                let body = self.parse_usage()?;
                let rec = Usage::Rec(x.text, Box::new(body));
                if !crate::usage::is_contractive(&rec) {
                    return Err(Diagnostic::error(
                        "NonContractive",
                        start,
                        "recursive usage must offer an action before repeating",
                    ));
                }
                Ok(rec)
            }
            Tok::LBrace => {
                self.bump();
                let mut arms = vec![self.parse_branch()?];
                while self.eat(&Tok::Comma) {
                    arms.push(self.parse_branch()?);
                }
                self.expect(Tok::RBrace)?;
                Ok(Usage::Branch(arms))
            }
            _ => Err(self.err_expected("a usage (`end`, `rec`, `{`, or a variable)")),
        }
    }

    fn parse_branch(&mut self) -> PResult<(String, Usage)> {
        let m = self.ident()?;
        self.expect(Tok::Semi)?;
        if self.eat(&Tok::Lt) {
            let mut arms = vec![self.parse_lchoice()?];
            while self.eat(&Tok::Comma) {
                arms.push(self.parse_lchoice()?);
            }
            self.expect(Tok::Gt)?;
            Ok((m.text, Usage::Choice(arms)))
        } else {
            Ok((m.text, self.parse_usage()?))
        }
    }

    fn parse_lchoice(&mut self) -> PResult<(String, Usage)> {
        let l = self.ident()?;
        self.expect(Tok::Colon)?;
        Ok((l.text, self.parse_usage()?))
    }

    // ── Expressions ─────────────────────────────────────────────

    /// Parses a sequence. Returns the expression and whether a trailing
    /// semicolon (one not followed by another statement) was present.
    fn parse_expr(&mut self) -> PResult<(SExpr, bool)> {
        let first = self.parse_stmt()?;
        if self.eat(&Tok::Semi) {
            if stmt_start(self.peek()) {
                let (rest, ts) = self.parse_expr()?;
                let span = join(first.span, rest.span);
                Ok((SExpr { kind: SExprKind::Seq(Box::new(first), Box::new(rest)), span }, ts))
            } else {
                Ok((first, true))
            }
        } else {
            Ok((first, false))
        }
    }

    /// Parses an expression in a position where a trailing semicolon still
    /// discards the value (call arguments, match arms).
    fn parse_expr_discarding(&mut self) -> PResult<SExpr> {
        let (e, ts) = self.parse_expr()?;
        Ok(if ts { discard(e) } else { e })
    }

    fn parse_stmt(&mut self) -> PResult<SExpr> {
        match self.peek() {
            Tok::KwIf => self.parse_if(),
            Tok::KwMatch => self.parse_match(),
            Tok::KwLabel => self.parse_label(),
            Tok::KwContinue => {
                let start = self.bump().span;
                let k = self.ident()?;
                let span = join(start, k.span);
                Ok(SExpr { kind: SExprKind::Continue(k), span })
            }
            _ => {
                let (first, is_atom) = self.parse_primary()?;
                if is_atom && matches!(self.peek(), Tok::Star | Tok::Plus) {
                    self.parse_binop_rest(first)
                } else {
                    Ok(first)
                }
            }
        }
    }

    /// Parses a statement head: an assignment, a call, or an atom. The flag
    /// reports whether the result is an atom, eligible as a binop operand.
    fn parse_primary(&mut self) -> PResult<(SExpr, bool)> {
        match self.peek().clone() {
            Tok::KwThis => {
                let start = self.bump().span;
                self.expect(Tok::Dot)?;
                let name = self.ident()?;
                match self.peek() {
                    Tok::LParen => {
                        let e = self.parse_call(SReceiver::This, name, start)?;
                        Ok((e, false))
                    }
                    Tok::Dot => {
                        self.bump();
                        let method = self.ident()?;
                        let e = self.parse_call(SReceiver::ThisField(name), method, start)?;
                        Ok((e, false))
                    }
                    Tok::Eq => {
                        let lval = SLval { this_qualified: true, name };
                        let e = self.parse_assign(lval, start)?;
                        Ok((e, false))
                    }
                    _ => {
                        let span = join(start, name.span);
                        let lval = SLval { this_qualified: true, name };
                        Ok((SExpr { kind: SExprKind::Read(lval), span }, true))
                    }
                }
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                let start = name.span;
                match self.peek() {
                    Tok::Dot => {
                        self.bump();
                        let method = self.ident()?;
                        let e = self.parse_call(SReceiver::Name(name), method, start)?;
                        Ok((e, false))
                    }
                    Tok::Eq => {
                        let lval = SLval { this_qualified: false, name };
                        let e = self.parse_assign(lval, start)?;
                        Ok((e, false))
                    }
                    _ => {
                        let lval = SLval { this_qualified: false, name };
                        Ok((SExpr { kind: SExprKind::Read(lval), span: start }, true))
                    }
                }
            }
            _ => Ok((self.parse_atom()?, true)),
        }
    }

    fn parse_call(&mut self, recv: SReceiver, method: Ident, start: Span) -> PResult<SExpr> {
        self.expect(Tok::LParen)?;
        let arg = if self.peek() == &Tok::RParen {
            None
        } else {
            Some(Box::new(self.parse_expr_discarding()?))
        };
        let end = self.expect(Tok::RParen)?.span;
        Ok(SExpr { kind: SExprKind::Call(recv, method, arg), span: join(start, end) })
    }

    fn parse_assign(&mut self, lval: SLval, start: Span) -> PResult<SExpr> {
        self.expect(Tok::Eq)?;
        if self.eat(&Tok::KwNew) {
            let class = self.ident()?;
            let span = join(start, class.span);
            Ok(SExpr { kind: SExprKind::AssignNew(lval, class), span })
        } else {
            let value = self.parse_stmt()?;
            let span = join(start, value.span);
            Ok(SExpr { kind: SExprKind::Assign(lval, Box::new(value)), span })
        }
    }

    fn parse_if(&mut self) -> PResult<SExpr> {
        let start = self.expect(Tok::KwIf)?.span;
        self.expect(Tok::LParen)?;
        let cond = self.parse_expr_discarding()?;
        self.expect(Tok::RParen)?;
        let then_b = self.parse_block()?;
        self.expect(Tok::KwElse)?;
        let else_b = self.parse_block()?;
        let span = join(start, else_b.span);
        Ok(SExpr { kind: SExprKind::If(Box::new(cond), Box::new(then_b), Box::new(else_b)), span })
    }

    fn parse_match(&mut self) -> PResult<SExpr> {
        let start = self.expect(Tok::KwMatch)?.span;
        self.expect(Tok::LParen)?;
        let scrut = self.parse_expr_discarding()?;
        self.expect(Tok::RParen)?;
        self.expect(Tok::LBrace)?;
        let mut arms = Vec::new();
        while self.peek() != &Tok::RBrace {
            let label = self.ident()?;
            self.expect(Tok::Colon)?;
            let body = self.parse_expr_discarding()?;
            let span = join(label.span, body.span);
            arms.push(SArm { label, body, span });
        }
        let end = self.expect(Tok::RBrace)?.span;
        if arms.is_empty() {
            return Err(Diagnostic::error(
                "SyntaxError",
                end,
                "match expression needs at least one arm",
            ));
        }
        Ok(SExpr { kind: SExprKind::Match(Box::new(scrut), arms), span: join(start, end) })
    }

    fn parse_label(&mut self) -> PResult<SExpr> {
        let start = self.expect(Tok::KwLabel)?.span;
        let name = self.ident()?;
        let body = self.parse_block()?;
        let span = join(start, body.span);
        Ok(SExpr { kind: SExprKind::Label(name, Box::new(body)), span })
    }

    fn parse_block(&mut self) -> PResult<SBlock> {
        let start = self.expect(Tok::LBrace)?.span;
        let (expr, trailing_semi) = self.parse_expr()?;
        let end = self.expect(Tok::RBrace)?.span;
        Ok(SBlock { expr, trailing_semi, span: join(start, end) })
    }

    fn parse_binop_rest(&mut self, first: SExpr) -> PResult<SExpr> {
        let mut lhs = self.parse_mul_chain(first)?;
        while self.eat(&Tok::Plus) {
            let next = self.parse_atom()?;
            let rhs = self.parse_mul_chain(next)?;
            let span = join(lhs.span, rhs.span);
            lhs = SExpr { kind: SExprKind::Bin(FloatOp::Add, Box::new(lhs), Box::new(rhs)), span };
        }
        Ok(lhs)
    }

    fn parse_mul_chain(&mut self, mut lhs: SExpr) -> PResult<SExpr> {
        while self.eat(&Tok::Star) {
            let rhs = self.parse_atom()?;
            let span = join(lhs.span, rhs.span);
            lhs = SExpr { kind: SExprKind::Bin(FloatOp::Mul, Box::new(lhs), Box::new(rhs)), span };
        }
        Ok(lhs)
    }

    fn parse_atom(&mut self) -> PResult<SExpr> {
        let span = self.here();
        let kind = match self.peek().clone() {
            Tok::KwUnit => {
                self.bump();
                SExprKind::Unit
            }
            Tok::KwNull => {
                self.bump();
                SExprKind::Null
            }
            Tok::KwTrue => {
                self.bump();
                SExprKind::True
            }
            Tok::KwFalse => {
                self.bump();
                SExprKind::False
            }
            Tok::Number(v) => {
                self.bump();
                SExprKind::Float(v)
            }
            Tok::Hash => {
                self.bump();
                let l = self.ident()?;
                let span = join(span, l.span);
                return Ok(SExpr { kind: SExprKind::EnumLit(l), span });
            }
            Tok::KwThis => {
                self.bump();
                self.expect(Tok::Dot)?;
                let name = self.ident()?;
                let span = join(span, name.span);
                let lval = SLval { this_qualified: true, name };
                return Ok(SExpr { kind: SExprKind::Read(lval), span });
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                let span = name.span;
                let lval = SLval { this_qualified: false, name };
                return Ok(SExpr { kind: SExprKind::Read(lval), span });
            }
            _ => return Err(self.err_expected("an expression")),
        };
        Ok(SExpr { kind, span })
    }
}

fn stmt_start(tok: &Tok) -> bool {
    matches!(
        tok,
        Tok::KwIf
            | Tok::KwMatch
            | Tok::KwLabel
            | Tok::KwContinue
            | Tok::KwUnit
            | Tok::KwNull
            | Tok::KwTrue
            | Tok::KwFalse
            | Tok::Number(_)
            | Tok::Hash
            | Tok::KwThis
            | Tok::Ident(_)
    )
}

/// Wraps an expression whose value is discarded by a trailing semicolon.
fn discard(e: SExpr) -> SExpr {
    let span = e.span;
    SExpr {
        kind: SExprKind::Seq(Box::new(e), Box::new(SExpr { kind: SExprKind::Unit, span })),
        span,
    }
}

fn join(a: Span, b: Span) -> Span {
    Span { file: a.file, start: a.start, end: b.end.max(a.end), line: a.line, col: a.col }
}
