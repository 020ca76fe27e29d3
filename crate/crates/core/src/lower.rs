//! Lowers surface programs to the core AST.
//!
//! Bare identifiers become parameter or `this`-field accesses, omitted return
//! types become `void`, omitted parameters become a void parameter, the
//! `main { ... }` block becomes the Main class with usage `{main; end}`, and
//! `#l` becomes an enum literal on `this`. A trailing semicolon in a block
//! sequences the block's value into `unit`.

use crate::ast::*;
use crate::diag::{Diagnostic, Span};
use crate::surface::*;

pub fn lower(sp: &SurfaceProgram) -> Result<Program, Vec<Diagnostic>> {
    let mut cx = Lower { diags: Vec::new() };

    let Some(smain) = &sp.main else {
        return Err(vec![Diagnostic::error(
            "MissingMain",
            Span::synthetic(),
            "program has no `main` block",
        )]);
    };

    let decls: Vec<Decl> = sp
        .decls
        .iter()
        .map(|d| match d {
            SDecl::Class(c) => Decl::Class(cx.lower_class(c)),
            SDecl::Enum(e) => Decl::Enum(EnumDecl {
                name: e.name.text.clone(),
                labels: e.labels.iter().map(|l| l.text.clone()).collect(),
                span: e.span,
            }),
        })
        .collect();

    let main = cx.lower_main(smain);

    if cx.diags.is_empty() {
        Ok(Program { decls, main })
    } else {
        Err(cx.diags)
    }
}

struct Lower {
    diags: Vec<Diagnostic>,
}

/// Name-resolution context: the enclosing class's fields and the method's
/// parameter name.
struct Scope<'a> {
    fields: Vec<&'a str>,
    param: Option<&'a str>,
}

impl Lower {
    fn lower_class(&mut self, c: &SClass) -> ClassDecl {
        let fields: Vec<FieldDecl> = c.fields.iter().map(|f| self.lower_field(f)).collect();
        let field_names: Vec<&str> = c.fields.iter().map(|f| f.name.text.as_str()).collect();
        let methods = c
            .methods
            .iter()
            .map(|m| self.lower_method(m, &field_names))
            .collect();
        ClassDecl {
            name: c.name.text.clone(),
            usage: c.usage.clone(),
            fields,
            methods,
            span: c.span,
        }
    }

    fn lower_field(&mut self, f: &SField) -> FieldDecl {
        FieldDecl { name: f.name.text.clone(), ty: lower_type(&f.ty), span: f.span }
    }

    fn lower_method(&mut self, m: &SMethod, fields: &[&str]) -> MethodDecl {
        let (param, param_ty) = match &m.param {
            Some((name, ty)) => (name.text.clone(), lower_type(ty)),
            None => ("_".to_string(), TypeAnnot::Void),
        };
        let ret_ty = m.ret.as_ref().map(lower_type).unwrap_or(TypeAnnot::Void);
        let scope = Scope { fields: fields.to_vec(), param: Some(&param) };
        let body = self.lower_block(&m.body, &scope);
        MethodDecl {
            name: m.name.text.clone(),
            param: param.clone(),
            param_ty,
            ret_ty,
            body,
            span: m.span,
        }
    }

    fn lower_main(&mut self, m: &SMain) -> ClassDecl {
        let fields: Vec<FieldDecl> = m.fields.iter().map(|f| self.lower_field(f)).collect();
        let field_names: Vec<&str> = m.fields.iter().map(|f| f.name.text.as_str()).collect();
        let scope = Scope { fields: field_names, param: Some("_") };
        let body = self.lower_block(&m.body, &scope);
        let main_method = MethodDecl {
            name: "main".to_string(),
            param: "_".to_string(),
            param_ty: TypeAnnot::Void,
            ret_ty: TypeAnnot::Void,
            body,
            span: m.span,
        };
        ClassDecl {
            name: "Main".to_string(),
            usage: Usage::Branch(vec![("main".to_string(), Usage::End)]),
            fields,
            methods: vec![main_method],
            span: m.span,
        }
    }

    fn lower_block(&mut self, b: &SBlock, scope: &Scope) -> Expr {
        let e = self.lower_expr(&b.expr, scope);
        if b.trailing_semi {
            let unit = Expr::new(ExprKind::Unit, e.span);
            let span = e.span;
            Expr::new(ExprKind::Seq(Box::new(e), Box::new(unit)), span)
        } else {
            e
        }
    }

    /// Resolves an assignment target to a field of `this`.
    fn lower_lval(&mut self, lval: &SLval, scope: &Scope) -> Option<String> {
        let name = &lval.name.text;
        if !lval.this_qualified {
            if scope.param == Some(name.as_str()) {
                self.diags.push(Diagnostic::error(
                    "InvalidAssignTarget",
                    lval.name.span,
                    format!("cannot assign to parameter `{name}`"),
                ));
                return None;
            }
            if !scope.fields.contains(&name.as_str()) {
                self.unknown(&lval.name);
                return None;
            }
        }
        Some(name.clone())
    }

    fn unknown(&mut self, name: &Ident) {
        self.diags.push(Diagnostic::error(
            "UnknownIdentifier",
            name.span,
            format!("`{}` is neither a declared field nor the parameter", name.text),
        ));
    }

    fn lower_expr(&mut self, e: &SExpr, scope: &Scope) -> Expr {
        let span = e.span;
        let kind = match &e.kind {
            SExprKind::Assign(lval, value) => {
                let v = self.lower_expr(value, scope);
                match self.lower_lval(lval, scope) {
                    Some(f) => ExprKind::Assign(Owner::This, f, Box::new(v)),
                    None => ExprKind::Unit,
                }
            }
            SExprKind::AssignNew(lval, class) => match self.lower_lval(lval, scope) {
                Some(f) => ExprKind::AssignNew(Owner::This, f, class.text.clone()),
                None => ExprKind::Unit,
            },
            SExprKind::Seq(a, b) => ExprKind::Seq(
                Box::new(self.lower_expr(a, scope)),
                Box::new(self.lower_expr(b, scope)),
            ),
            SExprKind::Call(recv, method, arg) => {
                let r = match recv {
                    SReceiver::This => Receiver::This,
                    SReceiver::ThisField(f) => Receiver::Field(Owner::This, f.text.clone()),
                    SReceiver::Name(n) => {
                        if scope.param == Some(n.text.as_str()) {
                            Receiver::Param
                        } else if scope.fields.contains(&n.text.as_str()) {
                            Receiver::Field(Owner::This, n.text.clone())
                        } else {
                            self.unknown(n);
                            Receiver::Param
                        }
                    }
                };
                let a = match arg {
                    Some(a) => self.lower_expr(a, scope),
                    None => Expr::new(ExprKind::Unit, span),
                };
                ExprKind::Call(r, method.text.clone(), Box::new(a))
            }
            SExprKind::Unit => ExprKind::Unit,
            SExprKind::Null => ExprKind::Null,
            SExprKind::True => ExprKind::Bool(true),
            SExprKind::False => ExprKind::Bool(false),
            SExprKind::Float(v) => ExprKind::Float(*v),
            SExprKind::Read(lval) => {
                let name = &lval.name.text;
                if lval.this_qualified {
                    ExprKind::Field(Owner::This, name.clone())
                } else if scope.param == Some(name.as_str()) {
                    ExprKind::Param
                } else if scope.fields.contains(&name.as_str()) {
                    ExprKind::Field(Owner::This, name.clone())
                } else {
                    self.unknown(&lval.name);
                    ExprKind::Unit
                }
            }
            SExprKind::If(c, t, f) => ExprKind::If(
                Box::new(self.lower_expr(c, scope)),
                Box::new(self.lower_block(t, scope)),
                Box::new(self.lower_block(f, scope)),
            ),
            SExprKind::Match(s, arms) => ExprKind::Match(
                Box::new(self.lower_expr(s, scope)),
                arms.iter()
                    .map(|a| MatchArm {
                        label: a.label.text.clone(),
                        body: self.lower_expr(&a.body, scope),
                        span: a.span,
                    })
                    .collect(),
            ),
            SExprKind::EnumLit(l) => ExprKind::EnumLit(Owner::This, l.text.clone()),
            SExprKind::Label(k, b) => {
                ExprKind::Label(k.text.clone(), Box::new(self.lower_block(b, scope)))
            }
            SExprKind::Continue(k) => ExprKind::Continue(k.text.clone()),
            SExprKind::Bin(op, a, b) => ExprKind::FloatBin(
                *op,
                Box::new(self.lower_expr(a, scope)),
                Box::new(self.lower_expr(b, scope)),
            ),
        };
        Expr::new(kind, span)
    }
}

fn lower_type(t: &SType) -> TypeAnnot {
    match t {
        SType::Void => TypeAnnot::Void,
        SType::Bool => TypeAnnot::Bool,
        SType::Float => TypeAnnot::Float,
        // Class vs enum is settled against the declaration set after the
        // whole program is assembled.
        SType::Named(n) => TypeAnnot::Class(n.text.clone()),
    }
}

/// Rewrites `Class(name)` annotations that actually name enums. Run after
/// lowering, once all declarations are known.
pub fn resolve_named_types(p: &mut Program) {
    let enums: Vec<String> = p
        .decls
        .iter()
        .filter_map(|d| match d {
            Decl::Enum(e) => Some(e.name.clone()),
            _ => None,
        })
        .collect();
    let fix = |t: &mut TypeAnnot| {
        if let TypeAnnot::Class(n) = t {
            if enums.contains(n) {
                *t = TypeAnnot::Enum(n.clone());
            }
        }
    };
    let fix_class = |c: &mut ClassDecl| {
        for f in &mut c.fields {
            fix(&mut f.ty);
        }
        for m in &mut c.methods {
            fix(&mut m.param_ty);
            fix(&mut m.ret_ty);
        }
    };
    for d in &mut p.decls {
        if let Decl::Class(c) = d {
            fix_class(c);
        }
    }
    fix_class(&mut p.main);
}
