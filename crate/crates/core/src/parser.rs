//! Text grammar for systems, vector fields, coordinate maps, and analysis
//! jobs. The only ingestion path for the CLI and the corpus.
//!
//! Expression grammar: infix arithmetic with `+ - * /`, integer powers via
//! `^`, function application by name, `exp` built in, primes or
//! `D[i,..]name(args)` for formal derivatives. Rational literals only;
//! decimal literals are rejected in symbolic files (job files carry floats
//! in plain key/value form, outside this grammar).

use std::collections::BTreeMap;

use num::{BigInt, One};

use crate::error::{Error, Result};
use crate::fields::{
    CoordinateMap, DynSystem, FuncDecl, MapBinding, ParamDecl, Relation, VectorField, TIME,
};
use crate::symcore::{Atom, Expression, Rat};

// ----- lexer -----

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(BigInt),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Eq,
    Prime,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (l, co) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
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
                bump(&mut chars);
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump(&mut chars);
                }
            }
            '0'..='9' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() {
                        s.push(bump(&mut chars));
                    } else {
                        break;
                    }
                }
                if chars.peek() == Some(&'.') {
                    return Err(syntax(
                        l,
                        co,
                        "decimal literals are not allowed in symbolic input",
                    ));
                }
                out.push(Spanned {
                    tok: Tok::Int(s.parse().unwrap()),
                    line: l,
                    col: co,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        s.push(bump(&mut chars));
                    } else {
                        break;
                    }
                }
                out.push(Spanned {
                    tok: Tok::Ident(s),
                    line: l,
                    col: co,
                });
            }
            _ => {
                let tok = match c {
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '^' => Tok::Caret,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    ':' => Tok::Colon,
                    '=' => Tok::Eq,
                    '\'' => Tok::Prime,
                    other => {
                        return Err(syntax(l, co, format!("unexpected character `{other}`")))
                    }
                };
                bump(&mut chars);
                out.push(Spanned { tok, line: l, col: co });
            }
        }
    }
    Ok(out)
}

// ----- expression parser -----

/// Symbol context for expression parsing.
#[derive(Clone, Debug, Default)]
pub struct ExprContext {
    pub vars: Vec<String>,
    pub params: Vec<String>,
    pub funcs: BTreeMap<String, usize>,
    /// Whether the time symbol `t` may appear.
    pub allow_time: bool,
}

impl ExprContext {
    pub fn with_vars(vars: &[String]) -> Self {
        ExprContext {
            vars: vars.to_vec(),
            ..Default::default()
        }
    }
}

struct P<'a> {
    toks: &'a [Spanned],
    pos: usize,
    ctx: &'a ExprContext,
}

impl<'a> P<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn next(&mut self) -> Option<&Spanned> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        let (l, c) = self.here();
        match self.next() {
            Some(s) if s.tok == tok => Ok(()),
            _ => Err(syntax(l, c, format!("expected {what}"))),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let (l, c) = self.here();
        syntax(l, c, msg)
    }

    fn expr(&mut self) -> Result<Expression> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.next();
                    acc = acc.add(&self.term()?);
                }
                Some(Tok::Minus) => {
                    self.next();
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expression> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.next();
                    acc = acc.mul(&self.unary()?);
                }
                Some(Tok::Slash) => {
                    self.next();
                    let den = self.unary()?;
                    if den.is_zero() {
                        return Err(self.err("division by zero"));
                    }
                    acc = acc.div(&den)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Expression> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.next();
                Ok(self.unary()?.neg())
            }
            Some(Tok::Plus) => {
                self.next();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expression> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.next();
            let e = self.exponent()?;
            if e < 0 && base.is_zero() {
                return Err(self.err("zero raised to a negative power"));
            }
            return base.powi(e);
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i64> {
        let parens = self.peek() == Some(&Tok::LParen);
        if parens {
            self.next();
        }
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.next();
            true
        } else {
            false
        };
        let v = match self.next().map(|s| s.tok.clone()) {
            Some(Tok::Int(n)) => n
                .try_into()
                .map_err(|_| self.err("exponent out of range"))?,
            _ => return Err(self.err("expected an integer exponent")),
        };
        if parens {
            self.expect(Tok::RParen, "`)` after exponent")?;
        }
        Ok(if neg { -(v as i64) } else { v })
    }

    fn atom(&mut self) -> Result<Expression> {
        let (l, c) = self.here();
        match self.next().map(|s| s.tok.clone()) {
            Some(Tok::Int(n)) => Ok(Expression::from_rat(Rat::from_integer(n))),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.ident_atom(name, l, c),
            _ => Err(syntax(l, c, "expected an expression")),
        }
    }

    fn ident_atom(&mut self, name: String, l: usize, c: usize) -> Result<Expression> {
        // D[i,..]name(args): explicit derivative multi-index.
        if name == "D" && self.peek() == Some(&Tok::LBracket) {
            self.next();
            let mut deriv: Vec<u32> = Vec::new();
            loop {
                match self.next().map(|s| s.tok.clone()) {
                    Some(Tok::Int(n)) => deriv.push(
                        n.try_into()
                            .map_err(|_| syntax(l, c, "derivative index out of range"))?,
                    ),
                    _ => return Err(syntax(l, c, "expected a derivative index")),
                }
                match self.next().map(|s| s.tok.clone()) {
                    Some(Tok::Comma) => continue,
                    Some(Tok::RBracket) => break,
                    _ => return Err(syntax(l, c, "expected `,` or `]`")),
                }
            }
            let fname = match self.next().map(|s| s.tok.clone()) {
                Some(Tok::Ident(n)) => n,
                _ => return Err(syntax(l, c, "expected a function name after D[..]")),
            };
            let args = self.call_args()?;
            return self.build_func(&fname, deriv, args, l, c);
        }
        // Primes before an application: omega''(u).
        let mut primes = 0u32;
        while self.peek() == Some(&Tok::Prime) {
            primes += 1;
            self.next();
        }
        if self.peek() == Some(&Tok::LParen) {
            if name == "exp" {
                if primes > 0 {
                    return Err(syntax(l, c, "exp does not take derivative marks"));
                }
                let args = self.call_args()?;
                if args.len() != 1 {
                    return Err(syntax(l, c, "exp takes exactly one argument"));
                }
                return Ok(Expression::exp_of(&args[0]));
            }
            let args = self.call_args()?;
            let deriv = if primes > 0 {
                if args.len() != 1 {
                    return Err(syntax(
                        l,
                        c,
                        "prime marks require a unary function (use D[..] otherwise)",
                    ));
                }
                vec![primes]
            } else {
                vec![0; args.len()]
            };
            return self.build_func(&name, deriv, args, l, c);
        }
        if primes > 0 {
            return Err(syntax(l, c, "prime marks require a function application"));
        }
        if self.ctx.vars.iter().any(|v| v == &name) {
            return Ok(Expression::var(&name));
        }
        if name == TIME {
            if self.ctx.allow_time {
                return Ok(Expression::var(TIME));
            }
            return Err(syntax(
                l,
                c,
                "the time symbol `t` is not allowed here (autonomous context)",
            ));
        }
        if self.ctx.params.iter().any(|p| p == &name) {
            return Ok(Expression::param(&name));
        }
        Err(syntax(l, c, format!("unknown symbol `{name}`")))
    }

    fn build_func(
        &mut self,
        name: &str,
        deriv: Vec<u32>,
        args: Vec<Expression>,
        l: usize,
        c: usize,
    ) -> Result<Expression> {
        let arity = *self
            .ctx
            .funcs
            .get(name)
            .ok_or_else(|| syntax(l, c, format!("undeclared function `{name}`")))?;
        if args.len() != arity {
            return Err(Error::Arity {
                name: name.to_string(),
                declared: arity,
                given: args.len(),
            });
        }
        let deriv = if deriv.len() == arity {
            deriv
        } else if deriv.len() == 1 && arity == 1 {
            deriv
        } else {
            return Err(syntax(l, c, "derivative multi-index length mismatch"));
        };
        Ok(Expression::func(name, deriv, args))
    }

    fn call_args(&mut self) -> Result<Vec<Expression>> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.next();
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            match self.next().map(|s| s.tok.clone()) {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => return Ok(args),
                _ => return Err(self.err("expected `,` or `)` in argument list")),
            }
        }
    }
}

/// Parse a single expression under the given symbol context.
pub fn parse_expression(text: &str, ctx: &ExprContext) -> Result<Expression> {
    let toks = lex(text)?;
    let mut p = P {
        toks: &toks,
        pos: 0,
        ctx,
    };
    let e = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.err("trailing input after expression"));
    }
    Ok(e)
}

// ----- statement splitting -----

fn split_statements(toks: &[Spanned]) -> Vec<&[Spanned]> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, s) in toks.iter().enumerate() {
        if s.tok == Tok::Semi {
            if i > start {
                out.push(&toks[start..i]);
            }
            start = i + 1;
        }
    }
    if start < toks.len() {
        out.push(&toks[start..]);
    }
    out
}

fn ident_list(stmt: &[Spanned]) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let mut want_name = true;
    for s in stmt {
        match (&s.tok, want_name) {
            (Tok::Ident(n), true) => {
                names.push(n.clone());
                want_name = false;
            }
            (Tok::Comma, false) => {
                want_name = true;
            }
            _ => return Err(syntax(s.line, s.col, "expected a name list")),
        }
    }
    if want_name {
        let last = stmt.last().unwrap();
        return Err(syntax(last.line, last.col, "trailing comma in name list"));
    }
    Ok(names)
}

fn parse_small_rational(toks: &[Spanned]) -> Result<Rat> {
    let (l, c) = toks
        .first()
        .map(|s| (s.line, s.col))
        .unwrap_or((1, 1));
    let mut i = 0;
    let neg = matches!(toks.first().map(|s| &s.tok), Some(Tok::Minus));
    if neg {
        i += 1;
    }
    let num = match toks.get(i).map(|s| &s.tok) {
        Some(Tok::Int(n)) => n.clone(),
        _ => return Err(syntax(l, c, "expected a rational literal")),
    };
    i += 1;
    let mut val = Rat::from_integer(num);
    if let Some(Tok::Slash) = toks.get(i).map(|s| &s.tok) {
        i += 1;
        match toks.get(i).map(|s| &s.tok) {
            Some(Tok::Int(d)) => {
                val /= Rat::from_integer(d.clone());
                i += 1;
            }
            _ => return Err(syntax(l, c, "expected a denominator")),
        }
    }
    if i != toks.len() {
        return Err(syntax(l, c, "trailing input after rational literal"));
    }
    Ok(if neg { -val } else { val })
}

// ----- system files (.dsys) -----

/// Parse a `.dsys` system file: `vars`, optional `params`/`funcs`/
/// `exclude` declarations, then exactly one equation per variable.
pub fn parse_system(text: &str) -> Result<DynSystem> {
    let toks = lex(text)?;
    let stmts = split_statements(&toks);
    let mut vars: Vec<String> = Vec::new();
    let mut params: Vec<ParamDecl> = Vec::new();
    let mut funcs: Vec<FuncDecl> = Vec::new();
    let mut exclude_stmts: Vec<&[Spanned]> = Vec::new();
    let mut equations: Vec<(&[Spanned], String, usize, usize)> = Vec::new();

    for stmt in &stmts {
        let head = &stmt[0];
        match &head.tok {
            Tok::Ident(k) if k == "vars" => {
                vars = ident_list(&stmt[1..])?;
            }
            Tok::Ident(k) if k == "params" => {
                params.extend(parse_param_decls(&stmt[1..])?);
            }
            Tok::Ident(k) if k == "funcs" => {
                funcs.extend(parse_func_decls(&stmt[1..])?);
            }
            Tok::Ident(k) if k == "exclude" => {
                exclude_stmts.push(&stmt[1..]);
            }
            Tok::Ident(name) => {
                // Equation: name ' = expr
                if stmt.len() < 3 || stmt[1].tok != Tok::Prime || stmt[2].tok != Tok::Eq {
                    return Err(syntax(
                        head.line,
                        head.col,
                        "expected a declaration or an equation `name' = expr`",
                    ));
                }
                equations.push((&stmt[3..], name.clone(), head.line, head.col));
            }
            _ => {
                return Err(syntax(head.line, head.col, "unexpected statement"));
            }
        }
    }
    if vars.is_empty() {
        return Err(syntax(1, 1, "missing `vars` declaration"));
    }
    if vars.iter().any(|v| v == TIME) {
        return Err(syntax(1, 1, "`t` is reserved for time"));
    }
    let ctx = ExprContext {
        vars: vars.clone(),
        params: params.iter().map(|p| p.name.clone()).collect(),
        funcs: funcs.iter().map(|f| (f.name.clone(), f.arity)).collect(),
        allow_time: false,
    };
    let mut rhs: Vec<Option<Expression>> = vec![None; vars.len()];
    for (body, name, l, c) in equations {
        let idx = vars
            .iter()
            .position(|v| v == &name)
            .ok_or_else(|| syntax(l, c, format!("equation for undeclared variable `{name}`")))?;
        if rhs[idx].is_some() {
            return Err(Error::DuplicateEquation(name));
        }
        let mut p = P { toks: body, pos: 0, ctx: &ctx };
        let e = p.expr()?;
        if p.pos != body.len() {
            return Err(p.err("trailing input after equation"));
        }
        rhs[idx] = Some(e);
    }
    let rhs: Vec<Expression> = vars
        .iter()
        .zip(rhs)
        .map(|(v, e)| e.ok_or_else(|| Error::MissingEquation(v.clone())))
        .collect::<Result<_>>()?;
    let mut excluded = Vec::new();
    for stmt in exclude_stmts {
        for piece in split_on_commas(stmt) {
            let mut p = P { toks: piece, pos: 0, ctx: &ctx };
            let e = p.expr()?;
            if p.pos != piece.len() {
                return Err(p.err("trailing input in exclude list"));
            }
            excluded.push(e);
        }
    }
    Ok(DynSystem {
        vars,
        rhs,
        params,
        funcs,
        excluded,
    })
}

fn split_on_commas(stmt: &[Spanned]) -> Vec<&[Spanned]> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, s) in stmt.iter().enumerate() {
        match s.tok {
            Tok::LParen | Tok::LBracket => depth += 1,
            Tok::RParen | Tok::RBracket => depth -= 1,
            Tok::Comma if depth == 0 => {
                out.push(&stmt[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if start < stmt.len() {
        out.push(&stmt[start..]);
    }
    out
}

fn parse_param_decls(stmt: &[Spanned]) -> Result<Vec<ParamDecl>> {
    let mut out = Vec::new();
    for piece in split_on_commas(stmt) {
        let (l, c) = (piece[0].line, piece[0].col);
        let name = match &piece[0].tok {
            Tok::Ident(n) => n.clone(),
            _ => return Err(syntax(l, c, "expected a parameter name")),
        };
        let value = if piece.len() > 1 {
            if piece[1].tok != Tok::Eq {
                return Err(syntax(l, c, "expected `=` in parameter declaration"));
            }
            Some(parse_small_rational(&piece[2..])?)
        } else {
            None
        };
        out.push(ParamDecl { name, value });
    }
    Ok(out)
}

fn parse_func_decls(stmt: &[Spanned]) -> Result<Vec<FuncDecl>> {
    let mut out = Vec::new();
    for piece in split_on_commas(stmt) {
        let (l, c) = (piece[0].line, piece[0].col);
        match piece {
            [Spanned { tok: Tok::Ident(n), .. }, Spanned { tok: Tok::Slash, .. }, Spanned { tok: Tok::Int(a), .. }] => {
                let arity: usize = a
                    .try_into()
                    .map_err(|_| syntax(l, c, "arity out of range"))?;
                if arity == 0 {
                    return Err(syntax(l, c, "arity must be positive"));
                }
                if n == "exp" || n == "D" {
                    return Err(syntax(l, c, format!("`{n}` is reserved")));
                }
                out.push(FuncDecl {
                    name: n.clone(),
                    arity,
                });
            }
            _ => {
                return Err(syntax(
                    l,
                    c,
                    "expected `name/arity` in funcs declaration",
                ))
            }
        }
    }
    Ok(out)
}

// ----- vector field files (.vf) -----

/// Parse a `.vf` vector field: optional `vars`/`params`/`funcs` headers,
/// then a comma-separated component list `dx: expr, dy: expr [, dt: expr]`.
/// The component keys fix the variable order unless a `vars` header is
/// present. Components may depend on `t`.
pub fn parse_vector_field(text: &str) -> Result<VectorField> {
    let toks = lex(text)?;
    let stmts = split_statements(&toks);
    let mut vars: Vec<String> = Vec::new();
    let mut params: Vec<String> = Vec::new();
    let mut funcs: BTreeMap<String, usize> = BTreeMap::new();
    let mut comp_stmt: Option<&[Spanned]> = None;
    for stmt in &stmts {
        let head = &stmt[0];
        match &head.tok {
            Tok::Ident(k) if k == "vars" => vars = ident_list(&stmt[1..])?,
            Tok::Ident(k) if k == "params" => {
                params.extend(parse_param_decls(&stmt[1..])?.into_iter().map(|p| p.name))
            }
            Tok::Ident(k) if k == "funcs" => {
                for d in parse_func_decls(&stmt[1..])? {
                    funcs.insert(d.name, d.arity);
                }
            }
            _ => {
                if comp_stmt.is_some() {
                    return Err(syntax(head.line, head.col, "unexpected second component list"));
                }
                comp_stmt = Some(stmt);
            }
        }
    }
    let stmt = comp_stmt.ok_or_else(|| syntax(1, 1, "missing component list"))?;
    let pieces = split_on_commas(stmt);
    // First pass: collect component keys in order.
    let mut keys: Vec<(String, &[Spanned])> = Vec::new();
    for piece in &pieces {
        let (l, c) = (piece[0].line, piece[0].col);
        let key = match &piece[0].tok {
            Tok::Ident(k) if k.len() > 1 && k.starts_with('d') => k[1..].to_string(),
            _ => return Err(syntax(l, c, "expected a component `d<name>: expr`")),
        };
        if piece.len() < 2 || piece[1].tok != Tok::Colon {
            return Err(syntax(l, c, "expected `:` after component name"));
        }
        keys.push((key, &piece[2..]));
    }
    let spatial: Vec<String> = keys
        .iter()
        .map(|(k, _)| k.clone())
        .filter(|k| k != TIME)
        .collect();
    if vars.is_empty() {
        vars = spatial.clone();
    } else {
        for k in &spatial {
            if !vars.contains(k) {
                return Err(Error::UnknownVariable(k.clone()));
            }
        }
    }
    let ctx = ExprContext {
        vars: vars.clone(),
        params,
        funcs,
        allow_time: true,
    };
    let mut components = vec![Expression::zero(); vars.len()];
    let mut tau = None;
    for (key, body) in keys {
        let mut p = P { toks: body, pos: 0, ctx: &ctx };
        let e = p.expr()?;
        if p.pos != body.len() {
            return Err(p.err("trailing input after component"));
        }
        if key == TIME {
            tau = Some(e);
        } else {
            let idx = vars.iter().position(|v| v == &key).unwrap();
            components[idx] = e;
        }
    }
    Ok(VectorField {
        vars,
        components,
        tau,
    })
}

// ----- coordinate map files (.map) -----

/// Parse a `.map` coordinate change: `oldvars`/`newvars`/`funcs`
/// declarations, `fwd`/`inv` component equations, optional `rel`
/// rewrite identities, `bind` numeric bindings and `box` sample ranges.
pub fn parse_map(text: &str) -> Result<CoordinateMap> {
    let toks = lex(text)?;
    let stmts = split_statements(&toks);
    let mut old_vars = Vec::new();
    let mut new_vars = Vec::new();
    let mut funcs: Vec<FuncDecl> = Vec::new();
    let mut params: Vec<String> = Vec::new();
    let mut fwd: Vec<(String, &[Spanned])> = Vec::new();
    let mut inv: Vec<(String, &[Spanned])> = Vec::new();
    let mut rels: Vec<(&[Spanned], &[Spanned])> = Vec::new();
    let mut binds: Vec<(String, &[Spanned])> = Vec::new();
    let mut boxes: Vec<(String, &[Spanned])> = Vec::new();

    for stmt in &stmts {
        let head = &stmt[0];
        let (l, c) = (head.line, head.col);
        match &head.tok {
            Tok::Ident(k) if k == "oldvars" => old_vars = ident_list(&stmt[1..])?,
            Tok::Ident(k) if k == "newvars" => new_vars = ident_list(&stmt[1..])?,
            Tok::Ident(k) if k == "funcs" => funcs.extend(parse_func_decls(&stmt[1..])?),
            Tok::Ident(k) if k == "params" => {
                params.extend(parse_param_decls(&stmt[1..])?.into_iter().map(|p| p.name))
            }
            Tok::Ident(k) if k == "fwd" || k == "inv" => {
                let name = match stmt.get(1).map(|s| &s.tok) {
                    Some(Tok::Ident(n)) => n.clone(),
                    _ => return Err(syntax(l, c, "expected a variable name")),
                };
                if stmt.get(2).map(|s| &s.tok) != Some(&Tok::Eq) {
                    return Err(syntax(l, c, "expected `=`"));
                }
                if k == "fwd" {
                    fwd.push((name, &stmt[3..]));
                } else {
                    inv.push((name, &stmt[3..]));
                }
            }
            Tok::Ident(k) if k == "rel" => {
                let eq = stmt
                    .iter()
                    .position(|s| s.tok == Tok::Eq)
                    .ok_or_else(|| syntax(l, c, "expected `=` in relation"))?;
                rels.push((&stmt[1..eq], &stmt[eq + 1..]));
            }
            Tok::Ident(k) if k == "bind" => {
                let name = match stmt.get(1).map(|s| &s.tok) {
                    Some(Tok::Ident(n)) => n.clone(),
                    _ => return Err(syntax(l, c, "expected a symbol name after bind")),
                };
                if stmt.get(2).map(|s| &s.tok) != Some(&Tok::Eq) {
                    return Err(syntax(l, c, "expected `=`"));
                }
                binds.push((name, &stmt[3..]));
            }
            Tok::Ident(k) if k == "box" => {
                let name = match stmt.get(1).map(|s| &s.tok) {
                    Some(Tok::Ident(n)) => n.clone(),
                    _ => return Err(syntax(l, c, "expected a variable name after box")),
                };
                if stmt.get(2).map(|s| &s.tok) != Some(&Tok::Eq) {
                    return Err(syntax(l, c, "expected `=`"));
                }
                boxes.push((name, &stmt[3..]));
            }
            _ => return Err(syntax(l, c, "unexpected statement in map file")),
        }
    }
    if old_vars.is_empty() || new_vars.is_empty() {
        return Err(syntax(1, 1, "map requires oldvars and newvars"));
    }
    let func_map: BTreeMap<String, usize> =
        funcs.iter().map(|f| (f.name.clone(), f.arity)).collect();
    let old_ctx = ExprContext {
        vars: old_vars.clone(),
        params: params.clone(),
        funcs: func_map.clone(),
        allow_time: false,
    };
    let new_ctx = ExprContext {
        vars: new_vars.clone(),
        params: params.clone(),
        funcs: func_map.clone(),
        allow_time: false,
    };
    let both_ctx = ExprContext {
        vars: old_vars
            .iter()
            .chain(new_vars.iter())
            .cloned()
            .collect(),
        params: params.clone(),
        funcs: func_map.clone(),
        allow_time: false,
    };
    let parse_with = |body: &[Spanned], ctx: &ExprContext| -> Result<Expression> {
        let mut p = P { toks: body, pos: 0, ctx };
        let e = p.expr()?;
        if p.pos != body.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    };
    let mut forward = Vec::new();
    for nv in &new_vars {
        let (_, body) = fwd
            .iter()
            .find(|(n, _)| n == nv)
            .ok_or_else(|| Error::MissingEquation(format!("fwd {nv}")))?;
        forward.push(parse_with(body, &old_ctx)?);
    }
    let mut inverse = Vec::new();
    for ov in &old_vars {
        let (_, body) = inv
            .iter()
            .find(|(n, _)| n == ov)
            .ok_or_else(|| Error::MissingEquation(format!("inv {ov}")))?;
        inverse.push(parse_with(body, &new_ctx)?);
    }
    let mut relations = Vec::new();
    for (lhs, rhs) in rels {
        let le = parse_with(lhs, &both_ctx)?;
        let re = parse_with(rhs, &both_ctx)?;
        relations.push(relation_from_parts(&le, &re)?);
    }
    let mut bindings = Vec::new();
    for (name, body) in binds {
        // `@builtin` or an expression in placeholders u1..uk.
        if let Some(Spanned { tok: Tok::Ident(b), .. }) = body.first() {
            if body.len() == 1 && builtin_name(b) {
                bindings.push((name, MapBinding::Builtin(b.clone())));
                continue;
            }
        }
        let arity = func_map
            .get(&name)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(name.clone()))?;
        let u_ctx = ExprContext {
            vars: (1..=arity).map(|i| format!("u{i}")).collect(),
            params: params.clone(),
            funcs: BTreeMap::new(),
            allow_time: false,
        };
        bindings.push((name, MapBinding::Body(parse_with(body, &u_ctx)?)));
    }
    let mut sample_box = Vec::new();
    for (name, body) in boxes {
        let dots = body
            .iter()
            .position(|s| s.tok == Tok::Colon)
            .ok_or_else(|| syntax(1, 1, "expected `lo : hi` in box"))?;
        let lo = parse_small_rational(&body[..dots])?;
        let hi = parse_small_rational(&body[dots + 1..])?;
        sample_box.push((name, (lo, hi)));
    }
    Ok(CoordinateMap {
        old_vars,
        new_vars,
        forward,
        inverse,
        relations,
        funcs,
        bindings,
        sample_box,
    })
}

fn builtin_name(s: &str) -> bool {
    s.starts_with('@') || {
        matches!(
            s,
            "sqrtfn" | "atan2fn" | "cosfn" | "sinfn" | "identity" | "square" | "expfn" | "negexp"
        )
    }
}

fn relation_from_parts(lhs: &Expression, rhs: &Expression) -> Result<Relation> {
    let mut terms = lhs.terms();
    let (m, c) = terms
        .next()
        .ok_or_else(|| Error::Invalid("relation left side is zero".into()))?;
    if terms.next().is_some() || !c.is_one() || m.factors().len() != 1 || lhs.has_denominator() {
        return Err(Error::Invalid(
            "relation left side must be a single atom power with coefficient 1".into(),
        ));
    }
    let (atom, e) = m.factors()[0].clone();
    if e <= 0 {
        return Err(Error::Invalid(
            "relation left side must have a positive power".into(),
        ));
    }
    if matches!(atom, Atom::Var(_) | Atom::Param(_)) {
        return Err(Error::Invalid(
            "relation left side must be a formal function or exp atom".into(),
        ));
    }
    Ok(Relation {
        atom,
        power: e as u32,
        replacement: rhs.clone(),
    })
}

// ----- job files (.job) -----

/// A requested check with its parameter lines.
#[derive(Clone, Debug, Default)]
pub struct JobCheck {
    pub name: String,
    pub params: Vec<(String, String)>,
}

/// Flat key/value job file: global keys, then one block per `check =`.
#[derive(Clone, Debug, Default)]
pub struct JobFile {
    pub globals: Vec<(String, String)>,
    pub checks: Vec<JobCheck>,
}

impl JobFile {
    pub fn get<'a>(&'a self, check: &'a JobCheck, key: &str) -> Option<&'a str> {
        check
            .params
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .or_else(|| self.globals.iter().rev().find(|(k, _)| k == key))
            .map(|(_, v)| v.as_str())
    }

    pub fn global(&self, key: &str) -> Option<&str> {
        self.globals
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Parse a flat key-value job file. Keys before the first `check` line
/// are global; later keys attach to the preceding check. `bind name = v`
/// lines keep the symbol name inside the key (`bind name`).
pub fn parse_job(text: &str) -> Result<JobFile> {
    let mut job = JobFile::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(syntax(lineno + 1, 1, "expected `key = value`"));
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(syntax(lineno + 1, 1, "empty key or value"));
        }
        if key == "check" {
            job.checks.push(JobCheck {
                name: value,
                params: Vec::new(),
            });
        } else {
            match job.checks.last_mut() {
                Some(c) => c.params.push((key, value)),
                None => job.globals.push((key, value)),
            }
        }
    }
    Ok(job)
}

// ----- formatting -----

/// Canonical text for a system; `parse_system(format_system(s))` equals
/// the original up to whitespace.
pub fn format_system(sys: &DynSystem) -> String {
    let mut out = String::new();
    out.push_str(&format!("vars {};\n", sys.vars.join(", ")));
    if !sys.params.is_empty() {
        let ps: Vec<String> = sys
            .params
            .iter()
            .map(|p| match &p.value {
                Some(v) => format!("{} = {}", p.name, v),
                None => p.name.clone(),
            })
            .collect();
        out.push_str(&format!("params {};\n", ps.join(", ")));
    }
    if !sys.funcs.is_empty() {
        let fs: Vec<String> = sys
            .funcs
            .iter()
            .map(|f| format!("{}/{}", f.name, f.arity))
            .collect();
        out.push_str(&format!("funcs {};\n", fs.join(", ")));
    }
    if !sys.excluded.is_empty() {
        let es: Vec<String> = sys.excluded.iter().map(|e| e.to_string()).collect();
        out.push_str(&format!("exclude {};\n", es.join(", ")));
    }
    for (v, e) in sys.vars.iter().zip(&sys.rhs) {
        out.push_str(&format!("{v}' = {e};\n"));
    }
    out
}

/// Canonical text for a vector field.
pub fn format_vector_field(v: &VectorField) -> String {
    let mut out = String::new();
    let mut funcs: BTreeMap<String, usize> = BTreeMap::new();
    let mut params: std::collections::BTreeSet<String> = Default::default();
    for e in v.components.iter().chain(v.tau.iter()) {
        params.extend(e.free_params());
        collect_funcs(e, &mut funcs);
    }
    if !params.is_empty() {
        out.push_str(&format!(
            "params {};\n",
            params.into_iter().collect::<Vec<_>>().join(", ")
        ));
    }
    if !funcs.is_empty() {
        let fs: Vec<String> = funcs
            .iter()
            .map(|(n, a)| format!("{n}/{a}"))
            .collect();
        out.push_str(&format!("funcs {};\n", fs.join(", ")));
    }
    let mut comps: Vec<String> = v
        .vars
        .iter()
        .zip(&v.components)
        .map(|(n, e)| format!("d{n}: {e}"))
        .collect();
    if let Some(tau) = &v.tau {
        comps.push(format!("dt: {tau}"));
    }
    out.push_str(&comps.join(", "));
    out.push('\n');
    out
}

fn collect_funcs(e: &Expression, out: &mut BTreeMap<String, usize>) {
    for name in e.func_names() {
        // Arity recovered from any occurrence.
        out.entry(name).or_insert(0);
    }
    // Walk once more to fill arities.
    fill_arities(e, out);
}

fn fill_arities(e: &Expression, out: &mut BTreeMap<String, usize>) {
    for (m, _) in e.terms() {
        for (a, _) in m.factors() {
            match a {
                Atom::Func(f) => {
                    out.insert(f.name.clone(), f.args.len());
                    for arg in &f.args {
                        fill_arities(arg, out);
                    }
                }
                Atom::Exp(arg) => fill_arities(arg, out),
                _ => {}
            }
        }
    }
    for (b, _) in e.denominators() {
        fill_arities(b, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::rat;

    #[test]
    fn parses_two_var_system_with_parameter() {
        let sys = parse_system(
            "vars x, y; params omega; x' = -omega*y; y' = omega*x;",
        )
        .unwrap();
        assert_eq!(sys.vars, vec!["x", "y"]);
        let om = Expression::param("omega");
        assert_eq!(sys.rhs[0], om.mul(&Expression::var("y")).neg());
        assert_eq!(sys.rhs[1], om.mul(&Expression::var("x")));
    }

    #[test]
    fn parses_limit_cycle_system() {
        // alpha = 1 - x^2 - y^2, beta = omega, as an explicit text form.
        let sys = parse_system(
            "vars x, y; params omega = 1;\n\
             x' = (1 - x^2 - y^2)*x - omega*y;\n\
             y' = omega*x + (1 - x^2 - y^2)*y;",
        )
        .unwrap();
        let x = Expression::var("x");
        let y = Expression::var("y");
        let alpha = Expression::one()
            .sub(&x.powi(2).unwrap())
            .sub(&y.powi(2).unwrap());
        let om = Expression::param("omega");
        assert_eq!(sys.rhs[0], alpha.mul(&x).sub(&om.mul(&y)));
        assert_eq!(sys.params[0].value, Some(rat(1, 1)));
    }

    #[test]
    fn duplicate_equation_is_an_error() {
        let err = parse_system("vars x; x' = x; x' = x;").unwrap_err();
        assert!(matches!(err, Error::DuplicateEquation(_)));
    }

    #[test]
    fn missing_equation_is_an_error() {
        let err = parse_system("vars x, y; x' = x;").unwrap_err();
        assert!(matches!(err, Error::MissingEquation(_)));
    }

    #[test]
    fn time_dependence_rejected_in_systems() {
        let err = parse_system("vars x; x' = t*x;").unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }));
    }

    #[test]
    fn decimal_literals_rejected() {
        let err = parse_system("vars x; x' = 0.5*x;").unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }));
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_system("vars x;\nx' = x + ;").unwrap_err();
        match err {
            Error::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parses_rotation_field() {
        let v = parse_vector_field("dx: -y, dy: x").unwrap();
        assert_eq!(v.vars, vec!["x", "y"]);
        assert_eq!(v.components[0], Expression::var("y").neg());
        assert_eq!(v.components[1], Expression::var("x"));
        assert!(v.tau.is_none());
    }

    #[test]
    fn parses_scaling_field() {
        let v = parse_vector_field("dx: x, dy: y").unwrap();
        assert_eq!(v.components[0], Expression::var("x"));
    }

    #[test]
    fn parses_pure_time_translation() {
        let v = parse_vector_field("dt: 1").unwrap();
        assert!(v.vars.is_empty());
        assert_eq!(v.tau, Some(Expression::one()));
    }

    #[test]
    fn parses_field_with_formal_function() {
        let v = parse_vector_field(
            "funcs omega/1; dx: -omega(x^2+y^2)*y, dy: omega(x^2+y^2)*x",
        )
        .unwrap();
        let r2 = Expression::var("x")
            .powi(2)
            .unwrap()
            .add(&Expression::var("y").powi(2).unwrap());
        let om = Expression::func("omega", vec![0], vec![r2]);
        assert_eq!(v.components[1], om.mul(&Expression::var("x")));
    }

    #[test]
    fn prime_and_d_notation_round_trip() {
        let ctx = ExprContext {
            vars: vec!["x".into(), "y".into()],
            params: vec![],
            funcs: [("beta".to_string(), 2usize)].into_iter().collect(),
            allow_time: false,
        };
        let e = parse_expression("D[1,0]beta(x, y) * x", &ctx).unwrap();
        let back = parse_expression(&e.to_string(), &ctx).unwrap();
        assert_eq!(e, back);
    }

    #[test]
    fn format_parse_round_trip_system() {
        let text = "vars x, y; params omega = 2; funcs alpha/1;\n\
                    x' = alpha(x^2+y^2)*x - omega*y;\n\
                    y' = omega*x + alpha(x^2+y^2)*y;";
        let sys = parse_system(text).unwrap();
        let formatted = format_system(&sys);
        let reparsed = parse_system(&formatted).unwrap();
        assert_eq!(sys, reparsed);
        // And formatting is a fixed point after one round.
        assert_eq!(formatted, format_system(&reparsed));
    }

    #[test]
    fn format_parse_round_trip_field() {
        let v = parse_vector_field(
            "funcs omega/1; dx: -omega(x^2+y^2)*y, dy: omega(x^2+y^2)*x, dt: 1",
        )
        .unwrap();
        let formatted = format_vector_field(&v);
        let reparsed = parse_vector_field(&formatted).unwrap();
        assert_eq!(v, reparsed);
    }

    #[test]
    fn rational_division_folds_to_coefficient() {
        let ctx = ExprContext::with_vars(&["x".to_string()]);
        let e = parse_expression("1/2 * x", &ctx).unwrap();
        assert_eq!(e, Expression::var("x").scale(&rat(1, 2)));
    }

    #[test]
    fn negative_exponent_literal() {
        let ctx = ExprContext::with_vars(&["x".to_string()]);
        let e = parse_expression("x^-2", &ctx).unwrap();
        assert_eq!(e, Expression::var("x").powi(-2).unwrap());
        let e2 = parse_expression("x^(-2)", &ctx).unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn exp_literal_parses() {
        let ctx = ExprContext::with_vars(&["x".to_string()]);
        let e = parse_expression("exp(-1/(2*x^2))", &ctx).unwrap();
        let arg = Expression::var("x").powi(-2).unwrap().scale(&rat(-1, 2));
        assert_eq!(e, Expression::exp_of(&arg));
    }

    #[test]
    fn job_file_blocks() {
        let job = parse_job(
            "# comment\nsystem = a.dsys\nbind omega = u1\ncheck = is_symmetry\nfield = r.vf\ncheck = find_darboux\ndeg_p = 2\n",
        )
        .unwrap();
        assert_eq!(job.globals.len(), 2);
        assert_eq!(job.checks.len(), 2);
        assert_eq!(job.get(&job.checks[0], "field"), Some("r.vf"));
        assert_eq!(job.get(&job.checks[1], "deg_p"), Some("2"));
        assert_eq!(job.get(&job.checks[1], "system"), Some("a.dsys"));
    }

    #[test]
    fn parses_polar_map() {
        let text = "oldvars x, y; newvars r, th;\n\
                    funcs rad/1, ang/2, cs/1, sn/1;\n\
                    fwd r = rad(x^2 + y^2);\n\
                    fwd th = ang(y, x);\n\
                    inv x = r*cs(th);\n\
                    inv y = r*sn(th);\n\
                    rel sn(th)^2 = 1 - cs(th)^2;\n\
                    rel sn'(th) = cs(th);\n\
                    rel cs'(th) = -sn(th);\n\
                    rel rad(r^2) = r;\n\
                    rel ang(r*sn(th), r*cs(th)) = th;";
        let map = parse_map(text).unwrap();
        assert_eq!(map.new_vars, vec!["r", "th"]);
        assert_eq!(map.relations.len(), 5);
    }
}
