//! Canonical symbolic expressions.
//!
//! Normal form: `num / (B_1^k_1 * ... * B_m^k_m)` where `num` is a Laurent
//! polynomial over atoms (sorted terms, merged coefficients, no zeros) and
//! each denominator base `B_i` is a monic multi-term sum free of nested
//! denominators. Positive integer powers of sums are always expanded;
//! denominator bases are cancelled against the numerator whenever exact
//! division succeeds. Construction maintains the normal form, so
//! `normalize` is the identity and `==` decides semantic equality within
//! the grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num::{BigInt, One, Signed, ToPrimitive, Zero};

use super::Rat;
use crate::error::{Error, Result};

/// Finite-difference step for formal derivatives evaluated without a
/// supplied partial-derivative callable.
pub const FD_STEP: f64 = 1e-6;

/// A formal function application `name(args)` carrying a derivative
/// multi-index over its argument slots.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FuncAtom {
    pub name: String,
    pub deriv: Vec<u32>,
    pub args: Vec<Expression>,
}

/// Multiplicative generator of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Var(String),
    Param(String),
    Exp(Expression),
    Func(FuncAtom),
}

impl Atom {
    fn fmt_with_pow(&self, e: i64, out: &mut String) {
        let needs_paren = e != 1 && matches!(self, Atom::Exp(_) | Atom::Func(_));
        let base = self.render();
        if e == 1 {
            out.push_str(&base);
        } else if needs_paren {
            out.push_str(&format!("({base})^{e}"));
        } else {
            out.push_str(&format!("{base}^{e}"));
        }
    }

    fn render(&self) -> String {
        match self {
            Atom::Var(n) | Atom::Param(n) => n.clone(),
            Atom::Exp(arg) => format!("exp({arg})"),
            Atom::Func(f) => {
                let args = f
                    .args
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(", ");
                let total: u32 = f.deriv.iter().sum();
                if total == 0 {
                    format!("{}({})", f.name, args)
                } else if f.args.len() == 1 && total <= 3 {
                    let primes = "'".repeat(total as usize);
                    format!("{}{}({})", f.name, primes, args)
                } else {
                    let idx = f
                        .deriv
                        .iter()
                        .map(|d| d.to_string())
                        .collect::<Vec<_>>()
                        .join(",");
                    format!("D[{}]{}({})", idx, f.name, args)
                }
            }
        }
    }
}

/// Sorted product of atom powers with nonzero integer exponents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial(Vec<(Atom, i64)>);

impl Monomial {
    pub fn unit() -> Self {
        Monomial(Vec::new())
    }

    pub fn atom(a: Atom) -> Self {
        Monomial(vec![(a, 1)])
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[(Atom, i64)] {
        &self.0
    }

    pub fn total_degree(&self) -> i64 {
        self.0.iter().map(|(_, e)| *e).sum()
    }

    pub fn exponent(&self, a: &Atom) -> i64 {
        self.0
            .iter()
            .find(|(b, _)| b == a)
            .map(|(_, e)| *e)
            .unwrap_or(0)
    }

    /// Merge two sorted factor lists, adding exponents and dropping zeros.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let e = self.0[i].1 + other.0[j].1;
                    if e != 0 {
                        out.push((self.0[i].0.clone(), e));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    pub fn powi(&self, n: i64) -> Monomial {
        if n == 0 {
            return Monomial::unit();
        }
        Monomial(self.0.iter().map(|(a, e)| (a.clone(), e * n)).collect())
    }

    pub fn inv(&self) -> Monomial {
        self.powi(-1)
    }

    /// Exponent-wise divisibility (`self / other` stays a true monomial
    /// with nonnegative exponents). Assumes both have nonnegative exponents.
    fn divisible_by(&self, other: &Monomial) -> bool {
        other.0.iter().all(|(a, e)| self.exponent(a) >= *e)
    }

    fn from_sorted(v: Vec<(Atom, i64)>) -> Monomial {
        Monomial(v)
    }
}

impl Ord for Monomial {
    /// Graded lexicographic order: total degree first, then the earliest
    /// atom (in atom order) with a differing exponent decides, larger
    /// exponent winning.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        let d = self.total_degree().cmp(&other.total_degree());
        if d != Ordering::Equal {
            return d;
        }
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() || j < other.0.len() {
            let (ea, eb, advance) = match (self.0.get(i), other.0.get(j)) {
                (Some((a, ea)), Some((b, eb))) => match a.cmp(b) {
                    Ordering::Less => (*ea, 0, (true, false)),
                    Ordering::Greater => (0, *eb, (false, true)),
                    Ordering::Equal => (*ea, *eb, (true, true)),
                },
                (Some((_, ea)), None) => (*ea, 0, (true, false)),
                (None, Some((_, eb))) => (0, *eb, (false, true)),
                (None, None) => break,
            };
            match ea.cmp(&eb) {
                Ordering::Equal => {}
                ord => return ord,
            }
            if advance.0 {
                i += 1;
            }
            if advance.1 {
                j += 1;
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

type Terms = BTreeMap<Monomial, Rat>;

/// Exact symbolic scalar in canonical form.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Expression {
    terms: Terms,
    den: Vec<(Expression, u32)>,
}

impl Expression {
    // ----- constructors -----

    pub fn zero() -> Self {
        Expression::default()
    }

    pub fn one() -> Self {
        Expression::from_rat(Rat::one())
    }

    pub fn from_rat(c: Rat) -> Self {
        let mut terms = Terms::new();
        if !c.is_zero() {
            terms.insert(Monomial::unit(), c);
        }
        Expression { terms, den: Vec::new() }
    }

    pub fn from_int(n: i64) -> Self {
        Expression::from_rat(super::rat_int(n))
    }

    pub fn var(name: &str) -> Self {
        Expression::from_atom(Atom::Var(name.to_string()))
    }

    pub fn param(name: &str) -> Self {
        Expression::from_atom(Atom::Param(name.to_string()))
    }

    pub fn from_atom(a: Atom) -> Self {
        let mut terms = Terms::new();
        terms.insert(Monomial::atom(a), Rat::one());
        Expression { terms, den: Vec::new() }
    }

    /// `exp(arg)` atom; `exp(0)` folds to 1.
    pub fn exp_of(arg: &Expression) -> Self {
        if arg.is_zero() {
            return Expression::one();
        }
        Expression::from_atom(Atom::Exp(arg.clone()))
    }

    /// Formal function application with a derivative multi-index.
    pub fn func(name: &str, deriv: Vec<u32>, args: Vec<Expression>) -> Self {
        assert_eq!(deriv.len(), args.len(), "derivative multi-index length");
        Expression::from_atom(Atom::Func(FuncAtom {
            name: name.to_string(),
            deriv,
            args,
        }))
    }

    // ----- basic queries -----

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.den.is_empty() && self.as_constant().map(|c| c.is_one()).unwrap_or(false)
    }

    /// The constant value, if the expression is a bare rational.
    pub fn as_constant(&self) -> Option<Rat> {
        if !self.den.is_empty() {
            return None;
        }
        if self.terms.is_empty() {
            return Some(Rat::zero());
        }
        if self.terms.len() == 1 {
            let (m, c) = self.terms.iter().next().unwrap();
            if m.is_unit() {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn has_denominator(&self) -> bool {
        !self.den.is_empty()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    pub fn denominators(&self) -> &[(Expression, u32)] {
        &self.den
    }

    /// Identity; expressions are canonical by construction. Kept so call
    /// sites can state intent and so the idempotence contract is explicit.
    pub fn normalize(&self) -> Expression {
        self.clone()
    }

    // ----- arithmetic -----

    pub fn neg(&self) -> Expression {
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| (m.clone(), -c.clone()))
            .collect();
        Expression { terms, den: self.den.clone() }
    }

    pub fn add(&self, other: &Expression) -> Expression {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        if self.den == other.den {
            let mut terms = self.terms.clone();
            for (m, c) in &other.terms {
                add_term(&mut terms, m.clone(), c.clone());
            }
            return Expression::assemble(terms, self.den.clone());
        }
        // Common denominator: per base, max multiplicity.
        let common = merge_den_max(&self.den, &other.den);
        let a = scale_to_common(&self.terms, &self.den, &common);
        let b = scale_to_common(&other.terms, &other.den, &common);
        let mut terms = a;
        for (m, c) in b {
            add_term(&mut terms, m, c);
        }
        Expression::assemble(terms, common)
    }

    pub fn sub(&self, other: &Expression) -> Expression {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        if self.is_zero() || other.is_zero() {
            return Expression::zero();
        }
        let terms = mul_terms(&self.terms, &other.terms);
        let den = merge_den_sum(&self.den, &other.den);
        Expression::assemble(terms, den)
    }

    pub fn scale(&self, c: &Rat) -> Expression {
        if c.is_zero() {
            return Expression::zero();
        }
        let terms = self
            .terms
            .iter()
            .map(|(m, k)| (m.clone(), k * c))
            .collect();
        Expression { terms, den: self.den.clone() }
    }

    /// Integer power. Negative exponents invert; inverting zero is a
    /// caller error surfaced through `Error::ZeroDivisor`.
    pub fn powi(&self, n: i64) -> Result<Expression> {
        if n == 0 {
            return Ok(Expression::one());
        }
        if n < 0 {
            return Ok(self.inv()?.powi_unsigned((-n) as u64));
        }
        Ok(self.powi_unsigned(n as u64))
    }

    fn powi_unsigned(&self, mut n: u64) -> Expression {
        let mut base = self.clone();
        let mut acc = Expression::one();
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// Multiplicative inverse.
    pub fn inv(&self) -> Result<Expression> {
        if self.is_zero() {
            return Err(Error::ZeroDivisor);
        }
        // self = N / prod(B^k)  =>  1/self = prod(B^k) / N
        let mut numerator = Expression::one();
        for (b, k) in &self.den {
            numerator = numerator.mul(&b.powi_unsigned(*k as u64));
        }
        // Factor N = c * m * N' with N' monic, min-exponent-zero.
        let (c, m, core) = factor_terms(&self.terms);
        let inv_monomial = single_term(m.inv(), c.recip());
        if core.len() == 1 {
            // N' is the constant 1: pure monomial inverse.
            return Ok(numerator.mul(&Expression {
                terms: inv_monomial,
                den: Vec::new(),
            }));
        }
        let base = Expression { terms: core, den: Vec::new() };
        let scaled = Expression { terms: inv_monomial, den: Vec::new() };
        Ok(Expression::assemble(
            mul_terms(&numerator.terms, &scaled.terms),
            merge_den_sum(&numerator.den, &[(base, 1)]),
        ))
    }

    /// `self / other` as a (possibly fractional) expression.
    pub fn div(&self, other: &Expression) -> Result<Expression> {
        if let Some(q) = self.try_div(other) {
            return Ok(q);
        }
        Ok(self.mul(&other.inv()?))
    }

    /// Exact division: `Some(q)` with `self == q * other`, or `None`.
    pub fn try_div(&self, other: &Expression) -> Option<Expression> {
        if other.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Expression::zero());
        }
        // (N1/D1) / (N2/D2) = (N1 * D2) / (N2 * D1): exact iff the
        // numerator product divides out both N2 and D1 exactly.
        let mut num = Expression {
            terms: self.terms.clone(),
            den: Vec::new(),
        };
        for (b, k) in &other.den {
            num = num.mul(&b.powi_unsigned(*k as u64));
        }
        let mut q = divide_terms_exact(&num.terms, &other.terms)?;
        for (b, k) in &self.den {
            for _ in 0..*k {
                q = divide_terms_exact(&q, &b.terms)?;
            }
        }
        Some(Expression { terms: q, den: Vec::new() })
    }

    // ----- assembly & invariants -----

    /// Build a canonical expression from raw parts: cancels denominator
    /// bases into the numerator while exact division succeeds and strips
    /// zero multiplicities.
    fn assemble(mut terms: Terms, den: Vec<(Expression, u32)>) -> Expression {
        if terms.is_empty() {
            return Expression::zero();
        }
        let mut kept: Vec<(Expression, u32)> = Vec::with_capacity(den.len());
        for (base, mut k) in den {
            while k > 0 {
                match divide_terms_exact(&terms, &base.terms) {
                    Some(q) => {
                        terms = q;
                        k -= 1;
                    }
                    None => break,
                }
            }
            if k > 0 {
                kept.push((base, k));
            }
        }
        Expression { terms, den: kept }
    }

    // ----- calculus -----

    /// Exact partial derivative with respect to a variable symbol.
    pub fn differentiate(&self, var: &str) -> Expression {
        // d(N/P) with P = prod B^-k: P * (dN + sum_i (-k_i) N dB_i / B_i)
        let n = Expression {
            terms: self.terms.clone(),
            den: Vec::new(),
        };
        let mut inner = diff_terms(&self.terms, var);
        for (b, k) in &self.den {
            let db = diff_terms(&b.terms, var);
            if db.is_zero() {
                continue;
            }
            let factor = n
                .mul(&db)
                .scale(&super::rat_int(-(*k as i64)))
                .mul(&b.inv().expect("denominator base is nonzero"));
            inner = inner.add(&factor);
        }
        if self.den.is_empty() {
            return inner;
        }
        let p = Expression {
            terms: single_term(Monomial::unit(), Rat::one()),
            den: self.den.clone(),
        };
        inner.mul(&p)
    }

    // ----- substitution -----

    /// Replace a variable by an expression everywhere (including inside
    /// formal function arguments and denominator bases).
    pub fn substitute_var(&self, var: &str, rep: &Expression) -> Result<Expression> {
        self.rebuild(&mut |a| match a {
            Atom::Var(n) if n == var => Ok(rep.clone()),
            _ => default_atom_rebuild(a, &mut |x| x.substitute_var(var, rep)),
        })
    }

    /// Replace a parameter by an expression.
    pub fn substitute_param(&self, name: &str, rep: &Expression) -> Result<Expression> {
        self.rebuild(&mut |a| match a {
            Atom::Param(n) if n == name => Ok(rep.clone()),
            _ => default_atom_rebuild(a, &mut |x| x.substitute_param(name, rep)),
        })
    }

    /// Bind a formal function symbol to a concrete expression `body` in
    /// placeholder variables `u1..uk`. Derivative multi-indices are
    /// realized by differentiating the body, then substituting arguments.
    pub fn bind_func(&self, name: &str, arity: usize, body: &Expression) -> Result<Expression> {
        self.rebuild(&mut |a| match a {
            Atom::Func(f) if f.name == name => {
                if f.args.len() != arity {
                    return Err(Error::Arity {
                        name: name.to_string(),
                        declared: arity,
                        given: f.args.len(),
                    });
                }
                let mut value = body.clone();
                for (i, k) in f.deriv.iter().enumerate() {
                    for _ in 0..*k {
                        value = value.differentiate(&placeholder(i));
                    }
                }
                for (i, arg) in f.args.iter().enumerate() {
                    let sub = arg.bind_func(name, arity, body)?;
                    value = value.substitute_var(&placeholder(i), &sub)?;
                }
                Ok(value)
            }
            _ => default_atom_rebuild(a, &mut |x| x.bind_func(name, arity, body)),
        })
    }

    /// Rebuild the expression through an atom transformer, re-normalizing
    /// via the arithmetic constructors.
    pub fn rebuild(
        &self,
        f: &mut dyn FnMut(&Atom) -> Result<Expression>,
    ) -> Result<Expression> {
        let mut out = Expression::zero();
        for (m, c) in &self.terms {
            let mut term = Expression::from_rat(c.clone());
            for (a, e) in m.factors() {
                let rep = f(a)?;
                term = term.mul(&rep.powi(*e)?);
            }
            out = out.add(&term);
        }
        for (b, k) in &self.den {
            let rb = b.rebuild(f)?;
            out = out.mul(&rb.powi(-(*k as i64))?);
        }
        Ok(out)
    }

    // ----- symbol queries -----

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk_atoms(&mut |a| {
            if let Atom::Var(n) = a {
                out.insert(n.clone());
            }
        });
        out
    }

    pub fn free_params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk_atoms(&mut |a| {
            if let Atom::Param(n) = a {
                out.insert(n.clone());
            }
        });
        out
    }

    pub fn func_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk_atoms(&mut |a| {
            if let Atom::Func(f) = a {
                out.insert(f.name.clone());
            }
        });
        out
    }

    pub fn contains_var(&self, var: &str) -> bool {
        self.free_vars().contains(var)
    }

    fn walk_atoms(&self, f: &mut dyn FnMut(&Atom)) {
        for m in self.terms.keys() {
            for (a, _) in m.factors() {
                f(a);
                match a {
                    Atom::Exp(arg) => arg.walk_atoms(f),
                    Atom::Func(fa) => {
                        for arg in &fa.args {
                            arg.walk_atoms(f);
                        }
                    }
                    _ => {}
                }
            }
        }
        for (b, _) in &self.den {
            b.walk_atoms(f);
        }
    }

    // ----- numeric evaluation -----

    /// IEEE double evaluation. Every free variable and parameter must be
    /// bound; formal function symbols resolve through callables, with
    /// derivative multi-indices realized by supplied partials or nested
    /// central finite differences of step `FD_STEP`.
    pub fn evaluate(&self, ctx: &EvalCtx) -> Result<f64> {
        let mut num = 0.0;
        for (m, c) in &self.terms {
            let mut t = c.to_f64().ok_or_else(|| {
                Error::Domain("rational coefficient out of f64 range".into())
            })?;
            for (a, e) in m.factors() {
                let base = eval_atom(a, ctx)?;
                if *e < 0 && base == 0.0 {
                    return Err(Error::Domain("division by zero".into()));
                }
                t *= base.powi(*e as i32);
            }
            num += t;
        }
        let mut den = 1.0;
        for (b, k) in &self.den {
            let v = b.evaluate(ctx)?;
            if v == 0.0 {
                return Err(Error::Domain("division by zero".into()));
            }
            den *= v.powi(*k as i32);
        }
        let out = num / den;
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Domain("non-finite value".into()))
        }
    }
}

fn placeholder(i: usize) -> String {
    format!("u{}", i + 1)
}

fn default_atom_rebuild(
    a: &Atom,
    rec: &mut dyn FnMut(&Expression) -> Result<Expression>,
) -> Result<Expression> {
    match a {
        Atom::Var(_) | Atom::Param(_) => Ok(Expression::from_atom(a.clone())),
        Atom::Exp(arg) => Ok(Expression::exp_of(&rec(arg)?)),
        Atom::Func(f) => {
            let args = f.args.iter().map(|x| rec(x)).collect::<Result<Vec<_>>>()?;
            Ok(Expression::func(&f.name, f.deriv.clone(), args))
        }
    }
}

fn single_term(m: Monomial, c: Rat) -> Terms {
    let mut t = Terms::new();
    if !c.is_zero() {
        t.insert(m, c);
    }
    t
}

fn add_term(terms: &mut Terms, m: Monomial, c: Rat) {
    use std::collections::btree_map::Entry;
    if c.is_zero() {
        return;
    }
    match terms.entry(m) {
        Entry::Vacant(e) => {
            e.insert(c);
        }
        Entry::Occupied(mut e) => {
            let sum = e.get() + &c;
            if sum.is_zero() {
                e.remove();
            } else {
                *e.get_mut() = sum;
            }
        }
    }
}

fn mul_terms(a: &Terms, b: &Terms) -> Terms {
    let mut out = Terms::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            add_term(&mut out, ma.mul(mb), ca * cb);
        }
    }
    out
}

fn diff_terms(terms: &Terms, var: &str) -> Expression {
    let mut out = Expression::zero();
    for (m, c) in terms {
        for (idx, (a, e)) in m.factors().iter().enumerate() {
            let da = diff_atom(a, var);
            if da.is_zero() {
                continue;
            }
            // c * e * a^(e-1) * da * rest
            let mut rest: Vec<(Atom, i64)> = Vec::with_capacity(m.factors().len());
            for (j, (b, eb)) in m.factors().iter().enumerate() {
                let exp = if j == idx { *eb - 1 } else { *eb };
                if exp != 0 {
                    rest.push((b.clone(), exp));
                }
            }
            let partial = Expression {
                terms: single_term(Monomial::from_sorted(rest), c * super::rat_int(*e)),
                den: Vec::new(),
            };
            out = out.add(&partial.mul(&da));
        }
    }
    out
}

fn diff_atom(a: &Atom, var: &str) -> Expression {
    match a {
        Atom::Var(n) => {
            if n == var {
                Expression::one()
            } else {
                Expression::zero()
            }
        }
        Atom::Param(_) => Expression::zero(),
        Atom::Exp(arg) => {
            let d = arg.differentiate(var);
            if d.is_zero() {
                Expression::zero()
            } else {
                Expression::from_atom(a.clone()).mul(&d)
            }
        }
        Atom::Func(f) => {
            let mut out = Expression::zero();
            for (k, arg) in f.args.iter().enumerate() {
                let d = arg.differentiate(var);
                if d.is_zero() {
                    continue;
                }
                let mut deriv = f.deriv.clone();
                deriv[k] += 1;
                let bumped = Expression::func(&f.name, deriv, f.args.clone());
                out = out.add(&bumped.mul(&d));
            }
            out
        }
    }
}

/// Factor a nonzero term map into `c * m * core` with `core` monic and
/// min-exponent zero in every atom.
fn factor_terms(terms: &Terms) -> (Rat, Monomial, Terms) {
    debug_assert!(!terms.is_empty());
    // Per-atom minimum exponent across terms (0 when absent in a term).
    let mut mins: Option<BTreeMap<Atom, i64>> = None;
    for m in terms.keys() {
        let mut cur: BTreeMap<Atom, i64> =
            m.factors().iter().cloned().collect();
        match &mut mins {
            None => mins = Some(cur),
            Some(mins) => {
                for (a, v) in mins.iter_mut() {
                    let e = cur.remove(a).unwrap_or(0);
                    *v = (*v).min(e);
                }
                for (a, e) in cur {
                    mins.insert(a, e.min(0));
                }
            }
        }
    }
    let shift = Monomial::from_sorted(
        mins.unwrap_or_default()
            .into_iter()
            .filter(|(_, e)| *e != 0)
            .collect::<Vec<_>>(),
    );
    let inv = shift.inv();
    let mut core: Terms = terms
        .iter()
        .map(|(m, c)| (m.mul(&inv), c.clone()))
        .collect();
    // Monic: divide by the leading (grlex-max) coefficient.
    let lead = core
        .iter()
        .next_back()
        .map(|(_, c)| c.clone())
        .expect("nonzero");
    if !lead.is_one() {
        for c in core.values_mut() {
            *c = &*c / &lead;
        }
    }
    (lead, shift, core)
}

/// Exact division of Laurent term maps. Returns the quotient when
/// `num == q * den` has a solution in the grammar, `None` otherwise.
fn divide_terms_exact(num: &Terms, den: &Terms) -> Option<Terms> {
    if den.is_empty() {
        return None;
    }
    if num.is_empty() {
        return Some(Terms::new());
    }
    if den.len() == 1 {
        let (dm, dc) = den.iter().next().unwrap();
        let inv = dm.inv();
        return Some(
            num.iter()
                .map(|(m, c)| (m.mul(&inv), c / dc))
                .collect(),
        );
    }
    // Clear to true polynomials, divide, shift back.
    let (nc, nm, ncore) = factor_terms(num);
    let (dc, dm, dcore) = factor_terms(den);
    let mut rem = ncore;
    let mut quot = Terms::new();
    let (lead_m, lead_c) = {
        let (m, c) = dcore.iter().next_back().unwrap();
        (m.clone(), c.clone())
    };
    while let Some((m, c)) = rem.iter().next_back().map(|(m, c)| (m.clone(), c.clone())) {
        if !m.divisible_by(&lead_m) {
            return None;
        }
        let qm = m.mul(&lead_m.inv());
        let qc = &c / &lead_c;
        add_term(&mut quot, qm.clone(), qc.clone());
        for (bm, bc) in &dcore {
            add_term(&mut rem, bm.mul(&qm), -(bc * &qc));
        }
    }
    let scale = &nc / &dc;
    let shift = nm.mul(&dm.inv());
    Some(
        quot.into_iter()
            .map(|(m, c)| (m.mul(&shift), c * &scale))
            .collect(),
    )
}

fn merge_den_max(
    a: &[(Expression, u32)],
    b: &[(Expression, u32)],
) -> Vec<(Expression, u32)> {
    let mut map: BTreeMap<&Expression, u32> = BTreeMap::new();
    for (e, k) in a {
        map.insert(e, *k);
    }
    for (e, k) in b {
        map.entry(e).and_modify(|v| *v = (*v).max(*k)).or_insert(*k);
    }
    map.into_iter().map(|(e, k)| (e.clone(), k)).collect()
}

fn merge_den_sum(
    a: &[(Expression, u32)],
    b: &[(Expression, u32)],
) -> Vec<(Expression, u32)> {
    let mut map: BTreeMap<&Expression, u32> = BTreeMap::new();
    for (e, k) in a.iter().chain(b) {
        *map.entry(e).or_insert(0) += *k;
    }
    map.into_iter().map(|(e, k)| (e.clone(), k)).collect()
}

/// Multiply `terms` by the expanded quotient `common / den`.
fn scale_to_common(
    terms: &Terms,
    den: &[(Expression, u32)],
    common: &[(Expression, u32)],
) -> Terms {
    let mut out = terms.clone();
    for (base, k) in common {
        let have = den
            .iter()
            .find(|(b, _)| b == base)
            .map(|(_, k)| *k)
            .unwrap_or(0);
        for _ in have..*k {
            out = mul_terms(&out, &base.terms);
        }
    }
    out
}

fn eval_atom(a: &Atom, ctx: &EvalCtx) -> Result<f64> {
    match a {
        Atom::Var(n) => ctx
            .vars
            .get(n)
            .copied()
            .ok_or_else(|| Error::UnboundSymbol(n.clone())),
        Atom::Param(n) => ctx
            .params
            .get(n)
            .copied()
            .ok_or_else(|| Error::UnboundSymbol(n.clone())),
        Atom::Exp(arg) => Ok(arg.evaluate(ctx)?.exp()),
        Atom::Func(f) => {
            let imp = ctx
                .funcs
                .get(&f.name)
                .ok_or_else(|| Error::UnboundSymbol(f.name.clone()))?;
            if imp.arity != f.args.len() {
                return Err(Error::Arity {
                    name: f.name.clone(),
                    declared: imp.arity,
                    given: f.args.len(),
                });
            }
            let args = f
                .args
                .iter()
                .map(|x| x.evaluate(ctx))
                .collect::<Result<Vec<_>>>()?;
            eval_func_deriv(imp, &f.deriv, &args)
        }
    }
}

fn eval_func_deriv(imp: &FuncImpl, deriv: &[u32], args: &[f64]) -> Result<f64> {
    if deriv.iter().all(|d| *d == 0) {
        return Ok((imp.f)(args));
    }
    if let Some(partial) = &imp.partial {
        if let Some(v) = partial(deriv, args) {
            return Ok(v);
        }
    }
    // Nested central differences, one order at a time.
    let i = deriv.iter().position(|d| *d > 0).unwrap();
    let mut lower = deriv.to_vec();
    lower[i] -= 1;
    let mut hi = args.to_vec();
    let mut lo = args.to_vec();
    hi[i] += FD_STEP;
    lo[i] -= FD_STEP;
    let f_hi = eval_func_deriv(imp, &lower, &hi)?;
    let f_lo = eval_func_deriv(imp, &lower, &lo)?;
    Ok((f_hi - f_lo) / (2.0 * FD_STEP))
}

/// Callable binding for a formal function symbol.
#[derive(Clone)]
pub struct FuncImpl {
    pub arity: usize,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Optional exact partials: `(multi-index, args) -> value`. `None`
    /// falls back to central finite differences.
    pub partial: Option<Arc<dyn Fn(&[u32], &[f64]) -> Option<f64> + Send + Sync>>,
}

impl fmt::Debug for FuncImpl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FuncImpl(arity={})", self.arity)
    }
}

/// Bindings for numeric evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalCtx {
    pub vars: BTreeMap<String, f64>,
    pub params: BTreeMap<String, f64>,
    pub funcs: BTreeMap<String, FuncImpl>,
}

impl EvalCtx {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_var(mut self, name: &str, v: f64) -> Self {
        self.vars.insert(name.to_string(), v);
        self
    }
}

// ----- display -----

fn fmt_coefficient(c: &Rat, has_mono: bool, out: &mut String) {
    let minus = c.is_negative();
    let abs = c.abs();
    if minus {
        out.push('-');
    }
    if abs.is_one() && has_mono {
        return;
    }
    if abs.denom() == &BigInt::one() {
        out.push_str(&abs.numer().to_string());
    } else {
        out.push_str(&format!("{}/{}", abs.numer(), abs.denom()));
    }
    if has_mono {
        out.push('*');
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut num = String::new();
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            if i > 0 {
                if c.is_negative() {
                    num.push_str(" - ");
                    let mut piece = String::new();
                    fmt_coefficient(&c.abs(), !m.is_unit(), &mut piece);
                    num.push_str(&piece);
                } else {
                    num.push_str(" + ");
                    fmt_coefficient(c, !m.is_unit(), &mut num);
                }
            } else {
                fmt_coefficient(c, !m.is_unit(), &mut num);
            }
            for (j, (a, e)) in m.factors().iter().enumerate() {
                if j > 0 {
                    num.push('*');
                }
                a.fmt_with_pow(*e, &mut num);
            }
        }
        if self.den.is_empty() {
            return write!(f, "{num}");
        }
        let mut den = String::new();
        for (i, (b, k)) in self.den.iter().enumerate() {
            if i > 0 {
                den.push('*');
            }
            if *k == 1 {
                den.push_str(&format!("({b})"));
            } else {
                den.push_str(&format!("({b})^{k}"));
            }
        }
        if self.terms.len() == 1 {
            write!(f, "{num}/{den}")
        } else {
            write!(f, "({num})/{den}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::{rat, rat_int};

    fn x() -> Expression {
        Expression::var("x")
    }

    fn y() -> Expression {
        Expression::var("y")
    }

    #[test]
    fn like_terms_merge() {
        let e = x().add(&x());
        assert_eq!(e, x().scale(&rat_int(2)));
        assert_eq!(e.to_string(), "2*x");
    }

    #[test]
    fn formal_symbol_cancels() {
        let r2 = x().mul(&x()).add(&y().mul(&y()));
        let omega = Expression::func("omega", vec![0], vec![r2]);
        let e = omega.mul(&Expression::one()).sub(&omega);
        assert!(e.is_zero());
    }

    #[test]
    fn binomial_expansion_cancels() {
        // (x+y)^2 - x^2 - 2xy = y^2, expected value from expanding by hand.
        let lhs = x().add(&y()).powi(2).unwrap();
        let rhs = x()
            .powi(2)
            .unwrap()
            .add(&x().mul(&y()).scale(&rat_int(2)));
        let diff = lhs.sub(&rhs);
        assert_eq!(diff, y().powi(2).unwrap());
    }

    #[test]
    fn normalize_is_idempotent() {
        let e = x().add(&y()).powi(3).unwrap().sub(&x().mul(&y()));
        assert_eq!(e.normalize(), e.normalize().normalize());
    }

    #[test]
    fn differentiate_product() {
        // d/dx (x^2 y) = 2xy
        let e = x().powi(2).unwrap().mul(&y());
        let d = e.differentiate("x");
        assert_eq!(d, x().mul(&y()).scale(&rat_int(2)));
    }

    #[test]
    fn differentiate_formal_chain_rule() {
        // d/dx omega(x^2+y^2) = 2x * omega'(x^2+y^2)
        let r2 = x().powi(2).unwrap().add(&y().powi(2).unwrap());
        let omega = Expression::func("omega", vec![0], vec![r2.clone()]);
        let d = omega.differentiate("x");
        let expected = Expression::func("omega", vec![1], vec![r2])
            .mul(&x())
            .scale(&rat_int(2));
        assert_eq!(d, expected);
    }

    #[test]
    fn differentiate_exp_bump() {
        // Oracle (hand chain rule): d/dx exp(-1/(2x^2)) = x^-3 exp(-1/(2x^2)).
        let arg = x().powi(-2).unwrap().scale(&rat(-1, 2));
        let e = Expression::exp_of(&arg);
        let d = e.differentiate("x");
        let expected = Expression::exp_of(&arg).mul(&x().powi(-3).unwrap());
        assert_eq!(d, expected);
    }

    #[test]
    fn fraction_normal_form_agrees() {
        // 1/x + 1/(1+x) and (1+2x)/(x(1+x)) normalize identically.
        let a = x()
            .inv()
            .unwrap()
            .add(&Expression::one().add(&x()).inv().unwrap());
        let num = Expression::one().add(&x().scale(&rat_int(2)));
        let b = num
            .mul(&x().inv().unwrap())
            .mul(&Expression::one().add(&x()).inv().unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn denominator_cancellation() {
        // (x^2 - y^2) / (x - y) = x + y via exact division.
        let num = x().powi(2).unwrap().sub(&y().powi(2).unwrap());
        let den = x().sub(&y());
        let q = num.div(&den).unwrap();
        assert_eq!(q, x().add(&y()));
        assert!(num.try_div(&den).is_some());
        // Division by a single term is Laurent-exact: (x^2+y)/x = x + y/x.
        let n2 = x().powi(2).unwrap().add(&y());
        let q2 = n2.try_div(&x()).unwrap();
        assert_eq!(q2.mul(&x()), n2);
        assert_eq!(q2, x().add(&y().mul(&x().powi(-1).unwrap())));
    }

    #[test]
    fn monomial_quotient_of_func_atoms() {
        // (x b' ) / b keeps b^-1 as an atom exponent and cancels on multiply.
        let b = Expression::func("beta", vec![0, 0], vec![x(), y()]);
        let bx = Expression::func("beta", vec![1, 0], vec![x(), y()]);
        let lam = x().mul(&bx).div(&b).unwrap();
        let back = lam.mul(&b);
        assert_eq!(back, x().mul(&bx));
    }

    #[test]
    fn evaluate_simple() {
        let e = x().powi(2).unwrap().add(&y());
        let ctx = EvalCtx::new().with_var("x", 2.0).with_var("y", 1.0);
        assert_eq!(e.evaluate(&ctx).unwrap(), 5.0);
    }

    #[test]
    fn evaluate_exp_atom() {
        // exp(-1/(2x^2)) at x=1 equals e^(-1/2) = 0.6065306597...
        let arg = x().powi(-2).unwrap().scale(&rat(-1, 2));
        let e = Expression::exp_of(&arg);
        let ctx = EvalCtx::new().with_var("x", 1.0);
        let v = e.evaluate(&ctx).unwrap();
        assert!((v - 0.606530659712633).abs() < 1e-12);
    }

    #[test]
    fn evaluate_formal_identity_binding() {
        // omega(r^2) with omega = identity at r^2 = 4.
        let r2 = x().powi(2).unwrap().add(&y().powi(2).unwrap());
        let e = Expression::func("omega", vec![0], vec![r2]);
        let mut ctx = EvalCtx::new().with_var("x", 2.0).with_var("y", 0.0);
        ctx.funcs.insert(
            "omega".into(),
            FuncImpl {
                arity: 1,
                f: Arc::new(|a| a[0]),
                partial: None,
            },
        );
        assert_eq!(e.evaluate(&ctx).unwrap(), 4.0);
    }

    #[test]
    fn evaluate_fd_derivative_of_bound_func() {
        // omega'(u) for omega(u) = u^2 at u = 3 is 6, via central differences.
        let e = Expression::func("omega", vec![1], vec![x()]);
        let mut ctx = EvalCtx::new().with_var("x", 3.0);
        ctx.funcs.insert(
            "omega".into(),
            FuncImpl {
                arity: 1,
                f: Arc::new(|a| a[0] * a[0]),
                partial: None,
            },
        );
        let v = e.evaluate(&ctx).unwrap();
        assert!((v - 6.0).abs() < 1e-6);
    }

    #[test]
    fn bind_func_symbolically() {
        // omega(r^2) with omega(u) = 1 - u becomes 1 - x^2 - y^2; the
        // derivative index binds to the differentiated body.
        let r2 = x().powi(2).unwrap().add(&y().powi(2).unwrap());
        let e = Expression::func("omega", vec![1], vec![r2.clone()]);
        let body = Expression::one().sub(&Expression::var("u1"));
        let bound = e.bind_func("omega", 1, &body).unwrap();
        assert_eq!(bound, Expression::from_int(-1));
    }

    #[test]
    fn unbound_symbol_is_an_error() {
        let e = Expression::func("omega", vec![0], vec![x()]);
        let ctx = EvalCtx::new().with_var("x", 1.0);
        assert!(matches!(e.evaluate(&ctx), Err(Error::UnboundSymbol(_))));
    }

    #[test]
    fn display_round_trips_sign_structure() {
        let e = x()
            .powi(2)
            .unwrap()
            .sub(&y().scale(&rat(3, 2)))
            .add(&Expression::from_int(1));
        assert_eq!(e.to_string(), "x^2 - 3/2*y + 1");
    }

    #[test]
    fn grlex_term_order() {
        // Leading term of x^2 + xy + y^2 + x is x^2 under grlex with x
        // taking priority by name.
        let e = x()
            .powi(2)
            .unwrap()
            .add(&x().mul(&y()))
            .add(&y().powi(2).unwrap())
            .add(&x());
        let lead = e.terms().next_back().unwrap().0.clone();
        assert_eq!(lead, Monomial::atom(Atom::Var("x".into())).powi(2));
    }
}
