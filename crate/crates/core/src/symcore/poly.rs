//! Sparse multivariate polynomials with exact rational coefficients over a
//! fixed variable list. No floating point anywhere in this type.

use std::collections::BTreeMap;
use std::fmt;

use num::{One, Signed, ToPrimitive, Zero};

use super::expr::{Atom, Expression};
use super::{rat_int, Rat};
use crate::error::{Error, Result};

/// Exponent multi-index ordered graded-lexicographically (total degree
/// first; ties broken by the earliest position with the larger exponent).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Expo(pub Vec<u32>);

impl Expo {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn mul(&self, other: &Expo) -> Expo {
        Expo(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    fn divisible_by(&self, other: &Expo) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }

    fn div(&self, other: &Expo) -> Expo {
        Expo(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }
}

impl Ord for Expo {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.cmp(b) {
                Ordering::Equal => {}
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Expo {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse polynomial over a declared variable list.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Polynomial {
    vars: Vec<String>,
    terms: BTreeMap<Expo, Rat>,
}

impl Polynomial {
    pub fn zero(vars: &[String]) -> Self {
        Polynomial {
            vars: vars.to_vec(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: &[String], c: Rat) -> Self {
        let mut p = Polynomial::zero(vars);
        if !c.is_zero() {
            p.terms.insert(Expo(vec![0; vars.len()]), c);
        }
        p
    }

    pub fn one(vars: &[String]) -> Self {
        Polynomial::constant(vars, Rat::one())
    }

    pub fn variable(vars: &[String], index: usize) -> Self {
        let mut e = vec![0; vars.len()];
        e[index] = 1;
        Polynomial::monomial(vars, Expo(e), Rat::one())
    }

    pub fn monomial(vars: &[String], e: Expo, c: Rat) -> Self {
        let mut p = Polynomial::zero(vars);
        if !c.is_zero() {
            p.terms.insert(e, c);
        }
        p
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|e| e.degree() == 0)
    }

    pub fn coefficient(&self, e: &Expo) -> Rat {
        self.terms.get(e).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Expo, &Rat)> {
        self.terms.iter()
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.degree()).max().unwrap_or(0)
    }

    pub fn leading(&self) -> Option<(&Expo, &Rat)> {
        self.terms.iter().next_back()
    }

    pub fn set_coefficient(&mut self, e: Expo, c: Rat) {
        if c.is_zero() {
            self.terms.remove(&e);
        } else {
            self.terms.insert(e, c);
        }
    }

    fn add_term(&mut self, e: Expo, c: Rat) {
        use std::collections::btree_map::Entry;
        if c.is_zero() {
            return;
        }
        match self.terms.entry(e) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let s = o.get() + &c;
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        debug_assert_eq!(self.vars, other.vars);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        Polynomial {
            vars: self.vars.clone(),
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.clone(), -c.clone()))
                .collect(),
        }
    }

    pub fn scale(&self, c: &Rat) -> Polynomial {
        if c.is_zero() {
            return Polynomial::zero(&self.vars);
        }
        Polynomial {
            vars: self.vars.clone(),
            terms: self
                .terms
                .iter()
                .map(|(e, k)| (e.clone(), k * c))
                .collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        debug_assert_eq!(self.vars, other.vars);
        let mut out = Polynomial::zero(&self.vars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                out.add_term(ea.mul(eb), ca * cb);
            }
        }
        out
    }

    pub fn powi(&self, n: u32) -> Polynomial {
        let mut acc = Polynomial::one(&self.vars);
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// Exact partial derivative with respect to variable `index`.
    pub fn derivative(&self, index: usize) -> Polynomial {
        let mut out = Polynomial::zero(&self.vars);
        for (e, c) in &self.terms {
            let k = e.0[index];
            if k == 0 {
                continue;
            }
            let mut v = e.0.clone();
            v[index] -= 1;
            out.add_term(Expo(v), c * rat_int(k as i64));
        }
        out
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.vars.len()).map(|i| self.derivative(i)).collect()
    }

    /// Exact division. `Ok(Some(q))` with `self == q * den`, `Ok(None)`
    /// when not divisible, `Err` on a zero divisor.
    pub fn exact_divide(&self, den: &Polynomial) -> Result<Option<Polynomial>> {
        debug_assert_eq!(self.vars, den.vars);
        if den.is_zero() {
            return Err(Error::ZeroDivisor);
        }
        let mut rem = self.clone();
        let mut quot = Polynomial::zero(&self.vars);
        let (lead_e, lead_c) = {
            let (e, c) = den.leading().unwrap();
            (e.clone(), c.clone())
        };
        while let Some((e, c)) = rem.leading().map(|(e, c)| (e.clone(), c.clone())) {
            if !e.divisible_by(&lead_e) {
                return Ok(None);
            }
            let qe = e.div(&lead_e);
            let qc = &c / &lead_c;
            quot.add_term(qe.clone(), qc.clone());
            for (de, dc) in &den.terms {
                rem.add_term(de.mul(&qe), -(dc * &qc));
            }
        }
        Ok(Some(quot))
    }

    /// Content/primitive decomposition: `self = c * prim` with `prim`
    /// having integer coefficients of gcd one and positive leading
    /// coefficient. Zero returns `(0, 0)`.
    pub fn primitive(&self) -> (Rat, Polynomial) {
        if self.is_zero() {
            return (Rat::zero(), self.clone());
        }
        let mut num_gcd = num::BigInt::zero();
        let mut den_lcm = num::BigInt::one();
        for c in self.terms.values() {
            num_gcd = num::Integer::gcd(&num_gcd, &c.numer().abs());
            den_lcm = num::Integer::lcm(&den_lcm, c.denom());
        }
        let mut content = Rat::new(num_gcd, den_lcm);
        if self.leading().unwrap().1.is_negative() {
            content = -content;
        }
        let prim = self.scale(&content.recip());
        (content, prim)
    }

    /// Evaluate at a float point.
    pub fn eval_f64(&self, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut t = c.to_f64().unwrap_or(f64::NAN);
            for (i, k) in e.0.iter().enumerate() {
                t *= point[i].powi(*k as i32);
            }
            acc += t;
        }
        acc
    }

    /// Evaluate at an exact rational point.
    pub fn eval_rat(&self, point: &[Rat]) -> Rat {
        let mut acc = Rat::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (i, k) in e.0.iter().enumerate() {
                for _ in 0..*k {
                    t *= &point[i];
                }
            }
            acc += t;
        }
        acc
    }

    pub fn to_expression(&self) -> Expression {
        let mut out = Expression::zero();
        for (e, c) in &self.terms {
            let mut t = Expression::from_rat(c.clone());
            for (i, k) in e.0.iter().enumerate() {
                if *k > 0 {
                    let v = Expression::var(&self.vars[i]);
                    t = t.mul(&v.powi(*k as i64).expect("nonnegative power"));
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// Convert a denominator-free expression whose atoms are exactly the
    /// given variables (with nonnegative exponents) into a polynomial.
    pub fn from_expression(e: &Expression, vars: &[String]) -> Result<Polynomial> {
        if e.has_denominator() {
            return Err(Error::NonPolynomial(e.to_string()));
        }
        let mut out = Polynomial::zero(vars);
        for (m, c) in e.terms() {
            let mut expo = vec![0u32; vars.len()];
            for (a, k) in m.factors() {
                let name = match a {
                    Atom::Var(n) => n,
                    _ => return Err(Error::NonPolynomial(e.to_string())),
                };
                if *k < 0 {
                    return Err(Error::NonPolynomial(e.to_string()));
                }
                let idx = vars
                    .iter()
                    .position(|v| v == name)
                    .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
                expo[idx] = *k as u32;
            }
            out.add_term(Expo(expo), c.clone());
        }
        Ok(out)
    }

    /// Substitute `subs[i]` for variable `i`, truncating at total degree
    /// `max_deg`. Used by the order-by-order series machinery.
    pub fn compose_truncate(&self, subs: &[Polynomial], max_deg: u32) -> Polynomial {
        let mut out = Polynomial::zero(&self.vars);
        for (e, c) in &self.terms {
            let mut t = Polynomial::constant(&self.vars, c.clone());
            for (i, k) in e.0.iter().enumerate() {
                for _ in 0..*k {
                    t = t.mul_truncate(&subs[i], max_deg);
                    if t.is_zero() {
                        break;
                    }
                }
            }
            out = out.add(&t);
        }
        out
    }

    pub fn mul_truncate(&self, other: &Polynomial, max_deg: u32) -> Polynomial {
        let mut out = Polynomial::zero(&self.vars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = ea.mul(eb);
                if e.degree() <= max_deg {
                    out.add_term(e, ca * cb);
                }
            }
        }
        out
    }

    /// Keep only terms of total degree in `[lo, hi]`.
    pub fn slice_degrees(&self, lo: u32, hi: u32) -> Polynomial {
        Polynomial {
            vars: self.vars.clone(),
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| {
                    let d = e.degree();
                    d >= lo && d <= hi
                })
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        }
    }

    /// Rename the variable list (for moving between compatible contexts).
    pub fn with_vars(&self, vars: &[String]) -> Polynomial {
        assert_eq!(vars.len(), self.vars.len());
        Polynomial {
            vars: vars.to_vec(),
            terms: self.terms.clone(),
        }
    }
}

/// All exponent multi-indices over `n` variables with total degree in
/// `[lo, hi]`, in ascending grlex order.
pub fn monomials_in_degrees(n: usize, lo: u32, hi: u32) -> Vec<Expo> {
    let mut out = Vec::new();
    for d in lo..=hi {
        let mut cur = vec![0u32; n];
        gen_compositions(n, d, 0, &mut cur, &mut out);
    }
    out.sort();
    out
}

fn gen_compositions(n: usize, left: u32, idx: usize, cur: &mut Vec<u32>, out: &mut Vec<Expo>) {
    if idx == n - 1 {
        cur[idx] = left;
        out.push(Expo(cur.clone()));
        cur[idx] = 0;
        return;
    }
    for k in 0..=left {
        cur[idx] = k;
        gen_compositions(n, left - k, idx + 1, cur, out);
    }
    cur[idx] = 0;
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_expression())
    }
}
