//! First integrals, Darboux polynomials (conditional constants of
//! motion), invariant algebraic manifolds, conditional / conditional
//! orbital / partial symmetry classification, and the cofactor-matrix
//! machinery.
//!
//! Ideal membership is decided by multivariate division against the given
//! generator list in graded-lex order, without Groebner completion.
//! Formal function atoms ride along as opaque coefficients, and their
//! arguments are reduced modulo the ideal first, so e.g. `alpha(x^2+y^2)`
//! reduces to `alpha(1)` on the unit circle. A numeric sampling fallback
//! covers non-confirming cases at a lower certificate grade.

use num::{One, Zero};

use crate::error::{Error, Result};
use crate::fields::{evolutionary_representative, DynSystem, VectorField};
use crate::linalg;
use crate::symcore::{
    monomials_in_degrees, rat_int, Atom, Expo, Expression, FuncAtom, Polynomial, Rat,
};

/// Iteration cap for tangency refinement.
const REFINEMENT_CAP: usize = 10;
/// Sample count and relative tolerance of the numeric invariance check.
const NUMERIC_SAMPLES: usize = 25;
const NUMERIC_TOL: f64 = 1e-9;

/// Finite generator list of a candidate invariant algebraic set, with an
/// optional solved chart (a subset of variables expressed in the rest).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlgebraicManifold {
    pub vars: Vec<String>,
    pub generators: Vec<Polynomial>,
    pub chart: Option<Vec<(String, Expression)>>,
}

impl AlgebraicManifold {
    /// Normalize: primitive generators with positive leading coefficient,
    /// zero generators dropped, duplicates (associates) merged.
    pub fn new(vars: &[String], generators: Vec<Polynomial>) -> Self {
        let mut gens: Vec<Polynomial> = Vec::new();
        for g in generators {
            if g.is_zero() {
                continue;
            }
            let (_, prim) = g.primitive();
            if !gens.contains(&prim) {
                gens.push(prim);
            }
        }
        AlgebraicManifold {
            vars: vars.to_vec(),
            generators: gens,
            chart: None,
        }
    }

    pub fn whole_space(vars: &[String]) -> Self {
        AlgebraicManifold {
            vars: vars.to_vec(),
            generators: Vec::new(),
            chart: None,
        }
    }

    pub fn with_chart(mut self, chart: Vec<(String, Expression)>) -> Result<Self> {
        for g in &self.generators {
            let mut e = g.to_expression();
            for (v, rep) in &chart {
                e = e.substitute_var(v, rep)?;
            }
            if !e.is_zero() {
                return Err(Error::ChartInconsistent(e.to_string()));
            }
        }
        self.chart = Some(chart);
        Ok(self)
    }

    pub fn is_whole_space(&self) -> bool {
        self.generators.is_empty()
    }

    /// The variety is empty whenever a generator is a nonzero constant.
    pub fn certainly_empty(&self) -> bool {
        self.generators
            .iter()
            .any(|g| g.is_constant() && !g.is_zero())
    }
}

// ----- ideal reduction -----

/// Result of reducing an expression modulo polynomial generators:
/// multipliers `h_i` and remainder `r` with `e = Σ h_i g_i + r`, and no
/// term of `r` divisible by any leading generator monomial.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub multipliers: Vec<Expression>,
    pub remainder: Expression,
}

impl Reduction {
    pub fn is_zero(&self) -> bool {
        self.remainder.is_zero()
    }
}

/// Reduce `e` modulo the generators (multivariate division, graded-lex).
/// Formal function and exp arguments are reduced first so that opaque
/// atoms with on-manifold-equal arguments merge.
pub fn reduce_expression(
    e: &Expression,
    gens: &[Polynomial],
    vars: &[String],
) -> Result<Reduction> {
    if e.has_denominator() {
        return Err(Error::NonPolynomial(e.to_string()));
    }
    let e = reduce_arguments(e, gens, vars)?;
    let gen_exprs: Vec<Expression> = gens.iter().map(|g| g.to_expression()).collect();
    let leads: Vec<(crate::symcore::Monomial, Rat)> = gen_exprs
        .iter()
        .map(|g| {
            let (m, c) = g.terms().next_back().expect("nonzero generator");
            (m.clone(), c.clone())
        })
        .collect();
    let mut work = e;
    let mut remainder = Expression::zero();
    let mut multipliers = vec![Expression::zero(); gens.len()];
    'outer: while !work.is_zero() {
        let (m, c) = {
            let (m, c) = work.terms().next_back().unwrap();
            (m.clone(), c.clone())
        };
        for (gi, (lm, lc)) in leads.iter().enumerate() {
            let divisible = lm.factors().iter().all(|(a, e)| m.exponent(a) >= *e);
            if divisible {
                // quotient term = (c/lc) * m / lm
                let mut q = Expression::from_rat(&c / lc);
                for (a, e) in m.factors() {
                    let rem_e = e - lm.exponent(a);
                    if rem_e != 0 {
                        q = q.mul(
                            &Expression::from_atom(a.clone())
                                .powi(rem_e)
                                .expect("nonzero atom"),
                        );
                    }
                }
                work = work.sub(&q.mul(&gen_exprs[gi]));
                multipliers[gi] = multipliers[gi].add(&q);
                continue 'outer;
            }
        }
        // Not divisible by any leading monomial: move to the remainder.
        let mut term = Expression::from_rat(c.clone());
        for (a, e) in m.factors() {
            term = term.mul(
                &Expression::from_atom(a.clone())
                    .powi(*e)
                    .expect("nonzero atom"),
            );
        }
        work = work.sub(&term);
        remainder = remainder.add(&term);
    }
    Ok(Reduction {
        multipliers,
        remainder,
    })
}

fn reduce_arguments(
    e: &Expression,
    gens: &[Polynomial],
    vars: &[String],
) -> Result<Expression> {
    if gens.is_empty() {
        return Ok(e.clone());
    }
    e.rebuild(&mut |a| {
        let a2 = match a {
            Atom::Exp(arg) => Atom::Exp(reduce_only(arg, gens, vars)),
            Atom::Func(f) => {
                let args = f
                    .args
                    .iter()
                    .map(|x| reduce_only(x, gens, vars))
                    .collect();
                Atom::Func(FuncAtom {
                    name: f.name.clone(),
                    deriv: f.deriv.clone(),
                    args,
                })
            }
            other => other.clone(),
        };
        Ok(Expression::from_atom(a2))
    })
}

/// Remainder-only reduction that leaves the input untouched when it is
/// not reducible (denominators, etc.).
fn reduce_only(e: &Expression, gens: &[Polynomial], vars: &[String]) -> Expression {
    match reduce_expression(e, gens, vars) {
        Ok(r) => r.remainder,
        Err(_) => e.clone(),
    }
}

// ----- first integrals -----

/// Basis of polynomial first integrals `f·∇P = 0` of total degree at most
/// `degree`, with constants quotiented out.
pub fn find_first_integrals(sys: &DynSystem, degree: u32) -> Result<Vec<Polynomial>> {
    let f = sys.polynomial_rhs()?;
    Ok(polynomial_first_integrals(&f, &sys.vars, degree))
}

/// Shared kernel: polynomial first integrals of an arbitrary polynomial
/// field (used for the dynamical field and for characteristic equations).
pub fn polynomial_first_integrals(
    f: &[Polynomial],
    vars: &[String],
    degree: u32,
) -> Vec<Polynomial> {
    let monos = monomials_in_degrees(vars.len(), 1, degree);
    if monos.is_empty() {
        return Vec::new();
    }
    let cols: Vec<Polynomial> = monos
        .iter()
        .map(|m| {
            let basis = Polynomial::monomial(vars, m.clone(), Rat::one());
            let mut adv = Polynomial::zero(vars);
            for (j, fj) in f.iter().enumerate() {
                adv = adv.add(&fj.mul(&basis.derivative(j)));
            }
            adv
        })
        .collect();
    let mut row_keys: std::collections::BTreeSet<Expo> = Default::default();
    for c in &cols {
        for (e, _) in c.terms() {
            row_keys.insert(e.clone());
        }
    }
    let matrix: Vec<Vec<Rat>> = row_keys
        .iter()
        .map(|e| cols.iter().map(|c| c.coefficient(e)).collect())
        .collect();
    linalg::nullspace(&matrix)
        .into_iter()
        .map(|v| {
            let mut p = Polynomial::zero(vars);
            for (m, c) in monos.iter().zip(v) {
                if !c.is_zero() {
                    p = p.add(&Polynomial::monomial(vars, m.clone(), c));
                }
            }
            p
        })
        .collect()
}

// ----- Darboux polynomials -----

/// Certificate that the level set `P = c` is invariant:
/// `f·∇P = q·(P - c)` exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DarbouxResult {
    pub p: Polynomial,
    pub cofactor: Polynomial,
    pub offset: Rat,
    /// A full constant of motion (zero cofactor) is a trivial conditional
    /// constant of motion; flagged, never suppressed.
    pub trivial: bool,
}

/// Verify a conditional constant of motion candidate by exact division.
pub fn verify_darboux(
    sys: &DynSystem,
    p: &Polynomial,
    offset: &Rat,
) -> Result<Option<DarbouxResult>> {
    if p.is_constant() {
        return Err(Error::Invalid("candidate must be nonconstant".into()));
    }
    let f = sys.polynomial_rhs()?;
    let mut adv = Polynomial::zero(&sys.vars);
    for (j, fj) in f.iter().enumerate() {
        adv = adv.add(&fj.mul(&p.derivative(j)));
    }
    let shifted = p.sub(&Polynomial::constant(&sys.vars, offset.clone()));
    Ok(adv.exact_divide(&shifted)?.map(|q| DarbouxResult {
        p: p.clone(),
        cofactor: q.clone(),
        offset: offset.clone(),
        trivial: q.is_zero(),
    }))
}

/// Search outcome: verified results plus a marker when the staged solve
/// had to abandon a branch (honest incompleteness instead of heuristics).
#[derive(Clone, Debug)]
pub struct DarbouxSearch {
    pub results: Vec<DarbouxResult>,
    pub needs_hint: bool,
}

/// Find Darboux polynomials `f·∇P = q·P` with `deg P ≤ deg_p`,
/// `deg q ≤ deg_q`. With a cofactor hint the problem is a single exact
/// linear solve. Without a hint, the bilinear system is attacked per
/// admissible leading monomial of `P`: the cofactor coefficients are
/// eliminated through the leading-ladder equations, and the remaining
/// polynomial conditions are solved by branching over affine factors.
pub fn find_darboux(
    sys: &DynSystem,
    deg_p: u32,
    deg_q: u32,
    hint: Option<&Polynomial>,
) -> Result<DarbouxSearch> {
    let f = sys.polynomial_rhs()?;
    let vars = sys.vars.clone();
    if let Some(q) = hint {
        let results = darboux_with_hint(&f, &vars, deg_p, q)?
            .into_iter()
            .filter_map(|p| verify_darboux(sys, &p, &Rat::zero()).ok().flatten())
            .collect();
        return Ok(DarbouxSearch {
            results,
            needs_hint: false,
        });
    }

    let p_monos = monomials_in_degrees(vars.len(), 0, deg_p);
    let leading_candidates: Vec<Expo> = p_monos
        .iter()
        .filter(|m| m.degree() >= 1)
        .cloned()
        .collect();
    let f_shared = f.clone();
    let p_shared = p_monos.clone();
    let branches = crate::par::map(leading_candidates, move |lead| {
        solve_fixed_leading(&f_shared, &vars, &p_shared, &lead, deg_q)
    });
    let mut results: Vec<DarbouxResult> = Vec::new();
    let mut needs_hint = false;
    for (cands, incomplete) in branches {
        needs_hint |= incomplete;
        for p in cands {
            if p.is_constant() || p.is_zero() {
                continue;
            }
            let (_, prim) = p.primitive();
            if let Ok(Some(res)) = verify_darboux(sys, &prim, &Rat::zero()) {
                if !results.iter().any(|r| r.p == res.p) {
                    results.push(res);
                }
            }
        }
    }
    Ok(DarbouxSearch {
        results,
        needs_hint,
    })
}

fn darboux_with_hint(
    f: &[Polynomial],
    vars: &[String],
    deg_p: u32,
    q: &Polynomial,
) -> Result<Vec<Polynomial>> {
    let lo = if q.is_zero() { 1 } else { 0 };
    let monos = monomials_in_degrees(vars.len(), lo, deg_p);
    let cols: Vec<Polynomial> = monos
        .iter()
        .map(|m| {
            let basis = Polynomial::monomial(vars, m.clone(), Rat::one());
            let mut adv = Polynomial::zero(vars);
            for (j, fj) in f.iter().enumerate() {
                adv = adv.add(&fj.mul(&basis.derivative(j)));
            }
            adv.sub(&q.mul(&basis))
        })
        .collect();
    let mut row_keys: std::collections::BTreeSet<Expo> = Default::default();
    for c in &cols {
        for (e, _) in c.terms() {
            row_keys.insert(e.clone());
        }
    }
    let matrix: Vec<Vec<Rat>> = row_keys
        .iter()
        .map(|e| cols.iter().map(|c| c.coefficient(e)).collect())
        .collect();
    Ok(linalg::nullspace(&matrix)
        .into_iter()
        .map(|v| {
            let mut p = Polynomial::zero(vars);
            for (m, c) in monos.iter().zip(v) {
                if !c.is_zero() {
                    p = p.add(&Polynomial::monomial(vars, m.clone(), c));
                }
            }
            p
        })
        .collect())
}

/// Staged solve for a fixed leading monomial `m*` of `P` (coefficient 1,
/// larger monomials absent). Returns candidate polynomials and whether a
/// branch had to be abandoned.
fn solve_fixed_leading(
    f: &[Polynomial],
    vars: &[String],
    p_monos: &[Expo],
    lead: &Expo,
    deg_q: u32,
) -> (Vec<Polynomial>, bool) {
    // Unknowns: coefficients of P below the leading monomial.
    let below: Vec<Expo> = p_monos.iter().filter(|m| *m < lead).cloned().collect();
    let pvars: Vec<String> = (0..below.len()).map(|i| format!("c{i}")).collect();
    let pv = |i: usize| -> Polynomial { Polynomial::variable(&pvars, i) };
    let pconst = |r: Rat| -> Polynomial { Polynomial::constant(&pvars, r) };

    // f·∇(x^m) for each candidate monomial of P.
    let adv_of = |m: &Expo| -> Polynomial {
        let basis = Polynomial::monomial(vars, m.clone(), Rat::one());
        let mut adv = Polynomial::zero(vars);
        for (j, fj) in f.iter().enumerate() {
            adv = adv.add(&fj.mul(&basis.derivative(j)));
        }
        adv
    };
    // Coefficient of x^mu in f·∇P, as a polynomial in the unknowns.
    let mut advp: std::collections::BTreeMap<Expo, Polynomial> = Default::default();
    {
        let mut add_adv = |m: &Expo, coeff_poly: Polynomial| {
            let adv = adv_of(m);
            for (mu, c) in adv.terms() {
                let entry = advp
                    .entry(mu.clone())
                    .or_insert_with(|| Polynomial::zero(&pvars));
                *entry = entry.add(&coeff_poly.scale(c));
            }
        };
        add_adv(lead, pconst(Rat::one()));
        for (i, m) in below.iter().enumerate() {
            add_adv(m, pv(i));
        }
    }

    let q_monos = monomials_in_degrees(vars.len(), 0, deg_q);
    let p_index = |m: &Expo| -> Option<usize> { below.iter().position(|b| b == m) };
    let expo_sub = |a: &Expo, b: &Expo| -> Option<Expo> {
        let mut out = Vec::with_capacity(a.0.len());
        for (x, y) in a.0.iter().zip(&b.0) {
            if x < y {
                return None;
            }
            out.push(x - y);
        }
        Some(Expo(out))
    };
    let expo_add = |a: &Expo, b: &Expo| -> Expo {
        Expo(a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect())
    };
    // Ladder: cofactor coefficients eliminated at mu = lead + k in
    // descending k; translation invariance of the monomial order keeps
    // already-solved coefficients on the right-hand side.
    let mut d: std::collections::BTreeMap<Expo, Polynomial> = Default::default();
    for k in q_monos.iter().rev() {
        let mu = expo_add(k, lead);
        let mut rhs = advp
            .get(&mu)
            .cloned()
            .unwrap_or_else(|| Polynomial::zero(&pvars));
        for (kp, dk) in d.iter() {
            if let Some(m) = expo_sub(&mu, kp) {
                if &m == lead {
                    continue;
                }
                if let Some(i) = p_index(&m) {
                    rhs = rhs.sub(&dk.mul(&pv(i)));
                }
            }
        }
        d.insert(k.clone(), rhs);
    }
    // Remaining equations at every other monomial mu.
    let mut mus: std::collections::BTreeSet<Expo> = advp.keys().cloned().collect();
    for k in &q_monos {
        for m in std::iter::once(lead).chain(below.iter()) {
            mus.insert(expo_add(k, m));
        }
    }
    let ladder: std::collections::BTreeSet<Expo> =
        q_monos.iter().map(|k| expo_add(k, lead)).collect();
    let mut equations: Vec<Polynomial> = Vec::new();
    for mu in mus {
        if ladder.contains(&mu) {
            continue;
        }
        let mut eq = advp
            .get(&mu)
            .cloned()
            .unwrap_or_else(|| Polynomial::zero(&pvars));
        for (kp, dk) in d.iter() {
            if let Some(m) = expo_sub(&mu, kp) {
                if &m == lead {
                    eq = eq.sub(dk);
                } else if let Some(i) = p_index(&m) {
                    eq = eq.sub(&dk.mul(&pv(i)));
                }
            }
        }
        if !eq.is_zero() {
            equations.push(eq);
        }
    }
    // Solve the remaining polynomial system by branching on affine factors.
    let mut solutions: Vec<Vec<Rat>> = Vec::new();
    let mut incomplete = false;
    branch_solve_rec(
        equations,
        Vec::new(),
        &pvars,
        pvars.len() + 2,
        &mut solutions,
        &mut incomplete,
    );
    let mut out = Vec::new();
    for sol in solutions {
        let mut p = Polynomial::monomial(vars, lead.clone(), Rat::one());
        for (i, m) in below.iter().enumerate() {
            if !sol[i].is_zero() {
                p = p.add(&Polynomial::monomial(vars, m.clone(), sol[i].clone()));
            }
        }
        if !out.contains(&p) {
            out.push(p);
        }
    }
    (out, incomplete)
}

/// Back-substitution record for the branching solver.
#[derive(Clone)]
enum Assign {
    Value(usize, Rat),
    /// var = polynomial expression in the remaining unknowns
    Affine(usize, Polynomial),
    /// var = num/den in the remaining unknowns (den nonzero on branch)
    Rational(usize, Polynomial, Polynomial),
}

fn branch_solve_rec(
    equations: Vec<Polynomial>,
    trail: Vec<Assign>,
    pvars: &[String],
    depth: usize,
    solutions: &mut Vec<Vec<Rat>>,
    incomplete: &mut bool,
) {
    let live: Vec<Polynomial> = equations
        .iter()
        .filter(|e| !e.is_zero())
        .cloned()
        .collect();
    if live.iter().any(|e| e.is_constant()) {
        return; // contradiction in this branch
    }
    if live.iter().all(|e| e.total_degree() <= 1) {
        // Affine system: exact solve with free unknowns set to zero.
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for e in &live {
            let mut row = vec![Rat::zero(); pvars.len()];
            let mut c = Rat::zero();
            for (expo, coef) in e.terms() {
                if expo.degree() == 0 {
                    c = coef.clone();
                } else {
                    let i = expo.0.iter().position(|k| *k == 1).unwrap();
                    row[i] = coef.clone();
                }
            }
            rows.push(row);
            rhs.push(-c);
        }
        let base = if rows.is_empty() {
            Some(vec![Rat::zero(); pvars.len()])
        } else {
            linalg::solve(&rows, &rhs)
        };
        if let Some(mut sol) = base {
            let mut valid = true;
            for a in trail.iter().rev() {
                match a {
                    Assign::Value(i, v) => sol[*i] = v.clone(),
                    Assign::Affine(i, expr) => sol[*i] = expr.eval_rat(&sol),
                    Assign::Rational(i, num, den) => {
                        let d = den.eval_rat(&sol);
                        if d.is_zero() {
                            valid = false;
                            break;
                        }
                        sol[*i] = num.eval_rat(&sol) / d;
                    }
                }
            }
            if valid && !solutions.contains(&sol) {
                solutions.push(sol);
            }
        }
        return;
    }
    if depth == 0 {
        *incomplete = true;
        return;
    }
    // Stage 0: forced elimination. A variable of degree one whose
    // coefficient is a nonzero constant pins that variable exactly, with
    // no branching.
    for e in &live {
        for v in (0..pvars.len()).rev() {
            if degree_in(e, v) != 1 {
                continue;
            }
            let (a, b) = split_linear(e, v);
            let Some(c) = constant_value(&a) else { continue };
            let rep = b.neg().scale(&c.recip());
            let mut sub: Vec<Polynomial> =
                live.iter().map(|p| substitute_affine(p, v, &rep)).collect();
            sub.retain(|p| !p.is_zero());
            let mut t = trail.clone();
            t.push(Assign::Affine(v, rep));
            branch_solve_rec(sub, t, pvars, depth - 1, solutions, incomplete);
            return;
        }
    }
    // Stage 1: an equation that factors as monomial * cofactor splits
    // into variable-vanishing branches plus the cofactor branch.
    let pick = live.iter().position(|e| {
        e.total_degree() > 1 && monomial_content(e).0.iter().any(|k| *k > 0)
    });
    if let Some(idx) = pick {
        let eq = live[idx].clone();
        let content = monomial_content(&eq);
        let cofactor = strip_monomial(&eq, &content);
        for (i, k) in content.0.iter().enumerate() {
            if *k > 0 {
                let mut sub = equations.clone();
                for e in sub.iter_mut() {
                    *e = substitute_value(e, i, &Rat::zero());
                }
                let mut t = trail.clone();
                t.push(Assign::Value(i, Rat::zero()));
                branch_solve_rec(sub, t, pvars, depth - 1, solutions, incomplete);
            }
        }
        // Cofactor branch: the content-free factor vanishes.
        let mut rest: Vec<Polynomial> =
            live.iter().cloned().collect();
        rest[idx] = cofactor;
        branch_solve_rec(rest, trail, pvars, depth - 1, solutions, incomplete);
        return;
    }
    // Stage 2: a univariate equation of degree >= 2 pins its variable to
    // one of finitely many exact rational roots (the search space is
    // rational coefficients, so rational-root extraction is complete).
    for e in &live {
        let used: Vec<usize> = (0..pvars.len())
            .filter(|v| degree_in(e, *v) > 0)
            .collect();
        if used.len() != 1 || degree_in(e, used[0]) < 2 {
            continue;
        }
        let v = used[0];
        let (roots, exhaustive) = rational_roots(e, v);
        if !exhaustive {
            *incomplete = true;
        }
        for r in roots {
            let mut sub: Vec<Polynomial> = live
                .iter()
                .map(|p| substitute_value(p, v, &r))
                .collect();
            sub.retain(|p| !p.is_zero());
            let mut t = trail.clone();
            t.push(Assign::Value(v, r));
            branch_solve_rec(sub, t, pvars, depth - 1, solutions, incomplete);
        }
        return;
    }
    // Stage 3: exact rational elimination. Find an equation of degree one
    // in some unknown v, write it as A·v + B, and branch on A = 0 versus
    // v = -B/A (denominators cleared by pseudo-substitution).
    for eq_idx in 0..live.len() {
        let e = &live[eq_idx];
        for v in (0..pvars.len()).rev() {
            if degree_in(e, v) != 1 {
                continue;
            }
            let (a, b) = split_linear(e, v);
            // Branch v = -B/A.
            {
                let mut sub: Vec<Polynomial> = Vec::with_capacity(live.len() - 1);
                for (j, other) in live.iter().enumerate() {
                    if j == eq_idx {
                        continue;
                    }
                    sub.push(pseudo_substitute(other, v, &b.neg(), &a));
                }
                let mut t = trail.clone();
                t.push(Assign::Rational(v, b.neg(), a.clone()));
                branch_solve_rec(sub, t, pvars, depth - 1, solutions, incomplete);
            }
            // Branch A = 0 (then B must vanish too).
            {
                let mut sub: Vec<Polynomial> = live.clone();
                sub[eq_idx] = b.clone();
                sub.push(a.clone());
                branch_solve_rec(sub, trail, pvars, depth - 1, solutions, incomplete);
            }
            return;
        }
    }
    *incomplete = true;
}

fn degree_in(p: &Polynomial, var: usize) -> u32 {
    p.terms().map(|(e, _)| e.0[var]).max().unwrap_or(0)
}

fn constant_value(p: &Polynomial) -> Option<Rat> {
    if p.is_zero() || !p.is_constant() {
        return None;
    }
    Some(p.coefficient(&Expo(vec![0; p.vars().len()])))
}

/// Exact rational roots of a univariate polynomial in `var`, via the
/// rational root theorem. The flag reports whether the divisor
/// enumeration was exhaustive (it gives up above 10^12).
fn rational_roots(p: &Polynomial, var: usize) -> (Vec<Rat>, bool) {
    use num::{BigInt, Integer, ToPrimitive};
    let deg = degree_in(p, var) as usize;
    let mut coeffs: Vec<Rat> = vec![Rat::zero(); deg + 1];
    for (e, c) in p.terms() {
        coeffs[e.0[var] as usize] = c.clone();
    }
    // Clear denominators to integers.
    let mut lcm = BigInt::one();
    for c in &coeffs {
        lcm = lcm.lcm(c.denom());
    }
    let ints: Vec<BigInt> = coeffs
        .iter()
        .map(|c| c.numer() * (&lcm / c.denom()))
        .collect();
    // Strip trailing zero coefficients (roots at zero handled separately).
    let mut lo = 0usize;
    while lo <= deg && ints[lo].is_zero() {
        lo += 1;
    }
    let mut roots: Vec<Rat> = Vec::new();
    if lo > 0 {
        roots.push(Rat::zero());
    }
    if lo > deg {
        return (roots, true);
    }
    let a0 = ints[lo].clone();
    let an = ints[deg].clone();
    let big = BigInt::from(1_000_000_000_000u64);
    if a0.magnitude() > big.magnitude() || an.magnitude() > big.magnitude() {
        return (roots, false);
    }
    let eval = |r: &Rat| -> bool {
        let mut acc = Rat::zero();
        for c in ints.iter().rev() {
            acc = acc * r + Rat::from_integer(c.clone());
        }
        acc.is_zero()
    };
    let d0 = divisors(a0.magnitude().to_u64().unwrap_or(0));
    let dn = divisors(an.magnitude().to_u64().unwrap_or(0));
    for p_div in &d0 {
        for q_div in &dn {
            for sign in [1i64, -1] {
                let cand = Rat::new(
                    BigInt::from(sign) * BigInt::from(*p_div),
                    BigInt::from(*q_div),
                );
                if !roots.contains(&cand) && eval(&cand) {
                    roots.push(cand);
                }
            }
        }
    }
    (roots, true)
}

fn divisors(n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut d = 1u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 {
            out.push(d);
            if d != n / d {
                out.push(n / d);
            }
        }
        d += 1;
    }
    out.sort_unstable();
    out
}

/// Split `p = A·v + B` with `A`, `B` free of `v` (requires degree one).
fn split_linear(p: &Polynomial, var: usize) -> (Polynomial, Polynomial) {
    let vars = p.vars().to_vec();
    let mut a = Polynomial::zero(&vars);
    let mut b = Polynomial::zero(&vars);
    for (e, c) in p.terms() {
        if e.0[var] == 1 {
            let mut reduced = e.0.clone();
            reduced[var] = 0;
            a.set_coefficient(Expo(reduced), c.clone());
        } else {
            b.set_coefficient(e.clone(), c.clone());
        }
    }
    (a, b)
}

/// Substitute `v = num/den` into `p` and clear denominators:
/// `Σ_k coeff_k v^k  ->  Σ_k coeff_k num^k den^(d-k)` with `d = deg_v p`.
fn pseudo_substitute(
    p: &Polynomial,
    var: usize,
    num: &Polynomial,
    den: &Polynomial,
) -> Polynomial {
    let vars = p.vars().to_vec();
    let d = degree_in(p, var);
    let mut out = Polynomial::zero(&vars);
    for (e, c) in p.terms() {
        let k = e.0[var];
        let mut reduced = e.0.clone();
        reduced[var] = 0;
        let mut term = Polynomial::monomial(&vars, Expo(reduced), c.clone());
        term = term.mul(&num.powi(k));
        term = term.mul(&den.powi(d - k));
        out = out.add(&term);
    }
    out
}

fn monomial_content(p: &Polynomial) -> Expo {
    let mut mins: Option<Vec<u32>> = None;
    for (e, _) in p.terms() {
        match &mut mins {
            None => mins = Some(e.0.clone()),
            Some(m) => {
                for (a, b) in m.iter_mut().zip(&e.0) {
                    *a = (*a).min(*b);
                }
            }
        }
    }
    Expo(mins.unwrap_or_default())
}

fn strip_monomial(p: &Polynomial, content: &Expo) -> Polynomial {
    let mut out = Polynomial::zero(p.vars());
    for (e, c) in p.terms() {
        let reduced = Expo(e.0.iter().zip(&content.0).map(|(a, b)| a - b).collect());
        out.set_coefficient(reduced, c.clone());
    }
    out
}

fn substitute_value(p: &Polynomial, var: usize, value: &Rat) -> Polynomial {
    let vars = p.vars().to_vec();
    let subs: Vec<Polynomial> = (0..vars.len())
        .map(|i| {
            if i == var {
                Polynomial::constant(&vars, value.clone())
            } else {
                Polynomial::variable(&vars, i)
            }
        })
        .collect();
    p.compose_truncate(&subs, p.total_degree().max(1))
}

fn substitute_affine(p: &Polynomial, var: usize, rep: &Polynomial) -> Polynomial {
    let vars = p.vars().to_vec();
    let subs: Vec<Polynomial> = (0..vars.len())
        .map(|i| {
            if i == var {
                rep.clone()
            } else {
                Polynomial::variable(&vars, i)
            }
        })
        .collect();
    p.compose_truncate(&subs, p.total_degree().max(1).saturating_mul(2))
}

// ----- invariant manifolds -----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertificateGrade {
    /// Every advected generator reduced to zero by division.
    Symbolic,
    /// Confirmed on sampled variety points at relative tolerance 1e-9.
    Numeric,
    /// No real sample points found; invariance holds vacuously.
    Vacuous,
}

#[derive(Clone, Debug)]
pub struct InvarianceCertificate {
    pub grade: CertificateGrade,
    /// Multipliers `h_{ij}` with `f·∇g_i = Σ_j h_{ij} g_j` (symbolic).
    pub multipliers: Option<Vec<Vec<Expression>>>,
    pub samples: usize,
    pub max_residual: f64,
}

/// Decide invariance of the manifold under the system flow. `Ok(None)`
/// means a definite "not invariant".
pub fn is_invariant_manifold(
    sys: &DynSystem,
    m: &AlgebraicManifold,
) -> Result<Option<InvarianceCertificate>> {
    if m.is_whole_space() {
        return Ok(Some(InvarianceCertificate {
            grade: CertificateGrade::Symbolic,
            multipliers: Some(Vec::new()),
            samples: 0,
            max_residual: 0.0,
        }));
    }
    let sysv = sys.with_param_values()?;
    let mut all_multipliers = Vec::with_capacity(m.generators.len());
    let mut symbolic = true;
    for g in &m.generators {
        let adv = sysv.advect(&g.to_expression());
        match reduce_expression(&adv, &m.generators, &sys.vars) {
            Ok(red) if red.is_zero() => all_multipliers.push(red.multipliers),
            _ => {
                symbolic = false;
                break;
            }
        }
    }
    if symbolic {
        return Ok(Some(InvarianceCertificate {
            grade: CertificateGrade::Symbolic,
            multipliers: Some(all_multipliers),
            samples: 0,
            max_residual: 0.0,
        }));
    }
    // Numeric fallback on sampled variety points.
    let f = sys.polynomial_rhs()?;
    let points = crate::numeric::sample_variety(&m.generators, NUMERIC_SAMPLES, 0x5eed);
    if points.is_empty() {
        return Ok(Some(InvarianceCertificate {
            grade: CertificateGrade::Vacuous,
            multipliers: None,
            samples: 0,
            max_residual: 0.0,
        }));
    }
    let mut max_rel = 0.0f64;
    for pt in &points {
        let fnorm: f64 = f
            .iter()
            .map(|p| p.eval_f64(pt).powi(2))
            .sum::<f64>()
            .sqrt();
        for g in &m.generators {
            let mut adv = 0.0;
            for (j, fj) in f.iter().enumerate() {
                adv += fj.eval_f64(pt) * g.derivative(j).eval_f64(pt);
            }
            let rel = adv.abs() / (1.0 + fnorm);
            max_rel = max_rel.max(rel);
        }
    }
    if max_rel <= NUMERIC_TOL {
        Ok(Some(InvarianceCertificate {
            grade: CertificateGrade::Numeric,
            multipliers: None,
            samples: points.len(),
            max_residual: max_rel,
        }))
    } else {
        Ok(None)
    }
}

/// Iteratively append advected generators until the dynamical field is
/// tangent to the variety (Ξ construction). Returns the refined manifold
/// and whether the iteration stabilized within the cap.
pub fn tangency_refinement(
    sys: &DynSystem,
    v: &VectorField,
) -> Result<(AlgebraicManifold, bool)> {
    let v = v.aligned_to(&sys.vars)?;
    if v.tau.is_some() {
        return Err(Error::Invalid(
            "tangency refinement expects a time-coefficient-free field".into(),
        ));
    }
    let sysv = sys.with_param_values()?;
    let mut gens: Vec<Polynomial> = Vec::new();
    for c in &v.components {
        if c.is_zero() {
            continue;
        }
        let mut e = c.clone();
        for p in &sys.params {
            if let Some(val) = &p.value {
                e = e.substitute_param(&p.name, &Expression::from_rat(val.clone()))?;
            }
        }
        let p = Polynomial::from_expression(&e, &sys.vars)?;
        let (_, prim) = p.primitive();
        if !gens.contains(&prim) {
            gens.push(prim);
        }
    }
    refine_generators(&sysv, gens)
}

pub(crate) fn refine_generators(
    sysv: &DynSystem,
    mut gens: Vec<Polynomial>,
) -> Result<(AlgebraicManifold, bool)> {
    if gens.is_empty() {
        return Ok((AlgebraicManifold::whole_space(&sysv.vars), true));
    }
    for _round in 0..REFINEMENT_CAP {
        let mut added = false;
        let current = gens.clone();
        for g in &current {
            let adv = sysv.advect(&g.to_expression());
            let red = reduce_expression(&adv, &gens, &sysv.vars)?;
            if red.is_zero() {
                continue;
            }
            let p = Polynomial::from_expression(&red.remainder, &sysv.vars)
                .map_err(|_| Error::NonPolynomial(red.remainder.to_string()))?;
            let (_, prim) = p.primitive();
            if !gens.contains(&prim) {
                gens.push(prim);
                added = true;
            }
        }
        if !added {
            return Ok((AlgebraicManifold::new(&sysv.vars, gens), true));
        }
    }
    Ok((AlgebraicManifold::new(&sysv.vars, gens), false))
}

// ----- conditional / partial classification -----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionalKind {
    ConditionalSymmetry,
    ConditionalOrbital,
    Partial,
    None,
}

#[derive(Clone, Debug)]
pub struct ConditionalReport {
    pub verdict: ConditionalKind,
    pub witness: Option<AlgebraicManifold>,
    pub certificate: Option<InvarianceCertificate>,
    /// The witness consists entirely of equilibria (fixed-point
    /// solutions); still a valid conditional witness unless excluded.
    pub fixed_points_only: bool,
    pub notes: Vec<String>,
}

impl ConditionalReport {
    fn negative(note: impl Into<String>) -> Self {
        ConditionalReport {
            verdict: ConditionalKind::None,
            witness: None,
            certificate: None,
            fixed_points_only: false,
            notes: vec![note.into()],
        }
    }
}

/// Conditional symmetry: the evolutionary representative must vanish
/// altogether on an invariant, nonempty witness manifold that survives
/// the system's excluded locus.
pub fn is_conditional_symmetry(sys: &DynSystem, v: &VectorField) -> Result<ConditionalReport> {
    let q = evolutionary_representative(v, sys)?;
    if q.components.iter().all(|c| c.is_zero()) {
        return Ok(ConditionalReport {
            verdict: ConditionalKind::ConditionalSymmetry,
            witness: Some(AlgebraicManifold::whole_space(&sys.vars)),
            certificate: None,
            fixed_points_only: false,
            notes: vec![
                "field is collinear with the dynamics; every solution is invariant".into(),
            ],
        });
    }
    let (xi, stable) = tangency_refinement(sys, &q)?;
    classify_witness(sys, xi, stable, ConditionalKind::ConditionalSymmetry)
}

/// Conditional orbital symmetry: the collinearity locus (vanishing 2x2
/// minors of `f` against the spatial part of `v`) is refined to an
/// invariant manifold of trajectories.
pub fn is_conditional_orbital_symmetry(
    sys: &DynSystem,
    v: &VectorField,
) -> Result<ConditionalReport> {
    // The ∂_t part only reparametrizes time; orbital questions are
    // decided by the spatial components.
    let v = v.aligned_to(&sys.vars)?;
    let sysv = sys.with_param_values()?;
    let mut spatial = v.components.clone();
    for c in spatial.iter_mut() {
        for p in &sys.params {
            if let Some(val) = &p.value {
                *c = c.substitute_param(&p.name, &Expression::from_rat(val.clone()))?;
            }
        }
    }
    let n = sys.vars.len();
    let mut minors: Vec<Expression> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            minors.push(
                sysv.rhs[i]
                    .mul(&spatial[j])
                    .sub(&sysv.rhs[j].mul(&spatial[i])),
            );
        }
    }
    if minors.iter().all(|m| m.is_zero()) {
        return Ok(ConditionalReport {
            verdict: ConditionalKind::ConditionalOrbital,
            witness: Some(AlgebraicManifold::whole_space(&sys.vars)),
            certificate: None,
            fixed_points_only: false,
            notes: vec![
                "field is everywhere collinear with the dynamics (proper orbital symmetry)"
                    .into(),
            ],
        });
    }
    let mut gens = Vec::new();
    for m in minors {
        if m.is_zero() {
            continue;
        }
        let p = Polynomial::from_expression(&m, &sys.vars)?;
        let (_, prim) = p.primitive();
        if !gens.contains(&prim) {
            gens.push(prim);
        }
    }
    let (chi, stable) = refine_generators(&sysv, gens)?;
    classify_witness(sys, chi, stable, ConditionalKind::ConditionalOrbital)
}

fn classify_witness(
    sys: &DynSystem,
    witness: AlgebraicManifold,
    stable: bool,
    positive: ConditionalKind,
) -> Result<ConditionalReport> {
    if !stable {
        return Ok(ConditionalReport::negative(format!(
            "tangency refinement did not stabilize within {REFINEMENT_CAP} rounds"
        )));
    }
    if witness.certainly_empty() {
        return Ok(ConditionalReport::negative(
            "refined witness variety is empty",
        ));
    }
    let cert = match is_invariant_manifold(sys, &witness)? {
        Some(c) => c,
        None => {
            return Ok(ConditionalReport::negative(
                "refined witness is not invariant",
            ))
        }
    };
    if matches!(cert.grade, CertificateGrade::Vacuous) {
        return Ok(ConditionalReport::negative(
            "no real points found on the refined witness",
        ));
    }
    if !witness.is_whole_space() && !has_real_point(&witness) {
        return Ok(ConditionalReport::negative(
            "no real points found on the refined witness",
        ));
    }
    let mut notes = Vec::new();
    // Excluded locus: a witness wholly inside the removed set is no
    // witness at all.
    if let Some(excl) = sys.excluded_polynomials()? {
        if !witness.is_whole_space() && contained_in(&witness, &excl, &sys.vars)? {
            return Ok(ConditionalReport {
                verdict: ConditionalKind::None,
                witness: Some(witness),
                certificate: Some(cert),
                fixed_points_only: false,
                notes: vec![
                    "witness lies inside the excluded locus of the system domain".into(),
                ],
            });
        }
    }
    let sysv = sys.with_param_values()?;
    let fixed_points_only = if witness.is_whole_space() {
        false
    } else {
        sysv.rhs.iter().all(|f| {
            reduce_expression(f, &witness.generators, &sys.vars)
                .map(|r| r.is_zero())
                .unwrap_or(false)
        })
    };
    if fixed_points_only {
        notes.push("witness consists of fixed points only".into());
    }
    Ok(ConditionalReport {
        verdict: positive,
        witness: Some(witness),
        certificate: Some(cert),
        fixed_points_only,
        notes,
    })
}

/// `V(gens) ⊆ V(targets)` holds when every target vanishes on the
/// variety; membership of each target in the generator ideal (by
/// division) is a sufficient certificate.
fn contained_in(
    witness: &AlgebraicManifold,
    targets: &[Polynomial],
    vars: &[String],
) -> Result<bool> {
    for t in targets {
        let red = reduce_expression(&t.to_expression(), &witness.generators, vars)?;
        if !red.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn has_real_point(m: &AlgebraicManifold) -> bool {
    // Exact probes on a small rational grid first.
    let n = m.vars.len();
    let probe_vals = [0i64, 1, -1];
    let mut idx = vec![0usize; n];
    loop {
        let pt: Vec<Rat> = idx.iter().map(|&i| rat_int(probe_vals[i])).collect();
        if m.generators.iter().all(|g| g.eval_rat(&pt).is_zero()) {
            return true;
        }
        let mut carry = true;
        for d in idx.iter_mut() {
            if carry {
                *d += 1;
                if *d == probe_vals.len() {
                    *d = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    !crate::numeric::sample_variety(&m.generators, 1, 0x9e3d).is_empty()
}

/// Partial symmetry on a fixed invariant manifold: the restricted bracket
/// vanishes and the field is tangent.
pub fn is_partial_symmetry(
    sys: &DynSystem,
    v: &VectorField,
    m: &AlgebraicManifold,
) -> Result<ConditionalReport> {
    let cert = is_invariant_manifold(sys, m)?.ok_or(Error::NotInvariant)?;
    let q = evolutionary_representative(v, sys)?;
    let sysv = sys.with_param_values()?;
    // Tangency of v to m.
    for g in &m.generators {
        let mut adv = Expression::zero();
        for (var, s) in sys.vars.iter().zip(&q.components) {
            adv = adv.add(&s.mul(&g.to_expression().differentiate(var)));
        }
        let red = reduce_expression(&adv, &m.generators, &sys.vars)?;
        if !red.is_zero() {
            return Ok(ConditionalReport {
                verdict: ConditionalKind::None,
                witness: Some(m.clone()),
                certificate: Some(cert),
                fixed_points_only: false,
                notes: vec![format!(
                    "field is not tangent to the manifold: residual {}",
                    red.remainder
                )],
            });
        }
    }
    // Restricted bracket {f, s} must reduce to zero.
    let bracket = crate::fields::lie_poisson(&sysv.rhs, &q.components, &sys.vars)?;
    for b in &bracket {
        let red = reduce_expression(b, &m.generators, &sys.vars)?;
        if !red.is_zero() {
            return Ok(ConditionalReport {
                verdict: ConditionalKind::None,
                witness: Some(m.clone()),
                certificate: Some(cert),
                fixed_points_only: false,
                notes: vec![format!(
                    "restricted bracket does not vanish: residual {}",
                    red.remainder
                )],
            });
        }
    }
    Ok(ConditionalReport {
        verdict: ConditionalKind::Partial,
        witness: Some(m.clone()),
        certificate: Some(cert),
        fixed_points_only: false,
        notes: Vec::new(),
    })
}

// ----- cofactor matrix machinery -----

/// `A_{ij} = ∂g_i/∂x^j`, reduced through the chart when one is present
/// and through ideal division otherwise.
pub fn cofactor_matrix(m: &AlgebraicManifold) -> Result<Vec<Vec<Expression>>> {
    let mut out = Vec::with_capacity(m.generators.len());
    for g in &m.generators {
        let mut row = Vec::with_capacity(m.vars.len());
        for j in 0..m.vars.len() {
            let entry = g.derivative(j).to_expression();
            let reduced = match &m.chart {
                Some(chart) => {
                    let mut e = entry;
                    for (v, rep) in chart {
                        e = e.substitute_var(v, rep)?;
                    }
                    e
                }
                None => reduce_expression(&entry, &m.generators, &m.vars)?.remainder,
            };
            row.push(reduced);
        }
        out.push(row);
    }
    Ok(out)
}

/// Polynomial kernel of the cofactor matrix up to the degree bound:
/// fields `v` with `A v ≡ 0` modulo the ideal, i.e. fields tangent to
/// the manifold.
pub fn solve_tangent_fields(m: &AlgebraicManifold, degree: u32) -> Result<Vec<VectorField>> {
    let vars = &m.vars;
    let n = vars.len();
    let monos = monomials_in_degrees(n, 0, degree);
    // Unknown layout: (component j, monomial).
    let mut cols: Vec<Vec<Polynomial>> = Vec::new();
    for j in 0..n {
        for mono in &monos {
            let basis = Polynomial::monomial(vars, mono.clone(), Rat::one());
            let mut rows_for_unknown = Vec::with_capacity(m.generators.len());
            for g in &m.generators {
                let prod = g.derivative(j).mul(&basis);
                let red = reduce_expression(&prod.to_expression(), &m.generators, vars)?;
                rows_for_unknown.push(Polynomial::from_expression(&red.remainder, vars)?);
            }
            cols.push(rows_for_unknown);
        }
    }
    let mut row_keys: std::collections::BTreeSet<(usize, Expo)> = Default::default();
    for col in &cols {
        for (i, p) in col.iter().enumerate() {
            for (e, _) in p.terms() {
                row_keys.insert((i, e.clone()));
            }
        }
    }
    let matrix: Vec<Vec<Rat>> = row_keys
        .iter()
        .map(|(i, e)| cols.iter().map(|col| col[*i].coefficient(e)).collect())
        .collect();
    let basis = linalg::nullspace(&matrix);
    let mut out = Vec::with_capacity(basis.len());
    for vcoef in basis {
        let mut comps = vec![Polynomial::zero(vars); n];
        for (k, c) in vcoef.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let j = k / monos.len();
            let mono = &monos[k % monos.len()];
            comps[j] = comps[j].add(&Polynomial::monomial(vars, mono.clone(), c.clone()));
        }
        out.push(VectorField {
            vars: vars.clone(),
            components: comps.iter().map(|p| p.to_expression()).collect(),
            tau: None,
        });
    }
    Ok(out)
}

/// Polynomial first integrals of a tangent field (the characteristic
/// system of the cofactor construction).
pub fn characteristic_integrals(v: &VectorField, degree: u32) -> Result<Vec<Polynomial>> {
    if v.tau.is_some() {
        return Err(Error::Invalid(
            "characteristic integrals expect a spatial field".into(),
        ));
    }
    let comps: Vec<Polynomial> = v
        .components
        .iter()
        .map(|c| Polynomial::from_expression(c, &v.vars))
        .collect::<Result<_>>()?;
    Ok(polynomial_first_integrals(&comps, &v.vars, degree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FuncDecl;
    use crate::symcore::rat;

    fn xy() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn x() -> Expression {
        Expression::var("x")
    }

    fn y() -> Expression {
        Expression::var("y")
    }

    fn r2() -> Expression {
        x().powi(2).unwrap().add(&y().powi(2).unwrap())
    }

    /// Example-7a instance: alpha = 1 - r^2, beta = 1.
    fn limit_cycle() -> DynSystem {
        let alpha = Expression::one().sub(&r2());
        DynSystem {
            vars: xy(),
            rhs: vec![alpha.mul(&x()).sub(&y()), x().add(&alpha.mul(&y()))],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        }
    }

    fn poly_of(e: &Expression) -> Polynomial {
        Polynomial::from_expression(e, &xy()).unwrap()
    }

    #[test]
    fn circle_integral_of_rotation_system() {
        // f = (-y, x): degree-2 first integrals are spanned by x^2 + y^2.
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![y().neg(), x()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let basis = find_first_integrals(&sys, 2).unwrap();
        assert_eq!(basis.len(), 1);
        assert_eq!(basis[0], poly_of(&r2()));
    }

    #[test]
    fn polynomial_beta_rotation_keeps_radius() {
        let beta = Expression::one().add(&r2());
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![beta.mul(&y()).neg(), beta.mul(&x())],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let basis = find_first_integrals(&sys, 2).unwrap();
        assert_eq!(basis.len(), 1);
        assert_eq!(basis[0], poly_of(&r2()));
    }

    #[test]
    fn euler_field_has_no_polynomial_integrals() {
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x(), y()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        for d in 1..=3 {
            assert!(find_first_integrals(&sys, d).unwrap().is_empty());
        }
    }

    #[test]
    fn verify_darboux_limit_cycle_circle() {
        // Oracle: expand f·∇(x²+y²) = 2r²(1-r²) = -2r²·(P-1) by hand.
        let sys = limit_cycle();
        let p = poly_of(&r2());
        let res = verify_darboux(&sys, &p, &rat_int(1)).unwrap().unwrap();
        assert_eq!(res.cofactor, poly_of(&r2().scale(&rat_int(-2))));
        assert!(!res.trivial);
    }

    #[test]
    fn verify_darboux_first_integral_is_trivial() {
        let beta = Expression::one().add(&r2());
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![beta.mul(&y()).neg(), beta.mul(&x())],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let p = poly_of(&r2());
        let res = verify_darboux(&sys, &p, &rat(1, 2)).unwrap().unwrap();
        assert!(res.trivial);
        assert!(res.cofactor.is_zero());
    }

    #[test]
    fn verify_darboux_single_term() {
        // ẋ = x(1+y), ẏ = 0, P = x, c = 0 → q = 1 + y.
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x().mul(&Expression::one().add(&y())), Expression::zero()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let p = poly_of(&x());
        let res = verify_darboux(&sys, &p, &Rat::zero()).unwrap().unwrap();
        assert_eq!(res.cofactor, poly_of(&Expression::one().add(&y())));
    }

    #[test]
    fn darboux_closure_under_products() {
        // If (P1, q1) and (P2, q2) verify at c = 0, then P1 P2 verifies
        // with cofactor q1 + q2.
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x(), y().neg()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let p1 = poly_of(&x());
        let p2 = poly_of(&y());
        let r1 = verify_darboux(&sys, &p1, &Rat::zero()).unwrap().unwrap();
        let r2_ = verify_darboux(&sys, &p2, &Rat::zero()).unwrap().unwrap();
        let prod = p1.mul(&p2);
        let rp = verify_darboux(&sys, &prod, &Rat::zero()).unwrap().unwrap();
        assert_eq!(rp.cofactor, r1.cofactor.add(&r2_.cofactor));
    }

    #[test]
    fn find_darboux_saddle_hyperplanes() {
        // ẋ = x, ẏ = -y: P = x (q = 1) and P = y (q = -1).
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x(), y().neg()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let search = find_darboux(&sys, 1, 0, None).unwrap();
        let ps: Vec<&Polynomial> = search.results.iter().map(|r| &r.p).collect();
        assert!(ps.contains(&&poly_of(&x())));
        assert!(ps.contains(&&poly_of(&y())));
        for r in &search.results {
            if r.p == poly_of(&x()) {
                assert_eq!(r.cofactor, Polynomial::one(&xy()));
            }
            if r.p == poly_of(&y()) {
                assert_eq!(r.cofactor, Polynomial::one(&xy()).neg());
            }
        }
    }

    #[test]
    fn find_darboux_limit_cycle_circle() {
        let sys = limit_cycle();
        let search = find_darboux(&sys, 2, 2, None).unwrap();
        let target = poly_of(&r2().sub(&Expression::one()));
        let hit = search
            .results
            .iter()
            .find(|r| r.p == target)
            .expect("x^2 + y^2 - 1 found");
        assert_eq!(hit.cofactor, poly_of(&r2().scale(&rat_int(-2))));
    }

    #[test]
    fn find_darboux_zero_hint_reduces_to_first_integrals() {
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![y().neg(), x()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let hint = Polynomial::zero(&xy());
        let search = find_darboux(&sys, 2, 0, Some(&hint)).unwrap();
        assert_eq!(search.results.len(), 1);
        assert_eq!(search.results[0].p, poly_of(&r2()));
        assert!(search.results[0].trivial);
    }

    #[test]
    fn search_results_all_verify() {
        let sys = limit_cycle();
        let search = find_darboux(&sys, 2, 2, None).unwrap();
        assert!(!search.results.is_empty());
        for r in &search.results {
            let again = verify_darboux(&sys, &r.p, &r.offset).unwrap().unwrap();
            assert_eq!(again.cofactor, r.cofactor);
        }
    }

    #[test]
    fn invariant_manifold_circle_symbolic() {
        let sys = limit_cycle();
        let m = AlgebraicManifold::new(&xy(), vec![poly_of(&r2().sub(&Expression::one()))]);
        let cert = is_invariant_manifold(&sys, &m).unwrap().unwrap();
        assert_eq!(cert.grade, CertificateGrade::Symbolic);
    }

    #[test]
    fn non_invariant_plane_detected() {
        // m = {x - 1} on ẋ = y: f·∇(x-1) = y has remainder y.
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![y(), Expression::zero()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let m = AlgebraicManifold::new(&xy(), vec![poly_of(&x().sub(&Expression::one()))]);
        assert!(is_invariant_manifold(&sys, &m).unwrap().is_none());
    }

    #[test]
    fn refinement_adds_drift_direction() {
        // v = (x-1, 0) on ẋ = y, ẏ = 0: f·∇(x-1) = y joins the set.
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![y(), Expression::zero()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let v = VectorField {
            vars: xy(),
            components: vec![x().sub(&Expression::one()), Expression::zero()],
            tau: None,
        };
        let (m, stable) = tangency_refinement(&sys, &v).unwrap();
        assert!(stable);
        assert_eq!(m.generators.len(), 2);
        assert!(m.generators.contains(&poly_of(&y())));
    }

    #[test]
    fn refinement_fixed_point_set_of_field_itself() {
        let sys = limit_cycle();
        let v = sys.field();
        let (m, stable) = tangency_refinement(&sys, &v).unwrap();
        assert!(stable);
        assert!(is_invariant_manifold(&sys, &m).unwrap().is_some());
    }

    /// Example-9 instance: 3-variable system with formal f and g kept
    /// opaque; alpha = 1 - r^2, beta = 1.
    fn axis_system() -> DynSystem {
        let vars: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        let x = Expression::var("x");
        let y = Expression::var("y");
        let z = Expression::var("z");
        let r2 = x.powi(2).unwrap().add(&y.powi(2).unwrap());
        let alpha = Expression::one().sub(&r2);
        let fz = Expression::func("f", vec![0], vec![z.clone()]);
        let g = Expression::func("g", vec![0, 0], vec![x.clone(), y.clone()]);
        DynSystem {
            vars,
            rhs: vec![
                alpha.mul(&x).sub(&y),
                x.add(&alpha.mul(&y)),
                fz.add(&g.mul(&r2)),
            ],
            params: vec![],
            funcs: vec![
                FuncDecl { name: "f".into(), arity: 1 },
                FuncDecl { name: "g".into(), arity: 2 },
            ],
            excluded: vec![],
        }
    }

    #[test]
    fn axis_is_conditional_witness() {
        let sys = axis_system();
        let v = VectorField {
            vars: sys.vars.clone(),
            components: vec![y(), x().neg(), Expression::zero()],
            tau: None,
        };
        let rep = is_conditional_symmetry(&sys, &v).unwrap();
        assert_eq!(rep.verdict, ConditionalKind::ConditionalSymmetry);
        let w = rep.witness.unwrap();
        let vars3: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        assert_eq!(w.generators.len(), 2);
        assert!(w.generators.contains(&Polynomial::variable(&vars3, 0)));
        assert!(w.generators.contains(&Polynomial::variable(&vars3, 1)));
        assert!(!rep.fixed_points_only);
    }

    #[test]
    fn rotation_not_conditional_on_punctured_plane() {
        // Limit-cycle dynamics on R^2 minus the origin: the only zero of
        // the rotation field is excluded, so no conditional witness.
        let mut sys = limit_cycle();
        sys.excluded = vec![x(), y()];
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let rep = is_conditional_symmetry(&sys, &v).unwrap();
        assert_eq!(rep.verdict, ConditionalKind::None);
    }

    #[test]
    fn rotation_conditional_orbital_on_limit_cycle() {
        let sys = limit_cycle();
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let rep = is_conditional_orbital_symmetry(&sys, &v).unwrap();
        assert_eq!(rep.verdict, ConditionalKind::ConditionalOrbital);
        // The witness contains the unit circle: every generator is a
        // multiple of r^2 - 1.
        let w = rep.witness.unwrap();
        let circle = poly_of(&r2().sub(&Expression::one()));
        assert!(!w.generators.is_empty());
        for g in &w.generators {
            assert!(g.exact_divide(&circle).unwrap().is_some());
        }
    }

    #[test]
    fn scaling_trivially_conditional_orbital_on_euler() {
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x(), y()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let v = VectorField {
            vars: xy(),
            components: vec![x(), y()],
            tau: None,
        };
        let rep = is_conditional_orbital_symmetry(&sys, &v).unwrap();
        assert_eq!(rep.verdict, ConditionalKind::ConditionalOrbital);
        assert!(rep.witness.unwrap().is_whole_space());
    }

    #[test]
    fn rotation_partial_on_unit_circle() {
        let sys = limit_cycle();
        let m = AlgebraicManifold::new(&xy(), vec![poly_of(&r2().sub(&Expression::one()))]);
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let rep = is_partial_symmetry(&sys, &v, &m).unwrap();
        assert_eq!(rep.verdict, ConditionalKind::Partial);
    }

    #[test]
    fn nontrivial_partial_symmetry_alpha_not_radial() {
        // alpha = (1 - r^2)(1 + x): not a function of r^2, so rotations
        // are not proper symmetries, yet partial on the circle.
        let alpha = Expression::one()
            .sub(&r2())
            .mul(&Expression::one().add(&x()));
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![alpha.mul(&x()).sub(&y()), x().add(&alpha.mul(&y()))],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let proper = crate::symmetry::is_symmetry(&sys, &v).unwrap();
        assert_eq!(proper.verdict, crate::symmetry::Verdict::None);
        let m = AlgebraicManifold::new(&xy(), vec![poly_of(&r2().sub(&Expression::one()))]);
        let rep = is_partial_symmetry(&sys, &v, &m).unwrap();
        assert_eq!(rep.verdict, ConditionalKind::Partial);
    }

    #[test]
    fn scaling_not_partial_on_circle() {
        // X_s·∇(r²-1) = 2r² is not in the ideal of the circle.
        let sys = limit_cycle();
        let m = AlgebraicManifold::new(&xy(), vec![poly_of(&r2().sub(&Expression::one()))]);
        let v = VectorField {
            vars: xy(),
            components: vec![x(), y()],
            tau: None,
        };
        let rep = is_partial_symmetry(&sys, &v, &m).unwrap();
        assert_eq!(rep.verdict, ConditionalKind::None);
    }

    #[test]
    fn partial_symmetry_requires_invariant_manifold() {
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![y(), Expression::zero()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let m = AlgebraicManifold::new(&xy(), vec![poly_of(&x().sub(&Expression::one()))]);
        let v = VectorField {
            vars: xy(),
            components: vec![Expression::zero(), y()],
            tau: None,
        };
        assert!(matches!(
            is_partial_symmetry(&sys, &v, &m),
            Err(Error::NotInvariant)
        ));
    }

    #[test]
    fn cofactor_matrix_of_axes() {
        let vars: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        let m = AlgebraicManifold::new(
            &vars,
            vec![
                Polynomial::variable(&vars, 0),
                Polynomial::variable(&vars, 1),
            ],
        );
        let a = cofactor_matrix(&m).unwrap();
        assert_eq!(a[0][0], Expression::one());
        assert_eq!(a[0][1], Expression::zero());
        assert_eq!(a[1][1], Expression::one());
        let tangent = solve_tangent_fields(&m, 2).unwrap();
        assert!(tangent.iter().any(|v| {
            v.components[0].is_zero()
                && v.components[1].is_zero()
                && v.components[2].is_one()
        }));
        let dz = VectorField {
            vars: vars.clone(),
            components: vec![Expression::zero(), Expression::zero(), Expression::one()],
            tau: None,
        };
        let ints = characteristic_integrals(&dz, 2).unwrap();
        // Exactly the z-free polynomials: x, y, x^2, xy, y^2.
        assert_eq!(ints.len(), 5);
        for p in &ints {
            for (e, _) in p.terms() {
                assert_eq!(e.0[2], 0);
            }
        }
    }

    #[test]
    fn circle_tangent_field_contains_rotation() {
        let m = AlgebraicManifold::new(&xy(), vec![poly_of(&r2().sub(&Expression::one()))]);
        let a = cofactor_matrix(&m).unwrap();
        assert_eq!(a[0][0], x().scale(&rat_int(2)));
        let tangent = solve_tangent_fields(&m, 2).unwrap();
        assert!(tangent.iter().any(|v| v.components == vec![y().neg(), x()]
            || v.components == vec![y(), x().neg()]));
    }

    #[test]
    fn characteristic_integrals_of_rotation() {
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let ints = characteristic_integrals(&v, 2).unwrap();
        assert_eq!(ints.len(), 1);
        assert_eq!(ints[0], poly_of(&r2()));
    }

    #[test]
    fn shifted_candidate_changes_only_offset() {
        // P and P + 1/2 verify with matching offsets and equal cofactors.
        let sys = limit_cycle();
        let p = poly_of(&r2());
        let r1 = verify_darboux(&sys, &p, &rat_int(1)).unwrap().unwrap();
        let shifted = p.add(&Polynomial::constant(&xy(), rat(1, 2)));
        let r2_ = verify_darboux(&sys, &shifted, &rat(3, 2)).unwrap().unwrap();
        assert_eq!(r1.cofactor, r2_.cofactor);
    }

    #[test]
    fn reduction_handles_formal_arguments() {
        // alpha(x^2+y^2)·x reduces to alpha(1)·x - ... on the circle:
        // the argument is rewritten mod the ideal first, then division
        // applies; here we check the tangency use.
        let vars = xy();
        let circle = poly_of(&r2().sub(&Expression::one()));
        let alpha = Expression::func("alpha", vec![0], vec![r2()]);
        let red = reduce_expression(&alpha, &[circle], &vars).unwrap();
        // alpha(r^2) -> alpha(1) (argument reduced), remainder opaque.
        assert_eq!(
            red.remainder,
            Expression::func("alpha", vec![0], vec![Expression::one()])
        );
    }
}
