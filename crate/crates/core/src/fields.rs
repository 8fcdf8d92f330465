//! Vector fields on coordinate space, dynamical systems, brackets,
//! evolutionary representatives, pushforwards under coordinate maps, and
//! restriction to charts.
//!
//! Time is an ordinary symbol `t`: a field with a time coefficient is
//! bracketed over the extended variable list `(x, t)` with `dt/dt = 1`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::invariants::AlgebraicManifold;
use crate::symcore::{Atom, Expression, Polynomial, Rat};

pub const TIME: &str = "t";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub value: Option<Rat>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncDecl {
    pub name: String,
    pub arity: usize,
}

/// Autonomous first-order system `x' = f(x)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DynSystem {
    pub vars: Vec<String>,
    pub rhs: Vec<Expression>,
    pub params: Vec<ParamDecl>,
    pub funcs: Vec<FuncDecl>,
    /// Generators of a removed locus: the system lives on the complement
    /// of their common zero set. Used to discard trivial witnesses.
    pub excluded: Vec<Expression>,
}

impl DynSystem {
    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    /// The dynamical vector field `f^i ∂_i`.
    pub fn field(&self) -> VectorField {
        VectorField {
            vars: self.vars.clone(),
            components: self.rhs.clone(),
            tau: None,
        }
    }

    /// Directional derivative `(f·∇)g` along the system field.
    pub fn advect(&self, g: &Expression) -> Expression {
        let mut out = Expression::zero();
        for (v, f) in self.vars.iter().zip(&self.rhs) {
            out = out.add(&f.mul(&g.differentiate(v)));
        }
        out
    }

    /// Substitute declared parameter values into the right-hand sides.
    pub fn with_param_values(&self) -> Result<DynSystem> {
        let mut rhs = self.rhs.clone();
        let mut excluded = self.excluded.clone();
        for p in &self.params {
            if let Some(v) = &p.value {
                let rep = Expression::from_rat(v.clone());
                for e in rhs.iter_mut() {
                    *e = e.substitute_param(&p.name, &rep)?;
                }
                for e in excluded.iter_mut() {
                    *e = e.substitute_param(&p.name, &rep)?;
                }
            }
        }
        Ok(DynSystem {
            vars: self.vars.clone(),
            rhs,
            params: self.params.clone(),
            funcs: self.funcs.clone(),
            excluded,
        })
    }

    /// Right-hand sides as polynomials with rational coefficients.
    /// Declared parameter values are substituted first; leftover symbols
    /// make the system unusable for search mode.
    pub fn polynomial_rhs(&self) -> Result<Vec<Polynomial>> {
        let sys = self.with_param_values()?;
        sys.rhs
            .iter()
            .map(|e| {
                if let Some(p) = e.free_params().into_iter().next() {
                    return Err(Error::UnvaluedParameter(p));
                }
                Polynomial::from_expression(e, &self.vars)
            })
            .collect()
    }

    /// Excluded-locus generators as polynomials (after parameter
    /// substitution); `None` when no locus is declared.
    pub fn excluded_polynomials(&self) -> Result<Option<Vec<Polynomial>>> {
        if self.excluded.is_empty() {
            return Ok(None);
        }
        let sys = self.with_param_values()?;
        let gens = sys
            .excluded
            .iter()
            .map(|e| Polynomial::from_expression(e, &self.vars))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(gens))
    }
}

/// A vector field `s^i(x,t) ∂_i + τ(x,t) ∂_t` (τ optional).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VectorField {
    pub vars: Vec<String>,
    pub components: Vec<Expression>,
    pub tau: Option<Expression>,
}

impl VectorField {
    pub fn zero(vars: &[String]) -> Self {
        VectorField {
            vars: vars.to_vec(),
            components: vec![Expression::zero(); vars.len()],
            tau: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
            && self.tau.as_ref().map(|t| t.is_zero()).unwrap_or(true)
    }

    /// Apply as a derivation: `Σ s^i ∂_i g (+ τ ∂_t g)`.
    pub fn apply(&self, g: &Expression) -> Expression {
        let mut out = Expression::zero();
        for (v, s) in self.vars.iter().zip(&self.components) {
            out = out.add(&s.mul(&g.differentiate(v)));
        }
        if let Some(tau) = &self.tau {
            out = out.add(&tau.mul(&g.differentiate(TIME)));
        }
        out
    }

    /// Reorder and extend components to the target variable list,
    /// inserting zero components for missing variables.
    pub fn aligned_to(&self, vars: &[String]) -> Result<VectorField> {
        for v in &self.vars {
            if !vars.contains(v) {
                return Err(Error::UnknownVariable(v.clone()));
            }
        }
        let components = vars
            .iter()
            .map(|v| {
                self.vars
                    .iter()
                    .position(|w| w == v)
                    .map(|i| self.components[i].clone())
                    .unwrap_or_else(Expression::zero)
            })
            .collect();
        Ok(VectorField {
            vars: vars.to_vec(),
            components,
            tau: self.tau.clone(),
        })
    }

    pub fn scale(&self, c: &Expression) -> VectorField {
        VectorField {
            vars: self.vars.clone(),
            components: self.components.iter().map(|s| s.mul(c)).collect(),
            tau: self.tau.as_ref().map(|t| t.mul(c)),
        }
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        if self.vars != other.vars {
            return Err(Error::VariableMismatch(
                self.vars.clone(),
                other.vars.clone(),
            ));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b))
            .collect();
        let tau = match (&self.tau, &other.tau) {
            (None, None) => None,
            (a, b) => {
                let s = a
                    .clone()
                    .unwrap_or_else(Expression::zero)
                    .add(&b.clone().unwrap_or_else(Expression::zero));
                Some(s)
            }
        };
        Ok(VectorField {
            vars: self.vars.clone(),
            components,
            tau,
        })
    }
}

/// Commutator `[a,b]^i = a(b^i) - b(a^i)`. Fields carrying a time
/// coefficient are bracketed over the extended list `(x, t)`.
pub fn lie_bracket(a: &VectorField, b: &VectorField) -> Result<VectorField> {
    if a.vars != b.vars {
        return Err(Error::VariableMismatch(a.vars.clone(), b.vars.clone()));
    }
    let has_tau = a.tau.is_some() || b.tau.is_some();
    let mut comps_a = a.components.clone();
    let mut comps_b = b.components.clone();
    let mut vars = a.vars.clone();
    if has_tau {
        vars.push(TIME.to_string());
        comps_a.push(a.tau.clone().unwrap_or_else(Expression::zero));
        comps_b.push(b.tau.clone().unwrap_or_else(Expression::zero));
    }
    let apply = |comps: &[Expression], g: &Expression| -> Expression {
        let mut out = Expression::zero();
        for (v, s) in vars.iter().zip(comps) {
            out = out.add(&s.mul(&g.differentiate(v)));
        }
        out
    };
    let mut out: Vec<Expression> = Vec::with_capacity(vars.len());
    for i in 0..vars.len() {
        let t = apply(&comps_a, &comps_b[i]).sub(&apply(&comps_b, &comps_a[i]));
        out.push(t);
    }
    let tau = if has_tau {
        let t = out.pop().unwrap();
        if t.is_zero() {
            None
        } else {
            Some(t)
        }
    } else {
        None
    };
    Ok(VectorField {
        vars: a.vars.clone(),
        components: out,
        tau,
    })
}

/// Lie-Poisson bracket `{f,s} = (f·∇)s - (s·∇)f`, componentwise.
pub fn lie_poisson(
    f: &[Expression],
    s: &[Expression],
    vars: &[String],
) -> Result<Vec<Expression>> {
    if f.len() != s.len() {
        return Err(Error::LengthMismatch(f.len(), s.len()));
    }
    let advect = |a: &[Expression], g: &Expression| -> Expression {
        let mut out = Expression::zero();
        for (v, c) in vars.iter().zip(a) {
            out = out.add(&c.mul(&g.differentiate(v)));
        }
        out
    };
    Ok((0..f.len())
        .map(|i| advect(f, &s[i]).sub(&advect(s, &f[i])))
        .collect())
}

/// Evolutionary representative `Q^i = s^i - τ f^i` (restricted to
/// solutions); the result carries no time coefficient.
pub fn evolutionary_representative(v: &VectorField, sys: &DynSystem) -> Result<VectorField> {
    let v = v.aligned_to(&sys.vars)?;
    let components = match &v.tau {
        None => v.components.clone(),
        Some(tau) => v
            .components
            .iter()
            .zip(&sys.rhs)
            .map(|(s, f)| s.sub(&tau.mul(f)))
            .collect(),
    };
    Ok(VectorField {
        vars: sys.vars.clone(),
        components,
        tau: None,
    })
}

/// A rewrite rule `atom^power -> replacement`, applied inside formal
/// function arguments as well. Used to carry algebraic identities of a
/// coordinate map (e.g. `sn(th)^2 = 1 - cs(th)^2`).
#[derive(Clone, Debug)]
pub struct Relation {
    pub atom: Atom,
    pub power: u32,
    pub replacement: Expression,
}

/// Invertible change of spatial coordinates `w = W(x)`, `x = X(w)`.
#[derive(Clone, Debug)]
pub struct CoordinateMap {
    pub old_vars: Vec<String>,
    pub new_vars: Vec<String>,
    pub forward: Vec<Expression>,
    pub inverse: Vec<Expression>,
    pub relations: Vec<Relation>,
    pub funcs: Vec<FuncDecl>,
    /// Numeric bindings for formal symbols, for the sampling fallback of
    /// the invertibility check (`@name` refers to a builtin callable).
    pub bindings: Vec<(String, MapBinding)>,
    /// Per-new-variable sampling ranges for the numeric check.
    pub sample_box: Vec<(String, (Rat, Rat))>,
}

#[derive(Clone, Debug)]
pub enum MapBinding {
    Builtin(String),
    Body(Expression),
}

/// Rewrite to a fixed point under the given relations (with an iteration
/// cap; relations are expected to be reducing).
pub fn reduce_with_relations(e: &Expression, relations: &[Relation]) -> Expression {
    let mut cur = e.clone();
    for _ in 0..16 {
        let mut next = cur.clone();
        for rel in relations {
            next = apply_relation(&next, rel);
        }
        if next == cur {
            return cur;
        }
        cur = next;
    }
    cur
}

fn apply_relation(e: &Expression, rel: &Relation) -> Expression {
    // Rewrite inside arguments first so that atom equality sees reduced
    // arguments, then rewrite powers at the top level.
    let rebuilt = e
        .rebuild(&mut |a| {
            let a2 = match a {
                Atom::Exp(arg) => Atom::Exp(apply_relation(arg, rel)),
                Atom::Func(f) => {
                    let args = f.args.iter().map(|x| apply_relation(x, rel)).collect();
                    Atom::Func(crate::symcore::FuncAtom {
                        name: f.name.clone(),
                        deriv: f.deriv.clone(),
                        args,
                    })
                }
                other => other.clone(),
            };
            Ok(Expression::from_atom(a2))
        })
        .expect("atom rewrite cannot fail");
    // Top-level power rewrite across numerator terms.
    let mut out = Expression::zero();
    for (m, c) in rebuilt.terms() {
        let exp = m.exponent(&rel.atom);
        let mut term = Expression::from_rat(c.clone());
        if exp >= rel.power as i64 {
            let k = exp / rel.power as i64;
            let rem = exp - k * rel.power as i64;
            for (a, e) in m.factors() {
                if *a == rel.atom {
                    if rem != 0 {
                        term = term.mul(&Expression::from_atom(a.clone()).powi(rem).unwrap());
                    }
                } else {
                    term = term.mul(&Expression::from_atom(a.clone()).powi(*e).unwrap());
                }
            }
            term = term.mul(&rel.replacement.powi(k).unwrap());
        } else {
            for (a, e) in m.factors() {
                term = term.mul(&Expression::from_atom(a.clone()).powi(*e).unwrap());
            }
        }
        out = out.add(&term);
    }
    for (b, k) in rebuilt.denominators() {
        let rb = apply_relation(b, rel);
        out = out.mul(&rb.powi(-(*k as i64)).expect("nonzero base"));
    }
    out
}

/// Outcome of the map invertibility check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapCheck {
    Symbolic,
    Numeric,
}

/// Witnesses reported alongside a pushforward.
#[derive(Clone, Debug)]
pub struct PushforwardReport {
    /// New variables absent from every right-hand side (symmetry-adapted
    /// coordinates: the reduced system does not involve them).
    pub absent: Vec<String>,
    /// New variables with identically zero right-hand side (constants of
    /// motion in the new chart).
    pub constant: Vec<String>,
    pub map_check: MapCheck,
}

impl CoordinateMap {
    /// Verify `W(X(w)) = w`, symbolically modulo the declared relations,
    /// falling back to 20 random sample points at 1e-9 when inconclusive.
    pub fn verify(&self) -> Result<MapCheck> {
        let mut symbolic = true;
        for (j, w) in self.forward.iter().enumerate() {
            let mut comp = w.clone();
            for (i, ov) in self.old_vars.iter().enumerate() {
                comp = comp.substitute_var(ov, &self.inverse[i])?;
            }
            comp = reduce_with_relations(&comp, &self.relations);
            if comp != Expression::var(&self.new_vars[j]) {
                symbolic = false;
                break;
            }
        }
        if symbolic {
            return Ok(MapCheck::Symbolic);
        }
        crate::numeric::verify_map_roundtrip(self, 20, 1e-9)?;
        Ok(MapCheck::Numeric)
    }
}

/// Transport a system through a coordinate map: `ẇ = (DX)^{-1} f(X(w))`,
/// which by the chain rule equals `(∂W/∂x) f` composed with `x = X(w)`.
/// The inverse-Jacobian form keeps the computation inside the rational
/// grammar for maps whose forward components are only formal.
pub fn pushforward(
    sys: &DynSystem,
    map: &CoordinateMap,
) -> Result<(DynSystem, PushforwardReport)> {
    if sys.vars != map.old_vars {
        return Err(Error::VariableMismatch(
            sys.vars.clone(),
            map.old_vars.clone(),
        ));
    }
    let check = map.verify()?;
    let n = map.new_vars.len();
    // f composed with x = X(w).
    let mut f_new: Vec<Expression> = Vec::with_capacity(sys.rhs.len());
    for f in &sys.rhs {
        let mut e = f.clone();
        for (i, ov) in map.old_vars.iter().enumerate() {
            e = e.substitute_var(ov, &map.inverse[i])?;
        }
        f_new.push(reduce_with_relations(&e, &map.relations));
    }
    // Jacobian of the inverse map.
    let mut jac: Vec<Vec<Expression>> = Vec::with_capacity(map.inverse.len());
    for x in &map.inverse {
        let row: Vec<Expression> = map
            .new_vars
            .iter()
            .map(|w| reduce_with_relations(&x.differentiate(w), &map.relations))
            .collect();
        jac.push(row);
    }
    // Solve J g = f_new by exact elimination with relation reduction.
    let g = solve_linear_expressions(&jac, &f_new, &map.relations)?;
    debug_assert_eq!(g.len(), n);
    let mut funcs = sys.funcs.clone();
    for fd in &map.funcs {
        if !funcs.iter().any(|d| d.name == fd.name) {
            funcs.push(fd.clone());
        }
    }
    let new_sys = DynSystem {
        vars: map.new_vars.clone(),
        rhs: g.clone(),
        params: sys.params.clone(),
        funcs,
        excluded: Vec::new(),
    };
    let mut used: BTreeSet<String> = BTreeSet::new();
    for e in &g {
        used.extend(e.free_vars());
    }
    let report = PushforwardReport {
        absent: map
            .new_vars
            .iter()
            .filter(|v| !used.contains(*v))
            .cloned()
            .collect(),
        constant: map
            .new_vars
            .iter()
            .enumerate()
            .filter(|(i, _)| g[*i].is_zero())
            .map(|(_, v)| v.clone())
            .collect(),
        map_check: check,
    };
    Ok((new_sys, report))
}

fn solve_linear_expressions(
    a: &[Vec<Expression>],
    b: &[Expression],
    relations: &[Relation],
) -> Result<Vec<Expression>> {
    let rows = a.len();
    let cols = if rows > 0 { a[0].len() } else { 0 };
    if rows != b.len() || rows < cols {
        return Err(Error::NonInvertibleMap("jacobian shape".into()));
    }
    let mut m: Vec<Vec<Expression>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.to_vec();
            r.push(rhs.clone());
            r
        })
        .collect();
    let red = |e: &Expression| reduce_with_relations(e, relations);
    let mut pivot_rows: Vec<usize> = Vec::new();
    for c in 0..cols {
        let Some(p) = (0..rows)
            .filter(|r| !pivot_rows.contains(r))
            .find(|&r| !m[r][c].is_zero())
        else {
            return Err(Error::NonInvertibleMap(format!(
                "jacobian column {c} has no pivot"
            )));
        };
        let pivot = m[p][c].clone();
        for r in 0..rows {
            if r == p || m[r][c].is_zero() {
                continue;
            }
            let factor = red(&m[r][c].div(&pivot)?);
            for j in 0..=cols {
                let sub = factor.mul(&m[p][j]);
                m[r][j] = red(&m[r][j].sub(&sub));
            }
        }
        pivot_rows.push(p);
    }
    let mut out = vec![Expression::zero(); cols];
    for (c, &p) in pivot_rows.iter().enumerate() {
        out[c] = red(&m[p][cols].div(&m[p][c])?);
    }
    // Overdetermined rows must have reduced to zero.
    for r in 0..rows {
        if !pivot_rows.contains(&r) && !m[r][cols].is_zero() {
            return Err(Error::NonInvertibleMap(
                "inconsistent jacobian system".into(),
            ));
        }
    }
    Ok(out)
}

/// Restrict a system to a chart of an algebraic manifold: solved
/// variables are substituted, leaving a reduced system on the chart
/// variables. The chart must be consistent with the generators.
pub fn restrict(sys: &DynSystem, m: &AlgebraicManifold) -> Result<DynSystem> {
    let chart = match &m.chart {
        Some(c) => c.clone(),
        None => {
            if m.generators.is_empty() {
                return Ok(sys.clone());
            }
            return Err(Error::Invalid(
                "restriction requires a solved chart".into(),
            ));
        }
    };
    // Consistency: substituting the chart into every generator vanishes.
    for g in &m.generators {
        let mut e = g.to_expression();
        for (v, rep) in &chart {
            e = e.substitute_var(v, rep)?;
        }
        if !e.is_zero() {
            return Err(Error::ChartInconsistent(e.to_string()));
        }
    }
    let solved: Vec<&String> = chart.iter().map(|(v, _)| v).collect();
    let free: Vec<String> = sys
        .vars
        .iter()
        .filter(|v| !solved.contains(v))
        .cloned()
        .collect();
    let mut rhs = Vec::with_capacity(free.len());
    for v in &free {
        let i = sys.vars.iter().position(|w| w == v).unwrap();
        let mut e = sys.rhs[i].clone();
        for (sv, rep) in &chart {
            e = e.substitute_var(sv, rep)?;
        }
        rhs.push(e);
    }
    Ok(DynSystem {
        vars: free,
        rhs,
        params: sys.params.clone(),
        funcs: sys.funcs.clone(),
        excluded: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::rat_int;

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

    /// X_r = -y ∂_x + x ∂_y
    fn rotation() -> VectorField {
        VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        }
    }

    /// X_s = x ∂_x + y ∂_y
    fn scaling() -> VectorField {
        VectorField {
            vars: xy(),
            components: vec![x(), y()],
            tau: None,
        }
    }

    /// X_1 = omega(r^2) (-y ∂_x + x ∂_y)
    fn x1() -> VectorField {
        let om = Expression::func("omega", vec![0], vec![r2()]);
        rotation().scale(&om)
    }

    /// X_2 = beta(x, y) (-y ∂_x + x ∂_y)
    fn x2() -> VectorField {
        let beta = Expression::func("beta", vec![0, 0], vec![x(), y()]);
        rotation().scale(&beta)
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let f = x1();
        let b = lie_bracket(&f, &f).unwrap();
        assert!(b.is_zero());
    }

    #[test]
    fn rotation_and_scaling_commute() {
        let b = lie_bracket(&rotation(), &scaling()).unwrap();
        assert!(b.is_zero());
    }

    #[test]
    fn scaling_bracket_x1() {
        // [X_s, X_1] = 2 r^2 omega'(r^2) X_r
        let b = lie_bracket(&scaling(), &x1()).unwrap();
        let om1 = Expression::func("omega", vec![1], vec![r2()]);
        let coeff = r2().scale(&rat_int(2)).mul(&om1);
        let expected = rotation().scale(&coeff);
        assert_eq!(b, expected);
    }

    #[test]
    fn rotation_bracket_x2() {
        // [X_r, X_2] = ((x beta_y - y beta_x)/beta) X_2
        let b = lie_bracket(&rotation(), &x2()).unwrap();
        let bx = Expression::func("beta", vec![1, 0], vec![x(), y()]);
        let by = Expression::func("beta", vec![0, 1], vec![x(), y()]);
        let beta = Expression::func("beta", vec![0, 0], vec![x(), y()]);
        let lam = x().mul(&by).sub(&y().mul(&bx)).div(&beta).unwrap();
        let expected = x2().scale(&lam);
        assert_eq!(b.components[0], expected.components[0]);
        assert_eq!(b.components[1], expected.components[1]);
    }

    #[test]
    fn lie_poisson_matches_bracket_componentwise() {
        // {f,s} = components of [f̂, ŝ] for spatial fields.
        let f = x1();
        let s = scaling();
        let lp = lie_poisson(&f.components, &s.components, &xy()).unwrap();
        let br = lie_bracket(&f, &s).unwrap();
        assert_eq!(lp, br.components);
    }

    #[test]
    fn lie_poisson_rotation_euler() {
        // Hand expansion: {(x,y), (-y,x)} = (0,0).
        let f = vec![x(), y()];
        let s = vec![y().neg(), x()];
        let lp = lie_poisson(&f, &s, &xy()).unwrap();
        assert!(lp[0].is_zero() && lp[1].is_zero());
    }

    #[test]
    fn evolutionary_representative_subtracts_tau_f() {
        // v = c ∂_t + (y ∂_x - x ∂_y) on the alpha/beta rotation system:
        // Q = (y - c(αx - βy), -x - c(βx + αy)), by direct substitution.
        let alpha = Expression::func("alpha", vec![0], vec![r2()]);
        let beta = Expression::func("beta", vec![0], vec![r2()]);
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![
                alpha.mul(&x()).sub(&beta.mul(&y())),
                beta.mul(&x()).add(&alpha.mul(&y())),
            ],
            params: vec![],
            funcs: vec![
                FuncDecl { name: "alpha".into(), arity: 1 },
                FuncDecl { name: "beta".into(), arity: 1 },
            ],
            excluded: vec![],
        };
        let c = Expression::param("c");
        let v = VectorField {
            vars: xy(),
            components: vec![y(), x().neg()],
            tau: Some(c.clone()),
        };
        let q = evolutionary_representative(&v, &sys).unwrap();
        assert_eq!(q.components[0], y().sub(&c.mul(&sys.rhs[0])));
        assert_eq!(q.components[1], x().neg().sub(&c.mul(&sys.rhs[1])));
        assert!(q.tau.is_none());
    }

    #[test]
    fn tau_free_field_is_unchanged() {
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x(), y()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let v = rotation();
        let q = evolutionary_representative(&v, &sys).unwrap();
        assert_eq!(q.components, v.components);
    }

    #[test]
    fn pure_time_translation_representative() {
        // v = ∂_t gives Q^i = -f^i.
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x(), y()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let v = VectorField {
            vars: xy(),
            components: vec![Expression::zero(), Expression::zero()],
            tau: Some(Expression::one()),
        };
        let q = evolutionary_representative(&v, &sys).unwrap();
        assert_eq!(q.components[0], x().neg());
        assert_eq!(q.components[1], y().neg());
    }

    #[test]
    fn relation_rewrite_reduces_powers() {
        let th = Expression::var("th");
        let sn = Expression::func("sn", vec![0], vec![th.clone()]);
        let cs = Expression::func("cs", vec![0], vec![th.clone()]);
        let rel = Relation {
            atom: sn.terms().next().unwrap().0.factors()[0].0.clone(),
            power: 2,
            replacement: Expression::one().sub(&cs.powi(2).unwrap()),
        };
        let e = sn.powi(2).unwrap().add(&cs.powi(2).unwrap());
        let reduced = reduce_with_relations(&e, &[rel]);
        assert!(reduced.is_one());
    }
}
