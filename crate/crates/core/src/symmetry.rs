//! Proper and orbital symmetry classification, and bounded-degree
//! polynomial symmetry search through exact determining equations.
//!
//! The residual convention follows the time-dependent symmetry condition
//! `s_t + {f,s} = 0`: a field is proper when the residual vanishes and
//! orbital when the residual is collinear with `f`, the cofactor λ being
//! defined through `s_t + {f,s} = λ f`. With this convention the trivial
//! orbital symmetry `θ·f` has cofactor `λ = D_t θ = θ_t + (f·∇)θ`.

use crate::error::{Error, Result};
use crate::fields::{evolutionary_representative, DynSystem, VectorField, TIME};
use crate::linalg;
use crate::par;
use num::{One, Zero};

use crate::symcore::{monomials_in_degrees, Expo, Expression, Polynomial, Rat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Proper,
    Orbital,
    None,
}

/// Classification outcome with certificates: the residual components
/// `s_t + {f,s}`, and for orbital fields the cofactor λ with
/// `residual = λ·f` exactly.
#[derive(Clone, Debug)]
pub struct SymmetryReport {
    pub verdict: Verdict,
    pub cofactor: Option<Expression>,
    pub residual: Vec<Expression>,
}

impl SymmetryReport {
    pub fn is_proper(&self) -> bool {
        self.verdict == Verdict::Proper
    }
}

/// Finite-dimensional search space for the determining equations.
#[derive(Clone, Copy, Debug)]
pub struct Ansatz {
    /// Degree bound for the field components.
    pub degree: u32,
    /// Degree bound for the cofactor (orbital search only).
    pub cofactor_degree: u32,
    /// Allow polynomial time dependence in the unknowns.
    pub time_dependent: bool,
}

impl Ansatz {
    pub fn new(degree: u32) -> Self {
        Ansatz {
            degree,
            cofactor_degree: 0,
            time_dependent: false,
        }
    }

    pub fn with_cofactor_degree(mut self, d: u32) -> Self {
        self.cofactor_degree = d;
        self
    }
}

/// Residual of the symmetry condition: `∂_t Q + {f, Q}` with `Q` the
/// evolutionary representative of `v`.
pub fn symmetry_residual(sys: &DynSystem, v: &VectorField) -> Result<Vec<Expression>> {
    let q = evolutionary_representative(v, sys)?;
    let mut out = Vec::with_capacity(sys.vars.len());
    for i in 0..sys.vars.len() {
        let time_part = q.components[i].differentiate(TIME);
        let advected = sys.advect(&q.components[i]);
        let transport = q.apply(&sys.rhs[i]);
        out.push(time_part.add(&advected).sub(&transport));
    }
    Ok(out)
}

/// Decide whether `v` is a proper Lie-point symmetry of the system.
pub fn is_symmetry(sys: &DynSystem, v: &VectorField) -> Result<SymmetryReport> {
    let residual = symmetry_residual(sys, v)?;
    let proper = residual.iter().all(|e| e.is_zero());
    Ok(SymmetryReport {
        verdict: if proper { Verdict::Proper } else { Verdict::None },
        cofactor: if proper { Some(Expression::zero()) } else { None },
        residual,
    })
}

/// Decide whether `v` is an orbital symmetry: residual collinear with the
/// dynamical field. The cofactor candidate comes from the first component
/// with nonzero right-hand side and is verified against all others by
/// cross multiplication, so rational cofactors are exact.
pub fn is_orbital_symmetry(sys: &DynSystem, v: &VectorField) -> Result<SymmetryReport> {
    let pivot = sys
        .rhs
        .iter()
        .position(|f| !f.is_zero())
        .ok_or(Error::ZeroField)?;
    let residual = symmetry_residual(sys, v)?;
    if residual.iter().all(|e| e.is_zero()) {
        return Ok(SymmetryReport {
            verdict: Verdict::Proper,
            cofactor: Some(Expression::zero()),
            residual,
        });
    }
    // b^i f^p - b^p f^i must vanish identically for every component.
    for i in 0..sys.vars.len() {
        let cross = residual[i]
            .mul(&sys.rhs[pivot])
            .sub(&residual[pivot].mul(&sys.rhs[i]));
        if !cross.is_zero() {
            return Ok(SymmetryReport {
                verdict: Verdict::None,
                cofactor: None,
                residual,
            });
        }
    }
    let lambda = residual[pivot].div(&sys.rhs[pivot])?;
    Ok(SymmetryReport {
        verdict: Verdict::Orbital,
        cofactor: Some(lambda),
        residual,
    })
}

/// The trivial orbital symmetry `v = θ·f` with cofactor `λ = D_t θ`.
pub fn trivial_orbital(
    sys: &DynSystem,
    theta: &Expression,
) -> Result<(VectorField, Expression)> {
    if theta.is_zero() {
        return Err(Error::ZeroField);
    }
    let v = sys.field().scale(theta);
    let lambda = theta.differentiate(TIME).add(&sys.advect(theta));
    Ok((v, lambda))
}

/// Basis of polynomial Lie-point symmetries of degree at most
/// `ansatz.degree` solving `s_t + {f,s} = 0` exactly.
pub fn find_lpti_symmetries(sys: &DynSystem, ansatz: &Ansatz) -> Result<Vec<VectorField>> {
    let sol = solve_determining(sys, ansatz, false)?;
    Ok(sol.into_iter().map(|(v, _)| v).collect())
}

/// Basis of the joint solution space of `s_t + {f,s} = λ f` with both
/// the field and the cofactor polynomial.
pub fn find_orbital_symmetries(
    sys: &DynSystem,
    ansatz: &Ansatz,
) -> Result<Vec<(VectorField, Expression)>> {
    solve_determining(sys, ansatz, true)
}

fn solve_determining(
    sys: &DynSystem,
    ansatz: &Ansatz,
    with_cofactor: bool,
) -> Result<Vec<(VectorField, Expression)>> {
    let f = sys.polynomial_rhs()?;
    let n = sys.vars.len();
    // Extended variable list carries `t` when the ansatz is
    // time-dependent; the system itself is autonomous.
    let mut ext_vars = sys.vars.clone();
    if ansatz.time_dependent {
        ext_vars.push(TIME.to_string());
    }
    let sysv = sys.with_param_values()?;
    let f_ext: Vec<Polynomial> = sysv
        .rhs
        .iter()
        .map(|e| Polynomial::from_expression(e, &ext_vars))
        .collect::<Result<_>>()?;
    let _ = f;
    let grad_f: Vec<Vec<Polynomial>> = f_ext.iter().map(|p| p.gradient()).collect();
    let monos = monomials_in_degrees(ext_vars.len(), 0, ansatz.degree);
    let t_index = ext_vars.len() - 1;

    // Unknown layout: (component j, monomial m) for the field, then
    // cofactor monomials.
    #[derive(Clone)]
    enum Unknown {
        Field(usize, Expo),
        Cofactor(Expo),
    }
    let mut unknowns: Vec<Unknown> = Vec::new();
    for j in 0..n {
        for m in &monos {
            unknowns.push(Unknown::Field(j, m.clone()));
        }
    }
    if with_cofactor {
        for m in monomials_in_degrees(ext_vars.len(), 0, ansatz.cofactor_degree) {
            unknowns.push(Unknown::Cofactor(m));
        }
    }

    // Each column: the determining expression per system component, as
    // polynomials; assembled independently (and in parallel).
    let cols: Vec<Vec<Polynomial>> = par::map(unknowns.clone().into_iter().collect(), |u| {
        let mut per_component = Vec::with_capacity(n);
        for i in 0..n {
            let contrib = match &u {
                Unknown::Field(j, m) => {
                    let basis = Polynomial::monomial(&ext_vars, m.clone(), Rat::one());
                    let mut c = Polynomial::zero(&ext_vars);
                    if i == *j {
                        // ∂_t x^m + Σ_l f^l ∂_l x^m
                        if ansatz.time_dependent {
                            c = c.add(&basis.derivative(t_index));
                        }
                        for (l, fl) in f_ext.iter().enumerate() {
                            c = c.add(&fl.mul(&basis.derivative(l)));
                        }
                    }
                    // -(s·∇) f^i contribution: -x^m ∂_j f^i
                    c.sub(&basis.mul(&grad_f[i][*j]))
                }
                Unknown::Cofactor(m) => {
                    let basis = Polynomial::monomial(&ext_vars, m.clone(), Rat::one());
                    basis.mul(&f_ext[i]).neg()
                }
            };
            per_component.push(contrib);
        }
        per_component
    });

    // Rows: coefficients of every monomial appearing in any component.
    let mut row_keys: std::collections::BTreeSet<(usize, Expo)> = Default::default();
    for col in &cols {
        for (i, p) in col.iter().enumerate() {
            for (e, _) in p.terms() {
                row_keys.insert((i, e.clone()));
            }
        }
    }
    let row_keys: Vec<(usize, Expo)> = row_keys.into_iter().collect();
    let matrix: Vec<Vec<Rat>> = row_keys
        .iter()
        .map(|(i, e)| {
            cols.iter()
                .map(|col| col[*i].coefficient(e))
                .collect::<Vec<_>>()
        })
        .collect();
    let basis = linalg::nullspace(&matrix);

    let mut out = Vec::with_capacity(basis.len());
    for vec in basis {
        let mut comps: Vec<Polynomial> =
            (0..n).map(|_| Polynomial::zero(&ext_vars)).collect();
        let mut cof = Polynomial::zero(&ext_vars);
        for (u, c) in unknowns.iter().zip(&vec) {
            if c.is_zero() {
                continue;
            }
            match u {
                Unknown::Field(j, m) => {
                    comps[*j] =
                        comps[*j].add(&Polynomial::monomial(&ext_vars, m.clone(), c.clone()));
                }
                Unknown::Cofactor(m) => {
                    cof = cof.add(&Polynomial::monomial(&ext_vars, m.clone(), c.clone()));
                }
            }
        }
        let field = VectorField {
            vars: sys.vars.clone(),
            components: comps.iter().map(|p| p.to_expression()).collect(),
            tau: None,
        };
        out.push((field, cof.to_expression()));
    }
    Ok(out)
}
