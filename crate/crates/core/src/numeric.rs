//! Trajectory integration, symmetry-flow maps, and numeric verification
//! that claimed symmetries and invariant manifolds behave as classified.
//!
//! The integrator is an embedded Dormand-Prince 5(4) pair with a PI step
//! controller (min step 1e-12, max step one tenth of the span) and cubic
//! Hermite dense output. Formal function symbols must be bound — either
//! symbolically (an expression in `u1..uk`) or to a named builtin
//! callable; unbound symbols are an error, never defaulted.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{
    evolutionary_representative, CoordinateMap, DynSystem, MapBinding, VectorField,
};
use crate::par;
use crate::symcore::{EvalCtx, Expression, FuncImpl, Polynomial};

pub const MIN_STEP: f64 = 1e-12;
pub const TOL_RANGE: (f64, f64) = (1e-12, 1e-3);

// ----- bindings and compilation -----

/// Numeric binding for a formal function symbol.
#[derive(Clone)]
pub enum FuncBinding {
    /// Expression in placeholders `u1..uk`, substituted symbolically.
    Body(Expression),
    /// Named builtin callable.
    Builtin(String),
}

/// Bindings for every formal symbol appearing in a system or field.
#[derive(Clone, Default)]
pub struct NumericBindings {
    pub funcs: BTreeMap<String, (usize, FuncBinding)>,
}

impl NumericBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind_body(mut self, name: &str, arity: usize, body: Expression) -> Self {
        self.funcs
            .insert(name.to_string(), (arity, FuncBinding::Body(body)));
        self
    }

    pub fn bind_builtin(mut self, name: &str, arity: usize, builtin: &str) -> Self {
        self.funcs.insert(
            name.to_string(),
            (arity, FuncBinding::Builtin(builtin.to_string())),
        );
        self
    }
}

/// Builtin callable library for job files and map checks. `None` when the
/// name is unknown.
pub fn builtin_impl(name: &str) -> Option<FuncImpl> {
    let stripped = name.strip_prefix('@').unwrap_or(name);
    let imp = match stripped {
        "identity" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| a[0]),
            partial: Some(Arc::new(|d, _| match d {
                [1] => Some(1.0),
                [k] if *k > 1 => Some(0.0),
                _ => None,
            })),
        },
        "square" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| a[0] * a[0]),
            partial: Some(Arc::new(|d, a| match d {
                [1] => Some(2.0 * a[0]),
                [2] => Some(2.0),
                [k] if *k > 2 => Some(0.0),
                _ => None,
            })),
        },
        "cube" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| a[0] * a[0] * a[0]),
            partial: Some(Arc::new(|d, a| match d {
                [1] => Some(3.0 * a[0] * a[0]),
                [2] => Some(6.0 * a[0]),
                [3] => Some(6.0),
                [k] if *k > 3 => Some(0.0),
                _ => None,
            })),
        },
        "sqrtfn" | "sqrt" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| a[0].sqrt()),
            partial: Some(Arc::new(|d, a| match d {
                [1] => Some(0.5 / a[0].sqrt()),
                _ => None,
            })),
        },
        "cosfn" | "cos" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| a[0].cos()),
            partial: Some(Arc::new(|d, a| match d {
                [1] => Some(-a[0].sin()),
                [2] => Some(-a[0].cos()),
                _ => None,
            })),
        },
        "sinfn" | "sin" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| a[0].sin()),
            partial: Some(Arc::new(|d, a| match d {
                [1] => Some(a[0].cos()),
                [2] => Some(-a[0].sin()),
                _ => None,
            })),
        },
        "expfn" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| a[0].exp()),
            partial: Some(Arc::new(|d, a| match d {
                [k] => Some(a[0].exp() * if *k > 0 { 1.0 } else { 1.0 }),
                _ => None,
            })),
        },
        "negexp" => FuncImpl {
            arity: 1,
            f: Arc::new(|a| (-a[0]).exp()),
            partial: Some(Arc::new(|d, a| match d {
                [k] => Some((-a[0]).exp() * if k % 2 == 1 { -1.0 } else { 1.0 }),
                _ => None,
            })),
        },
        "atan2fn" | "atan2" => FuncImpl {
            arity: 2,
            f: Arc::new(|a| a[0].atan2(a[1])),
            partial: None,
        },
        "one" => FuncImpl {
            arity: 1,
            f: Arc::new(|_| 1.0),
            partial: Some(Arc::new(|d, _| match d {
                [k] if *k > 0 => Some(0.0),
                _ => None,
            })),
        },
        "zero" => FuncImpl {
            arity: 1,
            f: Arc::new(|_| 0.0),
            partial: Some(Arc::new(|d, _| match d {
                [k] if *k > 0 => Some(0.0),
                _ => None,
            })),
        },
        _ => return None,
    };
    Some(imp)
}

/// A vector of expressions compiled against a variable order, with all
/// parameters substituted and formal symbols resolved.
#[derive(Clone)]
pub struct CompiledVec {
    pub vars: Vec<String>,
    exprs: Vec<Expression>,
    funcs: BTreeMap<String, FuncImpl>,
}

impl CompiledVec {
    pub fn dim(&self) -> usize {
        self.exprs.len()
    }

    pub fn eval(&self, point: &[f64], out: &mut [f64]) -> Result<()> {
        let mut ctx = EvalCtx::new();
        for (v, x) in self.vars.iter().zip(point) {
            ctx.vars.insert(v.clone(), *x);
        }
        ctx.funcs = self.funcs.clone();
        for (i, e) in self.exprs.iter().enumerate() {
            out[i] = e.evaluate(&ctx)?;
        }
        Ok(())
    }

    pub fn eval_vec(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.exprs.len()];
        self.eval(point, &mut out)?;
        Ok(out)
    }
}

/// Resolve bindings and parameter values in a list of expressions.
pub fn compile_expressions(
    exprs: &[Expression],
    vars: &[String],
    sys: &DynSystem,
    bindings: &NumericBindings,
) -> Result<CompiledVec> {
    let mut resolved: Vec<Expression> = Vec::with_capacity(exprs.len());
    let mut callables: BTreeMap<String, FuncImpl> = BTreeMap::new();
    for e in exprs {
        let mut cur = e.clone();
        for p in &sys.params {
            if let Some(v) = &p.value {
                cur = cur.substitute_param(&p.name, &Expression::from_rat(v.clone()))?;
            }
        }
        for (name, (arity, binding)) in &bindings.funcs {
            match binding {
                FuncBinding::Body(body) => {
                    cur = cur.bind_func(name, *arity, body)?;
                }
                FuncBinding::Builtin(b) => {
                    let imp = builtin_impl(b)
                        .ok_or_else(|| Error::UnknownSymbol(b.clone()))?;
                    callables.insert(name.clone(), imp);
                }
            }
        }
        if let Some(p) = cur.free_params().into_iter().next() {
            return Err(Error::UnboundSymbol(p));
        }
        for f in cur.func_names() {
            if !callables.contains_key(&f) {
                return Err(Error::UnboundSymbol(f));
            }
        }
        resolved.push(cur);
    }
    Ok(CompiledVec {
        vars: vars.to_vec(),
        exprs: resolved,
        funcs: callables,
    })
}

pub fn compile_system(sys: &DynSystem, bindings: &NumericBindings) -> Result<CompiledVec> {
    compile_expressions(&sys.rhs, &sys.vars, sys, bindings)
}

pub fn compile_field(
    v: &VectorField,
    sys: &DynSystem,
    bindings: &NumericBindings,
) -> Result<CompiledVec> {
    let q = evolutionary_representative(v, sys)?;
    for c in &q.components {
        if c.contains_var(crate::fields::TIME) {
            return Err(Error::Invalid(
                "numeric flows require time-independent components".into(),
            ));
        }
    }
    compile_expressions(&q.components, &sys.vars, sys, bindings)
}

// ----- trajectories and the integrator -----

/// Ordered `(t, x)` samples with stored derivatives for dense output.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub ts: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub fs: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
    pub tol: f64,
}

impl Trajectory {
    pub fn end(&self) -> (&f64, &Vec<f64>) {
        (self.ts.last().unwrap(), self.xs.last().unwrap())
    }

    /// Cubic Hermite interpolation between accepted steps.
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let n = self.ts.len();
        if t <= self.ts[0] {
            return self.xs[0].clone();
        }
        if t >= self.ts[n - 1] {
            return self.xs[n - 1].clone();
        }
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.ts[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = self.ts[hi] - self.ts[lo];
        let s = (t - self.ts[lo]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..self.xs[lo].len())
            .map(|i| {
                h00 * self.xs[lo][i]
                    + h10 * h * self.fs[lo][i]
                    + h01 * self.xs[hi][i]
                    + h11 * h * self.fs[hi][i]
            })
            .collect()
    }
}

const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate over `t_span` with an adaptive Dormand-Prince 5(4) pair.
pub fn integrate(
    rhs: &CompiledVec,
    x0: &[f64],
    t_span: (f64, f64),
    tol: f64,
) -> Result<Trajectory> {
    if !(TOL_RANGE.0..=TOL_RANGE.1).contains(&tol) {
        return Err(Error::BadTolerance(tol));
    }
    let (t0, t1) = t_span;
    let dim = x0.len();
    let span = (t1 - t0).abs().max(MIN_STEP);
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let max_step = span / 10.0;

    let mut t = t0;
    let mut x = x0.to_vec();
    let mut k1 = rhs.eval_vec(&x)?;
    let mut h = (span / 100.0).min(max_step).max(MIN_STEP);
    let mut err_prev: f64 = 1.0;
    let mut traj = Trajectory {
        ts: vec![t],
        xs: vec![x.clone()],
        fs: vec![k1.clone()],
        accepted: 0,
        rejected: 0,
        tol,
    };
    let mut stages: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut rejected_last = false;
    while (t - t1) * dir < 0.0 {
        if h < MIN_STEP {
            return Err(Error::StepUnderflow { t });
        }
        let remaining = (t1 - t).abs();
        if h > remaining {
            h = remaining;
        }
        let hs = h * dir;
        stages[0].copy_from_slice(&k1);
        let mut work = vec![0.0; dim];
        for s in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, row) in DP_A[s].iter().enumerate().take(s + 1) {
                    acc += row * stages[j][i];
                }
                work[i] = x[i] + hs * acc;
            }
            let _ = DP_C[s];
            stages[s + 1] = rhs.eval_vec(&work)?;
        }
        // 5th-order solution sits in the last quadrature row (FSAL).
        let x_new = work.clone();
        let k_new = stages[6].clone();
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (s, c) in DP_E.iter().enumerate() {
                e += c * stages[s][i];
            }
            e *= hs;
            let sc = tol + tol * x[i].abs().max(x_new[i].abs());
            err += (e / sc) * (e / sc);
        }
        err = (err / dim as f64).sqrt();
        if err <= 1.0 {
            t += hs;
            x = x_new;
            k1 = k_new;
            traj.ts.push(t);
            traj.xs.push(x.clone());
            traj.fs.push(k1.clone());
            traj.accepted += 1;
            // PI controller (order 5).
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            let facmax = if rejected_last { 1.0 } else { 5.0 };
            h = (h * fac.clamp(0.2, facmax)).min(max_step);
            err_prev = err.max(1e-10);
            rejected_last = false;
        } else {
            traj.rejected += 1;
            let fac = 0.9 * err.powf(-0.7 / 5.0);
            h *= fac.clamp(0.1, 0.9);
            rejected_last = true;
        }
    }
    Ok(traj)
}

/// Integrate and return the state at each requested time (ascending,
/// starting at 0). The integrator is run segment-wise so every requested
/// time is hit exactly, at controller accuracy rather than interpolation
/// accuracy.
pub fn integrate_at(
    rhs: &CompiledVec,
    x0: &[f64],
    times: &[f64],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut x = x0.to_vec();
    for &target in times {
        if (target - t).abs() > 1e-15 {
            let traj = integrate(rhs, &x, (t, target), tol)?;
            x = traj.xs.last().unwrap().clone();
            t = target;
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn linspace(t_end: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| t_end * k as f64 / (n - 1) as f64)
        .collect()
}

/// Flow of a (time-independent) vector field by parameter `eps`.
pub fn flow_map(field: &CompiledVec, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let traj = integrate(field, x, (0.0, eps), 1e-10)?;
    Ok(traj.xs.last().unwrap().clone())
}

// ----- verification reports -----

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub check: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub details: Vec<(String, f64)>,
}

impl VerificationReport {
    fn new(check: &str, max_residual: f64, tolerance: f64) -> Self {
        VerificationReport {
            check: check.to_string(),
            max_residual,
            tolerance,
            pass: max_residual <= tolerance,
            details: Vec::new(),
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn integrator_tol(tol: f64) -> f64 {
    (tol * 1e-3).clamp(TOL_RANGE.0, 1e-6)
}

/// Push the solution through the flow of `v` pointwise and compare with
/// the re-integration from the mapped initial point (sup norm over the
/// time window). Fields with a time coefficient act through their
/// evolutionary representative.
pub fn verify_symmetry_numeric(
    sys: &DynSystem,
    v: &VectorField,
    x0: &[f64],
    eps: f64,
    t_end: f64,
    tol: f64,
    bindings: &NumericBindings,
) -> Result<VerificationReport> {
    let rhs = compile_system(sys, bindings)?;
    let field = compile_field(v, sys, bindings)?;
    let itol = integrator_tol(tol);
    let n_samples = 101;
    let times = linspace(t_end, n_samples);
    let base = integrate_at(&rhs, x0, &times, itol)?;
    let mapped: Vec<Vec<f64>> = base
        .iter()
        .map(|p| flow_map(&field, eps, p))
        .collect::<Result<_>>()?;
    let tilde = integrate_at(&rhs, &mapped[0], &times, itol)?;
    let mut max_defect = 0.0f64;
    for (m, t) in mapped.iter().zip(&tilde) {
        max_defect = max_defect.max(dist(m, t));
    }
    let mut rep = VerificationReport::new("verify_symmetry_numeric", max_defect, tol);
    rep.details.push(("epsilon".into(), eps));
    rep.details.push(("time".into(), t_end));
    Ok(rep)
}

/// Map the trajectory point set through the flow and measure the directed
/// Hausdorff distance to the re-integrated trajectory, trimming 5% at
/// each end against endpoint artifacts. Pass iff within
/// `tol * (1 + diameter)`.
pub fn verify_orbital_numeric(
    sys: &DynSystem,
    v: &VectorField,
    x0: &[f64],
    eps: f64,
    t_end: f64,
    tol: f64,
    bindings: &NumericBindings,
) -> Result<VerificationReport> {
    let rhs = compile_system(sys, bindings)?;
    let field = compile_field(v, sys, bindings)?;
    let itol = integrator_tol(tol);
    let n_samples = 400;
    let base = integrate_at(&rhs, x0, &linspace(t_end, n_samples), itol)?;
    let mapped: Vec<Vec<f64>> = base
        .iter()
        .map(|p| flow_map(&field, eps, p))
        .collect::<Result<_>>()?;
    // Dense polyline so segment-distance resolution sits well below the
    // scaled tolerance.
    let curve = integrate_at(&rhs, &mapped[0], &linspace(t_end, 20_000), itol)?;
    let trim = n_samples / 20;
    let trimmed: Vec<Vec<f64>> = mapped[trim..n_samples - trim].to_vec();
    let curve_ref = &curve;
    let best_per_point = par::map(trimmed, move |m| {
        let mut best = f64::INFINITY;
        for w in curve_ref.windows(2) {
            best = best.min(point_segment_distance(&m, &w[0], &w[1]));
        }
        best
    });
    let hausdorff = best_per_point.into_iter().fold(0.0f64, f64::max);
    let diameter = {
        let first = &curve[0];
        curve
            .iter()
            .map(|p| dist(p, first))
            .fold(0.0f64, f64::max)
    };
    let scaled_tol = tol * (1.0 + diameter);
    let mut rep = VerificationReport::new("verify_orbital_numeric", hausdorff, scaled_tol);
    rep.details.push(("epsilon".into(), eps));
    rep.details.push(("diameter".into(), diameter));
    Ok(rep)
}

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        ap_ab += (p[i] - a[i]) * d;
    }
    let t = if ab2 > 0.0 {
        (ap_ab / ab2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut acc = 0.0;
    for i in 0..p.len() {
        let proj = a[i] + t * (b[i] - a[i]);
        acc += (p[i] - proj) * (p[i] - proj);
    }
    acc.sqrt()
}

/// Integrate from seeds on the manifold and bound the generator drift.
pub fn verify_invariant_manifold_numeric(
    sys: &DynSystem,
    m: &crate::invariants::AlgebraicManifold,
    t_end: f64,
    tol: f64,
    bindings: &NumericBindings,
) -> Result<VerificationReport> {
    let rhs = compile_system(sys, bindings)?;
    let seeds = sample_variety(&m.generators, 10, 0xc0ffee);
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    let itol = integrator_tol(tol);
    let gens = m.generators.clone();
    let times = linspace(t_end, 200);
    let per_seed: Vec<Result<f64>> = par::map(seeds, move |seed| {
        let samples = integrate_at(&rhs, &seed, &times, itol)?;
        let mut worst = 0.0f64;
        for x in &samples {
            for g in &gens {
                worst = worst.max(g.eval_f64(x).abs());
            }
        }
        Ok(worst)
    });
    let mut max_drift = 0.0f64;
    let mut n = 0usize;
    for r in per_seed {
        max_drift = max_drift.max(r?);
        n += 1;
    }
    let mut rep =
        VerificationReport::new("verify_invariant_manifold_numeric", max_drift, tol);
    rep.details.push(("seeds".into(), n as f64));
    Ok(rep)
}

/// Separation rates of two nearby solutions, fitted in time and in
/// arclength along the reference trajectory. Purely diagnostic.
#[derive(Clone, Debug)]
pub struct SeparationReport {
    pub time_rate: f64,
    pub arclength_rate: f64,
    pub samples: usize,
}

pub fn separation_diagnostic(
    sys: &DynSystem,
    x0: &[f64],
    delta: f64,
    direction: &[f64],
    t_end: f64,
    bindings: &NumericBindings,
) -> Result<SeparationReport> {
    let rhs = compile_system(sys, bindings)?;
    let mut x1 = x0.to_vec();
    let mut nrm = norm2(direction);
    if nrm == 0.0 {
        nrm = 1.0;
    }
    for (xi, d) in x1.iter_mut().zip(direction) {
        *xi += delta * d / nrm;
    }
    let n = 200usize;
    let times = linspace(t_end, n);
    let a = integrate_at(&rhs, x0, &times, 1e-10)?;
    let b = integrate_at(&rhs, &x1, &times, 1e-10)?;
    let mut ts = Vec::with_capacity(n);
    let mut log_sep = Vec::with_capacity(n);
    let mut arclen = Vec::with_capacity(n);
    let mut acc_len = 0.0;
    let mut prev = a[0].clone();
    for (k, t) in times.iter().enumerate() {
        let pa = &a[k];
        let pb = &b[k];
        acc_len += dist(pa, &prev);
        prev = pa.clone();
        let sep = dist(pa, pb);
        if sep > 0.0 && sep.is_finite() {
            ts.push(*t);
            log_sep.push(sep.ln());
            arclen.push(acc_len);
        }
    }
    Ok(SeparationReport {
        time_rate: least_squares_slope(&ts, &log_sep),
        arclength_rate: least_squares_slope(&arclen, &log_sep),
        samples: ts.len(),
    })
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        var += (a - mx) * (a - mx);
    }
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

// ----- variety sampling -----

/// Sample real points on the common zero set of the generators by
/// Gauss-Newton iteration from random seeds. Deterministic for a given
/// seed; points are deduplicated at 1e-8 resolution.
pub fn sample_variety(gens: &[Polynomial], count: usize, seed: u64) -> Vec<Vec<f64>> {
    if gens.is_empty() {
        return Vec::new();
    }
    let n = gens[0].vars().len();
    let grads: Vec<Vec<Polynomial>> = gens.iter().map(|g| g.gradient()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = Vec::new();
    let attempts = 80 * count.max(1);
    for _ in 0..attempts {
        if out.len() >= count {
            break;
        }
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut converged = false;
        for _ in 0..60 {
            let r: Vec<f64> = gens.iter().map(|g| g.eval_f64(&x)).collect();
            let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax < 1e-13 {
                converged = true;
                break;
            }
            // Normal equations with light damping.
            let jac: Vec<Vec<f64>> = grads
                .iter()
                .map(|row| row.iter().map(|p| p.eval_f64(&x)).collect())
                .collect();
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    for (gi, jrow) in jac.iter().enumerate() {
                        a[i][j] += jrow[i] * jrow[j];
                        let _ = gi;
                    }
                }
                a[i][i] += 1e-12;
                for (gi, jrow) in jac.iter().enumerate() {
                    b[i] -= jrow[i] * r[gi];
                }
            }
            match solve_dense(&mut a, &mut b) {
                Some(step) => {
                    let slen = norm2(&step);
                    for (xi, s) in x.iter_mut().zip(&step) {
                        *xi += s;
                    }
                    if !x.iter().all(|v| v.is_finite()) {
                        break;
                    }
                    if slen < 1e-15 {
                        break;
                    }
                }
                None => break,
            }
        }
        if converged && out.iter().all(|p| dist(p, &x) > 1e-8) {
            out.push(x);
        }
    }
    out
}

fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| {
            a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()
        })?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in (c + 1)..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let mut acc = b[c];
        for k in (c + 1)..n {
            acc -= a[c][k] * x[k];
        }
        x[c] = acc / a[c][c];
    }
    Some(x)
}

// ----- coordinate map roundtrip -----

/// Numeric fallback for the map invertibility invariant: sample points in
/// the declared box and check `W(X(w)) = w` to the tolerance.
pub fn verify_map_roundtrip(map: &CoordinateMap, points: usize, tol: f64) -> Result<()> {
    let mut funcs: BTreeMap<String, FuncImpl> = BTreeMap::new();
    let mut bodies: Vec<(String, usize, Expression)> = Vec::new();
    for (name, binding) in &map.bindings {
        match binding {
            MapBinding::Builtin(b) => {
                let imp =
                    builtin_impl(b).ok_or_else(|| Error::UnknownSymbol(b.clone()))?;
                funcs.insert(name.clone(), imp);
            }
            MapBinding::Body(body) => {
                let arity = map
                    .funcs
                    .iter()
                    .find(|f| &f.name == name)
                    .map(|f| f.arity)
                    .unwrap_or(1);
                bodies.push((name.clone(), arity, body.clone()));
            }
        }
    }
    let resolve = |e: &Expression| -> Result<Expression> {
        let mut cur = e.clone();
        for (name, arity, body) in &bodies {
            cur = cur.bind_func(name, *arity, body)?;
        }
        Ok(cur)
    };
    let forward: Vec<Expression> = map
        .forward
        .iter()
        .map(|e| resolve(e))
        .collect::<Result<_>>()?;
    let inverse: Vec<Expression> = map
        .inverse
        .iter()
        .map(|e| resolve(e))
        .collect::<Result<_>>()?;
    for e in forward.iter().chain(inverse.iter()) {
        for f in e.func_names() {
            if !funcs.contains_key(&f) {
                return Err(Error::NonInvertibleMap(format!(
                    "formal symbol `{f}` needs a numeric binding for the sampling check"
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x10ad);
    use num::ToPrimitive;
    let ranges: Vec<(f64, f64)> = map
        .new_vars
        .iter()
        .map(|v| {
            map.sample_box
                .iter()
                .find(|(name, _)| name == v)
                .map(|(_, (lo, hi))| {
                    (lo.to_f64().unwrap_or(-1.0), hi.to_f64().unwrap_or(1.0))
                })
                .unwrap_or((-1.0, 1.0))
        })
        .collect();
    for _ in 0..points {
        let w: Vec<f64> = ranges
            .iter()
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect();
        let mut ctx = EvalCtx::new();
        ctx.funcs = funcs.clone();
        for (name, val) in map.new_vars.iter().zip(&w) {
            ctx.vars.insert(name.clone(), *val);
        }
        let x: Vec<f64> = inverse
            .iter()
            .map(|e| e.evaluate(&ctx))
            .collect::<Result<_>>()?;
        let mut ctx2 = EvalCtx::new();
        ctx2.funcs = funcs.clone();
        for (name, val) in map.old_vars.iter().zip(&x) {
            ctx2.vars.insert(name.clone(), *val);
        }
        for (j, e) in forward.iter().enumerate() {
            let back = e.evaluate(&ctx2)?;
            if (back - w[j]).abs() > tol {
                return Err(Error::NonInvertibleMap(format!(
                    "roundtrip error {:e} at sampled point",
                    (back - w[j]).abs()
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn xy() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn x() -> Expression {
        Expression::var("x")
    }

    fn y() -> Expression {
        Expression::var("y")
    }

    fn rotation_system() -> DynSystem {
        DynSystem {
            vars: xy(),
            rhs: vec![y().neg(), x()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        }
    }

    fn limit_cycle() -> DynSystem {
        let r2 = x().powi(2).unwrap().add(&y().powi(2).unwrap());
        let alpha = Expression::one().sub(&r2);
        DynSystem {
            vars: xy(),
            rhs: vec![alpha.mul(&x()).sub(&y()), x().add(&alpha.mul(&y()))],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        }
    }

    #[test]
    fn circular_orbit_returns_home() {
        let sys = rotation_system();
        let rhs = compile_system(&sys, &NumericBindings::new()).unwrap();
        let traj = integrate(&rhs, &[1.0, 0.0], (0.0, 2.0 * PI), 1e-9).unwrap();
        let (_, end) = traj.end();
        assert!((end[0] - 1.0).abs() < 1e-7);
        assert!(end[1].abs() < 1e-7);
    }

    #[test]
    fn exponential_growth_reaches_e() {
        let sys = DynSystem {
            vars: vec!["x".into()],
            rhs: vec![x()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let rhs = compile_system(&sys, &NumericBindings::new()).unwrap();
        let traj = integrate(&rhs, &[1.0], (0.0, 1.0), 1e-9).unwrap();
        assert!((traj.end().1[0] - std::f64::consts::E).abs() < 1e-7);
    }

    #[test]
    fn limit_cycle_attracts() {
        // Closed form: r(t)^2 = 1 / (1 + (1/r0^2 - 1) e^{-2t}).
        let sys = limit_cycle();
        let rhs = compile_system(&sys, &NumericBindings::new()).unwrap();
        let traj = integrate(&rhs, &[2.0, 0.0], (0.0, 20.0), 1e-9).unwrap();
        let end = traj.end().1;
        let r = (end[0] * end[0] + end[1] * end[1]).sqrt();
        assert!((r - 1.0).abs() < 1e-4);
        let r0: f64 = 2.0;
        let expected =
            (1.0 / (1.0 + (1.0 / (r0 * r0) - 1.0) * (-2.0f64 * 20.0).exp())).sqrt();
        assert!((r - expected).abs() < 1e-6);
    }

    #[test]
    fn integrator_order_scaling() {
        // Global error decreases by at least a factor 10 per two decades
        // of tolerance.
        let sys = rotation_system();
        let rhs = compile_system(&sys, &NumericBindings::new()).unwrap();
        let err_at = |tol: f64| -> f64 {
            let traj = integrate(&rhs, &[1.0, 0.0], (0.0, 2.0 * PI), tol).unwrap();
            let end = traj.end().1;
            ((end[0] - 1.0).powi(2) + end[1].powi(2)).sqrt()
        };
        let e6 = err_at(1e-6);
        let e8 = err_at(1e-8);
        let e10 = err_at(1e-10);
        assert!(e6 > e8 && e8 > e10);
        assert!(e6 / e8 >= 10.0);
        assert!(e8 / e10 >= 10.0);
    }

    #[test]
    fn tolerance_range_enforced() {
        let sys = rotation_system();
        let rhs = compile_system(&sys, &NumericBindings::new()).unwrap();
        assert!(matches!(
            integrate(&rhs, &[1.0, 0.0], (0.0, 1.0), 1e-2),
            Err(Error::BadTolerance(_))
        ));
    }

    #[test]
    fn rotation_flow_quarter_turn() {
        // X_r by ε = π/2 sends (1,0) to (0,1).
        let sys = rotation_system();
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let field = compile_field(&v, &sys, &NumericBindings::new()).unwrap();
        let p = flow_map(&field, PI / 2.0, &[1.0, 0.0]).unwrap();
        assert!((p[0]).abs() < 1e-8);
        assert!((p[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn scaling_flow_is_exponential() {
        let sys = rotation_system();
        let v = VectorField {
            vars: xy(),
            components: vec![x(), y()],
            tau: None,
        };
        let field = compile_field(&v, &sys, &NumericBindings::new()).unwrap();
        let eps = 0.37;
        let p = flow_map(&field, eps, &[1.0, 1.0]).unwrap();
        assert!((p[0] - eps.exp()).abs() < 1e-8);
        assert!((p[1] - eps.exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_epsilon_flow_is_identity() {
        let sys = rotation_system();
        let field = compile_field(&sys.field(), &sys, &NumericBindings::new()).unwrap();
        assert_eq!(flow_map(&field, 0.0, &[0.3, -0.4]).unwrap(), vec![0.3, -0.4]);
    }

    #[test]
    fn flow_roundtrip_inverse() {
        let sys = limit_cycle();
        let field = compile_field(&sys.field(), &sys, &NumericBindings::new()).unwrap();
        let x0 = [0.7, -0.2];
        let fwd = flow_map(&field, 0.4, &x0).unwrap();
        let back = flow_map(&field, -0.4, &fwd).unwrap();
        assert!(dist(&back, &x0) < 1e-8);
    }

    #[test]
    fn rotation_passes_symmetry_verification() {
        let sys = limit_cycle();
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let rep = verify_symmetry_numeric(
            &sys,
            &v,
            &[2.0, 0.0],
            0.3,
            10.0,
            1e-6,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(rep.pass, "defect {}", rep.max_residual);
    }

    #[test]
    fn scaling_fails_symmetry_verification() {
        let sys = limit_cycle();
        let v = VectorField {
            vars: xy(),
            components: vec![x(), y()],
            tau: None,
        };
        let rep = verify_symmetry_numeric(
            &sys,
            &v,
            &[2.0, 0.0],
            0.3,
            10.0,
            1e-6,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(!rep.pass);
        assert!(rep.max_residual > 1e-3);
    }

    #[test]
    fn zero_epsilon_passes_trivially() {
        let sys = limit_cycle();
        let v = VectorField {
            vars: xy(),
            components: vec![y().neg(), x()],
            tau: None,
        };
        let rep = verify_symmetry_numeric(
            &sys,
            &v,
            &[2.0, 0.0],
            0.0,
            5.0,
            1e-6,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(rep.pass);
        assert!(rep.max_residual < 1e-7);
    }

    #[test]
    fn scaling_is_orbital_numerically_on_radial_flow() {
        // X_1 system with omega(u) = u: scaling maps circles to circles
        // but is not a proper symmetry.
        let r2 = x().powi(2).unwrap().add(&y().powi(2).unwrap());
        let om = Expression::func("omega", vec![0], vec![r2]);
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![om.mul(&y()).neg(), om.mul(&x())],
            params: vec![],
            funcs: vec![crate::fields::FuncDecl { name: "omega".into(), arity: 1 }],
            excluded: vec![],
        };
        let bindings =
            NumericBindings::new().bind_body("omega", 1, Expression::var("u1"));
        let v = VectorField {
            vars: xy(),
            components: vec![x(), y()],
            tau: None,
        };
        let orb =
            verify_orbital_numeric(&sys, &v, &[1.0, 0.0], 0.2, 20.0, 1e-6, &bindings)
                .unwrap();
        assert!(orb.pass, "hausdorff {}", orb.max_residual);
        let sym =
            verify_symmetry_numeric(&sys, &v, &[1.0, 0.0], 0.2, 20.0, 1e-6, &bindings)
                .unwrap();
        assert!(!sym.pass);
    }

    #[test]
    fn trivial_rescaling_is_orbital() {
        let sys = limit_cycle();
        let v = sys.field().scale(&Expression::from_int(2));
        let rep = verify_orbital_numeric(
            &sys,
            &v,
            &[2.0, 0.0],
            0.1,
            10.0,
            1e-6,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn manifold_drift_bounded_on_circle() {
        let sys = limit_cycle();
        let vars = xy();
        let r2m1 = Polynomial::from_expression(
            &x().powi(2)
                .unwrap()
                .add(&y().powi(2).unwrap())
                .sub(&Expression::one()),
            &vars,
        )
        .unwrap();
        let m = crate::invariants::AlgebraicManifold::new(&vars, vec![r2m1]);
        let rep = verify_invariant_manifold_numeric(
            &sys,
            &m,
            20.0,
            1e-6,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(rep.pass, "drift {}", rep.max_residual);
    }

    #[test]
    fn non_invariant_plane_drifts() {
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![y(), Expression::zero()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let vars = xy();
        let gen = Polynomial::from_expression(&x().sub(&Expression::one()), &vars).unwrap();
        let m = crate::invariants::AlgebraicManifold::new(&vars, vec![gen]);
        let rep = verify_invariant_manifold_numeric(
            &sys,
            &m,
            5.0,
            1e-6,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn separation_rate_of_linear_growth() {
        // ẋ = x, ẏ = y: separation grows like e^t; fitted rate ≈ 1.
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![x(), y()],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let rep = separation_diagnostic(
            &sys,
            &[1.0, 0.0],
            1e-4,
            &[0.0, 1.0],
            5.0,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!((rep.time_rate - 1.0).abs() < 0.05, "rate {}", rep.time_rate);
    }

    #[test]
    fn separation_rates_split_for_slow_drive() {
        // ẋ = e^{-x}, ẏ = e^{-x} y: trajectories y = c e^x separate
        // exponentially in arclength but only linearly in time.
        let ex = Expression::exp_of(&x().neg());
        let sys = DynSystem {
            vars: xy(),
            rhs: vec![ex.clone(), ex.mul(&y())],
            params: vec![],
            funcs: vec![],
            excluded: vec![],
        };
        let rep = separation_diagnostic(
            &sys,
            &[0.0, 0.0],
            1e-3,
            &[0.0, 1.0],
            50.0,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(rep.time_rate < 0.1, "time rate {}", rep.time_rate);
        assert!(rep.arclength_rate > 0.5, "arc rate {}", rep.arclength_rate);
    }

    #[test]
    fn harmonic_oscillator_rates_vanish() {
        let sys = rotation_system();
        let rep = separation_diagnostic(
            &sys,
            &[1.0, 0.0],
            1e-5,
            &[1.0, 0.0],
            10.0,
            &NumericBindings::new(),
        )
        .unwrap();
        assert!(rep.time_rate.abs() < 0.02);
        assert!(rep.arclength_rate.abs() < 0.02);
    }

    #[test]
    fn variety_sampling_hits_circle() {
        let vars = xy();
        let r2m1 = Polynomial::from_expression(
            &x().powi(2)
                .unwrap()
                .add(&y().powi(2).unwrap())
                .sub(&Expression::one()),
            &vars,
        )
        .unwrap();
        let pts = sample_variety(&[r2m1], 25, 7);
        assert!(pts.len() >= 20);
        for p in &pts {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_variety_finds_nothing() {
        let vars = xy();
        let gen = Polynomial::from_expression(
            &x().powi(2)
                .unwrap()
                .add(&y().powi(2).unwrap())
                .add(&Expression::one()),
            &vars,
        )
        .unwrap();
        assert!(sample_variety(&[gen], 5, 11).is_empty());
    }

    #[test]
    fn unbound_formal_symbol_rejected() {
        let om = Expression::func("omega", vec![0], vec![x()]);
        let sys = DynSystem {
            vars: vec!["x".into()],
            rhs: vec![om],
            params: vec![],
            funcs: vec![crate::fields::FuncDecl { name: "omega".into(), arity: 1 }],
            excluded: vec![],
        };
        assert!(matches!(
            compile_system(&sys, &NumericBindings::new()),
            Err(Error::UnboundSymbol(_))
        ));
    }
}
