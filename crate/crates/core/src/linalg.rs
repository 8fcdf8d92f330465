//! Exact linear algebra over the rationals.
//!
//! Elimination runs fraction-free (Bareiss) on a denominator-cleared
//! integer matrix, then back-normalizes to reduced row echelon form, so
//! every intermediate value is exact and the echelon form is
//! deterministic for a given row order.

use num::{BigInt, Integer, One, Signed, Zero};

use crate::symcore::Rat;

/// Reduced row echelon form in place. Returns the pivot column of each
/// pivot row, in row order.
pub fn rref(m: &mut Vec<Vec<Rat>>) -> Vec<usize> {
    if m.is_empty() {
        return Vec::new();
    }
    let cols = m[0].len();
    // Clear denominators row-wise to integers.
    let mut im: Vec<Vec<BigInt>> = m
        .iter()
        .map(|row| {
            let lcm = row
                .iter()
                .fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
            row.iter()
                .map(|c| c.numer() * (&lcm / c.denom()))
                .collect()
        })
        .collect();

    // Forward Bareiss elimination (rows below each pivot).
    let rows = im.len();
    let mut pivots: Vec<usize> = Vec::new();
    let mut prev = BigInt::one();
    let mut r = 0usize;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !im[i][c].is_zero()) else {
            continue;
        };
        im.swap(r, p);
        let (top, rest) = im.split_at_mut(r + 1);
        let pivot_row = &top[r];
        let pivot = pivot_row[c].clone();
        for row in rest.iter_mut() {
            let factor = row[c].clone();
            for j in 0..cols {
                let v = &pivot * &row[j] - &factor * &pivot_row[j];
                // Exact by the Bareiss identity.
                row[j] = v / &prev;
            }
        }
        prev = pivot;
        pivots.push(c);
        r += 1;
    }

    // Back to rationals, normalize pivot rows to 1.
    *m = im
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| Rat::from_integer(v))
                .collect::<Vec<_>>()
        })
        .collect();
    for (ri, &pc) in pivots.iter().enumerate() {
        let inv = m[ri][pc].clone();
        for v in m[ri].iter_mut() {
            *v = &*v / &inv;
        }
    }
    // Clear entries above pivots (rows below are already zero there).
    for (ri, &pc) in pivots.iter().enumerate() {
        for i in 0..ri {
            if m[i][pc].is_zero() {
                continue;
            }
            let f = m[i][pc].clone();
            for j in 0..cols {
                let sub = &f * &m[ri][j];
                m[i][j] = &m[i][j] - &sub;
            }
        }
    }
    pivots
}

/// Basis of the nullspace of `a` (rows are equations), reduced-echelon
/// normalized and scaled to primitive integer vectors with a positive
/// first nonzero entry. Deterministic for a given row order.
pub fn nullspace(a: &[Vec<Rat>]) -> Vec<Vec<Rat>> {
    if a.is_empty() {
        return Vec::new();
    }
    let cols = a[0].len();
    let mut m: Vec<Vec<Rat>> = a.to_vec();
    let pivots = rref(&mut m);
    let pivot_set: std::collections::BTreeSet<usize> = pivots.iter().copied().collect();
    let free: Vec<usize> = (0..cols).filter(|c| !pivot_set.contains(c)).collect();
    let mut basis = Vec::with_capacity(free.len());
    for &fc in &free {
        let mut v = vec![Rat::zero(); cols];
        v[fc] = Rat::one();
        for (ri, &pc) in pivots.iter().enumerate() {
            v[pc] = -m[ri][fc].clone();
        }
        basis.push(primitive_vector(v));
    }
    basis
}

/// Solve `a x = b` exactly. `Ok(None)` when inconsistent; free variables
/// are set to zero when the system is underdetermined.
pub fn solve(a: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    if a.is_empty() {
        return if b.iter().all(|v| v.is_zero()) {
            Some(Vec::new())
        } else {
            None
        };
    }
    let cols = a[0].len();
    let mut m: Vec<Vec<Rat>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let pivots = rref(&mut m);
    // Inconsistent iff a pivot lands in the augmented column.
    if pivots.iter().any(|&c| c == cols) {
        return None;
    }
    let mut x = vec![Rat::zero(); cols];
    for (ri, &pc) in pivots.iter().enumerate() {
        x[pc] = m[ri][cols].clone();
    }
    Some(x)
}

/// Solve expecting a unique solution; `None` when inconsistent or
/// underdetermined.
pub fn solve_unique(a: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    if a.is_empty() {
        return None;
    }
    let cols = a[0].len();
    let mut m: Vec<Vec<Rat>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let pivots = rref(&mut m);
    if pivots.iter().any(|&c| c == cols) || pivots.len() != cols {
        return None;
    }
    let mut x = vec![Rat::zero(); cols];
    for (ri, &pc) in pivots.iter().enumerate() {
        x[pc] = m[ri][cols].clone();
    }
    Some(x)
}

pub fn rank(a: &[Vec<Rat>]) -> usize {
    let mut m = a.to_vec();
    rref(&mut m).len()
}

/// Scale a rational vector to primitive integers with positive leading
/// nonzero entry.
pub fn primitive_vector(v: Vec<Rat>) -> Vec<Rat> {
    let mut num_gcd = BigInt::zero();
    let mut den_lcm = BigInt::one();
    for c in &v {
        if !c.is_zero() {
            num_gcd = num_gcd.gcd(&c.numer().abs());
            den_lcm = den_lcm.lcm(c.denom());
        }
    }
    if num_gcd.is_zero() {
        return v;
    }
    let mut scale = Rat::new(den_lcm, num_gcd);
    if let Some(first) = v.iter().find(|c| !c.is_zero()) {
        if first.is_negative() {
            scale = -scale;
        }
    }
    v.into_iter().map(|c| c * &scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::{rat, rat_int};

    fn rv(vals: &[i64]) -> Vec<Rat> {
        vals.iter().map(|v| rat_int(*v)).collect()
    }

    #[test]
    fn rref_identity_like() {
        let mut m = vec![rv(&[2, 0, 4]), rv(&[0, 3, 6])];
        let pivots = rref(&mut m);
        assert_eq!(pivots, vec![0, 1]);
        assert_eq!(m[0], rv(&[1, 0, 2]));
        assert_eq!(m[1], rv(&[0, 1, 2]));
    }

    #[test]
    fn nullspace_of_rank_one() {
        // x + y + z = 0 has a two-dimensional nullspace.
        let a = vec![rv(&[1, 1, 1])];
        let ns = nullspace(&a);
        assert_eq!(ns.len(), 2);
        for v in &ns {
            let s: Rat = v.iter().cloned().sum();
            assert!(s.is_zero());
        }
    }

    #[test]
    fn solve_unique_2x2() {
        let a = vec![rv(&[2, 1]), rv(&[1, -1])];
        let b = rv(&[5, 1]);
        let x = solve_unique(&a, &b).unwrap();
        assert_eq!(x, vec![rat_int(2), rat_int(1)]);
    }

    #[test]
    fn solve_detects_inconsistency() {
        let a = vec![rv(&[1, 1]), rv(&[2, 2])];
        assert!(solve(&a, &rv(&[1, 3])).is_none());
        assert!(solve(&a, &rv(&[1, 2])).is_some());
    }

    #[test]
    fn primitive_vector_scaling() {
        let v = vec![rat(-1, 2), rat_int(0), rat(3, 4)];
        assert_eq!(primitive_vector(v), vec![rat_int(2), rat_int(0), rat_int(-3)]);
    }

    #[test]
    fn rank_of_dependent_rows() {
        let a = vec![rv(&[1, 2]), rv(&[2, 4]), rv(&[0, 1])];
        assert_eq!(rank(&a), 2);
    }
}
