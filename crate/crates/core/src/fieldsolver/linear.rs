use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use super::{Problem, FREE, RESIDUAL_TOLERANCE};
use crate::error::{Error, Result};

pub(super) struct LinearSolution {
    /// Potential of every free node, indexed by node (zero elsewhere).
    pub free: Vec<f64>,
    /// Potential of every conductor, floating ones solved for.
    pub conductor_potentials: Vec<f64>,
    pub residual: f64,
}

enum Dof {
    Unknown(usize),
    Fixed(f64),
}

/// Assembles the SPD system on free nodes plus one unknown per floating
/// conductor, factors it and solves.
pub(super) fn solve(problem: &Problem<'_>) -> Result<LinearSolution> {
    let owner = &problem.owner;
    let mut index = vec![usize::MAX; owner.len()];
    let mut n = 0;
    for (node, &o) in owner.iter().enumerate() {
        if o == FREE {
            index[node] = n;
            n += 1;
        }
    }
    let mut floating_index = vec![usize::MAX; problem.potentials.len()];
    for (c, p) in problem.potentials.iter().enumerate() {
        if p.is_none() {
            floating_index[c] = n;
            n += 1;
        }
    }
    let dof = |node: usize| -> Dof {
        let o = owner[node];
        if o == FREE {
            Dof::Unknown(index[node])
        } else {
            match problem.potentials[o as usize] {
                Some(v) => Dof::Fixed(v),
                None => Dof::Unknown(floating_index[o as usize]),
            }
        }
    };

    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut lower: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * owner.len());
    problem.for_each_link(|p, q, g| match (dof(p), dof(q)) {
        (Dof::Unknown(a), Dof::Unknown(b)) if a != b => {
            diag[a] += g;
            diag[b] += g;
            lower.push((a.max(b), a.min(b), -g));
        }
        (Dof::Unknown(a), Dof::Fixed(v)) | (Dof::Fixed(v), Dof::Unknown(a)) => {
            diag[a] += g;
            rhs[a] += g * v;
        }
        _ => {}
    });

    let mut conductor_potentials: Vec<f64> = problem
        .potentials
        .iter()
        .map(|p| p.unwrap_or(0.0))
        .collect();
    let mut free = vec![0.0; owner.len()];
    if n == 0 {
        return Ok(LinearSolution {
            free,
            conductor_potentials,
            residual: 0.0,
        });
    }
    if let Some(k) = diag.iter().position(|d| *d <= 0.0) {
        return Err(Error::Singular(format!(
            "unknown {k} is not coupled to anything"
        )));
    }

    lower.sort_unstable_by_key(|&(i, j, _)| (j, i));
    let mut merged: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(lower.len() + n);
    for (k, d) in diag.iter().enumerate() {
        merged.push(Triplet::new(k, k, *d));
    }
    for (r, c, v) in lower {
        match merged.last_mut() {
            Some(t) if t.row == r && t.col == c => t.val += v,
            _ => merged.push(Triplet::new(r, c, v)),
        }
    }

    let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &merged)
        .map_err(|e| Error::Singular(format!("assembly failed: {e:?}")))?;
    let llt = matrix
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::Singular(format!("Cholesky factorisation failed: {e}")))?;

    let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    llt.solve_in_place(x.as_mut());
    let mut solution: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();

    let mut residual = relative_residual(&merged, &solution, &rhs, b_norm);
    // Iterative refinement on the same factor.
    for _ in 0..3 {
        if residual <= RESIDUAL_TOLERANCE * 1e-2 {
            break;
        }
        let r = residual_vector(&merged, &solution, &rhs);
        let mut dx = faer::Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
        llt.solve_in_place(dx.as_mut());
        for (s, i) in solution.iter_mut().zip(0..n) {
            *s += dx[(i, 0)];
        }
        residual = relative_residual(&merged, &solution, &rhs, b_norm);
    }
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::NonConvergence {
            residual,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }

    for (node, &k) in index.iter().enumerate() {
        if k != usize::MAX {
            free[node] = solution[k];
        }
    }
    for (c, &k) in floating_index.iter().enumerate() {
        if k != usize::MAX {
            conductor_potentials[c] = solution[k];
        }
    }
    Ok(LinearSolution {
        free,
        conductor_potentials,
        residual,
    })
}

/// `b - A x` for a symmetric matrix stored as its lower triangle.
fn residual_vector(lower: &[Triplet<usize, usize, f64>], x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = b.to_vec();
    for t in lower {
        r[t.row] -= t.val * x[t.col];
        if t.row != t.col {
            r[t.col] -= t.val * x[t.row];
        }
    }
    r
}

fn relative_residual(
    lower: &[Triplet<usize, usize, f64>],
    x: &[f64],
    b: &[f64],
    b_norm: f64,
) -> f64 {
    if b_norm == 0.0 {
        return if x.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let r = residual_vector(lower, x, b);
    r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm
}
