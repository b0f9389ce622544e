use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::Interface;
use crate::participation::SensitivityVector;

/// Pools up to this size are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 20;

/// Relative tolerance under which two determinants count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected design names in lexicographic order.
    pub designs: Vec<String>,
    /// D-optimality criterion of the subset (normalised columns).
    pub determinant: f64,
    /// Condition number of the selected rows; infinite when rank deficient.
    pub condition_number: f64,
}

/// Pool-normalised design matrix: SM, SV, MV and bulk columns, with
/// all-zero columns dropped.
fn pool_matrix(candidates: &[SensitivityVector]) -> DMatrix<f64> {
    let n = candidates.len();
    let mut cols: Vec<Vec<f64>> = Interface::ALL
        .iter()
        .map(|&i| candidates.iter().map(|c| c.get(i)).collect())
        .collect();
    cols.push(vec![1.0; n]);
    cols.retain(|c| c.iter().any(|v| *v != 0.0));
    for c in &mut cols {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.iter_mut().for_each(|v| *v /= norm);
    }
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// `det(A^T A)` with at least as many rows as columns, else `det(A A^T)`.
fn criterion(a: &DMatrix<f64>, rows: &[usize]) -> f64 {
    let sub = a.select_rows(rows);
    let gram = if sub.nrows() >= sub.ncols() {
        sub.tr_mul(&sub)
    } else {
        &sub * sub.transpose()
    };
    gram.determinant().max(0.0)
}

fn condition(a: &DMatrix<f64>, rows: &[usize]) -> f64 {
    let sub = a.select_rows(rows);
    if sub.nrows() < sub.ncols() {
        return f64::INFINITY;
    }
    let sv = sub.singular_values();
    let min = sv.min();
    if min > f64::EPSILON * sv.max() {
        sv.max() / min
    } else {
        f64::INFINITY
    }
}

/// Larger determinant wins; near-ties go to the smaller list of names.
fn better(det: f64, names: &[&str], best_det: f64, best_names: &[&str]) -> bool {
    let scale = det.abs().max(best_det.abs());
    if (det - best_det).abs() > TIE_TOLERANCE * scale {
        det > best_det
    } else {
        names < best_names
    }
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// D-optimal `k`-subset of `candidates`: maximises the information
/// determinant of SM, SV, MV and bulk columns. Ties go to the
/// lexicographically smallest list of names.
pub fn select_designs(candidates: &[SensitivityVector], k: usize) -> Result<Selection> {
    let n = candidates.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} designs from {n} candidates"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| candidates[a].design.cmp(&candidates[b].design));
    let sorted: Vec<SensitivityVector> = order.iter().map(|&i| candidates[i].clone()).collect();
    for w in sorted.windows(2) {
        if w[0].design == w[1].design {
            return Err(Error::InvalidArgument(format!(
                "duplicate candidate {}",
                w[0].design
            )));
        }
    }
    let names: Vec<&str> = sorted.iter().map(|c| c.design.as_str()).collect();
    let a = pool_matrix(&sorted);
    let pick = |rows: &[usize]| -> Vec<&str> { rows.iter().map(|&i| names[i]).collect() };

    let best = if n <= EXHAUSTIVE_LIMIT {
        let mut idx: Vec<usize> = (0..k).collect();
        let mut best = (idx.clone(), criterion(&a, &idx));
        while next_combination(&mut idx, n) {
            let det = criterion(&a, &idx);
            if better(det, &pick(&idx), best.1, &pick(&best.0)) {
                best = (idx.clone(), det);
            }
        }
        best
    } else {
        // Greedy forward selection followed by Fedorov-style exchanges.
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        while chosen.len() < k {
            let mut best: Option<(usize, f64)> = None;
            for c in (0..n).filter(|c| !chosen.contains(c)) {
                let mut trial = chosen.clone();
                trial.push(c);
                trial.sort_unstable();
                let det = criterion(&a, &trial);
                let take = match best {
                    None => true,
                    Some((_, d)) => det > d * (1.0 + TIE_TOLERANCE),
                };
                if take {
                    best = Some((c, det));
                }
            }
            chosen.push(best.expect("pool larger than subset").0);
            chosen.sort_unstable();
        }
        let mut det = criterion(&a, &chosen);
        loop {
            let mut improved = false;
            'outer: for pos in 0..k {
                for c in (0..n).filter(|c| !chosen.contains(c)) {
                    let mut trial = chosen.clone();
                    trial[pos] = c;
                    trial.sort_unstable();
                    let d = criterion(&a, &trial);
                    if better(d, &pick(&trial), det, &pick(&chosen)) {
                        chosen = trial;
                        det = d;
                        improved = true;
                        break 'outer;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        (chosen, det)
    };
    Ok(Selection {
        designs: best.0.iter().map(|&i| names[i].to_string()).collect(),
        determinant: best.1,
        condition_number: condition(&a, &best.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(name: &str, sm: f64, s: f64, mv: f64) -> SensitivityVector {
        SensitivityVector::new(name, sm, s, mv)
    }

    #[test]
    fn picks_orthogonal_pair() {
        let c = vec![
            sv("a", 1.0, 0.0, 0.0),
            sv("b", 0.0, 1.0, 0.0),
            sv("c", 1.0, 1.0, 0.0),
        ];
        assert_eq!(select_designs(&c, 2).unwrap().designs, vec!["a", "b"]);
    }

    #[test]
    fn identical_candidates_tie_break_by_name() {
        let c = vec![
            sv("z", 1.0, 2.0, 3.0),
            sv("m", 1.0, 2.0, 3.0),
            sv("b", 1.0, 2.0, 3.0),
        ];
        assert_eq!(select_designs(&c, 2).unwrap().designs, vec!["b", "m"]);
    }

    #[test]
    fn full_pool_is_identity() {
        let c = vec![
            sv("Hero", 7.4e3, 2.9e3, 74.0),
            sv("Guard", 5.0e4, 1.9e4, 5.0e2),
            sv("Skeleton", 9.7e3, 3.7e3, 97.0),
            sv("ExtendedHero", 3.7e3, 1.4e3, 37.0),
        ];
        let s = select_designs(&c, 4).unwrap();
        assert_eq!(s.designs, vec!["ExtendedHero", "Guard", "Hero", "Skeleton"]);
    }

    #[test]
    fn rejects_bad_k() {
        let c = vec![sv("a", 1.0, 0.0, 0.0)];
        assert!(select_designs(&c, 2).is_err());
        assert!(select_designs(&c, 0).is_err());
    }

    #[test]
    fn greedy_matches_exhaustive_on_structured_pool() {
        let pool: Vec<SensitivityVector> = (0..24)
            .map(|i| {
                let t = i as f64;
                sv(
                    &format!("d{i:02}"),
                    1.0 + t,
                    1.0 + (t * 0.7).sin().abs() * 5.0,
                    0.0,
                )
            })
            .collect();
        let greedy = select_designs(&pool, 3).unwrap();
        let a = pool_matrix(&pool);
        let mut idx = vec![0, 1, 2];
        let mut best = criterion(&a, &idx);
        while next_combination(&mut idx, pool.len()) {
            best = best.max(criterion(&a, &idx));
        }
        assert!(
            greedy.determinant >= best * (1.0 - 1e-9),
            "{} vs {best}",
            greedy.determinant
        );
    }
}
