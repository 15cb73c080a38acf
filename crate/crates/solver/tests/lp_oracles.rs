use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbpp_solver::{solve_lp, LinearProgram, LpStatus, ObjectiveSense, Sense};

/// Dense Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(p, c);
        b.swap(p, c);
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for k in c..n {
                a[i][k] -= f * a[c][k];
            }
            b[i] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Optimum of a bounded LP by enumerating every basis of active constraints.
fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_cols();
    // Each candidate hyperplane: (coefficients, rhs).
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.coeffs {
            a[j] += v;
        }
        planes.push((a, row.rhs));
    }
    for j in 0..n {
        for bound in [lp.lower[j], lp.upper[j]] {
            if bound.is_finite() {
                let mut a = vec![0.0; n];
                a[j] = 1.0;
                planes.push((a, bound));
            }
        }
    }
    let mut best: Option<f64> = None;
    let k = planes.len();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_dense(a, b) {
            if lp.max_violation(&x) <= 1e-7 {
                let v = lp.evaluate(&x);
                let better = match (best, lp.sense) {
                    (None, _) => true,
                    (Some(b), ObjectiveSense::Minimize) => v < b,
                    (Some(b), ObjectiveSense::Maximize) => v > b,
                };
                if better {
                    best = Some(v);
                }
            }
        }
        // Next combination.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for t in i + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn random_small_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=5);
    let sense = if rng.random_bool(0.5) { ObjectiveSense::Minimize } else { ObjectiveSense::Maximize };
    let mut lp = LinearProgram::new(sense);
    for _ in 0..n {
        let lo = if rng.random_bool(0.3) { rng.random_range(-3.0..0.0) } else { 0.0 };
        let hi = lo + rng.random_range(0.5..6.0);
        lp.add_col(lo, hi, rng.random_range(-5.0..5.0));
    }
    for _ in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                coeffs.push((j, rng.random_range(-4.0..4.0)));
            }
        }
        let s = match rng.random_range(0..3) {
            0 => Sense::Le,
            1 => Sense::Ge,
            _ => Sense::Eq,
        };
        lp.add_row(coeffs, s, rng.random_range(-4.0..6.0));
    }
    lp
}

#[test]
fn matches_vertex_enumeration_on_small_random_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut feasible = 0;
    for case in 0..400 {
        let lp = random_small_lp(&mut rng);
        let sol = solve_lp(&lp).unwrap();
        match vertex_enumeration(&lp) {
            Some(best) => {
                feasible += 1;
                assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
                assert!((sol.objective - best).abs() <= 1e-7 * (1.0 + best.abs()), "case {case}: {} vs {best}", sol.objective);
                assert!(lp.max_violation(&sol.x) <= 1e-7);
                let dual = sol.dual_objective(&lp);
                assert!((dual - sol.objective).abs() <= 1e-7 * (1.0 + best.abs()), "case {case}: dual {dual}");
            }
            None => assert_eq!(sol.status, LpStatus::Infeasible, "case {case}"),
        }
    }
    assert!(feasible > 100, "too few feasible cases: {feasible}");
}

/// Textbook dense tableau simplex for `max c·x, A x <= b, x >= 0` with `b >= 0`,
/// using Bland's rule throughout.
fn tableau_simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let (m, n) = (a.len(), c.len());
    let w = n + m + 1;
    let mut t = vec![vec![0.0; w]; m + 1];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][w - 1] = b[i];
    }
    for j in 0..n {
        t[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    loop {
        let Some(q) = (0..n + m).find(|&j| t[m][j] < -1e-12) else { break };
        let mut r = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[i][q] > 1e-12 {
                let ratio = t[i][w - 1] / t[i][q];
                if ratio < best - 1e-12 || (ratio <= best + 1e-12 && r.is_some_and(|k: usize| basis[i] < basis[k])) {
                    best = ratio;
                    r = Some(i);
                }
            }
        }
        let r = r.expect("bounded by construction");
        let p = t[r][q];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pivot = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[q] != 0.0 {
                let f = row[q];
                for (v, pv) in row.iter_mut().zip(&pivot) {
                    *v -= f * pv;
                }
            }
        }
        basis[r] = q;
    }
    t[m][w - 1]
}

#[test]
fn matches_tableau_simplex_on_20x30() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..30 {
        let (m, n) = (20, 30);
        let a: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| if rng.random_bool(0.4) { rng.random_range(0.0..5.0) } else { 0.0 }).collect())
            .collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..20.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..4.0)).collect();
        // Cap every column so the LP is bounded regardless of sparsity.
        let mut a_full = a.clone();
        let mut b_full = b.clone();
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            a_full.push(row);
            b_full.push(10.0);
        }
        let expected = tableau_simplex(&a_full, &b_full, &c);

        let mut lp = LinearProgram::new(ObjectiveSense::Maximize);
        for &cj in &c {
            lp.add_col(0.0, 10.0, cj);
        }
        for (row, &bi) in a.iter().zip(&b) {
            let coeffs = row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
            lp.add_row(coeffs, Sense::Le, bi);
        }
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - expected).abs() <= 1e-8 * (1.0 + expected.abs()), "case {case}: {} vs {expected}", sol.objective);
        let dual = sol.dual_objective(&lp);
        assert!((dual - sol.objective).abs() <= 1e-8 * (1.0 + expected.abs()));
        // Maximization: `<=` rows carry nonnegative multipliers.
        assert!(sol.duals.iter().all(|&y| y >= -1e-9));
    }
}

#[test]
fn simple_cap_has_unit_dual() {
    let mut lp = LinearProgram::new(ObjectiveSense::Maximize);
    let x = lp.add_col(0.0, f64::INFINITY, 1.0);
    lp.add_row(vec![(x, 1.0)], Sense::Le, 5.0);
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.x[0] - 5.0).abs() < 1e-12);
    assert!((sol.duals[0] - 1.0).abs() < 1e-12);
}

#[test]
fn detects_infeasible_and_unbounded() {
    let mut lp = LinearProgram::new(ObjectiveSense::Minimize);
    let x = lp.add_col(0.0, f64::INFINITY, 1.0);
    lp.add_row(vec![(x, 1.0)], Sense::Le, 1.0);
    lp.add_row(vec![(x, 1.0)], Sense::Ge, 2.0);
    assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

    let mut lp = LinearProgram::new(ObjectiveSense::Maximize);
    let x = lp.add_col(0.0, f64::INFINITY, 1.0);
    let y = lp.add_col(0.0, f64::INFINITY, 0.0);
    lp.add_row(vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
    assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn rejects_free_columns_and_bad_indices() {
    let mut lp = LinearProgram::new(ObjectiveSense::Minimize);
    lp.add_col(f64::NEG_INFINITY, f64::INFINITY, 1.0);
    assert!(solve_lp(&lp).is_err());
    let mut lp = LinearProgram::new(ObjectiveSense::Minimize);
    lp.add_col(0.0, 1.0, 1.0);
    lp.add_row(vec![(3, 1.0)], Sense::Le, 1.0);
    assert!(solve_lp(&lp).is_err());
}

#[test]
fn degenerate_transportation_problem() {
    // Balanced 3x3 transportation problem: highly degenerate.
    let supply = [20.0, 30.0, 25.0];
    let demand = [25.0, 25.0, 25.0];
    let cost = [[8.0, 6.0, 10.0], [9.0, 12.0, 13.0], [14.0, 9.0, 16.0]];
    let mut lp = LinearProgram::new(ObjectiveSense::Minimize);
    let mut v = [[0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            v[i][j] = lp.add_col(0.0, f64::INFINITY, cost[i][j]);
        }
    }
    for i in 0..3 {
        lp.add_row((0..3).map(|j| (v[i][j], 1.0)).collect(), Sense::Eq, supply[i]);
    }
    for j in 0..3 {
        lp.add_row((0..3).map(|i| (v[i][j], 1.0)).collect(), Sense::Eq, demand[j]);
    }
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    let best = vertex_enumeration(&lp).unwrap();
    assert!((sol.objective - best).abs() < 1e-7, "{} vs {best}", sol.objective);
}
