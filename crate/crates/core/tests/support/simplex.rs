//! Dense two-phase tableau simplex with Bland's rule. Test oracle only: it knows
//! nothing about quantiles or the analytic dual.

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn unwrap(self) -> (Vec<f64>, f64) {
        match self {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("LP not optimal: {other:?}"),
        }
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.rows[r][j];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[j];
                if f != 0.0 {
                    row.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
                }
            }
        }
        self.basis[r] = j;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut red = cost.to_vec();
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb != 0.0 {
                red.iter_mut().zip(row).for_each(|(v, a)| *v -= cb * a);
            }
        }
        red
    }

    /// Minimizes `cost` over the current basis; `allowed` masks entering columns.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        let rhs = self.width;
        loop {
            let red = self.reduced_costs(cost);
            let Some(j) = (0..self.width).find(|&j| allowed[j] && red[j] < -EPS) else {
                return true;
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[j] > EPS {
                    let ratio = row[rhs] / row[j];
                    let better = match best {
                        None => true,
                        Some((q, _, b)) => ratio < q - EPS || (ratio <= q + EPS && self.basis[r] < b),
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            match best {
                Some((_, r, _)) => self.pivot(r, j),
                None => return false,
            }
        }
    }
}

/// Minimizes `c . x` subject to `A x = b`, `x >= 0`.
pub fn solve_standard(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> LpOutcome {
    let m = a.len();
    let n = c.len();
    let width = n + m;
    let mut rows = Vec::with_capacity(m);
    for (i, (ai, bi)) in a.iter().zip(b).enumerate() {
        let sign = if *bi < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width + 1];
        for j in 0..n {
            row[j] = sign * ai[j];
        }
        row[n + i] = 1.0;
        row[width] = sign * bi;
        rows.push(row);
    }
    let mut t = Tableau {
        rows,
        basis: (n..n + m).collect(),
        width,
    };

    let mut phase1 = vec![0.0; width];
    phase1[n..].iter_mut().for_each(|v| *v = 1.0);
    t.optimize(&phase1, &vec![true; width]);
    let infeasibility: f64 = t
        .basis
        .iter()
        .zip(&t.rows)
        .filter(|(b, _)| **b >= n)
        .map(|(_, row)| row[width])
        .sum();
    let scale = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if infeasibility > 1e-9 * scale {
        return LpOutcome::Infeasible;
    }
    // Drive remaining artificials out of the basis where possible.
    for r in 0..m {
        if t.basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| t.rows[r][j].abs() > EPS) {
                t.pivot(r, j);
            }
        }
    }

    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(c);
    let allowed: Vec<bool> = (0..width).map(|j| j < n).collect();
    if !t.optimize(&phase2, &allowed) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (row, &bj) in t.rows.iter().zip(&t.basis) {
        if bj < n {
            x[bj] = row[width];
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    LpOutcome::Optimal { x, objective }
}

/// Problem P: minimize `(1/N) sum psi+ d+ + psi- d-` subject to
/// `x + d+_k - d-_k = y_k` and `0 <= x <= capacity`.
/// Variables: `[x, s, d+_1..N, d-_1..N]`. Returns (offer, objective).
pub fn primal(y: &[f64], psi_plus: f64, psi_minus: f64, capacity: f64) -> (f64, f64) {
    let n = y.len();
    let nv = 2 + 2 * n;
    let mut a = Vec::with_capacity(n + 1);
    let mut b = Vec::with_capacity(n + 1);
    for (k, yk) in y.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[0] = 1.0;
        row[2 + k] = 1.0;
        row[2 + n + k] = -1.0;
        a.push(row);
        b.push(*yk);
    }
    let mut cap = vec![0.0; nv];
    cap[0] = 1.0;
    cap[1] = 1.0;
    a.push(cap);
    b.push(capacity);
    let mut c = vec![0.0; nv];
    for k in 0..n {
        c[2 + k] = psi_plus / n as f64;
        c[2 + n + k] = psi_minus / n as f64;
    }
    let (x, obj) = solve_standard(&a, &b, &c).unwrap();
    (x[0], obj)
}

/// Smallest optimal offer of problem P: minimizes `x` over the optimal face,
/// with the cost constraint relaxed by `slack`.
pub fn smallest_minimizer(y: &[f64], psi_plus: f64, psi_minus: f64, capacity: f64, slack: f64) -> f64 {
    let (_, best) = primal(y, psi_plus, psi_minus, capacity);
    let n = y.len();
    let nv = 3 + 2 * n;
    let mut a = Vec::with_capacity(n + 2);
    let mut b = Vec::with_capacity(n + 2);
    for (k, yk) in y.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[0] = 1.0;
        row[3 + k] = 1.0;
        row[3 + n + k] = -1.0;
        a.push(row);
        b.push(*yk);
    }
    let mut cap = vec![0.0; nv];
    cap[0] = 1.0;
    cap[1] = 1.0;
    a.push(cap);
    b.push(capacity);
    let mut cost = vec![0.0; nv];
    cost[2] = 1.0;
    for k in 0..n {
        cost[3 + k] = psi_plus / n as f64;
        cost[3 + n + k] = psi_minus / n as f64;
    }
    a.push(cost);
    b.push(best + slack);
    let mut c = vec![0.0; nv];
    c[0] = 1.0;
    solve_standard(&a, &b, &c).unwrap().0[0]
}

/// Problem D: maximize `(1/N) sum nu_k y_k` subject to `sum nu <= 0` and
/// `-psi- <= nu_k <= psi+`. Solved as a minimization over `nu' = nu + psi-`
/// with slacks. Returns (duals, objective).
pub fn dual(y: &[f64], psi_plus: f64, psi_minus: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let width = psi_plus + psi_minus;
    // Variables: [nu'_1..N, t_1..N, u].
    let nv = 2 * n + 1;
    let mut a = Vec::with_capacity(n + 1);
    let mut b = Vec::with_capacity(n + 1);
    for k in 0..n {
        let mut row = vec![0.0; nv];
        row[k] = 1.0;
        row[n + k] = 1.0;
        a.push(row);
        b.push(width);
    }
    let mut sum = vec![0.0; nv];
    sum[..n].iter_mut().for_each(|v| *v = 1.0);
    sum[2 * n] = 1.0;
    a.push(sum);
    b.push(n as f64 * psi_minus);
    let mut c = vec![0.0; nv];
    for k in 0..n {
        c[k] = -y[k] / n as f64;
    }
    let (x, obj) = solve_standard(&a, &b, &c).unwrap();
    let nu: Vec<f64> = x[..n].iter().map(|v| v - psi_minus).collect();
    let constant = -psi_minus * y.iter().sum::<f64>() / n as f64;
    (nu, -obj + constant)
}

#[cfg(test)]
mod tests {
    #[allow(unused_imports)]
    use super::*;

    #[test]
    fn textbook_instance() {
        // min -x1 - x2, x1 + 2 x2 + s1 = 4, 3 x1 + x2 + s2 = 6: optimum at (1.6, 1.2).
        let a = vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]];
        let (x, obj) = solve_standard(&a, &[4.0, 6.0], &[-1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 1.6).abs() < 1e-12 && (x[1] - 1.2).abs() < 1e-12);
        assert!((obj + 2.8).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let a = vec![vec![1.0, 1.0]];
        assert_eq!(solve_standard(&a, &[-1.0], &[1.0, 1.0]), LpOutcome::Infeasible);
        let a = vec![vec![1.0, -1.0]];
        assert_eq!(solve_standard(&a, &[1.0], &[-1.0, 0.0]), LpOutcome::Unbounded);
    }

    #[test]
    fn hand_offer_instance() {
        let (x, obj) = primal(&[10.0, 20.0], 4.0, 12.0, 100.0);
        assert!((obj - 20.0).abs() < 1e-9);
        assert!((x - 10.0).abs() < 1e-9);
        let (_, dobj) = dual(&[10.0, 20.0], 4.0, 12.0);
        assert!((dobj - 20.0).abs() < 1e-9);
    }
}
