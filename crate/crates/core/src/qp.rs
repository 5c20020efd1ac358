//! Small dense strictly convex QP solver (dual active set, Goldfarb-Idnani).
//!
//! Solves
//!
//! ```text
//! min  1/2 x' H x + c' x
//! s.t. A_eq x  = b_eq
//!      C x    >= d
//! ```
//!
//! with `H` positive definite. Equalities are enforced in closed form at
//! start-up and stay active; inequalities are then added one at a time,
//! most violated first. The active set is re-factorised from scratch at
//! every step, which is cheap at the sizes used here (n <= 12).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// No point satisfies all constraints; `x` is the last dual iterate.
    Infeasible,
    /// Iteration cap reached; `x` is the best iterate found so far.
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Row {
    Eq(usize),
    Ineq(usize),
}

impl QpProblem {
    fn row(&self, r: Row) -> (DVector<f64>, f64) {
        match r {
            Row::Eq(i) => (self.eq_matrix.row(i).transpose(), self.eq_rhs[i]),
            Row::Ineq(i) => (self.ineq_matrix.row(i).transpose(), self.ineq_rhs[i]),
        }
    }

    fn check(&self) -> Result<usize, QpError> {
        let n = self.hessian.nrows();
        if self.hessian.ncols() != n || self.linear.len() != n {
            return Err(QpError::Dimension("hessian/linear"));
        }
        if self.eq_matrix.nrows() != self.eq_rhs.len() || (self.eq_matrix.nrows() > 0 && self.eq_matrix.ncols() != n) {
            return Err(QpError::Dimension("equality block"));
        }
        if self.ineq_matrix.nrows() != self.ineq_rhs.len() || (self.ineq_matrix.nrows() > 0 && self.ineq_matrix.ncols() != n) {
            return Err(QpError::Dimension("inequality block"));
        }
        Ok(n)
    }

    pub fn kkt_residual(&self, sol: &QpSolution) -> KktResidual {
        let mut grad = &self.hessian * &sol.x + &self.linear;
        if self.eq_matrix.nrows() > 0 {
            grad -= self.eq_matrix.transpose() * &sol.eq_multipliers;
        }
        if self.ineq_matrix.nrows() > 0 {
            grad -= self.ineq_matrix.transpose() * &sol.ineq_multipliers;
        }
        let mut primal: f64 = 0.0;
        if self.eq_matrix.nrows() > 0 {
            primal = primal.max((&self.eq_matrix * &sol.x - &self.eq_rhs).amax());
        }
        let mut dual: f64 = 0.0;
        let mut comp: f64 = 0.0;
        if self.ineq_matrix.nrows() > 0 {
            let slack = &self.ineq_matrix * &sol.x - &self.ineq_rhs;
            for i in 0..slack.len() {
                primal = primal.max(-slack[i]);
                dual = dual.max(-sol.ineq_multipliers[i]);
                comp = comp.max((slack[i] * sol.ineq_multipliers[i]).abs());
            }
        }
        KktResidual {
            stationarity: grad.amax(),
            primal: primal.max(0.0),
            dual: dual.max(0.0),
            complementarity: comp,
        }
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    match m.clone().cholesky() {
        Some(ch) => Some(ch.solve(rhs)),
        None => m.clone().lu().solve(rhs),
    }
}

pub fn solve(problem: &QpProblem, max_iterations: usize) -> Result<QpSolution, QpError> {
    let n = problem.check()?;
    let m_eq = problem.eq_matrix.nrows();
    let m_in = problem.ineq_matrix.nrows();
    let ginv = problem.hessian.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?.inverse();

    let mut x = -(&ginv * &problem.linear);
    let mut active: Vec<Row> = Vec::with_capacity(m_eq + n);
    let mut u: Vec<f64> = Vec::with_capacity(m_eq + n);
    let mut eq_multipliers = DVector::zeros(m_eq);

    let finish = |x: DVector<f64>, active: &[Row], u: &[f64], eq: DVector<f64>, iterations, status| {
        let mut ineq = DVector::zeros(m_in);
        for (row, &ui) in active.iter().zip(u) {
            if let Row::Ineq(i) = row {
                ineq[*i] = ui;
            }
        }
        let mut eq_out = eq;
        for (row, &ui) in active.iter().zip(u) {
            if let Row::Eq(i) = row {
                eq_out[*i] = ui;
            }
        }
        QpSolution {
            x,
            eq_multipliers: eq_out,
            ineq_multipliers: ineq,
            iterations,
            status,
        }
    };

    if m_eq > 0 {
        let a = &problem.eq_matrix;
        let b_mat = &ginv * a.transpose();
        let m = a * &b_mat;
        let rhs = &problem.eq_rhs - a * &x;
        let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
        let rank_ok = m
            .clone()
            .cholesky()
            .map(|ch| ch.l().diagonal().iter().all(|d| d * d > 1e-11 * scale))
            .unwrap_or(false);
        let lambda = if rank_ok { solve_spd(&m, &rhs) } else { None };
        match lambda {
            Some(lambda) => {
                x += &b_mat * &lambda;
                for i in 0..m_eq {
                    active.push(Row::Eq(i));
                    u.push(lambda[i]);
                }
            }
            None => {
                eq_multipliers.fill(0.0);
                return Ok(finish(x, &active, &u, eq_multipliers, 0, QpStatus::Infeasible));
            }
        }
        let resid = (a * &x - &problem.eq_rhs).amax();
        if resid > 1e-9 * (1.0 + problem.eq_rhs.amax()) {
            return Ok(finish(x, &[], &[], DVector::zeros(m_eq), 0, QpStatus::Infeasible));
        }
    }

    let mut iterations = 0usize;
    loop {
        if m_in == 0 {
            return Ok(finish(x, &active, &u, eq_multipliers, iterations, QpStatus::Optimal));
        }
        let slack = &problem.ineq_matrix * &x - &problem.ineq_rhs;
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m_in {
            if active.contains(&Row::Ineq(i)) {
                continue;
            }
            let tol = 1e-10 * (1.0 + problem.ineq_rhs[i].abs());
            if slack[i] < -tol && worst.is_none_or(|(_, s)| slack[i] < s) {
                worst = Some((i, slack[i]));
            }
        }
        let Some((p, _)) = worst else {
            return Ok(finish(x, &active, &u, eq_multipliers, iterations, QpStatus::Optimal));
        };
        let (np, bp) = problem.row(Row::Ineq(p));
        let mut u_plus = 0.0;

        loop {
            if iterations >= max_iterations {
                return Ok(finish(x, &active, &u, eq_multipliers, iterations, QpStatus::MaxIterations));
            }
            iterations += 1;

            let ginv_np = &ginv * &np;
            let (z, r) = if active.is_empty() {
                (ginv_np.clone(), DVector::zeros(0))
            } else {
                let q = active.len();
                let mut nmat = DMatrix::zeros(n, q);
                for (k, row) in active.iter().enumerate() {
                    nmat.set_column(k, &problem.row(*row).0);
                }
                let b_mat = &ginv * &nmat;
                let m = nmat.transpose() * &b_mat;
                let r = solve_spd(&m, &(b_mat.transpose() * &np)).unwrap_or_else(|| DVector::zeros(q));
                (ginv_np.clone() - &b_mat * &r, r)
            };

            // partial step: largest move before an active inequality multiplier hits zero
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for (k, row) in active.iter().enumerate() {
                if matches!(row, Row::Ineq(_)) && r[k] > 1e-14 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop_k = Some(k);
                    }
                }
            }
            let s_p = np.dot(&x) - bp;
            let znp = z.dot(&np);
            let curvature = np.dot(&ginv_np).max(f64::MIN_POSITIVE);
            let t2 = if znp > 1e-12 * curvature { -s_p / znp } else { f64::INFINITY };

            if t1.is_infinite() && t2.is_infinite() {
                return Ok(finish(x, &active, &u, eq_multipliers, iterations, QpStatus::Infeasible));
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                x += &z * t;
            }
            for (k, uk) in u.iter_mut().enumerate() {
                *uk -= t * r[k];
            }
            u_plus += t;

            if t2 <= t1 {
                active.push(Row::Ineq(p));
                u.push(u_plus);
                break;
            }
            let k = drop_k.expect("finite t1 has a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }
}
