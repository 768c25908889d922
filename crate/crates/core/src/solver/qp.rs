//! Dense strictly convex QP by the Goldfarb-Idnani dual active-set method:
//!
//! ```text
//! min 0.5 x'Hx + g'x   s.t.   A x <= b
//! ```
//!
//! The method starts from the unconstrained minimizer and adds the most
//! violated constraint at a time, keeping `J' N = [R; 0]` with
//! `J = L^{-T} Q` for the active normals `N`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("active-set iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Feasibility tolerance on normalized rows.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multiplier per row of `A`, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub objective: f64,
}

const EPS: f64 = 1e-14;

struct Factor {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

impl Factor {
    /// Givens rotation of columns `a < b` of `J`.
    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let n = self.j.nrows();
        let (left, right) = self.j.as_mut_slice().split_at_mut(b * n);
        for (x, y) in left[a * n..(a + 1) * n].iter_mut().zip(&mut right[..n]) {
            let (t1, t2) = (*x, *y);
            *x = c * t1 + s * t2;
            *y = -s * t1 + c * t2;
        }
    }

    /// Appends a normal whose transformed coordinates are `d = J' n`.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        let n = d.len();
        for jj in (self.q + 1..n).rev() {
            let (a, b) = (d[jj - 1], d[jj]);
            let h = a.hypot(b);
            if h <= EPS {
                continue;
            }
            let (c, s) = (a / h, b / h);
            d[jj - 1] = h;
            d[jj] = 0.0;
            self.rotate_j(jj - 1, jj, c, s);
        }
        if d[self.q].abs() <= EPS {
            return false;
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = d[i];
        }
        self.q += 1;
        true
    }

    fn remove(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        // Columns l..q-2 are now upper Hessenberg.
        for jj in l..q - 1 {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = a.hypot(b);
            if h <= EPS {
                continue;
            }
            let (c, s) = (a / h, b / h);
            for col in jj..q - 1 {
                let (t1, t2) = (self.r[(jj, col)], self.r[(jj + 1, col)]);
                self.r[(jj, col)] = c * t1 + s * t2;
                self.r[(jj + 1, col)] = -s * t1 + c * t2;
            }
            self.r[(jj + 1, jj)] = 0.0;
            self.rotate_j(jj, jj + 1, c, s);
        }
        self.q -= 1;
    }

    /// `r = R^{-1} d[..q]`.
    fn back_solve(&self, d: &DVector<f64>) -> Vec<f64> {
        let mut r = vec![0.0; self.q];
        for i in (0..self.q).rev() {
            let mut acc = d[i];
            for k in i + 1..self.q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let m = b.len();
    if h.nrows() != n || h.ncols() != n || a.nrows() != m || (m > 0 && a.ncols() != n) {
        return Err(QpError::Dimension(format!(
            "H {}x{}, g {n}, A {}x{}, b {m}",
            h.nrows(),
            h.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut f = Factor {
        j: linv.transpose(),
        r: DMatrix::zeros(n, n),
        q: 0,
    };
    let mut x = -chol.solve(g);

    // Row i is the unit normal n_i = scale_i * a_i with n_i'x + c_i >= 0.
    let mut usable = vec![true; m];
    let mut scale = vec![0.0; m];
    let mut consts = DVector::zeros(m);
    let mut sq = vec![0.0; m];
    let mut nnz = vec![0usize; m];
    let mut single_col = vec![0usize; m];
    for (j, col) in a.column_iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if v != 0.0 {
                sq[i] += v * v;
                nnz[i] += 1;
                single_col[i] = j;
            }
        }
    }
    for i in 0..m {
        let norm = sq[i].sqrt();
        if norm <= EPS {
            if b[i] < -settings.tol {
                return Err(QpError::Infeasible);
            }
            usable[i] = false;
        } else {
            scale[i] = -1.0 / norm;
            consts[i] = b[i] / norm;
        }
    }
    // Rows with one nonzero (simple bounds) are evaluated directly; every
    // other row is covered by the row span of each column's nonzeros.
    let singles: Vec<usize> = (0..m).filter(|&i| nnz[i] == 1).collect();
    let spans: Vec<(usize, usize)> = a
        .column_iter()
        .map(|col| {
            let mut span = (m, 0);
            for (i, &v) in col.iter().enumerate() {
                if v != 0.0 && nnz[i] > 1 {
                    span = (span.0.min(i), i + 1);
                }
            }
            span
        })
        .collect();
    let slack = |x: &DVector<f64>, i: usize| scale[i] * a.row(i).transpose().dot(x) + consts[i];
    let mut ax = vec![0.0; m];

    let max_iter = if settings.max_iter == 0 { 10 * (n + m) + 50 } else { settings.max_iter };
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut slacks = DVector::zeros(m);

    loop {
        ax.iter_mut().for_each(|v| *v = 0.0);
        for ((col, &xj), &(lo, hi)) in a.as_slice().chunks_exact(m.max(1)).zip(x.iter()).zip(&spans) {
            if lo < hi {
                for (t, &v) in ax[lo..hi].iter_mut().zip(&col[lo..hi]) {
                    *t += v * xj;
                }
            }
        }
        for &i in &singles {
            ax[i] = a[(i, single_col[i])] * x[single_col[i]];
        }
        for i in 0..m {
            slacks[i] = scale[i] * ax[i] + consts[i];
        }
        let mut worst = None;
        let mut worst_s = -settings.tol;
        for i in 0..m {
            if usable[i] && slacks[i] < worst_s {
                worst_s = slacks[i];
                worst = Some(i);
            }
        }
        let Some(p) = worst else { break };
        let np: DVector<f64> = a.row(p).transpose() * scale[p];
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit(max_iter));
            }
            let d = f.j.tr_mul(&np);
            let mut z = DVector::zeros(n);
            for jj in f.q..n {
                z.axpy(d[jj], &f.j.column(jj), 1.0);
            }
            let r = f.back_solve(&d);

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > EPS {
                    let v = u[k] / rk;
                    if v < t1 {
                        t1 = v;
                        drop = Some(k);
                    }
                }
            }
            let s_p = slack(&x, p);
            let zn = z.dot(&np);
            let t2 = if z.norm() > EPS && zn > EPS { -s_p / zn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            for (k, rk) in r.iter().enumerate() {
                u[k] = (u[k] - t * rk).max(0.0);
            }
            u_p += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                if !f.add(d) {
                    return Err(QpError::Infeasible);
                }
                active.push(p);
                usable[p] = false;
                u.push(u_p);
                break;
            }
            let l = drop.expect("partial step has a blocking multiplier");
            f.remove(l);
            usable[active.remove(l)] = true;
            u.remove(l);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&i, &ui) in active.iter().zip(&u) {
        // Undo row normalization.
        multipliers[i] = ui / a.row(i).norm();
    }
    let objective = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
    Ok(QpSolution {
        x,
        multipliers,
        active,
        iterations,
        objective,
    })
}
