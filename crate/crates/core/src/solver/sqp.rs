//! Multiple-shooting SQP with Gauss-Newton Hessian and condensing.
//!
//! The optimal control problem is
//!
//! ```text
//! min  sum_k |r_k(x_k, u_{k-1})|^2 + c'u_{k-1}
//! s.t. x_{k+1} = f(x_k, u_k),  lo <= u_k <= hi,  g_j(x_k) <= 0
//! ```
//!
//! State inequalities are softened per group with a slack paying an l1
//! weight plus a small quadratic term.
//!
//! Dynamics are linearized stage by stage and condensed onto the inputs.
//! Line-search trial points are forward simulations of the trial inputs,
//! so every iterate is dynamically consistent.

use std::time::Instant;

use cpu_time::ThreadTime;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpError, QpSettings};

/// `value <= 0` is feasible; `grad` is the derivative w.r.t. the stage state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateConstraint {
    pub value: f64,
    pub grad: DVector<f64>,
    pub group: usize,
}

pub trait OcpModel {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// Least-squares residuals of stage `k` in `1..=N`; `u` is `u_{k-1}`.
    fn residuals(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// Linear cost on each input, identical across stages.
    fn input_gradient(&self) -> DVector<f64>;
    fn input_bounds(&self) -> (DVector<f64>, DVector<f64>);
    /// Inequalities on the state of stage `k` in `1..=N`.
    fn constraints(&self, k: usize, x: &DVector<f64>) -> Vec<StateConstraint>;
    fn slack_groups(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqpSettings {
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// Also stop once the predicted merit decrease of a full step falls
    /// below this fraction of the merit.
    pub merit_rtol: f64,
    pub violation_tol: f64,
    pub qp_tol: f64,
    pub slack_weight: f64,
    pub slack_quadratic: f64,
    pub defect_penalty: f64,
    pub fd_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Off makes every state inequality hard.
    pub soft_constraints: bool,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iter: 30,
            kkt_tol: 1e-6,
            merit_rtol: 1e-6,
            violation_tol: 1e-6,
            qp_tol: 1e-10,
            slack_weight: 1e3,
            slack_quadratic: 1e-2,
            defect_penalty: 1e4,
            fd_step: 1e-6,
            armijo: 1e-4,
            max_backtracks: 12,
            soft_constraints: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    IterationCapped,
    InfeasibleSlacked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpReport {
    pub trajectory: OcpTrajectory,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_constraint_violation: f64,
    /// Largest slack in the last QP.
    pub max_slack: f64,
    pub slack_used: bool,
    pub dynamics_residual: f64,
    pub wall_time: f64,
    pub status: SolveStatus,
    /// Merit after each accepted step, starting with the initial iterate.
    pub merit_history: Vec<f64>,
    pub cost: f64,
}

pub fn rollout<M: OcpModel>(model: &M, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(model.initial_state());
    for u in inputs {
        let next = model.step(states.last().unwrap(), u);
        states.push(next);
    }
    states
}

fn clamp_inputs(u: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| u[i].clamp(lo[i], hi[i]))
}

struct Eval {
    cost: f64,
    defect: f64,
    group_violation: Vec<f64>,
    merit: f64,
}

fn evaluate<M: OcpModel>(model: &M, s: &SqpSettings, x: &[DVector<f64>], u: &[DVector<f64>]) -> Eval {
    let n = model.horizon();
    let lin = model.input_gradient();
    let mut cost = 0.0;
    let mut defect_l1 = 0.0;
    let mut defect: f64 = 0.0;
    let mut group_violation = vec![0.0f64; model.slack_groups()];
    for k in 0..n {
        let d = model.step(&x[k], &u[k]) - &x[k + 1];
        defect_l1 += d.lp_norm(1);
        defect = defect.max(d.amax());
        cost += model.residuals(k + 1, &x[k + 1], &u[k]).norm_squared() + lin.dot(&u[k]);
        for c in model.constraints(k + 1, &x[k + 1]) {
            let v = &mut group_violation[c.group];
            *v = v.max(c.value);
        }
    }
    let penalty: f64 = group_violation
        .iter()
        .map(|&v| s.slack_weight * v + 0.5 * s.slack_quadratic * v * v)
        .sum();
    Eval {
        cost,
        defect,
        merit: cost + penalty + s.defect_penalty * defect_l1,
        group_violation,
    }
}

fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, at: &DVector<f64>, h: f64, rows: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, at.len());
    let mut p = at.clone();
    for i in 0..at.len() {
        let step = h * (1.0 + at[i].abs());
        p[i] = at[i] + step;
        let fp = f(&p);
        p[i] = at[i] - step;
        let fm = f(&p);
        p[i] = at[i];
        jac.set_column(i, &((fp - fm) / (2.0 * step)));
    }
    jac
}

struct Qp {
    h: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Per stage `k` in `0..=N`: `dx_k = sens[k] du + offset[k]`.
    sens: Vec<DMatrix<f64>>,
    offset: Vec<DVector<f64>>,
    /// Constant part of the linearized cost.
    model_const: f64,
}

fn build_qp<M: OcpModel>(model: &M, s: &SqpSettings, x: &[DVector<f64>], u: &[DVector<f64>]) -> Qp {
    let (n, nx, nu) = (model.horizon(), model.nx(), model.nu());
    let nvar_u = n * nu;
    let groups = if s.soft_constraints { model.slack_groups() } else { 0 };
    let nvar = nvar_u + groups;

    let mut sens = vec![DMatrix::zeros(nx, nvar_u)];
    let mut offset = vec![DVector::zeros(nx)];
    for k in 0..n {
        let uk = &u[k];
        let xk = &x[k];
        let a_k = fd_jacobian(|xx| model.step(xx, uk), xk, s.fd_step, nx);
        let b_k = fd_jacobian(|uu| model.step(xk, uu), uk, s.fd_step, nx);
        let c_k = model.step(xk, uk) - &x[k + 1];
        let mut next = &a_k * &sens[k];
        let mut block = next.columns_mut(k * nu, nu);
        block += &b_k;
        offset.push(&a_k * &offset[k] + c_k);
        sens.push(next);
    }

    // Stacked linearized residuals r_bar + G du.
    let mut rows_g: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut rows_r: Vec<DVector<f64>> = Vec::with_capacity(n);
    for k in 1..=n {
        let uk = &u[k - 1];
        let xk = &x[k];
        let r = model.residuals(k, xk, uk);
        let m = r.len();
        let jx = fd_jacobian(|xx| model.residuals(k, xx, uk), xk, s.fd_step, m);
        let ju = fd_jacobian(|uu| model.residuals(k, xk, uu), uk, s.fd_step, m);
        let mut gk = &jx * &sens[k];
        let mut block = gk.columns_mut((k - 1) * nu, nu);
        block += &ju;
        rows_r.push(r + &jx * &offset[k]);
        rows_g.push(gk);
    }
    let mut h = DMatrix::zeros(nvar, nvar);
    let mut g = DVector::zeros(nvar);
    let mut model_const = 0.0;
    {
        let mut huu = h.view_mut((0, 0), (nvar_u, nvar_u));
        for (gk, rk) in rows_g.iter().zip(&rows_r) {
            huu.gemm_tr(2.0, gk, gk, 1.0);
            model_const += rk.norm_squared();
        }
    }
    {
        let mut gu = g.rows_mut(0, nvar_u);
        for (gk, rk) in rows_g.iter().zip(&rows_r) {
            gu.gemv_tr(2.0, gk, rk, 1.0);
        }
    }
    let lin = model.input_gradient();
    for k in 0..n {
        for i in 0..nu {
            g[k * nu + i] += lin[i];
        }
        model_const += lin.dot(&u[k]);
    }
    for gi in 0..groups {
        h[(nvar_u + gi, nvar_u + gi)] = s.slack_quadratic;
        g[nvar_u + gi] = s.slack_weight;
    }

    let mut a_rows: Vec<DVector<f64>> = Vec::new();
    let mut b_vals: Vec<f64> = Vec::new();
    let (lo, hi) = model.input_bounds();
    for k in 0..n {
        for i in 0..nu {
            let col = k * nu + i;
            if hi[i].is_finite() {
                let mut row = DVector::zeros(nvar);
                row[col] = 1.0;
                a_rows.push(row);
                b_vals.push(hi[i] - u[k][i]);
            }
            if lo[i].is_finite() {
                let mut row = DVector::zeros(nvar);
                row[col] = -1.0;
                a_rows.push(row);
                b_vals.push(u[k][i] - lo[i]);
            }
        }
    }
    for k in 1..=n {
        for c in model.constraints(k, &x[k]) {
            let mut row = DVector::zeros(nvar);
            row.rows_mut(0, nvar_u).copy_from(&sens[k].tr_mul(&c.grad));
            if s.soft_constraints {
                row[nvar_u + c.group] = -1.0;
            }
            a_rows.push(row);
            b_vals.push(-c.value - c.grad.dot(&offset[k]));
        }
    }
    for gi in 0..groups {
        let mut row = DVector::zeros(nvar);
        row[nvar_u + gi] = -1.0;
        a_rows.push(row);
        b_vals.push(0.0);
    }
    let a = if a_rows.is_empty() {
        DMatrix::zeros(0, nvar)
    } else {
        DMatrix::from_fn(a_rows.len(), nvar, |i, j| a_rows[i][j])
    };
    Qp {
        h,
        g,
        a,
        b: DVector::from_vec(b_vals),
        sens,
        offset,
        model_const,
    }
}

/// Solves the problem from `warm` (inputs and states), or from zero inputs.
pub fn solve_ocp<M: OcpModel>(
    model: &M,
    warm: Option<&OcpTrajectory>,
    budget: f64,
    settings: &SqpSettings,
) -> OcpReport {
    let start = Instant::now();
    // The budget is charged in this thread's CPU time, so load from other
    // processes cannot change how far a solve gets.
    let cpu_start = ThreadTime::now();
    let (n, nu) = (model.horizon(), model.nu());
    let (lo, hi) = model.input_bounds();
    let mut u: Vec<DVector<f64>> = match warm {
        Some(w) if w.inputs.len() == n => w.inputs.iter().map(|ui| clamp_inputs(ui, &lo, &hi)).collect(),
        _ => (0..n).map(|_| clamp_inputs(&DVector::zeros(nu), &lo, &hi)).collect(),
    };
    let mut x = rollout(model, &u);

    let mut eval = evaluate(model, settings, &x, &u);
    let mut merit_history = vec![eval.merit];
    let mut status = SolveStatus::IterationCapped;
    let mut kkt = f64::INFINITY;
    let mut max_slack = 0.0;
    let mut iterations = 0;

    while iterations < settings.max_iter {
        iterations += 1;
        let mut qp = build_qp(model, settings, &x, &u);
        let qp_settings = QpSettings { tol: settings.qp_tol, max_iter: 0 };
        let mut sol = solve_qp(&qp.h, &qp.g, &qp.a, &qp.b, &qp_settings);
        let mut retries = 0;
        while matches!(sol, Err(QpError::NotPositiveDefinite)) && retries < 3 {
            for i in 0..qp.h.nrows() {
                qp.h[(i, i)] += 1e-8;
            }
            sol = solve_qp(&qp.h, &qp.g, &qp.a, &qp.b, &qp_settings);
            retries += 1;
        }
        let Ok(sol) = sol else {
            log::warn!("QP subproblem failed: {}", sol.unwrap_err());
            status = SolveStatus::InfeasibleSlacked;
            break;
        };

        let nvar_u = n * nu;
        let du = sol.x.rows(0, nvar_u).into_owned();
        max_slack = sol.x.rows(nvar_u, sol.x.len() - nvar_u).iter().fold(0.0f64, |m, &v| m.max(v));
        let dx: Vec<DVector<f64>> = (0..=n).map(|k| &qp.sens[k] * &du + &qp.offset[k]).collect();
        let step = du.amax().max(dx.iter().fold(0.0f64, |m, d| m.max(d.amax())));
        kkt = step.max(eval.defect);
        if kkt <= settings.kkt_tol {
            status = SolveStatus::Converged;
            break;
        }

        // Predicted reduction of the merit by the full step.
        let model_value = sol.objective + qp.model_const;
        let predicted = (eval.merit - model_value).max(0.0);
        if predicted <= settings.merit_rtol * (1.0 + eval.merit.abs()) {
            status = SolveStatus::Converged;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let ut: Vec<_> = (0..n)
                .map(|k| clamp_inputs(&(&u[k] + du.rows(k * nu, nu) * alpha), &lo, &hi))
                .collect();
            let xt = rollout(model, &ut);
            let e = evaluate(model, settings, &xt, &ut);
            if e.merit <= eval.merit - settings.armijo * alpha * predicted {
                accepted = Some((xt, ut, e));
                break;
            }
            alpha *= 0.5;
        }
        log::debug!(
            "sqp it {iterations}: merit {:.6e} predicted {predicted:.3e} step {step:.3e} alpha {}",
            eval.merit,
            if accepted.is_some() { alpha } else { 0.0 }
        );
        match accepted {
            Some((xt, ut, e)) => {
                x = xt;
                u = ut;
                eval = e;
                merit_history.push(eval.merit);
            }
            None => {
                // No merit decrease along the QP direction: stationary up to noise.
                if step <= 1e3 * settings.kkt_tol {
                    status = SolveStatus::Converged;
                }
                break;
            }
        }
        if cpu_start.elapsed().as_secs_f64() > budget {
            break;
        }
    }

    let states = rollout(model, &u);
    let final_eval = evaluate(model, settings, &states, &u);
    let max_violation = final_eval.group_violation.iter().fold(0.0f64, |m, &v| m.max(v));
    let slack_used = max_slack > settings.violation_tol || max_violation > settings.violation_tol;
    if status == SolveStatus::Converged && max_violation > settings.violation_tol {
        status = SolveStatus::InfeasibleSlacked;
    }
    let dynamics_residual = (0..n)
        .map(|k| (model.step(&states[k], &u[k]) - &states[k + 1]).amax())
        .fold(0.0, f64::max);
    OcpReport {
        trajectory: OcpTrajectory { states, inputs: u },
        iterations,
        kkt_residual: kkt,
        max_constraint_violation: max_violation,
        max_slack,
        slack_used,
        dynamics_residual,
        wall_time: start.elapsed().as_secs_f64(),
        status,
        merit_history,
        cost: final_eval.cost,
    }
}
