//! Levenberg-Marquardt with a Schur complement over landmark blocks and a
//! dense fallback for small problems.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::{Problem, Residual, VariableValue};

#[derive(Clone, Copy, Debug)]
pub struct OutlierPolicy {
    /// χ² gate for point reprojection blocks (2-dof 95%).
    pub point_chi2: f64,
    /// χ² gate for line reprojection blocks (2-dof 95%).
    pub line_chi2: f64,
    /// Iterations of the second round after deactivation.
    pub second_round_iterations: usize,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        Self {
            point_chi2: 5.99,
            line_chi2: 5.99,
            second_round_iterations: 40,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
    pub gradient_tolerance: f64,
    /// Relative cost decrease below which the solve counts as converged.
    pub cost_tolerance: f64,
    pub outlier_rejection: Option<OutlierPolicy>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            lambda_init: 1e-4,
            lambda_factor: 10.0,
            lambda_max: 1e10,
            gradient_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            outlier_rejection: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ConvergedGradient,
    ConvergedCostDelta,
    MaxIterations,
    /// λ exceeded its ceiling without an acceptable step.
    NotConverged,
    /// Nothing to optimize (no free variables or no active residuals).
    Trivial,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after every accepted step (starts with the initial cost).
    pub cost_trace: Vec<f64>,
    pub deactivated_blocks: usize,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::ConvergedGradient | Termination::ConvergedCostDelta | Termination::Trivial
        )
    }
}

/// Deactivates reprojection blocks whose whitened robust χ² exceeds the
/// kind-specific gate. Returns the number of blocks deactivated.
pub fn deactivate_outliers(problem: &mut Problem, policy: &OutlierPolicy) -> usize {
    let mut chi2s: Vec<(usize, f64, f64)> = Vec::new();
    for idx in 0..problem.num_residuals() {
        let block = problem.residual_block(idx);
        if !block.active {
            continue;
        }
        let gate = match block.residual {
            Residual::PointReprojection { .. } => policy.point_chi2,
            Residual::LineReprojection { .. } => policy.line_chi2,
            _ => continue,
        };
        let chi2 = match problem.evaluate_residual(idx) {
            Some(r) => {
                let s: f64 = r
                    .iter()
                    .zip(block.information.iter())
                    .map(|(ri, wi)| ri * ri * wi)
                    .sum();
                block.loss.cost(s)
            }
            // Not evaluable (e.g. behind camera): treat as outlier.
            None => f64::INFINITY,
        };
        if chi2 > gate {
            chi2s.push((idx, chi2, gate));
        }
    }
    let count = chi2s.len();
    for (idx, ..) in chi2s {
        problem.residual_blocks_mut()[idx].active = false;
    }
    count
}

/// Minimizes the robust cost with Levenberg-Marquardt. With
/// `outlier_rejection` set, runs a second round after deactivating gross
/// reprojection outliers.
pub fn solve_lm(problem: &mut Problem, options: &LmOptions) -> SolveReport {
    let mut report = run_rounds(problem, options);
    if let Some(policy) = options.outlier_rejection {
        let removed = deactivate_outliers(problem, &policy);
        let second_opts = LmOptions {
            max_iterations: policy.second_round_iterations,
            outlier_rejection: None,
            ..*options
        };
        let second = run_rounds(problem, &second_opts);
        report.final_cost = second.final_cost;
        report.iterations += second.iterations;
        report.termination = second.termination;
        report.cost_trace.extend(second.cost_trace);
        report.deactivated_blocks = removed;
    }
    report
}

fn run_rounds(problem: &mut Problem, options: &LmOptions) -> SolveReport {
    let layout = Layout::build(problem);
    let (initial_cost, initial_eval) = cost_of_current(problem);
    let mut report = SolveReport {
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
        termination: Termination::MaxIterations,
        cost_trace: vec![initial_cost],
        deactivated_blocks: 0,
    };
    if layout.total_free_dim() == 0 || problem.residual_blocks().iter().all(|b| !b.active) {
        report.termination = Termination::Trivial;
        return report;
    }

    let mut lambda = options.lambda_init;
    let mut cost = initial_cost;
    let mut evaluable = initial_eval;

    for _ in 0..options.max_iterations {
        let Some(assembly) = assemble(problem, &layout) else {
            report.termination = Termination::NotConverged;
            break;
        };
        if assembly.gradient_inf_norm() < options.gradient_tolerance {
            report.termination = Termination::ConvergedGradient;
            break;
        }

        // Inner damping loop: grow lambda until a step decreases the cost.
        let mut stepped = false;
        while lambda <= options.lambda_max {
            let Some(delta) = assembly.solve(lambda) else {
                lambda *= options.lambda_factor;
                continue;
            };
            let candidate = layout.retract(problem, &delta);
            let (new_cost, new_eval) = cost_of_values(problem, &candidate);
            if new_cost < cost && new_eval >= evaluable {
                layout.write_back(problem, candidate);
                let decrease = (cost - new_cost) / cost.max(1e-300);
                cost = new_cost;
                evaluable = new_eval;
                report.cost_trace.push(cost);
                report.iterations += 1;
                lambda = (lambda / options.lambda_factor).max(1e-12);
                stepped = true;
                if decrease < options.cost_tolerance {
                    report.termination = Termination::ConvergedCostDelta;
                }
                break;
            }
            lambda *= options.lambda_factor;
        }
        if !stepped {
            report.termination = Termination::NotConverged;
            break;
        }
        if report.termination == Termination::ConvergedCostDelta {
            break;
        }
    }

    report.final_cost = cost;
    report
}

fn cost_of_current(problem: &Problem) -> (f64, usize) {
    let values: Vec<VariableValue> = (0..problem.num_variables())
        .map(|i| problem.value(crate::VariableKey(i)).clone())
        .collect();
    cost_of_values(problem, &values)
}

fn cost_of_values(problem: &Problem, values: &[VariableValue]) -> (f64, usize) {
    let fetch = |k: crate::VariableKey| values[k.0].clone();
    let mut cost = 0.0;
    let mut evaluable = 0usize;
    for block in problem.residual_blocks() {
        if !block.active {
            continue;
        }
        if let Some(r) = block.residual.evaluate(&fetch) {
            let s: f64 = r
                .iter()
                .zip(block.information.iter())
                .map(|(ri, wi)| ri * ri * wi)
                .sum();
            cost += block.loss.cost(s);
            evaluable += 1;
        }
    }
    (cost, evaluable)
}

/// Free-variable layout: camera-side variables (poses, velocities, biases)
/// are retained in the reduced system, landmark variables (points, lines)
/// are eliminated per block when the problem is large enough.
struct Layout {
    /// var index → (offset into the camera segment, local dim)
    cam: Vec<Option<(usize, usize)>>,
    /// var index → (landmark slot, local dim)
    lm: Vec<Option<(usize, usize)>>,
    cam_dim: usize,
    lm_dims: Vec<usize>,
}

impl Layout {
    fn build(problem: &Problem) -> Self {
        let n = problem.num_variables();
        let mut cam = vec![None; n];
        let mut lm = vec![None; n];
        let mut cam_dim = 0usize;
        let mut lm_dims = Vec::new();
        let mut total = 0usize;
        for i in 0..n {
            let key = crate::VariableKey(i);
            if problem.is_fixed(key) {
                continue;
            }
            let value = problem.value(key);
            let dim = value.local_dim();
            total += dim;
            match value {
                VariableValue::Point(_) | VariableValue::Line(_) => {
                    lm[i] = Some((lm_dims.len(), dim));
                    lm_dims.push(dim);
                }
                _ => {
                    cam[i] = Some((cam_dim, dim));
                    cam_dim += dim;
                }
            }
        }
        // Dense fallback for small systems; Schur needs a camera side.
        let use_schur = cam_dim > 0 && !lm_dims.is_empty() && total > 150;
        if !use_schur {
            // Fold landmarks into the dense segment.
            for i in 0..n {
                if let Some((_, dim)) = lm[i] {
                    cam[i] = Some((cam_dim, dim));
                    cam_dim += dim;
                }
                lm[i] = None;
            }
            lm_dims.clear();
        }
        Self {
            cam,
            lm,
            cam_dim,
            lm_dims,
        }
    }

    fn total_free_dim(&self) -> usize {
        self.cam_dim + self.lm_dims.iter().sum::<usize>()
    }

    /// Applies a solved step to a copy of the variable values.
    fn retract(&self, problem: &Problem, delta: &Step) -> Vec<VariableValue> {
        let mut values: Vec<VariableValue> = (0..problem.num_variables())
            .map(|i| problem.value(crate::VariableKey(i)).clone())
            .collect();
        for (i, slot) in self.cam.iter().enumerate() {
            if let Some((offset, dim)) = slot {
                let d = delta.cam.as_slice();
                values[i] = values[i].retract(&d[*offset..offset + dim]);
            }
        }
        for (i, slot) in self.lm.iter().enumerate() {
            if let Some((slot_idx, _)) = slot {
                values[i] = values[i].retract(delta.lm[*slot_idx].as_slice());
            }
        }
        values
    }

    fn write_back(&self, problem: &mut Problem, values: Vec<VariableValue>) {
        for (i, value) in values.into_iter().enumerate() {
            problem.set_value(crate::VariableKey(i), value);
        }
    }
}

struct Step {
    cam: DVector<f64>,
    lm: Vec<DVector<f64>>,
}

/// One landmark's normal-equation blocks.
struct LandmarkBlock {
    h: DMatrix<f64>,
    b: DVector<f64>,
    /// camera offset → accumulated coupling `J_cᵀ W J_l`.
    couplings: BTreeMap<(usize, usize), DMatrix<f64>>,
}

struct Assembly {
    h_cc: DMatrix<f64>,
    b_c: DVector<f64>,
    landmarks: Vec<LandmarkBlock>,
    grad_inf: f64,
}

impl Assembly {
    fn gradient_inf_norm(&self) -> f64 {
        self.grad_inf
    }

    fn solve(&self, lambda: f64) -> Option<Step> {
        let damp = |m: &DMatrix<f64>| -> DMatrix<f64> {
            let mut d = m.clone();
            for i in 0..d.nrows() {
                let base = d[(i, i)].abs().max(1e-9);
                d[(i, i)] += lambda * base;
            }
            d
        };

        if self.landmarks.is_empty() {
            let chol = damp(&self.h_cc).cholesky()?;
            return Some(Step {
                cam: chol.solve(&self.b_c),
                lm: Vec::new(),
            });
        }

        // Schur complement on the camera system.
        let mut s = damp(&self.h_cc);
        let mut rhs = self.b_c.clone();
        let mut lm_inv = Vec::with_capacity(self.landmarks.len());
        for lmb in &self.landmarks {
            let hll = damp(&lmb.h);
            let inv = hll.clone().try_inverse().or_else(|| {
                let mut ridge = hll;
                for i in 0..ridge.nrows() {
                    ridge[(i, i)] += 1e-6;
                }
                ridge.try_inverse()
            })?;
            for ((off_i, dim_i), w_i) in &lmb.couplings {
                let wi_inv = w_i * &inv;
                rhs.rows_mut(*off_i, *dim_i)
                    .sub_assign_helper(&(&wi_inv * &lmb.b));
                for ((off_j, dim_j), w_j) in &lmb.couplings {
                    let block = &wi_inv * w_j.transpose();
                    let mut view = s.view_mut((*off_i, *off_j), (*dim_i, *dim_j));
                    view -= &block;
                }
            }
            lm_inv.push(inv);
        }
        let chol = s.cholesky()?;
        let cam = chol.solve(&rhs);

        let mut lm_steps = Vec::with_capacity(self.landmarks.len());
        for (lmb, inv) in self.landmarks.iter().zip(lm_inv.iter()) {
            let mut rhs_l = lmb.b.clone();
            for ((off, dim), w) in &lmb.couplings {
                rhs_l -= w.transpose() * cam.rows(*off, *dim);
            }
            lm_steps.push(inv * rhs_l);
        }
        Some(Step {
            cam,
            lm: lm_steps,
        })
    }
}

trait SubAssign2 {
    fn sub_assign_helper(&mut self, other: &DVector<f64>);
}

impl SubAssign2 for nalgebra::DVectorViewMut<'_, f64> {
    fn sub_assign_helper(&mut self, other: &DVector<f64>) {
        *self -= other;
    }
}

fn assemble(problem: &Problem, layout: &Layout) -> Option<Assembly> {
    let mut h_cc = DMatrix::zeros(layout.cam_dim, layout.cam_dim);
    let mut b_c = DVector::zeros(layout.cam_dim);
    let mut landmarks: Vec<LandmarkBlock> = layout
        .lm_dims
        .iter()
        .map(|&d| LandmarkBlock {
            h: DMatrix::zeros(d, d),
            b: DVector::zeros(d),
            couplings: BTreeMap::new(),
        })
        .collect();
    let mut grad_inf = 0.0f64;

    let fetch = |k: crate::VariableKey| problem.value(k).clone();
    for block in problem.residual_blocks() {
        if !block.active {
            continue;
        }
        let Some(raw) = block.residual.evaluate(&fetch) else {
            continue;
        };
        let Some(jacobians) = block.residual.jacobians(&fetch) else {
            continue;
        };
        // Whiten with the sqrt information and the robust weight.
        let sqrt_info: Vec<f64> = block.information.iter().map(|w| w.sqrt()).collect();
        let mut r = raw;
        for (i, ri) in r.iter_mut().enumerate() {
            *ri *= sqrt_info[i];
        }
        let s = r.norm_squared();
        let rw = block.loss.weight(s).sqrt();
        r *= rw;

        // Collect the whitened Jacobians of the free variables.
        let mut parts: Vec<(usize, DMatrix<f64>)> = Vec::new(); // (var idx, J)
        for (key, mut jac) in jacobians {
            if problem.is_fixed(key) {
                continue;
            }
            for row in 0..jac.nrows() {
                let w = sqrt_info[row] * rw;
                for col in 0..jac.ncols() {
                    jac[(row, col)] *= w;
                }
            }
            parts.push((key.0, jac));
        }
        if parts.is_empty() {
            continue;
        }

        for (i, (var_i, j_i)) in parts.iter().enumerate() {
            let g_i = j_i.transpose() * &r;
            for v in g_i.iter() {
                grad_inf = grad_inf.max(v.abs());
            }
            if let Some((off_i, dim_i)) = layout.cam[*var_i] {
                b_c.rows_mut(off_i, dim_i).axpy(-1.0, &g_i, 1.0);
                for (var_j, j_j) in parts.iter().skip(i) {
                    let h_ij = j_i.transpose() * j_j;
                    match (layout.cam[*var_i], layout.cam[*var_j]) {
                        (Some((oi, di)), Some((oj, dj))) => {
                            let mut view = h_cc.view_mut((oi, oj), (di, dj));
                            view += &h_ij;
                            if var_i != var_j {
                                let mut viewt = h_cc.view_mut((oj, oi), (dj, di));
                                viewt += &h_ij.transpose();
                            }
                        }
                        (Some((oi, di)), None) => {
                            // camera-landmark coupling
                            if let Some((slot, _)) = layout.lm[*var_j] {
                                let entry = landmarks[slot]
                                    .couplings
                                    .entry((oi, di))
                                    .or_insert_with(|| {
                                        DMatrix::zeros(di, h_ij.ncols())
                                    });
                                *entry += &h_ij;
                            }
                        }
                        _ => unreachable!("var_i is camera-side"),
                    }
                }
            } else if let Some((slot, _)) = layout.lm[*var_i] {
                let lmb = &mut landmarks[slot];
                lmb.b.axpy(-1.0, &g_i, 1.0);
                for (var_j, j_j) in parts.iter().skip(i) {
                    let h_ij = j_i.transpose() * j_j;
                    if *var_j == *var_i {
                        lmb.h += &h_ij;
                    } else if let Some((oj, dj)) = layout.cam[*var_j] {
                        // store as camera-landmark coupling (transpose)
                        let entry = lmb
                            .couplings
                            .entry((oj, dj))
                            .or_insert_with(|| DMatrix::zeros(dj, h_ij.nrows()));
                        *entry += &h_ij.transpose();
                    } else {
                        // Two distinct landmarks in one residual never
                        // happens for the supported kinds.
                        unreachable!("residual couples two landmark blocks");
                    }
                }
            }
        }
    }
    Some(Assembly {
        h_cc,
        b_c,
        landmarks,
        grad_inf,
    })
}
