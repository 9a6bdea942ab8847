//! Dense convex QP solver based on operator splitting (ADMM).
//!
//! Solves `min ½xᵀHx + gᵀx` subject to `lb ≤ x ≤ ub` and `C·x ≥ c_lower`.
//! The iteration follows the OSQP scheme: a single quasi-definite linear
//! system per penalty value, over-relaxation, adaptive penalty, a primal
//! infeasibility certificate, and a final polishing step that re-solves the
//! equality-constrained problem on the detected active set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

/// Slack below which a constraint counts as active in [`kkt_residual`].
pub const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// One row per inequality `c_i·x ≥ c_lower_i`.
    pub c: DMatrix<f64>,
    pub c_lower: DVector<f64>,
}

impl QpProblem {
    /// Box-constrained problem with no general inequalities.
    pub fn boxed(h: DMatrix<f64>, g: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        let n = g.len();
        QpProblem {
            h,
            g,
            lb,
            ub,
            c: DMatrix::zeros(0, n),
            c_lower: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.c.nrows()
    }

    pub fn push_inequality(&mut self, row: &DVector<f64>, lower: f64) {
        let k = self.c.nrows();
        let c = std::mem::replace(&mut self.c, DMatrix::zeros(0, 0));
        let mut c = c.insert_row(k, 0.0);
        c.row_mut(k).copy_from(&row.transpose());
        self.c = c;
        let cl = std::mem::replace(&mut self.c_lower, DVector::zeros(0));
        self.c_lower = cl.push(lower);
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest constraint violation at `x` (zero when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..x.len() {
            v = v.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]);
        }
        let cx = &self.c * x;
        for j in 0..cx.len() {
            v = v.max(self.c_lower[j] - cx[j]);
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let dims = [
            (self.h.nrows(), "H rows"),
            (self.h.ncols(), "H columns"),
            (self.lb.len(), "lower bounds"),
            (self.ub.len(), "upper bounds"),
            (self.c.ncols(), "constraint columns"),
        ];
        for (actual, context) in dims {
            if actual != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual,
                    context,
                });
            }
        }
        if self.c_lower.len() != self.c.nrows() {
            return Err(Error::Dimension {
                expected: self.c.nrows(),
                actual: self.c_lower.len(),
                context: "constraint lower bounds",
            });
        }
        let scale = self.h.amax().max(1.0);
        for i in 0..n {
            if !(self.lb[i] <= self.ub[i]) {
                return Err(Error::Config(format!(
                    "variable {i}: lower bound {} exceeds upper bound {}",
                    self.lb[i], self.ub[i]
                )));
            }
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Config("H is not symmetric".into()));
                }
            }
        }
        if self.h.iter().chain(self.g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite entry in H or g".into()));
        }
        let shifted = &self.h + DMatrix::identity(n, n) * (1e-8 * scale);
        if Cholesky::new(shifted).is_none() {
            return Err(Error::Config("H is not positive semidefinite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Largest constraint violation of `x`.
    pub primal_residual: f64,
    /// Stationarity residual `‖Hx + g − Σλa‖∞`, relative to the problem scale.
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub check_interval: usize,
    pub adaptive_rho_interval: usize,
    pub infeasibility_tol: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_interval: 5,
            adaptive_rho_interval: 25,
            infeasibility_tol: 1e-5,
            polish: true,
        }
    }
}

#[derive(Debug, Clone)]
struct WarmStart {
    x: DVector<f64>,
    // Unscaled duals, split so that the box part survives a change in the
    // number of inequality rows.
    y_box: DVector<f64>,
    y_ineq: DVector<f64>,
    rho: f64,
}

/// Stateful solver; keeps the previous solution as a warm start.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    warm: Option<WarmStart>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;

struct Admm<'a> {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: &'a [f64],
    u: &'a [f64],
    sigma: f64,
}

impl Admm<'_> {
    fn rho_vec(&self, rho: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.l.len(),
            self.l.iter().zip(self.u).map(|(&l, &u)| {
                if l == u {
                    rho * RHO_EQ_FACTOR
                } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
                    RHO_MIN
                } else {
                    rho
                }
            }),
        )
    }

    fn factor(&self, rho: &DVector<f64>) -> Cholesky<f64, Dyn> {
        let n = self.p.nrows();
        let mut k = &self.p + DMatrix::identity(n, n) * self.sigma;
        let mut scaled = self.a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= rho[i];
        }
        k += self.a.tr_mul(&scaled);
        Cholesky::new(k).expect("ADMM system matrix is positive definite")
    }

    fn project(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.l[i], self.u[i]);
        }
    }

    /// (primal residual, dual residual, primal scale, dual scale)
    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64, f64) {
        let ax = &self.a * x;
        let px = &self.p * x;
        let aty = self.a.tr_mul(y);
        let r_p = (&ax - z).amax();
        let r_d = (&px + &self.q + &aty).amax();
        let s_p = ax.amax().max(z.amax());
        let s_d = px.amax().max(aty.amax()).max(self.q.amax());
        (r_p, r_d, s_p, s_d)
    }

    fn infeasible(&self, dy: &DVector<f64>, tol: f64) -> bool {
        let norm = dy.amax();
        if norm < 1e-12 {
            return false;
        }
        if self.a.tr_mul(dy).amax() > tol * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            if dy[i] > 0.0 {
                if self.u[i] == f64::INFINITY {
                    if dy[i] > tol * norm {
                        return false;
                    }
                } else {
                    support += self.u[i] * dy[i];
                }
            } else if dy[i] < 0.0 {
                if self.l[i] == f64::NEG_INFINITY {
                    if -dy[i] > tol * norm {
                        return false;
                    }
                } else {
                    support += self.l[i] * dy[i];
                }
            }
        }
        support < -tol * norm
    }

    /// Re-solve on the active set guessed from the ADMM iterate.
    fn polish(&self, z: &DVector<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let mut active = Vec::new();
        for i in 0..self.l.len() {
            let lower = z[i] - self.l[i] < -y[i];
            let upper = self.u[i] - z[i] < y[i];
            if self.l[i] == self.u[i] || lower {
                active.push((i, self.l[i]));
            } else if upper {
                active.push((i, self.u[i]));
            }
        }
        self.solve_on(&active)
    }

    /// Primal-dual active-set iterations seeded with the rows that carry a
    /// multiplier in `y`.
    fn active_set_guess(&self, y: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        const TRIES: usize = 5;
        let m = self.l.len();
        let bound = |i: usize, upper: bool| if upper { self.u[i] } else { self.l[i] };
        // Per row: None (inactive) or Some(upper side).
        let mut state: Vec<Option<bool>> = (0..m)
            .map(|i| {
                if self.l[i] == self.u[i] || (y[i] < 0.0 && self.l[i].is_finite()) {
                    Some(false)
                } else if y[i] > 0.0 && self.u[i].is_finite() {
                    Some(true)
                } else {
                    None
                }
            })
            .collect();
        for _ in 0..TRIES {
            let active: Vec<(usize, f64)> = state
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.map(|up| (i, bound(i, up))))
                .collect();
            let (x, yy) = self.solve_on(&active)?;
            if polish_ok(self, &x, &yy, tol) {
                return Some((x, yy));
            }
            let ax = &self.a * &x;
            let mut changed = false;
            for i in 0..m {
                if self.l[i] == self.u[i] {
                    continue;
                }
                match state[i] {
                    Some(false) if yy[i] > 0.0 => {
                        state[i] = None;
                        changed = true;
                    }
                    Some(true) if yy[i] < 0.0 => {
                        state[i] = None;
                        changed = true;
                    }
                    None if ax[i] < self.l[i] => {
                        state[i] = Some(false);
                        changed = true;
                    }
                    None if ax[i] > self.u[i] => {
                        state[i] = Some(true);
                        changed = true;
                    }
                    _ => {}
                }
            }
            if !changed {
                return None;
            }
        }
        None
    }

    /// Dual active-set method for strictly convex problems: start at the
    /// unconstrained minimum and add violated constraints one at a time,
    /// dropping those whose multipliers would turn negative. Returns `None`
    /// when `P` is not positive definite, the problem looks infeasible, or
    /// the iteration budget runs out.
    fn dual_active_set(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.p.nrows();
        let m = self.l.len();
        let chol = Cholesky::new(self.p.clone())?;
        // One-sided constraints cᵀx ≥ b: (row, upper side).
        let normal = |(i, up): (usize, bool)| -> DVector<f64> {
            let row = self.a.row(i).transpose();
            if up {
                -row
            } else {
                row
            }
        };
        let rhs = |(i, up): (usize, bool)| if up { -self.u[i] } else { self.l[i] };
        let scale = 1.0 + self.q.amax();
        let mut x = chol.solve(&(-&self.q));
        let mut active: Vec<(usize, bool)> = Vec::new();
        let mut mult: Vec<f64> = Vec::new();
        let max_steps = 10 * (n + m) + 20;
        let mut steps = 0;
        // Equalities first; their multipliers are free.
        let equalities: Vec<usize> = (0..m).filter(|&i| self.l[i] == self.u[i]).collect();
        let mut pending_eq = equalities.iter().copied();
        loop {
            steps += 1;
            if steps > max_steps {
                return None;
            }
            let (cons, is_eq) = if let Some(i) = pending_eq.next() {
                ((i, false), true)
            } else {
                let mut worst = None;
                let mut worst_s = -1e-12 * scale;
                for i in 0..m {
                    if self.l[i] == self.u[i] {
                        continue;
                    }
                    let ax = self.a.row(i).dot(&x.transpose());
                    for (up, sv) in [(false, ax - self.l[i]), (true, self.u[i] - ax)] {
                        if sv.is_finite() && sv < worst_s && !active.contains(&(i, up)) {
                            worst_s = sv;
                            worst = Some((i, up));
                        }
                    }
                }
                match worst {
                    None => break,
                    Some(c) => (c, false),
                }
            };
            let c_p = normal(cons);
            let b_p = rhs(cons);
            let mut u_p = 0.0;
            loop {
                steps += 1;
                if steps > max_steps {
                    return None;
                }
                let k = active.len();
                let hinv_c = chol.solve(&c_p);
                let (z, r) = if k == 0 {
                    (hinv_c, DVector::zeros(0))
                } else {
                    let mut nmat = DMatrix::zeros(n, k);
                    for (j, &c) in active.iter().enumerate() {
                        nmat.set_column(j, &normal(c));
                    }
                    let hinv_n = chol.solve(&nmat);
                    let gram = nmat.tr_mul(&hinv_n);
                    let r = gram.lu().solve(&(-(nmat.tr_mul(&hinv_c))))?;
                    (hinv_c + &hinv_n * &r, r)
                };
                let s_p = c_p.dot(&x) - b_p;
                let cz = c_p.dot(&z);
                // Partial step limit from multipliers that must stay ≥ 0.
                let mut t1 = f64::INFINITY;
                let mut block = None;
                for (j, &c) in active.iter().enumerate() {
                    let eq = self.l[c.0] == self.u[c.0];
                    if !eq && r[j] < 0.0 {
                        let t = -mult[j] / r[j];
                        if t < t1 {
                            t1 = t;
                            block = Some(j);
                        }
                    }
                }
                let zero_dir = z.amax() <= 1e-13 * (1.0 + c_p.amax());
                if is_eq {
                    if zero_dir {
                        return None;
                    }
                    // Equalities are reached exactly and may move either way.
                    let t = -s_p / cz;
                    x.axpy(t, &z, 1.0);
                    for j in 0..k {
                        mult[j] += t * r[j];
                    }
                    active.push(cons);
                    mult.push(t);
                    break;
                }
                let t2 = if zero_dir { f64::INFINITY } else { -s_p / cz };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return None;
                }
                if !zero_dir {
                    x.axpy(t, &z, 1.0);
                }
                for j in 0..k {
                    mult[j] += t * r[j];
                }
                u_p += t;
                if t == t2 {
                    active.push(cons);
                    mult.push(u_p);
                    break;
                }
                let j = block.expect("finite partial step has a blocking constraint");
                active.remove(j);
                mult.remove(j);
            }
        }
        let mut y = DVector::zeros(m);
        for (&(i, up), &u) in active.iter().zip(&mult) {
            y[i] += if up { u } else { -u };
        }
        // Clean up the accumulated rounding with one direct solve.
        let pinned: Vec<(usize, f64)> = active
            .iter()
            .map(|&(i, up)| (i, if up { self.u[i] } else { self.l[i] }))
            .collect();
        if let Some((xs, ys)) = self.solve_on(&pinned) {
            let consistent = (0..m).all(|i| y[i] == 0.0 || ys[i] * y[i] >= 0.0);
            if consistent {
                return Some((xs, ys));
            }
        }
        Some((x, y))
    }

    /// Equality-constrained solve with the given rows pinned to the given values.
    fn solve_on(&self, active: &[(usize, f64)]) -> Option<(DVector<f64>, DVector<f64>)> {
        const DELTA: f64 = 1e-7;
        let n = self.p.nrows();
        let m = self.l.len();
        let rows: Vec<usize> = active.iter().map(|a| a.0).collect();
        let rhs_b: Vec<f64> = active.iter().map(|a| a.1).collect();
        let na = rows.len();
        let mut kkt = DMatrix::zeros(n + na, n + na);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.a[(i, j)];
                kkt[(j, n + r)] = self.a[(i, j)];
            }
        }
        let mut rhs = DVector::zeros(n + na);
        rhs.rows_mut(0, n).copy_from(&(-&self.q));
        for (r, b) in rhs_b.iter().enumerate() {
            rhs[n + r] = *b;
        }
        let good = |sol: &DVector<f64>, exact: &DMatrix<f64>| (&rhs - exact * sol).amax() < 1e-12 * (1.0 + rhs.amax());
        // Direct solve first; the regularized system with refinement is the
        // fallback for a singular active set.
        let mut sol = kkt.clone().lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n + na));
        if !good(&sol, &kkt) {
            let exact = kkt.clone();
            for i in 0..n {
                kkt[(i, i)] += DELTA;
            }
            for r in 0..na {
                kkt[(n + r, n + r)] -= DELTA;
            }
            let lu = kkt.lu();
            sol = lu.solve(&rhs)?;
            for _ in 0..25 {
                let res = &rhs - &exact * &sol;
                if res.amax() < 1e-14 * (1.0 + rhs.amax()) {
                    break;
                }
                sol += lu.solve(&res)?;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol.rows(0, n).into_owned();
        let mut y_full = DVector::zeros(m);
        for (r, &i) in rows.iter().enumerate() {
            y_full[i] = sol[n + r];
        }
        Some((x, y_full))
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        QpSolver { settings, warm: None }
    }

    pub fn with_tolerance(tol: f64, max_iter: usize) -> Self {
        QpSolver::new(QpSettings {
            tol,
            max_iter,
            ..QpSettings::default()
        })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, prob: &QpProblem) -> Result<QpSolution> {
        prob.validate()?;
        let st = self.settings;
        let n = prob.dim();
        let k = prob.n_ineq();
        let m = n + k;

        let scale_src = prob.h.amax().max(prob.g.amax());
        let cost_scale = if scale_src > 0.0 {
            (1.0 / scale_src).clamp(1e-9, 1e4)
        } else {
            1.0
        };

        let mut a = DMatrix::zeros(m, n);
        a.view_mut((0, 0), (n, n)).fill_with_identity();
        a.view_mut((n, 0), (k, n)).copy_from(&prob.c);
        let l: Vec<f64> = prob.lb.iter().chain(prob.c_lower.iter()).copied().collect();
        let u: Vec<f64> = prob
            .ub
            .iter()
            .copied()
            .chain(std::iter::repeat_n(f64::INFINITY, k))
            .collect();
        let admm = Admm {
            p: &prob.h * cost_scale,
            q: &prob.g * cost_scale,
            a,
            l: &l,
            u: &u,
            sigma: st.sigma,
        };

        let (mut x, mut y, mut rho) = match &self.warm {
            Some(w) if w.x.len() == n => {
                let mut y = DVector::zeros(m);
                y.rows_mut(0, n).copy_from(&(&w.y_box * cost_scale));
                if w.y_ineq.len() == k {
                    y.rows_mut(n, k).copy_from(&(&w.y_ineq * cost_scale));
                }
                (w.x.clone(), y, w.rho)
            }
            _ => (DVector::zeros(n), DVector::zeros(m), st.rho),
        };
        let mut z = &admm.a * &x;
        admm.project(&mut z);

        // Guess the active set from the starting duals, then try the exact
        // dual method; either is accepted only if its KKT point checks out.
        let mut polished_result = if st.polish {
            admm.active_set_guess(&y, st.tol).or_else(|| {
                admm.dual_active_set()
                    .filter(|(xp, yp)| polish_ok(&admm, xp, yp, st.tol))
            })
        } else {
            None
        };

        let mut rho_v = admm.rho_vec(rho);
        let mut chol = if polished_result.is_none() {
            Some(admm.factor(&rho_v))
        } else {
            None
        };

        let mut tol = st.tol;
        let mut converged_at_tol = false;
        let mut status = QpStatus::MaxIter;
        let mut iter = 0;
        let mut x_tilde;
        let mut z_hat = DVector::zeros(m);
        while polished_result.is_none() && iter < st.max_iter {
            iter += 1;
            let rhs = &x * st.sigma - &admm.q + admm.a.tr_mul(&(rho_v.component_mul(&z) - &y));
            x_tilde = chol.as_ref().expect("factored before iterating").solve(&rhs);
            let z_tilde = &admm.a * &x_tilde;
            x = &x_tilde * st.alpha + &x * (1.0 - st.alpha);
            z_hat.copy_from(&(&z_tilde * st.alpha + &z * (1.0 - st.alpha)));
            let mut z_new = &z_hat + y.component_div(&rho_v);
            admm.project(&mut z_new);
            let dy = rho_v.component_mul(&(&z_hat - &z_new));
            y += &dy;
            z = z_new;

            if iter % st.check_interval != 0 && iter != st.max_iter {
                continue;
            }
            let (r_p, r_d, s_p, s_d) = admm.residuals(&x, &z, &y);
            if r_p <= tol * (1.0 + s_p) && r_d <= tol * (1.0 + s_d) {
                if tol == st.tol {
                    converged_at_tol = true;
                    status = QpStatus::Optimal;
                }
                if !st.polish {
                    break;
                }
                if let Some((xp, yp)) = admm.polish(&z, &y) {
                    if polish_ok(&admm, &xp, &yp, st.tol) {
                        polished_result = Some((xp, yp));
                        break;
                    }
                }
                if tol < st.tol * 1e-3 {
                    break;
                }
                tol *= 0.1;
                continue;
            }
            if admm.infeasible(&dy, st.infeasibility_tol) {
                status = QpStatus::Infeasible;
                break;
            }
            if iter % st.adaptive_rho_interval == 0 {
                let ratio = ((r_p / (s_p + 1e-30)) / (r_d / (s_d + 1e-30) + 1e-30)).sqrt();
                let rho_new = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if rho_new > 5.0 * rho || rho_new < 0.2 * rho {
                    rho = rho_new;
                    rho_v = admm.rho_vec(rho);
                    chol = Some(admm.factor(&rho_v));
                }
            }
        }

        let polished = polished_result.is_some();
        if let Some((xp, yp)) = polished_result {
            x = xp;
            y = yp;
            status = QpStatus::Optimal;
        } else if converged_at_tol {
            status = QpStatus::Optimal;
        }
        if status != QpStatus::Infeasible {
            for i in 0..n {
                x[i] = x[i].clamp(prob.lb[i], prob.ub[i]);
            }
        }

        let dual_residual = (&admm.p * &x + &admm.q + admm.a.tr_mul(&y)).amax();
        let primal_residual = prob.max_violation(&x);
        let y_unscaled = &y / cost_scale;
        if status != QpStatus::Infeasible {
            self.warm = Some(WarmStart {
                x: x.clone(),
                y_box: y_unscaled.rows(0, n).into_owned(),
                y_ineq: y_unscaled.rows(n, k).into_owned(),
                rho,
            });
        } else {
            self.warm = None;
        }
        Ok(QpSolution {
            x,
            status,
            primal_residual,
            dual_residual,
            iterations: iter,
            polished,
        })
    }
}

fn polish_ok(admm: &Admm<'_>, x: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
    let ax = &admm.a * x;
    for i in 0..ax.len() {
        let viol = (admm.l[i] - ax[i]).max(ax[i] - admm.u[i]);
        if viol > tol * 1e-2 * (1.0 + ax[i].abs()) {
            return false;
        }
        // Lower-active rows carry y ≤ 0 and upper-active rows y ≥ 0.
        if admm.l[i] != admm.u[i] {
            let at_lower = (ax[i] - admm.l[i]).abs() <= (ax[i] - admm.u[i]).abs();
            if (at_lower && y[i] > tol) || (!at_lower && y[i] < -tol) {
                return false;
            }
        }
    }
    let r_d = (&admm.p * x + &admm.q + admm.a.tr_mul(y)).amax();
    r_d <= tol * 1e-2
}

/// One-shot convenience wrapper around [`QpSolver`].
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    QpSolver::with_tolerance(tol, max_iter).solve(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// ‖Hx + g − Σλᵢ∇cᵢ‖₂ with λ ≥ 0 fitted on the active set.
    pub stationarity: f64,
    /// Largest constraint violation.
    pub primal: f64,
    /// max |λᵢ · slackᵢ|.
    pub complementarity: f64,
}

/// KKT residuals of `x`, with multipliers recovered by non-negative least
/// squares over the constraints whose slack is below [`ACTIVE_TOL`].
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>) -> KktResidual {
    let n = p.dim();
    // (gradient, slack) for every finite constraint in `a·x ≥ b` form.
    let mut active: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut primal: f64 = 0.0;
    let mut consider = |grad: DVector<f64>, slack: f64| {
        primal = primal.max(-slack);
        if slack <= ACTIVE_TOL {
            active.push((grad, slack));
        }
    };
    for i in 0..n {
        if p.lb[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            consider(e, x[i] - p.lb[i]);
        }
        if p.ub[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            consider(e, p.ub[i] - x[i]);
        }
    }
    let cx = &p.c * x;
    for j in 0..p.n_ineq() {
        if p.c_lower[j].is_finite() {
            consider(p.c.row(j).transpose(), cx[j] - p.c_lower[j]);
        }
    }
    let grad = &p.h * x + &p.g;
    if active.is_empty() {
        return KktResidual {
            stationarity: grad.norm(),
            primal,
            complementarity: 0.0,
        };
    }
    let mut gmat = DMatrix::zeros(n, active.len());
    for (c, (a, _)) in active.iter().enumerate() {
        gmat.set_column(c, a);
    }
    let lambda = nnls(&gmat, &grad);
    let stationarity = (&grad - &gmat * &lambda).norm();
    let complementarity = active
        .iter()
        .zip(lambda.iter())
        .map(|((_, s), l)| (l * s).abs())
        .fold(0.0, f64::max);
    KktResidual {
        stationarity,
        primal,
        complementarity,
    }
}

/// Lawson–Hanson non-negative least squares: `min ‖A·λ − b‖, λ ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let tol = 1e-12 * (1.0 + a.amax() * b.amax());

    let ls_on = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
        let mut sub = DMatrix::zeros(a.nrows(), idx.len());
        for (c, &j) in idx.iter().enumerate() {
            sub.set_column(c, &a.column(j));
        }
        let svd = SVD::new(sub, true, true);
        let s = svd.solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(p);
        for (c, &j) in idx.iter().enumerate() {
            full[j] = s[c];
        }
        full
    };

    for _ in 0..3 * p + 3 {
        let w = a.tr_mul(&(b - a * &x));
        let candidate = (0..p)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let s = ls_on(&passive);
            if (0..p).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..p).filter(|&i| passive[i] && s[i] <= 0.0) {
                alpha = alpha.min(x[i] / (x[i] - s[i]));
            }
            x += (&s - &x) * alpha;
            for i in 0..p {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&b| b) {
                break;
            }
        }
    }
    x
}
