//! Independent reference implementations shared by the integration suites
//! and the acceptance harness.

#![allow(dead_code)]

use mprio_core::gp::{GpModel, JITTER};
use mprio_core::kinematics::{forward_kinematics, Joint, RobotModel};
use mprio_core::qp::QpProblem;
use nalgebra::{DMatrix, DVector, Isometry3, Matrix6xX, Translation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

// ---------------------------------------------------------------------------
// QP

/// Random strictly convex QP. Small problems get a tight box that the
/// enumeration oracle treats as constraints; larger ones get a loose box
/// that must stay inactive.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, m: usize, tight_box: bool) -> QpProblem {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let h = a.transpose() * &a + DMatrix::identity(n, n) * rng.random_range(0.2..1.0);
    let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (lb, ub) = if tight_box {
        (
            DVector::from_fn(n, |_, _| -rng.random_range(0.05..1.0)),
            DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0)),
        )
    } else {
        (DVector::from_element(n, -1e3), DVector::from_element(n, 1e3))
    };
    let mut p = QpProblem::boxed(h, g, lb, ub);
    // Every row passes through a point inside the box so the problem is feasible.
    let x0 = DVector::from_fn(n, |i, _| rng.random_range(p.lb[i] * 0.5..=p.ub[i] * 0.5));
    for _ in 0..m {
        let row = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let slack = if rng.random::<f64>() < 0.3 {
            0.0
        } else {
            rng.random_range(0.0..0.3)
        };
        let lower = row.dot(&x0) - slack;
        p.push_inequality(&row, lower);
    }
    p
}

/// Minimum of a strictly convex QP by enumerating every active set: each
/// general row is active or not, and (with `with_box`) each variable is
/// free, at its lower bound or at its upper bound.
pub fn enumerate_qp(p: &QpProblem, with_box: bool) -> (DVector<f64>, f64) {
    let n = p.dim();
    let m = p.n_ineq();
    let box_states = if with_box { 3usize.pow(n as u32) } else { 1 };
    let mut best: Option<(DVector<f64>, f64)> = None;
    for general in 0..(1usize << m) {
        for b in 0..box_states {
            let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
            for j in 0..m {
                if general >> j & 1 == 1 {
                    rows.push((p.c.row(j).transpose(), p.c_lower[j]));
                }
            }
            let mut code = b;
            for i in 0..n {
                if with_box {
                    let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
                    match code % 3 {
                        1 => rows.push((e, p.lb[i])),
                        2 => rows.push((e, p.ub[i])),
                        _ => {}
                    }
                    code /= 3;
                }
            }
            if rows.len() > n {
                continue;
            }
            let Some(x) = equality_qp(p, &rows) else { continue };
            if p.max_violation(&x) > 1e-9 {
                continue;
            }
            let f = p.objective(&x);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
    }
    best.expect("feasible problem has a feasible active set")
}

fn equality_qp(p: &QpProblem, rows: &[(DVector<f64>, f64)]) -> Option<DVector<f64>> {
    let n = p.dim();
    let k = rows.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for i in 0..n {
        rhs[i] = -p.g[i];
    }
    for (j, (a, b)) in rows.iter().enumerate() {
        for i in 0..n {
            kkt[(n + j, i)] = a[i];
            kkt[(i, n + j)] = a[i];
        }
        rhs[n + j] = *b;
    }
    let lu = kkt.clone().full_piv_lu();
    let sol = lu.solve(&rhs)?;
    // Dependent active rows leave the KKT matrix singular.
    if !sol.iter().all(|v| v.is_finite()) || (&kkt * &sol - &rhs).amax() > 1e-8 {
        return None;
    }
    Some(sol.rows(0, n).into_owned())
}

// ---------------------------------------------------------------------------
// Kinematics

fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let axis = random_unit(rng);
    UnitQuaternion::from_axis_angle(&axis, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-3 {
            return Unit::new_normalize(v);
        }
    }
}

fn random_frame<R: Rng>(rng: &mut R, reach: f64) -> Isometry3<f64> {
    let t = Vector3::from_fn(|_, _| rng.random_range(-reach..reach));
    Isometry3::from_parts(Translation3::from(t), random_rotation(rng))
}

/// Serial chain with 1..=8 joints, arbitrary axes, link transforms, base and tool.
pub fn random_chain<R: Rng>(rng: &mut R) -> RobotModel {
    let n = rng.random_range(1..=8);
    let joints = (0..n)
        .map(|_| Joint {
            axis: random_unit(rng),
            origin: random_frame(rng, 0.4),
        })
        .collect();
    RobotModel::new(
        "random",
        random_frame(rng, 1.0),
        joints,
        random_frame(rng, 0.3),
        vec![-2.0; n],
        vec![2.0; n],
    )
    .expect("random chain is valid")
}

/// Central-difference Jacobian: linear rows from positions, angular rows
/// from the relative rotation between the two perturbed poses.
pub fn fd_jacobian(model: &RobotModel, q: &[f64], h: f64) -> Matrix6xX<f64> {
    let n = q.len();
    let mut jac = Matrix6xX::zeros(n);
    for j in 0..n {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[j] += h;
        qm[j] -= h;
        let a = forward_kinematics(model, &qp).unwrap();
        let b = forward_kinematics(model, &qm).unwrap();
        let lin = (a.position - b.position) / (2.0 * h);
        let ang = (a.orientation * b.orientation.inverse()).scaled_axis() / (2.0 * h);
        for r in 0..3 {
            jac[(r, j)] = lin[r];
            jac[(r + 3, j)] = ang[r];
        }
    }
    jac
}

// ---------------------------------------------------------------------------
// Gaussian process

/// Posterior mean and noisy-observation std by a plain LU solve.
pub fn dense_gp_predict(m: &GpModel, x: &[f64]) -> (f64, f64) {
    let h = m.hyper();
    let rows = m.inputs();
    let (y_mean, y_scale) = m.standardization();
    let n = rows.len();
    let k = |a: &[f64], b: &[f64]| {
        let s: f64 = a
            .iter()
            .zip(b)
            .zip(&h.lengthscales)
            .map(|((u, v), l)| ((u - v) / l).powi(2))
            .sum();
        h.signal_variance * (-0.5 * s).exp()
    };
    let mut kk = DMatrix::from_fn(n, n, |i, j| k(&rows[i], &rows[j]));
    for i in 0..n {
        kk[(i, i)] += h.noise_variance + JITTER;
    }
    let y = DVector::from_iterator(n, m.targets().iter().map(|v| (v - y_mean) / y_scale));
    let ks = DVector::from_fn(n, |i, _| k(&rows[i], x));
    let lu = kk.lu();
    let alpha = lu.solve(&y).unwrap();
    let v = lu.solve(&ks).unwrap();
    let var = (h.signal_variance + h.noise_variance - ks.dot(&v)).max(0.0);
    (y_mean + y_scale * ks.dot(&alpha), y_scale * var.sqrt())
}

// ---------------------------------------------------------------------------
// Optimization

/// Best feasible objective on a regular grid over `[0, l_max]^dim`.
pub fn grid_optimum<F, G>(
    objective: F,
    constraint: G,
    t_lim: f64,
    l_max: f64,
    dim: usize,
    steps: usize,
) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let total = (steps + 1).pow(dim as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for idx in 0..total {
        let mut code = idx;
        let x: Vec<f64> = (0..dim)
            .map(|_| {
                let k = code % (steps + 1);
                code /= steps + 1;
                l_max * k as f64 / steps as f64
            })
            .collect();
        if constraint(&x) >= t_lim {
            continue;
        }
        let f = objective(&x);
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((x, f));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Statistics

/// Average ranks, ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman's ρ and its two-sided p-value from the t approximation.
pub fn spearman(a: &[f64], b: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let rho = pearson(&ranks(a), &ranks(b));
    let n = a.len() as f64;
    let t = rho * ((n - 2.0) / (1.0 - rho * rho).max(1e-300)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 2.0).unwrap();
    (rho, 2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Integrated autocorrelation time by Geyer's initial positive sequence.
pub fn autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let rho = |lag: usize| (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * var);
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    tau
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------------------
// Pipeline

/// sample → fit → optimize → evaluate into `dir`; returns the artifacts that
/// must be reproducible (manifests carry wall-clock times and are left out).
pub fn run_pipeline(
    dir: &std::path::Path,
    scene: &str,
    n_samples: usize,
    n_trials: usize,
    seed: u64,
) -> Vec<std::path::PathBuf> {
    use mprio_core::pipeline::{cmd_evaluate, cmd_fit, cmd_optimize, cmd_sample, PRODUCT_MODEL, RISK_MODEL};
    use mprio_core::GaConfig;
    let dataset = dir.join("dataset.csv");
    let models = dir.join("models");
    let results = dir.join("results.json");
    let assessment = dir.join("assessment.json");
    let records = cmd_sample(scene, n_samples, n_trials, seed, &dataset).expect("sample");
    cmd_fit(&dataset, &models, seed).expect("fit");
    let mut risks: Vec<f64> = records.iter().map(|r| r.x_risk).collect();
    risks.sort_by(f64::total_cmp);
    let t_lim = risks[risks.len() / 2];
    let ga = GaConfig {
        seed,
        generations: 40,
        population_size: 32,
        ..GaConfig::default()
    };
    cmd_optimize(&models, &[t_lim], &[0.0, 1.0], 0.5, &ga, &results).expect("optimize");
    cmd_evaluate(scene, &results, n_trials, seed, &assessment).expect("evaluate");
    vec![
        dataset,
        models.join(PRODUCT_MODEL),
        models.join(RISK_MODEL),
        results,
        assessment,
    ]
}
