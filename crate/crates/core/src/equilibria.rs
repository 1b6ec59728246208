//! Critical points of `J` and `J_tau`.
//!
//! Two routes: a Newton search over the diagonal of the eigenframe (biaxial),
//! and the axially symmetric reduction `Q = S (n (x) n - I/3)`, where the dual
//! problem has the single multiplier `Lambda = l (n (x) n - I/3)` and every
//! integral is one-dimensional in `x = p.n`.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use roots::{find_root_brent, Convergency};

use crate::dual_solver::{DualState, SolveOptions};
use crate::error::{Constraint, Error, Result};
use crate::macro_energy::{evaluate_with, fd_hessian, EnergyEval};
use crate::quadrature::AxialRule;
use crate::tensor3::{in_domain_of_j, TracelessSym3};

/// Eigenvalues with `|mu|` at or below this, times `max(1, spectral radius)`,
/// count as zero.
pub const STABILITY_THRESHOLD: f64 = 1e-6;
/// Largest angle between a zero mode and the rotation-orbit tangent space for
/// the mode to be treated as rotational.
pub const ZERO_MODE_ANGLE: f64 = 1e-3;
/// Step of the finite-difference Hessian used for classification.
pub const HESSIAN_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stability {
    Minimum,
    Saddle,
    Maximum,
    Degenerate,
}

impl Stability {
    pub fn label(&self) -> &'static str {
        match self {
            Stability::Minimum => "min",
            Stability::Saddle => "saddle",
            Stability::Maximum => "max",
            Stability::Degenerate => "degenerate",
        }
    }

    /// Verdict from Hessian eigenvalues; `|mu| <= zero_tol` counts as zero.
    pub fn from_spectrum(values: impl IntoIterator<Item = f64>, zero_tol: f64) -> Self {
        let (mut pos, mut neg, mut zero) = (false, false, false);
        for v in values {
            if v > zero_tol {
                pos = true;
            } else if v < -zero_tol {
                neg = true;
            } else {
                zero = true;
            }
        }
        match (pos, neg, zero) {
            (true, true, _) => Stability::Saddle,
            (_, _, true) => Stability::Degenerate,
            (true, false, false) => Stability::Minimum,
            (false, true, false) => Stability::Maximum,
            (false, false, false) => Stability::Degenerate,
        }
    }
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `J` (or `J_tau` when `tau` is set) with its gradient.
#[derive(Clone, Copy, Debug)]
struct Energy {
    eta: f64,
    tau: Option<f64>,
    opts: SolveOptions,
}

impl Energy {
    fn new(eta: f64, tau: Option<f64>, opts: SolveOptions) -> Result<Self> {
        if let Some(t) = tau {
            if !(t > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "temperature tau must be positive, got {t}"
                )));
            }
        }
        if eta >= 2.0 / 3.0 {
            return Err(Error::Domain(Constraint::PackingLimit));
        }
        Ok(Self { eta, tau, opts })
    }

    fn eval(&self, q: &TracelessSym3) -> Result<(f64, TracelessSym3, EnergyEval)> {
        let e = evaluate_with(q, self.eta, &self.opts)?;
        Ok(match self.tau {
            Some(t) => (e.value - q.norm_sq() / (2.0 * t), e.grad - *q * (1.0 / t), e),
            None => (e.value, e.grad, e),
        })
    }

    fn grad(&self, q: &TracelessSym3) -> Result<TracelessSym3> {
        Ok(self.eval(q)?.1)
    }

    fn admissible(&self, q: &TracelessSym3) -> bool {
        in_domain_of_j(q, self.eta)
    }
}

/// Verdict of [`stability_classify`].
#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub stability: Stability,
    /// All five Hessian eigenvalues, ascending.
    pub spectrum: [f64; 5],
    /// Number of eigenvalues discarded as rotational zero modes.
    pub rotational_modes: usize,
}

/// Orthonormal basis of `{[W, Q] : W skew}` in the 5 coordinates.
fn rotation_tangents(q: &TracelessSym3) -> Vec<[f64; 5]> {
    let m = q.to_matrix();
    let scale = q.norm();
    let mut basis: Vec<[f64; 5]> = Vec::new();
    for axis in 0..3 {
        let mut w = [[0.0; 3]; 3];
        let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
        w[i][j] = 1.0;
        w[j][i] = -1.0;
        let mut c = [[0.0; 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                for k in 0..3 {
                    c[r][s] += w[r][k] * m[k][s] - m[r][k] * w[k][s];
                }
            }
        }
        let mut v = TracelessSym3::from_matrix(&c).coords();
        for b in &basis {
            let d: f64 = (0..5).map(|k| v[k] * b[k]).sum();
            for k in 0..5 {
                v[k] -= d * b[k];
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 * scale.max(f64::MIN_POSITIVE) && n > 1e-12 {
            basis.push(v.map(|x| x / n));
        }
    }
    basis
}

/// Classify a critical point from the finite-difference Hessian of `J`
/// (minus `Id / tau` when thermal), ignoring rotational zero modes.
pub fn stability_classify(q: &TracelessSym3, eta: f64, tau: Option<f64>) -> Result<StabilityReport> {
    stability_classify_with(q, eta, tau, &SolveOptions::default())
}

pub fn stability_classify_with(
    q: &TracelessSym3,
    eta: f64,
    tau: Option<f64>,
    opts: &SolveOptions,
) -> Result<StabilityReport> {
    let energy = Energy::new(eta, tau, *opts)?;
    classify_with(&energy, q)
}

fn classify_with(energy: &Energy, q: &TracelessSym3) -> Result<StabilityReport> {
    let h = fd_hessian(|x| energy.grad(x), q, HESSIAN_STEP)?;
    let eig = SymmetricEigen::new(h);
    let tangents = rotation_tangents(q);
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut spectrum = [0.0; 5];
    let mut kept = Vec::new();
    let mut rotational = 0;
    let radius = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zero_tol = STABILITY_THRESHOLD * radius.max(1.0);
    for (slot, &k) in order.iter().enumerate() {
        let mu = eig.eigenvalues[k];
        spectrum[slot] = mu;
        let v = eig.eigenvectors.column(k);
        if mu.abs() <= zero_tol && !tangents.is_empty() {
            let mut proj = [0.0; 5];
            for t in &tangents {
                let d: f64 = (0..5).map(|i| v[i] * t[i]).sum();
                for i in 0..5 {
                    proj[i] += d * t[i];
                }
            }
            let off = (0..5).map(|i| (v[i] - proj[i]).powi(2)).sum::<f64>().sqrt();
            if off <= ZERO_MODE_ANGLE.sin() {
                rotational += 1;
                continue;
            }
        }
        kept.push(mu);
    }
    Ok(StabilityReport {
        stability: Stability::from_spectrum(kept, zero_tol),
        spectrum,
        rotational_modes: rotational,
    })
}

/// A converged critical point of `J` or `J_tau`.
#[derive(Clone, Debug)]
pub struct CriticalPoint {
    pub q: TracelessSym3,
    pub lambda: TracelessSym3,
    pub eta: f64,
    pub tau: Option<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub hessian_spectrum: [f64; 5],
    pub stability: Stability,
    pub state: DualState,
}

/// Controls for the diagonal-frame Newton searches.
#[derive(Clone, Copy, Debug)]
pub struct CriticalOptions {
    pub solve: SolveOptions,
    /// Target 5-D gradient norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Step of the finite-difference Jacobian in diagonal coordinates.
    pub fd_step: f64,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            tol: 1e-10,
            max_iter: 100,
            fd_step: 1e-6,
        }
    }
}

/// `diag(q1, q2, -q1 - q2)`.
pub fn diagonal_tensor(q1: f64, q2: f64) -> TracelessSym3 {
    TracelessSym3::from_diagonal([q1, q2, -q1 - q2])
}

fn from_reduced(c: Vector2<f64>) -> TracelessSym3 {
    TracelessSym3::from_coords([c[0], c[1], 0.0, 0.0, 0.0])
}

fn reduced(g: &TracelessSym3) -> Vector2<f64> {
    let c = g.coords();
    Vector2::new(c[0], c[1])
}

fn reduced_jacobian(energy: &Energy, c: Vector2<f64>, h: f64) -> Result<Matrix2<f64>> {
    let mut jac = Matrix2::zeros();
    for k in 0..2 {
        let mut e = Vector2::zeros();
        e[k] = h;
        let gp = reduced(&energy.grad(&from_reduced(c + e))?);
        let gm = reduced(&energy.grad(&from_reduced(c - e))?);
        jac.set_column(k, &((gp - gm) / (2.0 * h)));
    }
    Ok((jac + jac.transpose()) * 0.5)
}

fn newton_direction(jac: &Matrix2<f64>, r: &Vector2<f64>) -> Vector2<f64> {
    let svd = jac.svd(true, true);
    match svd.solve(r, 1e-14 * jac.norm().max(1e-300)) {
        Ok(s) if s.iter().all(|x| x.is_finite()) => -s,
        _ => -r,
    }
}

fn finish(energy: &Energy, q: TracelessSym3) -> Result<CriticalPoint> {
    let (value, grad, e) = energy.eval(&q)?;
    let report = classify_with(energy, &q)?;
    Ok(CriticalPoint {
        q,
        lambda: e.state.lambda,
        eta: energy.eta,
        tau: energy.tau,
        energy: value,
        grad_norm: grad.norm(),
        hessian_spectrum: report.spectrum,
        stability: report.stability,
        state: e.state,
    })
}

/// Newton on the gradient restricted to `diag(q1, q2, -q1 - q2)`.
pub fn find_critical_biaxial(eta: f64, q_init: [f64; 2], tau: Option<f64>) -> Result<CriticalPoint> {
    find_critical_biaxial_with(eta, q_init, tau, &CriticalOptions::default())
}

pub fn find_critical_biaxial_with(
    eta: f64,
    q_init: [f64; 2],
    tau: Option<f64>,
    opts: &CriticalOptions,
) -> Result<CriticalPoint> {
    let energy = Energy::new(eta, tau, opts.solve)?;
    let q0 = diagonal_tensor(q_init[0], q_init[1]);
    if !energy.admissible(&q0) {
        return Err(domain_reason(&q0, eta));
    }
    let mut c = reduced(&q0);
    let mut g = energy.grad(&q0)?;
    let mut iterations = 0;
    while g.norm() > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NonConvergence {
                what: "critical-point Newton iteration",
                iterations,
                residual: g.norm(),
                last: from_reduced(c),
            });
        }
        iterations += 1;
        let r = reduced(&g);
        let jac = reduced_jacobian(&energy, c, opts.fd_step)?;
        let dir = newton_direction(&jac, &r);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let trial = c + dir * t;
            let q = from_reduced(trial);
            if energy.admissible(&q) {
                if let Ok(gt) = energy.grad(&q) {
                    if gt.norm() < (1.0 - 1e-4 * t) * g.norm() {
                        next = Some((trial, gt));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        match next {
            Some((trial, gt)) => {
                c = trial;
                g = gt;
            }
            None => {
                return Err(Error::NonConvergence {
                    what: "critical-point line search",
                    iterations,
                    residual: g.norm(),
                    last: from_reduced(c),
                })
            }
        }
    }
    finish(&energy, from_reduced(c))
}

fn domain_reason(q: &TracelessSym3, eta: f64) -> Error {
    if eta >= 2.0 / 3.0 {
        Error::Domain(Constraint::PackingLimit)
    } else if q.min_eigenvalue() <= -1.0 / 3.0 {
        Error::Domain(Constraint::EigenvalueBound)
    } else {
        Error::Domain(Constraint::NormAboveEta)
    }
}

/// Damped Newton descent of the energy in diagonal coordinates.
fn descend(energy: &Energy, start: TracelessSym3, opts: &CriticalOptions) -> Result<TracelessSym3> {
    let mut c = reduced(&start);
    let (mut value, mut g, _) = energy.eval(&start)?;
    for _ in 0..opts.max_iter {
        if g.norm() <= opts.tol {
            return Ok(from_reduced(c));
        }
        let r = reduced(&g);
        let jac = reduced_jacobian(energy, c, opts.fd_step)?;
        let newton = jac.cholesky().map(|ch| -ch.solve(&r));
        let dir = newton.unwrap_or(-r);
        let slope = r.dot(&dir);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let trial = c + dir * t;
            let q = from_reduced(trial);
            if energy.admissible(&q) {
                if let Ok((vt, gt, _)) = energy.eval(&q) {
                    let armijo = vt <= value + 1e-4 * t * slope;
                    // Near the optimum energy differences fall below roundoff;
                    // a Newton step that shrinks the gradient is then accepted.
                    let polish = newton.is_some() && vt <= value + 1e-13 * value.abs().max(1.0) && gt.norm() < g.norm();
                    if armijo || polish {
                        next = Some((trial, vt, gt));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        match next {
            Some((trial, vt, gt)) => {
                c = trial;
                value = vt;
                g = gt;
            }
            None => break,
        }
    }
    if g.norm() <= opts.tol {
        Ok(from_reduced(c))
    } else {
        Err(Error::NonConvergence {
            what: "energy descent",
            iterations: opts.max_iter,
            residual: g.norm(),
            last: from_reduced(c),
        })
    }
}

/// Deterministic multistart probes in diagonal coordinates.
pub fn multistart_probes(eta: f64) -> Vec<TracelessSym3> {
    let n = 15;
    let mut probes = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let q1 = -1.0 / 3.0 + (i as f64 + 0.5) / n as f64;
            let q2 = -1.0 / 3.0 + (j as f64 + 0.5) / n as f64;
            let q = diagonal_tensor(q1, q2);
            if in_domain_of_j(&q, eta) {
                probes.push(q);
            }
        }
    }
    if in_domain_of_j(&TracelessSym3::ZERO, eta) {
        probes.push(TracelessSym3::ZERO);
    }
    let s0 = (1.5 * eta.max(0.0)).sqrt() + 1e-2;
    for s in [s0, -s0] {
        let q = diagonal_tensor(2.0 * s / 3.0, -s / 3.0);
        if in_domain_of_j(&q, eta) {
            probes.push(q);
        }
    }
    probes
}

/// Least-energy critical point found by descent from the best multistart
/// probes.
pub fn global_minimize(eta: f64, tau: Option<f64>) -> Result<CriticalPoint> {
    global_minimize_with(eta, tau, &CriticalOptions::default())
}

pub fn global_minimize_with(eta: f64, tau: Option<f64>, opts: &CriticalOptions) -> Result<CriticalPoint> {
    let energy = Energy::new(eta, tau, opts.solve)?;
    let mut scored: Vec<(f64, TracelessSym3)> = multistart_probes(eta)
        .into_iter()
        .filter_map(|q| energy.eval(&q).ok().map(|(v, _, _)| (v, q)))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, TracelessSym3)> = None;
    let mut last_err = None;
    for (_, start) in scored.iter().take(4) {
        match descend(&energy, *start, opts) {
            Ok(q) => {
                let v = energy.eval(&q)?.0;
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, q));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, q)) => finish(&energy, q),
        None => Err(last_err.unwrap_or(Error::InvalidInput("no admissible multistart probe".into()))),
    }
}

/// Defects of the three Euler-Lagrange relations at a dual state.
#[derive(Clone, Copy, Debug)]
pub struct ElResidual {
    /// `|int f - 1|`.
    pub density: f64,
    /// `|Q - int f (p (x) p - I/3)|`.
    pub q_moment: f64,
    /// `|Lambda - int f / (Qp.p - eta) (p (x) p - I/3) - Q / tau|`.
    pub lambda_moment: f64,
}

impl ElResidual {
    pub fn max(&self) -> f64 {
        self.density.max(self.q_moment).max(self.lambda_moment)
    }
}

pub fn el_residual(state: &DualState, tau: Option<f64>) -> ElResidual {
    let m = state.moments();
    let mut lam = state.lambda - m.reduced_second;
    if let Some(t) = tau {
        lam = lam - state.q * (1.0 / t);
    }
    ElResidual {
        density: (m.mass - 1.0).abs(),
        q_moment: (state.q - m.second).norm(),
        lambda_moment: lam.norm(),
    }
}

/// Controls for the axially symmetric reduction.
#[derive(Clone, Copy, Debug)]
pub struct UniaxialOptions {
    pub n_per_panel: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub warm_l: Option<f64>,
}

impl Default for UniaxialOptions {
    fn default() -> Self {
        Self {
            n_per_panel: 64,
            tol: 1e-12,
            max_iter: 200,
            warm_l: None,
        }
    }
}

/// Axially symmetric solution at `Q = S (n (x) n - I/3)`.
#[derive(Clone, Copy, Debug)]
pub struct UniaxialEval {
    pub s: f64,
    pub eta: f64,
    /// Multiplier with `Lambda = l (n (x) n - I/3)`.
    pub l: f64,
    pub j: f64,
    pub djds: f64,
    pub ln_z: f64,
    pub iterations: usize,
    /// `<(p.n)^2>` and `<(p.n)^4>` under `f_Q`.
    pub x2: f64,
    pub x4: f64,
    /// `dJ/deta`.
    pub pressure: f64,
}

pub fn check_uniaxial(s: f64, eta: f64) -> Result<()> {
    if eta >= 2.0 / 3.0 {
        return Err(Error::Domain(Constraint::PackingLimit));
    }
    if !(s > -0.5 && s < 1.0) {
        return Err(Error::Domain(Constraint::EigenvalueBound));
    }
    if 2.0 / 3.0 * s * s <= eta {
        return Err(Error::Domain(Constraint::NormAboveEta));
    }
    Ok(())
}

pub fn uniaxial_j(s: f64, eta: f64) -> Result<UniaxialEval> {
    uniaxial_eval(s, eta, &UniaxialOptions::default())
}

/// Solve the scalar dual problem
/// `max_l (2/3) l S - ln 2 pi int exp(l (x^2 - 1/3)) max(S (x^2 - 1/3) - eta, 0) dx`.
pub fn uniaxial_eval(s: f64, eta: f64, opts: &UniaxialOptions) -> Result<UniaxialEval> {
    check_uniaxial(s, eta)?;
    let rule = AxialRule::new(s, eta, opts.n_per_panel);
    if rule.nodes.is_empty() {
        return Err(Error::Domain(Constraint::NormAboveEta));
    }
    let g: Vec<f64> = rule.nodes.iter().map(|x| x * x - 1.0 / 3.0).collect();
    let we: Vec<f64> = rule.weights.iter().zip(&rule.excess).map(|(w, e)| w * e).collect();
    let target = 2.0 / 3.0 * s;
    let eval = |l: f64| {
        let m = g.iter().map(|gi| l * gi).fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut z1, mut z2) = (0.0, 0.0, 0.0);
        for (gi, wi) in g.iter().zip(&we) {
            let w = wi * (l * gi - m).exp();
            z += w;
            z1 += w * gi;
            z2 += w * gi * gi;
        }
        let mean = z1 / z;
        let ln_z = m + z.ln();
        (l * target - ln_z, ln_z, target - mean, z2 / z - mean * mean)
    };
    let mut l = opts.warm_l.unwrap_or(0.0);
    let (mut f, mut ln_z, mut d1, mut var) = eval(l);
    let mut iterations = 0;
    while d1.abs() > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NonConvergence {
                what: "uniaxial dual iteration",
                iterations,
                residual: d1.abs(),
                last: TracelessSym3::from_diagonal([2.0 * l / 3.0, -l / 3.0, -l / 3.0]),
            });
        }
        iterations += 1;
        let step = if var > 0.0 { d1 / var } else { d1 };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = eval(l + t * step);
            let slack = 1e-14 * f.abs().max(1.0);
            if trial.0.is_finite() && trial.0 >= f + 1e-4 * t * d1 * step - slack {
                l += t * step;
                (f, ln_z, d1, var) = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                what: "uniaxial dual line search",
                iterations,
                residual: d1.abs(),
                last: TracelessSym3::from_diagonal([2.0 * l / 3.0, -l / 3.0, -l / 3.0]),
            });
        }
    }
    let (mut dlnz, mut x2, mut x4, mut pressure) = (0.0, 0.0, 0.0, 0.0);
    for (i, &gi) in g.iter().enumerate() {
        let t = rule.weights[i] * (l * gi - ln_z).exp();
        let x = rule.nodes[i] * rule.nodes[i];
        dlnz += t * gi;
        x2 += t * rule.excess[i] * x;
        x4 += t * rule.excess[i] * x * x;
        pressure += t;
    }
    Ok(UniaxialEval {
        s,
        eta,
        l,
        j: f,
        djds: 2.0 / 3.0 * l - dlnz,
        ln_z,
        iterations,
        x2,
        x4,
        pressure,
    })
}

/// Open interval of admissible `S` at `eta` on the prolate or oblate side.
pub fn uniaxial_interval(eta: f64, prolate: bool) -> (f64, f64) {
    let edge = (1.5 * eta.max(0.0)).sqrt();
    if prolate {
        (edge, 1.0)
    } else {
        (-0.5, -edge)
    }
}

/// `d^2 J / dS^2` by central differences of the analytic `dJ/dS`.
pub fn uniaxial_second_derivative(s: f64, eta: f64) -> Result<f64> {
    uniaxial_second_derivative_with(s, eta, &UniaxialOptions::default())
}

pub fn uniaxial_second_derivative_with(s: f64, eta: f64, opts: &UniaxialOptions) -> Result<f64> {
    let (lo, hi) = if s >= 0.0 {
        uniaxial_interval(eta, true)
    } else {
        uniaxial_interval(eta, false)
    };
    let (lo, hi) = if eta < 0.0 { (-0.5, 1.0) } else { (lo, hi) };
    let h = 1e-5f64.min(0.25 * (s - lo)).min(0.25 * (hi - s));
    let p = uniaxial_eval(s + h, eta, opts)?.djds;
    let m = uniaxial_eval(s - h, eta, opts)?.djds;
    Ok((p - m) / (2.0 * h))
}

fn stability_1d(d2: f64) -> Stability {
    Stability::from_spectrum([d2], STABILITY_THRESHOLD)
}

struct BrentTol;

impl Convergency<f64> for BrentTol {
    fn is_root_found(&mut self, y: f64) -> bool {
        y.abs() < 1e-13
    }
    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() < 1e-15 * x1.abs().max(1.0)
    }
    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= 200
    }
}

/// Root of `dJ/dS` in `[a, b]` by Brent's method.
pub fn djds_root(eta: f64, a: f64, b: f64) -> Result<f64> {
    djds_root_with(eta, a, b, &UniaxialOptions::default())
}

fn djds_root_with(eta: f64, a: f64, b: f64, opts: &UniaxialOptions) -> Result<f64> {
    let mut failure = None;
    let root = find_root_brent(
        a,
        b,
        |s| match uniaxial_eval(s, eta, opts) {
            Ok(u) => u.djds,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &mut BrentTol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    root.map_err(|e| Error::InvalidInput(format!("dJ/dS root search on [{a}, {b}] failed: {e}")))
}

/// Sample `dJ/dS` at `s_grid` (points that fail to evaluate are skipped) and
/// return brackets where `sign * dJ/dS` changes from `from` to `-from`.
fn brackets(eta: f64, grid: &[f64], sign: f64, from: f64, opts: &UniaxialOptions) -> Vec<(f64, f64)> {
    let vals: Vec<(f64, f64)> = grid
        .iter()
        .filter_map(|&s| uniaxial_eval(s, eta, opts).ok().map(|u| (s, sign * u.djds)))
        .collect();
    vals.windows(2)
        .filter(|w| w[0].1 * from > 0.0 && w[1].1 * from <= 0.0)
        .map(|w| (w[0].0, w[1].0))
        .collect()
}

fn interval_grid(lo: f64, hi: f64) -> Vec<f64> {
    let mut u: Vec<f64> = vec![1e-6, 1e-5, 1e-4, 1e-3, 3e-3];
    u.extend((1..100).map(|k| k as f64 / 100.0));
    u.extend([1.0 - 3e-3, 1.0 - 1e-3]);
    u.into_iter().map(|t| lo + (hi - lo) * t).collect()
}

/// Geometric grid from near zero outward, in the direction of `sign`.
fn outward_grid(eta: f64, sign: f64) -> Vec<f64> {
    let end = if sign > 0.0 { 0.999 } else { 0.499 };
    let start = (1e-2 * eta.abs().sqrt()).clamp(1e-6, 1e-3);
    let n = 160;
    let ratio = (end / start).powf(1.0 / (n - 1) as f64);
    (0..n).map(|k| sign * start * ratio.powi(k)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchKind {
    Isotropic,
    Prolate,
    Oblate,
    UnstableNearZero,
}

impl BranchKind {
    pub fn label(&self) -> &'static str {
        match self {
            BranchKind::Isotropic => "isotropic",
            BranchKind::Prolate => "prolate",
            BranchKind::Oblate => "oblate",
            BranchKind::UnstableNearZero => "unstable_near_zero",
        }
    }

    /// Whether `eta` lies in the range where the branch is looked for.
    pub fn covers(&self, eta: f64) -> bool {
        match self {
            BranchKind::Isotropic | BranchKind::UnstableNearZero => eta < 0.0,
            BranchKind::Prolate => (0.0..2.0 / 3.0).contains(&eta),
            BranchKind::Oblate => (0.0..1.0 / 6.0).contains(&eta),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BranchRecord {
    pub eta: f64,
    pub s: f64,
    pub l: f64,
    pub j: f64,
    pub djds: f64,
    pub d2j: f64,
    pub stability: Stability,
    pub x2: f64,
    pub x4: f64,
    pub pressure: f64,
}

impl BranchRecord {
    pub fn at(eta: f64, s: f64, opts: &UniaxialOptions) -> Result<Self> {
        let u = uniaxial_eval(s, eta, opts)?;
        let d2j = uniaxial_second_derivative_with(s, eta, opts)?;
        Ok(Self {
            eta,
            s,
            l: u.l,
            j: u.j,
            djds: u.djds,
            d2j,
            stability: stability_1d(d2j),
            x2: u.x2,
            x4: u.x4,
            pressure: u.pressure,
        })
    }

    pub fn q(&self) -> TracelessSym3 {
        crate::tensor3::uniaxial(self.s, [1.0, 0.0, 0.0])
    }
}

#[derive(Clone, Debug)]
pub struct BranchGap {
    pub eta: f64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub kind: BranchKind,
    pub records: Vec<BranchRecord>,
    pub gaps: Vec<BranchGap>,
}

/// Uniaxial critical points of the given branch at `eta`.
pub fn uniaxial_critical(kind: BranchKind, eta: f64, warm_s: Option<f64>) -> Result<Vec<f64>> {
    uniaxial_critical_with(kind, eta, warm_s, &UniaxialOptions::default())
}

pub fn uniaxial_critical_with(
    kind: BranchKind,
    eta: f64,
    warm_s: Option<f64>,
    opts: &UniaxialOptions,
) -> Result<Vec<f64>> {
    match kind {
        BranchKind::Isotropic => Ok(if eta < 0.0 { vec![0.0] } else { Vec::new() }),
        BranchKind::Prolate | BranchKind::Oblate => {
            let (lo, hi) = uniaxial_interval(eta, kind == BranchKind::Prolate);
            let grid = interval_grid(lo, hi);
            let found = brackets(eta, &grid, 1.0, -1.0, opts);
            if found.is_empty() {
                return Err(Error::InvalidInput(format!("no sign change of dJ/dS in ({lo}, {hi})")));
            }
            let mut roots = Vec::new();
            for (a, b) in found {
                roots.push(djds_root_with(eta, a, b, opts)?);
            }
            // Several minima: continue from the previous one, else lowest J.
            let pick = match warm_s {
                Some(w) => roots
                    .iter()
                    .cloned()
                    .min_by(|a, b| (a - w).abs().total_cmp(&(b - w).abs())),
                None => {
                    let mut best = None;
                    for &r in &roots {
                        let j = uniaxial_eval(r, eta, opts)?.j;
                        if best.is_none_or(|(bj, _)| j < bj) {
                            best = Some((j, r));
                        }
                    }
                    best.map(|(_, r)| r)
                }
            };
            Ok(pick.into_iter().collect())
        }
        BranchKind::UnstableNearZero => {
            let mut out = Vec::new();
            if eta >= 0.0 {
                return Ok(out);
            }
            for sign in [1.0, -1.0] {
                if let Some(&(a, b)) = brackets(eta, &outward_grid(eta, sign), sign, 1.0, opts).first() {
                    out.push(djds_root_with(eta, a, b, opts)?);
                }
            }
            Ok(out)
        }
    }
}

/// Follow one branch over `etas` (sorted internally), warm-starting the
/// choice of root from the previous grid point.
pub fn trace_branch(kind: BranchKind, etas: &[f64]) -> Branch {
    trace_branch_with(kind, etas, &UniaxialOptions::default())
}

/// Branch records at one `eta`, ordered by decreasing `S`.
pub fn branch_records_at(
    kind: BranchKind,
    eta: f64,
    warm_s: Option<f64>,
    opts: &UniaxialOptions,
) -> Result<Vec<BranchRecord>> {
    let mut recs = uniaxial_critical_with(kind, eta, warm_s, opts)?
        .into_iter()
        .map(|s| BranchRecord::at(eta, s, opts))
        .collect::<Result<Vec<_>>>()?;
    recs.sort_by(|a, b| b.s.total_cmp(&a.s));
    Ok(recs)
}

pub fn trace_branch_with(kind: BranchKind, etas: &[f64], opts: &UniaxialOptions) -> Branch {
    let mut grid: Vec<f64> = etas.iter().cloned().filter(|e| kind.covers(*e)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut branch = Branch {
        kind,
        records: Vec::new(),
        gaps: Vec::new(),
    };
    let mut warm = None;
    for eta in grid {
        match branch_records_at(kind, eta, warm, opts) {
            Ok(recs) => {
                if let Some(r) = recs.first() {
                    warm = Some(r.s);
                }
                branch.records.extend(recs);
            }
            Err(e) => branch.gaps.push(BranchGap {
                eta,
                reason: e.to_string(),
            }),
        }
    }
    branch
}

/// Most negative `eta` at which the small-amplitude critical point on the
/// given side (`sign = +1` prolate, `-1` oblate) is still found, located by
/// bisection on existence between `eta_far` (absent) and `eta_near` (present).
pub fn find_eta0(sign: f64, tol: f64) -> Result<f64> {
    let opts = UniaxialOptions::default();
    let exists = |eta: f64| !brackets(eta, &outward_grid(eta, sign), sign, 1.0, &opts).is_empty();
    let mut near = -1e-3;
    if !exists(near) {
        return Err(Error::InvalidInput(
            "no small-amplitude critical point near eta = 0".into(),
        ));
    }
    let mut far = near;
    while exists(far) {
        near = far;
        far *= 2.0;
        if far < -4.0 {
            return Err(Error::InvalidInput(
                "small-amplitude branch persists below eta = -4".into(),
            ));
        }
    }
    while near - far > tol {
        let mid = 0.5 * (near + far);
        if exists(mid) {
            near = mid;
        } else {
            far = mid;
        }
    }
    Ok(near)
}

/// Orientational moments along a branch.
#[derive(Clone, Copy, Debug)]
pub struct SaturationRow {
    pub eta: f64,
    pub s: f64,
    pub x2: f64,
    pub x4: f64,
}

pub fn saturation_diagnostics(branch: &Branch) -> Vec<SaturationRow> {
    branch
        .records
        .iter()
        .map(|r| SaturationRow {
            eta: r.eta,
            s: r.s,
            x2: r.x2,
            x4: r.x4,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual_solver::solve_lambda;
    use crate::macro_energy::{j_grad, j_value, FLAT_ETA};
    use crate::tensor3::uniaxial;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    const E1: [f64; 3] = [1.0, 0.0, 0.0];

    #[test]
    fn uniaxial_matches_sphere_route() {
        for &(s, eta) in &[
            (0.3, -0.2),
            (0.5, 0.1),
            (-0.3, 0.02),
            (0.8, 0.4),
            (-0.45, 0.12),
            (0.05, FLAT_ETA),
        ] {
            let u = uniaxial_j(s, eta).unwrap();
            let q = uniaxial(s, E1);
            let st = solve_lambda(&q, eta).unwrap();
            assert!((u.j - st.value()).abs() < 1e-9, "S={s} eta={eta}");
            let lam = uniaxial(u.l, E1);
            assert!((st.lambda - lam).norm() < 1e-8);
            // dJ/dS is the gradient projected on n (x) n - I/3.
            let g = j_grad(&q, eta).unwrap();
            assert!((g.dot(&uniaxial(1.0, E1)) - u.djds).abs() < 1e-8);
        }
    }

    #[test]
    fn analytic_slope_matches_finite_differences() {
        for &(s, eta) in &[(0.3, -0.2), (0.6, 0.2), (-0.4, 0.05)] {
            let h = 1e-6;
            let fd = (uniaxial_j(s + h, eta).unwrap().j - uniaxial_j(s - h, eta).unwrap().j) / (2.0 * h);
            assert!((fd - uniaxial_j(s, eta).unwrap().djds).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_multiplier_relation() {
        // At a critical point l = int P2 fhat / ((2S/3) P2 - eta), the relation
        // obtained by projecting dJ/dQ = 0 on n (x) n - I/3.
        for (kind, eta) in [(BranchKind::Prolate, 0.3), (BranchKind::Oblate, 0.08)] {
            let s = uniaxial_critical(kind, eta, None).unwrap()[0];
            let u = uniaxial_j(s, eta).unwrap();
            let rule = AxialRule::new(s, eta, 64);
            let rhs: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| {
                    let p2 = 1.5 * x * x - 0.5;
                    w * p2 * (u.l * (x * x - 1.0 / 3.0) - u.ln_z).exp()
                })
                .sum();
            assert!((u.l - rhs).abs() < 1e-9, "{} vs {}", u.l, rhs);
        }
    }

    #[test]
    fn uniaxial_special_values() {
        let u = uniaxial_j(0.0, -0.5).unwrap();
        assert_abs_diff_eq!(u.j, -(2.0 * PI).ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(u.l, 0.0, epsilon = 1e-13);
        for s in [0.01, 0.03, 0.05] {
            let u = uniaxial_j(s, FLAT_ETA).unwrap();
            assert!((u.j - (15.0 / (8.0 * PI)).ln()).abs() < 1e-12);
            assert!(u.l.abs() < 1e-12);
        }
        assert!(uniaxial_j(0.2, 0.1).is_err());
        assert!(uniaxial_j(1.0, 0.1).is_err());
        // <x^2> = (2S + 1)/3.
        let u = uniaxial_j(0.7, 0.3).unwrap();
        assert_abs_diff_eq!(u.x2, (2.0 * 0.7 + 1.0) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stability_examples() {
        let z = TracelessSym3::ZERO;
        assert_eq!(
            stability_classify(&z, -0.5, None).unwrap().stability,
            Stability::Minimum
        );
        assert_eq!(
            stability_classify(&z, FLAT_ETA, None).unwrap().stability,
            Stability::Degenerate
        );
        // Isotropic Hessian of J_tau is (2.7 - 1/tau) Id at eta = -1/3.
        for tau in [10.0, 30.0] {
            assert_eq!(
                stability_classify(&z, -1.0 / 3.0, Some(tau)).unwrap().stability,
                Stability::Minimum
            );
        }
        let hot = stability_classify(&z, -1.0 / 3.0, Some(0.2)).unwrap();
        assert_eq!(hot.stability, Stability::Maximum);
        assert_abs_diff_eq!(hot.spectrum[0], 2.7 - 5.0, epsilon = 1e-3);
        assert!(stability_classify(&z, -0.5, Some(-1.0)).is_err());
    }

    #[test]
    fn isotropic_critical_point() {
        let cp = find_critical_biaxial(-0.5, [0.02, -0.01], None).unwrap();
        assert!(cp.q.norm() < 1e-9);
        assert_eq!(cp.stability, Stability::Minimum);
        let r = el_residual(&cp.state, None);
        assert!(r.max() < 1e-8, "{r:?}");
    }

    #[test]
    fn flat_family_is_immediately_critical() {
        let cp = find_critical_biaxial(FLAT_ETA, [0.05 * 2.0 / 3.0, -0.05 / 3.0], None).unwrap();
        assert!(cp.grad_norm <= 1e-8);
        assert_eq!(cp.stability, Stability::Degenerate);
    }

    #[test]
    fn prolate_biaxial_newton() {
        let s0 = 0.9;
        let cp = find_critical_biaxial(0.3, [2.0 * s0 / 3.0, -s0 / 3.0], None).unwrap();
        let v = cp.q.eig().values;
        let s = 1.5 * v[0];
        assert!(s > 0.45f64.sqrt() && s < 1.0);
        assert!((v[1] - v[2]).abs() < 1e-8);
        assert!(el_residual(&cp.state, None).max() < 1e-8);
        // Uniaxial: two rotational zero modes, the rest positive.
        assert_eq!(cp.stability, Stability::Minimum);
        let s1d = uniaxial_critical(BranchKind::Prolate, 0.3, None).unwrap()[0];
        assert!((s - s1d).abs() < 1e-7);
    }

    #[test]
    fn rotational_modes_counted() {
        let s0 = uniaxial_critical(BranchKind::Prolate, 0.3, None).unwrap()[0];
        let rep = stability_classify(&uniaxial(s0, [0.0, 0.6, 0.8]), 0.3, None).unwrap();
        assert_eq!(rep.rotational_modes, 2, "{rep:?}");
        assert_eq!(rep.stability, Stability::Minimum);
    }

    #[test]
    fn orbit_tangent_dimension() {
        assert_eq!(rotation_tangents(&TracelessSym3::ZERO).len(), 0);
        assert_eq!(rotation_tangents(&uniaxial(0.4, [0.0, 0.6, 0.8])).len(), 2);
        assert_eq!(
            rotation_tangents(&TracelessSym3::from_coords([0.1, 0.2, 0.05, -0.1, 0.3])).len(),
            3
        );
    }

    #[test]
    fn residual_at_non_critical_point() {
        let st = solve_lambda(&uniaxial(0.3, E1), -0.5).unwrap();
        assert!(el_residual(&st, None).lambda_moment > 1e-3);
        let iso = solve_lambda(&TracelessSym3::ZERO, -0.5).unwrap();
        assert!(el_residual(&iso, None).lambda_moment < 1e-14);
    }

    #[test]
    fn branch_intervals() {
        let p = trace_branch(BranchKind::Prolate, &[0.0, 0.2, 0.4, 0.5, 0.6]);
        assert_eq!(p.records.len(), 5, "{:?}", p.gaps);
        for r in &p.records {
            assert!(r.s > (1.5 * r.eta).sqrt() && r.s < 1.0);
            assert!(r.djds.abs() < 1e-8);
        }
        let o = trace_branch(BranchKind::Oblate, &[0.0, 0.05, 0.1]);
        assert_eq!(o.records.len(), 3, "{:?}", o.gaps);
        for r in &o.records {
            assert!(r.s > -0.5 && r.s < -(1.5 * r.eta).sqrt());
        }
        let iso = trace_branch(BranchKind::Isotropic, &[-0.5, -0.2, 0.1]);
        assert_eq!(iso.records.len(), 2);
        assert!(iso.records.iter().all(|r| r.stability == Stability::Minimum));
    }

    #[test]
    fn small_amplitude_points_shrink_towards_zero() {
        let b = trace_branch(BranchKind::UnstableNearZero, &[-0.02, -0.005, -0.001]);
        let pos: Vec<_> = b.records.iter().filter(|r| r.s > 0.0).collect();
        let neg: Vec<_> = b.records.iter().filter(|r| r.s < 0.0).collect();
        assert_eq!(pos.len(), 3);
        assert_eq!(neg.len(), 3);
        assert!(pos.windows(2).all(|w| w[1].s < w[0].s));
        assert!(neg.windows(2).all(|w| w[1].s > w[0].s));
        assert!(b.records.iter().all(|r| r.stability == Stability::Maximum));
    }

    #[test]
    fn global_minimiser_regimes() {
        let iso = global_minimize(-0.5, None).unwrap();
        assert!(iso.q.norm() < 1e-6);
        let near = global_minimize(-0.01, None).unwrap();
        assert!(near.q.norm() > 1e-3);
        assert!(near.energy < j_value(&TracelessSym3::ZERO, -0.01).unwrap() - 1e-6);
        let dense = global_minimize(0.3, None).unwrap();
        assert!(dense.q.norm_sq() > 0.3 && dense.q.norm_sq() < 2.0 / 3.0);
        assert!(matches!(
            global_minimize(2.0 / 3.0, None),
            Err(Error::Domain(Constraint::PackingLimit))
        ));
    }
}
