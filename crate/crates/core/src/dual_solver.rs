//! The concave dual problem behind `J(Q, eta)`.
//!
//! For fixed `Q` and `eta`,
//!
//! ```text
//! F(Q, lambda) = lambda.Q - ln int exp(lambda p.p) max(Qp.p - eta, 0) dp
//! ```
//!
//! is strictly concave in `lambda`; its maximiser `Lambda(Q)` commutes with `Q`,
//! so the search runs over the two diagonal directions of the eigenframe of `Q`.
//! The optimal density is `f_Q = exp(Lambda p.p) max(Qp.p - eta, 0) / Z`.

use std::sync::Arc;

use nalgebra::{Matrix2, SMatrix, Vector2};

use crate::error::{Constraint, Error, Result};
use crate::quadrature::{Resolution, SupportRule};
use crate::tensor3::{in_domain_of_j, EigenFrame, TracelessSym3, Vec3};

pub type Matrix5 = SMatrix<f64, 5, 5>;

/// Base measure of the dual problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weighting {
    /// `max(Qp.p - eta, 0) dp`: the packing-constrained energy.
    Kink { eta: f64 },
    /// `dp`: the maximum-entropy (singular potential) problem.
    Unit,
}

impl Weighting {
    fn check(&self, q: &TracelessSym3) -> Result<()> {
        if q.min_eigenvalue() <= -1.0 / 3.0 {
            return Err(Error::Domain(Constraint::EigenvalueBound));
        }
        if let Weighting::Kink { eta } = *self {
            if eta >= 2.0 / 3.0 {
                return Err(Error::Domain(Constraint::PackingLimit));
            }
            if !in_domain_of_j(q, eta) {
                return Err(Error::Domain(Constraint::NormAboveEta));
            }
        }
        Ok(())
    }

    fn rule_in_frame(&self, frame: &EigenFrame, res: Resolution) -> SupportRule {
        match *self {
            Weighting::Kink { eta } => SupportRule::in_frame(frame.values, eta, res),
            Weighting::Unit => SupportRule::unit_sphere(res),
        }
    }
}

/// Solver controls.
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub resolution: Resolution,
    pub tol: f64,
    pub max_iter: usize,
    /// Initial multiplier (any frame); only its projection onto the
    /// eigenframe diagonal of `Q` is used.
    pub warm_start: Option<TracelessSym3>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            resolution: Resolution::default(),
            tol: 1e-10,
            max_iter: 200,
            warm_start: None,
        }
    }
}

fn lab_rule(q: &TracelessSym3, w: Weighting, res: Resolution) -> SupportRule {
    match w {
        Weighting::Kink { eta } => SupportRule::for_tensor(q, eta, res).0,
        Weighting::Unit => SupportRule::unit_sphere(res),
    }
}

/// Log-sum-exp evaluation of `ln int exp(lambda p.p) w(p) dp` with the tilted
/// first and second moments of `p (x) p - I/3` in the 5 coordinates.
fn tilted(rule: &SupportRule, lambda: &TracelessSym3, need_cov: bool) -> (f64, [f64; 5], Matrix5) {
    let exps: Vec<f64> = rule.nodes.iter().map(|&p| lambda.quad_form(p)).collect();
    let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut mean = [0.0; 5];
    let mut second = Matrix5::zeros();
    for (i, &p) in rule.nodes.iter().enumerate() {
        let w = rule.weights[i] * rule.excess[i] * (exps[i] - m).exp();
        let d = TracelessSym3::dyad(p).coords();
        sum += w;
        for a in 0..5 {
            mean[a] += w * d[a];
            if need_cov {
                for b in a..5 {
                    second[(a, b)] += w * d[a] * d[b];
                }
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= sum;
    }
    let mut cov = Matrix5::zeros();
    if need_cov {
        for a in 0..5 {
            for b in a..5 {
                let c = second[(a, b)] / sum - mean[a] * mean[b];
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
    }
    (m + sum.ln(), mean, cov)
}

/// `F(Q, lambda)` for the packing-constrained problem.
pub fn dual_objective(q: &TracelessSym3, lambda: &TracelessSym3, eta: f64) -> Result<f64> {
    dual_objective_with(q, lambda, Weighting::Kink { eta }, Resolution::default())
}

pub fn dual_objective_with(q: &TracelessSym3, lambda: &TracelessSym3, w: Weighting, res: Resolution) -> Result<f64> {
    w.check(q)?;
    let rule = lab_rule(q, w, res);
    let (ln_z, _, _) = tilted(&rule, lambda, false);
    Ok(lambda.dot(q) - ln_z)
}

/// `dF/dlambda = Q - <p (x) p - I/3>` under the `lambda`-tilted density.
pub fn dual_grad(q: &TracelessSym3, lambda: &TracelessSym3, eta: f64) -> Result<TracelessSym3> {
    let w = Weighting::Kink { eta };
    w.check(q)?;
    let rule = lab_rule(q, w, Resolution::default());
    let (_, mean, _) = tilted(&rule, lambda, false);
    Ok(*q - TracelessSym3::from_coords(mean))
}

/// Covariance of `p (x) p - I/3` under the `lambda`-tilted density, i.e. minus
/// the Hessian of `F` in `lambda`, in the 5 orthonormal coordinates.
pub fn dual_hess(q: &TracelessSym3, lambda: &TracelessSym3, eta: f64) -> Result<Matrix5> {
    let w = Weighting::Kink { eta };
    w.check(q)?;
    let rule = lab_rule(q, w, Resolution::default());
    Ok(tilted(&rule, lambda, true).2)
}

/// Converged (or last) dual iterate.
#[derive(Clone, Debug)]
pub struct DualState {
    pub q: TracelessSym3,
    pub weighting: Weighting,
    pub lambda: TracelessSym3,
    pub z: f64,
    pub ln_z: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub frame: EigenFrame,
    pub resolution: Resolution,
    /// Diagonal multiplier coordinates `(E1, E2)` in the eigenframe.
    lambda_diag: [f64; 2],
    rule: Arc<SupportRule>,
}

/// Integrals of the optimal density that feed the energy derivatives.
#[derive(Clone, Copy, Debug)]
pub struct Moments {
    /// `int f`.
    pub mass: f64,
    /// `int f (p (x) p - I/3)`.
    pub second: TracelessSym3,
    /// `int_{E_Q} exp(Lambda p.p) / Z = int f / (Qp.p - eta)`.
    pub reduced_mass: f64,
    /// `int f / (Qp.p - eta) (p (x) p - I/3)`.
    pub reduced_second: TracelessSym3,
}

impl DualState {
    pub fn eta(&self) -> Option<f64> {
        match self.weighting {
            Weighting::Kink { eta } => Some(eta),
            Weighting::Unit => None,
        }
    }

    /// `F(Q, Lambda)`, i.e. `J(Q)` (or the singular potential for unit weight).
    pub fn value(&self) -> f64 {
        self.lambda.dot(&self.q) - self.ln_z
    }

    fn frame_nodes(&self) -> impl Iterator<Item = (Vec3, f64, f64, f64)> + '_ {
        let (a, b) = (self.lambda_diag[0], self.lambda_diag[1]);
        let rule = &self.rule;
        let ln_z = self.ln_z;
        rule.nodes.iter().enumerate().map(move |(i, &p)| {
            let (d1, d2) = diag_features(p);
            // exp(Lambda p.p) / Z.
            let t = (a * d1 + b * d2 - ln_z).exp();
            (p, rule.weights[i], rule.excess[i], t)
        })
    }

    pub fn moments(&self) -> Moments {
        let mut mass = 0.0;
        let mut reduced_mass = 0.0;
        let mut second = TracelessSym3::ZERO;
        let mut reduced_second = TracelessSym3::ZERO;
        for (p, w, e, t) in self.frame_nodes() {
            let d = TracelessSym3::dyad(p);
            mass += w * e * t;
            reduced_mass += w * t;
            second += d * (w * e * t);
            reduced_second += d * (w * t);
        }
        let r = &self.frame.rotation;
        Moments {
            mass,
            second: second.rotate(r),
            reduced_mass,
            reduced_second: reduced_second.rotate(r),
        }
    }

    /// `int f_Q(p) g(p) dp` with `p` in the original coordinates.
    pub fn average(&self, g: impl Fn(Vec3) -> f64) -> f64 {
        self.frame_nodes()
            .map(|(p, w, e, t)| w * e * t * g(self.frame.to_lab(p)))
            .sum()
    }

    /// `|Q - int f (p (x) p - I/3)|`.
    pub fn moment_residual(&self) -> f64 {
        (self.q - self.moments().second).norm()
    }
}

fn diag_features(p: Vec3) -> (f64, f64) {
    let (x2, y2, z2) = (p[0] * p[0], p[1] * p[1], p[2] * p[2]);
    ((x2 - y2) / std::f64::consts::SQRT_2, (x2 + y2 - 2.0 * z2) / 6f64.sqrt())
}

struct Reduced {
    d1: Vec<f64>,
    d2: Vec<f64>,
    we: Vec<f64>,
    target: [f64; 2],
}

struct ReducedEval {
    value: f64,
    ln_z: f64,
    grad: Vector2<f64>,
    cov: Matrix2<f64>,
}

impl Reduced {
    fn eval(&self, l: [f64; 2]) -> ReducedEval {
        let n = self.we.len();
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            m = m.max(l[0] * self.d1[i] + l[1] * self.d2[i]);
        }
        let (mut s, mut s1, mut s2, mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (a, b) = (self.d1[i], self.d2[i]);
            let w = self.we[i] * (l[0] * a + l[1] * b - m).exp();
            s += w;
            s1 += w * a;
            s2 += w * b;
            s11 += w * a * a;
            s12 += w * a * b;
            s22 += w * b * b;
        }
        let (m1, m2) = (s1 / s, s2 / s);
        let ln_z = m + s.ln();
        ReducedEval {
            value: l[0] * self.target[0] + l[1] * self.target[1] - ln_z,
            ln_z,
            grad: Vector2::new(self.target[0] - m1, self.target[1] - m2),
            cov: Matrix2::new(
                s11 / s - m1 * m1,
                s12 / s - m1 * m2,
                s12 / s - m1 * m2,
                s22 / s - m2 * m2,
            ),
        }
    }
}

/// Solve the packing-constrained dual problem at default settings.
pub fn solve_lambda(q: &TracelessSym3, eta: f64) -> Result<DualState> {
    solve(q, Weighting::Kink { eta }, &SolveOptions::default())
}

/// Maximise `F(Q, .)` by damped Newton in the eigenframe of `Q`.
pub fn solve(q: &TracelessSym3, weighting: Weighting, opts: &SolveOptions) -> Result<DualState> {
    weighting.check(q)?;
    if !opts.resolution.is_valid() {
        return Err(Error::InvalidInput(format!(
            "quadrature resolution below minimum (n_u >= {}, n_phi >= {})",
            Resolution::MIN_N_U,
            Resolution::MIN_N_PHI
        )));
    }
    let frame = q.eig();
    let rule = Arc::new(weighting.rule_in_frame(&frame, opts.resolution));
    if rule.is_empty() {
        return Err(Error::Domain(Constraint::NormAboveEta));
    }
    let [v1, v2, v3] = frame.values;
    let target = [(v1 - v2) / std::f64::consts::SQRT_2, (v1 + v2 - 2.0 * v3) / 6f64.sqrt()];
    let (d1, d2): (Vec<f64>, Vec<f64>) = rule.nodes.iter().map(|&p| diag_features(p)).unzip();
    let we = rule.weights.iter().zip(&rule.excess).map(|(w, e)| w * e).collect();
    let red = Reduced { d1, d2, we, target };

    let mut l = match opts.warm_start {
        Some(w) => {
            let c = w.rotate_inv(&frame.rotation).coords();
            [c[0], c[1]]
        }
        None => [0.0, 0.0],
    };
    let mut cur = red.eval(l);
    let mut iterations = 0;
    let mut converged = cur.grad.norm() <= opts.tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let step = match cur.cov.cholesky() {
            Some(ch) => ch.solve(&cur.grad),
            None => cur.grad,
        };
        let slope = cur.grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [l[0] + t * step[0], l[1] + t * step[1]];
            let ev = red.eval(trial);
            let slack = 1e-14 * cur.value.abs().max(1.0);
            if ev.value.is_finite() && ev.value >= cur.value + 1e-4 * t * slope - slack {
                accepted = Some((trial, ev));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, ev)) => {
                l = trial;
                cur = ev;
            }
            None => break,
        }
        converged = cur.grad.norm() <= opts.tol;
    }
    if converged && cur.grad.norm() > 0.0 {
        // One more Newton step: quadratic convergence takes the multiplier
        // from ~tol/cov accuracy down to roundoff.
        if let Some(ch) = cur.cov.cholesky() {
            let step = ch.solve(&cur.grad);
            let trial = [l[0] + step[0], l[1] + step[1]];
            let ev = red.eval(trial);
            if ev.grad.norm() < cur.grad.norm() {
                l = trial;
                cur = ev;
            }
        }
    }
    let lambda_frame = TracelessSym3::from_coords([l[0], l[1], 0.0, 0.0, 0.0]);
    let lambda = lambda_frame.rotate(&frame.rotation);
    if !converged {
        return Err(Error::NonConvergence {
            what: "dual Newton iteration",
            iterations,
            residual: cur.grad.norm(),
            last: lambda,
        });
    }
    Ok(DualState {
        q: *q,
        weighting,
        lambda,
        z: cur.ln_z.exp(),
        ln_z: cur.ln_z,
        grad_norm: cur.grad.norm(),
        iterations,
        converged,
        frame,
        resolution: opts.resolution,
        lambda_diag: l,
        rule,
    })
}

/// `f_Q(p)` for a converged state; `p` in the original coordinates.
pub fn density_eval(state: &DualState, p: Vec3) -> f64 {
    let e = match state.weighting {
        Weighting::Kink { eta } => state.q.quad_form(p) - eta,
        Weighting::Unit => 1.0,
    };
    if e <= 0.0 {
        return 0.0;
    }
    (state.lambda.quad_form(p) - state.ln_z).exp() * e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::SphereRule;
    use crate::tensor3::{quaternion_rotation, uniaxial};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const E1: Vec3 = [1.0, 0.0, 0.0];
    const FLAT_ETA: f64 = -2.0 / 15.0;

    fn flat_value() -> f64 {
        (15.0 / (8.0 * PI)).ln()
    }

    #[test]
    fn objective_at_origin() {
        let z = TracelessSym3::ZERO;
        assert_abs_diff_eq!(dual_objective(&z, &z, FLAT_ETA).unwrap(), flat_value(), epsilon = 1e-13);
        assert_abs_diff_eq!(dual_objective(&z, &z, -0.5).unwrap(), -(2.0 * PI).ln(), epsilon = 1e-13);
        assert!(matches!(
            dual_objective(&z, &z, 0.1),
            Err(Error::Domain(Constraint::NormAboveEta))
        ));
    }

    #[test]
    fn gradient_vanishes_on_flat_family() {
        let z = TracelessSym3::ZERO;
        assert!(dual_grad(&z, &z, -0.3).unwrap().norm() < 1e-14);
        let q = uniaxial(0.05, E1);
        assert!(dual_grad(&q, &z, FLAT_ETA).unwrap().norm() < 1e-13);
    }

    #[test]
    fn covariance_at_origin() {
        let z = TracelessSym3::ZERO;
        let c = dual_hess(&z, &z, -0.4).unwrap();
        assert!((c - Matrix5::identity() * (2.0 / 15.0)).abs().max() < 1e-13);
    }

    #[test]
    fn isotropic_solution() {
        let s = solve_lambda(&TracelessSym3::ZERO, -0.5).unwrap();
        assert!(s.lambda.norm() < 1e-14);
        assert_abs_diff_eq!(s.z, 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(density_eval(&s, [0.6, 0.0, 0.8]), 1.0 / (4.0 * PI), epsilon = 1e-14);
    }

    #[test]
    fn flat_family_solution() {
        let q = uniaxial(0.05, E1);
        let s = solve_lambda(&q, FLAT_ETA).unwrap();
        assert!(s.lambda.norm() < 1e-12);
        assert_abs_diff_eq!(s.z, 8.0 * PI / 15.0, epsilon = 1e-12);
        let expected = 15.0 / (8.0 * PI) * (0.05 * 2.0 / 3.0 + 2.0 / 15.0);
        assert_abs_diff_eq!(density_eval(&s, E1), expected, epsilon = 1e-12);
    }

    #[test]
    fn density_vanishes_off_support() {
        let q = uniaxial(0.6, E1);
        let s = solve_lambda(&q, 0.1).unwrap();
        assert_eq!(density_eval(&s, [0.0, 1.0, 0.0]), 0.0);
        assert!(density_eval(&s, E1) > 0.0);
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (TracelessSym3, f64) {
        loop {
            let q = TracelessSym3::from_coords(std::array::from_fn(|_| rng.random_range(-0.3..0.3)));
            let eta = rng.random_range(-0.6..0.9 * q.norm_sq());
            if in_domain_of_j(&q, eta) {
                return (q, eta);
            }
        }
    }

    #[test]
    fn converged_states_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..15 {
            let (q, eta) = random_case(&mut rng);
            let s = solve_lambda(&q, eta).unwrap();
            assert!(s.grad_norm <= 1e-10);
            assert!(s.moment_residual() <= 1e-9, "{}", s.moment_residual());
            assert!(s.lambda.commutator_norm(&q) <= 1e-9);
            let m = s.moments();
            assert_abs_diff_eq!(m.mass, 1.0, epsilon = 1e-10);
            // The normaliser is the plain quadrature of exp(Lambda p.p) on E_Q.
            let z = crate::quadrature::integrate_plus(&q, eta, Resolution::default(), |p| s.lambda.quad_form(p).exp());
            assert!((z.value - s.z).abs() <= 1e-10 * s.z);
        }
    }

    #[test]
    fn normalisation_by_independent_rule() {
        // Dense unsplit sphere rule: kink error only, so a loose tolerance.
        let q = TracelessSym3::from_coords([0.2, -0.1, 0.05, 0.1, 0.0]);
        let s = solve_lambda(&q, 0.02).unwrap();
        let dense = SphereRule::new(Resolution::new(400, 400));
        let mass = dense.integrate(|p| density_eval(&s, p));
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn finite_difference_gradient_and_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..8 {
            let (q, eta) = random_case(&mut rng);
            let lam = TracelessSym3::from_coords(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
            let g = dual_grad(&q, &lam, eta).unwrap();
            let c = dual_hess(&q, &lam, eta).unwrap();
            for i in 0..5 {
                let e = TracelessSym3::basis(i);
                let fp = dual_objective(&q, &(lam + e * h), eta).unwrap();
                let fm = dual_objective(&q, &(lam - e * h), eta).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g.coords()[i]).abs() <= 1e-6 * g.norm().max(1.0));
                let gp = dual_grad(&q, &(lam + e * h), eta).unwrap();
                let gm = dual_grad(&q, &(lam - e * h), eta).unwrap();
                let col = (gp - gm) * (-0.5 / h);
                for j in 0..5 {
                    assert!((col.coords()[j] - c[(j, i)]).abs() <= 1e-5);
                }
            }
            assert!(c.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn maximiser_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (q, eta) = random_case(&mut rng);
        let s = solve_lambda(&q, eta).unwrap();
        let best = s.value();
        assert_abs_diff_eq!(best, dual_objective(&q, &s.lambda, eta).unwrap(), epsilon = 1e-12);
        for _ in 0..100 {
            let dl = TracelessSym3::from_coords(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            assert!(dual_objective(&q, &(s.lambda + dl), eta).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn warm_start_reaches_same_multiplier() {
        let q = TracelessSym3::from_coords([0.25, 0.1, -0.05, 0.0, 0.08]);
        let cold = solve_lambda(&q, 0.05).unwrap();
        let opts = SolveOptions {
            warm_start: Some(cold.lambda * 3.0 + TracelessSym3::basis(1)),
            ..SolveOptions::default()
        };
        let warm = solve(&q, Weighting::Kink { eta: 0.05 }, &opts).unwrap();
        assert!((warm.lambda - cold.lambda).norm() <= 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = uniaxial(-0.6, E1);
        assert!(matches!(
            solve_lambda(&q, -0.5),
            Err(Error::Domain(Constraint::EigenvalueBound))
        ));
        let opts = SolveOptions {
            resolution: Resolution::new(8, 8),
            ..Default::default()
        };
        assert!(matches!(
            solve(&TracelessSym3::ZERO, Weighting::Unit, &opts),
            Err(Error::InvalidInput(_))
        ));
        let opts = SolveOptions {
            max_iter: 1,
            tol: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            solve(&uniaxial(0.5, E1), Weighting::Kink { eta: 0.1 }, &opts),
            Err(Error::NonConvergence { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn frame_equivariance(
            c in prop::array::uniform5(-0.25f64..0.25),
            quat in prop::array::uniform4(-1.0f64..1.0),
            t in 0.0f64..1.0,
        ) {
            prop_assume!(quat.iter().map(|x| x * x).sum::<f64>() > 1e-2);
            let q = TracelessSym3::from_coords(c);
            let eta = -0.4 + t * (q.norm_sq() * 0.9 + 0.4);
            prop_assume!(in_domain_of_j(&q, eta));
            let r = quaternion_rotation(quat);
            let a = solve_lambda(&q, eta).unwrap();
            let b = solve_lambda(&q.rotate(&r), eta).unwrap();
            prop_assert!((b.lambda - a.lambda.rotate(&r)).norm() <= 1e-9);
            prop_assert!((a.value() - b.value()).abs() <= 1e-9);
        }
    }
}
