//! Macroscopic energy `J(Q, eta)`, its derivatives, the thermal energy
//! `J_tau`, the singular potential and the equation of state.

use crate::dual_solver::{solve, DualState, Matrix5, SolveOptions, Weighting};
use crate::error::{Constraint, Error, Result};
use crate::tensor3::TracelessSym3;

/// The packing parameter at which `J` is flat along a family of uniaxial `Q`.
pub const FLAT_ETA: f64 = -2.0 / 15.0;

/// Material constants of the generalised van der Waals model.
///
/// `c` and `d` are excluded-volume constants, `u`, `a`, `b` describe the
/// attractive interaction and `kbt` is the thermal energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub c: f64,
    pub d: f64,
    pub u: f64,
    pub a: f64,
    pub b: f64,
    pub kbt: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("d", self.d),
            ("U", self.u),
            ("b", self.b),
            ("kBT", self.kbt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "material constant {name} must be positive"
                )));
            }
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidInput("material constant a must be finite".into()));
        }
        Ok(())
    }

    /// `eta(rho) = 2 (rho c - 1) / (3 rho d)`.
    pub fn eta(&self, rho: f64) -> f64 {
        2.0 * (rho * self.c - 1.0) / (3.0 * rho * self.d)
    }

    /// Inverse of [`eta`](Self::eta).
    pub fn density_for_eta(&self, eta: f64) -> f64 {
        2.0 / (2.0 * self.c - 3.0 * self.d * eta)
    }

    /// Dimensionless temperature `kBT / (2 rho b U)`.
    pub fn tau(&self, rho: f64) -> f64 {
        self.kbt / (2.0 * rho * self.b * self.u)
    }

    /// Density at which `eta(rho)` reaches `2/3`; none when `c <= d`.
    pub fn saturation_density(&self) -> Option<f64> {
        (self.c > self.d).then(|| 1.0 / (self.c - self.d))
    }
}

/// `J`, `dJ/dQ` and `dJ/deta` from one dual solve.
#[derive(Clone, Debug)]
pub struct EnergyEval {
    pub value: f64,
    pub grad: TracelessSym3,
    pub deta: f64,
    pub state: DualState,
}

impl EnergyEval {
    pub fn from_state(state: DualState) -> Self {
        let m = state.moments();
        Self {
            value: state.value(),
            grad: state.lambda - m.reduced_second,
            deta: m.reduced_mass,
            state,
        }
    }
}

pub fn evaluate(q: &TracelessSym3, eta: f64) -> Result<EnergyEval> {
    evaluate_with(q, eta, &SolveOptions::default())
}

pub fn evaluate_with(q: &TracelessSym3, eta: f64, opts: &SolveOptions) -> Result<EnergyEval> {
    solve(q, Weighting::Kink { eta }, opts).map(EnergyEval::from_state)
}

pub fn j_value(q: &TracelessSym3, eta: f64) -> Result<f64> {
    Ok(evaluate(q, eta)?.value)
}

/// `dJ/dQ = Lambda - int f_Q / (Qp.p - eta) (p (x) p - I/3) dp`.
pub fn j_grad(q: &TracelessSym3, eta: f64) -> Result<TracelessSym3> {
    Ok(evaluate(q, eta)?.grad)
}

/// `dJ/deta = int f_Q / (Qp.p - eta) dp > 0`.
pub fn j_deta(q: &TracelessSym3, eta: f64) -> Result<f64> {
    Ok(evaluate(q, eta)?.deta)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "temperature tau must be positive, got {tau}"
        )))
    }
}

/// `J_tau = J - |Q|^2 / (2 tau)` and its gradient.
pub fn j_thermal(q: &TracelessSym3, eta: f64, tau: f64) -> Result<(f64, TracelessSym3)> {
    check_tau(tau)?;
    let e = evaluate(q, eta)?;
    Ok((e.value - q.norm_sq() / (2.0 * tau), e.grad - *q * (1.0 / tau)))
}

/// Closed-form isotropic stability threshold `15/2 (1 + 2/(15 eta))^-2`.
///
/// Infinite at `eta = -2/15`. Note that [`hessian_at_zero`] shows the
/// isotropic Hessian of `J_tau` is `15/2 (1 + 2/(15 eta))^2 - 1/tau`, so the
/// actual threshold is [`tau_flip`], not this value.
pub fn tau_critical(eta: f64) -> Result<f64> {
    if !(eta < 0.0) {
        return Err(Error::InvalidInput(format!("tau_critical needs eta < 0, got {eta}")));
    }
    let k = 1.0 + 2.0 / (15.0 * eta);
    if k.abs() < 1e-14 {
        return Ok(f64::INFINITY);
    }
    Ok(7.5 / (k * k))
}

/// Coefficient `15/2 (1 + 2/(15 eta))^2` of the isotropic Hessian of `J`.
pub fn hessian_coefficient(eta: f64) -> f64 {
    let k = 1.0 + 2.0 / (15.0 * eta);
    7.5 * k * k
}

/// Temperature at which the isotropic state of `J_tau` changes stability:
/// the Hessian `c(eta) Id - Id / tau` is singular at `tau = 1 / c(eta)`.
/// Stable for larger `tau`. Infinite at `eta = -2/15`.
pub fn tau_flip(eta: f64) -> f64 {
    1.0 / hessian_coefficient(eta)
}

/// Finite-difference Hessian of `J` at `Q = 0`.
#[derive(Clone, Debug)]
pub struct HessianAtZero {
    pub matrix: Matrix5,
    pub analytic_coefficient: f64,
    /// `max |H_ii - c|`.
    pub max_diagonal_deviation: f64,
    pub max_off_diagonal: f64,
}

impl HessianAtZero {
    pub fn relative_deviation(&self) -> f64 {
        self.max_diagonal_deviation / self.analytic_coefficient.abs().max(f64::MIN_POSITIVE)
    }

    /// Eigenvalues of the differenced Hessian, ascending.
    pub fn eigenvalues(&self) -> [f64; 5] {
        let e = nalgebra::SymmetricEigen::new(self.matrix).eigenvalues;
        let mut v = [e[0], e[1], e[2], e[3], e[4]];
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Central differences of `dJ/dQ` at `Q = 0` with step `1e-3`.
pub fn hessian_at_zero(eta: f64) -> Result<HessianAtZero> {
    if !(eta < 0.0) {
        return Err(Error::Domain(Constraint::NormAboveEta));
    }
    let matrix = fd_hessian(|q| j_grad(q, eta), &TracelessSym3::ZERO, 1e-3)?;
    let c = hessian_coefficient(eta);
    let mut diag = 0.0f64;
    let mut off = 0.0f64;
    for i in 0..5 {
        for j in 0..5 {
            if i == j {
                diag = diag.max((matrix[(i, i)] - c).abs());
            } else {
                off = off.max(matrix[(i, j)].abs());
            }
        }
    }
    Ok(HessianAtZero {
        matrix,
        analytic_coefficient: c,
        max_diagonal_deviation: diag,
        max_off_diagonal: off,
    })
}

/// Symmetrised central-difference Jacobian of a gradient map.
pub fn fd_hessian(
    grad: impl Fn(&TracelessSym3) -> Result<TracelessSym3>,
    q: &TracelessSym3,
    h: f64,
) -> Result<Matrix5> {
    let mut m = Matrix5::zeros();
    for j in 0..5 {
        let e = TracelessSym3::basis(j) * h;
        let col = (grad(&(*q + e))? - grad(&(*q - e))?) * (0.5 / h);
        for i in 0..5 {
            m[(i, j)] = col.coords()[i];
        }
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Maximum-entropy (singular) potential `max_l l.Q - ln int exp(l p.p) dp`.
pub fn singular_potential(q: &TracelessSym3) -> Result<f64> {
    Ok(solve(q, Weighting::Unit, &SolveOptions::default())?.value())
}

/// Dimensionless pressure `P* = dJ/deta`.
pub fn pressure_dimensionless(q: &TracelessSym3, eta: f64) -> Result<f64> {
    j_deta(q, eta)
}

/// Physical pressure `P = 2 kBT / (3 d) P*(Q, eta(rho))`.
pub fn eos_pressure(params: &MaterialParams, rho: f64, q: &TracelessSym3) -> Result<f64> {
    params.validate()?;
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("density must be positive, got {rho}")));
    }
    if let Some(rho_s) = params.saturation_density() {
        if rho >= rho_s {
            return Err(Error::Saturation { rho, rho_s });
        }
    }
    let p_star = pressure_dimensionless(q, params.eta(rho))?;
    Ok(pressure_from_dimensionless(params, p_star))
}

pub fn pressure_from_dimensionless(params: &MaterialParams, p_star: f64) -> f64 {
    2.0 * params.kbt / (3.0 * params.d) * p_star
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual_solver::solve_lambda;
    use crate::tensor3::{in_domain_of_j, quaternion_rotation, uniaxial};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const E1: [f64; 3] = [1.0, 0.0, 0.0];

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
    fn closed_form_values() {
        let flat = (15.0 / (8.0 * PI)).ln();
        assert_abs_diff_eq!(j_value(&TracelessSym3::ZERO, FLAT_ETA).unwrap(), flat, epsilon = 1e-12);
        assert_abs_diff_eq!(j_value(&uniaxial(0.05, E1), FLAT_ETA).unwrap(), flat, epsilon = 1e-12);
        assert_abs_diff_eq!(
            j_value(&TracelessSym3::ZERO, -0.5).unwrap(),
            -(2.0 * PI).ln(),
            epsilon = 1e-12
        );
        assert!(j_grad(&TracelessSym3::ZERO, -0.7).unwrap().norm() < 1e-13);
        assert!(j_grad(&uniaxial(0.05, E1), FLAT_ETA).unwrap().norm() < 1e-12);
        for eta in [-0.05, -0.4, -2.0] {
            assert_abs_diff_eq!(j_deta(&TracelessSym3::ZERO, eta).unwrap(), -1.0 / eta, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            pressure_dimensionless(&TracelessSym3::ZERO, FLAT_ETA).unwrap(),
            7.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for _ in 0..10 {
            let (q, eta) = random_case(&mut rng);
            // Keep the stencil inside the domain.
            if q.norm_sq() - eta < 1e-3 || q.min_eigenvalue() < -0.3 {
                continue;
            }
            let e = evaluate(&q, eta).unwrap();
            for i in 0..5 {
                let d = TracelessSym3::basis(i) * h;
                let fd = (j_value(&(q + d), eta).unwrap() - j_value(&(q - d), eta).unwrap()) / (2.0 * h);
                assert!(
                    (fd - e.grad.coords()[i]).abs() <= 1e-4 * e.grad.norm().max(1.0),
                    "{fd} {:?}",
                    e.grad
                );
            }
            let fd = (j_value(&q, eta + h).unwrap() - j_value(&q, eta - h).unwrap()) / (2.0 * h);
            assert!((fd - e.deta).abs() <= 1e-4 * e.deta, "{fd} vs {}", e.deta);
        }
    }

    #[test]
    fn thermal_energy() {
        let (v, g) = j_thermal(&TracelessSym3::ZERO, -0.3, 3.0).unwrap();
        assert_abs_diff_eq!(v, j_value(&TracelessSym3::ZERO, -0.3).unwrap(), epsilon = 1e-15);
        assert!(g.norm() < 1e-13);
        let q = uniaxial(0.1, E1);
        let (v, g) = j_thermal(&q, -0.3, 5.0).unwrap();
        assert_abs_diff_eq!(
            v,
            j_value(&q, -0.3).unwrap() - (2.0 / 3.0) * 0.01 / 10.0,
            epsilon = 1e-14
        );
        let h = 1e-5;
        for i in 0..5 {
            let d = TracelessSym3::basis(i) * h;
            let fd =
                (j_thermal(&(q + d), -0.3, 5.0).unwrap().0 - j_thermal(&(q - d), -0.3, 5.0).unwrap().0) / (2.0 * h);
            assert!((fd - g.coords()[i]).abs() < 1e-5 * g.norm().max(1.0));
        }
        assert!(j_thermal(&q, -0.3, 0.0).is_err());
    }

    #[test]
    fn closed_form_threshold() {
        assert_abs_diff_eq!(tau_critical(-1.0 / 3.0).unwrap(), 125.0 / 6.0, epsilon = 1e-12);
        assert_eq!(tau_critical(FLAT_ETA).unwrap(), f64::INFINITY);
        assert!(tau_critical(-2.0 / 15.0 + 1e-9).unwrap() > 1e12);
        assert_abs_diff_eq!(tau_critical(-1e12).unwrap(), 7.5, epsilon = 1e-9);
        assert!(tau_critical(0.1).is_err());
    }

    #[test]
    fn hessian_at_zero_is_isotropic() {
        let h = hessian_at_zero(-1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(h.analytic_coefficient, 2.7, epsilon = 1e-12);
        assert!(h.relative_deviation() < 1e-3, "{:?}", h.matrix);
        assert!(h.max_off_diagonal < 1e-6);
        let flat = hessian_at_zero(FLAT_ETA).unwrap();
        assert!(flat.matrix.abs().max() < 1e-6);
        // Independent check: second differences of J along a coordinate.
        let eps = 1e-3;
        let j = |t: f64| j_value(&(TracelessSym3::basis(3) * t), -0.5).unwrap();
        let second = (j(eps) - 2.0 * j(0.0) + j(-eps)) / (eps * eps);
        assert!((second - hessian_coefficient(-0.5)).abs() < 1e-3 * second);
    }

    #[test]
    fn singular_potential_values() {
        assert_abs_diff_eq!(
            singular_potential(&TracelessSym3::ZERO).unwrap(),
            -(4.0 * PI).ln(),
            epsilon = 1e-12
        );
        let q = TracelessSym3::from_coords([0.2, -0.1, 0.05, 0.1, 0.0]);
        let r = quaternion_rotation([0.3, -0.5, 0.2, 0.7]);
        let a = singular_potential(&q).unwrap();
        let b = singular_potential(&q.rotate(&r)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        assert!(singular_potential(&uniaxial(-0.51, E1)).is_err());
    }

    #[test]
    fn blow_up_and_pressure_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..15 {
            let (q, eta) = random_case(&mut rng);
            let e = evaluate(&q, eta).unwrap();
            let psi = singular_potential(&q).unwrap();
            assert!(e.value >= psi - (q.norm_sq() - eta).ln() - 1e-9);
            assert!(e.deta >= 1.0 / (q.norm_sq() - eta) - 1e-10);
            assert!(1.0 / (q.norm_sq() - eta) >= 1.0 / (2.0 / 3.0 - eta));
        }
    }

    #[test]
    fn convex_where_support_is_whole_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        while checked < 10 {
            let a = TracelessSym3::from_coords(std::array::from_fn(|_| rng.random_range(-0.2..0.2)));
            let b = TracelessSym3::from_coords(std::array::from_fn(|_| rng.random_range(-0.2..0.2)));
            let eta = rng.random_range(-0.6..-0.05);
            if a.min_eigenvalue() <= eta || b.min_eigenvalue() <= eta {
                continue;
            }
            let mid = (a + b) * 0.5;
            let ja = j_value(&a, eta).unwrap();
            let jb = j_value(&b, eta).unwrap();
            assert!(j_value(&mid, eta).unwrap() <= 0.5 * (ja + jb) + 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn frame_indifference() {
        let q = TracelessSym3::from_coords([0.3, 0.05, -0.1, 0.12, 0.02]);
        let j0 = j_value(&q, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let r = quaternion_rotation(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            assert_abs_diff_eq!(j_value(&q.rotate(&r), 0.02).unwrap(), j0, epsilon = 1e-9);
        }
    }

    fn params() -> MaterialParams {
        MaterialParams {
            c: 1.0,
            d: 0.4,
            u: 1.0,
            a: 0.0,
            b: 1.0,
            kbt: 1.3,
        }
    }

    #[test]
    fn material_maps() {
        let p = params();
        assert_abs_diff_eq!(p.eta(p.saturation_density().unwrap()), 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.eta(p.density_for_eta(-0.2)), -0.2, epsilon = 1e-14);
        assert_abs_diff_eq!(p.tau(0.5), 1.3, epsilon = 1e-15);
        let loose = MaterialParams { d: 1.5, ..p };
        assert!(loose.saturation_density().is_none());
        assert!(MaterialParams { c: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn eos_matches_direct_van_der_waals_form() {
        let p = params();
        for (rho, q) in [
            (0.5, TracelessSym3::ZERO),
            (1.1, uniaxial(0.6, E1)),
            (1.3, uniaxial(0.8, [0.0, 0.6, 0.8])),
        ] {
            let eta = p.eta(rho);
            let s = solve_lambda(&q, eta).unwrap();
            // k_BT rho int f / (1 - rho (c - 3/2 d Qp.p)) dp.
            let direct = p.kbt * rho * s.average(|x| 1.0 / (1.0 - rho * (p.c - 1.5 * p.d * q.quad_form(x))));
            let got = eos_pressure(&p, rho, &q).unwrap();
            assert!((got - direct).abs() <= 1e-10 * direct, "{got} vs {direct}");
        }
        let rho = 0.5;
        assert_abs_diff_eq!(
            eos_pressure(&p, rho, &TracelessSym3::ZERO).unwrap(),
            p.kbt * rho / (1.0 - rho * p.c),
            epsilon = 1e-12
        );
        assert!(matches!(
            eos_pressure(&p, 1.0 / 0.6, &TracelessSym3::ZERO),
            Err(Error::Saturation { .. })
        ));
    }
}
