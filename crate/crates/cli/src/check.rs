//! Fast self-check of the solver invariants, run by the `check` subcommand.

use std::f64::consts::PI;

use densenematic::equilibria::{el_residual, find_critical_biaxial, uniaxial_critical, BranchKind};
use densenematic::macro_energy::{evaluate, hessian_at_zero, j_deta, j_grad, j_value};
use densenematic::quadrature::fourth_moment_map;
use densenematic::tensor3::{quaternion_rotation, TracelessSym3};
use densenematic::uniaxial;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn outcome(name: &'static str, r: densenematic::Result<(bool, String)>) -> CheckOutcome {
    match r {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn sample_tensor() -> TracelessSym3 {
    TracelessSym3::from_matrix(&[[0.30, 0.05, -0.02], [0.05, -0.10, 0.04], [-0.02, 0.04, -0.20]])
}

fn fourth_moment() -> densenematic::Result<(bool, String)> {
    let mut worst = 0.0f64;
    for k in 0..5 {
        let a = TracelessSym3::basis(k) + sample_tensor() * (k as f64);
        worst = worst.max((fourth_moment_map(&a) - a * (2.0 / 15.0)).norm());
    }
    Ok((worst <= 1e-10, format!("max |M(A) - 2A/15| = {worst:e}")))
}

fn isotropic_value() -> densenematic::Result<(bool, String)> {
    let e = evaluate(&TracelessSym3::ZERO, -0.5)?;
    let err = (e.value + (2.0 * PI).ln()).abs();
    Ok((
        err <= 1e-10 && e.state.lambda.norm() <= 1e-10,
        format!("|J(0, -1/2) + ln 2pi| = {err:e}"),
    ))
}

fn flat_family() -> densenematic::Result<(bool, String)> {
    let target = (15.0 / (8.0 * PI)).ln();
    let mut worst = 0.0f64;
    for s in [0.0, 0.03, 0.05] {
        let e = evaluate(&uniaxial(s, [0.0, 0.0, 1.0]), -2.0 / 15.0)?;
        worst = worst.max((e.value - target).abs()).max(e.state.lambda.norm());
    }
    Ok((worst <= 1e-8, format!("max deviation on eta = -2/15 = {worst:e}")))
}

fn hessian_zero() -> densenematic::Result<(bool, String)> {
    let h = hessian_at_zero(-1.0 / 3.0)?;
    let rel = h.relative_deviation();
    Ok((
        rel <= 1e-3 && h.max_off_diagonal <= 1e-6,
        format!(
            "relative deviation from 2.7 Id = {rel:e}, off-diagonal {:e}",
            h.max_off_diagonal
        ),
    ))
}

fn gradients() -> densenematic::Result<(bool, String)> {
    let (q, eta) = (sample_tensor(), -0.05);
    let g = j_grad(&q, eta)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..5 {
        let e = TracelessSym3::basis(k) * h;
        let fd = (j_value(&(q + e), eta)? - j_value(&(q - e), eta)?) / (2.0 * h);
        worst = worst.max((fd - g.coords()[k]).abs() / g.norm().max(1.0));
    }
    let fd = (j_value(&q, eta + h)? - j_value(&q, eta - h)?) / (2.0 * h);
    let d = j_deta(&q, eta)?;
    worst = worst.max((fd - d).abs() / d.abs().max(1.0));
    Ok((worst <= 1e-4, format!("max relative FD error = {worst:e}")))
}

fn euler_lagrange() -> densenematic::Result<(bool, String)> {
    let eta = 0.4;
    let s = uniaxial_critical(BranchKind::Prolate, eta, None)?[0];
    let cp = find_critical_biaxial(eta, [2.0 * s / 3.0, -s / 3.0], None)?;
    let r = el_residual(&cp.state, None).max();
    Ok((
        r <= 1e-8,
        format!("prolate critical point at eta = 0.4, max EL defect = {r:e}"),
    ))
}

fn pressure_bounds() -> densenematic::Result<(bool, String)> {
    let (q, eta) = (sample_tensor(), 0.05);
    let p = j_deta(&q, eta)?;
    let b1 = 1.0 / (q.norm_sq() - eta);
    let b2 = 1.0 / (2.0 / 3.0 - eta);
    let p0 = j_deta(&TracelessSym3::ZERO, -0.3)?;
    let eq = (p0 - 1.0 / 0.3).abs();
    Ok((
        p >= b1 && b1 >= b2 && eq <= 1e-10,
        format!("P* = {p}, bounds {b1} >= {b2}, |P*(0) - 1/(-eta)| = {eq:e}"),
    ))
}

fn frame_indifference() -> densenematic::Result<(bool, String)> {
    let (q, eta) = (sample_tensor(), 0.0);
    let j0 = j_value(&q, eta)?;
    let mut worst = 0.0f64;
    for quat in [[0.9, 0.1, -0.3, 0.2], [0.1, 0.7, 0.5, -0.4], [-0.2, 0.3, 0.3, 0.9]] {
        let r = quaternion_rotation(quat);
        worst = worst.max((j_value(&q.rotate(&r), eta)? - j0).abs());
    }
    Ok((worst <= 1e-9, format!("max |J(RQR^T) - J(Q)| = {worst:e}")))
}

/// Run every check in a fixed order.
pub fn run_checks() -> Vec<CheckOutcome> {
    vec![
        outcome("fourth-moment identity", fourth_moment()),
        outcome("isotropic energy", isotropic_value()),
        outcome("flat family", flat_family()),
        outcome("hessian at zero", hessian_zero()),
        outcome("gradient oracles", gradients()),
        outcome("euler-lagrange residual", euler_lagrange()),
        outcome("pressure bounds", pressure_bounds()),
        outcome("frame indifference", frame_indifference()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_checks() {
            assert!(c.passed, "{}", c.line());
        }
    }
}
