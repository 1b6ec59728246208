//! Row generation for the sweep commands and their CSV encoding.
//!
//! Floats are written with Rust's shortest round-trip formatting, so output
//! is byte-identical for a fixed configuration.

use std::io::Write;

use densenematic::equilibria::{
    branch_records_at, uniaxial_critical_with, BranchKind, BranchRecord, Stability, UniaxialOptions,
    STABILITY_THRESHOLD,
};
use densenematic::macro_energy::{hessian_at_zero, pressure_from_dimensionless, tau_critical, MaterialParams};
use densenematic::Error;
use rayon::prelude::*;

use crate::{CliError, CliResult};

/// Points `min + k step` up to `max` inclusive, rounded to 12 decimals so
/// that grids like `-0.5, -0.45, ...` print cleanly.
pub fn linear_grid(min: f64, max: f64, step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(CliError::Invalid(format!("grid step must be positive, got {step}")));
    }
    if !(min.is_finite() && max.is_finite()) || max < min {
        return Err(CliError::Invalid(format!("empty grid: min {min} > max {max}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    if n > 1_000_000 {
        return Err(CliError::Invalid(format!("grid of {n} points is too large")));
    }
    Ok((0..n)
        .map(|k| {
            let x = ((min + k as f64 * step) * 1e12).round() / 1e12;
            if x == 0.0 {
                0.0
            } else {
                x
            }
        })
        .collect())
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

/// One `(eta, branch)` row of the phase diagram; gap rows carry only a reason.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRecord {
    pub eta: f64,
    pub branch: String,
    pub s: Option<f64>,
    pub l: Option<f64>,
    pub j: Option<f64>,
    pub stability: Option<Stability>,
    /// `<(p.n)^2>`.
    pub x2: Option<f64>,
    /// Dimensionless pressure.
    pub p_star: Option<f64>,
    pub reason: String,
}

pub const PHASE_HEADER: [&str; 9] = ["eta", "branch", "S", "l", "J", "stability", "x2", "p_star", "reason"];

pub const PHASE_BRANCHES: [BranchKind; 4] = [
    BranchKind::Isotropic,
    BranchKind::Prolate,
    BranchKind::Oblate,
    BranchKind::UnstableNearZero,
];

pub fn branch_label(kind: BranchKind, s: f64) -> String {
    match kind {
        BranchKind::UnstableNearZero if s >= 0.0 => "unstable_near_zero_prolate".into(),
        BranchKind::UnstableNearZero => "unstable_near_zero_oblate".into(),
        k => k.label().into(),
    }
}

impl PhaseRecord {
    fn from_record(kind: BranchKind, r: &BranchRecord) -> Self {
        Self {
            eta: r.eta,
            branch: branch_label(kind, r.s),
            s: Some(r.s),
            l: Some(r.l),
            j: Some(r.j),
            stability: Some(r.stability),
            x2: Some(r.x2),
            p_star: Some(r.pressure),
            reason: String::new(),
        }
    }

    fn gap(kind: BranchKind, eta: f64, reason: String) -> Self {
        Self {
            eta,
            branch: kind.label().into(),
            s: None,
            l: None,
            j: None,
            stability: None,
            x2: None,
            p_star: None,
            reason,
        }
    }

    pub fn is_gap(&self) -> bool {
        self.s.is_none()
    }

    fn fields(&self) -> [String; 9] {
        [
            format!("{}", self.eta),
            self.branch.clone(),
            num(self.s),
            num(self.l),
            num(self.j),
            self.stability.map(|s| s.label().to_string()).unwrap_or_default(),
            num(self.x2),
            num(self.p_star),
            self.reason.clone(),
        ]
    }
}

/// All branches at every grid point, evaluated in parallel and emitted in
/// grid order, then branch order, then decreasing `S`.
pub fn phase_diagram(etas: &[f64], opts: &UniaxialOptions) -> Vec<PhaseRecord> {
    let tasks: Vec<(f64, BranchKind)> = etas
        .iter()
        .flat_map(|&eta| {
            PHASE_BRANCHES
                .iter()
                .filter(move |k| k.covers(eta))
                .map(move |&k| (eta, k))
        })
        .collect();
    let chunks: Vec<Vec<PhaseRecord>> = tasks
        .par_iter()
        .map(|&(eta, kind)| match branch_records_at(kind, eta, None, opts) {
            Ok(recs) => recs.iter().map(|r| PhaseRecord::from_record(kind, r)).collect(),
            Err(e) => vec![PhaseRecord::gap(kind, eta, e.to_string())],
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// One density of the equation-of-state table.
#[derive(Clone, Debug, PartialEq)]
pub struct EosRecord {
    pub rho: f64,
    pub eta: f64,
    pub branch: String,
    pub s: f64,
    pub p_star: f64,
    pub pressure: f64,
    /// `1 / (|Q|^2 - eta)`.
    pub bound_norm: f64,
    /// `1 / (2/3 - eta)`.
    pub bound_packing: f64,
}

pub const EOS_HEADER: [&str; 8] = [
    "rho",
    "eta",
    "branch",
    "S",
    "p_star",
    "P",
    "bound_norm",
    "bound_packing",
];

impl EosRecord {
    fn fields(&self) -> [String; 8] {
        [
            format!("{}", self.rho),
            format!("{}", self.eta),
            self.branch.clone(),
            format!("{}", self.s),
            format!("{}", self.p_star),
            format!("{}", self.pressure),
            format!("{}", self.bound_norm),
            format!("{}", self.bound_packing),
        ]
    }
}

/// Pressure at density `rho` on the lower-energy of the isotropic state
/// (when admissible) and the prolate uniaxial local minimum.
pub fn eos_point(params: &MaterialParams, rho: f64, opts: &UniaxialOptions) -> densenematic::Result<EosRecord> {
    params.validate()?;
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("density must be positive, got {rho}")));
    }
    if let Some(rho_s) = params.saturation_density() {
        if rho >= rho_s {
            return Err(Error::Saturation { rho, rho_s });
        }
    }
    let eta = params.eta(rho);
    let mut candidates: Vec<(BranchKind, BranchRecord)> = Vec::new();
    if eta < 0.0 {
        candidates.push((BranchKind::Isotropic, BranchRecord::at(eta, 0.0, opts)?));
    }
    if let Ok(roots) = uniaxial_critical_with(BranchKind::Prolate, eta, None, opts) {
        for s in roots {
            candidates.push((BranchKind::Prolate, BranchRecord::at(eta, s, opts)?));
        }
    }
    let (kind, rec) = candidates
        .into_iter()
        .min_by(|a, b| a.1.j.total_cmp(&b.1.j))
        .ok_or_else(|| Error::InvalidInput(format!("no admissible equilibrium at rho = {rho}")))?;
    let q2 = 2.0 / 3.0 * rec.s * rec.s;
    Ok(EosRecord {
        rho,
        eta,
        branch: kind.label().into(),
        s: rec.s,
        p_star: rec.pressure,
        pressure: pressure_from_dimensionless(params, rec.pressure),
        bound_norm: 1.0 / (q2 - eta),
        bound_packing: 1.0 / (2.0 / 3.0 - eta),
    })
}

pub fn eos_table(
    params: &MaterialParams,
    rhos: &[f64],
    opts: &UniaxialOptions,
) -> Vec<densenematic::Result<EosRecord>> {
    rhos.par_iter().map(|&rho| eos_point(params, rho, opts)).collect()
}

/// Isotropic stability of `J_tau` at one `(eta, tau)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRecord {
    pub eta: f64,
    pub tau: f64,
    pub stability: Stability,
    pub stable: bool,
    /// Closed-form threshold `15/2 (1 + 2/(15 eta))^-2`.
    pub tau_c: f64,
    /// Measured threshold `1 / mu_min` from the finite-difference Hessian.
    pub tau_flip: f64,
}

pub const STABILITY_HEADER: [&str; 6] = ["eta", "tau", "stability", "stable", "tau_c", "tau_flip"];

impl StabilityRecord {
    fn fields(&self) -> [String; 6] {
        [
            format!("{}", self.eta),
            format!("{}", self.tau),
            self.stability.label().to_string(),
            if self.stable { "1" } else { "0" }.to_string(),
            format!("{}", self.tau_c),
            format!("{}", self.tau_flip),
        ]
    }
}

/// The Hessian of `J_tau` at zero is `H_J(0) - Id / tau`; `H_J(0)` is
/// differenced once per `eta` and shifted for every `tau`.
pub fn stability_map(etas: &[f64], taus: &[f64]) -> CliResult<Vec<StabilityRecord>> {
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0)) {
        return Err(CliError::Invalid(format!("temperature tau must be positive, got {t}")));
    }
    if let Some(e) = etas.iter().find(|e| !(**e < 0.0)) {
        return Err(CliError::Invalid(format!(
            "stability map needs eta < 0 (isotropic state inadmissible at eta = {e})"
        )));
    }
    let per_eta: Vec<CliResult<Vec<StabilityRecord>>> = etas
        .par_iter()
        .map(|&eta| {
            let h = hessian_at_zero(eta)?;
            let mu = h.eigenvalues();
            let mu_min = mu[0];
            let tau_c = tau_critical(eta)?;
            let tau_flip = if mu_min > 0.0 { 1.0 / mu_min } else { f64::INFINITY };
            Ok(taus
                .iter()
                .map(|&tau| {
                    let shifted: Vec<f64> = mu.iter().map(|m| m - 1.0 / tau).collect();
                    let radius = shifted.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let stability = Stability::from_spectrum(shifted, STABILITY_THRESHOLD * radius.max(1.0));
                    StabilityRecord {
                        eta,
                        tau,
                        stability,
                        stable: stability == Stability::Minimum,
                        tau_c,
                        tau_flip,
                    }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for rows in per_eta {
        out.extend(rows?);
    }
    Ok(out)
}

fn write_rows<W: Write, const N: usize>(
    out: W,
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_phase_csv<W: Write>(out: W, rows: &[PhaseRecord]) -> CliResult<()> {
    write_rows(out, PHASE_HEADER, rows.iter().map(PhaseRecord::fields))
}

pub fn write_eos_csv<W: Write>(out: W, rows: &[EosRecord]) -> CliResult<()> {
    write_rows(out, EOS_HEADER, rows.iter().map(EosRecord::fields))
}

pub fn write_stability_csv<W: Write>(out: W, rows: &[StabilityRecord]) -> CliResult<()> {
    write_rows(out, STABILITY_HEADER, rows.iter().map(StabilityRecord::fields))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_inclusive_and_clean() {
        let g = linear_grid(-0.5, 0.1, 0.05).unwrap();
        assert_eq!(g.len(), 13);
        assert_eq!(g[3], -0.35);
        assert_eq!(*g.last().unwrap(), 0.1);
        assert_eq!(g[10], 0.0);
        assert!(linear_grid(0.0, 1.0, 0.0).is_err());
        assert!(linear_grid(1.0, 0.0, 0.1).is_err());
        assert_eq!(linear_grid(0.3, 0.3, 0.1).unwrap(), vec![0.3]);
    }

    #[test]
    fn phase_rows_cover_branches() {
        let rows = phase_diagram(&[-0.3, -0.01, 0.05, 0.5], &UniaxialOptions::default());
        let count = |eta: f64, b: &str| rows.iter().filter(|r| r.eta == eta && r.branch == b).count();
        assert_eq!(count(-0.3, "isotropic"), 1);
        assert_eq!(count(0.05, "isotropic"), 0);
        assert_eq!(count(0.05, "oblate"), 1);
        assert_eq!(count(0.5, "oblate"), 0);
        assert_eq!(count(0.5, "prolate"), 1);
        assert_eq!(count(-0.01, "unstable_near_zero_prolate"), 1);
        assert_eq!(count(-0.01, "unstable_near_zero_oblate"), 1);
        assert_eq!(count(-0.3, "unstable_near_zero_prolate"), 0);
        assert!(rows.iter().all(|r| !r.is_gap()));
        let p = rows.iter().find(|r| r.eta == 0.5 && r.branch == "prolate").unwrap();
        assert!(p.s.unwrap() > 0.75f64.sqrt() && p.s.unwrap() < 1.0);
        let iso = rows.iter().find(|r| r.eta == -0.3).unwrap();
        assert_eq!(iso.stability, Some(Stability::Minimum));
    }

    fn params() -> MaterialParams {
        MaterialParams {
            c: 1.0,
            d: 0.4,
            u: 1.0,
            a: 0.0,
            b: 1.0,
            kbt: 1.0,
        }
    }

    #[test]
    fn eos_rows() {
        let opts = UniaxialOptions::default();
        let iso = eos_point(&params(), 0.5, &opts).unwrap();
        assert_eq!(iso.branch, "isotropic");
        assert!((iso.p_star - 1.0 / -iso.eta).abs() <= 1e-10 * iso.p_star);
        let dense = eos_point(&params(), 1.4, &opts).unwrap();
        assert_eq!(dense.branch, "prolate");
        assert!(dense.p_star >= dense.bound_norm && dense.bound_norm >= dense.bound_packing);
        assert!(matches!(
            eos_point(&params(), 1.7, &opts),
            Err(Error::Saturation { .. })
        ));
    }

    #[test]
    fn stability_rows() {
        let rows = stability_map(&[-1.0 / 3.0], &[0.2, 10.0, 30.0]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(!rows[0].stable);
        assert!(rows[1].stable && rows[2].stable);
        assert!((rows[0].tau_c - 125.0 / 6.0).abs() < 1e-12);
        assert!((rows[0].tau_flip - 1.0 / 2.7).abs() < 1e-3);
        assert!(stability_map(&[0.1], &[1.0]).is_err());
        assert!(stability_map(&[-0.2], &[0.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = stability_map(&[-0.5], &[1.0]).unwrap();
        let mut buf = Vec::new();
        write_stability_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "eta,tau,stability,stable,tau_c,tau_flip");
        assert!(lines.next().unwrap().starts_with("-0.5,1,min,1,"));
    }
}
