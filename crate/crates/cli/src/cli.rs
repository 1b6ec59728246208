//! Argument parsing and the five subcommands.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use densenematic::dual_solver::SolveOptions;
use densenematic::equilibria::{el_residual, stability_classify_with, UniaxialOptions};
use densenematic::macro_energy::{evaluate_with, MaterialParams};
use densenematic::quadrature::Resolution;
use densenematic::{uniaxial, Error, TracelessSym3};

use crate::check::run_checks;
use crate::config::ConfigFile;
use crate::svg::phase_svg;
use crate::tables::{
    eos_table, linear_grid, phase_diagram, stability_map, write_eos_csv, write_phase_csv, write_stability_csv,
};
use crate::{CliError, CliResult};

pub const THREADS_ENV: &str = "DENSENEMATIC_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "densenematic",
    version,
    about = "Packing-constrained nematic energy: solver and sweeps"
)]
#[command(allow_negative_numbers = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Gauss-Legendre nodes per polar panel.
    #[arg(long, global = true)]
    pub nu: Option<usize>,
    /// Azimuthal nodes.
    #[arg(long, global = true)]
    pub nphi: Option<usize>,
    /// Solver tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Worker threads (falls back to DENSENEMATIC_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate J at one Q and report the dual solution.
    #[command(allow_negative_numbers = true)]
    Solve(SolveArgs),
    /// Uniaxial branches over an eta grid as CSV, optionally an SVG figure.
    #[command(allow_negative_numbers = true)]
    PhaseDiagram(PhaseArgs),
    /// Equation of state over a density grid.
    #[command(allow_negative_numbers = true)]
    Eos(EosArgs),
    /// Isotropic stability of J_tau over an (eta, tau) grid.
    #[command(allow_negative_numbers = true)]
    StabilityMap(StabilityArgs),
    /// Run the invariant self-check.
    Check,
}

#[derive(Args, Debug, Default)]
pub struct EtaGrid {
    #[arg(long)]
    pub eta_min: Option<f64>,
    #[arg(long)]
    pub eta_max: Option<f64>,
    #[arg(long)]
    pub eta_step: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct SolveArgs {
    #[arg(long)]
    pub eta: Option<f64>,
    /// Uniaxial order parameter with director e_z.
    #[arg(long = "S")]
    pub s: Option<f64>,
    /// First diagonal entry of diag(q1, q2, -q1-q2).
    #[arg(long)]
    pub q1: Option<f64>,
    #[arg(long)]
    pub q2: Option<f64>,
    /// Temperature of J_tau = J - |Q|^2 / (2 tau).
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub grid: EtaGrid,
    /// Also write the S-eta figure here.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct EosArgs {
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub rho_max: Option<f64>,
    #[arg(long)]
    pub rho_step: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long = "U")]
    pub u: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub kbt: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub grid: EtaGrid,
    /// Single temperature; overrides the tau grid.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub tau_min: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    #[arg(long)]
    pub tau_step: Option<f64>,
}

/// Flag value, else config value, else default.
struct Settings {
    file: ConfigFile,
}

impl Settings {
    fn f64(&self, flag: Option<f64>, key: &str, default: Option<f64>) -> CliResult<f64> {
        if let Some(v) = flag {
            return Ok(v);
        }
        if let Some(v) = self.file.get_f64(key)? {
            return Ok(v);
        }
        default.ok_or_else(|| CliError::Invalid(format!("missing required parameter --{key}")))
    }

    fn opt_f64(&self, flag: Option<f64>, key: &str) -> CliResult<Option<f64>> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.file.get_f64(key)?,
        })
    }

    fn usize(&self, flag: Option<usize>, key: &str) -> CliResult<Option<usize>> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.file.get_usize(key)?,
        })
    }

    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.clone().or_else(|| self.file.get_str(key).map(PathBuf::from))
    }

    fn resolution(&self, common: &Common) -> CliResult<Resolution> {
        let d = Resolution::default();
        let res = Resolution::new(
            self.usize(common.nu, "nu")?.unwrap_or(d.n_u),
            self.usize(common.nphi, "nphi")?.unwrap_or(d.n_phi),
        );
        if !res.is_valid() {
            return Err(CliError::Invalid(format!(
                "resolution too coarse: need nu >= {} and nphi >= {}",
                Resolution::MIN_N_U,
                Resolution::MIN_N_PHI
            )));
        }
        Ok(res)
    }

    fn tol(&self, common: &Common, default: f64) -> CliResult<f64> {
        let t = self.f64(common.tol, "tol", Some(default))?;
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Invalid(format!("tolerance must lie in (0, 1), got {t}")));
        }
        Ok(t)
    }

    fn uniaxial_options(&self, common: &Common) -> CliResult<UniaxialOptions> {
        let d = UniaxialOptions::default();
        Ok(UniaxialOptions {
            n_per_panel: self.resolution(common)?.n_u,
            tol: self.tol(common, d.tol)?,
            ..d
        })
    }

    fn eta_grid(&self, g: &EtaGrid, defaults: (f64, f64, f64)) -> CliResult<Vec<f64>> {
        let lo = self.f64(g.eta_min, "eta-min", Some(defaults.0))?;
        let hi = self.f64(g.eta_max, "eta-max", Some(defaults.1))?;
        let step = self.f64(g.eta_step, "eta-step", Some(defaults.2))?;
        if hi >= 2.0 / 3.0 {
            return Err(CliError::Invalid(format!("eta-max must be below 2/3, got {hi}")));
        }
        linear_grid(lo, hi, step)
    }
}

fn thread_count(common: &Common, settings: &Settings) -> CliResult<Option<usize>> {
    if let Some(n) = settings.usize(common.threads, "threads")? {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Invalid(format!("{THREADS_ENV} must be a count, got `{v}`"))),
        _ => Ok(None),
    }
}

fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
            write(&mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn fmt_tensor(q: &TracelessSym3) -> String {
    let m = q.to_matrix();
    m.iter()
        .map(|row| format!("[{}, {}, {}]", row[0], row[1], row[2]))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Text report for `solve`.
pub fn solve_report(args: &SolveArgs, common: &Common, settings_file: &ConfigFile) -> CliResult<String> {
    let settings = Settings {
        file: settings_file.clone(),
    };
    let eta = settings.f64(args.eta, "eta", None)?;
    let s = settings.opt_f64(args.s, "S")?;
    let q1 = settings.opt_f64(args.q1, "q1")?;
    let q2 = settings.opt_f64(args.q2, "q2")?;
    let tau = settings.opt_f64(args.tau, "tau")?;
    let q = match (s, q1, q2) {
        (Some(s), None, None) => uniaxial(s, [0.0, 0.0, 1.0]),
        (None, Some(a), Some(b)) => TracelessSym3::from_diagonal([a, b, -a - b]),
        (None, None, None) => return Err(CliError::Invalid("give either --S or both --q1 and --q2".into())),
        _ => return Err(CliError::Invalid("--S excludes --q1/--q2, and --q1 needs --q2".into())),
    };
    if !q.coords().iter().all(|c| c.is_finite()) || !eta.is_finite() {
        return Err(CliError::Invalid("inputs must be finite".into()));
    }
    let opts = SolveOptions {
        resolution: settings.resolution(common)?,
        tol: settings.tol(common, SolveOptions::default().tol)?,
        ..SolveOptions::default()
    };
    let e = evaluate_with(&q, eta, &opts)?;
    let st = &e.state;
    let (energy, grad) = match tau {
        Some(t) if t > 0.0 => (e.value - q.norm_sq() / (2.0 * t), e.grad - q * (1.0 / t)),
        Some(t) => return Err(Error::InvalidInput(format!("temperature tau must be positive, got {t}")).into()),
        None => (e.value, e.grad),
    };
    let el = el_residual(st, tau);
    let stab = stability_classify_with(&q, eta, tau, &opts)?;

    let mut r = String::new();
    let _ = writeln!(r, "eta = {eta}");
    if let Some(t) = tau {
        let _ = writeln!(r, "tau = {t}");
    }
    let _ = writeln!(r, "Q = [{}]", fmt_tensor(&q));
    let _ = writeln!(r, "Q eigenvalues = {:?}", st.frame.values);
    let _ = writeln!(r, "resolution = nu {} nphi {}", st.resolution.n_u, st.resolution.n_phi);
    let _ = writeln!(r, "Lambda = [{}]", fmt_tensor(&st.lambda));
    let _ = writeln!(r, "|Lambda| = {}", st.lambda.norm());
    let _ = writeln!(r, "Z = {}", st.z);
    let _ = writeln!(r, "ln Z = {}", st.ln_z);
    let _ = writeln!(r, "J = {}", e.value);
    if tau.is_some() {
        let _ = writeln!(r, "J_tau = {energy}");
    }
    let _ = writeln!(r, "dual iterations = {}", st.iterations);
    let _ = writeln!(r, "dual grad norm = {:e}", st.grad_norm);
    let _ = writeln!(r, "energy grad norm = {:e}", grad.norm());
    let _ = writeln!(r, "EL residual density = {:e}", el.density);
    let _ = writeln!(r, "EL residual Q moment = {:e}", el.q_moment);
    let _ = writeln!(r, "EL residual Lambda moment = {:e}", el.lambda_moment);
    let _ = writeln!(r, "hessian spectrum = {:?}", stab.spectrum);
    let _ = writeln!(r, "rotational zero modes = {}", stab.rotational_modes);
    let _ = writeln!(r, "stability = {}", stab.stability.label());
    let _ = writeln!(r, "P* = {}", e.deta);
    Ok(r)
}

fn material(args: &EosArgs, s: &Settings) -> CliResult<MaterialParams> {
    let p = MaterialParams {
        c: s.f64(args.c, "c", None)?,
        d: s.f64(args.d, "d", None)?,
        u: s.f64(args.u, "U", Some(1.0))?,
        a: s.f64(args.a, "a", Some(0.0))?,
        b: s.f64(args.b, "b", Some(1.0))?,
        kbt: s.f64(args.kbt, "kbt", Some(1.0))?,
    };
    p.validate()?;
    Ok(p)
}

fn run_command(cli: &Cli, settings: &Settings) -> CliResult<()> {
    let common = &cli.common;
    let out = settings.path(&common.out, "out");
    match &cli.command {
        Command::Solve(args) => {
            let report = solve_report(args, common, &settings.file)?;
            emit(out.as_deref(), |w| Ok(w.write_all(report.as_bytes())?))
        }
        Command::PhaseDiagram(args) => {
            let etas = settings.eta_grid(&args.grid, (-0.5, 0.65, 0.01))?;
            let opts = settings.uniaxial_options(common)?;
            let rows = phase_diagram(&etas, &opts);
            for r in rows.iter().filter(|r| r.is_gap()) {
                eprintln!("gap: {} at eta = {}: {}", r.branch, r.eta, r.reason);
            }
            emit(out.as_deref(), |w| write_phase_csv(w, &rows))?;
            if let Some(p) = settings.path(&args.svg, "svg") {
                std::fs::write(p, phase_svg(&rows, &etas))?;
            }
            Ok(())
        }
        Command::Eos(args) => {
            let params = material(args, settings)?;
            let rho_min = settings.f64(args.rho_min, "rho-min", None)?;
            let rho_max = settings.f64(args.rho_max, "rho-max", None)?;
            let rho_step = settings.f64(args.rho_step, "rho-step", None)?;
            let rhos = linear_grid(rho_min, rho_max, rho_step)?;
            let opts = settings.uniaxial_options(common)?;
            let mut rows = Vec::new();
            for (rho, r) in rhos.iter().zip(eos_table(&params, &rhos, &opts)) {
                match r {
                    Ok(row) => rows.push(row),
                    Err(e @ Error::Saturation { .. }) => eprintln!("rejected rho = {rho}: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            if rows.is_empty() {
                return Err(CliError::Invalid(
                    "every density in the grid is at or beyond saturation".into(),
                ));
            }
            emit(out.as_deref(), |w| write_eos_csv(w, &rows))
        }
        Command::StabilityMap(args) => {
            let etas = settings.eta_grid(&args.grid, (-1.0, -0.01, 0.01))?;
            let taus = match settings.opt_f64(args.tau, "tau")? {
                Some(t) => vec![t],
                None => linear_grid(
                    settings.f64(args.tau_min, "tau-min", Some(0.1))?,
                    settings.f64(args.tau_max, "tau-max", Some(5.0))?,
                    settings.f64(args.tau_step, "tau-step", Some(0.1))?,
                )?,
            };
            let rows = stability_map(&etas, &taus)?;
            emit(out.as_deref(), |w| write_stability_csv(w, &rows))
        }
        Command::Check => {
            let results = run_checks();
            let mut text = String::new();
            for c in &results {
                let _ = writeln!(text, "{}", c.line());
            }
            let failed = results.iter().filter(|c| !c.passed).count();
            let _ = writeln!(text, "{} of {} checks passed", results.len() - failed, results.len());
            emit(out.as_deref(), |w| Ok(w.write_all(text.as_bytes())?))?;
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} invariant check(s) failed")));
            }
            Ok(())
        }
    }
}

/// Execute a parsed command line inside a worker pool of the configured size.
pub fn run(cli: &Cli) -> CliResult<()> {
    let file = match &cli.common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let settings = Settings { file };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(&cli.common, &settings)? {
        if n == 0 {
            return Err(CliError::Invalid("thread count must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Numerical(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_command(cli, &settings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("densenematic").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn negative_values_parse() {
        let cli = parse(&["solve", "--S", "-0.2", "--eta", "-0.5", "--nu", "32"]);
        match cli.command {
            Command::Solve(a) => {
                assert_eq!(a.s, Some(-0.2));
                assert_eq!(a.eta, Some(-0.5));
            }
            _ => panic!("wrong subcommand"),
        }
        assert_eq!(cli.common.nu, Some(32));
    }

    #[test]
    fn isotropic_report() {
        let cli = parse(&["solve", "--S", "0", "--eta", "-0.5"]);
        let Command::Solve(a) = &cli.command else {
            unreachable!()
        };
        let r = solve_report(a, &cli.common, &ConfigFile::default()).unwrap();
        let j: f64 = r.lines().find_map(|l| l.strip_prefix("J = ")).unwrap().parse().unwrap();
        assert!((j + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!(r.contains("stability = min"));
    }

    #[test]
    fn domain_error_is_invalid() {
        let cli = parse(&["solve", "--S", "0", "--eta", "0.1"]);
        let Command::Solve(a) = &cli.command else {
            unreachable!()
        };
        let e = solve_report(a, &cli.common, &ConfigFile::default()).unwrap_err();
        assert_eq!(e.exit_code(), crate::EXIT_INVALID);
        assert!(e.to_string().contains("|Q|^2 <= eta"));
    }

    #[test]
    fn flags_override_config() {
        let file = ConfigFile::parse("eta = 0.3\nS = 0.7\n").unwrap();
        let cli = parse(&["solve", "--eta", "-0.5", "--S", "0"]);
        let Command::Solve(a) = &cli.command else {
            unreachable!()
        };
        let r = solve_report(a, &cli.common, &file).unwrap();
        assert!(r.starts_with("eta = -0.5\n"));
    }
}
