use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dirac_bie::experiment::{init_threads_from_env, run_experiment, write_report, ExperimentConfig, ReportFormat};
use dirac_bie::layerpot::CsMethod;
use dirac_bie::surface::SurfaceKind;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Name {
    Identities,
    Jump,
    Reproduce,
    Smoothing,
    Mit,
    ShellSweep,
    Critical,
}

impl Name {
    fn as_str(self) -> &'static str {
        match self {
            Name::Identities => "identities",
            Name::Jump => "jump",
            Name::Reproduce => "reproduce",
            Name::Smoothing => "smoothing",
            Name::Mit => "mit",
            Name::ShellSweep => "shell-sweep",
            Name::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pretty,
}

/// Refinement studies for Dirac boundary integral operators.
///
/// The thread count is taken from DIRAC_BIE_THREADS when set. The exit code
/// is 0 when every check passes, 1 when a check fails and 2 on errors.
#[derive(Debug, Parser)]
#[command(name = "dirac-bie", version)]
struct Cli {
    /// Experiment to run.
    experiment: Name,
    /// TOML config file; flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// sphere:R, ellipsoid:A,B,C or torus:MAJOR,MINOR.
    #[arg(long)]
    surface: Option<String>,
    /// Level range, e.g. 1..3 or a single level.
    #[arg(long)]
    levels: Option<String>,
    /// Comma-separated kernel masses.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Option<Vec<f64>>,
    /// Comma-separated couplings, or START:STOP:COUNT.
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Radius of the μ = 0 evaluation ball.
    #[arg(long)]
    ball_radius: Option<f64>,
    /// offsurface or pv_direct.
    #[arg(long)]
    method: Option<String>,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_surface(s: &str) -> Result<SurfaceKind, String> {
    let (kind, args) = s.split_once(':').ok_or_else(|| format!("surface {s:?} needs KIND:PARAMS"))?;
    let v: Vec<f64> =
        args.split(',').map(|a| a.trim().parse::<f64>().map_err(|e| format!("{a:?}: {e}"))).collect::<Result<_, _>>()?;
    match (kind, v.as_slice()) {
        ("sphere", [r]) => Ok(SurfaceKind::Sphere { radius: *r }),
        ("ellipsoid", [a, b, c]) => Ok(SurfaceKind::Ellipsoid { a: *a, b: *b, c: *c }),
        ("torus", [major, minor]) => Ok(SurfaceKind::Torus { major: *major, minor: *minor }),
        _ => Err(format!("cannot read surface {s:?}")),
    }
}

fn parse_levels(s: &str) -> Result<[usize; 2], String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("level {t:?}: {e}"));
    match s.split_once("..") {
        Some((a, b)) => Ok([num(a)?, num(b.trim_start_matches('='))?]),
        None => num(s).map(|l| [l, l]),
    }
}

fn parse_tau(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("tau {t:?}: {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, n] => {
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n.trim().parse().map_err(|e| format!("count {n:?}: {e}"))?;
            if n < 2 {
                return Err("a tau range needs at least two points".into());
            }
            Ok((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("cannot read tau {s:?}")),
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = cli.experiment.as_str().to_string();
    if let Some(s) = &cli.surface {
        cfg.surface = parse_surface(s)?;
    }
    if let Some(l) = &cli.levels {
        cfg.levels = parse_levels(l)?;
    }
    if let Some(mu) = &cli.mu {
        cfg.mu = mu.clone();
    }
    if let Some(t) = &cli.tau {
        cfg.tau = parse_tau(t)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.ball_radius.is_some() {
        cfg.ball_radius = cli.ball_radius;
    }
    if let Some(m) = &cli.method {
        cfg.layer.method = m.parse::<CsMethod>().map_err(|e| e.to_string())?;
    }
    if cli.output.is_some() {
        cfg.output = cli.output.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    if let Err(e) = init_threads_from_env() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let format = match cli.format {
        Format::Csv => ReportFormat::Csv,
        Format::Pretty => ReportFormat::Pretty,
    };
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write_report(&report, format, cfg.output.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_strings() {
        assert_eq!(parse_surface("sphere:2").unwrap(), SurfaceKind::Sphere { radius: 2.0 });
        assert_eq!(parse_surface("torus:2,0.7").unwrap(), SurfaceKind::Torus { major: 2.0, minor: 0.7 });
        assert!(parse_surface("torus:2").is_err());
        assert!(parse_surface("cube:1").is_err());
    }

    #[test]
    fn level_and_tau_strings() {
        assert_eq!(parse_levels("1..3").unwrap(), [1, 3]);
        assert_eq!(parse_levels("1..=3").unwrap(), [1, 3]);
        assert_eq!(parse_levels("2").unwrap(), [2, 2]);
        let t = parse_tau("-4:4:25").unwrap();
        assert_eq!(t.len(), 25);
        assert_eq!((t[0], t[12], t[24]), (-4.0, 0.0, 4.0));
        assert_eq!(parse_tau("0,2,-1.5").unwrap(), vec![0.0, 2.0, -1.5]);
    }
}
