//! End-to-end acceptance run. Every criterion prints one line; the test fails
//! if any of them fails.

use std::time::Instant;

use dirac_bie::algebra::{
    alpha_dot, diagonal_block_size, max_entry, mit_matrix, mit_projectors, p_tau, r_tau, shell_sigma_min,
    shell_sigma_min_exact, DiracMatrices, Mat4, Spinor, Vec3,
};
use dirac_bie::experiment::{emit_report, run_experiment, ExperimentConfig, ReportFormat, RunReport};
use dirac_bie::layerpot::{assemble_cs, CsMethod};
use dirac_bie::surface::{build_surface, SpinorTrace, SurfaceKind};
use dirac_bie::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPHERE: SurfaceKind = SurfaceKind::Sphere { radius: 1.0 };

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn config(experiment: &str, surface: SurfaceKind, levels: [usize; 2], mu: &[f64]) -> ExperimentConfig {
    ExperimentConfig { experiment: experiment.into(), surface, levels, mu: mu.to_vec(), ..Default::default() }
}

/// Passes when every check of the report whose name starts with one of
/// `prefixes` passes; the detail lists the failing ones.
fn report_checks(report: &RunReport, prefixes: &[&str]) -> Outcome {
    let picked: Vec<_> =
        report.checks.iter().filter(|c| prefixes.iter().any(|p| c.name.starts_with(p))).collect();
    let failed: Vec<String> = picked.iter().filter(|c| !c.passed).map(|c| format!("{} [{}]", c.name, c.detail)).collect();
    if picked.is_empty() {
        return outcome(false, "no matching checks");
    }
    if failed.is_empty() {
        outcome(true, format!("{} checks", picked.len()))
    } else {
        outcome(false, failed.join("; "))
    }
}

fn column(report: &RunReport, name: &str) -> Vec<String> {
    let k = report.column(name).expect("column exists");
    report.rows.iter().map(|r| r[k].to_string()).collect()
}

fn random_normal(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 0.1 {
            return v.normalize();
        }
    }
}

fn exact_algebra() -> Outcome {
    let t = Instant::now();
    let d = DiracMatrices::standard();
    let id = Mat4::identity();
    let i = C64::i();
    let worst = std::cell::Cell::new(0.0f64);
    let note = |m: Mat4| worst.set(worst.get().max(max_entry(&m)));
    let note_value = |v: f64| worst.set(worst.get().max(v));
    for j in 0..3 {
        for k in 0..3 {
            let delta = if j == k { 2.0 } else { 0.0 };
            note(d.alpha(j) * d.alpha(k) + d.alpha(k) * d.alpha(j) - id * C64::from(delta));
        }
        note(d.alpha(j) * d.beta + d.beta * d.alpha(j));
    }
    note(d.beta * d.beta - id);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let taus: Vec<f64> = (0..25).map(|k| -4.0 + k as f64 / 3.0).collect();
    for _ in 0..50 {
        let n = random_normal(&mut rng);
        let an = alpha_dot(&n);
        let b = mit_matrix(&n).unwrap();
        note(b * b - id);
        note(b - b.adjoint());
        let (pp, pm) = mit_projectors(&n).unwrap();
        note(pp * pp - pp);
        note(pm * pm - pm);
        note(pp * pm);
        note(pp + pm - id);
        for &tau in &taus {
            let r = r_tau(&n, tau);
            note(r.adjoint() * (an * -i) * r + an * i);
            let p = p_tau(&n, tau);
            note(p * (an * i) - (an * i) * p);
            note_value((shell_sigma_min(&n, tau) - shell_sigma_min_exact(tau)).abs());
        }
        for eps in [1.0, -1.0] {
            note_value(diagonal_block_size(&r_tau(&n, 2.0 * eps)));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let worst = worst.get();
    outcome(worst <= 1e-10 && secs < 1.0, format!("max entry error {worst:.2e}, {secs:.3} s"))
}

fn plemelj_jump() -> Outcome {
    let surfaces = [SPHERE, SurfaceKind::Ellipsoid { a: 1.0, b: 1.3, c: 0.8 }, SurfaceKind::Torus { major: 2.0, minor: 0.7 }];
    let mut parts = Vec::new();
    let mut passed = true;
    for s in surfaces {
        let report = run_experiment(&config("jump", s, [1, 3], &[0.0, 1.0])).unwrap();
        let o = report_checks(&report, &["jump"]);
        passed &= o.passed;
        let finals = column(&report, "jump_residual");
        parts.push(format!("{}: final {} / {}", s.name(), finals[2], finals[5]));
        if !o.passed {
            parts.push(o.detail);
        }
    }
    outcome(passed, parts.join("; "))
}

fn identities_report() -> RunReport {
    run_experiment(&config("identities", SPHERE, [1, 3], &[0.0, 1.0])).unwrap()
}

fn plemelj_square(report: &RunReport) -> Outcome {
    let o = report_checks(report, &["plemelj_square"]);
    let v = column(report, "plemelj_square");
    outcome(o.passed, format!("final {} (mu=0), {} (mu=1); {}", v[2], v[5], o.detail))
}

fn calderon_suite(report: &RunReport) -> Outcome {
    let o = report_checks(
        report,
        &["idempotency_plus", "idempotency_minus", "star_partition", "swap", "anticommutator_consistency", "partition"],
    );
    let p = column(report, "partition").iter().map(|v| v.parse::<f64>().unwrap()).fold(0.0, f64::max);
    outcome(o.passed, format!("partition max {p:.2e}; {}", o.detail))
}

fn reproducing() -> Outcome {
    let report = run_experiment(&config("reproduce", SPHERE, [1, 3], &[1.0])).unwrap();
    let o = report_checks(&report, &["field", "trace"]);
    let f = column(&report, "field_residual");
    let t = column(&report, "trace_residual");
    outcome(o.passed, format!("top level field {} / {}, trace {} / {}; {}", f[4], f[5], t[4], t[5], o.detail))
}

fn classical_oracle() -> Outcome {
    let c = Spinor::new(C64::new(1.0, 0.0), C64::new(0.0, 0.5), C64::new(-0.3, 0.0), C64::new(0.2, 0.1));
    let mut errs = Vec::new();
    for level in 1..=3 {
        let grid = build_surface(SPHERE, level).unwrap().shared();
        let g = SpinorTrace::from_fn(&grid, |_, _, _| c);
        let mut pair = Vec::new();
        for method in [CsMethod::Offsurface, CsMethod::PvDirect] {
            let out = assemble_cs(&grid, 0.0, method).unwrap().apply_trace(&g).unwrap();
            let err = (0..grid.len())
                .map(|i| (out.node(i) - alpha_dot(&grid.nodes[i]) * c * C64::new(0.0, 0.5)).norm())
                .fold(0.0, f64::max);
            pair.push(err);
        }
        errs.push(pair);
    }
    let decreasing = errs.windows(2).all(|w| w[1][0] < w[0][0] && w[1][1] < w[0][1]);
    let top = errs[2][0].max(errs[2][1]);
    let seq = |k: usize| errs.iter().map(|e| format!("{:.2e}", e[k])).collect::<Vec<_>>().join(" -> ");
    outcome(decreasing && top <= 1e-3, format!("offsurface {}, pv {}", seq(0), seq(1)))
}

fn smoothing() -> Outcome {
    let report = run_experiment(&config("smoothing", SPHERE, [3, 3], &[1.0])).unwrap();
    let o = report_checks(&report, &["slope"]);
    let slope = report.check("slope mu=1").map(|c| c.detail.clone()).unwrap_or_default();
    outcome(o.passed, format!("slope {slope}"))
}

fn mit_suite() -> Outcome {
    let report = run_experiment(&config("mit", SPHERE, [1, 3], &[0.0])).unwrap();
    let o = report_checks(&report, &["boundary_form", "bootstrap", "beta"]);
    let b = column(&report, "bootstrap_residual");
    let lit = column(&report, "beta_anticommutation_literal");
    outcome(
        o.passed,
        format!(
            "bootstrap {} -> {} -> {}, beta commutes exactly; literal anticommutation stays {} ; {}",
            b[0], b[1], b[2], lit[2], o.detail
        ),
    )
}

fn critical_probe() -> Outcome {
    let report = run_experiment(&config("critical", SPHERE, [1, 3], &[1.0])).unwrap();
    let o = report_checks(&report, &["h_half", "f_minus", "transm"]);
    let details: Vec<String> = report.checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
    outcome(o.passed, details.join("; "))
}

fn determinism() -> Outcome {
    let mut same = true;
    let mut sizes = Vec::new();
    for cfg in [
        config("shell-sweep", SPHERE, [2, 2], &[1.0]),
        config("mit", SurfaceKind::Torus { major: 2.0, minor: 0.7 }, [1, 2], &[0.0]),
        ExperimentConfig { probe_degree: 2, ..config("identities", SPHERE, [0, 1], &[1.0]) },
    ] {
        let a = emit_report(&run_experiment(&cfg).unwrap(), ReportFormat::Csv);
        let b = emit_report(&run_experiment(&cfg).unwrap(), ReportFormat::Csv);
        same &= a == b;
        sizes.push(format!("{} {} bytes", cfg.experiment, a.len()));
    }
    outcome(same, sizes.join(", "))
}

#[test]
fn acceptance_criteria() {
    let identities = identities_report();
    let results = [
        ("1 exact matrix algebra", exact_algebra()),
        ("2 Plemelj jump", plemelj_jump()),
        ("3 Plemelj square", plemelj_square(&identities)),
        ("4 Calderon suite", calderon_suite(&identities)),
        ("5 reproducing formula", reproducing()),
        ("6 classical oracle", classical_oracle()),
        ("7 anticommutator smoothing", smoothing()),
        ("8 MIT suite", mit_suite()),
        ("9 critical delta-shell probe", critical_probe()),
        ("10 determinism", determinism()),
    ];
    for (name, o) in &results {
        println!("criterion {name}: {} | {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
