use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use farfield::pipeline::{self, Analysis, RunSummary};
use farfield::scenario::Scenario;

#[derive(Parser)]
#[command(name = "farfield", version, about = "Far-field asymptotics of singular 2D Fourier integrals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file, or the name of a built-in scenario.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Grid size n for the n×n surface lattice.
    #[arg(long)]
    grid: Option<usize>,
    /// Comma-separated observation distances.
    #[arg(long = "r-list", value_delimiter = ',')]
    r_list: Option<Vec<f64>>,
    /// Comma-separated absorption values for the flat-plane references.
    #[arg(long, value_delimiter = ',')]
    kappa: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the real curves of every component.
    Trace(Common),
    /// Determine the bridge sign of every component.
    Bridge(Common),
    /// Locate and classify special points.
    Classify(Common),
    /// Assemble the far-field expansion.
    Asym(Common),
    /// Build and verify the deformed surface.
    Surface(Common),
    /// Integrate on the surface and compare with the expansion.
    Integrate(Common),
    /// Run the full pipeline with all checks.
    Validate(Common),
    /// Fit the discrepancy slope of a comparison table.
    Converge {
        #[command(flatten)]
        common: Option<ConvergeArgs>,
        /// Comparison CSV to read instead of running a scenario.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = -2.6, allow_hyphen_values = true)]
        slope_min: f64,
        #[arg(long, default_value_t = -1.4, allow_hyphen_values = true)]
        slope_max: f64,
    },
}

#[derive(Args, Clone)]
struct ConvergeArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long = "r-list", value_delimiter = ',')]
    r_list: Option<Vec<f64>>,
}

const PASS: u8 = 0;
const FAIL: u8 = 2;

fn load(c: &Common) -> Result<Scenario> {
    let mut sc = Scenario::load(&c.scenario).with_context(|| format!("loading scenario {}", c.scenario.display()))?;
    if let Some(g) = c.grid {
        sc.grid = g;
    }
    if let Some(r) = &c.r_list {
        sc.r_values = r.clone();
    }
    if let Some(k) = &c.kappa {
        sc.kappa = k.clone();
    }
    sc.validate()?;
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(sc)
}

fn analyse(sc: &Scenario) -> Result<Analysis> {
    Ok(pipeline::analyse(sc)?)
}

fn report_checks(s: &RunSummary) -> u8 {
    for c in &s.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if s.passed() {
        PASS
    } else {
        FAIL
    }
}

fn print_comparison(s: &RunSummary) {
    for r in &s.comparison {
        println!(
            "r = {:>6}: numeric {:+.6e} {:+.6e}i, asymptotic {:+.6e} {:+.6e}i, rel diff {:.3e}",
            r.r,
            r.numeric.re,
            r.numeric.im,
            r.asymptotic.re,
            r.asymptotic.im,
            r.rel_diff()
        );
    }
}

fn converge(rows: &[pipeline::ComparisonRow], window: (f64, f64), out: Option<&Path>) -> Result<u8> {
    let c = pipeline::convergence_report(rows, window)?;
    let mut text = Vec::new();
    pipeline::write_convergence(&c, &mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    if let Some(dir) = out {
        std::fs::write(dir.join("convergence.txt"), &text)?;
    }
    Ok(if c.pass { PASS } else { FAIL })
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Trace(c) => {
            let sc = load(&c)?;
            for p in pipeline::write_traces(&sc, &sc.model()?, &c.out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Bridge(c) => {
            let sc = load(&c)?;
            let an = analyse(&sc)?;
            let mut paths = Vec::new();
            pipeline::write_bridges(&an, &c.out, &mut paths)?;
            print!("{}", an.bridges);
        }
        Command::Classify(c) => {
            let sc = load(&c)?;
            let an = analyse(&sc)?;
            let f = std::fs::File::create(c.out.join("classification.csv"))?;
            farfield::classify::write_classification_csv(&an.points, &an.model, f)?;
            for p in &an.points {
                println!(
                    "({:+.6}, {:+.6}) {:<8} {:<8} contributing={} {}",
                    p.location[0],
                    p.location[1],
                    p.kind.label(),
                    p.activity,
                    p.contributing,
                    p.reason
                );
            }
        }
        Command::Asym(c) => {
            let sc = load(&c)?;
            let an = analyse(&sc)?;
            let mut paths = Vec::new();
            pipeline::write_analysis(&sc, &an, &c.out, &mut paths)?;
            for r in &sc.r_values {
                let v = farfield::asym::far_field(&an.contributions, [r * sc.direction[0], r * sc.direction[1]])?;
                println!("r = {r}: {:+.10e} {:+.10e}i", v.re, v.im);
            }
        }
        Command::Surface(c) => {
            let sc = load(&c)?;
            let an = analyse(&sc)?;
            let mut paths = Vec::new();
            let (_, rep) = pipeline::run_surface(&sc, &an, &c.out, &mut paths)?;
            let mut text = Vec::new();
            pipeline::write_field_report(&rep, &mut text)?;
            print!("{}", String::from_utf8_lossy(&text));
            return Ok(if rep.pass { PASS } else { FAIL });
        }
        Command::Integrate(c) | Command::Validate(c) => {
            let sc = load(&c)?;
            let s = pipeline::run_scenario(&sc, &c.out)?;
            print_comparison(&s);
            for r in &s.reference {
                println!(
                    "kappa = {}, r = {}: flat {:+.6e} {:+.6e}i, surface {:+.6e} {:+.6e}i",
                    r.kappa, r.r, r.flat.re, r.flat.im, r.surface.re, r.surface.im
                );
            }
            return Ok(report_checks(&s));
        }
        Command::Converge { common, input, slope_min, slope_max } => {
            let window = (slope_min, slope_max);
            let common = common.unwrap_or(ConvergeArgs { scenario: None, out: "out".into(), grid: None, r_list: None });
            if let Some(path) = input {
                let rows = pipeline::read_comparison_csv(std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
                return converge(&rows, window, None);
            }
            let Some(scenario) = common.scenario else {
                let path = common.out.join("comparison.csv");
                let rows = pipeline::read_comparison_csv(std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
                return converge(&rows, window, None);
            };
            let c = Common { scenario, out: common.out, grid: common.grid, r_list: common.r_list, kappa: Some(Vec::new()) };
            let sc = load(&c)?;
            let an = analyse(&sc)?;
            let mut paths = Vec::new();
            let (field, rep) = pipeline::run_surface(&sc, &an, &c.out, &mut paths)?;
            if !rep.pass {
                println!("FAIL surface_verification: {}", rep.failures.join("; "));
                return Ok(FAIL);
            }
            let rows = pipeline::compare(&sc, &an, &field)?;
            pipeline::write_comparison_csv(&rows, std::fs::File::create(c.out.join("comparison.csv"))?)?;
            return converge(&rows, window, Some(&c.out));
        }
    }
    Ok(PASS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
