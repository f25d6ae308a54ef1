//! The scenario pipeline: traces, bridges, classification, asymptotics,
//! surface, quadrature and the comparison between the last two.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::asym::{contributions_from, far_field, write_expansion_csv, Contribution};
use crate::bridge::BridgeConfig;
use crate::classify::{classify_model, write_classification_csv, SpecialPoint};
use crate::error::{Error, Result};
use crate::expr::{WaveFunctionModel, C64};
use crate::quad::{integrate_on_surface, integrate_reference, write_integrand_heatmap, QuadratureConfig};
use crate::scenario::Scenario;
use crate::surface::{build_global_field, verify_field, DeformationField, FieldReport};
use crate::trace::trace_real_curves;

/// Everything derived from a scenario before any quadrature.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: WaveFunctionModel,
    pub bridges: BridgeConfig,
    pub points: Vec<SpecialPoint>,
    pub contributions: Vec<Contribution>,
}

/// Bridges (determined, then overridden by the scenario) and special points.
pub fn analyse(sc: &Scenario) -> Result<Analysis> {
    sc.validate()?;
    let model = sc.model()?;
    let mut bridges = BridgeConfig::determine(&model, &sc.classify_window, sc.trace_cell)
        .map_err(|e| e.in_scenario("bridges"))?;
    for (id, s) in &sc.bridges {
        bridges.set(id.clone(), *s);
    }
    let points = classify_model(&model, &bridges, sc.direction, &sc.classify_window, sc.trace_cell)
        .map_err(|e| e.in_scenario("classification"))?;
    let contributions = contributions_from(&points);
    Ok(Analysis { model, bridges, points, contributions })
}

/// One row of the numeric/asymptotic comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub r: f64,
    pub numeric: C64,
    pub asymptotic: C64,
}

impl ComparisonRow {
    pub fn abs_diff(&self) -> f64 {
        (self.numeric - self.asymptotic).norm()
    }

    pub fn rel_diff(&self) -> f64 {
        self.abs_diff() / self.asymptotic.norm()
    }
}

const COMPARISON_HEADER: [&str; 7] = [
    "r",
    "re_numeric",
    "im_numeric",
    "re_asymptotic",
    "im_asymptotic",
    "abs_diff",
    "rel_diff",
];

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_comparison_csv<W: std::io::Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(COMPARISON_HEADER)?;
    for r in rows {
        wr.write_record([
            num(r.r),
            num(r.numeric.re),
            num(r.numeric.im),
            num(r.asymptotic.re),
            num(r.asymptotic.im),
            num(r.abs_diff()),
            num(r.rel_diff()),
        ])?;
    }
    Ok(wr.flush()?)
}

pub fn read_comparison_csv<R: std::io::Read>(rd: R) -> Result<Vec<ComparisonRow>> {
    let mut rd = csv::Reader::from_reader(rd);
    if rd.headers()?.iter().collect::<Vec<_>>() != COMPARISON_HEADER {
        return Err(Error::Io("comparison CSV has unexpected columns".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Io(format!("bad number `{s}` in comparison CSV"))))
            .collect::<Result<_>>()?;
        rows.push(ComparisonRow {
            r: v[0],
            numeric: C64::new(v[1], v[2]),
            asymptotic: C64::new(v[3], v[4]),
        });
    }
    Ok(rows)
}

/// Least-squares fit of `log|discrepancy|` against `log r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in `log` units.
    pub residual: f64,
    pub window: (f64, f64),
    pub pass: bool,
}

/// Slope of `log|numeric − asymptotic|` versus `log r`, checked against `window`.
pub fn convergence_report(rows: &[ComparisonRow], window: (f64, f64)) -> Result<ConvergenceReport> {
    if rows.len() < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 r values, got {}", rows.len())));
    }
    let rmin = rows.iter().map(|r| r.r).fold(f64::INFINITY, f64::min);
    let rmax = rows.iter().map(|r| r.r).fold(0.0, f64::max);
    if !(rmax >= 4.0 * rmin) {
        return Err(Error::InsufficientData(format!("r values span a factor {} < 4", rmax / rmin)));
    }
    if rows.iter().any(|r| !(r.abs_diff() > 0.0)) {
        return Err(Error::InsufficientData("zero or non-finite discrepancy".into()));
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.r.ln(), r.abs_diff().ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ConvergenceReport {
        slope,
        intercept,
        residual,
        window,
        pass: slope >= window.0 && slope <= window.1,
    })
}

/// Builds the global field for the scenario.
pub fn build_field(sc: &Scenario, an: &Analysis, taper: Option<f64>) -> Result<DeformationField> {
    let prm = crate::surface::SurfaceParams { taper, ..sc.surface_params() };
    build_global_field(&an.model, &an.bridges, sc.direction, &an.points, sc.window, &prm)
        .map_err(|e| e.in_scenario("surface"))
}

/// Numeric integrals on `field` against the assembled asymptotics.
pub fn compare(sc: &Scenario, an: &Analysis, field: &DeformationField) -> Result<Vec<ComparisonRow>> {
    let xs: Vec<_> = sc.r_values.iter().map(|r| [r * sc.direction[0], r * sc.direction[1]]).collect();
    let num = integrate_on_surface(&an.model, field, &xs, 0.0, &an.bridges).map_err(|e| e.in_scenario("integration"))?;
    sc.r_values
        .iter()
        .zip(&xs)
        .zip(&num)
        .map(|((r, x), q)| {
            Ok(ComparisonRow {
                r: *r,
                numeric: q.value,
                asymptotic: far_field(&an.contributions, *x).map_err(|e| e.in_scenario("asymptotics"))?,
            })
        })
        .collect()
}

/// Flat-plane integral at `κ` against the tapered deformed integral at the same `κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub kappa: f64,
    pub r: f64,
    pub flat: C64,
    pub surface: C64,
    pub tail: f64,
}

/// Width over which the reference field is tapered to the real plane.
pub const REFERENCE_TAPER: f64 = 1.0;

pub fn reference_rows(sc: &Scenario, an: &Analysis) -> Result<Vec<ReferenceRow>> {
    if sc.kappa.is_empty() {
        return Ok(Vec::new());
    }
    let field = build_field(sc, an, Some(REFERENCE_TAPER))?;
    let xs: Vec<_> = sc.r_values.iter().map(|r| [r * sc.direction[0], r * sc.direction[1]]).collect();
    let cfg = QuadratureConfig { window: field.window, n1: field.n1, n2: field.n2 };
    let mut rows = Vec::new();
    for &k in &sc.kappa {
        let flat = integrate_reference(&an.model, k, &xs, &cfg).map_err(|e| e.in_scenario(format!("reference kappa={k}")))?;
        let surf = integrate_on_surface(&an.model, &field, &xs, k, &an.bridges)
            .map_err(|e| e.in_scenario(format!("reference kappa={k}")))?;
        for ((r, f), s) in sc.r_values.iter().zip(&flat).zip(&surf) {
            rows.push(ReferenceRow { kappa: k, r: *r, flat: f.value, surface: s.value, tail: f.tail_estimate });
        }
    }
    Ok(rows)
}

pub fn write_reference_csv<W: std::io::Write>(rows: &[ReferenceRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["kappa", "r", "re_flat", "im_flat", "re_surface", "im_surface", "abs_diff", "flat_tail"])?;
    for r in rows {
        wr.write_record([
            num(r.kappa),
            num(r.r),
            num(r.flat.re),
            num(r.flat.im),
            num(r.surface.re),
            num(r.surface.im),
            num((r.flat - r.surface).norm()),
            num(r.tail),
        ])?;
    }
    Ok(wr.flush()?)
}

/// A named pass/fail outcome of a validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Outcome of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub analysis: Analysis,
    pub field_report: Option<FieldReport>,
    pub comparison: Vec<ComparisonRow>,
    pub convergence: Option<ConvergenceReport>,
    pub reference: Vec<ReferenceRow>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn create(out: &Path, name: &str, artifacts: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let p = out.join(name);
    let f = File::create(&p)?;
    artifacts.push(p);
    Ok(BufWriter::new(f))
}

/// Writes one `trace_<id>.csv` per component.
pub fn write_traces(sc: &Scenario, model: &WaveFunctionModel, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::new();
    for c in &model.components {
        let tr = trace_real_curves(c, &sc.classify_window, sc.trace_cell).map_err(|e| e.in_scenario(format!("trace {}", c.id)))?;
        tr.write_csv(create(out, &format!("trace_{}.csv", c.id), &mut paths)?)?;
    }
    Ok(paths)
}

pub fn write_bridges(an: &Analysis, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(out, "bridges.csv", artifacts)?);
    wr.write_record(["component", "s"])?;
    for c in &an.model.components {
        wr.write_record([c.id.clone(), an.bridges.get(&c.id)?.to_string()])?;
    }
    Ok(wr.flush()?)
}

pub fn write_analysis(sc: &Scenario, an: &Analysis, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    write_bridges(an, out, artifacts)?;
    write_classification_csv(&an.points, &an.model, create(out, "classification.csv", artifacts)?)?;
    write_expansion_csv(&an.contributions, sc.direction, create(out, "expansion.csv", artifacts)?)?;
    let mut wr = csv::Writer::from_writer(create(out, "asymptotic.csv", artifacts)?);
    wr.write_record(["r", "re_asymptotic", "im_asymptotic"])?;
    for r in &sc.r_values {
        let v = far_field(&an.contributions, [r * sc.direction[0], r * sc.direction[1]])?;
        wr.write_record([num(*r), num(v.re), num(v.im)])?;
    }
    Ok(wr.flush()?)
}

pub fn write_field_report(rep: &FieldReport, w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "pass = {}", rep.pass)?;
    writeln!(w, "max_eta = {:e}", rep.max_eta)?;
    writeln!(w, "max_slope = {:e}", rep.max_slope)?;
    for (e, c) in &rep.min_clearance {
        writeln!(w, "min_clearance[{e}] = {c:e}")?;
    }
    writeln!(w, "enclosed_zeros = {}", rep.enclosed_zeros)?;
    writeln!(w, "max_branch_jump = {:e}", rep.max_branch_jump)?;
    writeln!(w, "max_exterior_decay = {:e}", rep.max_exterior_decay)?;
    writeln!(w, "bridge_agreement = {}/{}", rep.bridge_agree, rep.bridge_total)?;
    for f in &rep.failures {
        writeln!(w, "failure: {f}")?;
    }
    Ok(())
}

/// Field construction, verification and exports.
pub fn run_surface(sc: &Scenario, an: &Analysis, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<(DeformationField, FieldReport)> {
    let field = build_field(sc, an, None)?;
    let rep = verify_field(&field, &an.model, &an.bridges, sc.direction)?;
    field.write_csv(create(out, "field.csv", artifacts)?)?;
    field.write_decay_csv(sc.direction, create(out, "decay.csv", artifacts)?)?;
    write_field_report(&rep, &mut create(out, "surface_report.txt", artifacts)?)?;
    Ok((field, rep))
}

/// Checks applied to a comparison table.
pub fn comparison_checks(sc: &Scenario, rows: &[ComparisonRow]) -> (Vec<Check>, Option<ConvergenceReport>) {
    let mut checks = Vec::new();
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.r.total_cmp(&b.r));
    if let Some(first) = sorted.first() {
        checks.push(Check {
            name: "first_relative_discrepancy".into(),
            pass: first.rel_diff() <= sc.check.max_rel_first,
            detail: format!("r = {}: {:.4} (limit {})", first.r, first.rel_diff(), sc.check.max_rel_first),
        });
    }
    let monotone = sorted.windows(2).all(|w| w[1].rel_diff() < w[0].rel_diff());
    checks.push(Check {
        name: "relative_discrepancy_tightens".into(),
        pass: monotone,
        detail: sorted.iter().map(|r| format!("{:.3e}", r.rel_diff())).collect::<Vec<_>>().join(", "),
    });
    let conv = match convergence_report(rows, (sc.check.slope_min, sc.check.slope_max)) {
        Ok(c) => {
            checks.push(Check {
                name: "discrepancy_slope".into(),
                pass: c.pass,
                detail: format!("{:.3} in [{}, {}]", c.slope, c.window.0, c.window.1),
            });
            Some(c)
        }
        Err(e) => {
            checks.push(Check { name: "discrepancy_slope".into(), pass: false, detail: e.to_string() });
            None
        }
    };
    (checks, conv)
}

pub fn write_convergence(c: &ConvergenceReport, w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "slope = {:.6}", c.slope)?;
    writeln!(w, "intercept = {:.6}", c.intercept)?;
    writeln!(w, "residual = {:.6}", c.residual)?;
    writeln!(w, "window = [{}, {}]", c.window.0, c.window.1)?;
    writeln!(w, "pass = {}", c.pass)?;
    Ok(())
}

/// Runs the full pipeline and writes every artifact into `out`.
pub fn run_scenario(sc: &Scenario, out: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out)?;
    let an = analyse(sc)?;
    let mut artifacts = write_traces(sc, &an.model, out)?;
    write_analysis(sc, &an, out, &mut artifacts)?;
    let mut summary = RunSummary {
        analysis: an,
        field_report: None,
        comparison: Vec::new(),
        convergence: None,
        reference: Vec::new(),
        checks: Vec::new(),
        artifacts: Vec::new(),
    };
    if sc.integrate {
        let (field, rep) = run_surface(sc, &summary.analysis, out, &mut artifacts)?;
        summary.checks.push(Check {
            name: "surface_verification".into(),
            pass: rep.pass,
            detail: if rep.pass { "all invariants hold".into() } else { rep.failures.join("; ") },
        });
        if !rep.pass {
            // Integration presupposes a verified surface.
            summary.field_report = Some(rep);
            summary.artifacts = artifacts;
            return Ok(summary);
        }
        let rows = compare(sc, &summary.analysis, &field)?;
        write_comparison_csv(&rows, create(out, "comparison.csv", &mut artifacts)?)?;
        if let Some(r0) = sc.r_values.first() {
            let x = [r0 * sc.direction[0], r0 * sc.direction[1]];
            write_integrand_heatmap(&summary.analysis.model, &field, x, &summary.analysis.bridges, create(out, "integrand.csv", &mut artifacts)?)?;
        }
        let (checks, conv) = comparison_checks(sc, &rows);
        summary.checks.extend(checks);
        if let Some(c) = &conv {
            write_convergence(c, &mut create(out, "convergence.txt", &mut artifacts)?)?;
        }
        summary.field_report = Some(rep);
        summary.comparison = rows;
        summary.convergence = conv;
        summary.reference = reference_rows(sc, &summary.analysis)?;
        if !summary.reference.is_empty() {
            write_reference_csv(&summary.reference, create(out, "reference.csv", &mut artifacts)?)?;
        }
    }
    summary.artifacts = artifacts;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_scenario;

    fn rows(ds: &[(f64, f64)]) -> Vec<ComparisonRow> {
        ds.iter()
            .map(|(r, d)| ComparisonRow { r: *r, numeric: C64::new(1.0 + d, 0.0), asymptotic: C64::new(1.0, 0.0) })
            .collect()
    }

    #[test]
    fn exact_power_law_slope() {
        let data: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0].iter().map(|r| (*r, 0.3 / (r * r))).collect();
        let c = convergence_report(&rows(&data), (-2.6, -1.4)).unwrap();
        assert!((c.slope + 2.0).abs() < 1e-9);
        assert!(c.residual < 1e-9);
        assert!(c.pass);
    }

    #[test]
    fn convergence_needs_data() {
        let e = convergence_report(&rows(&[(2.0, 0.1), (4.0, 0.01), (8.0, 0.001)]), (-3.0, -1.0)).unwrap_err();
        assert!(matches!(e, Error::InsufficientData(_)));
        let e = convergence_report(&rows(&[(2.0, 0.1), (3.0, 0.01), (4.0, 0.001), (5.0, 1e-4)]), (-3.0, -1.0)).unwrap_err();
        assert!(matches!(e, Error::InsufficientData(_)));
    }

    #[test]
    fn comparison_csv_round_trip() {
        let r = vec![ComparisonRow { r: 2.5, numeric: C64::new(1.25, -3.0), asymptotic: C64::new(0.1, 1e-30) }];
        let mut buf = Vec::new();
        write_comparison_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("r,re_numeric,im_numeric,re_asymptotic,im_asymptotic,abs_diff,rel_diff\n"));
        assert_eq!(read_comparison_csv(&buf[..]).unwrap(), r);
    }

    #[test]
    fn circle_runs_without_integration() {
        let dir = tempfile::tempdir().unwrap();
        let sc = builtin_scenario("circle").unwrap();
        let s = run_scenario(&sc, dir.path()).unwrap();
        assert!(s.passed());
        assert!(dir.path().join("trace_c.csv").exists());
        assert!(dir.path().join("classification.csv").exists());
        assert!(!dir.path().join("comparison.csv").exists());
        // Inward normal: s = +1 is the "below in e_ξ₁" bypass at (1, 0).
        assert_eq!(s.analysis.bridges.get("c").unwrap(), 1);
    }

    #[test]
    fn runs_are_byte_identical() {
        let mut sc = builtin_scenario("three_lines").unwrap();
        sc.grid = 200;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = run_scenario(&sc, a.path()).unwrap();
        run_scenario(&sc, b.path()).unwrap();
        assert!(sa.artifacts.len() >= 10);
        for p in &sa.artifacts {
            let name = p.file_name().unwrap();
            assert_eq!(std::fs::read(p).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name:?}");
        }
    }
}
