//! CSV rendering and atomic file output.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::conjugacy::ConjugacyEvaluator;
use crate::experiments::{ErrorSample, HistogramBin, RateReport};
use crate::offspring::AssumptionReport;
use crate::simulate::CoupledPath;

pub const ERRORS_HEADER: &str = "K,replicate,w_hat,zbar,error_new,error_legacy,extinct,y_extinct";
pub const RATE_HEADER: &str = "K,level,scope,count,abs_error_new,abs_error_legacy,undersampled";
pub const HISTOGRAM_HEADER: &str = "K,lower,upper,count";
pub const CONJUGACY_HEADER: &str = "x,H,H',H'',residual";
pub const SIMULATE_HEADER: &str = "replicate,n,Z,Y,Zbar,Ybar";

pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || x.is_nan() || x.is_infinite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn errors_csv(samples: &[ErrorSample]) -> String {
    let mut out = String::with_capacity(64 * samples.len() + 80);
    out.push_str(ERRORS_HEADER);
    out.push('\n');
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.k,
            s.replicate,
            num(s.w_hat),
            num(s.zbar),
            num(s.error_new),
            num(s.error_legacy),
            s.extinct,
            s.y_extinct
        )
        .unwrap();
    }
    out
}

/// Quantile table preceded by one `#` comment line per slope fit.
pub fn rate_report_csv(report: &RateReport) -> String {
    let mut out = String::new();
    for s in &report.slopes {
        write!(out, "# slope scope={} level={} arm={}", s.scope.label(), num(s.level), s.arm.label()).unwrap();
        match (&s.fit, &s.flag) {
            (Some(fit), _) => writeln!(out, " slope={} se={}", num(fit.slope), num(fit.slope_se)),
            (None, Some(flag)) => writeln!(out, " undefined ({flag})"),
            (None, None) => writeln!(out, " undefined"),
        }
        .unwrap();
    }
    out.push_str(RATE_HEADER);
    out.push('\n');
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            num(r.level),
            r.scope.label(),
            r.count,
            num(r.abs_error_new),
            num(r.abs_error_legacy),
            r.undersampled
        )
        .unwrap();
    }
    out
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from(HISTOGRAM_HEADER);
    out.push('\n');
    for b in bins {
        writeln!(out, "{},{},{},{}", b.k, num(b.lower), num(b.upper), b.count).unwrap();
    }
    out
}

pub fn conjugacy_csv(evaluator: &ConjugacyEvaluator) -> String {
    let mut out = String::from(CONJUGACY_HEADER);
    out.push('\n');
    for i in 0..evaluator.grid().len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            num(evaluator.grid()[i]),
            num(evaluator.h_values()[i]),
            num(evaluator.h_prime_values()[i]),
            num(evaluator.h_second_values()[i]),
            num(evaluator.residuals()[i])
        )
        .unwrap();
    }
    out
}

/// One row per `(replicate, n)`; `paths[r]` is replicate `r`.
pub fn simulate_csv(paths: &[CoupledPath]) -> String {
    let mut out = String::from(SIMULATE_HEADER);
    out.push('\n');
    for (r, p) in paths.iter().enumerate() {
        for n in 0..=p.steps() {
            writeln!(out, "{r},{n},{},{},{},{}", p.z[n], p.y[n], num(p.zbar(n)), num(p.ybar(n))).unwrap();
        }
    }
    out
}

pub fn validate_csv(report: &AssumptionReport) -> String {
    let mut out = String::from("quantity,value\n");
    for (k, v) in validate_fields(report) {
        writeln!(out, "{k},{v}").unwrap();
    }
    out
}

/// Aligned `name  value` lines.
pub fn validate_text(report: &AssumptionReport) -> String {
    let fields = validate_fields(report);
    let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in fields {
        writeln!(out, "{k:<width$}  {v}").unwrap();
    }
    out
}

fn validate_fields(r: &AssumptionReport) -> Vec<(&'static str, String)> {
    vec![
        ("grid_points", r.grid.len().to_string()),
        ("grid_max", num(*r.grid.last().unwrap_or(&0.0))),
        ("t_max", r.t_max.to_string()),
        ("tol", num(r.tol)),
        ("a1_ok", r.a1_ok.to_string()),
        ("a1_worst_violation", num(r.a1_worst_violation)),
        ("a2_lipschitz_estimate", num(r.a2_lipschitz_estimate)),
        ("a3_ok", r.a3_ok.to_string()),
        ("f_prime_at_zero", num(r.f_prime_at_zero)),
        ("f_prime_sup", num(r.f_prime_sup)),
        ("f_second_sup", num(r.f_second_sup)),
    ]
}

/// Writes `contents` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
