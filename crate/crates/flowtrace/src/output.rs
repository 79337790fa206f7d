//! CSV and SVG writers. Every file is written to a temporary sibling and
//! renamed into place.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use flowtrace_core::detection::RocRecord;
use flowtrace_core::engine::ExperimentSummary;

/// Decimal with 12 significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.11e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mant.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

/// Write `bytes` to `path` via temp file + rename in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

pub fn roc_csv(roc: &[RocRecord], detector: &str, scenario_id: &str, seed: u64) -> Vec<u8> {
    csv_bytes(
        &["k", "alpha", "beta", "threshold", "detector", "scenario_id", "seed"],
        |w| {
            for r in roc {
                w.write_record([
                    r.k.to_string(),
                    fmt_sig(r.alpha),
                    fmt_sig(r.beta),
                    fmt_sig(r.threshold),
                    detector.to_string(),
                    scenario_id.to_string(),
                    seed.to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

pub fn ifcurve_csv(s: &ExperimentSummary) -> Vec<u8> {
    csv_bytes(
        &["k", "mean_perstep_kl", "cum_if_lowerbound", "exact_if", "epsilon_bound"],
        |w| {
            for k in 0..=s.horizon {
                w.write_record([
                    k.to_string(),
                    fmt_sig(s.mean_perstep_kl[k]),
                    fmt_sig(s.cum_if_lower_bound[k]),
                    opt(s.exact_if.as_ref().map(|e| e[k])),
                    opt(s.epsilon),
                ])?;
            }
            Ok(())
        },
    )
}

/// Minimal line chart of the information-flow curves.
pub fn ifcurve_svg(s: &ExperimentSummary) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let mut series: Vec<(&str, &str, Vec<f64>)> = vec![
        ("mean per-step KL", "#1f77b4", s.mean_perstep_kl.clone()),
        ("cumulative lower bound", "#ff7f0e", s.cum_if_lower_bound.clone()),
    ];
    if let Some(e) = &s.exact_if {
        series.push(("exact IF", "#2ca02c", e.clone()));
    }
    if let Some(eps) = s.epsilon {
        series.push(("epsilon", "#d62728", vec![eps; s.horizon + 1]));
    }
    let ymax = series
        .iter()
        .flat_map(|(_, _, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let xmax = s.horizon.max(1) as f64;
    let px = |k: usize| PAD + (W - 2.0 * PAD) * k as f64 / xmax;
    let py = |v: f64| H - PAD - (H - 2.0 * PAD) * (v / ymax).clamp(0.0, 1.0);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(out, r#"<text x="{PAD}" y="{}">0</text>"#, H - PAD + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, W - PAD, H - PAD + 16.0, s.horizon);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 4.0, PAD + 4.0, fmt_sig(ymax));
    for (i, (name, color, values)) in series.iter().enumerate() {
        let mut d = String::new();
        for (k, v) in values.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if k == 0 { "M" } else { " L" }, px(k), py(*v));
        }
        let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{name}</text>"#,
            W - PAD
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(fmt_sig(123456.789), "123456.789");
        assert_eq!(fmt_sig(1e-9), "1e-9");
        assert_eq!(fmt_sig(2.5e20), "2.5e20");
        assert_eq!(fmt_sig(0.0274476342059613), "0.027447634206");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
