//! Plain-text and image artifacts: CSV series, 8-bit PGM fields and the
//! on-disk bundle of a design run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::design::DesignResult;
use crate::error::{Error, Result};

/// Fixed 17-significant-digit scientific notation; round-trips every f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `git describe`-style version of this binary.
pub fn version_string() -> String {
    match option_env!("NOISEDESIGN_GIT_REV") {
        Some(rev) if !rev.is_empty() => format!("noisedesign {} ({rev})", env!("CARGO_PKG_VERSION")),
        _ => format!("noisedesign {}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Column-oriented CSV with a header row. All columns must be equally long
/// and finite.
pub fn csv_string(names: &[&str], columns: &[&[f64]]) -> Result<String> {
    if names.len() != columns.len() || names.is_empty() {
        return Err(Error::contract("one header name per column"));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::contract("CSV columns differ in length"));
    }
    if let Some(v) = columns.iter().flat_map(|c| c.iter()).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("CSV value {v}")));
    }
    let mut s = names.join(",");
    s.push('\n');
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| fmt_f64(c[i])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn export_curve(path: &Path, names: &[&str], columns: &[&[f64]]) -> Result<()> {
    write_text(path, &csv_string(names, columns)?)
}

/// `[0, 1] → [0, 255]`, rounded, clamped.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (P5) of a row-major `height × width` field.
pub fn export_image(path: &Path, field: &[f64], height: usize, width: usize) -> Result<()> {
    if field.len() != height * width {
        return Err(Error::Shape {
            op: "export_image".into(),
            expected: vec![height, width],
            got: vec![field.len()],
        });
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image field".into()));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(field.iter().map(|&v| quantize(v)));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads back a P5 file written by [`export_image`]: `(height, width, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format {
                offset: pos,
                msg: "truncated PGM header".into(),
            });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let bad = |msg: &str| Error::Format {
        offset: 0,
        msg: msg.into(),
    };
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P5 image"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = bytes.get(pos..).unwrap_or(&[]).to_vec();
    if data.len() != width * height {
        return Err(Error::Format {
            offset: pos,
            msg: format!("{} pixel bytes for a {width}×{height} image", data.len()),
        });
    }
    Ok((height, width, data))
}

/// Per-stage traces, final fields and a summary for a finished design run.
/// `side` is the image side; `wall_seconds` goes into the summary.
pub fn write_design_bundle(dir: &Path, result: &DesignResult, side: Option<usize>, wall_seconds: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "version={}", version_string());
    let _ = writeln!(summary, "final_loss={}", fmt_f64(result.final_loss));
    let _ = writeln!(summary, "initial_loss={}", fmt_f64(result.initial_loss()));
    let _ = writeln!(summary, "binarization={}", fmt_f64(result.binarization));
    let _ = writeln!(summary, "wall_seconds={wall_seconds:.3}");
    for (k, st) in result.stages.iter().enumerate() {
        let its: Vec<f64> = (0..st.trace.losses.len()).map(|i| i as f64).collect();
        export_curve(
            &dir.join(format!("stage_{k}.csv")),
            &["iteration", "loss", "grad_norm_inf"],
            &[&its, &st.trace.losses, &st.trace.grad_norms],
        )?;
        let _ = writeln!(
            summary,
            "stage_{k}: gamma={} iterations={} evaluations={} loss={} stop={} w_norm2_per_dim={} w_excess_kurtosis={}{}",
            st.gamma,
            st.trace.iterations(),
            st.trace.evaluations,
            fmt_f64(st.trace.final_loss()),
            st.trace.stop.name(),
            fmt_f64(st.health.norm2_per_dim),
            st.health.excess_kurtosis,
            st.aborted.as_deref().map(|m| format!(" aborted=\"{m}\"")).unwrap_or_default()
        );
    }
    export_curve(&dir.join("w_opt.csv"), &["w"], &[&result.w])?;
    export_curve(&dir.join("output.csv"), &["value"], &[&result.fields.output])?;
    let x0 = result.fields.x0.data();
    export_curve(&dir.join("x0.csv"), &["x0"], &[x0])?;
    if !result.fields.theta.is_empty() {
        export_curve(&dir.join("theta.csv"), &["theta"], &[&result.fields.theta])?;
    }
    if let Some(s) = side.filter(|s| s * s == result.fields.density.len()) {
        export_curve(&dir.join("density.csv"), &["density"], &[&result.fields.density])?;
        export_image(&dir.join("density.pgm"), &result.fields.density, s, s)?;
        let unit: Vec<f64> = x0.iter().map(|v| 0.5 * (v + 1.0)).collect();
        export_image(&dir.join("x0.pgm"), &unit, s, s)?;
    }
    write_text(&dir.join("summary.txt"), &summary)
}
