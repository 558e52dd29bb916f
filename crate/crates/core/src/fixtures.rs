//! Golden fixtures: committed configs plus the outputs the pipeline produced
//! from them.
//!
//! Each case directory holds `config.toml`; regeneration writes `data/`
//! (from `simulate`) and `fit/` (from `fit` on the first replicate).
//! [`compare_fixtures`] checks a fresh regeneration against the committed
//! files:
//!
//! | file | fields | tolerance |
//! |---|---|---|
//! | `data/*.csv` | every value | `1e-12` relative to the column's largest magnitude |
//! | `fit/report.toml` | parameter estimates | `1e-6` absolute |
//! | `fit/curve.csv` | every column | `1e-8` relative to the column's largest magnitude |
//! | `fit/ladder.csv` | row count; `rho` | exact count; `1e-12` relative |
//! | `fit/ladder.csv` | parameter columns | `1e-6` absolute |

use std::fmt;
use std::path::{Path, PathBuf};

use crate::cli::commands::{fit, replicate_file_name, simulate, FitReport};
use crate::cli::io::read_numeric_csv;
use crate::cli::RunConfig;
use crate::error::Result;

/// Case directories under the fixture root.
pub const CASES: [&str; 2] = ["noise_free", "sigma05"];

/// Default fixture root of this crate.
pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub file: String,
    pub field: String,
    pub expected: f64,
    pub found: f64,
    pub tolerance: f64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: expected {:e}, found {:e} (tolerance {:e})",
            self.file, self.field, self.expected, self.found, self.tolerance
        )
    }
}

/// Rewrites `data/` and `fit/` of every case from its `config.toml`.
pub fn regenerate_fixtures(root: &Path) -> Result<()> {
    for case in CASES {
        regenerate_case(&root.join(case))?;
    }
    Ok(())
}

fn regenerate_case(dir: &Path) -> Result<()> {
    let cfg = RunConfig::load(&dir.join("config.toml"))?;
    simulate(&cfg, &dir.join("data"))?;
    fit(&cfg, &dir.join("data").join(replicate_file_name(0)), &dir.join("fit"))?;
    Ok(())
}

/// Regenerates every case of `committed` under `scratch` and lists the
/// fields that moved beyond tolerance.
pub fn compare_fixtures(committed: &Path, scratch: &Path) -> Result<Vec<Mismatch>> {
    let mut out = Vec::new();
    for case in CASES {
        let fresh = scratch.join(case);
        std::fs::create_dir_all(&fresh)?;
        std::fs::copy(committed.join(case).join("config.toml"), fresh.join("config.toml"))?;
        regenerate_case(&fresh)?;
        let old = committed.join(case);
        for name in std::fs::read_dir(old.join("data"))? {
            let name = name?.file_name();
            let rel = Path::new("data").join(&name);
            compare_csv(&old, &fresh, &rel, &mut out, |_| Tol::Scaled(1e-12))?;
        }
        compare_csv(&old, &fresh, Path::new("fit/curve.csv"), &mut out, |_| Tol::Scaled(1e-8))?;
        compare_csv(&old, &fresh, Path::new("fit/ladder.csv"), &mut out, |h| {
            if h == "rho" {
                Tol::Relative(1e-12)
            } else if h.starts_with("ci_width") {
                Tol::Skip
            } else {
                Tol::Absolute(1e-6)
            }
        })?;
        let a = FitReport::load(&old.join("fit/report.toml"))?;
        let b = FitReport::load(&fresh.join("fit/report.toml"))?;
        let file = format!("{case}/fit/report.toml");
        if a.parameters.len() != b.parameters.len() {
            out.push(count_mismatch(&file, "parameters", a.parameters.len(), b.parameters.len()));
        }
        for (pa, pb) in a.parameters.iter().zip(&b.parameters) {
            if !((pa.estimate - pb.estimate).abs() <= 1e-6) {
                out.push(Mismatch {
                    file: file.clone(),
                    field: pa.name.clone(),
                    expected: pa.estimate,
                    found: pb.estimate,
                    tolerance: 1e-6,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
enum Tol {
    /// Relative to the largest magnitude in the committed column.
    Scaled(f64),
    /// Relative to each committed value.
    Relative(f64),
    Absolute(f64),
    Skip,
}

fn count_mismatch(file: &str, field: &str, expected: usize, found: usize) -> Mismatch {
    Mismatch {
        file: file.to_string(),
        field: format!("{field} count"),
        expected: expected as f64,
        found: found as f64,
        tolerance: 0.0,
    }
}

fn compare_csv(old: &Path, fresh: &Path, rel: &Path, out: &mut Vec<Mismatch>, tol: impl Fn(&str) -> Tol) -> Result<()> {
    let file = format!("{}/{}", old.file_name().unwrap_or_default().to_string_lossy(), rel.display());
    let (ha, ra) = read_numeric_csv(&old.join(rel))?;
    let (hb, rb) = read_numeric_csv(&fresh.join(rel))?;
    if ha != hb {
        out.push(count_mismatch(&file, "header", ha.len(), hb.len()));
        return Ok(());
    }
    if ra.len() != rb.len() {
        out.push(count_mismatch(&file, "row", ra.len(), rb.len()));
        return Ok(());
    }
    for (j, name) in ha.iter().enumerate() {
        let scale = ra.iter().map(|r| r[j].abs()).filter(|v| v.is_finite()).fold(0.0, f64::max);
        for (i, (a, b)) in ra.iter().zip(&rb).enumerate() {
            let (x, y) = (a[j], b[j]);
            let bound = match tol(name) {
                Tol::Scaled(t) => t * scale,
                Tol::Relative(t) => t * x.abs(),
                Tol::Absolute(t) => t,
                Tol::Skip => continue,
            };
            let same = (x.is_nan() && y.is_nan()) || (x - y).abs() <= bound;
            if !same {
                out.push(Mismatch {
                    file: file.clone(),
                    field: format!("{name}[{i}]"),
                    expected: x,
                    found: y,
                    tolerance: bound,
                });
            }
        }
    }
    Ok(())
}
