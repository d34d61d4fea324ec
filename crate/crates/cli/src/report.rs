//! Run reports and the files derived from them.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use parastab::oracle::{DecayReport, OracleMethod, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig, SweepTarget};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Feasible => "feasible",
            Verdict::Infeasible => "infeasible",
            Verdict::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub grid_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub verdict: Verdict,
    /// Best common block margin (absent when no finite margin was reached).
    pub margin: Option<f64>,
    pub iterations: usize,
    pub wall_time: f64,
    pub blocks: usize,
    pub variables: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub theorem: Method,
    pub margin_eps: f64,
    pub gamma: f64,
    pub overshoot_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseSummary {
    pub samples: usize,
    pub worst_coefficient_margin: f64,
    pub worst_poincare_margin: f64,
    pub violations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub grid_n: usize,
    pub param: String,
    pub target: SweepTarget,
    /// Largest value with a positive verdict; absent when the lower end of
    /// the bracket already fails.
    pub b_max: Option<f64>,
    pub probes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub grid_points: usize,
    pub stable: bool,
    pub decay_estimate: f64,
    pub method: OracleMethod,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    #[serde(default)]
    pub probes: Vec<ProbeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointwise: Option<PointwiseSummary>,
    #[serde(default)]
    pub thresholds: Vec<ThresholdRow>,
    #[serde(default)]
    pub oracle: Vec<OracleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayReport>,
    #[serde(default)]
    pub timings: Timings,
}

impl RunReport {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            probes: Vec::new(),
            certificate: None,
            pointwise: None,
            thresholds: Vec::new(),
            oracle: Vec::new(),
            trajectory: None,
            decay: None,
            timings: Timings::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Report(e.to_string()))
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for p in &self.probes {
            let at = match (&p.param, p.value) {
                (Some(name), Some(v)) => format!(" {name}={v}"),
                _ => String::new(),
            };
            let margin = p
                .margin
                .map(|m| format!("{m:.3e}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "N={}{at}: {} (margin {margin}, {} iterations, {:.2}s)",
                p.grid_n,
                p.verdict.as_str(),
                p.iterations,
                p.wall_time
            );
        }
        if let Some(c) = &self.certificate {
            let _ = writeln!(
                out,
                "certificate: eps={:.4e} gamma={:.4e} M={:.4}",
                c.margin_eps, c.gamma, c.overshoot_m
            );
        }
        if let Some(pw) = &self.pointwise {
            let _ = writeln!(
                out,
                "pointwise check: {} samples, {} violations, worst margins {:.3e} / {:.3e}",
                pw.samples, pw.violations, pw.worst_coefficient_margin, pw.worst_poincare_margin
            );
        }
        for o in &self.oracle {
            let at = o.value.map(|v| format!(" at {v}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "oracle{at}: {} (rate {:.4}, G={}, {:?})",
                if o.stable { "stable" } else { "unstable" },
                o.decay_estimate,
                o.grid_points,
                o.method
            );
        }
        if let Some(d) = &self.decay {
            let _ = writeln!(
                out,
                "Lyapunov decay: {} ({} points)",
                if d.passed() { "ok" } else { "violated" },
                d.checked
            );
        }
        for t in &self.thresholds {
            let b = t
                .b_max
                .map(|b| format!("{b:.4}"))
                .unwrap_or_else(|| "infeasible".into());
            let _ = writeln!(out, "threshold N={} {}_max = {b}", t.grid_n, t.param);
        }
        let _ = writeln!(out, "total time {:.2}s", self.timings.total_seconds);
        out
    }

    /// `N,b_max` rows: one per threshold, or one for a single analysis.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("N,b_max\n");
        if !self.thresholds.is_empty() {
            for t in &self.thresholds {
                let b = t
                    .b_max
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "infeasible".into());
                let _ = writeln!(out, "{},{b}", t.grid_n);
            }
        } else if let Some(p) = self.probes.first() {
            let value = p.value.or_else(|| {
                let name = self
                    .config
                    .sweep
                    .as_ref()
                    .map(|s| s.param.as_str())
                    .unwrap_or("b");
                self.config.problem.params.get(name).copied()
            });
            let b = match (p.verdict, value) {
                (Verdict::Feasible, Some(v)) => v.to_string(),
                (Verdict::Feasible, None) => "feasible".into(),
                _ => "infeasible".into(),
            };
            let _ = writeln!(out, "{},{b}", p.grid_n);
        }
        out
    }

    /// One row per probe.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("N,param,value,verdict,margin,iterations,wall_time\n");
        for p in &self.probes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.4}",
                p.grid_n,
                p.param.as_deref().unwrap_or(""),
                p.value.map(|v| v.to_string()).unwrap_or_default(),
                p.verdict.as_str(),
                p.margin.map(|m| format!("{m:e}")).unwrap_or_default(),
                p.iterations,
                p.wall_time
            );
        }
        out
    }

    /// Plot data: `name.dat` with whitespace-separated columns.
    pub fn plot_files(&self) -> Vec<(String, String)> {
        let mut files = Vec::new();
        if !self.thresholds.is_empty() {
            let mut s = String::from("# N b_max\n");
            for t in self.thresholds.iter().filter(|t| t.b_max.is_some()) {
                let _ = writeln!(s, "{} {}", t.grid_n, t.b_max.unwrap_or(f64::NAN));
            }
            files.push(("thresholds.dat".into(), s));
        }
        let swept: Vec<&ProbeRecord> = self.probes.iter().filter(|p| p.value.is_some()).collect();
        if !swept.is_empty() {
            let mut s = String::from("# N value feasible margin\n");
            for p in swept {
                let _ = writeln!(
                    s,
                    "{} {} {} {}",
                    p.grid_n,
                    p.value.unwrap_or(f64::NAN),
                    u8::from(p.verdict == Verdict::Feasible),
                    p.margin.unwrap_or(f64::NAN)
                );
            }
            files.push(("probes.dat".into(), s));
        }
        if let Some(tr) = &self.trajectory {
            let mut s = String::from("# t norm V\n");
            for p in &tr.points {
                let _ = writeln!(s, "{:e} {:e} {:e}", p.t, p.norm, p.v.unwrap_or(f64::NAN));
            }
            files.push(("trajectory.dat".into(), s));
        }
        files
    }
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

/// Emits CSV tables and plot data derived from a report into `outdir`.
pub fn emit_files(report: &RunReport, outdir: &Path) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<(), CliError> {
        write_atomic(&outdir.join(name), text)?;
        written.push(name.to_string());
        Ok(())
    };
    put("table.csv", &report.table_csv())?;
    put("summary.csv", &report.summary_csv())?;
    if let Some(tr) = &report.trajectory {
        put("trajectory.csv", &tr.to_csv())?;
    }
    for (name, text) in report.plot_files() {
        put(&name, &text)?;
    }
    Ok(written)
}
