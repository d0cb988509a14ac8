//! Deterministic artifact writing: RFC-4180 CSV with a mandatory header row
//! and floats at 17 significant digits, pretty JSON reports, and the run
//! manifest that references every emitted file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::RunError;

/// 17 significant digits, round-trippable.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub struct RunWriter {
    dir: PathBuf,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    pub stages: Vec<(String, f64)>,
    stage_start: Option<(String, Instant)>,
}

impl RunWriter {
    pub fn new(dir: &Path, seed: u64) -> Result<Self, RunError> {
        fs::create_dir_all(dir)
            .map_err(|e| RunError::numerical(format!("cannot create {dir:?}: {e}")))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            seed,
            artifacts: Vec::new(),
            warnings: Vec::new(),
            stages: Vec::new(),
            stage_start: None,
        })
    }

    pub fn begin_stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.to_string(), Instant::now()));
    }

    pub fn end_stage(&mut self) {
        if let Some((name, t0)) = self.stage_start.take() {
            self.stages.push((name, t0.elapsed().as_secs_f64()));
        }
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// Writes a CSV file; `rows` are pre-formatted fields (no quoting needed
    /// for the numeric/identifier payloads this tool emits).
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path)
            .map_err(|e| RunError::numerical(format!("cannot write {path:?}: {e}")))?;
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push_str("\r\n");
        for row in rows {
            buf.push_str(&row.join(","));
            buf.push_str("\r\n");
        }
        f.write_all(buf.as_bytes())
            .map_err(|e| RunError::numerical(format!("write {path:?}: {e}")))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| RunError::numerical(format!("serialize {name}: {e}")))?;
        fs::write(&path, text.as_bytes())
            .map_err(|e| RunError::numerical(format!("write {path:?}: {e}")))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Two-column gnuplot-style data file, whitespace separated, sorted by
    /// the first column.
    pub fn write_plot_data(
        &mut self,
        name: &str,
        mut points: Vec<(f64, f64)>,
    ) -> Result<(), RunError> {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        let path = self.dir.join(name);
        let mut buf = String::new();
        for (x, y) in points {
            buf.push_str(&format!("{} {}\n", fmt_float(x), fmt_float(y)));
        }
        fs::write(&path, buf.as_bytes())
            .map_err(|e| RunError::numerical(format!("write {path:?}: {e}")))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest (always `manifest.json`; wall-clock timings make
    /// this the one non-reproducible artifact).
    pub fn write_manifest(&mut self, config_echo: &serde_json::Value) -> Result<(), RunError> {
        self.end_stage();
        #[derive(Serialize)]
        struct Manifest<'a> {
            config: &'a serde_json::Value,
            version: &'a str,
            seed: u64,
            stages: Vec<StageTime<'a>>,
            warnings: &'a [String],
            artifacts: &'a [String],
        }
        #[derive(Serialize)]
        struct StageTime<'a> {
            name: &'a str,
            wall_seconds: f64,
        }
        let manifest = Manifest {
            config: config_echo,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            stages: self
                .stages
                .iter()
                .map(|(n, t)| StageTime { name: n, wall_seconds: *t })
                .collect(),
            warnings: &self.warnings,
            artifacts: &self.artifacts,
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| RunError::numerical(format!("serialize manifest: {e}")))?;
        fs::write(&path, text.as_bytes())
            .map_err(|e| RunError::numerical(format!("write {path:?}: {e}")))?;
        Ok(())
    }
}
