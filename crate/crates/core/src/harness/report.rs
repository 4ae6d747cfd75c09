//! Writes scenario results: CSV logs plus a `summary.txt` per run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::{ScenarioKind, TrialConfig};
use super::log::write_log;
use super::scenarios::{
    run_calibration, run_dynamic_trial, run_human_trial, run_recovery_demo, run_static_trial, run_tune,
};

/// Key/value lines of a run summary and the files written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub lines: Vec<(String, String)>,
    pub files: Vec<PathBuf>,
}

impl Summary {
    fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }
}

fn csv_rows<T: serde::Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Log(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Log(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Compact label for file names: 1.5 → "1p5".
fn label(x: f64) -> String {
    format!("{x}").replace('.', "p").replace('-', "m")
}

fn cm(x: f64) -> String {
    format!("{:.4}", 100.0 * x)
}

/// Runs `cfg.scenario` and writes its outputs under `cfg.output`.
pub fn execute(cfg: &TrialConfig) -> Result<Summary> {
    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sum = Summary::default();
    sum.push("scenario", cfg.scenario.as_str());
    sum.push("seed", cfg.seed);
    let params = cfg.calibrated_params()?;
    sum.push("coupling_Kd", format!("{:.6e}", params.coupling_kd));

    match cfg.scenario {
        ScenarioKind::Static => {
            let rep = run_static_trial(cfg)?;
            let path = dir.join("static.csv");
            csv_rows(&rep.rows, &path)?;
            sum.files.push(path);
            sum.push("peak_force_N", format!("{:.4}", rep.peak_force));
            sum.push("peak_offset_cm", cm(rep.peak_offset));
            sum.push("detach_weight_kg", rep.detach_weight.map_or("none".into(), |w| format!("{w:.3}")));
            let attached = rep.rows.iter().filter(|r| r.state != "detached").map(|r| r.offset.abs());
            sum.push("max_offset_cm", cm(attached.fold(0.0, f64::max)));
        }
        ScenarioKind::Dynamic => {
            let rep = run_dynamic_trial(cfg)?;
            #[derive(serde::Serialize)]
            struct Peak {
                speed_rpm: f64,
                weight_kg: f64,
                peak_offset: f64,
                detached: bool,
            }
            let mut peaks = Vec::new();
            for c in &rep.cells {
                let path = dir.join(format!("dynamic_{}rpm_{}kg.csv", label(c.speed_rpm), label(c.weight_kg)));
                write_log(&c.run.records(None), &path)?;
                sum.files.push(path);
                peaks.push(Peak {
                    speed_rpm: c.speed_rpm,
                    weight_kg: c.weight_kg,
                    peak_offset: c.peak_offset,
                    detached: c.detached,
                });
            }
            let path = dir.join("dynamic_peaks.csv");
            csv_rows(&peaks, &path)?;
            sum.files.push(path);
            if let Some(m) = rep.max_cell() {
                sum.push("max_offset_cm", cm(m.peak_offset));
                sum.push("max_offset_cell", format!("{} rpm, {} kg", m.speed_rpm, m.weight_kg));
            }
            sum.push("detached_cells", rep.cells.iter().filter(|c| c.detached).count());
        }
        ScenarioKind::Human => {
            let rep = run_human_trial(cfg)?;
            for (i, mode) in rep.run.modes.iter().enumerate() {
                let path = dir.join(format!("human_{}.csv", mode.as_str()));
                write_log(&rep.run.records(Some(i)), &path)?;
                sum.files.push(path);
            }
            for r in &rep.rmse {
                sum.push(format!("rmse_{}_bottom_cm", r.mode.as_str()), format!("{:.4}", r.bottom_cm));
                sum.push(format!("rmse_{}_top_cm", r.mode.as_str()), format!("{:.4}", r.top_cm));
            }
            sum.push("path_length_m", format!("{:.4}", rep.path_length));
            sum.push("max_offset_cm", cm(rep.max_offset));
            sum.push("cov_max_asymmetry", format!("{:.3e}", rep.run.health.max_asymmetry));
            sum.push("cov_min_eigenvalue", format!("{:.3e}", rep.run.health.min_eigenvalue));
        }
        ScenarioKind::Recovery => {
            let rep = run_recovery_demo(cfg)?;
            for (name, r) in [("on", &rep.with_recovery), ("off", &rep.without_recovery)] {
                let path = dir.join(format!("recovery_{name}.csv"));
                write_log(&r.run.records(Some(0)), &path)?;
                sum.files.push(path);
                sum.push(format!("recovery_{name}_max_offset_cm"), cm(r.max_offset));
                sum.push(format!("recovery_{name}_final_state"), r.final_state.as_str());
                sum.push(format!("recovery_{name}_ever_detached"), r.ever_detached);
                sum.push(format!("recovery_{name}_activations"), r.activations);
                sum.push(
                    format!("recovery_{name}_settle_after_pulse_s"),
                    r.settle_after_pulse.map_or("never".into(), |s| format!("{s:.3}")),
                );
            }
            sum.push("threshold_cm", cm(rep.threshold));
            sum.push("peak_offset_cm", cm(rep.peak_offset));
        }
        ScenarioKind::Tune => {
            let rep = run_tune(cfg)?;
            #[derive(serde::Serialize)]
            struct Point {
                q_position: f64,
                q_velocity: f64,
                r_scale: f64,
                score: f64,
            }
            let rows: Vec<Point> = rep
                .table
                .iter()
                .map(|&(q_position, q_velocity, r_scale, score)| Point { q_position, q_velocity, r_scale, score })
                .collect();
            let path = dir.join("tune_table.csv");
            csv_rows(&rows, &path)?;
            sum.files.push(path);
            let path = dir.join("tuned.cfg");
            rep.tuned.save(&path)?;
            sum.files.push(path);
            sum.push("score_cm", cm(rep.score));
            sum.push("q_position", format!("{:e}", rep.tuned.noise.q_position));
            sum.push("q_velocity", format!("{:e}", rep.tuned.noise.q_velocity));
        }
    }
    finish(dir, sum)
}

/// Calibrates `coupling_Kd` and writes the resulting config.
pub fn execute_calibration(cfg: &TrialConfig) -> Result<Summary> {
    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (out, params) = run_calibration(cfg)?;
    let mut sum = Summary::default();
    let path = dir.join("calibrated.cfg");
    out.save(&path)?;
    sum.files.push(path);
    sum.push("scenario", "calibrate");
    sum.push("target_detach_kg", cfg.calibration.target_detach_kg);
    sum.push("coupling_Kd", format!("{:.6e}", params.coupling_kd));
    let peak = crate::physics::restoring_peak(&params);
    sum.push("peak_force_N", format!("{:.4}", peak.force));
    sum.push("peak_offset_cm", cm(peak.offset));
    finish(dir, sum)
}

fn finish(dir: &Path, mut sum: Summary) -> Result<Summary> {
    let path = dir.join("summary.txt");
    sum.files.push(path.clone());
    fs::write(&path, sum.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(sum)
}
