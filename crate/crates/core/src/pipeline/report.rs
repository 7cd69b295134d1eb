//! Accuracy/objective and hardware-utilization tables for a run directory.

use std::fs;
use std::path::Path;

use super::config::{DeviceSpec, RunConfig};
use super::local_cmd::{SelectionFile, LOCAL_DIR, SELECTION_JSON};
use super::rundir::{read_json, write_atomic, RunLock, CONFIG_COPY};
use super::search::{ParetoFile, PARETO_JSON};
use super::PipelineError;
use crate::estimator::{avg_resource_pct, latency_ns, utilization_pct, DeviceProfile, ResourceEstimate};

pub const REPORT_DIR: &str = "report";

/// `count (pct%)` with the count rounded to an integer and the utilization
/// to one decimal.
pub fn count_with_pct(count: f64, capacity: u64) -> String {
    format!("{:.0} ({:.1}%)", count.round(), utilization_pct(count, capacity))
}

struct ModelRow {
    label: String,
    key: String,
    accuracy: Option<f64>,
    bops: Option<f64>,
    estimate: ResourceEstimate,
}

fn device_of(cfg: &RunConfig) -> Result<DeviceProfile, PipelineError> {
    let d = match &cfg.estimator.device {
        DeviceSpec::Named(n) => DeviceProfile::by_name(n)
            .ok_or_else(|| PipelineError::MissingArtifact(format!("unknown device `{n}` in {CONFIG_COPY}")))?,
        DeviceSpec::Inline(d) => d.clone(),
    };
    d.validate().map_err(PipelineError::MissingArtifact)?;
    Ok(d)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PipelineError::Internal(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| PipelineError::Internal(e.to_string()))
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "-".into())
}

/// Builds both tables from `pareto.json` and any exported local-search
/// models, prints nothing, writes `report/` and returns the text form.
pub fn cmd_report(run: &Path) -> Result<String, PipelineError> {
    if !run.is_dir() {
        return Err(PipelineError::MissingArtifact(format!("run directory {} does not exist", run.display())));
    }
    let _lock = RunLock::acquire(run)?;
    let cfg: RunConfig = read_json(&run.join(CONFIG_COPY))?;
    let device = device_of(&cfg)?;
    let pareto: ParetoFile = read_json(&run.join(PARETO_JSON))?;

    let metric = |m: &std::collections::BTreeMap<String, f64>, k: &str| m.get(k).copied();
    let mut models: Vec<ModelRow> = pareto
        .members
        .iter()
        .map(|p| ModelRow {
            label: format!("pareto/trial-{}", p.trial_index),
            key: p.genome_key.clone(),
            accuracy: metric(&p.metrics, "accuracy").or_else(|| metric(&p.objectives, "accuracy")),
            bops: metric(&p.metrics, "bops"),
            estimate: ResourceEstimate {
                bram: metric(&p.metrics, "est_bram").unwrap_or(0.0),
                dsp: metric(&p.metrics, "est_dsp").unwrap_or(0.0),
                ff: metric(&p.metrics, "est_ff").unwrap_or(0.0),
                lut: metric(&p.metrics, "est_lut").unwrap_or(0.0),
                ii_cycles: metric(&p.metrics, "est_ii_cycles").unwrap_or(0.0),
                latency_cycles: metric(&p.metrics, "est_clock_cycles").unwrap_or(0.0),
            },
        })
        .collect();

    let local_root = run.join(LOCAL_DIR);
    if local_root.is_dir() {
        let mut dirs: Vec<_> = fs::read_dir(&local_root)
            .map_err(PipelineError::io(&local_root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SELECTION_JSON).is_file())
            .collect();
        dirs.sort();
        for d in dirs {
            let sel: SelectionFile = read_json(&d.join(SELECTION_JSON))?;
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            models.push(ModelRow {
                label: format!("local/{name}/ckpt-{}", sel.record.iteration),
                key: sel.source.clone(),
                accuracy: Some(sel.record.val_accuracy),
                bops: Some(sel.record.bops as f64),
                estimate: sel.record.estimate,
            });
        }
    }

    let acc_header = ["model", "accuracy [%]", "BOPs", "est. avg resources [%]", "est. clock cycles"];
    let acc_rows: Vec<Vec<String>> = models
        .iter()
        .map(|m| {
            vec![
                m.label.clone(),
                opt(m.accuracy, |a| format!("{:.2}", 100.0 * a)),
                opt(m.bops, |b| format!("{b:.0}")),
                format!("{:.2}", avg_resource_pct(&m.estimate, &device)),
                format!("{:.2}", m.estimate.latency_cycles),
            ]
        })
        .collect();
    let hw_header = ["model", "latency [ns] (cc)", "II [cc]", "DSP", "LUT", "FF", "BRAM"];
    let hw_rows: Vec<Vec<String>> = models
        .iter()
        .map(|m| {
            let e = &m.estimate;
            vec![
                m.label.clone(),
                format!("{:.0} ({:.0})", latency_ns(e, &device), e.latency_cycles),
                format!("{:.0}", e.ii_cycles),
                count_with_pct(e.dsp, device.dsp_capacity),
                count_with_pct(e.lut, device.lut_capacity),
                count_with_pct(e.ff, device.ff_capacity),
                count_with_pct(e.bram, device.bram_capacity),
            ]
        })
        .collect();

    let mut text = String::from("Model accuracy and search objectives\n\n");
    text += &table(&acc_header, &acc_rows);
    text += &format!(
        "\nHardware resources and latency ({}, {} ns clock)\n\n",
        device.name, device.clock_period_ns
    );
    text += &table(&hw_header, &hw_rows);

    let key_col = |rows: &[Vec<String>]| -> Vec<Vec<String>> {
        rows.iter()
            .zip(&models)
            .map(|(r, m)| {
                let mut r = r.clone();
                r.insert(1, m.key.clone());
                r
            })
            .collect()
    };
    let mut h2 = acc_header.to_vec();
    h2.insert(1, "genome_key");
    let mut h3 = hw_header.to_vec();
    h3.insert(1, "genome_key");
    let out = run.join(REPORT_DIR);
    fs::create_dir_all(&out).map_err(PipelineError::io(&out))?;
    write_atomic(&out.join("accuracy.csv"), &to_csv(&h2, &key_col(&acc_rows))?)?;
    write_atomic(&out.join("hardware.csv"), &to_csv(&h3, &key_col(&hw_rows))?)?;
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    Ok(text)
}
