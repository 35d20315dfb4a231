//! On-disk trial layout: a manifest CSV plus one matrix CSV per modality
//! and trial, paths relative to the manifest.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestream::{Modality, SpatioTemporalMatrix, Task, TrialRecord};
use crate::pipeline::{preprocess_motor, preprocess_neural, PipelineConfig};

pub const MANIFEST_HEADER: [&str; 9] = [
    "trial_id",
    "subject_id",
    "task",
    "label",
    "score",
    "neural_path",
    "motor_path",
    "neural_fs_hz",
    "motor_fps",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub trial_id: String,
    pub subject_id: String,
    pub task: Task,
    /// Class name, e.g. `Pass` or `Surgeon`.
    pub label: String,
    pub score: f64,
    pub neural_path: String,
    pub motor_path: String,
    pub neural_fs_hz: f64,
    pub motor_fps: f64,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::format(path, format!("unexpected manifest header {header:?}")));
    }
    let rows: Vec<ManifestRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    for row in &rows {
        row.task.label_index(&row.label).map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(rows)
}

/// Channel-name header row, then one row per time step.
pub fn write_matrix_csv(path: &Path, names: &[String], data: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(names)?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::format(path, format!("row {} has {} fields", rows + 1, rec.len())));
        }
        for field in rec.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("'{field}' is not a number")))?,
            );
        }
        rows += 1;
    }
    let data = Array2::from_shape_vec((rows, names.len()), values).expect("row lengths checked");
    Ok((names, data))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn same_rate(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Loads every manifest trial. Streams not already at the pipeline's target
/// rate are treated as raw and preprocessed.
pub fn load_trials(manifest: &Path, cfg: &PipelineConfig) -> Result<Vec<TrialRecord<f64>>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|row| {
            let (n_names, n_data) = read_matrix_csv(&resolve(base, &row.neural_path))?;
            let (m_names, m_data) = read_matrix_csv(&resolve(base, &row.motor_path))?;
            let neural = SpatioTemporalMatrix::new(n_data, row.neural_fs_hz, n_names, Modality::Neural)?;
            let neural = if same_rate(row.neural_fs_hz, cfg.target_hz) {
                neural
            } else {
                preprocess_neural(&neural, cfg)?
            };
            let motor = SpatioTemporalMatrix::new(m_data, row.motor_fps, m_names, Modality::Motor)?;
            let motor = if same_rate(row.motor_fps, cfg.target_hz) {
                motor
            } else {
                preprocess_motor(&motor, cfg.motor_channels.unwrap_or(neural.channels()), cfg)?
            };
            Ok(TrialRecord {
                label: row.task.label_index(&row.label)?,
                trial_id: row.trial_id,
                subject_id: row.subject_id,
                task: row.task,
                score: row.score,
                neural,
                motor,
            })
        })
        .collect()
}

/// Writes processed trials in the manifest layout under `dir`.
pub fn write_trials(dir: &Path, trials: &[TrialRecord<f64>]) -> Result<PathBuf> {
    let mut rows = Vec::with_capacity(trials.len());
    for t in trials {
        let neural_path = format!("neural/{}.csv", t.trial_id);
        let motor_path = format!("motor/{}.csv", t.trial_id);
        write_matrix_csv(&dir.join(&neural_path), &t.neural.channel_names, &t.neural.data)?;
        write_matrix_csv(&dir.join(&motor_path), &t.motor.channel_names, &t.motor.data)?;
        rows.push(ManifestRow {
            trial_id: t.trial_id.clone(),
            subject_id: t.subject_id.clone(),
            task: t.task,
            label: t.task.class_names()[t.label].to_string(),
            score: t.score,
            neural_path,
            motor_path,
            neural_fs_hz: t.neural.sample_rate_hz,
            motor_fps: t.motor.sample_rate_hz,
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}
