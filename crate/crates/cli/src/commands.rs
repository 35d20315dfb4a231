//! One function per subcommand. Each takes the finalized configuration and
//! an output directory that already holds the materialized `run_config.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cogmotor::assess::{
    repeat_assessments, significance_test, summarize, Metric, MetricDistribution, StatReport, Summary, VbaNetLearner,
};
use cogmotor::contrastive::{extract_features, read_frame_blob, read_frame_dir, train_contrastive};
use cogmotor::dataset::{load_trials, write_matrix_csv, write_trials};
use cogmotor::explain::{average_curves, compute_cam, normalize_resample_cam, render_svg, spearman_rho, CamCurve};
use cogmotor::featurestream::{Modality, Task};
use cogmotor::nnet::{self, Head, Target};
use cogmotor::synth::{generate_dataset, write_dataset};
use cogmotor::trust::{trust_spectrum, PredictionRecord};
use cogmotor::{Model, Trial};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{cell, write_csv, write_json, write_text};

pub const RUN_CONFIG: &str = "run_config.json";

fn load_dataset(cfg: &RunConfig) -> CliResult<Vec<Trial>> {
    let manifest = cfg.manifest()?;
    if !manifest.is_file() {
        return Err(CliError::Usage(format!("manifest {} does not exist", manifest.display())));
    }
    let mut trials = load_trials(manifest, &cfg.pipeline)?;
    if let Some(task) = cfg.assess.task {
        trials.retain(|t| t.task == task);
    }
    if trials.is_empty() {
        return Err(CliError::Usage("no trials left to use".into()));
    }
    Ok(trials)
}

fn target(head: Head, t: &Trial) -> Target {
    match head {
        Head::Classify { .. } => Target::Class(t.label),
        Head::Regress => Target::Score(t.score),
    }
}

pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let trials = generate_dataset(&cfg.synth)?;
    write_dataset(out, &trials)?;
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let trials = load_dataset(cfg)?;
    write_trials(out, &trials)?;
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let trials = load_dataset(cfg)?;
    let head = cfg.assess.head.head();
    let data: Vec<_> = trials
        .iter()
        .map(|t| Ok((t.input(cfg.assess.modality)?, target(head, t))))
        .collect::<cogmotor::Result<_>>()?;
    let network = cfg.model.network(data[0].0.channels(), head, cfg.seed);
    let model = nnet::train(&network, &data)?;
    model.save(&out.join("model.json"))?;
    write_csv(
        &out.join("history.csv"),
        &["epoch", "loss"],
        model.history.iter().enumerate().map(|(e, l)| [e.to_string(), l.to_string()]),
    )
}

/// `summary.json` written by `assess`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessSummary {
    pub metric: Metric,
    pub modality: Modality,
    pub task: Task,
    pub seed: u64,
    pub iterations: usize,
    pub summary: Summary,
}

pub fn assess(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let trials = load_dataset(cfg)?;
    let head = cfg.assess.head.head();
    let modality = cfg.assess.modality;
    let task = trials[0].task;
    let learner = VbaNetLearner {
        config: cfg.model.network(1, head, cfg.seed),
    };
    let runs = repeat_assessments(&trials, modality, head, &learner, cfg.seed, cfg.assess.iterations)?;
    let metric = Metric::for_head(head);
    let values: Vec<f64> = runs.iter().map(|r| r.value).collect();
    write_json(
        &out.join("distribution.json"),
        &MetricDistribution {
            metric,
            modality,
            task,
            values: values.clone(),
        },
    )?;
    write_json(
        &out.join("summary.json"),
        &AssessSummary {
            metric,
            modality,
            task,
            seed: cfg.seed,
            iterations: runs.len(),
            summary: summarize(&values)?,
        },
    )?;
    write_csv(
        &out.join("runs.csv"),
        &["iteration", "seed", "value"],
        runs.iter()
            .enumerate()
            .map(|(i, r)| [i.to_string(), r.seed.to_string(), r.value.to_string()]),
    )?;

    let n_classes = match head {
        Head::Classify { classes } => classes,
        Head::Regress => 0,
    };
    let mut header = vec!["iteration", "seed", "task", "trial_id", "subject_id", "label", "score", "predicted_class"];
    let prob_names: Vec<String> = (0..n_classes).map(|c| format!("prob_{c}")).collect();
    header.extend(prob_names.iter().map(String::as_str));
    header.push("predicted_score");
    let rows = runs.iter().enumerate().flat_map(|(i, r)| {
        r.predictions.iter().map(move |p| {
            let mut row = vec![
                i.to_string(),
                r.seed.to_string(),
                task.to_string(),
                p.trial_id.clone(),
                p.subject_id.clone(),
                p.label.to_string(),
                p.score.to_string(),
                p.predicted_class.map(|c| c.to_string()).unwrap_or_default(),
            ];
            let probs = p.probabilities.as_deref().unwrap_or(&[]);
            row.extend((0..n_classes).map(|c| cell(probs.get(c).copied())));
            row.push(cell(p.predicted_score));
            row
        })
    });
    write_csv(&out.join("predictions.csv"), &header, rows)?;

    // Per-class trust of every iteration, as distributions `compare` accepts.
    if n_classes > 0 {
        let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
        for r in &runs {
            let records: Vec<PredictionRecord> = r
                .predictions
                .iter()
                .map(PredictionRecord::from_pooled)
                .collect::<cogmotor::Result<_>>()?;
            let nts = cogmotor::trust::net_trust_score(&records, n_classes, cfg.trust.correct_only);
            for (c, v) in nts.into_iter().enumerate() {
                if let Some(v) = v {
                    per_class[c].push(v);
                }
            }
        }
        for (c, values) in per_class.into_iter().enumerate() {
            if values.len() == runs.len() {
                write_json(
                    &out.join(format!("nts_class{c}.json")),
                    &MetricDistribution {
                        metric: Metric::NtsClass(c),
                        modality,
                        task,
                        values,
                    },
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSide {
    pub path: PathBuf,
    pub metric: Metric,
    pub modality: Modality,
    pub task: Task,
    pub summary: Summary,
}

/// `compare.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: CompareSide,
    pub b: CompareSide,
    pub report: StatReport,
}

fn read_distribution(path: &Path) -> CliResult<MetricDistribution> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not a distribution file: {e}", path.display())))
}

pub fn compare(a_path: &Path, b_path: &Path, out: &Path) -> CliResult<()> {
    let a = read_distribution(a_path)?;
    let b = read_distribution(b_path)?;
    if a.metric != b.metric {
        return Err(CliError::Usage(format!(
            "cannot compare {} with {}",
            a.metric.name(),
            b.metric.name()
        )));
    }
    let report = significance_test(&a.values, &b.values)?;
    let side = |path: &Path, d: &MetricDistribution| -> CliResult<CompareSide> {
        Ok(CompareSide {
            path: path.to_path_buf(),
            metric: d.metric,
            modality: d.modality,
            task: d.task,
            summary: summarize(&d.values)?,
        })
    };
    write_json(
        &out.join("compare.json"),
        &Comparison {
            a: side(a_path, &a)?,
            b: side(b_path, &b)?,
            report,
        },
    )
}

/// `trust.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub task: Task,
    pub n_predictions: usize,
    pub correct_only: bool,
    /// Headline per-class NTS under the selected variant.
    pub nts: BTreeMap<String, Option<f64>>,
    pub nts_all: BTreeMap<String, Option<f64>>,
    pub nts_correct_only: BTreeMap<String, Option<f64>>,
    pub density_maxima: BTreeMap<String, Vec<f64>>,
}

pub fn trust(cfg: &RunConfig, predictions: &Path, out: &Path) -> CliResult<()> {
    let mut reader = csv::Reader::from_path(predictions)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", predictions.display())))?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{} lacks column {name}", predictions.display())))
    };
    let (task_col, trial_col, iter_col, label_col, pred_col) =
        (col("task")?, col("trial_id")?, col("iteration")?, col("label")?, col("predicted_class")?);
    let prob_cols: Vec<usize> = (0..)
        .map_while(|c| header.iter().position(|h| h == format!("prob_{c}")))
        .collect();
    if prob_cols.len() < 2 {
        return Err(CliError::Usage("predictions carry no class probabilities".into()));
    }
    let bad = |what: &str| CliError::Usage(format!("malformed {what} in {}", predictions.display()));
    let mut task = None;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let t: Task = row[task_col].parse().map_err(|_| bad("task"))?;
        if *task.get_or_insert(t) != t {
            return Err(CliError::Usage("predictions mix tasks".into()));
        }
        let label: usize = row[label_col].parse().map_err(|_| bad("label"))?;
        let predicted: usize = row[pred_col].parse().map_err(|_| bad("predicted_class"))?;
        let prob_col = *prob_cols.get(predicted).ok_or_else(|| bad("predicted_class"))?;
        let confidence: f64 = row[prob_col].parse().map_err(|_| bad("probability"))?;
        let id = format!("{}:{}", &row[iter_col], &row[trial_col]);
        records.push(PredictionRecord::new(id, label, predicted, confidence)?);
    }
    let task = task.ok_or_else(|| CliError::Usage("no predictions".into()))?;
    let names = task.class_names();
    let spectrum = trust_spectrum(&records, prob_cols.len())?;
    let named = |m: &BTreeMap<usize, Option<f64>>| -> BTreeMap<String, Option<f64>> {
        m.iter().map(|(&c, &v)| (names[c].to_string(), v)).collect()
    };
    let report = TrustReport {
        task,
        n_predictions: records.len(),
        correct_only: cfg.trust.correct_only,
        nts: named(if cfg.trust.correct_only {
            &spectrum.nts_correct_only
        } else {
            &spectrum.nts
        }),
        nts_all: named(&spectrum.nts),
        nts_correct_only: named(&spectrum.nts_correct_only),
        density_maxima: spectrum
            .densities
            .iter()
            .filter_map(|(&c, d)| d.as_ref().map(|d| (names[c].to_string(), d.local_maxima())))
            .collect(),
    };
    write_json(&out.join("trust.json"), &report)?;

    let present: Vec<(usize, &cogmotor::trust::Density)> =
        spectrum.densities.iter().filter_map(|(&c, d)| d.as_ref().map(|d| (c, d))).collect();
    if let Some((_, first)) = present.first() {
        let mut header = vec!["trust"];
        header.extend(present.iter().map(|(c, _)| names[*c]));
        let rows = first.grid.iter().enumerate().map(|(i, g)| {
            std::iter::once(g.to_string())
                .chain(present.iter().map(|(_, d)| d.values[i].to_string()))
                .collect::<Vec<_>>()
        });
        write_csv(&out.join("density.csv"), &header, rows)?;
        let series: Vec<(&str, &[f64])> = present.iter().map(|(c, d)| (names[*c], d.values.as_slice())).collect();
        write_text(&out.join("trust.svg"), &render_svg(&format!("Trust spectrum ({task})"), &series))?;
    }
    Ok(())
}

/// `cam.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamReport {
    pub modality: Modality,
    pub curves: Vec<CamCurve>,
    /// Spearman correlation between the two class curves, when both exist.
    pub between_classes_rho: Option<f64>,
}

pub fn cam(cfg: &RunConfig, model_path: &Path, out: &Path) -> CliResult<()> {
    let model = Model::load(model_path)?;
    let trials = load_dataset(cfg)?;
    let modality = cfg.assess.modality;
    let len = cfg.cam.curve_len;
    let mut groups: BTreeMap<String, Vec<CamCurve>> = BTreeMap::new();
    let mut long_rows = Vec::new();
    for t in &trials {
        let x = t.input(modality)?;
        if x.channels() != model.config.in_channels {
            return Err(CliError::Usage(format!(
                "model expects {} channels but {modality} input has {}",
                model.config.in_channels,
                x.channels()
            )));
        }
        let (index, name) = match model.config.head {
            Head::Classify { .. } => (t.label, t.task.class_names()[t.label].to_string()),
            Head::Regress => (0, "score".to_string()),
        };
        let curve = normalize_resample_cam(&compute_cam(&model, &x, index)?, len, name.clone(), modality)?;
        for (i, v) in curve.values.iter().enumerate() {
            long_rows.push([t.trial_id.clone(), name.clone(), i.to_string(), v.to_string()]);
        }
        groups.entry(name).or_default().push(curve);
    }
    let curves: Vec<CamCurve> = groups.values().map(|c| average_curves(c)).collect::<cogmotor::Result<_>>()?;
    let between_classes_rho = match curves.as_slice() {
        [a, b] => spearman_rho(&a.values, &b.values),
        _ => None,
    };

    let mut header = vec!["position"];
    header.extend(curves.iter().map(|c| c.class_or_head.as_str()));
    let rows = (0..len).map(|i| {
        let pos = i as f64 / (len - 1) as f64;
        std::iter::once(pos.to_string())
            .chain(curves.iter().map(|c| c.values[i].to_string()))
            .collect::<Vec<_>>()
    });
    write_csv(&out.join("cam.csv"), &header, rows)?;
    write_csv(&out.join("cam_trials.csv"), &["trial_id", "group", "position", "value"], long_rows)?;
    let series: Vec<(&str, &[f64])> = curves.iter().map(|c| (c.class_or_head.as_str(), c.values.as_slice())).collect();
    write_text(&out.join("cam.svg"), &render_svg(&format!("Class activation ({modality})"), &series))?;
    write_json(
        &out.join("cam.json"),
        &CamReport {
            modality,
            curves,
            between_classes_rho,
        },
    )
}

pub fn extract(cfg: &RunConfig, frames: &Path, out: &Path) -> CliResult<()> {
    let frames = if frames.is_dir() {
        read_frame_dir::<f64>(frames)?
    } else {
        read_frame_blob::<f64>(frames)?
    };
    let backbone = train_contrastive(&frames, &cfg.contrastive)?;
    backbone.save(&out.join("backbone.json"))?;
    let features = extract_features(&backbone, &frames);
    let names: Vec<String> = (1..=features.ncols()).map(|k| format!("z{k}")).collect();
    write_matrix_csv(&out.join("features.csv"), &names, &features)?;
    write_csv(
        &out.join("history.csv"),
        &["epoch", "validation_loss"],
        backbone.history.iter().enumerate().map(|(e, l)| [e.to_string(), l.to_string()]),
    )
}

/// `report.json`: everything found in the input directories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summaries: Vec<(PathBuf, AssessSummary)>,
    pub comparisons: Vec<(PathBuf, Comparison)>,
    pub trust: Vec<(PathBuf, TrustReport)>,
    pub cams: Vec<(PathBuf, CamReport)>,
    /// Spearman correlation of same-named CAM curves across inputs.
    pub cam_agreement: Vec<CamAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamAgreement {
    pub group: String,
    pub a: PathBuf,
    pub b: PathBuf,
    pub rho: Option<f64>,
}

fn read_optional<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(cogmotor::Error::from)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Usage(format!("{} is malformed: {e}", path.display())))
}

pub fn report(inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    let mut report = Report::default();
    for dir in inputs {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
        }
        if let Some(s) = read_optional(&dir.join("summary.json"))? {
            report.summaries.push((dir.clone(), s));
        }
        if let Some(c) = read_optional(&dir.join("compare.json"))? {
            report.comparisons.push((dir.clone(), c));
        }
        if let Some(t) = read_optional(&dir.join("trust.json"))? {
            report.trust.push((dir.clone(), t));
        }
        if let Some(c) = read_optional(&dir.join("cam.json"))? {
            report.cams.push((dir.clone(), c));
        }
    }
    for (i, (dir_a, a)) in report.cams.iter().enumerate() {
        for (dir_b, b) in &report.cams[i + 1..] {
            for ca in &a.curves {
                if let Some(cb) = b.curves.iter().find(|c| c.class_or_head == ca.class_or_head) {
                    report.cam_agreement.push(CamAgreement {
                        group: ca.class_or_head.clone(),
                        a: dir_a.clone(),
                        b: dir_b.clone(),
                        rho: spearman_rho(&ca.values, &cb.values),
                    });
                }
            }
        }
    }
    write_json(&out.join("report.json"), &report)?;
    write_csv(
        &out.join("table.csv"),
        &["source", "task", "modality", "metric", "n", "mean_std", "n_fenced", "mean_std_fenced"],
        report.summaries.iter().map(|(dir, s)| {
            [
                dir.display().to_string(),
                s.task.to_string(),
                s.modality.to_string(),
                s.metric.name(),
                s.summary.n.to_string(),
                s.summary.formatted.clone(),
                s.summary.n_fenced.to_string(),
                s.summary.formatted_fenced.clone(),
            ]
        }),
    )?;
    write_csv(
        &out.join("comparisons.csv"),
        &["source", "metric", "a", "b", "test", "statistic", "p_value", "significant", "direction"],
        report.comparisons.iter().map(|(dir, c)| {
            [
                dir.display().to_string(),
                c.a.metric.name(),
                c.a.modality.to_string(),
                c.b.modality.to_string(),
                format!("{:?}", c.report.test_used),
                c.report.statistic.to_string(),
                c.report.p_value.to_string(),
                c.report.significant.to_string(),
                format!("{:?}", c.report.direction),
            ]
        }),
    )?;
    if !report.cams.is_empty() {
        let labels: Vec<String> = report
            .cams
            .iter()
            .flat_map(|(_, c)| c.curves.iter().map(move |k| format!("{} {}", c.modality, k.class_or_head)))
            .collect();
        let series: Vec<(&str, &[f64])> = report
            .cams
            .iter()
            .flat_map(|(_, c)| c.curves.iter())
            .zip(&labels)
            .map(|(k, l)| (l.as_str(), k.values.as_slice()))
            .collect();
        write_text(&out.join("cam.svg"), &render_svg("Class activation by modality", &series))?;
    }
    Ok(())
}
