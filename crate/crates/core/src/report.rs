//! Line-delimited JSON run reports. The first line names the schema and its
//! version; every following line is one tagged record.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{sparsity_metrics, AugmentReport, PerturbConfig, PerturbationResult, ScoreEntry, SparsityMetrics};

pub const REPORT_SCHEMA: &str = "perturbnet.run-report";
pub const REPORT_VERSION: u32 = 1;
/// Relative threshold used for the sparse fraction in reports.
pub const REPORT_REL_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedScore {
    pub class: String,
    pub index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header {
        schema: String,
        version: u32,
        kind: String,
    },
    Config {
        sample: String,
        config: PerturbConfig,
    },
    /// One row of the two-column score table.
    Row {
        rank: usize,
        original: NamedScore,
        perturbed: NamedScore,
    },
    Summary {
        converged: bool,
        best_epoch: usize,
        best_loss: f64,
        objective_score: f64,
        metrics: SparsityMetrics,
    },
    LossHistory {
        values: Vec<f64>,
    },
    Round(crate::perturb::RoundReport),
    Review(crate::perturb::ReviewEntry),
    AugmentSummary {
        initial_accuracy: f64,
        rounds_run: usize,
        stopped_early: bool,
    },
}

fn named(entry: &ScoreEntry, class_names: &[String]) -> NamedScore {
    NamedScore {
        class: class_names
            .get(entry.class)
            .cloned()
            .unwrap_or_else(|| format!("class_{}", entry.class)),
        index: entry.class,
        score: entry.score,
    }
}

fn header(kind: &str) -> Record {
    Record::Header {
        schema: REPORT_SCHEMA.into(),
        version: REPORT_VERSION,
        kind: kind.into(),
    }
}

/// Records describing one perturbation run.
pub fn perturbation_records(result: &PerturbationResult, class_names: &[String], sample: &str) -> Result<Vec<Record>> {
    let mut out = vec![
        header("perturbation"),
        Record::Config {
            sample: sample.into(),
            config: result.config.clone(),
        },
    ];
    for (rank, (o, p)) in result.original_top.iter().zip(&result.perturbed_top).enumerate() {
        out.push(Record::Row {
            rank: rank + 1,
            original: named(o, class_names),
            perturbed: named(p, class_names),
        });
    }
    let objective_score = result
        .objective_indices
        .iter()
        .map(|&i| result.perturbed_scores.data()[i] as f64)
        .sum();
    out.push(Record::Summary {
        converged: result.converged,
        best_epoch: result.best_epoch,
        best_loss: result.best_loss,
        objective_score,
        metrics: sparsity_metrics(&result.delta, REPORT_REL_THRESHOLD)?,
    });
    out.push(Record::LossHistory {
        values: result.loss_history.clone(),
    });
    Ok(out)
}

pub fn augment_records(report: &AugmentReport) -> Vec<Record> {
    let mut out = vec![header("augmentation")];
    out.extend(report.rounds.iter().cloned().map(Record::Round));
    out.push(Record::AugmentSummary {
        initial_accuracy: report.initial_accuracy,
        rounds_run: report.rounds.len(),
        stopped_early: report.stopped_early,
    });
    out.extend(report.review.iter().cloned().map(Record::Review));
    out
}

pub fn render_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_records(records: &[Record], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_records(records)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Writes the report for one perturbation run.
pub fn emit_report(result: &PerturbationResult, class_names: &[String], sample: &str, path: impl AsRef<Path>) -> Result<()> {
    write_records(&perturbation_records(result, class_names, sample)?, path)
}

/// Parses a report, checking the schema header.
pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(line)?;
        if n == 0 {
            match &r {
                Record::Header { schema, version, .. } if schema == REPORT_SCHEMA && *version == REPORT_VERSION => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "not a {REPORT_SCHEMA} v{REPORT_VERSION} report"
                    )))
                }
            }
        }
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty report".into()));
    }
    Ok(records)
}

/// Human-readable rendering of a parsed report.
pub fn render_table(records: &[Record]) -> String {
    let mut out = String::new();
    let mut rows = Vec::new();
    for r in records {
        match r {
            Record::Config { sample, config } => {
                out += &format!(
                    "sample {sample}  lambda {}  epochs {}  seed {}\n",
                    config.lambda, config.epochs, config.seed
                );
            }
            Record::Row { rank, original, perturbed } => rows.push((rank, original, perturbed)),
            Record::Summary {
                converged,
                best_epoch,
                best_loss,
                metrics,
                ..
            } => {
                out += &format!(
                    "converged {converged}  best loss {best_loss:.4} at epoch {best_epoch}  mean |delta| {:.4}  sparse fraction {:.3}\n",
                    metrics.mean_abs, metrics.sparse_fraction
                );
            }
            Record::Round(round) => {
                out += &format!(
                    "round {}  convergence rate {:.3} ({}/{})  clean accuracy {:.4}\n",
                    round.round, round.convergence_rate, round.converged, round.attempted, round.clean_accuracy
                );
            }
            Record::AugmentSummary {
                initial_accuracy,
                rounds_run,
                stopped_early,
            } => {
                out += &format!(
                    "initial accuracy {initial_accuracy:.4}  rounds {rounds_run}  stopped early {stopped_early}\n"
                );
            }
            _ => {}
        }
    }
    if !rows.is_empty() {
        let width = rows
            .iter()
            .flat_map(|(_, o, p)| [o.class.len(), p.class.len()])
            .max()
            .unwrap_or(0)
            .max(8);
        out += &format!("{:<4}  {:<width$}  {:>6}  {:<width$}  {:>6}\n", "rank", "original", "score", "perturbed", "score");
        for (rank, o, p) in rows {
            out += &format!(
                "{rank:<4}  {:<width$}  {:>6.4}  {:<width$}  {:>6.4}\n",
                o.class, o.score, p.class, p.score
            );
        }
    }
    out
}
