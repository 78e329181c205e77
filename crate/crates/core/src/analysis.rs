//! Diagnostics: cosine-distance matrices between the words (or local
//! contexts) of two sentences, calibrated scoring of ad-hoc sentence pairs,
//! and the window-length ablation.

use crate::corpus::{tokenize, DatasetSplit, PairRow};
use crate::embeddings::EmbeddingTable;
use crate::eval::{self, CalibrationModel, EvaluationReport};
use crate::model::{self, ModelConfig, SiameseModel, TrainConfig};
use crate::{Error, Result};

/// `1 − (u·v) / (‖u‖₂ ‖v‖₂)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine distance of lengths {} and {}", u.len(), v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Undefined("cosine distance with a zero-norm vector".into()));
    }
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

/// Pairwise distances between the positions of two sentences. `None` marks
/// a cell whose distance is undefined (a zero-norm vector).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Text,
}

impl DistanceMatrix {
    pub fn from_vectors(rows: Vec<String>, a: &[Vec<f64>], cols: Vec<String>, b: &[Vec<f64>]) -> Result<Self> {
        let cells = a
            .iter()
            .map(|u| {
                b.iter()
                    .map(|v| match cosine_distance(u, v) {
                        Ok(d) => Ok(Some(d)),
                        Err(Error::Undefined(_)) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DistanceMatrix { rows, cols, cells })
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once(String::new()).chain(self.cols.iter().cloned());
        w.write_record(header).expect("in-memory write");
        for (label, row) in self.rows.iter().zip(&self.cells) {
            let rec = std::iter::once(label.clone()).chain(row.iter().map(|c| match c {
                Some(d) => d.to_string(),
                None => "NA".to_string(),
            }));
            w.write_record(rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
    }

    /// Aligned table with two decimals.
    pub fn to_text(&self) -> String {
        let first = self.rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
        let widths: Vec<usize> = self.cols.iter().map(|c| c.chars().count().max(5)).collect();
        let mut out = format!("{:first$}", "");
        for (c, w) in self.cols.iter().zip(&widths) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
        for (label, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(&format!("{label:first$}"));
            for (cell, w) in row.iter().zip(&widths) {
                let s = cell.map_or_else(|| "--".to_string(), |d| format!("{d:.2}"));
                out.push_str(&format!("  {s:>w$}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Text => self.to_text(),
        }
    }
}

/// Distances between the word embeddings of two sentences.
pub fn word_matrix(sentence_a: &str, sentence_b: &str, table: &EmbeddingTable) -> Result<DistanceMatrix> {
    let ta = tokenize(sentence_a)?;
    let tb = tokenize(sentence_b)?;
    let ea = table.embed(&ta);
    let eb = table.embed(&tb);
    DistanceMatrix::from_vectors(ta, &ea, tb, &eb)
}

/// Distances between the local contexts the model's filter bank produces.
pub fn context_matrix(
    sentence_a: &str,
    sentence_b: &str,
    model: &SiameseModel,
    table: &EmbeddingTable,
) -> Result<DistanceMatrix> {
    let ta = tokenize(sentence_a)?;
    let tb = tokenize(sentence_b)?;
    let la = model.local_contexts(&ta, table)?;
    let lb = model.local_contexts(&tb, table)?;
    DistanceMatrix::from_vectors(ta, &la, tb, &lb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub id: String,
    pub sentence_a: String,
    pub sentence_b: String,
    pub raw: f64,
    pub calibrated: f64,
    pub gold: Option<f64>,
}

/// Score `(id, sentence A, sentence B, gold)` rows with the model and map
/// them onto `[1, 5]`.
pub fn score_pairs(
    model: &SiameseModel,
    calibration: Option<&CalibrationModel>,
    table: &EmbeddingTable,
    pairs: &[PairRow],
) -> Result<Vec<PairScore>> {
    pairs
        .iter()
        .map(|(id, a, b, gold)| {
            let raw = model.score_raw(&tokenize(a)?, &tokenize(b)?, table)?;
            Ok(PairScore {
                id: id.clone(),
                sentence_a: a.clone(),
                sentence_b: b.clone(),
                raw,
                calibrated: eval::calibrate(raw, calibration),
                gold: *gold,
            })
        })
        .collect()
}

pub fn pair_scores_render(scores: &[PairScore], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["id", "sentence_a", "sentence_b", "raw", "calibrated", "gold"])
                .expect("in-memory write");
            for s in scores {
                w.write_record([
                    s.id.clone(),
                    s.sentence_a.clone(),
                    s.sentence_b.clone(),
                    s.raw.to_string(),
                    s.calibrated.to_string(),
                    s.gold.map(|g| g.to_string()).unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
        }
        OutputFormat::Text => {
            let mut out = String::new();
            for s in scores {
                let gold = s.gold.map(|g| format!("  gold {g:.2}")).unwrap_or_default();
                out.push_str(&format!(
                    "{:.2}{gold}\n  {}\n  {}\n",
                    s.calibrated, s.sentence_a, s.sentence_b
                ));
            }
            out
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Shared model settings; `window` is overridden per row.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub window: usize,
    /// Test-split metrics, or the reason the run failed.
    pub outcome: std::result::Result<EvaluationReport, String>,
}

fn ablation_run(window: usize, data: &DatasetSplit, table: &EmbeddingTable, config: &AblationConfig) -> Result<EvaluationReport> {
    let mc = ModelConfig {
        window,
        embed_dim: table.dim(),
        ..config.model.clone()
    };
    let model = SiameseModel::new(&mc, table.id())?;
    let trained = model::train(model, data, table, &config.train)?;
    let used = trained.embeddings.as_ref().unwrap_or(table);
    let calibration = eval::fit_on_split(&trained.model, &data.validation, used, config.bandwidth)?;
    Ok(eval::evaluate(&trained.model, &data.test, used, Some(&calibration))?.report)
}

/// Train and evaluate one model per window length with otherwise identical
/// settings and seeds. A failed run yields a row carrying its error.
pub fn ablate(windows: &[usize], data: &DatasetSplit, table: &EmbeddingTable, config: &AblationConfig) -> Vec<AblationRow> {
    windows
        .iter()
        .map(|&window| AblationRow {
            window,
            outcome: ablation_run(window, data, table, config).map_err(|e| e.to_string()),
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window", "pearson", "spearman", "mse", "status"])
        .expect("in-memory write");
    for row in rows {
        let rec = match &row.outcome {
            Ok(r) => [
                row.window.to_string(),
                r.pearson.to_string(),
                r.spearman.to_string(),
                r.mse.to_string(),
                "ok".to_string(),
            ],
            Err(e) => [
                row.window.to_string(),
                String::new(),
                String::new(),
                String::new(),
                format!("failed: {e}"),
            ],
        };
        w.write_record(rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}
