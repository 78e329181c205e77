//! Pearson r, Spearman ρ (average ranks for ties), MSE and the
//! local-regression calibration that maps raw `(0, 1]` similarities to the
//! `[1, 5]` gold scale.
//!
//! Correlations are reported on raw scores; MSE on calibrated scores.

use std::fs;
use std::path::Path;

use crate::corpus::{denormalize_score, SentencePair};
use crate::embeddings::EmbeddingTable;
use crate::model::SiameseModel;
use crate::{Error, Result};

pub const DEFAULT_BANDWIDTH: f64 = 0.25;
const MIN_CALIBRATION_POINTS: usize = 5;

fn check_series(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("series lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::Undefined(format!("need at least {min} points, got {}", x.len())));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation. Errors when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_series(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_series(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn mse(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_series(pred, gold, 1)?;
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64)
}

/// LOESS with degree-1 local fits and tricube weights over the
/// `⌈bandwidth · n⌉` nearest raw scores; predictions are clamped to `[1, 5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    raw: Vec<f64>,
    gold: Vec<f64>,
    bandwidth: f64,
    neighbors: usize,
}

pub fn fit_calibration(raw: &[f64], gold: &[f64], bandwidth: f64) -> Result<CalibrationModel> {
    check_series(raw, gold, MIN_CALIBRATION_POINTS)?;
    if !(bandwidth > 0.0 && bandwidth <= 1.0) {
        return Err(Error::Invalid(format!("bandwidth must lie in (0, 1], got {bandwidth}")));
    }
    if let Some(v) = raw.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::Invalid(format!("raw score {v} outside (0, 1]")));
    }
    let n = raw.len();
    let neighbors = (bandwidth * n as f64).ceil() as usize;
    if neighbors < 2 {
        return Err(Error::Invalid(format!(
            "bandwidth {bandwidth} over {n} points leaves fewer than 2 neighbours"
        )));
    }
    // Canonical order makes the fit independent of input order.
    let mut pts: Vec<(f64, f64)> = raw.iter().copied().zip(gold.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (raw, gold) = pts.into_iter().unzip();
    Ok(CalibrationModel {
        raw,
        gold,
        bandwidth,
        neighbors: neighbors.min(n),
    })
}

impl CalibrationModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Index range `[lo, hi)` of the `neighbors` sample points nearest to
    /// `q`; equal distances prefer the smaller raw score.
    fn neighbourhood(&self, q: f64) -> (usize, usize) {
        let n = self.raw.len();
        let pivot = self.raw.partition_point(|&r| r < q);
        let (mut lo, mut hi) = (pivot, pivot);
        while hi - lo < self.neighbors {
            let take_left = match (lo > 0, hi < n) {
                (true, true) => q - self.raw[lo - 1] <= self.raw[hi] - q,
                (true, false) => true,
                (false, true) => false,
                (false, false) => unreachable!("neighbors <= n"),
            };
            if take_left {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        (lo, hi)
    }

    pub fn predict(&self, q: f64) -> f64 {
        let (lo, hi) = self.neighbourhood(q);
        let xs = &self.raw[lo..hi];
        let ys = &self.gold[lo..hi];
        let max_dist = xs.iter().map(|x| (x - q).abs()).fold(0.0, f64::max);
        let fitted = if max_dist == 0.0 {
            mean(ys)
        } else {
            let w: Vec<f64> = xs
                .iter()
                .map(|x| {
                    let u = (x - q).abs() / max_dist;
                    let t = 1.0 - u * u * u;
                    t * t * t
                })
                .collect();
            weighted_linear_fit(xs, ys, &w, q)
        };
        fitted.clamp(1.0, 5.0)
    }

    pub fn predict_many(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|&q| self.predict(q)).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# bandwidth\t{}\nraw\tgold\n", self.bandwidth);
        for (r, g) in self.raw.iter().zip(&self.gold) {
            out.push_str(&format!("{r}\t{g}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let what = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let bandwidth = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# bandwidth\t"))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::parse(&what, Some(1), "expected '# bandwidth<TAB><value>'"))?;
        match lines.next() {
            Some((_, "raw\tgold")) => {}
            _ => return Err(Error::parse(&what, Some(2), "expected column header 'raw<TAB>gold'")),
        }
        let (mut raw, mut gold) = (Vec::new(), Vec::new());
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = line
                .split_once('\t')
                .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)));
            let (r, g) = parsed.ok_or_else(|| Error::parse(&what, Some(i + 1), "expected two numbers"))?;
            raw.push(r);
            gold.push(g);
        }
        fit_calibration(&raw, &gold, bandwidth)
    }
}

/// Weighted least-squares line through `(xs, ys)` evaluated at `q`; falls
/// back to the weighted mean when the weighted spread of `xs` vanishes.
fn weighted_linear_fit(xs: &[f64], ys: &[f64], w: &[f64], q: f64) -> f64 {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        // Every neighbour sits at the maximum distance.
        return mean(ys);
    }
    let mx = xs.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(w) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    let scale: f64 = xs.iter().zip(w).map(|(x, w)| w * x * x).sum();
    if sxx <= 1e-14 * scale {
        return my;
    }
    my + (sxy / sxx) * (q - mx)
}

/// Raw score → `[1, 5]`: the fitted calibration, or `1 + 4·raw` without one.
pub fn calibrate(raw: f64, calibration: Option<&CalibrationModel>) -> f64 {
    match calibration {
        Some(c) => c.predict(raw),
        None => denormalize_score(raw).clamp(1.0, 5.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub mse: f64,
    pub n: usize,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\npearson,{}\nspearman,{}\nmse,{}\nn,{}\n",
            self.pearson, self.spearman, self.mse, self.n
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub id: String,
    pub raw: f64,
    pub calibrated: f64,
    pub gold: f64,
}

pub fn scored_pairs_csv(pairs: &[ScoredPair]) -> String {
    let mut out = String::from("id,raw,calibrated,gold\n");
    for p in pairs {
        out.push_str(&format!("{},{},{},{}\n", p.id, p.raw, p.calibrated, p.gold));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvaluationReport,
    /// Per-pair scores, sorted by id.
    pub pairs: Vec<ScoredPair>,
}

/// Metrics for precomputed raw scores. Pairs are ordered by id first, so the
/// result does not depend on input order.
pub fn evaluate_scores(
    ids: &[String],
    raw: &[f64],
    gold: &[f64],
    calibration: Option<&CalibrationModel>,
) -> Result<Evaluation> {
    if ids.len() != raw.len() {
        return Err(Error::Shape(format!("{} ids for {} scores", ids.len(), raw.len())));
    }
    check_series(raw, gold, 2)?;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        ids[a]
            .cmp(&ids[b])
            .then(raw[a].total_cmp(&raw[b]))
            .then(gold[a].total_cmp(&gold[b]))
    });
    let pairs: Vec<ScoredPair> = order
        .iter()
        .map(|&i| ScoredPair {
            id: ids[i].clone(),
            raw: raw[i],
            calibrated: calibrate(raw[i], calibration),
            gold: gold[i],
        })
        .collect();
    let r: Vec<f64> = pairs.iter().map(|p| p.raw).collect();
    let c: Vec<f64> = pairs.iter().map(|p| p.calibrated).collect();
    let g: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    let report = EvaluationReport {
        pearson: pearson(&r, &g)?,
        spearman: spearman(&r, &g)?,
        mse: mse(&c, &g)?,
        n: pairs.len(),
    };
    Ok(Evaluation { report, pairs })
}

pub fn evaluate(
    model: &SiameseModel,
    split: &[SentencePair],
    table: &EmbeddingTable,
    calibration: Option<&CalibrationModel>,
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty split".into()));
    }
    let raw = model.score_pairs(split, table)?;
    let ids: Vec<String> = split.iter().map(|p| p.id.clone()).collect();
    let gold: Vec<f64> = split.iter().map(|p| p.gold).collect();
    evaluate_scores(&ids, &raw, &gold, calibration)
}

/// Fit the calibration on a held-out split's raw scores and gold labels.
pub fn fit_on_split(
    model: &SiameseModel,
    split: &[SentencePair],
    table: &EmbeddingTable,
    bandwidth: f64,
) -> Result<CalibrationModel> {
    let raw = model.score_pairs(split, table)?;
    let gold: Vec<f64> = split.iter().map(|p| p.gold).collect();
    // exp(−D) underflows to 0 for very distant pairs; keep it inside (0, 1].
    let raw: Vec<f64> = raw.into_iter().map(|r| r.max(f64::MIN_POSITIVE)).collect();
    fit_calibration(&raw, &gold, bandwidth)
}
