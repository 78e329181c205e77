//! The Siamese model: one filter bank and one LSTM shared by both sentences,
//! scored with `exp(−‖h_A − h_B‖₁)`.
//!
//! Training minimizes `(score − (gold − 1)/4)²` with Adadelta. Word vectors
//! are frozen unless [`TrainConfig::train_embeddings`] is set, in which case
//! the trainer works on its own copy of the table.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cnn::{ContextFilterBank, ContextTrace};
use crate::corpus::{DatasetSplit, SentencePair};
use crate::embeddings::EmbeddingTable;
use crate::eval;
use crate::kernel::{self, AdadeltaConfig, AdadeltaState, Matrix};
use crate::lstm::{LstmParameters, LstmTrace, FORGET_BIAS};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSIM";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const INIT_STDDEV: f64 = 0.05;

/// Pairs per work unit inside a batch. Fixed so that the gradient sum order,
/// and therefore every bit of a training run, does not depend on the number
/// of threads.
const REDUCTION_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_filters: usize,
    pub window: usize,
    pub hidden: usize,
    pub seed: u64,
    pub init_stddev: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            n_filters: 300,
            window: 5,
            hidden: 50,
            seed: 0,
            init_stddev: INIT_STDDEV,
        }
    }
}

/// Hyperparameters recorded in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMeta {
    pub embed_dim: usize,
    pub n_filters: usize,
    pub window: usize,
    pub hidden: usize,
    pub seed: u64,
    pub embeddings: String,
}

impl ModelMeta {
    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.n_filters
    }
}

/// Every trainable parameter. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub bank: ContextFilterBank,
    pub lstm: LstmParameters,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Params {
            bank: self.bank.zeros_like(),
            lstm: self.lstm.zeros_like(),
        }
    }

    /// The fourteen blocks in checkpoint order:
    /// `W, b, W_i, U_i, b_i, W_f, U_f, b_f, W_o, U_o, b_o, W_c, U_c, b_c`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = vec![self.bank.weights.as_slice(), self.bank.bias.as_slice()];
        out.extend(self.lstm.blocks());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.bank.weights.as_mut_slice(), self.bank.bias.as_mut_slice()];
        out.extend(self.lstm.blocks_mut());
        out
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.len())));
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            for x in b.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks().iter().flat_map(|b| b.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    pub params: Params,
    meta: ModelMeta,
}

/// Forward pass of one sentence through the shared networks.
#[derive(Debug, Clone)]
pub struct SentenceTrace {
    pub embedded: Vec<Vec<f64>>,
    pub contexts: ContextTrace,
    pub lstm: LstmTrace,
}

impl SentenceTrace {
    pub fn encoding(&self) -> &[f64] {
        self.lstm.final_hidden()
    }
}

/// Loss, prediction and gradients for one pair.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub loss: f64,
    pub score: f64,
    pub grads: Params,
    /// `dL/dwe` for every token of sentence A, then of sentence B.
    pub word_grads: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `Σ_j |a_j − b_j|`, summed in index order.
pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

impl SiameseModel {
    pub fn new(config: &ModelConfig, embeddings: impl Into<String>) -> Result<Self> {
        let ModelConfig {
            embed_dim,
            n_filters,
            window,
            hidden,
            seed,
            init_stddev,
        } = *config;
        let bank = ContextFilterBank::init(window, embed_dim, n_filters, init_stddev, derive_seed(seed, 1))?;
        let lstm = LstmParameters::init(
            embed_dim + n_filters,
            hidden,
            init_stddev,
            derive_seed(seed, 2),
            FORGET_BIAS,
        )?;
        let meta = ModelMeta {
            embed_dim,
            n_filters,
            window,
            hidden,
            seed,
            embeddings: embeddings.into(),
        };
        Self::from_parts(meta, Params { bank, lstm })
    }

    pub fn from_parts(meta: ModelMeta, params: Params) -> Result<Self> {
        let b = &params.bank;
        if b.window() != meta.window || b.in_dim() != meta.embed_dim || b.n_filters() != meta.n_filters {
            return Err(Error::Shape("filter bank does not match model metadata".into()));
        }
        if params.lstm.input_dim() != meta.input_dim() || params.lstm.hidden() != meta.hidden {
            return Err(Error::Shape(format!(
                "LSTM input width {} must equal k + d = {}",
                params.lstm.input_dim(),
                meta.input_dim()
            )));
        }
        Ok(SiameseModel { params, meta })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn check_table(&self, table: &EmbeddingTable) -> Result<()> {
        if table.dim() != self.meta.embed_dim {
            return Err(Error::Shape(format!(
                "embedding table has dim {}, model expects {}",
                table.dim(),
                self.meta.embed_dim
            )));
        }
        Ok(())
    }

    fn forward_embedded(&self, embedded: Vec<Vec<f64>>) -> Result<SentenceTrace> {
        if embedded.is_empty() {
            return Err(Error::Invalid("empty sentence".into()));
        }
        let contexts = self.params.bank.forward(&embedded)?;
        let fused: Vec<Vec<f64>> = embedded
            .iter()
            .zip(&contexts.outputs)
            .map(|(we, lc)| kernel::concat(we, lc))
            .collect();
        let lstm = self.params.lstm.forward(&fused)?;
        Ok(SentenceTrace {
            embedded,
            contexts,
            lstm,
        })
    }

    pub fn forward_sentence(&self, tokens: &[String], table: &EmbeddingTable) -> Result<SentenceTrace> {
        self.check_table(table)?;
        self.forward_embedded(table.embed(tokens))
    }

    pub fn local_contexts(&self, tokens: &[String], table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_sentence(tokens, table)?.contexts.outputs)
    }

    /// Sentence embedding `h_n`.
    pub fn encode(&self, tokens: &[String], table: &EmbeddingTable) -> Result<Vec<f64>> {
        Ok(self.forward_sentence(tokens, table)?.encoding().to_vec())
    }

    /// Similarity in `(0, 1]`.
    pub fn score_raw(&self, tokens_a: &[String], tokens_b: &[String], table: &EmbeddingTable) -> Result<f64> {
        let ha = self.encode(tokens_a, table)?;
        let hb = self.encode(tokens_b, table)?;
        Ok((-manhattan(&ha, &hb)).exp())
    }

    /// Raw scores for many pairs, computed in parallel, returned in input order.
    pub fn score_pairs(&self, pairs: &[SentencePair], table: &EmbeddingTable) -> Result<Vec<f64>> {
        pairs
            .par_iter()
            .map(|p| self.score_raw(&p.tokens_a, &p.tokens_b, table))
            .collect()
    }

    pub fn pair_loss(&self, pair: &SentencePair, table: &EmbeddingTable) -> Result<PairLoss> {
        self.pair_loss_with(&pair.tokens_a, &pair.tokens_b, pair.target(), table, false)
    }

    /// Loss `(score − target)²` and its gradients. `target` is on the
    /// `[0, 1]` scale. With `word_grads`, also returns `dL/dwe` per token.
    pub fn pair_loss_with(
        &self,
        tokens_a: &[String],
        tokens_b: &[String],
        target: f64,
        table: &EmbeddingTable,
        word_grads: bool,
    ) -> Result<PairLoss> {
        self.check_table(table)?;
        self.loss_embedded(table.embed(tokens_a), table.embed(tokens_b), target, word_grads)
    }

    /// As [`pair_loss_with`](Self::pair_loss_with) on already-embedded sentences.
    pub fn loss_embedded(
        &self,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        target: f64,
        word_grads: bool,
    ) -> Result<PairLoss> {
        let ta = self.forward_embedded(a)?;
        let tb = self.forward_embedded(b)?;
        let (ha, hb) = (ta.encoding(), tb.encoding());
        let score = (-manhattan(ha, hb)).exp();
        let err = score - target;
        let loss = err * err;

        let mut grads = self.params.zeros_like();
        // dL/dD = 2(s − t) · (−s); dD/dh_A = sign(h_A − h_B), zero at ties.
        let dl_dd = -2.0 * err * score;
        let dha: Vec<f64> = ha
            .iter()
            .zip(hb)
            .map(|(x, y)| if x == y { 0.0 } else { dl_dd * (x - y).signum() })
            .collect();
        let dhb: Vec<f64> = dha.iter().map(|v| -v).collect();
        let wa = self.backward_branch(&ta, &dha, &mut grads)?;
        let wb = self.backward_branch(&tb, &dhb, &mut grads)?;
        Ok(PairLoss {
            loss,
            score,
            grads,
            word_grads: word_grads.then_some((wa, wb)),
        })
    }

    /// Backpropagate one branch into the shared gradient buffers; returns the
    /// gradient for each word vector.
    fn backward_branch(&self, trace: &SentenceTrace, dh: &[f64], grads: &mut Params) -> Result<Vec<Vec<f64>>> {
        let k = self.meta.embed_dim;
        let d_fused = trace.lstm.backward_into(&self.params.lstm, dh, &mut grads.lstm)?;
        let mut d_words = Vec::with_capacity(d_fused.len());
        let mut d_contexts = Vec::with_capacity(d_fused.len());
        for dx in d_fused {
            d_contexts.push(dx[k..].to_vec());
            d_words.push(dx[..k].to_vec());
        }
        let from_cnn = trace
            .contexts
            .backward_into(&self.params.bank, &d_contexts, &mut grads.bank)?;
        for (w, c) in d_words.iter_mut().zip(&from_cnn) {
            kernel::add_assign(w, c)?;
        }
        Ok(d_words)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        self.write_checkpoint(&mut bytes).map_err(|e| Error::io(path, e))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&bytes).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                what: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn header_text(&self) -> String {
        let m = &self.meta;
        format!(
            "k={}\nd={}\nl={}\nH={}\nseed={}\nembeddings={}\n",
            m.embed_dim,
            m.n_filters,
            m.window,
            m.hidden,
            m.seed,
            m.embeddings.replace(['\n', '\r'], " ")
        )
    }

    /// `"CSIM"`, version (u32 LE), header length (u32 LE), UTF-8 header,
    /// then every parameter block as f64 LE in [`Params::blocks`] order.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header = self.header_text();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        for block in self.params.blocks() {
            for v in block {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(bytes: &[u8]) -> Result<Self> {
        let err = |msg: String| Error::parse("checkpoint", None, msg);
        if bytes.len() < 12 {
            return Err(err(format!("truncated: {} bytes", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(err("magic mismatch: not a CSIM checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| err("truncated header".into()))?;
        let header = std::str::from_utf8(header).map_err(|_| err("header is not UTF-8".into()))?;
        let meta = parse_header(header)?;

        let m = meta.input_dim();
        let sizes = [
            meta.n_filters * meta.window * meta.embed_dim,
            meta.n_filters,
        ]
        .into_iter()
        .chain((0..4).flat_map(|_| [meta.hidden * m, meta.hidden * meta.hidden, meta.hidden]));
        let expected: usize = sizes.clone().sum();
        let payload = &bytes[12 + hlen..];
        if payload.len() != expected * 8 {
            return Err(err(format!(
                "dimension header needs {} payload bytes, file has {}",
                expected * 8,
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut blocks: Vec<Vec<f64>> = sizes.map(|n| values.by_ref().take(n).collect()).collect();
        if blocks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }

        let mut lstm = LstmParameters::zeros(m, meta.hidden)?;
        for (dst, src) in lstm.blocks_mut().into_iter().zip(blocks.drain(2..)) {
            dst.copy_from_slice(&src);
        }
        let bias = blocks.pop().expect("bias block");
        let weights = Matrix::from_vec(meta.n_filters, meta.window * meta.embed_dim, blocks.pop().expect("W"))?;
        let bank = ContextFilterBank::new(meta.window, meta.embed_dim, weights, bias)?;
        Self::from_parts(meta, Params { bank, lstm })
    }
}

fn parse_header(text: &str) -> Result<ModelMeta> {
    let err = |msg: String| Error::parse("checkpoint header", None, msg);
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("malformed line {line:?}")))?;
        kv.insert(k.trim(), v);
    }
    let num = |key: &str| -> Result<u64> {
        kv.get(key)
            .ok_or_else(|| err(format!("missing key {key}")))?
            .trim()
            .parse()
            .map_err(|_| err(format!("bad value for {key}")))
    };
    let size = |key: &str| -> Result<usize> {
        let v = num(key)?;
        if v == 0 {
            return Err(err(format!("{key} must be positive")));
        }
        usize::try_from(v).map_err(|_| err(format!("{key} too large")))
    };
    Ok(ModelMeta {
        embed_dim: size("k")?,
        n_filters: size("d")?,
        window: size("l")?,
        hidden: size("H")?,
        seed: num("seed")?,
        embeddings: kv.get("embeddings").map(|s| s.to_string()).unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdadeltaConfig,
    pub shuffle_seed: u64,
    /// Global-norm gradient clip.
    pub clip_norm: Option<f64>,
    /// Stop after this many epochs without a validation-MSE improvement.
    pub patience: Option<usize>,
    pub train_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            optimizer: AdadeltaConfig::default(),
            shuffle_seed: 0,
            clip_norm: None,
            patience: None,
            train_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("epochs and batch size must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Invalid(format!("clip threshold must be positive, got {c}")));
            }
        }
        self.optimizer.validate()
    }
}

/// One row of the training log. Validation fields are NaN when there is no
/// validation split (or the correlation is undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean pair loss over the epoch, on the `[0, 1]` target scale.
    pub train_mse: f64,
    /// Mean squared error of raw scores against `(gold − 1)/4`.
    pub val_mse: f64,
    /// Pearson correlation of raw scores with gold.
    pub val_pearson: f64,
}

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse,val_pearson\n");
    for e in log {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_mse, e.val_mse, e.val_pearson));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MSE (the last
    /// epoch when there is no validation split).
    pub model: SiameseModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Fine-tuned copy of the table when embeddings were trained.
    pub embeddings: Option<EmbeddingTable>,
}

struct BatchGrads {
    loss: f64,
    params: Params,
    words: BTreeMap<usize, Vec<f64>>,
}

impl BatchGrads {
    fn merge(&mut self, other: BatchGrads) {
        self.loss += other.loss;
        self.params.add_assign(&other.params);
        for (row, g) in other.words {
            match self.words.get_mut(&row) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    self.words.insert(row, g);
                }
            }
        }
    }
}

/// Mean-squared error and Pearson correlation of raw scores on `pairs`.
pub fn validation_metrics(model: &SiameseModel, pairs: &[SentencePair], table: &EmbeddingTable) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let scores = model.score_pairs(pairs, table)?;
    let targets: Vec<f64> = pairs.iter().map(SentencePair::target).collect();
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    let mse = eval::mse(&scores, &targets)?;
    let r = eval::pearson(&scores, &gold).unwrap_or(f64::NAN);
    Ok((mse, r))
}

pub fn train(
    model: SiameseModel,
    data: &DatasetSplit,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    model.check_table(table)?;

    let mut model = model;
    let mut tuned = config.train_embeddings.then(|| table.clone());
    let mut states: Vec<AdadeltaState> = model.params.blocks().iter().map(|b| AdadeltaState::new(b.len())).collect();
    let mut word_states: BTreeMap<usize, AdadeltaState> = BTreeMap::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, SiameseModel, Option<EmbeddingTable>)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let current = tuned.as_ref().unwrap_or(table);
            let mut g = batch_gradients(&model, &data.train, batch, current, config.train_embeddings)?;
            loss_sum += g.loss;
            let inv = 1.0 / batch.len() as f64;
            g.params.scale(inv);
            for v in g.words.values_mut() {
                v.iter_mut().for_each(|x| *x *= inv);
            }
            if let Some(clip) = config.clip_norm {
                let norm = g.params.norm();
                if norm > clip {
                    g.params.scale(clip / norm);
                }
            }
            for ((p, gr), st) in model
                .params
                .blocks_mut()
                .into_iter()
                .zip(g.params.blocks())
                .zip(states.iter_mut())
            {
                kernel::adadelta_step(p, gr, st, &config.optimizer)?;
            }
            if let Some(t) = tuned.as_mut() {
                for (row, grad) in &g.words {
                    let st = word_states.entry(*row).or_insert_with(|| AdadeltaState::new(grad.len()));
                    kernel::adadelta_step(t.row_mut(*row), grad, st, &config.optimizer)?;
                }
            }
        }
        let train_mse = loss_sum / data.train.len() as f64;
        let current = tuned.as_ref().unwrap_or(table);
        let (val_mse, val_pearson) = validation_metrics(&model, &data.validation, current)?;
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
            val_pearson,
        });

        if data.validation.is_empty() {
            best = Some((f64::NAN, epoch, model.clone(), tuned.clone()));
            continue;
        }
        let improved = best.as_ref().is_none_or(|(m, ..)| val_mse < *m);
        if improved {
            best = Some((val_mse, epoch, model.clone(), tuned.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (_, best_epoch, model, embeddings) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
        embeddings,
    })
}

fn batch_gradients(
    model: &SiameseModel,
    pairs: &[SentencePair],
    batch: &[usize],
    table: &EmbeddingTable,
    word_grads: bool,
) -> Result<BatchGrads> {
    let partials: Vec<BatchGrads> = batch
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut acc = BatchGrads {
                loss: 0.0,
                params: model.params.zeros_like(),
                words: BTreeMap::new(),
            };
            for &i in chunk {
                let pair = &pairs[i];
                let pl = model.pair_loss_with(&pair.tokens_a, &pair.tokens_b, pair.target(), table, word_grads)?;
                if !pl.loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss for pair {} is {}", pair.id, pl.loss)));
                }
                let mut words = BTreeMap::new();
                if let Some((wa, wb)) = pl.word_grads {
                    for (tok, g) in pair.tokens_a.iter().zip(wa).chain(pair.tokens_b.iter().zip(wb)) {
                        if let Some(row) = table.resolve(tok) {
                            let e = words.entry(row).or_insert_with(|| vec![0.0; g.len()]);
                            e.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                        }
                    }
                }
                acc.merge(BatchGrads {
                    loss: pl.loss,
                    params: pl.grads,
                    words,
                });
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut it = partials.into_iter();
    let mut total = it.next().expect("non-empty batch");
    for p in it {
        total.merge(p);
    }
    Ok(total)
}
