//! Sentence-pair datasets in the SICK tab-separated layout, tokenization and
//! the train/validation/test partition.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::{Error, Result};

/// A scored sentence pair. Gold relatedness lies in `[1, 5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub id: String,
    pub tokens_a: Vec<String>,
    pub tokens_b: Vec<String>,
    pub gold: f64,
}

impl SentencePair {
    pub fn new(id: impl Into<String>, tokens_a: Vec<String>, tokens_b: Vec<String>, gold: f64) -> Result<Self> {
        let id = id.into();
        if tokens_a.is_empty() || tokens_b.is_empty() {
            return Err(Error::Invalid(format!("pair {id}: empty sentence")));
        }
        check_gold(gold).map_err(|m| Error::Invalid(format!("pair {id}: {m}")))?;
        Ok(SentencePair {
            id,
            tokens_a,
            tokens_b,
            gold,
        })
    }

    /// Tokenize both sentences.
    pub fn from_sentences(id: impl Into<String>, a: &str, b: &str, gold: f64) -> Result<Self> {
        SentencePair::new(id, tokenize(a)?, tokenize(b)?, gold)
    }

    /// Training target on the similarity head's scale: `(gold − 1) / 4`.
    pub fn target(&self) -> f64 {
        normalize_gold(self.gold)
    }
}

pub fn normalize_gold(gold: f64) -> f64 {
    (gold - 1.0) / 4.0
}

pub fn denormalize_score(score: f64) -> f64 {
    1.0 + 4.0 * score
}

fn check_gold(gold: f64) -> std::result::Result<(), String> {
    if !(1.0..=5.0).contains(&gold) {
        return Err(format!("score {gold} outside [1, 5]"));
    }
    Ok(())
}

/// Split membership declared by the dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl SplitTag {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Some(SplitTag::Train),
            "trial" | "validation" | "valid" | "dev" => Some(SplitTag::Validation),
            "test" => Some(SplitTag::Test),
            "" | "unassigned" => Some(SplitTag::Unassigned),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub pair: SentencePair,
    pub tag: SplitTag,
}

const ID_COLUMNS: &[&str] = &["pair_id", "id"];
const A_COLUMNS: &[&str] = &["sentence_a", "sentence1", "sentence_1"];
const B_COLUMNS: &[&str] = &["sentence_b", "sentence2", "sentence_2"];
const SCORE_COLUMNS: &[&str] = &["relatedness_score", "score", "gold"];
const SPLIT_COLUMNS: &[&str] = &["semeval_set", "split", "set"];

fn find_column(header: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    header
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

/// Read a SICK-style TSV with a header row.
///
/// Required columns: pair id, sentence A, sentence B and relatedness score.
/// The split tag comes from the `SemEval_set` column when the file has one.
pub fn load_sick(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::parse(&what, Some(1), e.to_string()))?
        .clone();
    let require = |names: &[&str], label: &str| {
        find_column(&header, names)
            .ok_or_else(|| Error::parse(&what, Some(1), format!("missing required column {label}")))
    };
    let id_col = require(ID_COLUMNS, "pair_ID")?;
    let a_col = require(A_COLUMNS, "sentence_A")?;
    let b_col = require(B_COLUMNS, "sentence_B")?;
    let score_col = require(SCORE_COLUMNS, "relatedness_score")?;
    let split_col = find_column(&header, SPLIT_COLUMNS);

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::parse(&what, None, e.to_string()))?;
        let line = row.position().map(|p| p.line() as usize);
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let field = |col: usize| {
            row.get(col)
                .ok_or_else(|| Error::parse(&what, line, format!("row has only {} columns", row.len())))
        };
        let id = field(id_col)?.trim().to_string();
        let raw_score = field(score_col)?.trim();
        let gold: f64 = raw_score
            .parse()
            .map_err(|_| Error::parse(&what, line, format!("unparseable score {raw_score:?}")))?;
        check_gold(gold).map_err(|m| Error::parse(&what, line, m))?;
        let tokens_a = tokenize(field(a_col)?).map_err(|e| Error::parse(&what, line, e.to_string()))?;
        let tokens_b = tokenize(field(b_col)?).map_err(|e| Error::parse(&what, line, e.to_string()))?;
        let tag = match split_col {
            Some(c) => {
                let s = field(c)?;
                SplitTag::parse(s)
                    .ok_or_else(|| Error::parse(&what, line, format!("unknown split label {s:?}")))?
            }
            None => SplitTag::Unassigned,
        };
        if !seen.insert(id.clone()) {
            return Err(Error::parse(&what, line, format!("duplicate pair id {id:?}")));
        }
        out.push(Record {
            pair: SentencePair {
                id,
                tokens_a,
                tokens_b,
                gold,
            },
            tag,
        });
    }
    Ok(out)
}

/// `(id, sentence A, sentence B, gold)` from a pairs file.
pub type PairRow = (String, String, String, Option<f64>);

/// Read a headerless pairs file: `sentence A <TAB> sentence B [<TAB> gold]`.
/// Blank lines and lines starting with `#` are skipped. Ids are `line-<n>`.
pub fn load_pair_list(path: impl AsRef<Path>) -> Result<Vec<PairRow>> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(Error::parse(&what, Some(lineno), format!("expected 2 or 3 columns, got {}", cols.len())));
        }
        let gold = match cols.get(2).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            Some(s) => {
                let g: f64 = s
                    .parse()
                    .map_err(|_| Error::parse(&what, Some(lineno), format!("unparseable score {s:?}")))?;
                check_gold(g).map_err(|m| Error::parse(&what, Some(lineno), m))?;
                Some(g)
            }
            None => None,
        };
        for s in &cols[..2] {
            if s.trim().is_empty() {
                return Err(Error::parse(&what, Some(lineno), "empty sentence"));
            }
        }
        out.push((format!("line-{lineno}"), cols[0].to_string(), cols[1].to_string(), gold));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    /// Use the dataset's own split labels.
    FileColumn,
    /// Slice in file order: the first `train` records, then `validation`,
    /// then `test`.
    FirstN {
        train: usize,
        validation: usize,
        test: usize,
    },
}

impl SplitStrategy {
    pub const SICK_FIRST_N: SplitStrategy = SplitStrategy::FirstN {
        train: 4927,
        validation: 2000,
        test: 3000,
    };
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SentencePair>,
    pub validation: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
    /// Records not assigned to any of the three splits.
    pub unused: Vec<SentencePair>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn all(&self) -> impl Iterator<Item = &SentencePair> {
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .chain(&self.unused)
    }
}

pub fn partition(records: Vec<Record>, strategy: SplitStrategy) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    match strategy {
        SplitStrategy::FileColumn => {
            if records.iter().all(|r| r.tag == SplitTag::Unassigned) && !records.is_empty() {
                return Err(Error::Invalid(
                    "file-column split requested but the dataset has no split column".into(),
                ));
            }
            for r in records {
                match r.tag {
                    SplitTag::Train => split.train.push(r.pair),
                    SplitTag::Validation => split.validation.push(r.pair),
                    SplitTag::Test => split.test.push(r.pair),
                    SplitTag::Unassigned => split.unused.push(r.pair),
                }
            }
        }
        SplitStrategy::FirstN {
            train,
            validation,
            test,
        } => {
            let need = train + validation + test;
            if need > records.len() {
                return Err(Error::Invalid(format!(
                    "split sizes {train}/{validation}/{test} need {need} records, have {}",
                    records.len()
                )));
            }
            let mut it = records.into_iter().map(|r| r.pair);
            split.train.extend(it.by_ref().take(train));
            split.validation.extend(it.by_ref().take(validation));
            split.test.extend(it.by_ref().take(test));
            split.unused.extend(it);
        }
    }
    Ok(split)
}

/// Counts of gold scores in `[1,2)`, `[2,3)`, `[3,4)` and `[4,5]`.
pub fn gold_histogram<'a, I>(pairs: I) -> [usize; 4]
where
    I: IntoIterator<Item = &'a SentencePair>,
{
    let mut bins = [0usize; 4];
    for p in pairs {
        let b = if p.gold >= 4.0 {
            3
        } else {
            (p.gold.floor() as usize).saturating_sub(1).min(3)
        };
        bins[b] += 1;
    }
    bins
}

/// Split on whitespace; every ASCII punctuation character becomes a token of
/// its own.
pub fn tokenize(sentence: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in sentence.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    if tokens.is_empty() {
        return Err(Error::Invalid("empty or whitespace-only sentence".into()));
    }
    Ok(tokens)
}
