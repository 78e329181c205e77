//! Pre-trained word vectors in the word2vec text and binary layouts.
//!
//! Text layout: a header line `<vocab_count> <dim>`, then one line per word
//! holding the token followed by `dim` decimal floats, space separated.
//!
//! Binary layout: the same ASCII header line, then per entry the token bytes,
//! a single space and `dim` little-endian IEEE-754 `f32`s. Entries may be
//! separated by a newline (the reference tool writes one after each vector).
//!
//! Vectors are held as `f64`; the binary format narrows to `f32` on write.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Standard deviation of hashed OOV vectors, i.e. variance 0.01.
pub const OOV_STDDEV: f64 = 0.1;

/// How to produce a vector for a token that is not in the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovPolicy {
    ZeroVector,
    /// Gaussian vector seeded by a stable hash of the token and this seed.
    HashedGaussian(u64),
}

impl Default for OovPolicy {
    fn default() -> Self {
        OovPolicy::HashedGaussian(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Text,
    Binary,
}

/// Token → `dim`-dimensional vector map, stored as one contiguous row-major
/// block in file order.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    id: String,
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    oov_policy: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(id: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            id: id.into(),
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            oov_policy: OovPolicy::default(),
        })
    }

    /// Build a table from `(token, vector)` pairs, keeping their order.
    pub fn from_entries<I, S>(id: impl Into<String>, dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = EmbeddingTable::new(id, dim)?;
        for (token, vector) in entries {
            table.insert(token.into(), &vector)?;
        }
        Ok(table)
    }

    /// Random table with `N(0, stddev²)` entries, for experiments without
    /// pre-trained vectors.
    pub fn random<I, S>(vocab: I, dim: usize, stddev: f64, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let normal = Normal::new(0.0, stddev).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = EmbeddingTable::new(format!("random:{seed}"), dim)?;
        for token in vocab {
            let token = token.into();
            if table.contains(&token) {
                continue;
            }
            let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            table.insert(token, &v)?;
        }
        let id = format!("random:{}x{}:{seed}", table.len(), dim);
        table.id = id;
        Ok(table)
    }

    pub fn insert(&mut self, token: String, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {token:?} has {} of {} components",
                vector.len(),
                self.dim
            )));
        }
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("component {i} of {token:?}")));
        }
        if self.index.contains_key(&token) {
            return Err(Error::Invalid(format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn set_oov_policy(&mut self, policy: OovPolicy) {
        self.oov_policy = policy;
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    /// Identifier recorded in checkpoints: source file name and header shape.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(t, v)| (t.as_str(), v))
    }

    /// Stored row for `token`: exact match first, then its lowercase form.
    pub fn resolve(&self, token: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(token) {
            return Some(i);
        }
        let lower = token.to_lowercase();
        if lower != token {
            return self.index.get(&lower).copied();
        }
        None
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Vector for `token`. Never fails: unknown tokens get the OOV vector.
    pub fn lookup(&self, token: &str) -> Cow<'_, [f64]> {
        match self.resolve(token) {
            Some(i) => Cow::Borrowed(self.row(i)),
            None => Cow::Owned(self.oov_vector(token)),
        }
    }

    pub fn oov_vector(&self, token: &str) -> Vec<f64> {
        match self.oov_policy {
            OovPolicy::ZeroVector => vec![0.0; self.dim],
            OovPolicy::HashedGaussian(seed) => hashed_gaussian(token, seed, self.dim),
        }
    }

    pub fn embed(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        tokens.iter().map(|t| self.lookup(t).into_owned()).collect()
    }

    /// Order-sensitive hash over tokens and the bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(&(self.dim as u64).to_le_bytes());
        for t in &self.tokens {
            h.write(t.as_bytes());
            h.write(&[0xff]);
        }
        for v in &self.data {
            h.write(&v.to_bits().to_le_bytes());
        }
        h.finish()
    }

    pub fn load(path: impl AsRef<Path>, format: Option<EmbeddingFormat>) -> Result<Self> {
        Self::load_filtered(path, format, None)
    }

    /// Load, keeping only tokens in `keep` (when given). The declared header
    /// count is still enforced against the file.
    pub fn load_filtered(
        path: impl AsRef<Path>,
        format: Option<EmbeddingFormat>,
        keep: Option<&HashSet<String>>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let format = match format {
            Some(f) => f,
            None => sniff_format(path)?,
        };
        match format {
            EmbeddingFormat::Text => load_text_filtered(path, keep),
            EmbeddingFormat::Binary => load_binary_filtered(path, keep),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
        match format {
            EmbeddingFormat::Text => self.save_text(path),
            EmbeddingFormat::Binary => self.save_binary(path),
        }
    }

    /// Values are written in Rust's shortest round-trip decimal form, so
    /// reloading reproduces every `f64` exactly.
    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_text(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (token, v) in self.iter() {
            write!(w, "{token}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_binary(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (token, v) in self.iter() {
            w.write_all(token.as_bytes())?;
            w.write_all(b" ")?;
            for &x in v {
                w.write_f32::<LittleEndian>(x as f32)?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn load_text(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    load_text_filtered(path.as_ref(), None)
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    load_binary_filtered(path.as_ref(), None)
}

/// Every surface form `lookup` may query for these tokens: the token itself
/// and its lowercase fallback.
pub fn lookup_keys<'a, I>(tokens: I) -> HashSet<String>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut keys = HashSet::new();
    for t in tokens {
        keys.insert(t.to_lowercase());
        keys.insert(t.clone());
    }
    keys
}

fn table_id(path: &Path, count: usize, dim: usize) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    format!("{name}:{count}x{dim}")
}

fn parse_header(line: &str, what: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let bad = || Error::parse(what, Some(1), format!("malformed header {:?}", line.trim_end()));
    let count: usize = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let dim: usize = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if it.next().is_some() || dim == 0 {
        return Err(bad());
    }
    Ok((count, dim))
}

fn load_text_filtered(path: &Path, keep: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    let what = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(&what, Some(1), "missing header")),
    };
    let (count, dim) = parse_header(&header, &what)?;
    let mut table = EmbeddingTable::new(table_id(path, count, dim), dim)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut rows = 0usize;
    let mut vector = Vec::with_capacity(dim);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        if rows > count {
            return Err(Error::parse(
                &what,
                Some(lineno),
                format!("more rows than the {count} declared in the header"),
            ));
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        vector.clear();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| {
                Error::parse(&what, Some(lineno), format!("cannot parse {f:?} as a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(&what, Some(lineno), format!("non-finite value {f:?}")));
            }
            vector.push(v);
        }
        if vector.len() != dim {
            return Err(Error::parse(
                &what,
                Some(lineno),
                format!("row has {} of {dim} components", vector.len()),
            ));
        }
        if !seen.insert(token.to_string()) {
            return Err(Error::parse(&what, Some(lineno), format!("duplicate token {token:?}")));
        }
        if keep.is_none_or(|k| k.contains(token)) {
            table.insert(token.to_string(), &vector)?;
        }
    }
    if rows != count {
        return Err(Error::parse(
            &what,
            None,
            format!("header declares {count} entries, file contains {rows}"),
        ));
    }
    Ok(table)
}

fn read_header_line<R: BufRead>(r: &mut R, path: &Path) -> Result<String> {
    let mut buf = Vec::new();
    r.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
    if buf.last() != Some(&b'\n') {
        return Err(Error::parse(path.display().to_string(), Some(1), "missing header"));
    }
    String::from_utf8(buf)
        .map_err(|_| Error::parse(path.display().to_string(), Some(1), "header is not UTF-8"))
}

fn load_binary_filtered(path: &Path, keep: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header_line(&mut r, path)?;
    read_binary_body(&mut r, path, &header, keep)
}

fn read_binary_body<R: BufRead>(
    r: &mut R,
    path: &Path,
    header: &str,
    keep: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let what = path.display().to_string();
    let (count, dim) = parse_header(header, &what)?;
    let mut table = EmbeddingTable::new(table_id(path, count, dim), dim)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut vector = vec![0.0f64; dim];
    let mut token_buf = Vec::new();
    for entry in 0..count {
        skip_newlines(r).map_err(|e| Error::io(path, e))?;
        token_buf.clear();
        let n = r.read_until(b' ', &mut token_buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(
                &what,
                None,
                format!("header declares {count} entries, file contains {entry}"),
            ));
        }
        if token_buf.pop() != Some(b' ') {
            return Err(Error::parse(&what, None, format!("truncated file in entry {}", entry + 1)));
        }
        let token = String::from_utf8(std::mem::take(&mut token_buf)).map_err(|_| {
            Error::parse(&what, None, format!("entry {} token is not UTF-8", entry + 1))
        })?;
        for v in vector.iter_mut() {
            let x = r.read_f32::<LittleEndian>().map_err(|_| {
                Error::parse(&what, None, format!("truncated file in entry {} ({token:?})", entry + 1))
            })?;
            if !x.is_finite() {
                return Err(Error::parse(
                    &what,
                    None,
                    format!("non-finite value in entry {} ({token:?})", entry + 1),
                ));
            }
            *v = f64::from(x);
        }
        if !seen.insert(token.clone()) {
            return Err(Error::parse(&what, None, format!("duplicate token {token:?} in entry {}", entry + 1)));
        }
        if keep.is_none_or(|k| k.contains(&token)) {
            table.insert(token, &vector)?;
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if rest.iter().any(|b| !b.is_ascii_whitespace()) {
        return Err(Error::parse(
            &what,
            None,
            format!("data after the {count} entries declared in the header"),
        ));
    }
    Ok(table)
}

fn skip_newlines<R: BufRead>(r: &mut R) -> std::io::Result<()> {
    loop {
        let buf = r.fill_buf()?;
        match buf.first() {
            Some(b'\n') | Some(b'\r') => r.consume(1),
            _ => return Ok(()),
        }
    }
}

/// Decide between the two layouts by looking at the bytes that follow the
/// first token: text files continue with ASCII decimal numbers.
pub fn sniff_format(path: &Path) -> Result<EmbeddingFormat> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header_line(&mut r, path)?;
    let (_, dim) = parse_header(&header, &path.display().to_string())?;
    let mut token = Vec::new();
    r.read_until(b' ', &mut token).map_err(|e| Error::io(path, e))?;
    let mut probe = Vec::new();
    r.take((dim * 4).min(64) as u64)
        .read_to_end(&mut probe)
        .map_err(|e| Error::io(path, e))?;
    let decimal = |b: &u8| b.is_ascii_digit() || b" .-+eE\n\r\t".contains(b) || b"naNiIfF".contains(b);
    let line = probe.split(|&b| b == b'\n').next().unwrap_or_default();
    Ok(if !line.is_empty() && line.iter().all(decimal) {
        EmbeddingFormat::Text
    } else {
        EmbeddingFormat::Binary
    })
}

/// The OOV vector for `token` under `HashedGaussian(seed)`; a pure function of
/// its three arguments.
pub fn hashed_gaussian(token: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut h = Fnv1a::new();
    h.write(token.as_bytes());
    let mixed = h.finish() ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let normal = Normal::new(0.0, OOV_STDDEV).expect("constant stddev is valid");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}
