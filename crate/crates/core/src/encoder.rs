//! Text embedding backends and vector similarity.
//!
//! Two deterministic backends are provided: a lookup table of precomputed
//! vectors (exported by any external model) and a seeded feature-hashing
//! bag of character n-grams used for tests and synthetic studies.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::numeric::{fnv1a64, pairwise_sum_by, splitmix64};

/// Magic prefix of the binary embedding layout.
pub const BINARY_MAGIC: &[u8; 4] = b"EMB1";

/// Fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("embedding vector must have positive dimension".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Dot product with pairwise summation of the elementwise products.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    pairwise_sum_by(a.len(), &|i| a[i] * b[i])
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Domain(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a.values(), b.values()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Seeded signed feature hashing of per-word character n-grams.
///
/// Each lowercased alphanumeric token is padded as `<token>` and split into
/// character n-grams for every `n` in `min_n..=max_n`. A gram maps to
/// bucket `h % dim` with sign taken from the top bit of `h`, where
/// `h = splitmix64(fnv1a64(seed_le_bytes ++ gram_utf8))`. The count vector
/// is L2-normalized. Because grams are taken per word, the encoding is a
/// bag model: reordering words does not change the vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedNgramEncoder {
    pub dim: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub seed: u64,
    /// Drop `http(s)://` and `www.` tokens before embedding.
    pub strip_urls: bool,
}

impl HashedNgramEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let enc = Self { dim, min_n: 3, max_n: 5, seed, strip_urls: false };
        enc.validate()?;
        Ok(enc)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.min_n == 0 || self.min_n > self.max_n {
            return Err(Error::Config(format!(
                "invalid hashed encoder parameters dim={} ngram={}..={}",
                self.dim, self.min_n, self.max_n
            )));
        }
        Ok(())
    }

    /// Bucket and sign of one gram.
    pub fn bucket(&self, gram: &str) -> (usize, f64) {
        let mut bytes = self.seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(gram.as_bytes());
        let h = splitmix64(fnv1a64(&bytes));
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    /// Character n-grams of a single token, in generation order.
    pub fn grams(&self, token: &str) -> Vec<String> {
        let padded: Vec<char> = format!("<{token}>").chars().collect();
        if padded.len() < self.min_n {
            return vec![padded.iter().collect()];
        }
        let mut out = Vec::new();
        for n in self.min_n..=self.max_n.min(padded.len()) {
            out.extend(padded.windows(n).map(|w| w.iter().collect::<String>()));
        }
        out
    }

    fn tokens(&self, text: &str) -> Vec<String> {
        if !self.strip_urls {
            return tokenize(text);
        }
        let kept: Vec<&str> = text
            .split_whitespace()
            .filter(|t| {
                let l = t.to_ascii_lowercase();
                !(l.starts_with("http://") || l.starts_with("https://") || l.starts_with("www."))
            })
            .collect();
        tokenize(&kept.join(" "))
    }

    /// Signed bucket counts before normalization.
    pub fn counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in self.tokens(text) {
            for g in self.grams(&tok) {
                let (i, s) = self.bucket(&g);
                v[i] += s;
            }
        }
        v
    }

    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.counts(text);
        let norm = dot(&v, &v).sqrt();
        if norm == 0.0 {
            return Err(Error::Domain(format!("text {text:?} encodes to the zero vector")));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        EmbeddingVector::new(v)
    }
}

/// In-memory `id -> vector` table loaded from CSV or the binary layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedTable {
    dim: usize,
    /// Ids are unknown for tables read from the binary layout.
    ids: Vec<Option<String>>,
    hashes: Vec<u64>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<u64, usize>,
}

impl PrecomputedTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn id_hash(id: &str) -> u64 {
        fnv1a64(id.as_bytes())
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        let h = Self::id_hash(&id);
        self.insert_hashed(Some(id), h, vector)
    }

    fn insert_hashed(&mut self, id: Option<String>, h: u64, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Domain(format!("expected dim {}, got {}", self.dim, vector.len())));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite value".into()));
        }
        if self.index.insert(h, self.vectors.len()).is_some() {
            return Err(Error::Integrity(format!("duplicate embedding key {:?} ({h:016x})", id)));
        }
        self.ids.push(id);
        self.hashes.push(h);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(&Self::id_hash(id)).map(|&i| self.vectors[i].as_slice())
    }

    /// CSV `id,v0,...,v{d-1}` with a header row. Floats use shortest
    /// round-trip formatting, so re-serializing a loaded file is stable.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        wtr.write_record(&header)?;
        for ((id, h), v) in self.ids.iter().zip(&self.hashes).zip(&self.vectors) {
            let mut row = vec![id.clone().unwrap_or_else(|| format!("fnv:{h:016x}"))];
            row.extend(v.iter().map(|x| format!("{x:?}")));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Binary layout: `EMB1`, u32 LE dim, then per record a u64 LE FNV-1a
    /// hash of the id followed by `dim` f32 LE values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<binary>", e);
        w.write_all(BINARY_MAGIC).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for (h, v) in self.hashes.iter().zip(&self.vectors) {
            w.write_all(&h.to_le_bytes()).map_err(io)?;
            for x in v {
                w.write_all(&(*x as f32).to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn parse_csv(text: &str, source: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { path: source.to_string(), line, msg };
        let mut table: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || (i == 0 && line.starts_with("id,")) {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim().to_string();
            if id.is_empty() {
                return Err(perr(line_no, "empty id".into()));
            }
            let vals = fields
                .map(|f| {
                    let v: f64 = f.trim().parse().map_err(|_| perr(line_no, format!("invalid number {f:?}")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(perr(line_no, format!("non-finite value {f:?}")))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            let t = table.get_or_insert_with(|| Self::new(vals.len()));
            if vals.is_empty() || vals.len() != t.dim {
                return Err(perr(line_no, format!("expected {} values, found {}", t.dim, vals.len())));
            }
            t.insert(id, vals).map_err(|e| perr(line_no, e.to_string()))?;
        }
        table.ok_or_else(|| perr(1, "no embedding rows".into()))
    }

    pub fn parse_binary(bytes: &[u8], source: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { path: source.to_string(), line, msg };
        if bytes.len() < 8 || &bytes[..4] != BINARY_MAGIC {
            return Err(perr(1, "missing EMB1 header".into()));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(perr(1, "zero dimension".into()));
        }
        let rec = 8 + 4 * dim;
        let body = &bytes[8..];
        if !body.len().is_multiple_of(rec) {
            return Err(perr(body.len() / rec + 1, "truncated record".into()));
        }
        let mut table = Self::new(dim);
        for (k, chunk) in body.chunks_exact(rec).enumerate() {
            let h = u64::from_le_bytes(chunk[..8].try_into().unwrap());
            let v: Vec<f64> = chunk[8..]
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect();
            table
                .insert_hashed(None, h, v)
                .map_err(|e| perr(k + 1, e.to_string()))?;
        }
        Ok(table)
    }
}

/// Loads a precomputed table, detecting the binary layout by its magic bytes.
pub fn load_precomputed(path: &Path) -> Result<EncoderBackend> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let table = if bytes.starts_with(BINARY_MAGIC) {
        PrecomputedTable::parse_binary(&bytes, &source)?
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            path: source.clone(),
            line: 1,
            msg: "file is neither EMB1 binary nor UTF-8 CSV".into(),
        })?;
        PrecomputedTable::parse_csv(&text, &source)?
    };
    Ok(EncoderBackend::Precomputed(table))
}

/// Deterministic embedding backend.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderBackend {
    Precomputed(PrecomputedTable),
    HashedNgram(HashedNgramEncoder),
}

impl EncoderBackend {
    pub fn dim(&self) -> usize {
        match self {
            EncoderBackend::Precomputed(t) => t.dim(),
            EncoderBackend::HashedNgram(h) => h.dim,
        }
    }

    /// Precomputed tables are keyed by document id; the hashed backend
    /// embeds the text.
    pub fn encode(&self, id: &str, text: &str) -> Result<EmbeddingVector> {
        match self {
            EncoderBackend::Precomputed(t) => t
                .get(id)
                .ok_or_else(|| Error::MissingKey(id.to_string()))
                .and_then(|v| EmbeddingVector::new(v.to_vec())),
            EncoderBackend::HashedNgram(h) => h.encode_text(text),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = ev(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        // 32 / sqrt(1078), evaluated to 30 digits in exact arithmetic
        let expected = 0.974_631_846_197_076_f64;
        let got = cosine_similarity(&ev(&[1.0, 2.0, 3.0]), &ev(&[4.0, 5.0, 6.0])).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got}");
    }

    #[test]
    fn cosine_domain_errors() {
        assert!(cosine_similarity(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])).is_err());
        assert!(cosine_similarity(&ev(&[1.0]), &ev(&[1.0, 0.0])).is_err());
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn hashed_is_deterministic() {
        let enc = HashedNgramEncoder::new(64, 7).unwrap();
        let a = enc.encode_text("the ban took effect").unwrap();
        let b = enc.encode_text("the ban took effect").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_token_difference_matches_gram_construction() {
        let enc = HashedNgramEncoder::new(128, 3).unwrap();
        let a = enc.counts("sanctions imposed today");
        let b = enc.counts("sanctions lifted today");
        // oracle: the count difference is exactly the signed grams of the swapped words
        let mut diff = vec![0.0; 128];
        for g in enc.grams("imposed") {
            let (i, s) = enc.bucket(&g);
            diff[i] += s;
        }
        for g in enc.grams("lifted") {
            let (i, s) = enc.bucket(&g);
            diff[i] -= s;
        }
        let got: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert_eq!(got, diff);
        assert_ne!(
            enc.encode_text("sanctions imposed today").unwrap(),
            enc.encode_text("sanctions lifted today").unwrap()
        );
    }

    #[test]
    fn grams_of_short_token() {
        let enc = HashedNgramEncoder::new(8, 0).unwrap();
        assert_eq!(enc.grams("a"), vec!["<a>".to_string()]);
        assert_eq!(enc.grams("ab"), vec!["<ab", "ab>", "<ab>"]);
    }

    #[test]
    fn url_toggle() {
        let mut enc = HashedNgramEncoder::new(64, 1).unwrap();
        enc.strip_urls = true;
        assert_eq!(
            enc.encode_text("news https://t.co/xyz today").unwrap(),
            enc.encode_text("news today").unwrap()
        );
    }

    #[test]
    fn precomputed_lookup_and_missing_key() {
        let b = EncoderBackend::Precomputed(PrecomputedTable::parse_csv("id,v0,v1\nid1,1,0\n", "t").unwrap());
        assert_eq!(b.encode("id1", "").unwrap().values(), &[1.0, 0.0]);
        match b.encode("nope", "") {
            Err(Error::MissingKey(id)) => assert_eq!(id, "nope"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_parse_errors_carry_line_numbers() {
        let ragged = PrecomputedTable::parse_csv("id,v0,v1\na,1,2\nb,1\n", "t").unwrap_err();
        assert!(matches!(ragged, Error::Parse { line: 3, .. }), "{ragged}");
        let nan = PrecomputedTable::parse_csv("a,1,2\nb,NaN,1\nc,0,1\n", "t").unwrap_err();
        assert!(matches!(nan, Error::Parse { line: 2, .. }), "{nan}");
    }

    #[test]
    fn binary_roundtrip() {
        let mut t = PrecomputedTable::new(3);
        t.insert("x", vec![0.5, -1.0, 2.0]).unwrap();
        t.insert("y", vec![1.0, 0.0, 0.25]).unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 2 * (8 + 12));
        let back = PrecomputedTable::parse_binary(&buf, "t").unwrap();
        assert_eq!(back.get("y").unwrap(), &[1.0, 0.0, 0.25]);
        assert!(PrecomputedTable::parse_binary(&buf[..buf.len() - 1], "t").is_err());
    }
}
