//! GloVe text-format word vectors and fixed-shape sequence encoding.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neuralcore::Tensor;
use crate::textprep::TokenSeq;

pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_MAX_LEN: usize = 64;

/// Frozen token → vector map. Every vector has length `dim` and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            order: Vec::new(),
            vectors: HashMap::new(),
        }
    }

    /// Inserts unless the token is already present; returns whether it was inserted.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{token}` has {} components, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for `{token}`")));
        }
        if self.vectors.contains_key(token) {
            return Ok(false);
        }
        self.order.push(token.to_string());
        self.vectors.insert(token.to_string(), vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Tokens in insertion (file) order.
    pub fn tokens(&self) -> &[String] {
        &self.order
    }

    /// Uniform random vectors in `[-1, 1)` for each token, seeded.
    pub fn random(tokens: &[String], dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Self::new(dim);
        for t in tokens {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            table.insert(t, v).expect("finite random vector");
        }
        table
    }

    /// Writes the table in GloVe text format using shortest round-trip decimals.
    pub fn write_glove(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for t in &self.order {
            let mut line = t.clone();
            for v in &self.vectors[t] {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `token v1 ... vd` lines. Blank lines are skipped; duplicates keep the
/// first occurrence and log a warning.
pub fn load_glove(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::new(expected_dim);
    let mut duplicates = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split(' ').filter(|p| !p.is_empty());
        let Some(token) = parts.next() else {
            continue;
        };
        let values: Vec<&str> = parts.map(str::trim_end).collect();
        if values.len() != expected_dim {
            return Err(Error::Glove {
                line: lineno,
                message: format!("expected {expected_dim} values, found {}", values.len()),
            });
        }
        let mut vector = Vec::with_capacity(expected_dim);
        for raw in values {
            let v: f64 = raw.parse().map_err(|_| Error::Glove {
                line: lineno,
                message: format!("non-numeric component `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Glove {
                    line: lineno,
                    message: format!("non-finite component `{raw}`"),
                });
            }
            vector.push(v);
        }
        if !table.insert(token, vector)? {
            duplicates += 1;
            log::warn!("{}:{lineno}: duplicate token `{token}` ignored", path.display());
        }
    }
    if table.is_empty() {
        return Err(Error::Empty(format!("{}: no embedding vectors", path.display())));
    }
    if duplicates > 0 {
        log::warn!("{}: {duplicates} duplicate token(s) ignored", path.display());
    }
    Ok(table)
}

/// A `max_len × dim` matrix whose rows past `valid_len` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSeq {
    pub matrix: Tensor,
    pub valid_len: usize,
}

/// Head-truncates to `max_len`, maps OOV tokens to zero rows and zero-pads.
pub fn encode(tokens: &TokenSeq, table: &EmbeddingTable, max_len: usize) -> EncodedSeq {
    assert!(max_len >= 1, "max_len must be at least 1");
    let dim = table.dim();
    let mut data = vec![0.0; max_len * dim];
    let valid_len = tokens.len().min(max_len);
    for (row, tok) in tokens.tokens().iter().take(max_len).enumerate() {
        if let Some(v) = table.get(tok) {
            data[row * dim..(row + 1) * dim].copy_from_slice(v);
        }
    }
    EncodedSeq {
        matrix: Tensor::new(vec![max_len, dim], data).expect("shape matches data"),
        valid_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toks(words: &[&str]) -> TokenSeq {
        TokenSeq::new(words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn loads_vectors() {
        let f = tmp("the 0.1 0.2\n");
        let t = load_glove(f.path(), 2).unwrap();
        assert_eq!(t.get("the"), Some(&[0.1, 0.2][..]));
    }

    #[test]
    fn wrong_arity_reports_line() {
        let f = tmp("the 0.1\n");
        match load_glove(f.path(), 2) {
            Err(Error::Glove { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        let f = tmp("a 1 2\nb 1 x\n");
        match load_glove(f.path(), 2) {
            Err(Error::Glove { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("non-numeric"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_lines_and_duplicates() {
        let f = tmp("a 1 2\nb 3 4\nc 5 6\n");
        assert_eq!(load_glove(f.path(), 2).unwrap().len(), 3);
        let f = tmp("a 1 2\na 3 4\n");
        let t = load_glove(f.path(), 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a"), Some(&[1.0, 2.0][..]));
        assert!(load_glove(tmp("").path(), 2).is_err());
    }

    #[test]
    fn bundled_tiny_table() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/glove_tiny.txt");
        let t = load_glove(&path, 4).unwrap();
        assert!(t.len() <= 50);
        assert!(t.contains("vaccine"));
    }

    #[test]
    fn encode_pads_and_truncates() {
        let mut t = EmbeddingTable::new(2);
        t.insert("a", vec![1.0, 2.0]).unwrap();
        t.insert("b", vec![3.0, 4.0]).unwrap();
        let e = encode(&toks(&["a", "b"]), &t, 4);
        assert_eq!(e.valid_len, 2);
        assert_eq!(e.matrix.shape(), &[4, 2]);
        assert_eq!(e.matrix.data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);

        let e = encode(&toks(&["zzz", "a"]), &t, 4);
        assert_eq!(e.valid_len, 2);
        assert_eq!(&e.matrix.data()[..4], &[0.0, 0.0, 1.0, 2.0]);

        let e = encode(&toks(&["a", "b", "a", "b", "a"]), &t, 4);
        assert_eq!(e.valid_len, 4);
        assert_eq!(e.matrix.data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);

        let e = encode(&toks(&[]), &t, 3);
        assert_eq!(e.valid_len, 0);
        assert!(e.matrix.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn write_then_load_roundtrip() {
        let table = EmbeddingTable::random(&["x".into(), "y".into()], 3, 9);
        let f = tempfile::NamedTempFile::new().unwrap();
        table.write_glove(f.path()).unwrap();
        assert_eq!(load_glove(f.path(), 3).unwrap(), table);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shape_is_fixed(words in proptest::collection::vec("[a-d]", 0..12), max_len in 1usize..8) {
                let table = EmbeddingTable::random(&["a".into(), "b".into()], 3, 1);
                let seq = TokenSeq::new(words.clone()).unwrap();
                let e = encode(&seq, &table, max_len);
                prop_assert_eq!(e.matrix.shape(), &[max_len, 3]);
                prop_assert_eq!(e.valid_len, words.len().min(max_len));
                prop_assert!(e.matrix.data()[e.valid_len * 3..].iter().all(|&v| v == 0.0));
                prop_assert_eq!(encode(&seq, &table, max_len), e);
            }
        }
    }
}
