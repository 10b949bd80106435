//! GloVe-style text embeddings and token lookup.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numeric::Vector;

/// Pretrained word vectors plus the out-of-vocabulary policy.
///
/// Lookups try the token verbatim, then its lowercase form. Misses return
/// `oov_vector` (zeros unless replaced) and are counted; the counters are
/// atomic so a shared table can serve concurrent encoders.
#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: HashMap<String, Vector>,
    oov_vector: Vector,
    duplicates: usize,
    lookups: AtomicU64,
    misses: AtomicU64,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        EmbeddingTable {
            dim: self.dim,
            vocab: self.vocab.clone(),
            oov_vector: self.oov_vector.clone(),
            duplicates: self.duplicates,
            lookups: AtomicU64::new(self.lookups.load(Ordering::Relaxed)),
            misses: AtomicU64::new(self.misses.load(Ordering::Relaxed)),
        }
    }
}

/// Snapshot of the lookup counters for one corpus pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OovStats {
    pub lookups: u64,
    pub misses: u64,
}

impl OovStats {
    pub fn rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.misses as f64 / self.lookups as f64
        }
    }
}

impl EmbeddingTable {
    /// An empty table; useful for tests and programmatic construction.
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vocab: HashMap::new(),
            oov_vector: Vector::zeros(dim),
            duplicates: 0,
            lookups: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Inserts or replaces a token; returns true when it replaced an entry.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vector) -> Result<bool> {
        if vector.dim() != self.dim {
            return Err(Error::shape("embedding insert", format!("[{}]", self.dim), format!("[{}]", vector.dim())));
        }
        Ok(self.vocab.insert(token.into(), vector).is_some())
    }

    pub fn from_reader<R: Read>(reader: R, expected_dim: usize) -> Result<Self> {
        if expected_dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut table = EmbeddingTable::new(expected_dim);
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields.next().expect("non-empty line has a field");
            let values = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("unparseable number {f:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != expected_dim {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {expected_dim} values, got {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "non-finite embedding value".into(),
                });
            }
            if table.insert(token, Vector::from_vec(values))? {
                table.duplicates += 1;
            }
        }
        if table.vocab.is_empty() {
            return Err(Error::EmptyEmbeddings);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: usize) -> Result<Self> {
        Self::from_reader(File::open(path)?, expected_dim)
    }

    /// Writes the table in GloVe text format, tokens sorted for stable output.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut tokens: Vec<&String> = self.vocab.keys().collect();
        tokens.sort();
        for token in tokens {
            write!(out, "{token}")?;
            for v in self.vocab[token].iter() {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Number of lines whose token had already been seen (last one wins).
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn oov_vector(&self) -> &Vector {
        &self.oov_vector
    }

    pub fn set_oov_vector(&mut self, vector: Vector) -> Result<()> {
        if vector.dim() != self.dim {
            return Err(Error::shape("oov vector", format!("[{}]", self.dim), format!("[{}]", vector.dim())));
        }
        self.oov_vector = vector;
        Ok(())
    }

    /// Resolves a token without touching the counters.
    pub fn get(&self, token: &str) -> Option<&Vector> {
        self.vocab.get(token).or_else(|| {
            let lower = token.to_lowercase();
            if lower != token {
                self.vocab.get(&lower)
            } else {
                None
            }
        })
    }

    pub fn lookup(&self, token: &str) -> &Vector {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        match self.get(token) {
            Some(v) => v,
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                &self.oov_vector
            }
        }
    }

    pub fn oov_stats(&self) -> OovStats {
        OovStats {
            lookups: self.lookups.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Returns the counters accumulated since the last reset and zeroes them.
    pub fn reset_counters(&self) -> OovStats {
        OovStats {
            lookups: self.lookups.swap(0, Ordering::Relaxed),
            misses: self.misses.swap(0, Ordering::Relaxed),
        }
    }
}
