//! Raw text to encoder input.
//!
//! The pipeline is `normalize_text` → `segment_sentences` → `tokenize` →
//! embedding lookup, truncated to the first `max_sentences` sentences and the
//! first `max_words` tokens of each sentence.
//!
//! Normalization patterns (applied in this order, repeated until the text
//! stops changing):
//!
//! * URL: a `http://`, `https://`, `ftp://` or `www.` prefix followed by
//!   non-space characters, not ending in trailing punctuation → `<url>`
//! * email: `local@domain.tld` → `<email>`
//! * phone: digit groups separated by space, `.` or `-` (`555-123-4567`,
//!   `(555) 123-4567`, `+44 20 7946 0958`) or `+` and 7–15 digits → `<phone>`

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numeric::Vector;
use crate::siamese::Label;

pub const URL_TOKEN: &str = "<url>";
pub const EMAIL_TOKEN: &str = "<email>";
pub const PHONE_TOKEN: &str = "<phone>";

/// Lowercased words (without the trailing period) that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc", "e.g", "i.e", "inc", "ltd", "co",
    "corp", "no", "fig", "approx", "dept", "est", "gen", "gov", "lt", "col", "capt", "sgt", "rev", "hon",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "u.s", "a.m", "p.m",
];

static URL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)(?:(?:https?|ftp)://|www\.)(?:[^\s<>"]*[^\s<>".,;:!?'()\[\]{}])?"#).unwrap()
});
static EMAIL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}").unwrap()
});
static PHONE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?P<pre>^|[^\w+])(?:(?:\+\d{1,3}[ .\-]?)?(?:\(\d{2,4}\)[ .\-]?|\d{2,4}[ .\-])\d{3,4}[ .\-]\d{3,4}|\+\d{7,15})\b",
    )
    .unwrap()
});
static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"<url>|<email>|<phone>|[\p{L}\p{N}\p{M}]+(?:['’\-][\p{L}\p{N}\p{M}]+)*|\S").unwrap()
});

fn normalize_once(text: &str) -> String {
    let text = URL_RE.replace_all(text, URL_TOKEN);
    let text = EMAIL_RE.replace_all(&text, EMAIL_TOKEN);
    let text = PHONE_RE.replace_all(&text, format!("${{pre}}{PHONE_TOKEN}").as_str());
    text.into_owned()
}

/// Replaces URLs, email addresses and phone numbers with universal tokens.
pub fn normalize_text(raw: &str) -> String {
    // Every rewrite removes a digit, `@` or URL prefix and adds none, so
    // this reaches a fixed point.
    let mut current = normalize_once(raw);
    loop {
        let next = normalize_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '»')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '“' | '‘' | '«')
}

/// True when the period ending at byte `dot` belongs to an abbreviation or initial.
fn is_abbreviation(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before.rfind(char::is_whitespace).map_or(0, |i| i + before[i..].chars().next().unwrap().len_utf8());
    let word = before[word_start..].trim_start_matches(is_opener);
    if word.is_empty() {
        return false;
    }
    let mut chars = word.chars();
    let first = chars.next().unwrap();
    if chars.next().is_none() && first.is_uppercase() {
        return true;
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Rule-based sentence splitter.
///
/// A sentence ends at a run of `.`/`!`/`?` (plus closing quotes or brackets)
/// followed by end of text, by a line break, or by whitespace and an
/// uppercase letter. A lone `.` after an abbreviation from [`ABBREVIATIONS`]
/// or a single uppercase initial does not end a sentence. Line breaks always
/// end a sentence. Sentences are trimmed; whitespace-only pieces are dropped.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut push = |piece: &str| {
        let piece = piece.trim();
        if !piece.is_empty() {
            sentences.push(piece.to_string());
        }
    };

    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |k: usize| chars.get(k).map_or(text.len(), |&(b, _)| b);
    let mut start = 0;
    let mut k = 0;
    while k < chars.len() {
        let (pos, c) = chars[k];
        if c == '\n' {
            push(&text[start..pos]);
            start = pos + 1;
            k += 1;
            continue;
        }
        if !is_terminator(c) {
            k += 1;
            continue;
        }
        let run_start = k;
        let mut j = k;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let lone_period = j - run_start == 1 && c == '.';
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let cut = byte_at(j);
        let mut w = j;
        while w < chars.len() && chars[w].1.is_whitespace() && chars[w].1 != '\n' {
            w += 1;
        }
        let boundary = if j == chars.len() || w == chars.len() || chars[w].1 == '\n' {
            true
        } else if w > j {
            let mut n = w;
            while n < chars.len() && is_opener(chars[n].1) {
                n += 1;
            }
            n < chars.len() && chars[n].1.is_uppercase() && !(lone_period && is_abbreviation(text, pos))
        } else {
            false
        };
        if boundary {
            push(&text[start..cut]);
            start = cut;
        }
        k = j.max(k + 1);
    }
    push(&text[start..]);
    sentences
}

/// Splits a sentence into words, single punctuation marks and universal tokens.
pub fn tokenize(sentence: &str) -> Vec<String> {
    TOKEN_RE.find_iter(sentence).map(|m| m.as_str().to_string()).collect()
}

/// Full text pipeline up to tokens; sentences without tokens are dropped.
pub fn tokenize_document(text: &str) -> Vec<Vec<String>> {
    segment_sentences(&normalize_text(text))
        .iter()
        .map(|s| tokenize(s))
        .filter(|t| !t.is_empty())
        .collect()
}

/// One verification problem: does `unknown` share an author with `known`?
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct VerificationInstance {
    pub known: Vec<String>,
    pub unknown: String,
    pub label: Label,
}

#[derive(Deserialize)]
struct RawInstance {
    known: Vec<String>,
    unknown: String,
    label: Label,
}

impl TryFrom<RawInstance> for VerificationInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        VerificationInstance::new(raw.known, raw.unknown, raw.label)
    }
}

impl VerificationInstance {
    pub fn new(known: Vec<String>, unknown: String, label: Label) -> Result<Self> {
        if known.is_empty() {
            return Err(Error::invalid("instance has no known documents"));
        }
        Ok(VerificationInstance { known, unknown, label })
    }

    /// The known documents joined in their current order.
    pub fn known_text(&self) -> String {
        self.known.join("\n")
    }
}

/// Joins the known documents in `order`, one line break between documents.
pub fn concatenate_known(instance: &VerificationInstance, order: &[usize]) -> Result<String> {
    let n = instance.known.len();
    let mut seen = vec![false; n];
    if order.len() != n || !order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
        return Err(Error::invalid(format!("{order:?} is not a permutation of 0..{n}")));
    }
    Ok(order.iter().map(|&i| instance.known[i].as_str()).collect::<Vec<_>>().join("\n"))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<VerificationInstance>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut out: W, instances: &[VerificationInstance]) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A document as the encoder sees it: a logical `[max_sentences × max_words × dim]`
/// tensor of word vectors.
///
/// Only the kept tokens are stored; every padded position reads as the zero
/// vector through [`EncodedDocument::word`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDocument {
    sentences: Vec<Vec<Vector>>,
    max_words: usize,
    max_sentences: usize,
    zero: Vector,
}

impl EncodedDocument {
    /// Builds a document from per-sentence word vectors, truncating to the limits.
    pub fn from_sentences(mut sentences: Vec<Vec<Vector>>, dim: usize, max_words: usize, max_sentences: usize) -> Result<Self> {
        if max_words == 0 || max_sentences == 0 {
            return Err(Error::invalid("max_words and max_sentences must be at least 1"));
        }
        sentences.truncate(max_sentences);
        if sentences.is_empty() {
            return Err(Error::EmptyDocument);
        }
        for s in &mut sentences {
            if s.is_empty() {
                return Err(Error::invalid("sentence without tokens"));
            }
            s.truncate(max_words);
            if let Some(bad) = s.iter().find(|v| v.dim() != dim) {
                return Err(Error::shape("encoded document", format!("[{dim}]"), format!("[{}]", bad.dim())));
            }
        }
        Ok(EncodedDocument {
            sentences,
            max_words,
            max_sentences,
            zero: Vector::zeros(dim),
        })
    }

    /// `(max_sentences, max_words, dim)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.max_sentences, self.max_words, self.zero.dim())
    }

    pub fn dim(&self) -> usize {
        self.zero.dim()
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }

    pub fn max_sentences(&self) -> usize {
        self.max_sentences
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn sent_lengths(&self) -> Vec<usize> {
        self.sentences.iter().map(Vec::len).collect()
    }

    /// The unpadded word vectors of sentence `n`.
    pub fn sentence(&self, n: usize) -> &[Vector] {
        &self.sentences[n]
    }

    /// Word vector at `(n, t)`; zero for padding. Panics outside the shape.
    pub fn word(&self, n: usize, t: usize) -> &[f64] {
        assert!(n < self.max_sentences && t < self.max_words, "({n}, {t}) outside {:?}", self.shape());
        self.sentences.get(n).and_then(|s| s.get(t)).unwrap_or(&self.zero)
    }

    /// Same content under different padding limits (which must not truncate).
    pub fn repadded(&self, max_words: usize, max_sentences: usize) -> Result<Self> {
        if max_sentences < self.num_sentences() || self.sentences.iter().any(|s| s.len() > max_words) {
            return Err(Error::invalid("repadding would truncate the document"));
        }
        EncodedDocument::from_sentences(self.sentences.clone(), self.dim(), max_words, max_sentences)
    }

    /// The full padded tensor, sentence-major then word-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let (s, w, d) = self.shape();
        let mut out = Vec::with_capacity(s * w * d);
        for n in 0..s {
            for t in 0..w {
                out.extend_from_slice(self.word(n, t));
            }
        }
        out
    }
}

/// Runs the text pipeline and looks every kept token up in `table`.
pub fn encode_document(text: &str, table: &EmbeddingTable, max_words: usize, max_sentences: usize) -> Result<EncodedDocument> {
    if max_words == 0 || max_sentences == 0 {
        return Err(Error::invalid("max_words and max_sentences must be at least 1"));
    }
    let mut tokens = tokenize_document(text);
    if tokens.is_empty() {
        return Err(Error::EmptyDocument);
    }
    tokens.truncate(max_sentences);
    let sentences = tokens
        .iter()
        .map(|sent| sent.iter().take(max_words).map(|tok| table.lookup(tok).clone()).collect())
        .collect();
    EncodedDocument::from_sentences(sentences, table.dim(), max_words, max_sentences)
}
