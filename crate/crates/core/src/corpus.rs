//! Document-feature matrices and the operations that reshape them.
//!
//! A [`Corpus`] stores counts in compressed row storage: each document's
//! nonzero `(term, count)` pairs are contiguous, which is the access pattern
//! of the E-step.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::LabelStore;

/// Prefix used for vocabulary slots declared by the header but never named.
pub const PLACEHOLDER_PREFIX: &str = "#";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(terms: Vec<String>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { terms, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.terms
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `term`, inserting it at the end if absent.
    pub fn intern(&mut self, term: &str) -> usize {
        if let Some(&i) = self.index.get(term) {
            return i;
        }
        let i = self.terms.len();
        self.terms.push(term.to_owned());
        self.index.insert(term.to_owned(), i);
        i
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// SHA-256 over the ordered term list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Immutable N×V count matrix with per-document metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab: Vocabulary,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    counts: Vec<u32>,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    lengths: Vec<u64>,
    raw_texts: BTreeMap<String, String>,
}

/// Accumulates `(doc, term, count)` triplets into a [`Corpus`].
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    vocab: Vocabulary,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    rows: Vec<BTreeMap<u32, u32>>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vocabulary(vocab: Vocabulary) -> Self {
        CorpusBuilder {
            vocab,
            ..Self::default()
        }
    }

    /// Declares a document (possibly empty) and returns its row index.
    pub fn document(&mut self, doc_id: &str) -> usize {
        if let Some(&i) = self.doc_index.get(doc_id) {
            return i;
        }
        let i = self.doc_ids.len();
        self.doc_ids.push(doc_id.to_owned());
        self.doc_index.insert(doc_id.to_owned(), i);
        self.rows.push(BTreeMap::new());
        i
    }

    pub fn term(&mut self, term: &str) -> usize {
        self.vocab.intern(term)
    }

    /// Records a count. Zero counts only declare the document and term.
    /// Returns `false` when the pair already holds a positive count.
    pub fn insert(&mut self, doc_id: &str, term: &str, count: u32) -> bool {
        let d = self.document(doc_id);
        let t = self.term(term) as u32;
        if count == 0 {
            return true;
        }
        match self.rows[d].entry(t) {
            std::collections::btree_map::Entry::Occupied(_) => false,
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(count);
                true
            }
        }
    }

    /// Adds to an existing count instead of rejecting duplicates.
    pub fn add(&mut self, doc_id: &str, term: &str, count: u32) {
        let d = self.document(doc_id);
        let t = self.term(term) as u32;
        if count > 0 {
            *self.rows[d].entry(t).or_insert(0) += count;
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn build(self) -> Corpus {
        let mut indptr = Vec::with_capacity(self.rows.len() + 1);
        let mut indices = Vec::new();
        let mut counts = Vec::new();
        let mut lengths = Vec::with_capacity(self.rows.len());
        indptr.push(0);
        for row in &self.rows {
            let mut len = 0u64;
            for (&t, &c) in row {
                indices.push(t);
                counts.push(c);
                len += u64::from(c);
            }
            indptr.push(indices.len());
            lengths.push(len);
        }
        Corpus {
            vocab: self.vocab,
            indptr,
            indices,
            counts,
            doc_ids: self.doc_ids,
            doc_index: self.doc_index,
            lengths,
            raw_texts: BTreeMap::new(),
        }
    }
}

impl Corpus {
    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, i: usize) -> &str {
        &self.doc_ids[i]
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_index.get(doc_id).copied()
    }

    pub fn lengths(&self) -> &[u64] {
        &self.lengths
    }

    /// Term indices and counts of document `i`, in ascending term order.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[u32]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.counts[a..b])
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn raw_text(&self, doc_id: &str) -> Option<&str> {
        self.raw_texts.get(doc_id).map(String::as_str)
    }

    pub fn raw_texts(&self) -> &BTreeMap<String, String> {
        &self.raw_texts
    }

    /// Attaches raw texts; every key must name a document of the corpus.
    pub fn set_raw_texts(&mut self, texts: BTreeMap<String, String>) -> Result<()> {
        if let Some(unknown) = texts.keys().find(|k| !self.doc_index.contains_key(*k)) {
            return Err(Error::UnknownDocument(unknown.clone()));
        }
        self.raw_texts = texts;
        Ok(())
    }

    fn reindex(&mut self) {
        self.doc_index = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i))
            .collect();
    }

    /// New corpus holding the given rows, in the given order, over the same
    /// vocabulary. Raw texts of the kept documents carry over.
    pub fn subset(&self, docs: &[usize]) -> Corpus {
        let mut indptr = Vec::with_capacity(docs.len() + 1);
        let mut indices = Vec::new();
        let mut counts = Vec::new();
        let mut lengths = Vec::with_capacity(docs.len());
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut raw_texts = BTreeMap::new();
        indptr.push(0);
        for &d in docs {
            let (t, c) = self.row(d);
            indices.extend_from_slice(t);
            counts.extend_from_slice(c);
            indptr.push(indices.len());
            lengths.push(self.lengths[d]);
            let id = self.doc_ids[d].clone();
            if let Some(text) = self.raw_texts.get(&id) {
                raw_texts.insert(id.clone(), text.clone());
            }
            doc_ids.push(id);
        }
        let mut out = Corpus {
            vocab: self.vocab.clone(),
            indptr,
            indices,
            counts,
            doc_ids,
            doc_index: HashMap::new(),
            lengths,
            raw_texts,
        };
        out.reindex();
        out
    }

    /// Drops terms that occur in fewer than `min_docs` documents. Kept terms
    /// retain their relative order; documents may become empty.
    pub fn prune_terms(&self, min_docs: usize) -> Corpus {
        let mut df = vec![0usize; self.n_terms()];
        for &t in &self.indices {
            df[t as usize] += 1;
        }
        let mut vocab = Vocabulary::new();
        let mut remap = vec![None; self.n_terms()];
        for (t, &n) in df.iter().enumerate() {
            if n >= min_docs {
                remap[t] = Some(vocab.intern(self.vocab.term(t)) as u32);
            }
        }
        let mut b = CorpusBuilder::with_vocabulary(vocab.clone());
        for i in 0..self.n_docs() {
            let id = self.doc_id(i);
            b.document(id);
            let (terms, counts) = self.row(i);
            for (&t, &n) in terms.iter().zip(counts) {
                if let Some(nt) = remap[t as usize] {
                    b.insert(id, vocab.term(nt as usize), n);
                }
            }
        }
        let mut out = b.build();
        out.raw_texts = self.raw_texts.clone();
        out
    }

    /// Checks the structural invariants: row sums equal lengths, stored
    /// counts are positive, ids are unique and term indices in range.
    pub fn validate(&self) -> Result<()> {
        if self.indptr.len() != self.doc_ids.len() + 1 || self.lengths.len() != self.doc_ids.len() {
            return Err(Error::invalid("corpus", "row arrays disagree on document count"));
        }
        if self.doc_index.len() != self.doc_ids.len() {
            return Err(Error::invalid("corpus", "document ids are not unique"));
        }
        for i in 0..self.n_docs() {
            let (t, c) = self.row(i);
            if c.contains(&0) {
                return Err(Error::invalid("corpus", format!("zero count stored in row {i}")));
            }
            if t.iter().any(|&x| x as usize >= self.n_terms()) {
                return Err(Error::invalid("corpus", format!("term index out of range in row {i}")));
            }
            let sum: u64 = c.iter().map(|&x| u64::from(x)).sum();
            if sum != self.lengths[i] {
                return Err(Error::invalid("corpus", format!("row {i} sums to {sum}, length says {}", self.lengths[i])));
            }
        }
        Ok(())
    }

    /// Writes the corpus in the triplet format read by [`read_dfm`].
    ///
    /// Terms are declared up front with zero counts on the first document
    /// so vocabulary order survives a round trip.
    pub fn write_dfm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n_docs(), self.n_terms())?;
        if self.n_docs() > 0 {
            let first = &self.doc_ids[0];
            for t in self.vocab.terms() {
                writeln!(w, "{first}\t{t}\t0")?;
            }
        }
        for i in 0..self.n_docs() {
            let (t, c) = self.row(i);
            if t.is_empty() {
                writeln!(w, "{}", self.doc_ids[i])?;
            }
            for (&ti, &ci) in t.iter().zip(c) {
                writeln!(w, "{}\t{}\t{}", self.doc_ids[i], self.vocab.term(ti as usize), ci)?;
            }
        }
        Ok(())
    }

    pub fn write_texts<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for id in &self.doc_ids {
            if let Some(text) = self.raw_texts.get(id) {
                writeln!(w, "{id}\t{}", escape_text(text))?;
            }
        }
        Ok(())
    }
}

/// Loads a corpus from a DFM triplet file and an optional raw-texts file.
pub fn load_corpus(dfm_path: &Path, texts_path: Option<&Path>) -> Result<Corpus> {
    let file = File::open(dfm_path).map_err(|e| Error::io(dfm_path, e))?;
    let mut corpus = read_dfm(BufReader::new(file), &dfm_path.display().to_string())?;
    if let Some(tp) = texts_path {
        let file = File::open(tp).map_err(|e| Error::io(tp, e))?;
        let texts = read_texts(BufReader::new(file), &tp.display().to_string())?;
        corpus.set_raw_texts(texts)?;
    }
    Ok(corpus)
}

/// Parses the DFM triplet format.
///
/// The first line is `N V`. Every other non-blank line is either
/// `doc_id<TAB>term<TAB>count` or a bare `doc_id` declaring a document with
/// no tokens. Zero counts declare the document and term without storing an
/// entry. Documents and terms are indexed in order of first appearance; the
/// number of documents must equal `N`, and when fewer than `V` terms are
/// named the vocabulary is padded with placeholder terms `#<index>`.
pub fn read_dfm<R: BufRead>(reader: R, source: &str) -> Result<Corpus> {
    let perr = |line: usize, message: String| Error::Parse {
        path: source.to_owned(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let (n_docs, n_terms) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(perr(1, "missing `N V` header".into()));
        };
        let line = line.map_err(|e| perr(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(n), Some(v), None) => break (n, v),
            _ => return Err(perr(i + 1, format!("expected `N V` header, found `{line}`"))),
        }
    };

    let mut b = CorpusBuilder::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| perr(lineno, e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [doc] => {
                b.document(doc);
            }
            [doc, term, count] => {
                if doc.is_empty() || term.is_empty() {
                    return Err(perr(lineno, "empty document id or term".into()));
                }
                let count: i64 = count
                    .trim()
                    .parse()
                    .map_err(|_| perr(lineno, format!("count `{count}` is not an integer")))?;
                if count < 0 {
                    return Err(perr(lineno, format!("negative count {count}")));
                }
                let count = u32::try_from(count).map_err(|_| perr(lineno, format!("count {count} too large")))?;
                if !b.insert(doc, term, count) {
                    return Err(perr(lineno, format!("duplicate entry for ({doc}, {term})")));
                }
            }
            _ => {
                return Err(perr(
                    lineno,
                    format!("expected `doc_id<TAB>term<TAB>count`, found {} fields", fields.len()),
                ))
            }
        }
        if b.n_docs() > n_docs {
            return Err(perr(lineno, format!("more than {n_docs} documents declared by header")));
        }
        if b.n_terms() > n_terms {
            return Err(perr(lineno, format!("more than {n_terms} terms declared by header")));
        }
    }
    if b.n_docs() != n_docs {
        return Err(perr(0, format!("header declares {n_docs} documents, found {}", b.n_docs())));
    }
    while b.n_terms() < n_terms {
        let name = format!("{PLACEHOLDER_PREFIX}{}", b.n_terms());
        b.term(&name);
    }
    let corpus = b.build();
    corpus.validate()?;
    Ok(corpus)
}

/// Parses `doc_id<TAB>text` records; `\t`, `\n` and `\\` are unescaped.
pub fn read_texts<R: BufRead>(reader: R, source: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            path: source.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        let Some((id, text)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: source.to_owned(),
                line: i + 1,
                message: "expected `doc_id<TAB>text`".into(),
            });
        };
        out.insert(id.to_owned(), unescape_text(text));
    }
    Ok(out)
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(c) => {
                out.push('\\');
                out.push(c);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Lowercased alphanumeric unigrams.
///
/// A convenience for building small corpora from raw text; it does no
/// stemming or stopword removal.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Builds a unigram corpus from `(doc_id, text)` pairs, keeping the text.
/// Tokens shorter than `min_len` characters are dropped.
pub fn corpus_from_texts<'a, I>(docs: I, min_len: usize) -> Corpus
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut b = CorpusBuilder::new();
    let mut texts = BTreeMap::new();
    for (id, text) in docs {
        b.document(id);
        for tok in tokenize(text).filter(|t| t.chars().count() >= min_len) {
            b.add(id, &tok, 1);
        }
        texts.insert(id.to_owned(), text.to_owned());
    }
    let mut c = b.build();
    c.raw_texts = texts;
    c
}

/// Disjoint train/test partition of a corpus, as ascending row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// Everything in training, nothing held out.
    pub fn all_train(n_docs: usize) -> Self {
        SplitSpec {
            train: (0..n_docs).collect(),
            test: Vec::new(),
            seed: 0,
        }
    }

    pub fn train_ids<'a>(&'a self, c: &'a Corpus) -> impl Iterator<Item = &'a str> + 'a {
        self.train.iter().map(|&i| c.doc_id(i))
    }

    pub fn test_ids<'a>(&'a self, c: &'a Corpus) -> impl Iterator<Item = &'a str> + 'a {
        self.test.iter().map(|&i| c.doc_id(i))
    }
}

/// Holds out `round(N * test_fraction)` documents chosen uniformly at random.
pub fn split_corpus(c: &Corpus, test_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid("test_fraction", "must lie in [0, 1)"));
    }
    let n = c.n_docs();
    if test_fraction > 0.0 && n < 2 {
        return Err(Error::invalid("test_fraction", "holding out requires at least two documents"));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitSpec { train, test, seed })
}

/// Target sizes for resampling to a positive share `p`.
///
/// Starts from `M_pos = floor(N p)`, `M_neg = N - M_pos`, and while either
/// exceeds what is available decrements `M_pos` and recomputes
/// `M_neg = round(M_pos (1 - p) / p)`.
pub fn subsample_sizes(n_pos: usize, n_neg: usize, p: f64) -> Result<(usize, usize)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", "positive share must lie in (0, 1)"));
    }
    let n = n_pos + n_neg;
    let mut m_pos = (n as f64 * p).floor() as usize;
    let mut m_neg = n - m_pos;
    while m_pos > n_pos || m_neg > n_neg {
        if m_pos == 0 {
            break;
        }
        m_pos -= 1;
        m_neg = (m_pos as f64 * (1.0 - p) / p).round() as usize;
    }
    if m_pos == 0 {
        return Err(Error::Infeasible(format!(
            "no positive documents can be kept at share {p} with {n_pos} positive and {n_neg} negative available"
        )));
    }
    Ok((m_pos, m_neg))
}

/// Resamples the corpus without replacement so that class 1 makes up a
/// share `p` of the result. Every document must carry a binary label.
/// Kept documents retain their original relative order.
pub fn subsample_to_rate(c: &Corpus, truth: &LabelStore, p: f64, seed: u64) -> Result<Corpus> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..c.n_docs() {
        match truth.get(i) {
            Some(1) => pos.push(i),
            Some(0) => neg.push(i),
            Some(k) => return Err(Error::invalid("truth", format!("class {k} is not binary"))),
            None => return Err(Error::invalid("truth", format!("document `{}` has no label", c.doc_id(i)))),
        }
    }
    let (m_pos, m_neg) = subsample_sizes(pos.len(), neg.len(), p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = sample(&mut rng, pos.len(), m_pos)
        .into_iter()
        .map(|j| pos[j])
        .chain(sample(&mut rng, neg.len(), m_neg).into_iter().map(|j| neg[j]))
        .collect();
    keep.sort_unstable();
    Ok(c.subset(&keep))
}

/// Reads a whole file to a string with the crate's error type.
pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}
