//! Dataset ingestion: IDX image/label files, bag-of-words corpora, CSV
//! matrices and synthetic Gaussian clusters.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Words ranked above this cut are discarded as stop words.
pub const DEFAULT_DROP_TOP: usize = 100;
/// Number of words kept after the dropped window.
pub const DEFAULT_VOCAB_SIZE: usize = 2000;

/// Dense `N × d` instance matrix with optional labels and per-dimension scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    instances: Vec<f64>,
    labels: Option<Vec<u32>>,
    dim_scale: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from a row-major buffer of `dim`-length rows.
    pub fn new(dim: usize, instances: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            if !instances.is_empty() {
                return Err(Error::Structural("zero-dimensional rows cannot hold values".into()));
            }
        } else if !instances.len().is_multiple_of(dim) {
            return Err(Error::Structural(format!(
                "buffer of {} values is not a whole number of {dim}-dimensional rows",
                instances.len()
            )));
        }
        if let Some(pos) = instances.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self {
            dim,
            instances,
            labels: None,
            dim_scale: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.as_ref().len() != dim {
                return Err(Error::Structural(format!(
                    "row {i} has length {}, expected {dim}",
                    row.as_ref().len()
                )));
            }
            flat.extend_from_slice(row.as_ref());
        }
        Self::new(dim, flat)
    }

    /// Attaches labels; the count must match the number of instances.
    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Pairing(format!(
                "{} labels for {} instances",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_dim_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.dim || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Input(
                "dimension scales must be positive and one per dimension".into(),
            ));
        }
        self.dim_scale = Some(scale);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.instances.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.instances[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // `max(1)` keeps `chunks_exact` valid for the empty zero-dim dataset.
        self.instances.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.instances
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn dim_scale(&self) -> Option<&[f64]> {
        self.dim_scale.as_deref()
    }

    /// Number of classes implied by the largest label.
    pub fn class_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |&m| m as usize + 1))
    }

    /// Rows selected by `indices`, in that order, with labels and scales carried over.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut instances = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            instances.extend_from_slice(self.row(i));
        }
        Dataset {
            dim: self.dim,
            instances,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            dim_scale: self.dim_scale.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, format!("header truncated at byte {offset}")))
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::format(
            path,
            format!("payload holds {actual} bytes, expected {expected}"),
        ));
    }
    Ok(())
}

/// Parses an IDX image file (magic `0x00000803`). Pixels are scaled to `[0, 1]`.
/// Gzip-compressed files are detected and decompressed transparently.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_idx_images(&read_file(path)?, path).map(|(data, _, _)| data)
}

/// Parses IDX image bytes, returning the dataset and the image `(rows, cols)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(Dataset, usize, usize)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            path,
            format!("magic {magic:#010x} is not an IDX image file ({IDX_IMAGES_MAGIC:#010x})"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let dim = rows * cols;
    check_payload(bytes, 16, count * dim, path)?;
    let instances = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((Dataset::new(dim, instances)?, rows, cols))
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    parse_idx_labels(&read_file(path)?, path)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u32>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            path,
            format!("magic {magic:#010x} is not an IDX label file ({IDX_LABELS_MAGIC:#010x})"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    check_payload(bytes, 8, count, path)?;
    Ok(bytes[8..].iter().map(|&b| u32::from(b)).collect())
}

/// Serialises a dataset as an uncompressed IDX image file; values are mapped
/// back to bytes by `round(clamp(v, 0, 1) · 255)`.
pub fn encode_idx_images(data: &Dataset, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != data.dim() {
        return Err(Error::Structural(format!(
            "{rows}×{cols} images cannot hold {}-dimensional rows",
            data.dim()
        )));
    }
    let mut out = Vec::with_capacity(16 + data.as_flat().len());
    for word in [IDX_IMAGES_MAGIC, data.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(data.as_flat().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let byte = u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit in a byte")))?;
        out.push(byte);
    }
    Ok(out)
}

/// Reads a CSV matrix: one header row, then comma-separated reals. A final
/// column whose header is `label` is read as integer class ids.
pub fn load_csv_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::format(path, "missing header row"))?
        .split(',')
        .map(str::trim)
        .collect();
    let has_label = header.last().is_some_and(|h| h.eq_ignore_ascii_case("label"));
    let dim = header.len() - usize::from(has_label);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(Error::format(
                path,
                format!(
                    "row {} has {} fields, header has {}",
                    lineno + 1,
                    fields.len(),
                    header.len()
                ),
            ));
        }
        for field in &fields[..dim] {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("row {}: `{field}` is not a number", lineno + 1)))?,
            );
        }
        if has_label {
            let field = fields[dim];
            labels.push(
                field
                    .parse::<u32>()
                    .map_err(|_| Error::format(path, format!("row {}: `{field}` is not a class id", lineno + 1)))?,
            );
        }
    }
    let data = Dataset::new(dim, values)?;
    if has_label {
        data.with_labels(labels)
    } else {
        Ok(data)
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters, keeping
/// tokens of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Ordered bag-of-words vocabulary with training-corpus statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    frequencies: Vec<u64>,
    max_counts: Vec<u32>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_entries(entries: Vec<(String, u64, u32)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut words = Vec::with_capacity(entries.len());
        let mut frequencies = Vec::with_capacity(entries.len());
        let mut max_counts = Vec::with_capacity(entries.len());
        for (i, (word, freq, max)) in entries.into_iter().enumerate() {
            if max == 0 {
                return Err(Error::Input(format!("word `{word}` has zero max count")));
            }
            if index.insert(word.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary word `{word}`")));
            }
            words.push(word);
            frequencies.push(freq);
            max_counts.push(max);
        }
        Ok(Self {
            words,
            frequencies,
            max_counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Total occurrences of each word in the training corpus.
    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    /// Largest per-document count of each word in the training corpus.
    pub fn max_counts(&self) -> &[u32] {
        &self.max_counts
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Tab-separated `word frequency max_count`, one word per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ((w, f), m) in self.words.iter().zip(&self.frequencies).zip(&self.max_counts) {
            out.push_str(&format!("{w}\t{f}\t{m}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || {
                Error::format(
                    path,
                    format!("line {}: expected word<TAB>frequency<TAB>max", lineno + 1),
                )
            };
            let mut fields = line.split('\t');
            let word = fields.next().ok_or_else(bad)?.to_string();
            let freq = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let max = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            entries.push((word, freq, max));
        }
        Self::from_entries(entries)
    }
}

/// Ranks words by corpus frequency (descending, ties lexicographic), drops the
/// top 100 and keeps the next 2,000.
pub fn build_bow_vocabulary<D: AsRef<[String]>>(docs: &[D]) -> Result<Vocabulary> {
    build_vocabulary(docs, DEFAULT_DROP_TOP, DEFAULT_VOCAB_SIZE)
}

pub fn build_vocabulary<D: AsRef<[String]>>(docs: &[D], drop_top: usize, keep: usize) -> Result<Vocabulary> {
    // BTreeMap keeps the tally independent of hash seeds and document order.
    let mut stats: BTreeMap<&str, (u64, u32)> = BTreeMap::new();
    let mut per_doc: HashMap<&str, u32> = HashMap::new();
    for doc in docs {
        per_doc.clear();
        for token in doc.as_ref() {
            *per_doc.entry(token.as_str()).or_default() += 1;
        }
        for (&word, &count) in &per_doc {
            let entry = stats.entry(word).or_default();
            entry.0 += u64::from(count);
            entry.1 = entry.1.max(count);
        }
    }
    if stats.is_empty() {
        return Err(Error::Input("corpus contains no tokens".into()));
    }
    let mut ranked: Vec<(&str, u64, u32)> = stats.into_iter().map(|(w, (f, m))| (w, f, m)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let entries = ranked
        .into_iter()
        .skip(drop_top)
        .take(keep)
        .map(|(w, f, m)| (w.to_string(), f, m))
        .collect();
    Vocabulary::from_entries(entries)
}

/// Per-document word counts divided by each word's training max count.
pub fn vectorize_documents<D: AsRef<[String]>>(docs: &[D], vocab: &Vocabulary) -> Result<Dataset> {
    if vocab.is_empty() {
        return Err(Error::Input("vocabulary is empty".into()));
    }
    let dim = vocab.len();
    let mut values = vec![0.0; docs.len() * dim];
    for (doc, row) in docs.iter().zip(values.chunks_exact_mut(dim)) {
        for token in doc.as_ref() {
            if let Some(j) = vocab.position(token) {
                row[j] += 1.0;
            }
        }
        for (v, &m) in row.iter_mut().zip(vocab.max_counts()) {
            *v /= f64::from(m);
        }
    }
    let scale = vocab.max_counts().iter().map(|&m| f64::from(m)).collect();
    Dataset::new(dim, values)?.with_dim_scale(scale)
}

/// Raw documents with optional category labels.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: Vec<String>,
    pub labels: Option<Vec<u32>>,
    pub categories: Vec<String>,
}

impl Corpus {
    pub fn tokenized(&self) -> Vec<Vec<String>> {
        self.documents.iter().map(|d| tokenize(d)).collect()
    }
}

/// One document per non-empty line.
pub fn load_corpus_lines(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Corpus {
        documents: text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(String::from)
            .collect(),
        labels: None,
        categories: Vec::new(),
    })
}

/// One document per file. Files inside first-level subdirectories are
/// labelled by the sorted position of that subdirectory's name.
pub fn load_corpus_dir(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let mut files: Vec<(Option<String>, PathBuf)> = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort_by(|a, b| a.1.cmp(&b.1));

    let mut categories: Vec<String> = files.iter().filter_map(|(c, _)| c.clone()).collect();
    categories.sort();
    categories.dedup();
    let labelled = !categories.is_empty() && files.iter().all(|(c, _)| c.is_some());

    let mut documents = Vec::with_capacity(files.len());
    let mut labels = Vec::with_capacity(files.len());
    for (category, path) in &files {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        documents.push(String::from_utf8_lossy(&bytes).into_owned());
        if labelled {
            let c = category.as_ref().expect("all files categorised");
            labels.push(categories.binary_search(c).expect("category listed") as u32);
        }
    }
    Ok(Corpus {
        documents,
        labels: labelled.then_some(labels),
        categories: if labelled { categories } else { Vec::new() },
    })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(Option<String>, PathBuf)>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let category = (rel.components().count() > 1)
                .then(|| rel.components().next())
                .flatten()
                .map(|c| c.as_os_str().to_string_lossy().into_owned());
            out.push((category, path));
        }
    }
    Ok(())
}

/// Seeded shuffle split; returns sorted `(train, test)` index lists.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut test = order.split_off(n_train);
    order.sort_unstable();
    test.sort_unstable();
    (order, test)
}

/// Gaussian blobs around centres drawn uniformly from `[-1, 1]^dim`.
/// Instances are grouped by cluster and labelled with the cluster index.
pub fn make_synthetic_clusters(
    n_clusters: usize,
    points_per_cluster: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_clusters == 0 || points_per_cluster == 0 || dim == 0 {
        return Err(Error::Input(
            "cluster, point and dimension counts must be positive".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Input(format!(
            "spread must be a finite non-negative value, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let mut values = Vec::with_capacity(n_clusters * points_per_cluster * dim);
    let mut labels = Vec::with_capacity(n_clusters * points_per_cluster);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..points_per_cluster {
            values.extend(center.iter().map(|m| m + spread * rng.sample::<f64, _>(StandardNormal)));
            labels.push(c as u32);
        }
    }
    Dataset::new(dim, values)?.with_labels(labels)
}
