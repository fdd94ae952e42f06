//! Figure data exports: error curves, latent scatters, per-node soft class
//! counts, decoder leaf images, per-leaf top words and reconstruction grids.
//!
//! Numeric output is CSV with 17 significant digits, images are binary PGM
//! (`P5`, maxval 255). Every export is a deterministic function of its inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{AutoencoderPair, EpochRecord, Reconstruct, TrainHistory, TrainObserver};
use crate::baseline_mlp::{PerceptronAutoencoder, StackedAutoencoder};
use crate::data_io::{Dataset, Vocabulary};
use crate::error::{Error, Result};
use crate::soft_tree::{LeafModel, SoftTree};

pub const ERROR_CURVE_HEADER: &str = "epoch,train_error,test_error,depth";

/// Fixed-width scientific rendering with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn render_error_curve(history: &TrainHistory) -> String {
    let mut out = String::from(ERROR_CURVE_HEADER);
    out.push('\n');
    for r in &history.records {
        let test = r.test_error.map(format_real).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.epoch, format_real(r.train_error), test, r.depth);
    }
    out
}

pub fn export_error_curve(history: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), render_error_curve(history).as_bytes())
}

/// Parses a file written by [`export_error_curve`].
pub fn read_error_curve(path: impl AsRef<Path>) -> Result<TrainHistory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(ERROR_CURVE_HEADER) {
        return Err(Error::format(path, format!("expected header `{ERROR_CURVE_HEADER}`")));
    }
    let mut history = TrainHistory::default();
    for (n, line) in lines.enumerate() {
        let bad = |what: &str| Error::format(path, format!("row {}: {what}", n + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let record = EpochRecord {
            epoch: fields[0].parse().map_err(|_| bad("bad epoch"))?,
            train_error: fields[1].parse().map_err(|_| bad("bad train error"))?,
            test_error: match fields[2] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("bad test error"))?),
            },
            depth: fields[3].parse().map_err(|_| bad("bad depth"))?,
        };
        if history.last().is_some_and(|prev| prev.epoch >= record.epoch) {
            return Err(bad("epochs must be strictly increasing"));
        }
        history.records.push(record);
    }
    Ok(history)
}

/// Models that produce a latent code for an input.
pub trait LatentEncoder {
    fn latent_dim(&self) -> usize;

    fn latent(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl LatentEncoder for AutoencoderPair {
    fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encode(x)
    }
}

impl LatentEncoder for PerceptronAutoencoder {
    fn latent_dim(&self) -> usize {
        PerceptronAutoencoder::latent_dim(self)
    }

    fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encode(x)
    }
}

impl LatentEncoder for StackedAutoencoder {
    fn latent_dim(&self) -> usize {
        self.stage2.latent_dim()
    }

    fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encode(x)
    }
}

/// CSV of latent codes, one row per instance in dataset order, with a
/// trailing `label` column when the dataset is labelled.
pub fn render_latent_scatter<E: LatentEncoder + ?Sized>(model: &E, data: &Dataset) -> Result<String> {
    let k = model.latent_dim();
    let mut out = (1..=k).map(|j| format!("h{j}")).collect::<Vec<_>>().join(",");
    if data.labels().is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, x) in data.rows().enumerate() {
        let h = model.latent(x)?;
        out.push_str(&h.iter().map(|v| format_real(*v)).collect::<Vec<_>>().join(","));
        if let Some(labels) = data.labels() {
            let _ = write!(out, ",{}", labels[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_latent_scatter<E: LatentEncoder + ?Sized>(
    model: &E,
    data: &Dataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(path.as_ref(), render_latent_scatter(model, data)?.as_bytes())
}

/// CSV of reconstructions `x̂`, one row per instance.
pub fn export_reconstructions<M: Reconstruct + ?Sized>(
    model: &M,
    data: &Dataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = (1..=data.dim()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for x in data.rows() {
        let x_hat = model.reconstruction(x)?;
        out.push_str(&x_hat.iter().map(|v| format_real(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

/// Per-node, per-class sums of soft membership.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftClassCounts {
    pub classes: usize,
    /// `counts[node][class]`, nodes in level order.
    pub counts: Vec<Vec<f64>>,
}

impl SoftClassCounts {
    pub fn node_total(&self, node: usize) -> f64 {
        self.counts[node].iter().sum()
    }

    /// Sum of node totals for every tree level, root level first.
    pub fn level_totals(&self) -> Vec<f64> {
        let mut totals = Vec::new();
        let mut start = 0;
        let mut width = 1;
        while start < self.counts.len() {
            totals.push((start..start + width).map(|m| self.node_total(m)).sum());
            start += width;
            width *= 2;
        }
        totals
    }

    /// CSV with columns `node,level,total,class_0,…`.
    pub fn render(&self) -> String {
        let mut out = String::from("node,level,total");
        for c in 0..self.classes {
            let _ = write!(out, ",class_{c}");
        }
        out.push('\n');
        for (m, row) in self.counts.iter().enumerate() {
            let level = (usize::BITS - (m + 1).leading_zeros()) as usize;
            let _ = write!(out, "{m},{level},{}", format_real(self.node_total(m)));
            for v in row {
                let _ = write!(out, ",{}", format_real(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Soft class histogram of every node: `count[m][c]` sums, over instances of
/// class `c`, the product of gate values on the root-to-`m` path.
pub fn compute_soft_class_counts(tree: &SoftTree, data: &Dataset) -> Result<SoftClassCounts> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::Input("soft class counts need a labelled dataset".into()))?;
    let classes = data.class_count().unwrap_or(0);
    let mut counts = vec![vec![0.0; classes]; tree.node_count()];
    for (x, &label) in data.rows().zip(labels) {
        for (node, w) in tree.node_path_weights(x)?.into_iter().enumerate() {
            counts[node][label as usize] += w;
        }
    }
    Ok(SoftClassCounts { classes, counts })
}

/// `round_half_up(clamp(v, 0, 1) · 255)`.
pub fn pixel_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary greyscale PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn leaf_responses(tree: &SoftTree) -> Result<Vec<&[f64]>> {
    tree.leaves()
        .iter()
        .map(|leaf| match leaf {
            LeafModel::Constant { response } => Ok(response.as_slice()),
            LeafModel::Linear { .. } => Err(Error::UnsupportedExport(
                "linear leaves have input-dependent responses".into(),
            )),
        })
        .collect()
}

/// Writes one `rows × cols` PGM per leaf as `<prefix>_leaf<node>.pgm`, where
/// `node` is the leaf's level-order index. Returns the written paths.
pub fn export_decoder_leaf_images(
    decoder: &SoftTree,
    rows: usize,
    cols: usize,
    path_prefix: &str,
) -> Result<Vec<PathBuf>> {
    if rows * cols != decoder.output_dim() {
        return Err(Error::Structural(format!(
            "{rows}×{cols} images cannot show {}-dimensional responses",
            decoder.output_dim()
        )));
    }
    let responses = leaf_responses(decoder)?;
    let mut paths = Vec::with_capacity(responses.len());
    for (j, response) in responses.into_iter().enumerate() {
        let node = decoder.internal_count() + j;
        let path = PathBuf::from(format!("{path_prefix}_leaf{node}.pgm"));
        let pixels: Vec<u8> = response.iter().map(|&v| pixel_byte(v)).collect();
        write_file(&path, &encode_pgm(cols, rows, &pixels))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Words of one leaf ordered by descending coefficient, ties lexicographic.
pub fn top_words<'v>(response: &[f64], vocab: &'v Vocabulary, top_n: usize) -> Vec<&'v str> {
    let mut order: Vec<usize> = (0..response.len()).collect();
    order.sort_by(|&a, &b| {
        response[b]
            .total_cmp(&response[a])
            .then_with(|| vocab.words()[a].cmp(&vocab.words()[b]))
    });
    order
        .into_iter()
        .take(top_n)
        .map(|j| vocab.words()[j].as_str())
        .collect()
}

/// One line per leaf: the leaf's level-order node index followed by its top
/// words, tab-separated.
pub fn render_top_words_per_leaf(decoder: &SoftTree, vocab: &Vocabulary, top_n: usize) -> Result<String> {
    if vocab.len() != decoder.output_dim() {
        return Err(Error::Structural(format!(
            "vocabulary has {} words, decoder emits {} dimensions",
            vocab.len(),
            decoder.output_dim()
        )));
    }
    let mut out = String::new();
    for (j, response) in leaf_responses(decoder)?.into_iter().enumerate() {
        let _ = write!(out, "{}", decoder.internal_count() + j);
        for word in top_words(response, vocab, top_n) {
            let _ = write!(out, "\t{word}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_top_words_per_leaf(
    decoder: &SoftTree,
    vocab: &Vocabulary,
    top_n: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(
        path.as_ref(),
        render_top_words_per_leaf(decoder, vocab, top_n)?.as_bytes(),
    )
}

/// PGM of `n_samples` seeded-random instances stacked vertically, each shown
/// as the original (left) beside its reconstruction (right).
pub fn render_reconstruction_grid<M: Reconstruct + ?Sized>(
    model: &M,
    data: &Dataset,
    n_samples: usize,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    if rows * cols != data.dim() {
        return Err(Error::Structural(format!(
            "{rows}×{cols} images cannot show {}-dimensional instances",
            data.dim()
        )));
    }
    if n_samples > data.len() {
        return Err(Error::Input(format!(
            "cannot sample {n_samples} instances from {}",
            data.len()
        )));
    }
    let picks = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), data.len(), n_samples);
    let width = 2 * cols;
    let mut pixels = Vec::with_capacity(n_samples * rows * width);
    for i in picks.iter() {
        let original = data.row(i);
        let rebuilt = model.reconstruction(original)?;
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            pixels.extend(original[span.clone()].iter().map(|&v| pixel_byte(v)));
            pixels.extend(rebuilt[span].iter().map(|&v| pixel_byte(v)));
        }
    }
    Ok(encode_pgm(width, n_samples * rows, &pixels))
}

#[allow(clippy::too_many_arguments)]
pub fn export_reconstruction_grid<M: Reconstruct + ?Sized>(
    model: &M,
    data: &Dataset,
    n_samples: usize,
    rows: usize,
    cols: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = render_reconstruction_grid(model, data, n_samples, rows, cols, seed)?;
    write_file(path.as_ref(), &bytes)
}

/// Training observer that writes the decoder's leaf images right before each
/// growth step, so nodes that later become internal keep their last response:
/// `<prefix>_depth<D>_leaf<node>.pgm`.
#[derive(Debug, Clone)]
pub struct LeafSnapshotter {
    pub prefix: String,
    pub rows: usize,
    pub cols: usize,
    pub written: Vec<PathBuf>,
}

impl LeafSnapshotter {
    pub fn new(prefix: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            prefix: prefix.into(),
            rows,
            cols,
            written: Vec::new(),
        }
    }

    /// Snapshot of the current decoder leaves.
    pub fn snapshot(&mut self, pair: &AutoencoderPair) -> Result<()> {
        let prefix = format!("{}_depth{}", self.prefix, pair.decoder.depth());
        let paths = export_decoder_leaf_images(&pair.decoder, self.rows, self.cols, &prefix)?;
        self.written.extend(paths);
        Ok(())
    }
}

impl TrainObserver for LeafSnapshotter {
    fn before_growth(&mut self, _epoch: usize, pair: &AutoencoderPair) -> Result<()> {
        self.snapshot(pair)
    }
}
