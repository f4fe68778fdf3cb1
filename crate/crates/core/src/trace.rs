//! Lookup traces, skew tables and hot/normal batch schedules.
//!
//! Trace file format (UTF-8):
//!
//! ```text
//! d=<lookups per sample> E=<vocabulary size>
//! <id> <id> ... (d ids)
//! ...
//! ```
//!
//! Each column is one feature; all features share a single vocabulary
//! `[0, E)`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost_model::EmbeddingDistribution;
use crate::error::{Error, Result};
use crate::report::format_float;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    num_features: usize,
    vocab_size: u32,
    ids: Vec<u32>,
}

impl Trace {
    /// Builds a trace from row-major ids (`num_features` per sample).
    pub fn new(num_features: usize, vocab_size: u32, ids: Vec<u32>) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::invalid("a trace needs at least one feature"));
        }
        if vocab_size == 0 {
            return Err(Error::invalid("a trace needs a non-empty vocabulary"));
        }
        if ids.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if !ids.len().is_multiple_of(num_features) {
            return Err(Error::invalid(format!(
                "{} ids do not divide into samples of {num_features}",
                ids.len()
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::IdOutOfRange {
                id: id as u64,
                size: vocab_size as usize,
            });
        }
        Ok(Self {
            num_features,
            vocab_size,
            ids,
        })
    }

    pub fn from_samples(vocab_size: u32, samples: &[Vec<u32>]) -> Result<Self> {
        let d = samples.first().map(Vec::len).ok_or(Error::EmptyTrace)?;
        if let Some(bad) = samples.iter().position(|s| s.len() != d) {
            return Err(Error::invalid(format!(
                "sample {bad} has {} ids, expected {d}",
                samples[bad].len()
            )));
        }
        Self::new(d, vocab_size, samples.concat())
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn num_samples(&self) -> usize {
        self.ids.len() / self.num_features
    }

    pub fn sample(&self, index: usize) -> &[u32] {
        &self.ids[index * self.num_features..(index + 1) * self.num_features]
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.ids.chunks_exact(self.num_features)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmptyTrace)?;
        let (d, e) = parse_header(header)?;
        let mut ids = Vec::new();
        for (index, line) in lines {
            let line_no = index + 1;
            let mut count = 0usize;
            for token in line.split(' ') {
                let id: u32 = token.parse().map_err(|_| Error::TraceFormat {
                    line: line_no,
                    message: format!("malformed id {token:?}"),
                })?;
                if id >= e {
                    return Err(Error::TraceFormat {
                        line: line_no,
                        message: format!("id {id} out of range for E={e}"),
                    });
                }
                ids.push(id);
                count += 1;
            }
            if count != d {
                return Err(Error::TraceFormat {
                    line: line_no,
                    message: format!("expected {d} ids, found {count}"),
                });
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Self::new(d, e, ids)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "d={} E={}", self.num_features, self.vocab_size)?;
        let mut line = String::new();
        for sample in self.samples() {
            line.clear();
            for (i, id) in sample.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{id}");
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

fn parse_header(header: &str) -> Result<(usize, u32)> {
    let bad = |message: String| Error::TraceFormat { line: 1, message };
    let mut parts = header.split(' ');
    let (Some(d), Some(e), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(bad(format!(
            "expected header `d=<int> E=<int>`, found {header:?}"
        )));
    };
    let d: usize = d
        .strip_prefix("d=")
        .and_then(|v| v.parse().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| bad(format!("invalid lookups-per-sample field {d:?}")))?;
    let e: u32 = e
        .strip_prefix("E=")
        .and_then(|v| v.parse().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| bad(format!("invalid vocabulary field {e:?}")))?;
    Ok((d, e))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Trace::parse(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkewEntry {
    pub id: u32,
    pub count: u64,
    pub cum_fraction: f64,
}

/// Embeddings ranked by access count, most accessed first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewTable {
    pub entries: Vec<SkewEntry>,
    pub total_lookups: u64,
}

/// Counts every lookup in the trace. Only ids that occur are listed; equal
/// counts are ordered by the smaller id.
pub fn build_skew_table(trace: &Trace) -> SkewTable {
    let vocab = trace.vocab_size() as usize;
    let counts = trace
        .ids()
        .par_chunks(1 << 16)
        .fold(
            || vec![0u64; vocab],
            |mut acc, chunk| {
                for &id in chunk {
                    acc[id as usize] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; vocab],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let total: u64 = counts.iter().sum();
    let mut seen: Vec<(u32, u64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(id, &c)| (id as u32, c))
        .collect();
    seen.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut running = 0u64;
    let entries = seen
        .into_iter()
        .map(|(id, count)| {
            running += count;
            SkewEntry {
                id,
                count,
                cum_fraction: running as f64 / total as f64,
            }
        })
        .collect();
    SkewTable {
        entries,
        total_lookups: total,
    }
}

impl SkewTable {
    pub fn top_ids(&self, k: usize) -> Vec<u32> {
        self.entries.iter().take(k).map(|e| e.id).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,count,cum_fraction\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.id, e.count, format_float(e.cum_fraction));
        }
        out
    }
}

/// Empirical distribution `(count + α) / (total + α·E)`. Unseen ids get
/// probability zero unless `smoothing > 0`.
pub fn estimate_distribution(
    table: &SkewTable,
    vocab_size: u32,
    smoothing: f64,
) -> Result<EmbeddingDistribution> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid(format!(
            "smoothing must be non-negative, got {smoothing}"
        )));
    }
    if let Some(max) = table.entries.iter().map(|e| e.id).max() {
        if max >= vocab_size {
            return Err(Error::IdOutOfRange {
                id: max as u64,
                size: vocab_size as usize,
            });
        }
    }
    let mass = table.total_lookups as f64 + smoothing * vocab_size as f64;
    if mass <= 0.0 || vocab_size == 0 {
        return Err(Error::invalid(
            "no observed lookups and no smoothing: cannot normalize",
        ));
    }
    let mut probs = vec![smoothing / mass; vocab_size as usize];
    for e in &table.entries {
        probs[e.id as usize] = (e.count as f64 + smoothing) / mass;
    }
    EmbeddingDistribution::new(probs)
}

/// Sample indices split by whether every lookup hits the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub hot: Vec<usize>,
    pub normal: Vec<usize>,
}

pub fn classify_samples(trace: &Trace, cache: &[u32]) -> Result<Classification> {
    let mask = cache_mask(trace.vocab_size(), cache)?;
    Ok(classify_with_mask(trace, &mask))
}

fn classify_with_mask(trace: &Trace, mask: &[bool]) -> Classification {
    let (hot, normal) = (0..trace.num_samples())
        .partition(|&i| trace.sample(i).iter().all(|&id| mask[id as usize]));
    Classification { hot, normal }
}

pub(crate) fn cache_mask(vocab_size: u32, cache: &[u32]) -> Result<Vec<bool>> {
    let mut mask = vec![false; vocab_size as usize];
    for &id in cache {
        *mask.get_mut(id as usize).ok_or(Error::IdOutOfRange {
            id: id as u64,
            size: vocab_size as usize,
        })? = true;
    }
    Ok(mask)
}

/// Hot batches hold only samples whose lookups are all cached; the remaining
/// samples are batched separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchSchedule {
    pub batch_size: usize,
    pub hot_batches: Vec<Vec<usize>>,
    pub normal_batches: Vec<Vec<usize>>,
}

impl BatchSchedule {
    pub fn hot_samples(&self) -> usize {
        self.hot_batches.iter().map(Vec::len).sum()
    }

    pub fn normal_samples(&self) -> usize {
        self.normal_batches.iter().map(Vec::len).sum()
    }

    pub fn num_batches(&self) -> usize {
        self.hot_batches.len() + self.normal_batches.len()
    }

    /// Hot batches first, then normal ones.
    pub fn batches(&self) -> impl Iterator<Item = (bool, &[usize])> + '_ {
        self.hot_batches
            .iter()
            .map(|b| (true, b.as_slice()))
            .chain(self.normal_batches.iter().map(|b| (false, b.as_slice())))
    }

    pub fn assignments_csv(&self) -> String {
        let mut out = String::from("batch,kind,sample\n");
        for (n, (hot, batch)) in self.batches().enumerate() {
            let kind = if hot { "hot" } else { "normal" };
            for s in batch {
                let _ = writeln!(out, "{n},{kind},{s}");
            }
        }
        out
    }
}

/// Packs hot and normal samples into batches of `batch_size`, keeping trace
/// order within each class. With `shuffle_seed` each class is shuffled first
/// (ChaCha8, stream 0).
pub fn build_schedule(
    trace: &Trace,
    cache: &[u32],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<BatchSchedule> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let Classification {
        mut hot,
        mut normal,
    } = classify_samples(trace, cache)?;
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        hot.shuffle(&mut rng);
        normal.shuffle(&mut rng);
    }
    let pack = |v: Vec<usize>| v.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(BatchSchedule {
        batch_size,
        hot_batches: pack(hot),
        normal_batches: pack(normal),
    })
}
