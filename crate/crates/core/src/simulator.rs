//! Seeded Monte Carlo checks of the analytical cost model.
//!
//! Lookups are drawn i.i.d. from the access distribution, both across samples
//! and across the lookups within a sample. Every trial (or epoch) `t` uses its
//! own ChaCha8 stream, `ChaCha8Rng::seed_from_u64(seed)` with
//! `set_stream(t)`, so a trial can be reproduced in isolation and results do
//! not depend on how rayon splits the work. Per-trial results are merged in
//! trial order.

use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost_model::{coalesced_batch_cost, CostBreakdown, EmbeddingDistribution, WorkloadSpec};
use crate::distributions::{DistributionKind, DistributionSpec};
use crate::error::{Error, Result};
use crate::numeric::Moments;
use crate::trace::{build_schedule, build_skew_table, cache_mask, Trace};

pub const RNG_ALGORITHM: &str =
    "ChaCha8 (rand_chacha 0.9): seed_from_u64(seed), set_stream(trial index)";

/// The generator for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Alias-table sampler returning original embedding ids.
#[derive(Debug, Clone)]
pub struct Sampler {
    alias: WeightedAliasIndex<f64>,
    ids: Vec<u32>,
}

impl Sampler {
    pub fn new(dist: &EmbeddingDistribution) -> Result<Self> {
        let alias = WeightedAliasIndex::new(dist.ranked_probs().to_vec())
            .map_err(|e| Error::invalid(format!("cannot build sampler: {e}")))?;
        Ok(Self {
            alias,
            ids: dist.ranked_ids().to_vec(),
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.ids[self.alias.sample(rng)]
    }
}

/// Draws `b` samples of `d` lookups each, row-major (`ids[i * d + f]` is
/// feature `f` of sample `i`).
pub fn sample_batch<R: Rng + ?Sized>(
    sampler: &Sampler,
    b: usize,
    d: usize,
    rng: &mut R,
) -> Vec<u32> {
    let mut out = Vec::with_capacity(b * d);
    sample_batch_into(sampler, b * d, rng, &mut out);
    out
}

fn sample_batch_into<R: Rng + ?Sized>(
    sampler: &Sampler,
    lookups: usize,
    rng: &mut R,
    out: &mut Vec<u32>,
) {
    out.clear();
    out.extend((0..lookups).map(|_| sampler.sample(rng)));
}

/// Distinct-id counting with a generation stamp per id, so clearing between
/// batches is O(1).
#[derive(Debug, Clone)]
struct DistinctCounter {
    stamp: Vec<u32>,
    generation: u32,
}

impl DistinctCounter {
    fn new(vocab: usize) -> Self {
        Self {
            stamp: vec![0; vocab],
            generation: 0,
        }
    }

    fn reset(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.generation = 1;
        }
    }

    /// True the first time `id` is seen since the last reset.
    #[inline]
    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.stamp[id as usize];
        if *slot == self.generation {
            false
        } else {
            *slot = self.generation;
            true
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub observations: u64,
}

impl Estimate {
    fn from_moments(m: &Moments) -> Self {
        Self {
            mean: m.mean(),
            std_error: m.std_error(),
            observations: m.count(),
        }
    }

    /// `|mean - expected|` in units of standard error; infinite when the
    /// standard error is zero and the values differ.
    pub fn z_score(&self, expected: f64) -> f64 {
        let diff = (self.mean - expected).abs();
        if diff == 0.0 {
            0.0
        } else if self.std_error == 0.0 {
            f64::INFINITY
        } else {
            diff / self.std_error
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniqueMeasurement {
    pub batch_size: u64,
    pub trials: u64,
    pub seed: u64,
    pub mean_unique_per_batch: Estimate,
    pub max_unique_per_batch: u64,
}

/// Mean number of distinct ids in `trials` independent batches of `b`
/// lookups.
pub fn measure_unique(
    dist: &EmbeddingDistribution,
    b: u64,
    trials: u64,
    seed: u64,
) -> Result<UniqueMeasurement> {
    if b == 0 || trials == 0 {
        return Err(Error::invalid("batch size and trials must be at least 1"));
    }
    let sampler = Sampler::new(dist)?;
    let vocab = dist.len();
    let counts: Vec<u64> = (0..trials)
        .into_par_iter()
        .map_init(
            || (DistinctCounter::new(vocab), Vec::new()),
            |(counter, buf), t| {
                let mut rng = trial_rng(seed, t);
                sample_batch_into(&sampler, b as usize, &mut rng, buf);
                counter.reset();
                buf.iter().filter(|&&id| counter.insert(id)).count() as u64
            },
        )
        .collect();
    let mut m = Moments::default();
    for &c in &counts {
        m.push(c as f64);
    }
    Ok(UniqueMeasurement {
        batch_size: b,
        trials,
        seed,
        mean_unique_per_batch: Estimate::from_moments(&m),
        max_unique_per_batch: counts.iter().copied().max().unwrap_or(0),
    })
}

/// Where lookups come from: i.i.d. draws or a recorded trace.
#[derive(Debug, Clone)]
pub enum Source {
    Distribution(EmbeddingDistribution),
    Trace(Trace),
}

impl Source {
    fn vocab_size(&self) -> usize {
        match self {
            Source::Distribution(d) => d.len(),
            Source::Trace(t) => t.vocab_size() as usize,
        }
    }

    /// Ids ordered hottest first: by probability, or by trace access count
    /// with unseen ids last.
    fn rank_order(&self) -> Vec<u32> {
        match self {
            Source::Distribution(d) => d.ranked_ids().to_vec(),
            Source::Trace(t) => {
                let table = build_skew_table(t);
                let mut order = table.top_ids(table.entries.len());
                let mut seen = vec![false; t.vocab_size() as usize];
                order.iter().for_each(|&id| seen[id as usize] = true);
                order.extend((0..t.vocab_size()).filter(|&id| !seen[id as usize]));
                order
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    /// Number of simulated epochs.
    pub trials: u64,
    pub source: Source,
    pub workload: WorkloadSpec,
    pub cache: Vec<u32>,
    /// Number of rank-contiguous cache portions for usage accounting.
    pub portions: usize,
    /// Shuffle trace samples within the hot and normal classes every epoch.
    pub shuffle: bool,
}

impl SimConfig {
    pub fn new(source: Source, workload: WorkloadSpec, seed: u64, trials: u64) -> Self {
        Self {
            seed,
            trials,
            source,
            workload,
            cache: Vec::new(),
            portions: 4,
            shuffle: false,
        }
    }

    pub fn with_cache(mut self, cache: Vec<u32>) -> Self {
        self.cache = cache;
        self
    }
}

/// Per-portion count of samples in a batch that touch at least one cached
/// id of the portion. A sample touching several portions counts toward each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortionUsage {
    pub batch_size: u64,
    pub observations: u64,
    pub portions: Vec<PortionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortionStats {
    /// Position range within the hotness-ordered cache, `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub touched_samples: Estimate,
}

impl PortionUsage {
    pub fn means(&self) -> Vec<f64> {
        self.portions
            .iter()
            .map(|p| p.touched_samples.mean)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub seed: u64,
    pub trials: u64,
    pub rng: String,
    pub batches_per_epoch: u64,
    /// Distinct ids per batch and feature.
    pub mean_unique_per_batch: Estimate,
    /// Distinct non-cached ids per batch and feature.
    pub mean_non_cached_unique: Estimate,
    pub max_unique_per_batch: u64,
    /// Mean over epochs of `Q` index units plus every transmitted embedding.
    pub measured_epoch_cost: CostBreakdown,
    pub epoch_embedding_cost: Estimate,
    pub hot_batch_fraction: f64,
    pub cache_hit_rate: f64,
    pub portion_usage: Option<PortionUsage>,
}

/// Maps each id to the cache portion holding it.
struct PortionMap {
    of_id: Vec<u16>,
    bounds: Vec<(usize, usize)>,
}

const NO_PORTION: u16 = u16::MAX;

impl PortionMap {
    fn new(source: &Source, mask: &[bool], portions: usize) -> Option<Self> {
        let ordered: Vec<u32> = source
            .rank_order()
            .into_iter()
            .filter(|&id| mask[id as usize])
            .collect();
        let n = ordered.len();
        if portions == 0 || portions > n || portions > 64 {
            return None;
        }
        let mut of_id = vec![NO_PORTION; mask.len()];
        let bounds: Vec<(usize, usize)> = (0..portions)
            .map(|i| (i * n / portions, (i + 1) * n / portions))
            .collect();
        for (p, &(start, end)) in bounds.iter().enumerate() {
            for &id in &ordered[start..end] {
                of_id[id as usize] = p as u16;
            }
        }
        Some(Self { of_id, bounds })
    }

    fn count(&self, ids: &[u32], d: usize, touched: &mut [u64]) {
        for sample in ids.chunks_exact(d) {
            let mut bits = 0u64;
            for &id in sample {
                let p = self.of_id[id as usize];
                if p != NO_PORTION {
                    bits |= 1 << p;
                }
            }
            while bits != 0 {
                touched[bits.trailing_zeros() as usize] += 1;
                bits &= bits - 1;
            }
        }
    }
}

#[derive(Debug, Default, Clone)]
struct EpochStats {
    unique: Moments,
    non_cached: Moments,
    max_unique: u64,
    embedding_cost: u64,
    hot_batches: u64,
    batches: u64,
    hits: u64,
    lookups: u64,
    /// One entry per batch, one `Moments` per portion.
    portions: Vec<Moments>,
}

struct BatchAccounting<'a> {
    mask: &'a [bool],
    portions: Option<&'a PortionMap>,
    counter: DistinctCounter,
    touched: Vec<u64>,
}

impl BatchAccounting<'_> {
    /// Accounts one batch of row-major ids with `d` features.
    fn record(&mut self, ids: &[u32], d: usize, stats: &mut EpochStats) {
        let samples = ids.len() / d;
        let mut all_cached = true;
        for f in 0..d {
            self.counter.reset();
            let (mut unique, mut non_cached) = (0u64, 0u64);
            for i in 0..samples {
                let id = ids[i * d + f];
                let cached = self.mask[id as usize];
                all_cached &= cached;
                stats.hits += cached as u64;
                if self.counter.insert(id) {
                    unique += 1;
                    non_cached += (!cached) as u64;
                }
            }
            stats.unique.push(unique as f64);
            stats.non_cached.push(non_cached as f64);
            stats.max_unique = stats.max_unique.max(unique);
            stats.embedding_cost += non_cached;
        }
        stats.lookups += ids.len() as u64;
        stats.batches += 1;
        stats.hot_batches += all_cached as u64;
        if let Some(map) = self.portions {
            self.touched.clear();
            self.touched.resize(map.bounds.len(), 0);
            map.count(ids, d, &mut self.touched);
            stats.portions.resize(map.bounds.len(), Moments::default());
            for (m, &t) in stats.portions.iter_mut().zip(&self.touched) {
                m.push(t as f64);
            }
        }
    }
}

/// Simulates `config.trials` epochs and measures the realized communication.
///
/// With a distribution source each epoch draws `ceil(Q / b)` batches, the
/// last one at its true (possibly short) size. With a trace source each epoch
/// replays the hot/normal schedule for the configured cache.
pub fn simulate_epoch(config: &SimConfig) -> Result<SimResult> {
    if config.trials == 0 {
        return Err(Error::invalid("at least one epoch must be simulated"));
    }
    let spec = &config.workload;
    let q = spec.num_samples();
    let b = spec.batch_size();
    let d = spec.lookups_per_sample() as usize;
    let vocab = config.source.vocab_size();
    let mask = cache_mask(vocab as u32, &config.cache)?;
    let portions = PortionMap::new(&config.source, &mask, config.portions);

    let sampler = match &config.source {
        Source::Distribution(dist) => Some(Sampler::new(dist)?),
        Source::Trace(trace) => {
            if trace.num_samples() as u64 != q || trace.num_features() != d {
                return Err(Error::invalid(format!(
                    "workload (Q={q}, d={d}) does not match the trace (Q={}, d={})",
                    trace.num_samples(),
                    trace.num_features()
                )));
            }
            None
        }
    };

    let epochs: Vec<Result<EpochStats>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(config.seed, t);
            let mut acct = BatchAccounting {
                mask: &mask,
                portions: portions.as_ref(),
                counter: DistinctCounter::new(vocab),
                touched: Vec::new(),
            };
            let mut stats = EpochStats::default();
            let mut buf = Vec::new();
            match (&config.source, &sampler) {
                (Source::Distribution(_), Some(sampler)) => {
                    let mut remaining = q;
                    while remaining > 0 {
                        let size = remaining.min(b);
                        sample_batch_into(sampler, size as usize * d, &mut rng, &mut buf);
                        acct.record(&buf, d, &mut stats);
                        remaining -= size;
                    }
                }
                (Source::Trace(trace), _) => {
                    let shuffle = config.shuffle.then(|| rng.next_u64());
                    let schedule = build_schedule(trace, &config.cache, b as usize, shuffle)?;
                    for (_, batch) in schedule.batches() {
                        buf.clear();
                        for &s in batch {
                            buf.extend_from_slice(trace.sample(s));
                        }
                        acct.record(&buf, d, &mut stats);
                    }
                }
                _ => unreachable!("sampler exists for distribution sources"),
            }
            Ok(stats)
        })
        .collect();

    let mut unique = Moments::default();
    let mut non_cached = Moments::default();
    let mut epoch_cost = Moments::default();
    let mut portion_moments: Vec<Moments> = Vec::new();
    let (mut max_unique, mut hot, mut batches, mut hits, mut lookups) = (0, 0, 0, 0, 0);
    let mut batches_per_epoch = 0;
    for stats in epochs {
        let stats = stats?;
        unique.merge(&stats.unique);
        non_cached.merge(&stats.non_cached);
        epoch_cost.push(stats.embedding_cost as f64);
        max_unique = max_unique.max(stats.max_unique);
        hot += stats.hot_batches;
        batches += stats.batches;
        batches_per_epoch = stats.batches;
        hits += stats.hits;
        lookups += stats.lookups;
        portion_moments.resize(stats.portions.len(), Moments::default());
        for (acc, m) in portion_moments.iter_mut().zip(&stats.portions) {
            acc.merge(m);
        }
    }

    let portion_usage = portions.map(|map| PortionUsage {
        batch_size: b,
        observations: batches,
        portions: map
            .bounds
            .iter()
            .zip(&portion_moments)
            .map(|(&(start, end), m)| PortionStats {
                start,
                end,
                touched_samples: Estimate::from_moments(m),
            })
            .collect(),
    });

    Ok(SimResult {
        seed: config.seed,
        trials: config.trials,
        rng: RNG_ALGORITHM.to_string(),
        batches_per_epoch,
        mean_unique_per_batch: Estimate::from_moments(&unique),
        mean_non_cached_unique: Estimate::from_moments(&non_cached),
        max_unique_per_batch: max_unique,
        measured_epoch_cost: CostBreakdown::new(q as f64, epoch_cost.mean()),
        epoch_embedding_cost: Estimate::from_moments(&epoch_cost),
        hot_batch_fraction: hot as f64 / batches as f64,
        cache_hit_rate: hits as f64 / lookups as f64,
        portion_usage,
    })
}

/// Parameters for [`portion_usage`].
#[derive(Debug, Clone)]
pub struct PortionQuery {
    pub cache: Vec<u32>,
    pub portions: usize,
    pub batch_size: u64,
    /// Lookups per sample for distribution sources; traces use their own.
    pub lookups_per_sample: u32,
    pub trials: u64,
    pub seed: u64,
}

/// How many samples of a batch touch each rank-contiguous portion of the
/// cache, averaged over `trials` batches. Trace batches are `b` distinct
/// samples chosen uniformly at random.
pub fn portion_usage(source: &Source, query: &PortionQuery) -> Result<PortionUsage> {
    let b = query.batch_size as usize;
    if b == 0 || query.trials == 0 {
        return Err(Error::invalid("batch size and trials must be at least 1"));
    }
    let mask = cache_mask(source.vocab_size() as u32, &query.cache)?;
    let map = PortionMap::new(source, &mask, query.portions).ok_or_else(|| {
        Error::invalid(format!(
            "cannot split {} cached ids into {} portions (at most 64, at least one id each)",
            query.cache.len(),
            query.portions
        ))
    })?;

    let per_trial: Vec<Vec<u64>> = match source {
        Source::Distribution(dist) => {
            let sampler = Sampler::new(dist)?;
            let d = query.lookups_per_sample.max(1) as usize;
            (0..query.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(query.seed, t);
                    let ids = sample_batch(&sampler, b, d, &mut rng);
                    let mut touched = vec![0; map.bounds.len()];
                    map.count(&ids, d, &mut touched);
                    touched
                })
                .collect()
        }
        Source::Trace(trace) => {
            if b > trace.num_samples() {
                return Err(Error::invalid(format!(
                    "batch size {b} exceeds the trace's {} samples",
                    trace.num_samples()
                )));
            }
            let d = trace.num_features();
            (0..query.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(query.seed, t);
                    let picks = rand::seq::index::sample(&mut rng, trace.num_samples(), b);
                    let mut ids = Vec::with_capacity(b * d);
                    for s in picks.iter() {
                        ids.extend_from_slice(trace.sample(s));
                    }
                    let mut touched = vec![0; map.bounds.len()];
                    map.count(&ids, d, &mut touched);
                    touched
                })
                .collect()
        }
    };

    let mut moments = vec![Moments::default(); map.bounds.len()];
    for touched in &per_trial {
        for (m, &t) in moments.iter_mut().zip(touched) {
            m.push(t as f64);
        }
    }
    Ok(PortionUsage {
        batch_size: query.batch_size,
        observations: query.trials,
        portions: map
            .bounds
            .iter()
            .zip(&moments)
            .map(|(&(start, end), m)| PortionStats {
                start,
                end,
                touched_samples: Estimate::from_moments(m),
            })
            .collect(),
    })
}

/// Upper bound on the coalesced cost growth claimed for a kind when both the
/// vocabulary and the batch grow by the scale factor.
pub fn claimed_ratio_bound(kind: DistributionKind) -> f64 {
    match kind {
        DistributionKind::Zipf => 2.0,
        _ => 1.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub kind: DistributionKind,
    pub shape: f64,
    pub base_size: usize,
    pub scaled_size: usize,
    pub base_batch: u64,
    pub scaled_batch: u64,
    pub lookups_per_sample: u32,
    pub base_unique: f64,
    pub scaled_unique: f64,
    /// Per-batch coalesced cost `b + d·U(b)`.
    pub base_cost: f64,
    pub scaled_cost: f64,
    pub coalesced_ratio: f64,
    /// `U(factor·b) / U(b)` over the scaled vocabulary.
    pub embedding_ratio: f64,
    /// Per-batch cost without coalescing grows as `b·d`.
    pub baseline_ratio: f64,
    pub ratio_bound: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub factor: usize,
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    pub fn all_within_bounds(&self) -> bool {
        self.rows.iter().all(|r| r.within_bound)
    }

    pub fn to_csv(&self) -> String {
        use crate::report::format_float as f;
        let mut out = String::from(
            "kind,shape,base_size,scaled_size,base_batch,scaled_batch,lookups_per_sample,\
base_unique,scaled_unique,base_cost,scaled_cost,coalesced_ratio,embedding_ratio,baseline_ratio,ratio_bound,within_bound\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.kind,
                f(r.shape),
                r.base_size,
                r.scaled_size,
                r.base_batch,
                r.scaled_batch,
                r.lookups_per_sample,
                f(r.base_unique),
                f(r.scaled_unique),
                f(r.base_cost),
                f(r.scaled_cost),
                f(r.coalesced_ratio),
                f(r.embedding_ratio),
                f(r.baseline_ratio),
                f(r.ratio_bound),
                r.within_bound
            ));
        }
        out
    }
}

/// Compares per-batch coalesced cost at `(E, b)` and `(factor·E, factor·b)`
/// for each parametric distribution.
pub fn scaling_study(
    specs: &[DistributionSpec],
    base_batch: u64,
    lookups_per_sample: u32,
    factor: usize,
) -> Result<ScalingReport> {
    if base_batch == 0 || lookups_per_sample == 0 {
        return Err(Error::invalid(
            "batch size and lookups per sample must be at least 1",
        ));
    }
    let scaled_batch = base_batch
        .checked_mul(factor as u64)
        .ok_or_else(|| Error::invalid("scaled batch size overflows"))?;
    let d = lookups_per_sample as f64;
    let rows = specs
        .iter()
        .map(|spec| {
            let scaled = spec.scale(factor)?;
            let base_cost = coalesced_batch_cost(&spec.materialize()?, base_batch)?;
            let scaled_cost = coalesced_batch_cost(&scaled.materialize()?, scaled_batch)?;
            let per_batch = |c: &CostBreakdown| c.index_cost + d * c.embedding_cost;
            let (bc, sc) = (per_batch(&base_cost), per_batch(&scaled_cost));
            let ratio = sc / bc;
            let bound = claimed_ratio_bound(spec.kind());
            Ok(ScalingRow {
                kind: spec.kind(),
                shape: spec.shape().expect("scale rejects empirical specs"),
                base_size: spec.size(),
                scaled_size: scaled.size(),
                base_batch,
                scaled_batch,
                lookups_per_sample,
                base_unique: base_cost.embedding_cost,
                scaled_unique: scaled_cost.embedding_cost,
                base_cost: bc,
                scaled_cost: sc,
                coalesced_ratio: ratio,
                embedding_ratio: scaled_cost.embedding_cost / base_cost.embedding_cost,
                baseline_ratio: (scaled_batch as f64 * d) / (base_batch as f64 * d),
                ratio_bound: bound,
                within_bound: ratio < bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingReport { factor, rows })
}
