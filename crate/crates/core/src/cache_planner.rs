//! Memory-constrained choice of cache size and batch size.
//!
//! A device holds `M` parameters. Each sample in flight needs `a` of them and
//! each cached embedding needs `d_emb`, so caching `k` embeddings leaves room
//! for a batch of `floor((M - k·d_emb) / a)` samples. Caching removes
//! embeddings from the transfer set but shrinks the batch, and a smaller batch
//! coalesces less. The planner finds the cache size with the lowest expected
//! epoch cost.
//!
//! Candidates are always the most probable embeddings: for a fixed cache size
//! the probability-ranked prefix is optimal, so the search is over a single
//! integer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{
    cached_epoch_cost, CostBreakdown, EmbeddingDistribution, PresenceTable, WorkloadSpec,
};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Above this many candidate cache sizes the unimodality check samples
/// instead of visiting every candidate.
const FULL_CHECK_LIMIT: usize = 256;
const SAMPLED_CHECK_POINTS: usize = 256;

/// Device memory model, in parameter-count units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    total_params: u64,
    activation_params_per_sample: u64,
    embedding_params: u64,
    memory_efficiency: f64,
}

impl DeviceModel {
    pub fn new(
        total_params: u64,
        activation_params_per_sample: u64,
        embedding_params: u64,
    ) -> Result<Self> {
        Self::with_efficiency(
            total_params,
            activation_params_per_sample,
            embedding_params,
            1.0,
        )
    }

    /// `memory_efficiency` scales the usable budget to account for allocator
    /// overhead; it must lie in `(0, 1]`.
    pub fn with_efficiency(
        total_params: u64,
        activation_params_per_sample: u64,
        embedding_params: u64,
        memory_efficiency: f64,
    ) -> Result<Self> {
        if activation_params_per_sample == 0 {
            return Err(Error::invalid(
                "activation parameters per sample must be at least 1",
            ));
        }
        if embedding_params == 0 {
            return Err(Error::invalid("embedding parameters must be at least 1"));
        }
        if !(memory_efficiency > 0.0 && memory_efficiency <= 1.0) {
            return Err(Error::invalid(format!(
                "memory efficiency must be in (0, 1], got {memory_efficiency}"
            )));
        }
        let device = Self {
            total_params,
            activation_params_per_sample,
            embedding_params,
            memory_efficiency,
        };
        if device.usable_params() < activation_params_per_sample {
            return Err(Error::Infeasible(format!(
                "usable memory {} is smaller than one sample's activations {}",
                device.usable_params(),
                activation_params_per_sample
            )));
        }
        Ok(device)
    }

    pub fn total_params(&self) -> u64 {
        self.total_params
    }

    pub fn activation_params_per_sample(&self) -> u64 {
        self.activation_params_per_sample
    }

    pub fn embedding_params(&self) -> u64 {
        self.embedding_params
    }

    pub fn memory_efficiency(&self) -> f64 {
        self.memory_efficiency
    }

    /// `floor(η · M)`.
    pub fn usable_params(&self) -> u64 {
        if self.memory_efficiency == 1.0 {
            self.total_params
        } else {
            (self.total_params as f64 * self.memory_efficiency).floor() as u64
        }
    }

    /// Largest cache that still leaves room for one sample, ignoring
    /// vocabulary size.
    pub fn max_cache_size(&self) -> u64 {
        (self.usable_params() - self.activation_params_per_sample) / self.embedding_params
    }
}

/// Largest batch that fits next to a cache of `cache_size` embeddings.
pub fn max_batch_size(device: &DeviceModel, cache_size: u64) -> Result<u64> {
    let budget = device.usable_params();
    let cache_params = cache_size
        .checked_mul(device.embedding_params)
        .filter(|&c| c <= budget)
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "{cache_size} cached embeddings exceed the memory budget of {budget}"
            ))
        })?;
    let b = (budget - cache_params) / device.activation_params_per_sample;
    if b == 0 {
        return Err(Error::Infeasible(format!(
            "a cache of {cache_size} embeddings leaves no room for a single sample"
        )));
    }
    Ok(b)
}

/// Dataset size `Q` and lookups per sample `d`; the batch size is what the
/// planner decides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetShape {
    pub num_samples: u64,
    pub lookups_per_sample: u32,
}

impl DatasetShape {
    pub fn new(num_samples: u64, lookups_per_sample: u32) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if lookups_per_sample == 0 {
            return Err(Error::invalid("lookups per sample must be at least 1"));
        }
        Ok(Self {
            num_samples,
            lookups_per_sample,
        })
    }
}

/// Memory-limited batch size, additionally capped at the dataset size.
fn planner_batch_size(device: &DeviceModel, shape: &DatasetShape, cache_size: u64) -> Result<u64> {
    max_batch_size(device, cache_size).map(|b| b.min(shape.num_samples))
}

/// Effect of caching one more embedding, the `(k+1)`-th most probable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub candidate_id: u32,
    pub cache_size: u64,
    pub batch_size: u64,
    pub next_batch_size: u64,
    /// Probability that the candidate appears in a batch at the current
    /// batch size.
    pub presence_gain: f64,
    /// The gain the candidate must exceed for caching it to pay off.
    pub threshold: f64,
    /// Change in expected epoch cost from caching the candidate.
    pub delta_comm: f64,
    pub recommend: bool,
}

/// Evaluates caching the `(k+1)`-th most probable embedding on top of the
/// current top-`k` cache, both as a direct cost difference and in the
/// separated form `gain > threshold`, and checks that the two agree.
pub fn delta_comm(
    dist: &EmbeddingDistribution,
    device: &DeviceModel,
    shape: &DatasetShape,
    cache_size: u64,
) -> Result<MarginalReport> {
    let k = cache_size as usize;
    if k >= dist.len() {
        return Err(Error::invalid(format!(
            "all {} embeddings are already cached",
            dist.len()
        )));
    }
    let b = planner_batch_size(device, shape, cache_size)?;
    let b_next = planner_batch_size(device, shape, cache_size + 1)?;
    let probs = dist.ranked_probs();
    let candidate = crate::cost_model::presence(probs[k], b);

    let (bf, bnf) = (b as f64, b_next as f64);
    let mut rest_at_b = CompensatedSum::default();
    let mut rest_at_next = CompensatedSum::default();
    let mut threshold = CompensatedSum::default();
    for &p in &probs[k + 1..] {
        let at_b = crate::cost_model::presence(p, b);
        let at_next = crate::cost_model::presence(p, b_next);
        rest_at_b.add(at_b);
        rest_at_next.add(at_next);
        threshold.add((bf * at_next - bnf * at_b) / bnf);
    }
    let threshold = threshold.value();

    let scale = shape.num_samples as f64 * shape.lookups_per_sample as f64;
    let with_candidate = rest_at_next.value() * scale / bnf;
    let without_candidate = (rest_at_b.value() + candidate) * scale / bf;
    let delta = with_candidate - without_candidate;

    let recommend = delta < 0.0;
    let separated = candidate > threshold;
    if recommend != separated {
        // The forms are exact rearrangements; only a near-tie may disagree.
        let magnitude = 1.0 + rest_at_b.value() + bf / bnf * rest_at_next.value();
        if (candidate - threshold).abs() > 1e-9 * magnitude {
            return Err(Error::Invariant(format!(
                "marginal condition disagrees: delta {delta}, gain {candidate}, threshold {threshold}"
            )));
        }
    }

    Ok(MarginalReport {
        candidate_id: dist.ranked_ids()[k],
        cache_size,
        batch_size: b,
        next_batch_size: b_next,
        presence_gain: candidate,
        threshold,
        delta_comm: delta,
        recommend,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    /// Every feasible cache size was evaluated.
    Scan,
    /// Binary search on the sign of the marginal cost change.
    BinarySearch,
    /// Binary search found a non-unimodal cost curve and fell back to a scan.
    ScanFallback,
    /// A single cache size was evaluated on request.
    Fixed,
}

/// A cache size, the batch size it allows, and the resulting epoch cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePlan {
    pub cache_size: u64,
    pub cached_ids: Vec<u32>,
    /// Zero when infeasible.
    pub batch_size: u64,
    pub num_samples: u64,
    pub lookups_per_sample: u32,
    /// `None` when infeasible.
    pub expected_epoch_cost: Option<CostBreakdown>,
    pub feasible: bool,
    pub method: SearchMethod,
}

impl CachePlan {
    pub fn fallback_used(&self) -> bool {
        self.method == SearchMethod::ScanFallback
    }

    pub fn workload(&self) -> Result<WorkloadSpec> {
        WorkloadSpec::new(self.num_samples, self.batch_size, self.lookups_per_sample)
    }
}

/// Plan for exactly `cache_size` cached embeddings, feasible or not.
pub fn plan_for_cache_size(
    dist: &EmbeddingDistribution,
    device: &DeviceModel,
    shape: &DatasetShape,
    cache_size: u64,
) -> Result<CachePlan> {
    if cache_size as usize > dist.len() {
        return Err(Error::invalid(format!(
            "cache size {cache_size} exceeds the {} available embeddings",
            dist.len()
        )));
    }
    build_plan(dist, device, shape, cache_size, SearchMethod::Fixed)
}

fn build_plan(
    dist: &EmbeddingDistribution,
    device: &DeviceModel,
    shape: &DatasetShape,
    cache_size: u64,
    method: SearchMethod,
) -> Result<CachePlan> {
    let cached_ids = dist.top_ids(cache_size as usize).to_vec();
    let (batch_size, cost) = match planner_batch_size(device, shape, cache_size) {
        Ok(b) => {
            let spec = WorkloadSpec::new(shape.num_samples, b, shape.lookups_per_sample)?;
            (b, Some(cached_epoch_cost(dist, &spec, &cached_ids)?))
        }
        Err(Error::Infeasible(_)) => (0, None),
        Err(e) => return Err(e),
    };
    Ok(CachePlan {
        cache_size,
        cached_ids,
        batch_size,
        num_samples: shape.num_samples,
        lookups_per_sample: shape.lookups_per_sample,
        feasible: cost.is_some(),
        expected_epoch_cost: cost,
        method,
    })
}

/// Rank-prefix cost evaluation shared by the scan and the search.
struct CostCurve<'a> {
    table: PresenceTable,
    device: &'a DeviceModel,
    shape: &'a DatasetShape,
    max_cache: u64,
}

impl<'a> CostCurve<'a> {
    fn new(dist: &EmbeddingDistribution, device: &'a DeviceModel, shape: &'a DatasetShape) -> Self {
        Self {
            table: PresenceTable::new(dist),
            device,
            shape,
            max_cache: device.max_cache_size().min(dist.len() as u64),
        }
    }

    fn batch(&self, k: u64) -> u64 {
        planner_batch_size(self.device, self.shape, k).expect("k within the feasible range")
    }

    fn cost(&self, k: u64) -> f64 {
        self.table.epoch_total(
            k as usize,
            self.shape.num_samples,
            self.batch(k),
            self.shape.lookups_per_sample,
        )
    }

    /// Largest cache size for each distinct batch size, in increasing order.
    /// Within a run of equal batch sizes cost cannot increase with `k`, so
    /// the optimum is at one of these or ties with an earlier member of its
    /// run.
    fn run_ends(&self) -> Vec<u64> {
        let a = self.device.activation_params_per_sample;
        let e = self.device.embedding_params;
        let budget = self.device.usable_params();
        let mut ends = Vec::new();
        let mut k = 0u64;
        while k <= self.max_cache {
            let b = self.batch(k);
            // last k' with planner batch size still equal to b
            let last = if b == self.shape.num_samples {
                // capped at Q: memory batch stays >= Q while k·e <= budget - Q·a
                match budget.checked_sub(self.shape.num_samples * a) {
                    Some(room) => room / e,
                    None => k,
                }
            } else {
                (budget - b * a) / e
            };
            let last = last.clamp(k, self.max_cache);
            ends.push(last);
            k = last + 1;
        }
        ends
    }

    /// Walks left from `k` while the cost stays equal, so ties resolve to the
    /// smaller cache.
    fn settle_ties(&self, mut k: u64, cost: f64) -> u64 {
        while k > 0 && self.cost(k - 1) <= cost {
            k -= 1;
        }
        k
    }
}

/// Exhaustive oracle: evaluates every feasible cache size and returns the
/// cheapest, preferring the smaller cache on ties.
pub fn optimal_cache_size_scan(
    dist: &EmbeddingDistribution,
    device: &DeviceModel,
    shape: &DatasetShape,
) -> Result<CachePlan> {
    let curve = CostCurve::new(dist, device, shape);
    let best = scan_minimum(&curve);
    build_plan(dist, device, shape, best, SearchMethod::Scan)
}

fn scan_minimum(curve: &CostCurve<'_>) -> u64 {
    let costs: Vec<f64> = (0..=curve.max_cache)
        .into_par_iter()
        .map(|k| curve.cost(k))
        .collect();
    let mut best = 0usize;
    for (k, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = k;
        }
    }
    best as u64
}

/// Binary search for the cache size where caching one more block of
/// embeddings stops paying off.
///
/// The search runs over the largest cache size for each distinct batch size.
/// The cost curve is then checked for unimodality (every candidate when there
/// are at most a few hundred, evenly spaced samples otherwise); if the check
/// fails the result comes from [`optimal_cache_size_scan`] instead.
pub fn optimal_cache_size_search(
    dist: &EmbeddingDistribution,
    device: &DeviceModel,
    shape: &DatasetShape,
) -> Result<CachePlan> {
    let curve = CostCurve::new(dist, device, shape);
    let ends = curve.run_ends();
    let n = ends.len();

    // first index i with cost(ends[i + 1]) >= cost(ends[i])
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if curve.cost(ends[mid + 1]) >= curve.cost(ends[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let turn = lo;

    if !is_unimodal_around(&curve, &ends, turn) {
        let best = scan_minimum(&curve);
        return build_plan(dist, device, shape, best, SearchMethod::ScanFallback);
    }
    let best = curve.settle_ties(ends[turn], curve.cost(ends[turn]));
    build_plan(dist, device, shape, best, SearchMethod::BinarySearch)
}

/// Strictly decreasing up to `turn` and non-decreasing after it, over the
/// checked candidates.
fn is_unimodal_around(curve: &CostCurve<'_>, ends: &[u64], turn: usize) -> bool {
    let n = ends.len();
    let mut idx: Vec<usize> = if n <= FULL_CHECK_LIMIT {
        (0..n).collect()
    } else {
        (0..SAMPLED_CHECK_POINTS)
            .map(|i| i * (n - 1) / (SAMPLED_CHECK_POINTS - 1))
            .chain([turn.saturating_sub(1), turn, (turn + 1).min(n - 1)])
            .collect()
    };
    idx.sort_unstable();
    idx.dedup();
    let costs: Vec<f64> = idx.par_iter().map(|&i| curve.cost(ends[i])).collect();
    idx.windows(2).zip(costs.windows(2)).all(|(i, c)| {
        if i[1] <= turn {
            c[1] < c[0]
        } else if i[0] >= turn {
            c[1] >= c[0]
        } else {
            // the pair straddles the turn, which is a minimum of the samples
            true
        }
    }) && {
        let turn_cost = curve.cost(ends[turn]);
        costs.iter().all(|&c| c >= turn_cost)
    }
}

/// Expected main-memory embedding lookups per epoch: every non-cached
/// embedding that is transmitted is first read from host memory.
pub fn memory_io_proxy(
    dist: &EmbeddingDistribution,
    spec: &WorkloadSpec,
    cache: &[u32],
) -> Result<f64> {
    Ok(cached_epoch_cost(dist, spec, cache)?.embedding_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DistributionKind, DistributionSpec};
    use proptest::prelude::*;

    fn zipf(size: usize, s: f64) -> EmbeddingDistribution {
        DistributionSpec::parametric(DistributionKind::Zipf, size, s)
            .unwrap()
            .materialize()
            .unwrap()
    }

    #[test]
    fn max_batch_size_examples() {
        let d = DeviceModel::new(1000, 9, 10).unwrap();
        assert_eq!(max_batch_size(&d, 10).unwrap(), 100);
        let d = DeviceModel::new(10, 10, 1).unwrap();
        assert_eq!(max_batch_size(&d, 0).unwrap(), 1);
        assert!(matches!(max_batch_size(&d, 5), Err(Error::Infeasible(_))));
        assert!(matches!(max_batch_size(&d, 11), Err(Error::Infeasible(_))));
        assert!(matches!(
            max_batch_size(&d, u64::MAX),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn device_validation() {
        assert!(matches!(
            DeviceModel::new(5, 10, 1),
            Err(Error::Infeasible(_))
        ));
        assert!(DeviceModel::new(10, 0, 1).is_err());
        assert!(DeviceModel::new(10, 1, 0).is_err());
        assert!(DeviceModel::with_efficiency(10, 1, 1, 0.0).is_err());
        assert!(DeviceModel::with_efficiency(10, 1, 1, 1.5).is_err());
        let d = DeviceModel::with_efficiency(1000, 10, 1, 0.5).unwrap();
        assert_eq!(d.usable_params(), 500);
        assert_eq!(max_batch_size(&d, 0).unwrap(), 50);
        assert!(matches!(
            DeviceModel::with_efficiency(100, 60, 1, 0.5),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn delta_degenerate_recommends_caching() {
        let dist = EmbeddingDistribution::degenerate();
        let device = DeviceModel::new(10_000, 10, 5).unwrap();
        let shape = DatasetShape::new(1000, 2).unwrap();
        let r = delta_comm(&dist, &device, &shape, 0).unwrap();
        assert!(r.recommend);
        assert!(r.delta_comm < 0.0);
        assert_eq!(r.candidate_id, 0);
        assert!(delta_comm(&dist, &device, &shape, 1).is_err());
    }

    #[test]
    fn delta_uniform_with_expensive_embeddings_declines() {
        let dist = EmbeddingDistribution::uniform(4).unwrap();
        let device = DeviceModel::new(100, 1, 50).unwrap();
        let shape = DatasetShape::new(1000, 1).unwrap();
        let r = delta_comm(&dist, &device, &shape, 0).unwrap();
        assert_eq!((r.batch_size, r.next_batch_size), (100, 50));
        // commn2 = 4(1 - 0.75^100) Q / 100, commn1 = 3(1 - 0.75^50) Q / 50
        let q = 1000.0;
        let direct =
            3.0 * (1.0 - 0.75f64.powi(50)) * q / 50.0 - 4.0 * (1.0 - 0.75f64.powi(100)) * q / 100.0;
        assert!((r.delta_comm - direct).abs() < 1e-9);
        assert!(!r.recommend);
    }

    #[test]
    fn delta_zipf_64_golden() {
        let dist = zipf(64, 1.0);
        let device = DeviceModel::new(4096, 4, 16).unwrap();
        let shape = DatasetShape::new(100_000, 1).unwrap();
        let r = delta_comm(&dist, &device, &shape, 0).unwrap();
        assert_eq!((r.batch_size, r.next_batch_size), (1024, 1020));

        // Direct evaluation of the two epoch costs, independent of the report.
        let probs = dist.ranked_probs();
        let u = |b: i32, from: usize| -> f64 {
            probs[from..].iter().map(|p| 1.0 - (1.0 - p).powi(b)).sum()
        };
        let q = 100_000.0;
        let direct = u(1020, 1) * q / 1020.0 - u(1024, 0) * q / 1024.0;
        assert!((r.delta_comm - direct).abs() < 1e-6 * direct.abs());
        // The top Zipf embedding is in essentially every batch, so caching it
        // removes a full unit per batch at a cost of 4 batch slots.
        assert!(r.recommend);
        assert!(direct < 0.0);
    }

    #[test]
    fn delta_rejects_infeasible_next_step() {
        let dist = EmbeddingDistribution::uniform(8).unwrap();
        let device = DeviceModel::new(20, 10, 6).unwrap();
        let shape = DatasetShape::new(100, 1).unwrap();
        assert!(delta_comm(&dist, &device, &shape, 0).is_ok());
        assert!(matches!(
            delta_comm(&dist, &device, &shape, 1),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn scan_examples() {
        let shape = DatasetShape::new(10_000, 4).unwrap();
        let device = DeviceModel::new(10_000, 10, 2).unwrap();
        let plan =
            optimal_cache_size_scan(&EmbeddingDistribution::degenerate(), &device, &shape).unwrap();
        assert_eq!(plan.cache_size, 1);
        assert_eq!(plan.cached_ids, vec![0]);
        assert_eq!(plan.batch_size, 999);

        let tight = DeviceModel::new(20, 15, 6).unwrap();
        let plan =
            optimal_cache_size_scan(&EmbeddingDistribution::uniform(1).unwrap(), &tight, &shape)
                .unwrap();
        assert_eq!(plan.cache_size, 0);
        assert_eq!(plan.batch_size, 1);
        assert!(plan.feasible);
    }

    #[test]
    fn scan_zipf_32_golden() {
        let dist = zipf(32, 1.0);
        let device = DeviceModel::new(2048, 2, 8).unwrap();
        let shape = DatasetShape::new(10_000, 4).unwrap();
        let plan = optimal_cache_size_scan(&dist, &device, &shape).unwrap();
        // Frozen from the first run of the exhaustive scan.
        assert_eq!(plan.cache_size, GOLDEN_ZIPF32_CACHE);
        assert_eq!(plan.batch_size, (2048 - 8 * GOLDEN_ZIPF32_CACHE) / 2);
        let search = optimal_cache_size_search(&dist, &device, &shape).unwrap();
        assert_eq!(search.cache_size, plan.cache_size);
    }

    const GOLDEN_ZIPF32_CACHE: u64 = 32;

    #[test]
    fn non_unimodal_curve_falls_back_to_scan() {
        let dist = zipf(20_000, 1.0);
        let device = DeviceModel::new(50_000, 1, 16).unwrap();
        let shape = DatasetShape::new(1_000_000, 1).unwrap();
        let scan = optimal_cache_size_scan(&dist, &device, &shape).unwrap();
        // Frozen from the first run of the exhaustive scan.
        assert_eq!(scan.cache_size, 3124);
        assert_eq!(scan.batch_size, 16);
        let search = optimal_cache_size_search(&dist, &device, &shape).unwrap();
        assert_eq!(search.method, SearchMethod::ScanFallback);
        assert!(search.fallback_used());
        assert_eq!(search.cache_size, scan.cache_size);
    }

    #[test]
    fn search_examples() {
        let shape = DatasetShape::new(10_000, 4).unwrap();
        let device = DeviceModel::new(100_000, 10, 2).unwrap();
        let plan = optimal_cache_size_search(&EmbeddingDistribution::degenerate(), &device, &shape)
            .unwrap();
        assert_eq!(plan.cache_size, 1);

        let huge = DeviceModel::new(100_000, 10, 40_000).unwrap();
        let uniform = EmbeddingDistribution::uniform(16).unwrap();
        let s = optimal_cache_size_search(&uniform, &huge, &shape).unwrap();
        let o = optimal_cache_size_scan(&uniform, &huge, &shape).unwrap();
        assert_eq!(s.cache_size, 0);
        assert_eq!(o.cache_size, 0);
    }

    #[test]
    fn plan_for_fixed_size_reports_infeasibility() {
        let dist = EmbeddingDistribution::uniform(8).unwrap();
        let device = DeviceModel::new(20, 10, 6).unwrap();
        let shape = DatasetShape::new(100, 1).unwrap();
        let plan = plan_for_cache_size(&dist, &device, &shape, 2).unwrap();
        assert!(!plan.feasible);
        assert_eq!(plan.batch_size, 0);
        assert!(plan.expected_epoch_cost.is_none());
        assert!(plan_for_cache_size(&dist, &device, &shape, 9).is_err());
    }

    #[test]
    fn batch_size_capped_at_dataset_size() {
        let dist = zipf(16, 1.0);
        let device = DeviceModel::new(1_000_000, 1, 1).unwrap();
        let shape = DatasetShape::new(100, 1).unwrap();
        let plan = optimal_cache_size_search(&dist, &device, &shape).unwrap();
        // Memory is no constraint: cache everything, batch is the whole dataset.
        assert_eq!(plan.cache_size, 16);
        assert_eq!(plan.batch_size, 100);
        assert_eq!(plan.expected_epoch_cost.unwrap().total, 100.0);
    }

    #[test]
    fn memory_io_proxy_examples() {
        let deg = EmbeddingDistribution::degenerate();
        let spec = WorkloadSpec::new(100, 10, 1).unwrap();
        assert_eq!(memory_io_proxy(&deg, &spec, &[]).unwrap(), 10.0);
        assert_eq!(memory_io_proxy(&deg, &spec, &[0]).unwrap(), 0.0);
        let u = EmbeddingDistribution::uniform(5).unwrap();
        assert_eq!(memory_io_proxy(&u, &spec, &[0, 1, 2, 3, 4]).unwrap(), 0.0);
    }

    #[test]
    fn run_ends_cover_every_batch_size() {
        let dist = zipf(50, 1.0);
        for (m, a, e) in [(200u64, 3u64, 1u64), (200, 1, 3), (97, 7, 7), (1000, 2, 5)] {
            let device = DeviceModel::new(m, a, e).unwrap();
            let shape = DatasetShape::new(40, 1).unwrap();
            let curve = CostCurve::new(&dist, &device, &shape);
            let ends = curve.run_ends();
            assert_eq!(*ends.last().unwrap(), curve.max_cache);
            for w in ends.windows(2) {
                assert!(curve.batch(w[0]) > curve.batch(w[1]));
                assert_eq!(curve.batch(w[0] + 1), curve.batch(w[1]));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn batch_size_monotone_in_cache(m in 10u64..5000, a in 1u64..50, e in 1u64..50, k in 0u64..500) {
            prop_assume!(m >= a);
            let d = DeviceModel::new(m, a, e).unwrap();
            if let (Ok(b0), Ok(b1)) = (max_batch_size(&d, k), max_batch_size(&d, k + 1)) {
                prop_assert!(b1 <= b0);
                if e >= a { prop_assert!(b1 < b0); }
            }
        }

        #[test]
        fn marginal_forms_agree(
            weights in proptest::collection::vec(0.01f64..1.0, 2..40),
            a in 1u64..20, e in 1u64..20, extra in 50u64..4000, k in 0usize..10,
        ) {
            let s: f64 = weights.iter().sum();
            let dist = EmbeddingDistribution::new(weights.iter().map(|w| w / s).collect()).unwrap();
            let device = DeviceModel::new(a + extra, a, e).unwrap();
            let shape = DatasetShape::new(1 << 16, 3).unwrap();
            let k = k.min(dist.len() - 1) as u64;
            if let Ok(r) = delta_comm(&dist, &device, &shape, k) {
                prop_assert_eq!(r.recommend, r.presence_gain > r.threshold);
                let direct = plan_for_cache_size(&dist, &device, &shape, k + 1).unwrap().expected_epoch_cost.unwrap().total
                    - plan_for_cache_size(&dist, &device, &shape, k).unwrap().expected_epoch_cost.unwrap().total;
                prop_assert!((direct - r.delta_comm).abs() <= 1e-6 * (1.0 + direct.abs()));
            }
        }

        #[test]
        fn search_matches_scan_small(
            weights in proptest::collection::vec(0.0f64..1.0, 1..48),
            a in 1u64..16, e in 1u64..16, extra in 0u64..800, q in 1u64..5000, d in 1u32..8,
        ) {
            let s: f64 = weights.iter().sum();
            prop_assume!(s > 0.0);
            let dist = EmbeddingDistribution::new(weights.iter().map(|w| w / s).collect()).unwrap();
            let device = DeviceModel::new(a + extra, a, e).unwrap();
            let shape = DatasetShape::new(q, d).unwrap();
            let scan = optimal_cache_size_scan(&dist, &device, &shape).unwrap();
            let search = optimal_cache_size_search(&dist, &device, &shape).unwrap();
            prop_assert_eq!(scan.cache_size, search.cache_size);
            prop_assert_eq!(scan.batch_size, search.batch_size);
        }
    }
}
