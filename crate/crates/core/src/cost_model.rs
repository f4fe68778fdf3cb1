//! Closed-form expected communication cost of batched embedding lookups.
//!
//! Costs are counted in abstract units: one unit per transmitted embedding
//! vector and one unit per transmitted index. Following the coalescing model,
//! the index term is charged once per sample (`b` per batch, `Q` per epoch),
//! not once per lookup; [`UNITS_NOTE`] travels with every [`CostBreakdown`] so
//! reports carry the convention with them.
//!
//! Every embedding in a batch of `b` i.i.d. lookups appears at least once with
//! probability `1 - (1 - P(e))^b`. Summing over the vocabulary gives the
//! expected number of unique embeddings a coalesced batch must send.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Absolute tolerance on the probability sum of a distribution.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

pub const UNITS_NOTE: &str = "abstract units: 1 per embedding vector, 1 per sample index \
(index cost is b per batch and Q per epoch, not multiplied by lookups per sample)";

/// Access probabilities over an embedding vocabulary `[0, E)`.
///
/// Probabilities are held in non-increasing order (ties broken by the smaller
/// id) together with the mapping back to original ids, so that "the top `k`
/// embeddings" is a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDistribution {
    ranked_probs: Vec<f64>,
    ranked_ids: Vec<u32>,
    rank_of_id: Vec<u32>,
}

impl EmbeddingDistribution {
    /// Builds a distribution from probabilities indexed by embedding id.
    pub fn new(probs_by_id: Vec<f64>) -> Result<Self> {
        if probs_by_id.is_empty() {
            return Err(Error::invalid(
                "a distribution needs at least one embedding",
            ));
        }
        if probs_by_id.len() > u32::MAX as usize {
            return Err(Error::invalid("vocabulary exceeds u32 id space"));
        }
        for (index, &value) in probs_by_id.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        let sum = compensated_sum(probs_by_id.iter().copied());
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::NotNormalized {
                sum,
                tolerance: PROB_SUM_TOLERANCE,
            });
        }

        let mut ranked_ids: Vec<u32> = (0..probs_by_id.len() as u32).collect();
        let already_ranked = probs_by_id.windows(2).all(|w| w[0] >= w[1]);
        if !already_ranked {
            ranked_ids.sort_by(|&a, &b| {
                probs_by_id[b as usize]
                    .total_cmp(&probs_by_id[a as usize])
                    .then(a.cmp(&b))
            });
        }
        let ranked_probs = ranked_ids
            .iter()
            .map(|&id| probs_by_id[id as usize])
            .collect();
        let mut rank_of_id = vec![0u32; ranked_ids.len()];
        for (rank, &id) in ranked_ids.iter().enumerate() {
            rank_of_id[id as usize] = rank as u32;
        }
        Ok(Self {
            ranked_probs,
            ranked_ids,
            rank_of_id,
        })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid(
                "a distribution needs at least one embedding",
            ));
        }
        Self::new(vec![1.0 / size as f64; size])
    }

    /// A single embedding accessed with probability 1.
    pub fn degenerate() -> Self {
        Self::new(vec![1.0]).expect("single atom is a valid distribution")
    }

    /// Vocabulary size `E`.
    pub fn len(&self) -> usize {
        self.ranked_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked_probs.is_empty()
    }

    /// Probabilities in rank order (most probable first).
    pub fn ranked_probs(&self) -> &[f64] {
        &self.ranked_probs
    }

    /// Original ids in rank order.
    pub fn ranked_ids(&self) -> &[u32] {
        &self.ranked_ids
    }

    pub fn prob_of(&self, id: u32) -> Option<f64> {
        self.rank_of(id).map(|r| self.ranked_probs[r])
    }

    pub fn rank_of(&self, id: u32) -> Option<usize> {
        self.rank_of_id.get(id as usize).map(|&r| r as usize)
    }

    /// The `k` most probable ids, ties broken by the smaller id.
    pub fn top_ids(&self, k: usize) -> &[u32] {
        &self.ranked_ids[..k.min(self.len())]
    }

    /// Probabilities indexed by original id.
    pub fn probs_by_id(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (rank, &id) in self.ranked_ids.iter().enumerate() {
            out[id as usize] = self.ranked_probs[rank];
        }
        out
    }

    pub fn max_prob(&self) -> f64 {
        self.ranked_probs[0]
    }

    /// Membership mask over ids; rejects ids outside the vocabulary.
    pub fn cache_mask(&self, cache: &[u32]) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.len()];
        for &id in cache {
            let slot = mask.get_mut(id as usize).ok_or(Error::IdOutOfRange {
                id: id as u64,
                size: self.len(),
            })?;
            *slot = true;
        }
        Ok(mask)
    }
}

/// Dataset size `Q`, batch size `b` and lookups per sample `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    num_samples: u64,
    batch_size: u64,
    lookups_per_sample: u32,
}

impl WorkloadSpec {
    pub fn new(num_samples: u64, batch_size: u64, lookups_per_sample: u32) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if lookups_per_sample == 0 {
            return Err(Error::invalid("lookups per sample must be at least 1"));
        }
        if batch_size > num_samples {
            return Err(Error::invalid(format!(
                "batch size {batch_size} exceeds dataset size {num_samples}"
            )));
        }
        Ok(Self {
            num_samples,
            batch_size,
            lookups_per_sample,
        })
    }

    pub fn num_samples(&self) -> u64 {
        self.num_samples
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }

    pub fn lookups_per_sample(&self) -> u32 {
        self.lookups_per_sample
    }

    /// Expected number of batches per epoch, `Q / b`, as a real ratio.
    pub fn batches_per_epoch(&self) -> f64 {
        self.num_samples as f64 / self.batch_size as f64
    }
}

/// Index and embedding components of a communication cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub index_cost: f64,
    pub embedding_cost: f64,
    pub total: f64,
    pub units_note: String,
}

impl CostBreakdown {
    pub fn new(index_cost: f64, embedding_cost: f64) -> Self {
        Self {
            index_cost,
            embedding_cost,
            total: index_cost + embedding_cost,
            units_note: UNITS_NOTE.to_string(),
        }
    }
}

/// `1 - (1 - p)^b` without validation. Evaluated as `-expm1(b * ln(1 - p))`
/// so that small `p` with large `b` keeps full precision.
#[inline]
pub(crate) fn presence(p: f64, b: u64) -> f64 {
    if p >= 1.0 {
        1.0
    } else if p <= 0.0 {
        0.0
    } else {
        presence_from_log_complement((-p).ln_1p(), b)
    }
}

#[inline]
pub(crate) fn presence_from_log_complement(log_complement: f64, b: u64) -> f64 {
    if log_complement == f64::NEG_INFINITY {
        1.0
    } else {
        -(b as f64 * log_complement).exp_m1()
    }
}

/// Probability that an embedding with access probability `p` appears at least
/// once in a batch of `b` independent lookups.
pub fn batch_presence_prob(p: f64, b: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability { index: 0, value: p });
    }
    if b == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    Ok(presence(p, b))
}

/// Expected number of distinct embeddings among `b` i.i.d. lookups.
pub fn expected_unique_per_batch(dist: &EmbeddingDistribution, b: u64) -> Result<f64> {
    if b == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    Ok(unique_over_ranks(dist.ranked_probs(), b))
}

pub(crate) fn unique_over_ranks(ranked_probs: &[f64], b: u64) -> f64 {
    compensated_sum(ranked_probs.iter().map(|&p| presence(p, b)))
}

/// Per-batch cost with coalescing: `b` indices plus the expected unique
/// embeddings.
pub fn coalesced_batch_cost(dist: &EmbeddingDistribution, b: u64) -> Result<CostBreakdown> {
    let unique = expected_unique_per_batch(dist, b)?;
    Ok(CostBreakdown::new(b as f64, unique))
}

/// Per-epoch cost when every lookup ships its own embedding: `Q * d`.
pub fn baseline_epoch_cost(spec: &WorkloadSpec) -> f64 {
    spec.num_samples as f64 * spec.lookups_per_sample as f64
}

/// Per-epoch cost with coalescing: `Q + (Q / b) * U(b) * d`.
pub fn coalesced_epoch_cost(dist: &EmbeddingDistribution, spec: &WorkloadSpec) -> CostBreakdown {
    let unique = unique_over_ranks(dist.ranked_probs(), spec.batch_size);
    epoch_breakdown(spec, unique)
}

/// Per-epoch cost with coalescing when the ids in `cache` live on the device
/// and are never transmitted.
pub fn cached_epoch_cost(
    dist: &EmbeddingDistribution,
    spec: &WorkloadSpec,
    cache: &[u32],
) -> Result<CostBreakdown> {
    let mask = dist.cache_mask(cache)?;
    let mut acc = CompensatedSum::default();
    for (&p, &id) in dist.ranked_probs().iter().zip(dist.ranked_ids()) {
        if !mask[id as usize] {
            acc.add(presence(p, spec.batch_size));
        }
    }
    Ok(epoch_breakdown(spec, acc.value()))
}

fn epoch_breakdown(spec: &WorkloadSpec, unique_per_batch: f64) -> CostBreakdown {
    let embedding = spec.batches_per_epoch() * unique_per_batch * spec.lookups_per_sample as f64;
    CostBreakdown::new(spec.num_samples as f64, embedding)
}

/// Presence evaluation with `ln(1 - p)` precomputed per rank, for callers that
/// evaluate many batch sizes against one distribution. Results are bitwise
/// identical to [`cached_epoch_cost`] with a rank-prefix cache.
#[derive(Debug, Clone)]
pub(crate) struct PresenceTable {
    log_complement: Vec<f64>,
}

impl PresenceTable {
    pub fn new(dist: &EmbeddingDistribution) -> Self {
        let log_complement = dist
            .ranked_probs()
            .iter()
            .map(|&p| {
                if p >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    (-p).ln_1p()
                }
            })
            .collect();
        Self { log_complement }
    }

    /// Expected unique non-cached embeddings per batch when the `cached`
    /// most probable embeddings are on the device.
    pub fn unique_excluding_top(&self, cached: usize, b: u64) -> f64 {
        let mut acc = CompensatedSum::default();
        for &l in &self.log_complement[cached.min(self.log_complement.len())..] {
            acc.add(presence_from_log_complement(l, b));
        }
        acc.value()
    }

    /// Total epoch cost for a rank-prefix cache, `Q + (Q / b) * U * d`.
    pub fn epoch_total(&self, cached: usize, num_samples: u64, b: u64, lookups: u32) -> f64 {
        let unique = self.unique_excluding_top(cached, b);
        let embedding = num_samples as f64 / b as f64 * unique * lookups as f64;
        num_samples as f64 + embedding
    }
}


#[cfg(test)]
mod tests {
    use super::oracle::enumerate_expected_unique;
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> EmbeddingDistribution {
        EmbeddingDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn presence_examples() {
        assert_eq!(batch_presence_prob(0.0, 100).unwrap(), 0.0);
        assert_eq!(batch_presence_prob(1.0, 1).unwrap(), 1.0);
        assert_relative_eq!(batch_presence_prob(0.5, 2).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn presence_rejects_bad_input() {
        assert!(batch_presence_prob(-0.1, 3).is_err());
        assert!(batch_presence_prob(1.5, 3).is_err());
        assert!(batch_presence_prob(f64::NAN, 3).is_err());
        assert!(batch_presence_prob(0.5, 0).is_err());
    }

    #[test]
    fn presence_is_accurate_for_tiny_probabilities() {
        // 1 - (1 - 1e-12)^1000 ~= 1e-9 - 4.995e-19
        let p = batch_presence_prob(1e-12, 1000).unwrap();
        assert_relative_eq!(p, 1e-9 - 4.995e-19, max_relative = 1e-12);
        let naive = 1.0 - (1.0f64 - 1e-12).powi(1000);
        assert!(
            (naive - 1e-9).abs() / 1e-9 > 1e-6,
            "naive form should be visibly worse"
        );
    }

    #[test]
    fn distribution_validation() {
        assert!(EmbeddingDistribution::new(vec![]).is_err());
        assert!(EmbeddingDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(EmbeddingDistribution::new(vec![1.2, -0.2]).is_err());
        assert!(EmbeddingDistribution::new(vec![0.5, 0.5 + 5e-10]).is_ok());
        assert!(EmbeddingDistribution::new(vec![0.5, 0.5 + 5e-9]).is_err());
    }

    #[test]
    fn distribution_ranks_with_tie_break_by_id() {
        let d = dist(&[0.2, 0.4, 0.2, 0.2]);
        assert_eq!(d.ranked_ids(), &[1, 0, 2, 3]);
        assert_eq!(d.top_ids(2), &[1, 0]);
        assert_eq!(d.rank_of(3), Some(3));
        assert_eq!(d.prob_of(1), Some(0.4));
        assert_eq!(d.probs_by_id(), vec![0.2, 0.4, 0.2, 0.2]);
    }

    #[test]
    fn workload_validation() {
        assert!(WorkloadSpec::new(10, 0, 1).is_err());
        assert!(WorkloadSpec::new(10, 11, 1).is_err());
        assert!(WorkloadSpec::new(10, 10, 0).is_err());
        assert!(WorkloadSpec::new(10, 10, 1).is_ok());
    }

    #[test]
    fn expected_unique_examples() {
        let u2 = EmbeddingDistribution::uniform(2).unwrap();
        assert_relative_eq!(
            expected_unique_per_batch(&u2, 1).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let deg = EmbeddingDistribution::degenerate();
        assert_eq!(expected_unique_per_batch(&deg, 7).unwrap(), 1.0);

        let u4 = EmbeddingDistribution::uniform(4).unwrap();
        let oracle = enumerate_expected_unique(&u4, 2, &[]);
        // 12 of 16 ordered pairs are distinct: (12 * 2 + 4 * 1) / 16
        assert_relative_eq!(oracle, 1.75, epsilon = 1e-15);
        assert_relative_eq!(
            expected_unique_per_batch(&u4, 2).unwrap(),
            oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn expected_unique_matches_enumeration_on_skewed_dists() {
        let cases: &[(&[f64], u32)] = &[
            (&[0.5, 0.3, 0.2], 3),
            (&[0.7, 0.1, 0.1, 0.05, 0.05], 4),
            (&[0.25, 0.25, 0.5], 5),
            (&[0.9, 0.1], 6),
        ];
        for (p, b) in cases {
            let d = dist(p);
            let oracle = enumerate_expected_unique(&d, *b, &[]);
            assert_relative_eq!(
                expected_unique_per_batch(&d, *b as u64).unwrap(),
                oracle,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn coalesced_batch_examples() {
        let u2 = EmbeddingDistribution::uniform(2).unwrap();
        let c = coalesced_batch_cost(&u2, 1).unwrap();
        assert_eq!(c.index_cost, 1.0);
        assert_relative_eq!(c.total, 2.0, epsilon = 1e-15);

        let deg = EmbeddingDistribution::degenerate();
        assert_eq!(coalesced_batch_cost(&deg, 10).unwrap().total, 11.0);

        let u4 = EmbeddingDistribution::uniform(4).unwrap();
        let expected = 2.0 + enumerate_expected_unique(&u4, 2, &[]);
        assert_relative_eq!(
            coalesced_batch_cost(&u4, 2).unwrap().total,
            expected,
            epsilon = 1e-12
        );
        assert_relative_eq!(expected, 3.75, epsilon = 1e-15);
    }

    #[test]
    fn baseline_examples() {
        let cases = [
            ((100, 10, 4), 400.0),
            ((1, 1, 1), 1.0),
            ((5000, 256, 26), 130000.0),
        ];
        for ((q, b, d), want) in cases {
            assert_eq!(
                baseline_epoch_cost(&WorkloadSpec::new(q, b, d).unwrap()),
                want
            );
        }
    }

    #[test]
    fn coalesced_epoch_examples() {
        let deg = EmbeddingDistribution::degenerate();
        let spec = WorkloadSpec::new(100, 10, 1).unwrap();
        assert_eq!(coalesced_epoch_cost(&deg, &spec).total, 110.0);

        let u2 = EmbeddingDistribution::uniform(2).unwrap();
        let c = coalesced_epoch_cost(&u2, &spec);
        assert_relative_eq!(
            c.total,
            100.0 + 10.0 * 2.0 * (1.0 - 0.5f64.powi(10)),
            epsilon = 1e-10
        );
        assert_relative_eq!(c.total, 119.98046875, epsilon = 1e-10);

        let d = dist(&[0.1, 0.2, 0.3, 0.4]);
        let spec = WorkloadSpec::new(37, 1, 1).unwrap();
        assert_relative_eq!(coalesced_epoch_cost(&d, &spec).total, 74.0, epsilon = 1e-12);
    }

    #[test]
    fn cached_epoch_examples() {
        let u4 = EmbeddingDistribution::uniform(4).unwrap();
        let spec = WorkloadSpec::new(40, 4, 1).unwrap();
        let all = cached_epoch_cost(&u4, &spec, &[0, 1, 2, 3]).unwrap();
        assert_eq!(all.embedding_cost, 0.0);
        assert_eq!(all.total, 40.0);

        let none = cached_epoch_cost(&u4, &spec, &[]).unwrap();
        assert_eq!(none, coalesced_epoch_cost(&u4, &spec));

        let one = cached_epoch_cost(&u4, &spec, &[0]).unwrap();
        let oracle = 40.0 + 10.0 * enumerate_expected_unique(&u4, 4, &[0]);
        assert_relative_eq!(one.total, oracle, epsilon = 1e-10);
        assert_relative_eq!(
            one.total,
            40.0 + 10.0 * 3.0 * (1.0 - 0.75f64.powi(4)),
            epsilon = 1e-10
        );

        assert!(matches!(
            cached_epoch_cost(&u4, &spec, &[4]),
            Err(Error::IdOutOfRange { id: 4, size: 4 })
        ));
    }

    #[test]
    fn presence_table_matches_public_path_bitwise() {
        let d = dist(&[0.05, 0.4, 0.15, 0.3, 0.1]);
        let table = PresenceTable::new(&d);
        for k in 0..=5 {
            for b in [1u64, 3, 17] {
                let spec = WorkloadSpec::new(100, b, 3).unwrap();
                let public = cached_epoch_cost(&d, &spec, d.top_ids(k)).unwrap().total;
                assert_eq!(table.epoch_total(k, 100, b, 3).to_bits(), public.to_bits());
            }
        }
    }

    fn arb_dist(max_len: usize) -> impl Strategy<Value = EmbeddingDistribution> {
        proptest::collection::vec(0.0f64..1.0, 1..max_len).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 0.0).then(|| EmbeddingDistribution::new(w.iter().map(|x| x / s).collect()).ok())?
        })
    }

    proptest! {
        #[test]
        fn presence_is_monotone(p in 0.0f64..=1.0, q in 0.0f64..=1.0, b in 1u64..2000, c in 1u64..2000) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(presence(lo, b) <= presence(hi, b));
            let (bl, bh) = if b <= c { (b, c) } else { (c, b) };
            prop_assert!(presence(p, bl) <= presence(p, bh) + 1e-15);
            let v = presence(p, b);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn expected_unique_bounds(d in arb_dist(64), b in 1u64..1024) {
            let u = expected_unique_per_batch(&d, b).unwrap();
            let upper = (b as f64).min(d.len() as f64);
            prop_assert!(u <= upper + 1e-9);
            prop_assert!(u >= presence(d.max_prob(), b) - 1e-12);
        }

        #[test]
        fn epoch_embedding_cost_non_increasing_in_batch(d in arb_dist(64), b in 1u64..1024) {
            let q = 1u64 << 20;
            let lo = coalesced_epoch_cost(&d, &WorkloadSpec::new(q, b, 1).unwrap()).embedding_cost;
            let hi = coalesced_epoch_cost(&d, &WorkloadSpec::new(q, b + 1, 1).unwrap()).embedding_cost;
            prop_assert!(hi <= lo * (1.0 + 1e-12));
        }

        #[test]
        fn caching_more_never_costs_more(d in arb_dist(32), b in 1u64..256, seed in any::<u64>()) {
            let e = d.len() as u32;
            let small: Vec<u32> = (0..e).filter(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let mut large = small.clone();
            large.extend((0..e).filter(|i| (seed >> ((i + 7) % 64)) & 1 == 1));
            let spec = WorkloadSpec::new(1000, b.min(1000), 2).unwrap();
            let c_small = cached_epoch_cost(&d, &spec, &small).unwrap();
            let c_large = cached_epoch_cost(&d, &spec, &large).unwrap();
            prop_assert!(c_large.total <= c_small.total + 1e-9);
            prop_assert_eq!(c_small.total, c_small.index_cost + c_small.embedding_cost);
            prop_assert!(c_small.embedding_cost >= 0.0);
        }

        #[test]
        fn top_k_prefix_is_best_same_size_cache(d in arb_dist(10), b in 1u64..64, k in 0usize..10) {
            let e = d.len();
            let k = k.min(e);
            let spec = WorkloadSpec::new(640, b, 1).unwrap();
            let prefix = cached_epoch_cost(&d, &spec, d.top_ids(k)).unwrap().total;
            for mask in 0u32..(1 << e) {
                if mask.count_ones() as usize != k { continue; }
                let ids: Vec<u32> = (0..e as u32).filter(|i| mask >> i & 1 == 1).collect();
                let c = cached_epoch_cost(&d, &spec, &ids).unwrap().total;
                prop_assert!(c >= prefix - 1e-9 * prefix);
            }
        }
    }
}
