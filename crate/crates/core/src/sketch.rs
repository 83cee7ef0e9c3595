//! Mergeable weighted quantile summaries.
//!
//! Each entry keeps a retained value together with bounds on the weighted
//! rank around it:
//!
//! * `min_rank` is a lower bound on the weight strictly below `value`,
//! * `max_rank` is an upper bound on the weight at or below `value`,
//! * `weight` is a lower bound on the weight sitting exactly at `value`.
//!
//! A sketch with error `eps` keeps every rank band no wider than
//! `eps * total_weight`: both the band of an entry itself
//! (`max_rank - min_rank - weight`) and the band between adjacent entries
//! (the gap a value falling between them could occupy). Merging adds bands
//! shard by shard, so the relative bound survives any merge tree, and
//! pruning only drops an entry when the widened band stays within bound.
//! Point queries answer from the middle of a band and are therefore off by
//! at most `eps * total_weight / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchEntry {
    pub value: f64,
    pub weight: f64,
    pub min_rank: f64,
    pub max_rank: f64,
}

impl SketchEntry {
    /// Lower bound on the weight at or below `value`.
    fn min_rank_next(&self) -> f64 {
        self.min_rank + self.weight
    }

    /// Upper bound on the weight strictly below `value`.
    fn max_rank_prev(&self) -> f64 {
        self.max_rank - self.weight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSketch {
    entries: Vec<SketchEntry>,
    eps: f64,
    total_weight: f64,
}

impl QuantileSketch {
    pub fn empty(eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(Self {
            entries: Vec::new(),
            eps,
            total_weight: 0.0,
        })
    }

    /// Summarises weighted values. With `eps == 0` every distinct value is kept.
    pub fn build(values: &[f64], weights: &[f64], eps: f64) -> Result<Self> {
        check_eps(eps)?;
        if values.len() != weights.len() {
            return Err(Error::InvalidParam(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidParam(format!("NaN value at position {i}")));
        }
        if let Some(i) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParam(format!(
                "weight at position {i} must be positive and finite"
            )));
        }
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
        Ok(Self::from_pairs(&mut pairs, eps))
    }

    /// Builds from pre-validated pairs; sorts `pairs` in place.
    pub(crate) fn from_pairs(pairs: &mut [(f64, f64)], eps: f64) -> Self {
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut entries: Vec<SketchEntry> = Vec::new();
        let mut below = 0.0;
        let mut i = 0;
        while i < pairs.len() {
            let v = pairs[i].0;
            let mut w = 0.0;
            while i < pairs.len() && pairs[i].0 == v {
                w += pairs[i].1;
                i += 1;
            }
            entries.push(SketchEntry {
                value: v,
                weight: w,
                min_rank: below,
                max_rank: below + w,
            });
            below += w;
        }
        let mut s = Self {
            entries,
            eps,
            total_weight: below,
        };
        s.prune_if_needed();
        s
    }

    pub fn entries(&self) -> &[SketchEntry] {
        &self.entries
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Combines two summaries of disjoint data.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.eps != other.eps {
            return Err(Error::EpsMismatch(self.eps, other.eps));
        }
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        // For a value present in only one input, the other input contributes
        // the rank band of the gap the value falls into.
        let lower = |xs: &[SketchEntry], k: usize| if k > 0 { xs[k - 1].min_rank_next() } else { 0.0 };
        let upper = |xs: &[SketchEntry], k: usize, total: f64| {
            if k < xs.len() {
                xs[k].max_rank_prev()
            } else {
                total
            }
        };
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i].value < b[j].value) {
                let e = a[i];
                out.push(SketchEntry {
                    value: e.value,
                    weight: e.weight,
                    min_rank: e.min_rank + lower(b, j),
                    max_rank: e.max_rank + upper(b, j, other.total_weight),
                });
                i += 1;
            } else if i == a.len() || b[j].value < a[i].value {
                let e = b[j];
                out.push(SketchEntry {
                    value: e.value,
                    weight: e.weight,
                    min_rank: e.min_rank + lower(a, i),
                    max_rank: e.max_rank + upper(a, i, self.total_weight),
                });
                j += 1;
            } else {
                let (x, y) = (a[i], b[j]);
                out.push(SketchEntry {
                    value: x.value,
                    weight: x.weight + y.weight,
                    min_rank: x.min_rank + y.min_rank,
                    max_rank: x.max_rank + y.max_rank,
                });
                i += 1;
                j += 1;
            }
        }
        let mut s = Self {
            entries: out,
            eps: self.eps,
            total_weight: self.total_weight + other.total_weight,
        };
        s.prune_if_needed();
        Ok(s)
    }

    /// Entry count above which a summary is compressed.
    fn budget(&self) -> usize {
        if self.eps == 0.0 {
            usize::MAX
        } else {
            (2.0 / self.eps).ceil() as usize + 2
        }
    }

    fn prune_if_needed(&mut self) {
        if self.entries.len() > self.budget() {
            self.prune();
        }
    }

    /// Greedily drops interior entries whose removal keeps the band between
    /// the surviving neighbours within `eps * total_weight`.
    fn prune(&mut self) {
        let n = self.entries.len();
        if n <= 2 {
            return;
        }
        let limit = self.eps * self.total_weight;
        let mut kept = Vec::with_capacity(self.budget());
        kept.push(self.entries[0]);
        for k in 1..n - 1 {
            let last: &SketchEntry = kept.last().expect("first entry kept");
            let next = &self.entries[k + 1];
            if next.max_rank_prev() - last.min_rank_next() > limit {
                kept.push(self.entries[k]);
            }
        }
        kept.push(self.entries[n - 1]);
        self.entries = kept;
    }

    /// Bounds on the weight at or below `q`.
    pub fn rank_bounds(&self, q: f64) -> (f64, f64) {
        let es = &self.entries;
        let idx = es.partition_point(|e| e.value <= q);
        if idx == 0 {
            return (0.0, es.first().map_or(0.0, |e| e.max_rank_prev()));
        }
        let e = &es[idx - 1];
        if e.value == q {
            (e.min_rank_next(), e.max_rank)
        } else if idx == es.len() {
            (e.min_rank_next(), self.total_weight)
        } else {
            (e.min_rank_next(), es[idx].max_rank_prev())
        }
    }

    /// Estimated weight at or below `q`.
    pub fn rank(&self, q: f64) -> f64 {
        let (lo, hi) = self.rank_bounds(q);
        0.5 * (lo + hi)
    }

    /// Smallest retained value whose estimated rank reaches `phi * total_weight`.
    pub fn quantile(&self, phi: f64) -> Option<f64> {
        let target = phi.clamp(0.0, 1.0) * self.total_weight;
        self.entries
            .iter()
            .find(|e| 0.5 * (e.min_rank_next() + e.max_rank) >= target)
            .or(self.entries.last())
            .map(|e| e.value)
    }

    /// Split thresholds for at most `max_bins` bins.
    ///
    /// When no more than `max_bins` values are retained this is every
    /// midpoint between consecutive values. Otherwise one midpoint is chosen
    /// per target rank `k * W / max_bins`: the one whose rank band lies
    /// nearest the target.
    pub fn candidates(&self, max_bins: usize) -> Vec<f64> {
        let es = &self.entries;
        if es.len() < 2 || max_bins < 2 {
            return Vec::new();
        }
        let mid = |i: usize| 0.5 * (es[i].value + es[i + 1].value);
        if es.len() <= max_bins {
            return (0..es.len() - 1).map(mid).collect();
        }
        // Band of ranks for thresholds strictly between entries i and i+1.
        let band = |i: usize| (es[i].min_rank_next(), es[i + 1].max_rank_prev());
        let gaps = es.len() - 1;
        let mut out: Vec<f64> = Vec::with_capacity(max_bins - 1);
        for k in 1..max_bins {
            let target = k as f64 * self.total_weight / max_bins as f64;
            let (mut lo, mut hi) = (0, gaps);
            while lo < hi {
                let m = (lo + hi) / 2;
                if band(m).1 < target {
                    lo = m + 1;
                } else {
                    hi = m;
                }
            }
            let first_hi = lo;
            let dist = |i: usize| {
                let (lo, hi) = band(i);
                (lo - target).max(target - hi).max(0.0)
            };
            let mut best = first_hi.min(gaps - 1);
            if best > 0 && dist(best - 1) <= dist(best) {
                best -= 1;
            }
            let t = mid(best);
            if out.last().is_none_or(|&last| t > last) {
                out.push(t);
            }
        }
        out
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidParam(format!("eps {eps} not in [0, 0.5)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact weight at or below `q`, by brute force.
    fn exact_rank(values: &[f64], weights: &[f64], q: f64) -> f64 {
        values
            .iter()
            .zip(weights)
            .filter(|(v, _)| **v <= q)
            .map(|(_, w)| w)
            .sum()
    }

    fn check_ranks(s: &QuantileSketch, values: &[f64], weights: &[f64]) {
        let w = s.total_weight();
        let tol = s.eps() * w + 1e-9 * w;
        let mut probes: Vec<f64> = values.to_vec();
        probes.extend(values.iter().map(|v| v + 1e-7));
        probes.push(f64::MIN);
        for q in probes {
            let exact = exact_rank(values, weights, q);
            let est = s.rank(q);
            assert!(
                (est - exact).abs() <= tol,
                "rank({q}) = {est}, exact {exact}, tol {tol}"
            );
        }
    }

    fn bands_within_bound(s: &QuantileSketch) -> bool {
        let lim = s.eps() * s.total_weight() * (1.0 + 1e-9) + 1e-9;
        let es = s.entries();
        es.iter().all(|e| e.max_rank - e.min_rank - e.weight <= lim)
            && es
                .windows(2)
                .all(|p| p[0].value < p[1].value && p[1].max_rank_prev() - p[0].min_rank_next() <= lim)
    }

    #[test]
    fn exact_mode_median() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = QuantileSketch::build(&v, &[1.0; 10], 0.0).unwrap();
        assert_eq!(s.entries().len(), 10);
        assert_eq!(s.quantile(0.5), Some(5.0));
    }

    #[test]
    fn single_value() {
        let s = QuantileSketch::build(&[3.5], &[2.25], 0.1).unwrap();
        assert_eq!(s.entries().len(), 1);
        assert_eq!(s.total_weight(), 2.25);
    }

    #[test]
    fn invalid_inputs() {
        assert!(QuantileSketch::build(&[1.0], &[1.0, 2.0], 0.0).is_err());
        assert!(QuantileSketch::build(&[1.0], &[0.0], 0.0).is_err());
        assert!(QuantileSketch::build(&[f64::NAN], &[1.0], 0.0).is_err());
        assert!(QuantileSketch::build(&[1.0], &[1.0], 0.5).is_err());
    }

    #[test]
    fn ten_thousand_points_within_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 100.0).collect();
        let w: Vec<f64> = (0..10_000).map(|_| 1.0).collect();
        let s = QuantileSketch::build(&v, &w, 0.01).unwrap();
        assert!(s.entries().len() < 400, "{}", s.entries().len());
        assert!(bands_within_bound(&s));
        check_ranks(&s, &v, &w);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let v: Vec<f64> = (0..50).map(|i| (i * 7 % 13) as f64).collect();
        let a = QuantileSketch::build(&v, &vec![1.5; 50], 0.05).unwrap();
        let e = QuantileSketch::empty(0.05).unwrap();
        let m = a.merge(&e).unwrap();
        for q in -1..15 {
            assert_eq!(m.rank(q as f64), a.rank(q as f64));
        }
        assert!(a.merge(&QuantileSketch::empty(0.1).unwrap()).is_err());
    }

    #[test]
    fn disjoint_merge_equals_direct_build() {
        let lo: Vec<f64> = (1..=5).map(f64::from).collect();
        let hi: Vec<f64> = (6..=10).map(f64::from).collect();
        let all: Vec<f64> = (1..=10).map(f64::from).collect();
        let a = QuantileSketch::build(&lo, &[1.0; 5], 0.0).unwrap();
        let b = QuantileSketch::build(&hi, &[1.0; 5], 0.0).unwrap();
        let direct = QuantileSketch::build(&all, &[1.0; 10], 0.0).unwrap();
        assert_eq!(a.merge(&b).unwrap(), direct);
        for phi in [0.1, 0.25, 0.5, 0.75, 1.0] {
            assert_eq!(a.merge(&b).unwrap().quantile(phi), direct.quantile(phi));
        }
    }

    #[test]
    fn merge_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let va: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let vb: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() * 2.0).collect();
        let wa: Vec<f64> = (0..3000).map(|_| rng.random_range(0.5..3.0)).collect();
        let wb: Vec<f64> = (0..2000).map(|_| rng.random_range(0.5..3.0)).collect();
        let a = QuantileSketch::build(&va, &wa, 0.02).unwrap();
        let b = QuantileSketch::build(&vb, &wb, 0.02).unwrap();
        let ab = a.merge(&b).unwrap();
        let ba = b.merge(&a).unwrap();
        for q in va.iter().chain(&vb) {
            assert_eq!(ab.rank(*q), ba.rank(*q));
        }
    }

    #[test]
    fn exhaustive_candidates() {
        let s = QuantileSketch::build(&[3.0, 1.0, 4.0, 2.0, 2.0], &[1.0; 5], 1.0 / 32.0).unwrap();
        assert_eq!(s.candidates(16), vec![1.5, 2.5, 3.5]);
        assert!(QuantileSketch::empty(0.1).unwrap().candidates(16).is_empty());
    }

    #[test]
    fn quartile_candidates_on_uniform_grid() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let w = vec![1.0; 100];
        let eps = 1.0 / 8.0;
        let s = QuantileSketch::build(&v, &w, eps).unwrap();
        let c = s.candidates(4);
        assert_eq!(c.len(), 3, "{c:?}");
        for (t, target) in c.iter().zip([25.0, 50.0, 75.0]) {
            let r = exact_rank(&v, &w, *t);
            assert!((r - target).abs() <= eps * 100.0, "threshold {t} has rank {r}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn builds_and_merges_keep_rank_error(
            shards in proptest::collection::vec(
                proptest::collection::vec((-50i32..50, 1u32..20), 1..400), 1..6),
            eps_idx in 0usize..4,
        ) {
            let eps = [0.0, 0.01, 0.05, 0.2][eps_idx];
            let mut all_v = Vec::new();
            let mut all_w = Vec::new();
            let mut acc = QuantileSketch::empty(eps).unwrap();
            for shard in &shards {
                let v: Vec<f64> = shard.iter().map(|p| p.0 as f64 * 0.5).collect();
                let w: Vec<f64> = shard.iter().map(|p| p.1 as f64 * 0.25).collect();
                let s = QuantileSketch::build(&v, &w, eps).unwrap();
                prop_assert!(bands_within_bound(&s));
                acc = acc.merge(&s).unwrap();
                prop_assert!(bands_within_bound(&acc));
                all_v.extend(v);
                all_w.extend(w);
            }
            check_ranks(&acc, &all_v, &all_w);
        }

        #[test]
        fn merge_associative_within_bound(
            a in proptest::collection::vec(0.0f64..1.0, 1..2000),
            b in proptest::collection::vec(0.0f64..1.0, 1..2000),
            c in proptest::collection::vec(0.0f64..1.0, 1..2000),
        ) {
            let eps = 0.01;
            let mk = |v: &Vec<f64>| QuantileSketch::build(v, &vec![1.0; v.len()], eps).unwrap();
            let (sa, sb, sc) = (mk(&a), mk(&b), mk(&c));
            let left = sa.merge(&sb).unwrap().merge(&sc).unwrap();
            let right = sa.merge(&sb.merge(&sc).unwrap()).unwrap();
            let all: Vec<f64> = a.iter().chain(&b).chain(&c).copied().collect();
            let ones = vec![1.0; all.len()];
            check_ranks(&left, &all, &ones);
            check_ranks(&right, &all, &ones);
        }
    }
}
