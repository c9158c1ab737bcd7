//! Two-sided bounds of the BPR loss by the COLES positive/negative terms,
//! evaluated and audited per batch.
//!
//! For unit-norm embeddings and an audit batch in which every anchor `u`
//! carries all `d_u` of its training positives and `K` negatives shared by
//! those positives:
//!
//! ```text
//! lower = K/2·P − d_min/2·N + d_min·K·n_u − m·K
//! upper = K/2·P − d_max/4·c·N + d_max·K·n_u·ln(2e) − m·K,   c = ln(2e²/(e²+1))
//! ```
//!
//! with `P`, `N` the positive and negative smoothness sums.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dense::{squared_distance, Matrix};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::losses::{bpr_loss, bpr_split, TrainingBatch};
use crate::scalar::Scalar;

/// Slack used by every sandwich and per-term comparison.
pub const BOUND_SLACK: f64 = 1e-9;

/// Tolerance on `|e| = 1` required before a batch is audited.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// `ln(2e²/(e²+1)) = ln 2 − ln(1 + e^{-2})`, the chord slope of
/// `y ↦ ln(e + e^y)` over `[-1, 1]` (times 2).
pub fn ln_chord() -> f64 {
    std::f64::consts::LN_2 - (-2.0f64).exp().ln_1p()
}

/// `ln(2e) = 1 + ln 2`, equal to `ln((2e³+2e)/(e²+1))`.
pub fn ln_two_e() -> f64 {
    1.0 + std::f64::consts::LN_2
}

/// `ln(e + 1/e) = 1 + ln(1 + e^{-2})`.
pub fn ln_e_plus_inv_e() -> f64 {
    1.0 + (-2.0f64).exp().ln_1p()
}

/// Inputs of the sandwich bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs<T> {
    pub coles_pos: T,
    pub coles_neg: T,
    pub d_min: usize,
    pub d_max: usize,
    pub k: usize,
    pub n_users: usize,
    pub m: usize,
}

/// `(lower, upper)` bounds on the BPR loss.
pub fn theorem_bounds<T: Scalar>(inp: &BoundInputs<T>) -> Result<(T, T)> {
    if inp.d_min == 0 || inp.k == 0 || inp.d_min > inp.d_max {
        return Err(Error::Params(format!(
            "bounds need 1 <= d_min <= d_max and K >= 1 (d_min={}, d_max={}, K={})",
            inp.d_min, inp.d_max, inp.k
        )));
    }
    let half = T::lit(0.5);
    let k = T::from_count(inp.k);
    let dmin = T::from_count(inp.d_min);
    let dmax = T::from_count(inp.d_max);
    let nu = T::from_count(inp.n_users);
    let mk = T::from_count(inp.m) * k;
    let pos = half * k * inp.coles_pos;
    let lower = pos - half * dmin * inp.coles_neg + dmin * k * nu - mk;
    let upper = pos - dmax * T::lit(0.25 * ln_chord()) * inp.coles_neg
        + dmax * k * nu * T::lit(ln_two_e())
        - mk;
    Ok((lower, upper))
}

/// `β_l = d_min`.
pub fn beta_lower(d_min: usize) -> f64 {
    d_min as f64
}

/// `β_u = d_max/2 · ln(2e²/(e²+1))`.
pub fn beta_upper(d_max: usize) -> f64 {
    0.5 * d_max as f64 * ln_chord()
}

/// `β_u / β_l`.
pub fn beta_ratio(d_min: usize, d_max: usize) -> f64 {
    beta_upper(d_max) / beta_lower(d_min)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport<T> {
    pub bpr: T,
    pub bpr_pos: T,
    pub bpr_neg: T,
    pub coles_pos: T,
    pub coles_neg: T,
    pub lower: T,
    pub upper: T,
    pub beta_l: f64,
    pub beta_u: f64,
    pub d_min: usize,
    pub d_max: usize,
    pub k: usize,
    pub n_u_batch: usize,
    pub m_batch: usize,
    pub sandwich_ok: bool,
    /// `|bpr_pos − (K/2·P − m·K)| / (1 + |bpr_pos|)`.
    pub pos_identity_residual: T,
    /// Lower bound on the negative part: `−d_min/2·N + d_min·K·n_u`.
    pub neg_lower: T,
    /// Upper bound on the negative part:
    /// `d_max/2·c·(2K·n_u − N/2) + d_max·K·n_u·ln(e + 1/e)`.
    pub neg_upper: T,
    pub neg_lower_ok: bool,
    pub neg_upper_ok: bool,
    /// Degree scope used for `d_min`/`d_max`.
    pub degree_scope: &'static str,
}

/// Groups an audit batch by anchor, checking that every anchor carries all of
/// its training positives and a single shared negative list.
fn anchor_groups<'a>(
    batch: &'a TrainingBatch,
    degrees: &[usize],
) -> Result<Vec<(usize, &'a [usize])>> {
    let mut groups: Vec<(usize, usize, &[usize])> = Vec::new();
    for r in 0..batch.len() {
        let u = batch.anchors[r];
        let negs = batch.negatives_of(r);
        match groups.iter_mut().find(|(a, _, _)| *a == u) {
            Some((_, count, shared)) => {
                if *shared != negs {
                    return Err(Error::InvalidBatch(format!(
                        "anchor {u} has different negatives on different rows"
                    )));
                }
                *count += 1;
            }
            None => groups.push((u, 1, negs)),
        }
    }
    for &(u, count, _) in &groups {
        let d = *degrees
            .get(u)
            .ok_or_else(|| Error::InvalidBatch(format!("anchor {u} has no degree")))?;
        if d != count {
            return Err(Error::InvalidBatch(format!(
                "anchor {u} has {count} positives in the batch but training degree {d}"
            )));
        }
    }
    Ok(groups.into_iter().map(|(u, _, n)| (u, n)).collect())
}

/// Evaluates both sides of the bound and the per-part inequalities.
pub fn audit_batch<T: Scalar>(
    e: &Matrix<T>,
    batch: &TrainingBatch,
    degrees: &[usize],
) -> Result<BoundReport<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("audit batch".into()));
    }
    let touched = batch
        .anchors
        .iter()
        .chain(&batch.positives)
        .chain(&batch.negatives);
    for &node in touched {
        let norm = e.row_norm(node).as_f64();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized { node, norm });
        }
    }
    let groups = anchor_groups(batch, degrees)?;
    let d_min = groups.iter().map(|&(u, _)| degrees[u]).min().unwrap_or(0);
    let d_max = groups.iter().map(|&(u, _)| degrees[u]).max().unwrap_or(0);
    let n_u = groups.len();
    let m = batch.len();
    let k = batch.k;

    let bpr = bpr_loss(e, batch, T::zero(), T::zero()).value;
    let (bpr_pos, bpr_neg) = bpr_split(e, batch);
    let coles_pos: T = (0..m)
        .map(|r| squared_distance(e.row(batch.anchors[r]), e.row(batch.positives[r])))
        .sum();
    let coles_neg: T = groups
        .iter()
        .flat_map(|&(u, negs)| {
            negs.iter()
                .map(move |&j| squared_distance(e.row(u), e.row(j)))
        })
        .sum();

    let inputs = BoundInputs {
        coles_pos,
        coles_neg,
        d_min,
        d_max,
        k,
        n_users: n_u,
        m,
    };
    let (lower, upper) = theorem_bounds(&inputs)?;
    let slack = T::lit(BOUND_SLACK);
    let half = T::lit(0.5);
    let kt = T::from_count(k);
    let knu = kt * T::from_count(n_u);
    let dmin = T::from_count(d_min);
    let dmax = T::from_count(d_max);

    let pos_identity = half * kt * coles_pos - T::from_count(m) * kt;
    let pos_identity_residual = (bpr_pos - pos_identity).abs() / (T::one() + bpr_pos.abs());
    let neg_lower = -half * dmin * coles_neg + dmin * knu;
    let neg_upper = half * dmax * T::lit(ln_chord()) * (T::lit(2.0) * knu - half * coles_neg)
        + dmax * knu * T::lit(ln_e_plus_inv_e());

    Ok(BoundReport {
        bpr,
        bpr_pos,
        bpr_neg,
        coles_pos,
        coles_neg,
        lower,
        upper,
        beta_l: beta_lower(d_min),
        beta_u: beta_upper(d_max),
        d_min,
        d_max,
        k,
        n_u_batch: n_u,
        m_batch: m,
        sandwich_ok: lower - slack <= bpr && bpr <= upper + slack,
        pos_identity_residual,
        neg_lower,
        neg_upper,
        neg_lower_ok: neg_lower - slack <= bpr_neg,
        neg_upper_ok: bpr_neg <= neg_upper + slack,
        degree_scope: "anchor users, full training degree",
    })
}

/// Samples an audit batch: `n_anchors` distinct users, every training
/// positive of each, and `k` negatives per user shared across its rows.
pub fn sample_audit_batch<R: Rng + ?Sized>(
    g: &InteractionGraph,
    n_anchors: usize,
    k: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    let candidates: Vec<usize> = (0..g.n_users()).filter(|&u| g.user_degree(u) > 0).collect();
    if candidates.is_empty() || n_anchors == 0 {
        return Err(Error::Empty(
            "audit batch needs at least one user with training edges".into(),
        ));
    }
    let take = n_anchors.min(candidates.len());
    let mut picked: Vec<usize> = index::sample(rng, candidates.len(), take)
        .into_iter()
        .map(|p| candidates[p])
        .collect();
    picked.sort_unstable();
    let (mut anchors, mut positives, mut negatives) = (Vec::new(), Vec::new(), Vec::new());
    for u in picked {
        let negs: Vec<usize> = g
            .sample_negatives(u, k, rng)?
            .into_iter()
            .map(|j| g.item_node(j))
            .collect();
        for &i in g.items_of(u) {
            anchors.push(u);
            positives.push(g.item_node(i));
            negatives.extend_from_slice(&negs);
        }
    }
    TrainingBatch::new(anchors, positives, negatives, k)
}

/// Audits `num_batches` sampled batches. Batches are drawn sequentially from
/// the seeded generator and evaluated in parallel; results keep batch order.
pub fn audit_batches<T: Scalar>(
    e: &Matrix<T>,
    g: &InteractionGraph,
    num_batches: usize,
    anchors_per_batch: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<BoundReport<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches = (0..num_batches)
        .map(|_| sample_audit_batch(g, anchors_per_batch, k, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    batches
        .par_iter()
        .map(|b| audit_batch(e, b, g.degrees()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Fixed-width bins over the observed range; a degenerate range is
    /// widened to `[v − 0.5, v + 0.5]`.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("histogram of no values".into()));
        }
        if bins == 0 {
            return Err(Error::Params("histogram needs at least one bin".into()));
        }
        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    /// `(bin_left, bin_right, count)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(move |(b, &c)| (self.edges[b], self.edges[b + 1], c))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioDistribution {
    pub ratios: Vec<f64>,
    pub histogram: Histogram,
}

impl RatioDistribution {
    pub fn median(&self) -> f64 {
        median(&self.ratios)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Default number of sampled batches for the ratio distribution.
pub const DEFAULT_RATIO_BATCHES: usize = 1_000;

/// `β_u/β_l` per sampled batch of `anchors_per_batch` users, using the
/// batch-local extrema of the anchors' training degrees.
pub fn beta_ratio_distribution(
    g: &InteractionGraph,
    num_batches: usize,
    anchors_per_batch: usize,
    bins: usize,
    seed: u64,
) -> Result<RatioDistribution> {
    if num_batches == 0 {
        return Err(Error::Params("need at least one batch".into()));
    }
    let candidates: Vec<usize> = (0..g.n_users()).filter(|&u| g.user_degree(u) > 0).collect();
    if candidates.is_empty() || anchors_per_batch == 0 {
        return Err(Error::Empty("ratio batch with no anchors".into()));
    }
    let take = anchors_per_batch.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratios: Vec<f64> = (0..num_batches)
        .map(|_| {
            let sample = index::sample(&mut rng, candidates.len(), take);
            let degs = sample.iter().map(|p| g.user_degree(candidates[p]));
            let (lo, hi) = degs.fold((usize::MAX, 0), |(lo, hi), d| (lo.min(d), hi.max(d)));
            beta_ratio(lo, hi)
        })
        .collect();
    let histogram = Histogram::from_values(&ratios, bins)?;
    Ok(RatioDistribution { ratios, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;

    // 40-digit reference values.
    const LN_CHORD: f64 = 0.566_219_169_516_972_812_973_505_315_099_872_136_6;
    const LN_TWO_E: f64 = 1.693_147_180_559_945_309_417_232_121_458_176_568;

    #[test]
    fn constants_match_high_precision() {
        assert!((ln_chord() - LN_CHORD).abs() < 1e-15);
        assert!((ln_two_e() - LN_TWO_E).abs() < 1e-15);
        let e = std::f64::consts::E;
        let direct = ((2.0 * e.powi(3) + 2.0 * e) / (e * e + 1.0)).ln();
        assert!((direct - ln_two_e()).abs() < 1e-15);
        assert!((ln_chord() + ln_e_plus_inv_e() - ln_two_e()).abs() < 1e-15);
    }

    #[test]
    fn plug_in_bounds() {
        let (lo, hi) = theorem_bounds(&BoundInputs {
            coles_pos: 2.0f64,
            coles_neg: 2.0,
            d_min: 1,
            d_max: 1,
            k: 1,
            n_users: 1,
            m: 1,
        })
        .unwrap();
        assert!(lo.abs() < 1e-15);
        assert!((hi - 1.410_037_595_801_458_9).abs() < 1e-14);
    }

    #[test]
    fn bounds_reject_zero_degree() {
        let inp = BoundInputs {
            coles_pos: 0.0f64,
            coles_neg: 0.0,
            d_min: 0,
            d_max: 1,
            k: 1,
            n_users: 1,
            m: 1,
        };
        assert!(theorem_bounds(&inp).is_err());
    }

    #[test]
    fn equal_degrees_give_base_ratio() {
        assert!((beta_ratio(4, 4) - 0.283_109_584_758_486_4).abs() < 1e-15);
        assert!((beta_ratio(1, 1) * 3.532_201_146_962_490_1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_bins_cover_values() {
        let h = Histogram::from_values(&[0.0, 0.5, 1.0, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 3]);
        let d = Histogram::from_values(&[2.0, 2.0], 4).unwrap();
        assert_eq!(d.counts.iter().sum::<usize>(), 2);
        assert!(Histogram::from_values(&[], 3).is_err());
    }

    #[test]
    fn audit_rejects_unnormalized_rows() {
        let g = InteractionGraph::new(1, 2, vec![(0, 0)], vec![]).unwrap();
        let e = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = TrainingBatch::new(vec![0], vec![1], vec![2], 1).unwrap();
        assert!(matches!(
            audit_batch(&e, &b, g.degrees()),
            Err(Error::NotNormalized { node: 0, .. })
        ));
    }

    #[test]
    fn audit_degenerate_identical_embeddings() {
        let g = InteractionGraph::new(1, 3, vec![(0, 0), (0, 1)], vec![]).unwrap();
        let e = Matrix::from_rows(&vec![vec![0.6, 0.8]; 4]).unwrap();
        let b = TrainingBatch::new(vec![0, 0], vec![1, 2], vec![3, 3], 1).unwrap();
        let r = audit_batch(&e, &b, g.degrees()).unwrap();
        assert!((r.bpr_pos + 2.0_f64).abs() < 1e-14);
        assert!(f64::abs(r.coles_pos) < 1e-15);
        assert!(r.sandwich_ok && r.neg_lower_ok && r.neg_upper_ok);
    }

    #[test]
    fn audit_requires_shared_negatives_and_full_positives() {
        let g = InteractionGraph::new(1, 4, vec![(0, 0), (0, 1)], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Matrix::<f64>::random_unit_rows(5, 3, &mut rng);
        let split = TrainingBatch::new(vec![0, 0], vec![1, 2], vec![3, 4], 1).unwrap();
        assert!(audit_batch(&e, &split, g.degrees()).is_err());
        let partial = TrainingBatch::new(vec![0], vec![1], vec![3], 1).unwrap();
        assert!(audit_batch(&e, &partial, g.degrees()).is_err());
        assert!(audit_batch(&e, &TrainingBatch::empty(1), g.degrees()).is_err());
    }

    #[test]
    fn degree_extrema_follow_anchors() {
        // users with degrees 2, 5 and 7 over 10 items
        let mut train = Vec::new();
        for (u, d) in [(0usize, 2usize), (1, 5), (2, 7)] {
            train.extend((0..d).map(|i| (u, i)));
        }
        let g = InteractionGraph::new(3, 10, train, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = sample_audit_batch(&g, 3, 1, &mut rng).unwrap();
        let e = Matrix::<f64>::random_unit_rows(13, 4, &mut rng);
        let r = audit_batch(&e, &b, g.degrees()).unwrap();
        assert_eq!((r.d_min, r.d_max), (2, 7));
        assert_eq!(r.m_batch, 14);
        assert_eq!(r.n_u_batch, 3);
    }

    #[test]
    fn ratio_distribution_rejects_empty() {
        let g = InteractionGraph::new(1, 2, vec![(0, 0)], vec![]).unwrap();
        assert!(beta_ratio_distribution(&g, 0, 1, 10, 0).is_err());
        assert!(beta_ratio_distribution(&g, 1, 0, 10, 0).is_err());
        let single = beta_ratio_distribution(&g, 3, 1, 10, 0).unwrap();
        assert!(single
            .ratios
            .iter()
            .all(|&r| (r - 0.283_109_584_758_486_4).abs() < 1e-15));
    }
}
