//! Decision statistics, support selection, and the four detectors.
//!
//! All detectors score users by correlating the received slot with each
//! signature code. The opportunistic variants additionally weight the
//! correlations with whatever channel estimates have been collected so
//! far in the coherence interval, which partially de-correlates the
//! effective sensing matrices across antennas and sharpens the statistics
//! of users with known CSI.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{lstsq, LstsqError};
use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::system_model::{ChannelMatrix, CodeMatrix, SlotData, SystemConfig};

/// Per-user decision statistics, all nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionStatistics<T> {
    pub values: Vec<T>,
}

/// Running channel estimate of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel<T> {
    /// Count-weighted mean over activations, length `n_antennas`.
    pub estimate: Vec<T>,
    /// Activations averaged so far, at least 1.
    pub activations: u32,
}

/// Channel estimates collected within the current coherence interval.
///
/// Users present here form the known set; everybody else's effective
/// channel weight is 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelKnowledge<T> {
    entries: BTreeMap<usize, UserChannel<T>>,
}

impl<T: Scalar> ChannelKnowledge<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Knowledge holding the exact channel of every user.
    pub fn from_exact_channels(channels: &ChannelMatrix<T>) -> Self {
        let (n_antennas, n_users) = (channels.entries.rows(), channels.entries.cols());
        let mut entries = BTreeMap::new();
        for n in 0..n_users {
            let estimate = (0..n_antennas).map(|m| channels.entries[(m, n)]).collect();
            entries.insert(
                n,
                UserChannel {
                    estimate,
                    activations: 1,
                },
            );
        }
        Self { entries }
    }

    pub fn known_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, user: usize) -> bool {
        self.entries.contains_key(&user)
    }

    pub fn get(&self, user: usize) -> Option<&UserChannel<T>> {
        self.entries.get(&user)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Estimated support with the score that drove its selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportEstimate<T> {
    /// Selected user indices, ascending.
    pub indices: Vec<usize>,
    /// Score per selected index, aligned with `indices`.
    pub scores: Vec<T>,
}

impl<T: Scalar> SupportEstimate<T> {
    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            scores: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// The two decision thresholds of the two-threshold detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPair<T> {
    /// Threshold for users with collected CSI.
    pub t_known: T,
    /// Threshold for users without CSI.
    pub t_unknown: T,
}

/// Detector output for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<T> {
    /// Final support estimate, exactly `n_active` indices.
    pub support: SupportEstimate<T>,
    /// Decision statistics the selection was based on.
    pub stats: DecisionStatistics<T>,
    /// Least-squares signal estimate on the final support, row per
    /// support index; absent for detectors that skip the refinement.
    pub signal_estimate: Option<Mat<T>>,
}

/// Code-correlation outputs `C^T Y`, one row per user.
pub fn matched_filter<T: Scalar>(received: &Mat<T>, codes: &CodeMatrix<T>) -> Result<Mat<T>> {
    if codes.entries.rows() != received.rows() {
        return Err(Error::DimensionMismatch(format!(
            "codes have {} rows, received has {}",
            codes.entries.rows(),
            received.rows()
        )));
    }
    Ok(codes.entries.transpose_mul(received))
}

/// Plain statistics from precomputed correlations: per-antenna energy of
/// each user's matched-filter output.
pub fn plain_stats_from_filter<T: Scalar>(correlations: &Mat<T>) -> DecisionStatistics<T> {
    let scale = T::one() / T::from_count(correlations.cols());
    let values = (0..correlations.rows())
        .map(|n| scale * correlations.row_norm_sq(n))
        .collect();
    DecisionStatistics { values }
}

/// Plain decision statistics of one slot.
pub fn plain_stats<T: Scalar>(
    received: &Mat<T>,
    codes: &CodeMatrix<T>,
) -> Result<DecisionStatistics<T>> {
    Ok(plain_stats_from_filter(&matched_filter(received, codes)?))
}

/// Channel-weighted statistics from precomputed correlations. Users in
/// the known set are weighted by their stored estimate, everybody else by
/// 1, which reproduces the plain statistic for unknown users.
pub fn weighted_stats_from_filter<T: Scalar>(
    correlations: &Mat<T>,
    knowledge: &ChannelKnowledge<T>,
) -> Result<DecisionStatistics<T>> {
    let n_antennas = correlations.cols();
    let scale = T::one() / T::from_count(n_antennas);
    let mut values = Vec::with_capacity(correlations.rows());
    for n in 0..correlations.rows() {
        let row = correlations.row(n);
        let energy = match knowledge.get(n) {
            Some(user) => {
                if user.estimate.len() != n_antennas {
                    return Err(Error::DimensionMismatch(format!(
                        "stored estimate for user {n} has {} entries for {} antennas",
                        user.estimate.len(),
                        n_antennas
                    )));
                }
                row.iter()
                    .zip(&user.estimate)
                    .map(|(&z, &h)| {
                        let w = h * z;
                        w * w
                    })
                    .sum()
            }
            None => row.iter().map(|&z| z * z).sum(),
        };
        values.push(scale * energy);
    }
    Ok(DecisionStatistics { values })
}

/// Channel-weighted decision statistics of one slot.
pub fn weighted_stats<T: Scalar>(
    received: &Mat<T>,
    codes: &CodeMatrix<T>,
    knowledge: &ChannelKnowledge<T>,
) -> Result<DecisionStatistics<T>> {
    weighted_stats_from_filter(&matched_filter(received, codes)?, knowledge)
}

/// Indices of the `k` largest statistics; ties break toward the lowest
/// index. Statistics must be finite.
pub fn select_top_k<T: Scalar>(stats: &DecisionStatistics<T>, k: usize) -> Result<SupportEstimate<T>> {
    let n = stats.values.len();
    if k > n {
        return Err(Error::Config(format!(
            "cannot select top {k} of {n} statistics"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        stats.values[b]
            .partial_cmp(&stats.values[a])
            .expect("finite decision statistics")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    let scores = order.iter().map(|&n| stats.values[n]).collect();
    Ok(SupportEstimate {
        indices: order,
        scores,
    })
}

/// Least-squares signal estimate restricted to the given support.
///
/// Rows of the result follow the (ascending) support order. The solve
/// uses an orthogonal factorization, never the normal equations.
pub fn ls_refine<T: Scalar>(
    received: &Mat<T>,
    codes: &CodeMatrix<T>,
    support: &SupportEstimate<T>,
) -> Result<Mat<T>> {
    if support.is_empty() {
        return Ok(Mat::zeros(0, received.cols()));
    }
    let code_len = codes.entries.rows();
    if support.len() > code_len {
        return Err(Error::Underdetermined {
            support: support.indices.clone(),
            code_len,
        });
    }
    let submatrix = codes.entries.select_columns(&support.indices);
    lstsq(&submatrix, received).map_err(|e| match e {
        LstsqError::Underdetermined => Error::Underdetermined {
            support: support.indices.clone(),
            code_len,
        },
        LstsqError::RankDeficient => Error::SingularSupport {
            support: support.indices.clone(),
        },
    })
}

/// Per-user channel estimates from a refined signal estimate:
/// the signal row divided by the square root of the user's power.
pub fn estimate_channels<T: Scalar>(
    signal_estimate: &Mat<T>,
    support: &SupportEstimate<T>,
    cfg: &SystemConfig<T>,
) -> Vec<Vec<T>> {
    support
        .indices
        .iter()
        .enumerate()
        .map(|(row, &n)| {
            let inv_amp = T::one() / cfg.powers[n].sqrt();
            signal_estimate
                .row(row)
                .iter()
                .map(|&x| inv_amp * x)
                .collect()
        })
        .collect()
}

/// Fold new per-user estimates into the collected knowledge.
///
/// Users already known get a count-weighted running mean over their
/// activations; first-time users are inserted with count 1.
pub fn update_knowledge<T: Scalar>(
    knowledge: &mut ChannelKnowledge<T>,
    new_estimates: &[Vec<T>],
    support: &SupportEstimate<T>,
) {
    debug_assert_eq!(new_estimates.len(), support.len());
    for (estimate, &n) in new_estimates.iter().zip(&support.indices) {
        match knowledge.entries.get_mut(&n) {
            Some(user) => {
                let count = T::from_count(user.activations as usize);
                let next = count + T::one();
                for (old, &new) in user.estimate.iter_mut().zip(estimate) {
                    *old = (*old * count + new) / next;
                }
                user.activations += 1;
            }
            None => {
                knowledge.entries.insert(
                    n,
                    UserChannel {
                        estimate: estimate.clone(),
                        activations: 1,
                    },
                );
            }
        }
    }
}

/// Union of two supports capped at the code length.
///
/// When the union would make the least-squares step underdetermined, the
/// full second set is kept and the first set contributes only its
/// highest-scoring members outside the second set.
fn capped_union<T: Scalar>(
    primary: &SupportEstimate<T>,
    fallback: &SupportEstimate<T>,
    code_len: usize,
) -> SupportEstimate<T> {
    let mut union: Vec<usize> = fallback.indices.clone();
    let mut extras: Vec<(usize, T)> = primary
        .indices
        .iter()
        .zip(&primary.scores)
        .filter(|(n, _)| !fallback.indices.contains(n))
        .map(|(&n, &s)| (n, s))
        .collect();
    let budget = code_len.saturating_sub(fallback.len());
    if extras.len() > budget {
        extras.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite scores")
                .then(a.0.cmp(&b.0))
        });
        extras.truncate(budget);
    }
    union.extend(extras.iter().map(|(n, _)| *n));
    union.sort_unstable();
    let scores = vec![T::zero(); union.len()];
    SupportEstimate {
        indices: union,
        scores,
    }
}

/// Keep the `k` support members with the largest estimated row energies.
fn prune_by_row_energy<T: Scalar>(
    support: &SupportEstimate<T>,
    signal_estimate: &Mat<T>,
    k: usize,
) -> SupportEstimate<T> {
    let energies: Vec<T> = (0..support.len())
        .map(|row| signal_estimate.row_norm_sq(row))
        .collect();
    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        energies[b]
            .partial_cmp(&energies[a])
            .expect("finite row energies")
            .then(support.indices[a].cmp(&support.indices[b]))
    });
    order.truncate(k);
    let mut picked: Vec<(usize, T)> = order
        .into_iter()
        .map(|row| (support.indices[row], energies[row]))
        .collect();
    picked.sort_unstable_by_key(|(n, _)| *n);
    SupportEstimate {
        indices: picked.iter().map(|(n, _)| *n).collect(),
        scores: picked.iter().map(|(_, e)| *e).collect(),
    }
}

/// Shared first-slot branch: plain statistics, top-K, refinement, channel
/// estimation.
fn initial_slot<T: Scalar>(
    correlations: &Mat<T>,
    slot: &SlotData<T>,
    codes: &CodeMatrix<T>,
    knowledge: &mut ChannelKnowledge<T>,
    cfg: &SystemConfig<T>,
) -> Result<DetectionResult<T>> {
    let stats = plain_stats_from_filter(correlations);
    let support = select_top_k(&stats, cfg.n_active)?;
    let estimate = ls_refine(&slot.received, codes, &support)?;
    let channels = estimate_channels(&estimate, &support, cfg);
    update_knowledge(knowledge, &channels, &support);
    Ok(DetectionResult {
        support,
        stats,
        signal_estimate: Some(estimate),
    })
}

/// Refinement shared by the opportunistic detectors after the candidate
/// set is formed: solve on the union, prune to the K most energetic rows,
/// re-solve, estimate channels, fold into the knowledge.
fn refine_and_update<T: Scalar>(
    candidates: SupportEstimate<T>,
    stats: DecisionStatistics<T>,
    slot: &SlotData<T>,
    codes: &CodeMatrix<T>,
    knowledge: &mut ChannelKnowledge<T>,
    cfg: &SystemConfig<T>,
) -> Result<DetectionResult<T>> {
    let union_estimate = ls_refine(&slot.received, codes, &candidates)?;
    let support = prune_by_row_energy(&candidates, &union_estimate, cfg.n_active);
    let estimate = ls_refine(&slot.received, codes, &support)?;
    let channels = estimate_channels(&estimate, &support, cfg);
    update_knowledge(knowledge, &channels, &support);
    Ok(DetectionResult {
        support,
        stats,
        signal_estimate: Some(estimate),
    })
}

/// One slot of the opportunistic maximum-correlation detector, given the
/// precomputed matched-filter output.
pub fn omc_slot_with_filter<T: Scalar>(
    correlations: &Mat<T>,
    slot: &SlotData<T>,
    codes: &CodeMatrix<T>,
    knowledge: &mut ChannelKnowledge<T>,
    cfg: &SystemConfig<T>,
    slot_index: usize,
) -> Result<DetectionResult<T>> {
    if slot_index == 0 {
        return Err(Error::Config("slot_index is 1-based".into()));
    }
    if slot_index == 1 {
        return initial_slot(correlations, slot, codes, knowledge, cfg);
    }
    let stats = weighted_stats_from_filter(correlations, knowledge)?;
    let weighted_pick = select_top_k(&stats, cfg.n_active)?;
    let plain = plain_stats_from_filter(correlations);
    let plain_pick = select_top_k(&plain, cfg.n_active)?;
    let candidates = capped_union(&weighted_pick, &plain_pick, cfg.code_len);
    refine_and_update(candidates, stats, slot, codes, knowledge, cfg)
}

/// One slot of the opportunistic maximum-correlation detector.
///
/// Slot 1 runs the initialization branch; later slots pick the top K of
/// both the weighted and the plain statistics, refine their union, and
/// keep the K most energetic users.
pub fn omc_slot<T: Scalar>(
    slot: &SlotData<T>,
    codes: &CodeMatrix<T>,
    knowledge: &mut ChannelKnowledge<T>,
    cfg: &SystemConfig<T>,
    slot_index: usize,
) -> Result<DetectionResult<T>> {
    let correlations = matched_filter(&slot.received, codes)?;
    omc_slot_with_filter(&correlations, slot, codes, knowledge, cfg, slot_index)
}

/// Decision thresholds of the two-threshold detector.
///
/// Only defined under power control: every user must be received at the
/// same power.
pub fn compute_thresholds<T: Scalar>(cfg: &SystemConfig<T>) -> Result<ThresholdPair<T>> {
    if !cfg.equal_powers() {
        return Err(Error::PowerControlRequired(format!(
            "power spread [{}, {}]",
            cfg.p_min(),
            cfg.p_max()
        )));
    }
    let power = cfg.powers[0];
    let code_len = T::from_count(cfg.code_len);
    let two = T::one() + T::one();
    let three = two + T::one();
    let load = T::from_count(cfg.n_active) / code_len * power + cfg.noise_var;
    let t_known = power * (three - code_len.recip()) / two + load;
    // The closed forms differ by exactly the power; computing the lower
    // threshold by subtraction keeps that identity exact in fp.
    Ok(ThresholdPair {
        t_known,
        t_unknown: t_known - power,
    })
}

/// One slot of the opportunistic two-threshold detector, given the
/// precomputed matched-filter output.
pub fn otd_slot_with_filter<T: Scalar>(
    correlations: &Mat<T>,
    slot: &SlotData<T>,
    codes: &CodeMatrix<T>,
    knowledge: &mut ChannelKnowledge<T>,
    cfg: &SystemConfig<T>,
    slot_index: usize,
) -> Result<DetectionResult<T>> {
    if slot_index == 0 {
        return Err(Error::Config("slot_index is 1-based".into()));
    }
    let thresholds = compute_thresholds(cfg)?;
    if slot_index == 1 {
        return initial_slot(correlations, slot, codes, knowledge, cfg);
    }
    let stats = weighted_stats_from_filter(correlations, knowledge)?;
    let mut picked = Vec::new();
    let mut scores = Vec::new();
    for (n, &theta) in stats.values.iter().enumerate() {
        let threshold = if knowledge.contains(n) {
            thresholds.t_known
        } else {
            thresholds.t_unknown
        };
        if theta >= threshold {
            picked.push(n);
            scores.push(theta);
        }
    }
    let threshold_pick = SupportEstimate {
        indices: picked,
        scores,
    };
    let plain = plain_stats_from_filter(correlations);
    let plain_pick = select_top_k(&plain, cfg.n_active)?;
    let candidates = capped_union(&threshold_pick, &plain_pick, cfg.code_len);
    refine_and_update(candidates, stats, slot, codes, knowledge, cfg)
}

/// One slot of the opportunistic two-threshold detector.
pub fn otd_slot<T: Scalar>(
    slot: &SlotData<T>,
    codes: &CodeMatrix<T>,
    knowledge: &mut ChannelKnowledge<T>,
    cfg: &SystemConfig<T>,
    slot_index: usize,
) -> Result<DetectionResult<T>> {
    let correlations = matched_filter(&slot.received, codes)?;
    otd_slot_with_filter(&correlations, slot, codes, knowledge, cfg, slot_index)
}

/// Full-CSI statistics from precomputed correlations: every user weighted
/// by its true channel.
pub fn full_csi_stats_from_filter<T: Scalar>(
    correlations: &Mat<T>,
    channels: &ChannelMatrix<T>,
) -> Result<DecisionStatistics<T>> {
    let n_antennas = correlations.cols();
    if channels.entries.rows() != n_antennas || channels.entries.cols() != correlations.rows() {
        return Err(Error::DimensionMismatch(format!(
            "channels are {}x{}, correlations expect {}x{}",
            channels.entries.rows(),
            channels.entries.cols(),
            n_antennas,
            correlations.rows()
        )));
    }
    let scale = T::one() / T::from_count(n_antennas);
    let values = (0..correlations.rows())
        .map(|n| {
            let row = correlations.row(n);
            let energy: T = row
                .iter()
                .enumerate()
                .map(|(m, &z)| {
                    let w = channels.entries[(m, n)] * z;
                    w * w
                })
                .sum();
            scale * energy
        })
        .collect();
    Ok(DecisionStatistics { values })
}

/// Thresholding with exact channel knowledge for every user: the limiting
/// case the opportunistic detectors converge to.
pub fn full_csi_slot<T: Scalar>(
    slot: &SlotData<T>,
    codes: &CodeMatrix<T>,
    channels: &ChannelMatrix<T>,
    cfg: &SystemConfig<T>,
) -> Result<DetectionResult<T>> {
    let correlations = matched_filter(&slot.received, codes)?;
    let stats = full_csi_stats_from_filter(&correlations, channels)?;
    let support = select_top_k(&stats, cfg.n_active)?;
    Ok(DetectionResult {
        support,
        stats,
        signal_estimate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamTag};
    use crate::system_model::{
        draw_activity, gen_channels, gen_codes, synthesize_slot, ActivityPattern,
    };

    fn cfg(
        n_users: usize,
        n_active: usize,
        code_len: usize,
        n_antennas: usize,
        noise_var: f64,
    ) -> SystemConfig<f64> {
        SystemConfig::equal_power(
            n_users, n_active, code_len, n_antennas, 1, 1.0, noise_var, 42,
        )
        .unwrap()
    }

    fn random_slot(
        cfg: &SystemConfig<f64>,
        seed: u64,
    ) -> (CodeMatrix<f64>, ChannelMatrix<f64>, SlotData<f64>) {
        let codes = gen_codes(cfg, &mut substream(seed, 0, 0, StreamTag::Codes));
        let channels = gen_channels(cfg, &mut substream(seed, 0, 0, StreamTag::Channels));
        let activity = draw_activity(cfg, &mut substream(seed, 0, 1, StreamTag::Activity));
        let slot = synthesize_slot(
            &codes,
            &channels,
            &activity,
            cfg,
            &mut substream(seed, 0, 1, StreamTag::Noise),
        )
        .unwrap();
        (codes, channels, slot)
    }

    /// Naive double-loop evaluation of the plain statistic.
    fn plain_oracle(received: &Mat<f64>, codes: &CodeMatrix<f64>) -> Vec<f64> {
        let (code_len, n_users) = (codes.entries.rows(), codes.entries.cols());
        let n_antennas = received.cols();
        (0..n_users)
            .map(|n| {
                let mut acc = 0.0;
                for m in 0..n_antennas {
                    let mut dot = 0.0;
                    for l in 0..code_len {
                        dot += codes.entries[(l, n)] * received[(l, m)];
                    }
                    acc += dot * dot;
                }
                acc / n_antennas as f64
            })
            .collect()
    }

    #[test]
    fn zero_input_gives_zero_stats() {
        let c = cfg(6, 2, 4, 3, 0.0);
        let codes = gen_codes(&c, &mut substream(1, 0, 0, StreamTag::Codes));
        let y = Mat::zeros(4, 3);
        let stats = plain_stats(&y, &codes).unwrap();
        assert!(stats.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_user_noiseless_statistic_equals_power() {
        // Unit channel, power 4, M = 1: theta_n = 4 because codes have
        // unit norm.
        let mut c = cfg(3, 1, 4, 1, 0.0);
        c.powers = vec![4.0; 3];
        let codes = gen_codes(&c, &mut substream(2, 0, 0, StreamTag::Codes));
        let channels = ChannelMatrix {
            entries: Mat::from_fn(1, 3, |_, _| 1.0),
        };
        let activity = ActivityPattern::from_set(vec![0], 3);
        let slot = synthesize_slot(
            &codes,
            &channels,
            &activity,
            &c,
            &mut substream(2, 0, 1, StreamTag::Noise),
        )
        .unwrap();
        let stats = plain_stats(&slot.received, &codes).unwrap();
        assert!((stats.values[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn plain_stats_match_double_loop_oracle() {
        let c = cfg(8, 2, 4, 3, 0.2);
        let (codes, _, slot) = random_slot(&c, 5);
        let stats = plain_stats(&slot.received, &codes).unwrap();
        let oracle = plain_oracle(&slot.received, &codes);
        for (a, b) in stats.values.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn weighted_stats_reduce_to_plain_without_knowledge() {
        let c = cfg(8, 2, 4, 3, 0.1);
        let (codes, _, slot) = random_slot(&c, 6);
        let plain = plain_stats(&slot.received, &codes).unwrap();
        let weighted =
            weighted_stats(&slot.received, &codes, &ChannelKnowledge::new()).unwrap();
        assert_eq!(plain, weighted);
    }

    #[test]
    fn zero_estimate_nulls_the_statistic() {
        let c = cfg(8, 2, 4, 3, 0.1);
        let (codes, _, slot) = random_slot(&c, 7);
        let mut knowledge = ChannelKnowledge::new();
        let support = SupportEstimate {
            indices: vec![3],
            scores: vec![0.0],
        };
        update_knowledge(&mut knowledge, &[vec![0.0; 3]], &support);
        let stats = weighted_stats(&slot.received, &codes, &knowledge).unwrap();
        assert_eq!(stats.values[3], 0.0);
        assert!(stats.values[0] > 0.0);
    }

    #[test]
    fn weighted_stats_with_exact_csi_match_full_csi_statistic() {
        let c = cfg(8, 2, 4, 3, 0.1);
        let (codes, channels, slot) = random_slot(&c, 8);
        let knowledge = ChannelKnowledge::from_exact_channels(&channels);
        let weighted = weighted_stats(&slot.received, &codes, &knowledge).unwrap();
        let filter = matched_filter(&slot.received, &codes).unwrap();
        let full = full_csi_stats_from_filter(&filter, &channels).unwrap();
        assert_eq!(weighted, full);
        // Cross-check against a naive loop.
        for n in 0..8 {
            let mut acc = 0.0;
            for m in 0..3 {
                let mut dot = 0.0;
                for l in 0..4 {
                    dot += codes.entries[(l, n)] * slot.received[(l, m)];
                }
                let w = channels.entries[(m, n)] * dot;
                acc += w * w;
            }
            acc /= 3.0;
            assert!((full.values[n] - acc).abs() <= 1e-12 * acc.max(1.0));
        }
    }

    #[test]
    fn top_k_selects_largest_values() {
        let stats = DecisionStatistics {
            values: vec![0.1, 5.0, 3.0, 0.2],
        };
        let support = select_top_k(&stats, 2).unwrap();
        assert_eq!(support.indices, vec![1, 2]);
        assert_eq!(support.scores, vec![5.0, 3.0]);
    }

    #[test]
    fn top_k_ties_break_toward_lowest_index() {
        let stats = DecisionStatistics {
            values: vec![1.0; 5],
        };
        let support = select_top_k(&stats, 2).unwrap();
        assert_eq!(support.indices, vec![0, 1]);
    }

    #[test]
    fn top_k_matches_full_sort_oracle() {
        let mut rng = substream(9, 0, 0, StreamTag::Codes);
        use rand::Rng;
        let values: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let stats = DecisionStatistics {
            values: values.clone(),
        };
        let support = select_top_k(&stats, 20).unwrap();
        let mut order: Vec<usize> = (0..1000).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
        let mut expected: Vec<usize> = order[..20].to_vec();
        expected.sort_unstable();
        assert_eq!(support.indices, expected);
    }

    #[test]
    fn top_k_rejects_oversized_k() {
        let stats = DecisionStatistics {
            values: vec![1.0, 2.0],
        };
        assert!(matches!(select_top_k(&stats, 3), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_ls_on_true_support_recovers_the_signal() {
        let c = cfg(8, 3, 6, 2, 0.0);
        let (codes, _, slot) = random_slot(&c, 10);
        let support = SupportEstimate {
            indices: slot.activity.active_set.clone(),
            scores: vec![0.0; 3],
        };
        let estimate = ls_refine(&slot.received, &codes, &support).unwrap();
        for (row, &n) in support.indices.iter().enumerate() {
            for m in 0..2 {
                let err = (estimate[(row, m)] - slot.signal[(n, m)]).abs();
                assert!(err <= 1e-10 * slot.signal[(n, m)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn empty_support_refines_to_empty_estimate() {
        let c = cfg(8, 3, 6, 2, 0.1);
        let (codes, _, slot) = random_slot(&c, 11);
        let estimate = ls_refine(&slot.received, &codes, &SupportEstimate::empty()).unwrap();
        assert_eq!((estimate.rows(), estimate.cols()), (0, 2));
    }

    #[test]
    fn oversized_support_is_underdetermined() {
        let c = cfg(8, 3, 4, 2, 0.1);
        let (codes, _, slot) = random_slot(&c, 12);
        let support = SupportEstimate {
            indices: vec![0, 1, 2, 3, 4],
            scores: vec![0.0; 5],
        };
        match ls_refine(&slot.received, &codes, &support) {
            Err(Error::Underdetermined { support, code_len }) => {
                assert_eq!(support, vec![0, 1, 2, 3, 4]);
                assert_eq!(code_len, 4);
            }
            other => panic!("expected underdetermined, got {other:?}"),
        }
    }

    #[test]
    fn ls_matches_pseudoinverse_oracle() {
        let c = cfg(8, 3, 6, 2, 0.3);
        let (codes, _, slot) = random_slot(&c, 13);
        let support = SupportEstimate {
            indices: vec![1, 4, 6],
            scores: vec![0.0; 3],
        };
        let estimate = ls_refine(&slot.received, &codes, &support).unwrap();
        // Normal-equation oracle at this tiny scale: (A^T A)^{-1} A^T Y
        // via explicit 3x3 elimination.
        let a = codes.entries.select_columns(&support.indices);
        let ata = a.transpose_mul(&a);
        let atb = a.transpose_mul(&slot.received);
        let mut aug = Mat::<f64>::zeros(3, 5);
        for i in 0..3 {
            for j in 0..3 {
                aug[(i, j)] = ata[(i, j)];
            }
            for j in 0..2 {
                aug[(i, 3 + j)] = atb[(i, j)];
            }
        }
        for k in 0..3 {
            let pivot = (k..3)
                .max_by(|&p, &q| aug[(p, k)].abs().partial_cmp(&aug[(q, k)].abs()).unwrap())
                .unwrap();
            for j in 0..5 {
                let tmp = aug[(k, j)];
                aug[(k, j)] = aug[(pivot, j)];
                aug[(pivot, j)] = tmp;
            }
            for i in (k + 1)..3 {
                let f = aug[(i, k)] / aug[(k, k)];
                for j in k..5 {
                    aug[(i, j)] -= f * aug[(k, j)];
                }
            }
        }
        let mut x = Mat::<f64>::zeros(3, 2);
        for i in (0..3).rev() {
            for j in 0..2 {
                let mut acc = aug[(i, 3 + j)];
                for k in (i + 1)..3 {
                    acc -= aug[(i, k)] * x[(k, j)];
                }
                x[(i, j)] = acc / aug[(i, i)];
            }
        }
        for i in 0..3 {
            for j in 0..2 {
                assert!((estimate[(i, j)] - x[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn channel_estimates_divide_out_the_amplitude() {
        let mut c = cfg(4, 1, 3, 2, 0.0);
        c.powers = vec![4.0; 4];
        let support = SupportEstimate {
            indices: vec![2],
            scores: vec![0.0],
        };
        let estimate = Mat::from_fn(1, 2, |_, _| 2.0);
        let channels = estimate_channels(&estimate, &support, &c);
        assert_eq!(channels, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn noiseless_channel_estimates_are_exact() {
        let c = cfg(8, 3, 6, 4, 0.0);
        let (codes, channels, slot) = random_slot(&c, 14);
        let support = SupportEstimate {
            indices: slot.activity.active_set.clone(),
            scores: vec![0.0; 3],
        };
        let estimate = ls_refine(&slot.received, &codes, &support).unwrap();
        let estimated = estimate_channels(&estimate, &support, &c);
        for (est, &n) in estimated.iter().zip(&support.indices) {
            for (m, &h) in est.iter().enumerate() {
                assert!((h - channels.entries[(m, n)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn channel_error_shrinks_with_noise() {
        let mut errs = Vec::new();
        for &noise_var in &[1.0, 0.1, 0.01] {
            let mut total = 0.0;
            for trial in 0..100u64 {
                let mut c = cfg(8, 3, 24, 4, noise_var);
                c.seed = trial;
                let codes = gen_codes(&c, &mut substream(trial, 0, 0, StreamTag::Codes));
                let channels =
                    gen_channels(&c, &mut substream(trial, 0, 0, StreamTag::Channels));
                let activity =
                    draw_activity(&c, &mut substream(trial, 0, 1, StreamTag::Activity));
                let slot = synthesize_slot(
                    &codes,
                    &channels,
                    &activity,
                    &c,
                    &mut substream(trial, 0, 1, StreamTag::Noise),
                )
                .unwrap();
                let support = SupportEstimate {
                    indices: activity.active_set.clone(),
                    scores: vec![0.0; 3],
                };
                let estimate = ls_refine(&slot.received, &codes, &support).unwrap();
                let estimated = estimate_channels(&estimate, &support, &c);
                for (est, &n) in estimated.iter().zip(&support.indices) {
                    for (m, &h) in est.iter().enumerate() {
                        total += (h - channels.entries[(m, n)]).powi(2);
                    }
                }
            }
            errs.push(total);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?}");
    }

    #[test]
    fn knowledge_insert_and_running_mean() {
        let mut knowledge = ChannelKnowledge::<f64>::new();
        let support = SupportEstimate {
            indices: vec![5],
            scores: vec![0.0],
        };
        update_knowledge(&mut knowledge, &[vec![1.0, 3.0]], &support);
        let user = knowledge.get(5).unwrap();
        assert_eq!(user.estimate, vec![1.0, 3.0]);
        assert_eq!(user.activations, 1);

        update_knowledge(&mut knowledge, &[vec![3.0, 5.0]], &support);
        let user = knowledge.get(5).unwrap();
        assert_eq!(user.estimate, vec![2.0, 4.0]);
        assert_eq!(user.activations, 2);
    }

    #[test]
    fn running_mean_equals_batch_mean() {
        let mut knowledge = ChannelKnowledge::<f64>::new();
        let support = SupportEstimate {
            indices: vec![0],
            scores: vec![0.0],
        };
        let vs = [vec![1.0, -2.0], vec![4.0, 0.5], vec![7.0, 7.5]];
        for v in &vs {
            update_knowledge(&mut knowledge, std::slice::from_ref(v), &support);
        }
        let user = knowledge.get(0).unwrap();
        assert_eq!(user.activations, 3);
        assert!((user.estimate[0] - 4.0).abs() < 1e-15);
        assert!((user.estimate[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn omc_first_slot_equals_plain_pipeline() {
        let c = cfg(16, 4, 8, 6, 0.2);
        let (codes, _, slot) = random_slot(&c, 15);
        let mut knowledge = ChannelKnowledge::new();
        let result = omc_slot(&slot, &codes, &mut knowledge, &c, 1).unwrap();

        let stats = plain_stats(&slot.received, &codes).unwrap();
        let support = select_top_k(&stats, 4).unwrap();
        assert_eq!(result.support.indices, support.indices);
        assert_eq!(result.stats, stats);
        let estimate = ls_refine(&slot.received, &codes, &support).unwrap();
        assert_eq!(result.signal_estimate.as_ref().unwrap(), &estimate);
        assert_eq!(knowledge.len(), 4);
    }

    #[test]
    fn omc_with_exact_csi_separates_cleanly_without_noise() {
        let c = cfg(16, 3, 12, 32, 0.0);
        let codes = gen_codes(&c, &mut substream(16, 0, 0, StreamTag::Codes));
        let channels = gen_channels(&c, &mut substream(16, 0, 0, StreamTag::Channels));
        let activity = draw_activity(&c, &mut substream(16, 0, 2, StreamTag::Activity));
        let slot = synthesize_slot(
            &codes,
            &channels,
            &activity,
            &c,
            &mut substream(16, 0, 2, StreamTag::Noise),
        )
        .unwrap();
        let mut knowledge = ChannelKnowledge::from_exact_channels(&channels);
        let result = omc_slot(&slot, &codes, &mut knowledge, &c, 2).unwrap();
        assert_eq!(result.support.indices, slot.activity.active_set);
    }

    #[test]
    fn threshold_values_match_closed_form() {
        let mut c = cfg(200, 20, 35, 256, 1.0 / 35.0);
        c.n_slots = 50;
        let pair = compute_thresholds(&c).unwrap();
        assert!((pair.t_known - 2.085_714_285_714_286).abs() < 1e-15);
        assert!((pair.t_unknown - 1.085_714_285_714_285_7).abs() < 1e-15);
    }

    #[test]
    fn threshold_gap_is_exactly_the_power() {
        for &(power, code_len) in &[(1.0, 35usize), (2.5, 16), (0.3, 100)] {
            let c = SystemConfig::equal_power(10, 1, code_len, 1, 1, power, 0.0, 0).unwrap();
            let pair = compute_thresholds(&c).unwrap();
            assert_eq!(pair.t_known - pair.t_unknown, power);
            assert!(pair.t_known > pair.t_unknown && pair.t_unknown > 0.0);
        }
    }

    #[test]
    fn thresholds_reject_unequal_powers() {
        let mut c = cfg(4, 1, 8, 1, 0.0);
        c.powers[2] = 2.0;
        assert!(matches!(
            compute_thresholds(&c),
            Err(Error::PowerControlRequired(_))
        ));
    }

    #[test]
    fn thresholds_sit_at_the_midpoint_of_the_class_means() {
        // Midpoint of the active/inactive mean pair, for both classes.
        let c = cfg(200, 20, 35, 256, 1.0 / 35.0);
        let pair = compute_thresholds(&c).unwrap();
        let power = 1.0;
        let load = 20.0 / 35.0 * power + c.noise_var;
        let inactive_mean = load;
        let active_known_mean = power * (3.0 - 1.0 / 35.0) + load;
        let active_unknown_mean = power * (1.0 - 1.0 / 35.0) + load;
        assert!((pair.t_known - 0.5 * (active_known_mean + inactive_mean)).abs() < 1e-15);
        assert!((pair.t_unknown - 0.5 * (active_unknown_mean + inactive_mean)).abs() < 1e-15);
    }

    #[test]
    fn otd_first_slot_matches_omc_first_slot() {
        let c = cfg(16, 4, 8, 6, 0.2);
        let (codes, _, slot) = random_slot(&c, 17);
        let mut k_omc = ChannelKnowledge::new();
        let mut k_otd = ChannelKnowledge::new();
        let omc = omc_slot(&slot, &codes, &mut k_omc, &c, 1).unwrap();
        let otd = otd_slot(&slot, &codes, &mut k_otd, &c, 1).unwrap();
        assert_eq!(omc, otd);
        assert_eq!(k_omc, k_otd);
    }

    #[test]
    fn otd_falls_back_to_plain_pick_when_nothing_crosses() {
        // Statistics all far below both thresholds: the threshold set is
        // empty and the plain top-K drives the result.
        let c = cfg(16, 4, 8, 6, 1e4);
        let codes = gen_codes(&c, &mut substream(18, 0, 0, StreamTag::Codes));
        let scaled = SlotData {
            received: Mat::zeros(8, 6),
            signal: Mat::zeros(16, 6),
            noise: Mat::zeros(8, 6),
            activity: ActivityPattern::from_set(vec![0, 1, 2, 3], 16),
        };
        let mut knowledge = ChannelKnowledge::new();
        let result = otd_slot(&scaled, &codes, &mut knowledge, &c, 2);
        // All statistics are zero; the plain top-K picks the first K
        // indices by the tie rule.
        let support = result.unwrap().support;
        assert_eq!(support.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn full_csi_slot_is_the_stats_plus_top_k_composition() {
        let c = cfg(16, 4, 8, 6, 0.2);
        let (codes, channels, slot) = random_slot(&c, 19);
        let result = full_csi_slot(&slot, &codes, &channels, &c).unwrap();
        let knowledge = ChannelKnowledge::from_exact_channels(&channels);
        let stats = weighted_stats(&slot.received, &codes, &knowledge).unwrap();
        let support = select_top_k(&stats, 4).unwrap();
        assert_eq!(result.stats, stats);
        assert_eq!(result.support, support);
        assert!(result.signal_estimate.is_none());
    }

    #[test]
    fn capped_union_respects_the_code_length() {
        let primary = SupportEstimate {
            indices: vec![0, 1, 2, 3],
            scores: vec![0.9, 0.8, 0.7, 0.6],
        };
        let fallback = SupportEstimate {
            indices: vec![4, 5, 6],
            scores: vec![1.0; 3],
        };
        let capped = capped_union(&primary, &fallback, 5);
        // Fallback kept whole, top two primaries by score added.
        assert_eq!(capped.indices, vec![0, 1, 4, 5, 6]);
    }

    #[test]
    fn stats_are_nonnegative_and_scale_quadratically() {
        let c = cfg(12, 3, 8, 5, 0.4);
        let (codes, _, slot) = random_slot(&c, 20);
        let stats = plain_stats(&slot.received, &codes).unwrap();
        assert!(stats.values.iter().all(|&v| v >= 0.0));
        let scaled = slot.received.scale(3.0);
        let stats_scaled = plain_stats(&scaled, &codes).unwrap();
        for (a, b) in stats.values.iter().zip(&stats_scaled.values) {
            assert!((9.0 * a - b).abs() <= 1e-10 * b.abs().max(1e-12));
        }
        // Selection is unchanged by positive scaling.
        let s1 = select_top_k(&stats, 3).unwrap();
        let s2 = select_top_k(&stats_scaled, 3).unwrap();
        assert_eq!(s1.indices, s2.indices);
    }

    #[test]
    fn column_permutation_permutes_plain_stats() {
        let c = cfg(10, 3, 6, 4, 0.2);
        let (codes, _, slot) = random_slot(&c, 21);
        let perm: Vec<usize> = vec![7, 3, 9, 0, 5, 1, 8, 2, 6, 4];
        let permuted = CodeMatrix {
            entries: codes.entries.select_columns(&perm),
        };
        let base = plain_stats(&slot.received, &codes).unwrap();
        let shuffled = plain_stats(&slot.received, &permuted).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(shuffled.values[dst], base.values[src]);
        }
    }
}
