//! Greedy baseline and an independent-sensing thresholding demo.

use rand::Rng;

use crate::detectors::{matched_filter, plain_stats_from_filter, select_top_k, SupportEstimate};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::system_model::{draw_activity, CodeMatrix, SystemConfig};

/// Simultaneous orthogonal matching pursuit.
///
/// Greedily selects `k` users by the aggregate squared correlation of
/// their codes with the current residual, re-projecting the measurements
/// onto the selected codes after every pick.
pub fn somp<T: Scalar>(
    received: &Mat<T>,
    codes: &CodeMatrix<T>,
    k: usize,
) -> Result<SupportEstimate<T>> {
    let (code_len, n_users) = (codes.entries.rows(), codes.entries.cols());
    if k > n_users {
        return Err(Error::Config(format!(
            "somp: k={k} exceeds the number of users {n_users}"
        )));
    }
    if k > code_len {
        return Err(Error::Underdetermined {
            support: Vec::new(),
            code_len,
        });
    }
    if k == 0 {
        return Ok(SupportEstimate::empty());
    }

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut residual = received.clone();
    let mut estimate = Mat::zeros(0, received.cols());
    for _ in 0..k {
        let correlations = matched_filter(&residual, codes)?;
        let scores = plain_stats_from_filter(&correlations);
        let pick = scores
            .values
            .iter()
            .enumerate()
            .filter(|(n, _)| !selected.contains(n))
            .max_by(|(na, a), (nb, b)| {
                a.partial_cmp(b)
                    .expect("finite correlation scores")
                    .then(nb.cmp(na))
            })
            .map(|(n, _)| n)
            .expect("at least one unselected user");
        selected.push(pick);
        selected.sort_unstable();

        let support = SupportEstimate {
            indices: selected.clone(),
            scores: vec![T::zero(); selected.len()],
        };
        estimate = crate::detectors::ls_refine(received, codes, &support)?;
        let reconstruction = codes.entries.select_columns(&selected).mul(&estimate);
        residual = received.sub(&reconstruction);
    }

    let scores = (0..selected.len())
        .map(|row| estimate.row_norm_sq(row))
        .collect();
    Ok(SupportEstimate {
        indices: selected,
        scores,
    })
}

/// Frobenius norm of the residual after projecting onto a support; used
/// by the monotonicity tests.
pub fn somp_residual_norm<T: Scalar>(
    received: &Mat<T>,
    codes: &CodeMatrix<T>,
    support: &SupportEstimate<T>,
) -> Result<T> {
    if support.is_empty() {
        return Ok(received.frob_norm_sq().sqrt());
    }
    let estimate = crate::detectors::ls_refine(received, codes, support)?;
    let reconstruction = codes
        .entries
        .select_columns(&support.indices)
        .mul(&estimate);
    Ok(received.sub(&reconstruction).frob_norm_sq().sqrt())
}

/// Exact-recovery rate of plain thresholding when every antenna sees its
/// own independent Gaussian sensing matrix.
///
/// Sensing entries are IID normal with variance `1/L`, so columns have
/// unit expected norm like the shared signature codes. The sparse signal
/// and noise follow the usual model. This is the regime where support
/// recovery works even from a single measurement per antenna once the
/// array is large.
pub fn trivial_pursuit_demo<T: Scalar>(
    cfg: &SystemConfig<T>,
    n_trials: usize,
    rng: &mut impl Rng,
) -> T {
    let (code_len, n_users, n_antennas) = (cfg.code_len, cfg.n_users, cfg.n_antennas);
    let entry_sd = (T::one() / T::from_count(code_len)).sqrt();
    let noise_sd = cfg.noise_var.sqrt();
    let mut successes = 0usize;
    let mut sensing_row = vec![T::zero(); n_users];
    for _ in 0..n_trials {
        let activity = draw_activity(cfg, rng);
        let amplitudes: Vec<T> = activity
            .active_set
            .iter()
            .map(|&n| cfg.powers[n].sqrt())
            .collect();
        let mut energies = vec![T::zero(); n_users];
        for _ in 0..n_antennas {
            // One antenna: its own sensing matrix, signal draw, and noise.
            let signal: Vec<T> = amplitudes
                .iter()
                .map(|&a| a * T::standard_normal(rng))
                .collect();
            let mut correlations = vec![T::zero(); n_users];
            for _ in 0..code_len {
                for entry in sensing_row.iter_mut() {
                    *entry = entry_sd * T::standard_normal(rng);
                }
                let mut measurement = T::zero();
                for (&n, &x) in activity.active_set.iter().zip(&signal) {
                    measurement += sensing_row[n] * x;
                }
                measurement += noise_sd * T::standard_normal(rng);
                for (acc, &entry) in correlations.iter_mut().zip(&sensing_row) {
                    *acc += entry * measurement;
                }
            }
            for (energy, &corr) in energies.iter_mut().zip(&correlations) {
                *energy += corr * corr;
            }
        }
        let scale = T::one() / T::from_count(n_antennas);
        let stats = crate::detectors::DecisionStatistics {
            values: energies.iter().map(|&e| scale * e).collect(),
        };
        let support = select_top_k(&stats, cfg.n_active).expect("k <= n by config");
        if support.indices == activity.active_set {
            successes += 1;
        }
    }
    T::from_count(successes) / T::from_count(n_trials)
}
