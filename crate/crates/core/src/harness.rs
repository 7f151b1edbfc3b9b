//! Seeded Monte Carlo experiments, analytic sweeps, and output emission.
//!
//! Trials run concurrently; every random object is keyed by
//! `(seed, trial, slot, tag)` and the per-slot failure counts are summed,
//! so results are byte-identical regardless of thread count or execution
//! order. Within a trial, slots run sequentially because the
//! opportunistic detectors carry channel knowledge forward.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::somp;
use crate::bounds::{
    expected_active_known, omc_pof_bound, omc_pof_bound_large_m, otd_pof_bound,
    otd_pof_bound_large_m, BoundInputs, BoundReport,
};
use crate::detectors::{
    full_csi_stats_from_filter, matched_filter, omc_slot_with_filter, otd_slot_with_filter,
    plain_stats_from_filter, select_top_k, weighted_stats_from_filter, ChannelKnowledge,
    DecisionStatistics,
};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamTag};
use crate::scalar::Scalar;
use crate::system_model::{
    draw_activity, gen_channels, gen_codes, synthesize_slot, SystemConfig,
};

/// Detection algorithms the runner can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Plain thresholding on the code correlations.
    Plain,
    /// Opportunistic maximum correlation.
    Omc,
    /// Opportunistic two-threshold detection.
    Otd,
    /// Thresholding with exact CSI for every user.
    FullCsi,
    /// Simultaneous orthogonal matching pursuit.
    Somp,
    /// Thresholding with independent per-antenna sensing matrices.
    TpDemo,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Plain => "plain",
            Algorithm::Omc => "omc",
            Algorithm::Otd => "otd",
            Algorithm::FullCsi => "full_csi",
            Algorithm::Somp => "somp",
            Algorithm::TpDemo => "tp_demo",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plain" => Ok(Algorithm::Plain),
            "omc" => Ok(Algorithm::Omc),
            "otd" => Ok(Algorithm::Otd),
            "full_csi" | "full-csi" => Ok(Algorithm::FullCsi),
            "somp" => Ok(Algorithm::Somp),
            "tp_demo" | "tp-demo" => Ok(Algorithm::TpDemo),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// How per-user powers are drawn for each scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerProfile<T> {
    /// Every user received at the same power.
    Equal { power: T },
    /// Powers uniform in dB across `spread_db`, centered on 0 dB, drawn
    /// once per scenario.
    UniformDbSpread { spread_db: T },
}

impl<T: Scalar> PowerProfile<T> {
    /// Reference power used by the SNR convention.
    pub fn reference_power(&self) -> T {
        match self {
            PowerProfile::Equal { power } => *power,
            PowerProfile::UniformDbSpread { .. } => T::one(),
        }
    }

    pub fn is_equal(&self) -> bool {
        matches!(self, PowerProfile::Equal { .. })
    }

    /// Draw the per-user power vector for one scenario.
    pub fn realize(&self, n_users: usize, rng: &mut impl rand::Rng) -> Vec<T> {
        match self {
            PowerProfile::Equal { power } => vec![*power; n_users],
            PowerProfile::UniformDbSpread { spread_db } => {
                let ten = T::from_count(10);
                let half = *spread_db / (T::one() + T::one());
                (0..n_users)
                    .map(|_| {
                        let db = T::uniform(rng) * *spread_db - half;
                        ten.powf(db / ten)
                    })
                    .collect()
            }
        }
    }
}

/// Noise level, either direct or through the per-user SNR convention
/// `snr = P / (L * noise_var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec<T> {
    Variance(T),
    SnrDb(T),
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn resolve(&self, reference_power: T, code_len: usize) -> T {
        match self {
            NoiseSpec::Variance(v) => *v,
            NoiseSpec::SnrDb(db) => {
                crate::system_model::noise_var_from_snr_db(reference_power, code_len, *db)
            }
        }
    }
}

/// Output format of the emitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format '{other}'"))),
        }
    }
}

/// Full description of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec<T> {
    pub n_users: usize,
    pub n_active: usize,
    pub code_len: usize,
    pub n_antennas: usize,
    pub n_slots: usize,
    pub n_trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub power_profile: PowerProfile<T>,
    pub noise: NoiseSpec<T>,
    pub seed: u64,
    /// Reuse the slot-1 code matrix across trials instead of redrawing.
    pub fix_codes: bool,
}

impl<T: Scalar> ExperimentSpec<T> {
    pub fn validate(&self) -> Result<()> {
        self.base_config(vec![T::one(); self.n_users])?.validate()?;
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms must not be empty".into()));
        }
        if self.algorithms.contains(&Algorithm::Otd) && !self.power_profile.is_equal() {
            return Err(Error::Config(
                "otd requires the equal power profile".into(),
            ));
        }
        Ok(())
    }

    fn noise_var(&self) -> T {
        self.noise
            .resolve(self.power_profile.reference_power(), self.code_len)
    }

    fn base_config(&self, powers: Vec<T>) -> Result<SystemConfig<T>> {
        Ok(SystemConfig {
            n_users: self.n_users,
            n_active: self.n_active,
            code_len: self.code_len,
            n_antennas: self.n_antennas,
            n_slots: self.n_slots,
            powers,
            noise_var: self.noise_var(),
            seed: self.seed,
        })
    }
}

/// Aggregated outcome of one `(slot, algorithm)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    pub slot: usize,
    pub algorithm: String,
    pub trials: u64,
    pub failures: u64,
    pub pof: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean number of users with collected CSI entering the slot.
    pub lambda_mean: f64,
}

/// Normal-approximation 95% binomial interval, clamped to `[0, 1]`.
fn binomial_ci(failures: u64, trials: u64) -> (f64, f64, f64) {
    let p = failures as f64 / trials as f64;
    let half = 1.96 * (p * (1.0 - p) / trials as f64).sqrt();
    (p, (p - half).max(0.0), (p + half).min(1.0))
}

struct TrialTally {
    /// Failure counts, `slot * n_algorithms + algorithm`.
    failures: Vec<u64>,
    /// Knowledge sizes entering each slot, same layout.
    known: Vec<u64>,
}

impl TrialTally {
    fn zeros(cells: usize) -> Self {
        Self {
            failures: vec![0; cells],
            known: vec![0; cells],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.failures.iter_mut().zip(&other.failures) {
            *a += b;
        }
        for (a, b) in self.known.iter_mut().zip(&other.known) {
            *a += b;
        }
        self
    }
}

fn run_trial<T: Scalar>(spec: &ExperimentSpec<T>, trial: u64) -> Result<TrialTally> {
    let n_algorithms = spec.algorithms.len();
    let mut tally = TrialTally::zeros(spec.n_slots * n_algorithms);

    let powers = spec.power_profile.realize(
        spec.n_users,
        &mut substream(spec.seed, trial, 0, StreamTag::Powers),
    );
    let cfg = spec.base_config(powers)?;
    let code_trial = if spec.fix_codes { 0 } else { trial };
    let codes = gen_codes(&cfg, &mut substream(spec.seed, code_trial, 0, StreamTag::Codes));
    let channels = gen_channels(&cfg, &mut substream(spec.seed, trial, 0, StreamTag::Channels));

    let mut omc_knowledge = ChannelKnowledge::new();
    let mut otd_knowledge = ChannelKnowledge::new();

    for slot_index in 1..=spec.n_slots {
        let slot_u64 = slot_index as u64;
        let activity = draw_activity(
            &cfg,
            &mut substream(spec.seed, trial, slot_u64, StreamTag::Activity),
        );
        let slot = synthesize_slot(
            &codes,
            &channels,
            &activity,
            &cfg,
            &mut substream(spec.seed, trial, slot_u64, StreamTag::Noise),
        )?;
        // One matched filter per slot, shared by every correlation-based
        // detector.
        let needs_filter = spec.algorithms.iter().any(|a| {
            matches!(
                a,
                Algorithm::Plain | Algorithm::Omc | Algorithm::Otd | Algorithm::FullCsi
            )
        });
        let correlations = if needs_filter {
            Some(matched_filter(&slot.received, &codes)?)
        } else {
            None
        };

        for (algo_index, algorithm) in spec.algorithms.iter().enumerate() {
            let cell = (slot_index - 1) * n_algorithms + algo_index;
            let (estimated, known_entering) = match algorithm {
                Algorithm::Plain => {
                    let stats = plain_stats_from_filter(correlations.as_ref().unwrap());
                    (select_top_k(&stats, cfg.n_active)?.indices, 0)
                }
                Algorithm::FullCsi => {
                    let stats = full_csi_stats_from_filter(
                        correlations.as_ref().unwrap(),
                        &channels,
                    )?;
                    (
                        select_top_k(&stats, cfg.n_active)?.indices,
                        cfg.n_users as u64,
                    )
                }
                Algorithm::Omc => {
                    let known = omc_knowledge.len() as u64;
                    let result = omc_slot_with_filter(
                        correlations.as_ref().unwrap(),
                        &slot,
                        &codes,
                        &mut omc_knowledge,
                        &cfg,
                        slot_index,
                    )?;
                    (result.support.indices, known)
                }
                Algorithm::Otd => {
                    let known = otd_knowledge.len() as u64;
                    let result = otd_slot_with_filter(
                        correlations.as_ref().unwrap(),
                        &slot,
                        &codes,
                        &mut otd_knowledge,
                        &cfg,
                        slot_index,
                    )?;
                    (result.support.indices, known)
                }
                Algorithm::Somp => (somp(&slot.received, &codes, cfg.n_active)?.indices, 0),
                Algorithm::TpDemo => {
                    let stats = tp_slot_stats(
                        &slot,
                        &cfg,
                        &mut substream(spec.seed, trial, slot_u64, StreamTag::Sensing),
                    );
                    (select_top_k(&stats, cfg.n_active)?.indices, 0)
                }
            };
            if estimated != slot.activity.active_set {
                tally.failures[cell] += 1;
            }
            tally.known[cell] += known_entering;
        }
    }
    Ok(tally)
}

/// Decision statistics when every antenna gets its own independent
/// Gaussian sensing matrix, applied to the already-synthesized slot
/// signal and noise.
fn tp_slot_stats<T: Scalar>(
    slot: &crate::system_model::SlotData<T>,
    cfg: &SystemConfig<T>,
    rng: &mut impl rand::Rng,
) -> DecisionStatistics<T> {
    let (code_len, n_users, n_antennas) = (cfg.code_len, cfg.n_users, cfg.n_antennas);
    let entry_sd = (T::one() / T::from_count(code_len)).sqrt();
    let mut energies = vec![T::zero(); n_users];
    let mut sensing_row = vec![T::zero(); n_users];
    for m in 0..n_antennas {
        let mut correlations = vec![T::zero(); n_users];
        for l in 0..code_len {
            for entry in sensing_row.iter_mut() {
                *entry = entry_sd * T::standard_normal(rng);
            }
            let mut measurement = slot.noise[(l, m)];
            for &n in &slot.activity.active_set {
                measurement += sensing_row[n] * slot.signal[(n, m)];
            }
            for (acc, &entry) in correlations.iter_mut().zip(&sensing_row) {
                *acc += entry * measurement;
            }
        }
        for (energy, &corr) in energies.iter_mut().zip(&correlations) {
            *energy += corr * corr;
        }
    }
    let scale = T::one() / T::from_count(n_antennas);
    DecisionStatistics {
        values: energies.iter().map(|&e| scale * e).collect(),
    }
}

/// Run the experiment and aggregate failure rates per slot and algorithm.
pub fn run_experiment<T: Scalar>(spec: &ExperimentSpec<T>) -> Result<Vec<SlotResult>> {
    spec.validate()?;
    let n_algorithms = spec.algorithms.len();
    let cells = spec.n_slots * n_algorithms;

    let tally = (0..spec.n_trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(spec, trial))
        .try_reduce(|| TrialTally::zeros(cells), |a, b| Ok(a.merge(b)))?;

    let trials = spec.n_trials as u64;
    let mut results = Vec::with_capacity(cells);
    for slot_index in 1..=spec.n_slots {
        for (algo_index, algorithm) in spec.algorithms.iter().enumerate() {
            let cell = (slot_index - 1) * n_algorithms + algo_index;
            let failures = tally.failures[cell];
            let (pof, ci_low, ci_high) = binomial_ci(failures, trials);
            results.push(SlotResult {
                slot: slot_index,
                algorithm: algorithm.label().to_string(),
                trials,
                failures,
                pof,
                ci_low,
                ci_high,
                lambda_mean: tally.known[cell] as f64 / trials as f64,
            });
        }
    }
    Ok(results)
}

/// Nine-significant-digit float field, shared by every CSV emitter.
fn csv_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// Write slot results as CSV.
pub fn write_slot_csv(results: &[SlotResult], out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
    writer
        .write_record([
            "slot",
            "algorithm",
            "trials",
            "failures",
            "pof",
            "ci_low",
            "ci_high",
            "lambda_mean",
        ])
        .map_err(io_err)?;
    for row in results {
        writer
            .write_record([
                row.slot.to_string(),
                row.algorithm.clone(),
                row.trials.to_string(),
                row.failures.to_string(),
                csv_float(row.pof),
                csv_float(row.ci_low),
                csv_float(row.ci_high),
                csv_float(row.lambda_mean),
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

/// Write slot results as JSON.
pub fn write_slot_json(results: &[SlotResult], mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, results)
        .map_err(|e| Error::Config(format!("json write failed: {e}")))?;
    out.write_all(b"\n")
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

/// Which bound a sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Omc,
    Otd,
    OmcLargeM,
    OtdLargeM,
}

impl BoundKind {
    pub fn label(self) -> &'static str {
        match self {
            BoundKind::Omc => "omc",
            BoundKind::Otd => "otd",
            BoundKind::OmcLargeM => "omc-large-m",
            BoundKind::OtdLargeM => "otd-large-m",
        }
    }
}

impl FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omc" => Ok(BoundKind::Omc),
            "otd" => Ok(BoundKind::Otd),
            "omc-large-m" => Ok(BoundKind::OmcLargeM),
            "otd-large-m" => Ok(BoundKind::OtdLargeM),
            other => Err(Error::Config(format!("unknown bound kind '{other}'"))),
        }
    }
}

/// Cartesian sweep over code lengths and known-user counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGrid<T> {
    pub kind: BoundKind,
    pub code_lens: Vec<usize>,
    pub known_users: Vec<usize>,
    pub n_users: usize,
    pub n_active: usize,
    pub n_antennas: usize,
    /// Active users with CSI; defaults to the expected overlap.
    pub active_known: Option<usize>,
    pub p_min: T,
    pub p_max: T,
    pub noise_var: T,
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub kind: String,
    pub code_len: usize,
    pub known_users: usize,
    pub active_known: usize,
    pub value: f64,
    pub branch: String,
    pub dominant_term: String,
    pub valid: bool,
}

fn report_to_row<T: Scalar>(
    kind: BoundKind,
    code_len: usize,
    known_users: usize,
    active_known: usize,
    report: &BoundReport<T>,
) -> BoundRow {
    BoundRow {
        kind: kind.label().to_string(),
        code_len,
        known_users,
        active_known,
        value: report.value.to_report(),
        branch: match report.branch {
            crate::bounds::BoundBranch::ExponentialTail => "exponential-tail".to_string(),
            crate::bounds::BoundBranch::ClampedTrivial => "clamped-trivial".to_string(),
        },
        dominant_term: report
            .dominant_term
            .map(|c| c.label().to_string())
            .unwrap_or_else(|| "none".to_string()),
        valid: report.validity.map(|v| v.all_hold()).unwrap_or(true),
    }
}

/// Evaluate the selected bound over the grid.
pub fn run_bound_sweep<T: Scalar>(grid: &BoundGrid<T>) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for &code_len in &grid.code_lens {
        for &known_users in &grid.known_users {
            let active_known = grid
                .active_known
                .unwrap_or_else(|| expected_active_known(grid.n_active, known_users, grid.n_users));
            if active_known > grid.n_active {
                return Err(Error::InvalidPopulations(format!(
                    "active_known {active_known} exceeds n_active {}",
                    grid.n_active
                )));
            }
            let inputs = BoundInputs {
                code_len,
                n_antennas: grid.n_antennas,
                n_users: grid.n_users,
                n_active: grid.n_active,
                known_users,
                active_known,
                active_unknown: grid.n_active - active_known,
                p_min: grid.p_min,
                p_max: grid.p_max,
                noise_var: grid.noise_var,
                target_pof: T::from_f64(0.5).unwrap(),
            };
            let report = match grid.kind {
                BoundKind::Omc => omc_pof_bound(&inputs)?,
                BoundKind::Otd => otd_pof_bound(&inputs)?,
                BoundKind::OmcLargeM => omc_pof_bound_large_m(&inputs)?,
                BoundKind::OtdLargeM => otd_pof_bound_large_m(&inputs)?,
            };
            rows.push(report_to_row(
                grid.kind,
                code_len,
                known_users,
                active_known,
                &report,
            ));
        }
    }
    Ok(rows)
}

/// Write bound rows as CSV.
pub fn write_bound_csv(rows: &[BoundRow], out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
    writer
        .write_record([
            "kind",
            "code_len",
            "known_users",
            "active_known",
            "value",
            "branch",
            "dominant_term",
            "valid",
        ])
        .map_err(io_err)?;
    for row in rows {
        writer
            .write_record([
                row.kind.clone(),
                row.code_len.to_string(),
                row.known_users.to_string(),
                row.active_known.to_string(),
                csv_float(row.value),
                row.branch.clone(),
                row.dominant_term.clone(),
                row.valid.to_string(),
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

/// Write bound rows as JSON.
pub fn write_bound_json(rows: &[BoundRow], mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)
        .map_err(|e| Error::Config(format!("json write failed: {e}")))?;
    out.write_all(b"\n")
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

/// One user class in the mean-verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMeanCheck {
    pub class: String,
    pub empirical: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

/// Empirical vs analytic decision-statistic means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeansReport {
    /// Total antenna samples aggregated.
    pub antenna_samples: usize,
    pub classes: Vec<ClassMeanCheck>,
}

impl std::fmt::Display for MeansReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "antenna samples: {}", self.antenna_samples)?;
        writeln!(
            f,
            "{:<22} {:>14} {:>14} {:>12}",
            "class", "empirical", "analytic", "rel_error"
        )?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<22} {:>14.6e} {:>14.6e} {:>12.3e}",
                c.class, c.empirical, c.analytic, c.rel_error
            )?;
        }
        Ok(())
    }
}

/// Estimate the decision-statistic mean of each user class and compare
/// with the closed forms.
///
/// Codes, channels, activity, and noise are redrawn for every batch of
/// `n_antennas` antenna samples until `samples` antenna draws have been
/// aggregated. Requires the equal-power configuration, where the closed
/// forms are exact:
/// inactive users (with or without CSI) sit at `K P / L + noise_var`,
/// active users add `P (1 - 1/L)` without CSI and `P (3 - 1/L)` with it.
pub fn verify_means<T: Scalar>(cfg: &SystemConfig<T>, samples: usize) -> Result<MeansReport> {
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    if !cfg.equal_powers() {
        return Err(Error::PowerControlRequired(
            "mean verification uses the equal-power closed forms".into(),
        ));
    }
    let batches = samples.div_ceil(cfg.n_antennas);

    let sums = (0..batches as u64)
        .into_par_iter()
        .map(|batch| -> Result<[(f64, u64); 4]> {
            let codes = gen_codes(cfg, &mut substream(cfg.seed, batch, 0, StreamTag::Codes));
            let channels =
                gen_channels(cfg, &mut substream(cfg.seed, batch, 0, StreamTag::Channels));
            let activity =
                draw_activity(cfg, &mut substream(cfg.seed, batch, 1, StreamTag::Activity));
            let slot = synthesize_slot(
                &codes,
                &channels,
                &activity,
                cfg,
                &mut substream(cfg.seed, batch, 1, StreamTag::Noise),
            )?;
            let correlations = matched_filter(&slot.received, &codes)?;
            let plain = plain_stats_from_filter(&correlations);
            let knowledge = ChannelKnowledge::from_exact_channels(&channels);
            let weighted = weighted_stats_from_filter(&correlations, &knowledge)?;

            // inactive/no CSI, active/no CSI, inactive/CSI, active/CSI
            let mut acc = [(0.0f64, 0u64); 4];
            for n in 0..cfg.n_users {
                let active = slot.activity.is_active(n);
                let (plain_ix, weighted_ix) = if active { (1, 3) } else { (0, 2) };
                acc[plain_ix].0 += plain.values[n].to_report();
                acc[plain_ix].1 += 1;
                acc[weighted_ix].0 += weighted.values[n].to_report();
                acc[weighted_ix].1 += 1;
            }
            Ok(acc)
        })
        .try_reduce(
            || [(0.0, 0); 4],
            |mut a, b| {
                for i in 0..4 {
                    a[i].0 += b[i].0;
                    a[i].1 += b[i].1;
                }
                Ok(a)
            },
        )?;

    let power = cfg.powers[0].to_report();
    let code_len = cfg.code_len as f64;
    let base = cfg.n_active as f64 * power / code_len + cfg.noise_var.to_report();
    let analytic = [
        base,
        base + power * (1.0 - 1.0 / code_len),
        base,
        base + power * (3.0 - 1.0 / code_len),
    ];
    let labels = [
        "inactive_no_csi",
        "active_no_csi",
        "inactive_with_csi",
        "active_with_csi",
    ];
    let classes = labels
        .iter()
        .zip(sums.iter().zip(&analytic))
        .map(|(label, (&(sum, count), &want))| {
            let empirical = sum / count as f64;
            ClassMeanCheck {
                class: label.to_string(),
                empirical,
                analytic: want,
                rel_error: (empirical - want).abs() / want.abs(),
            }
        })
        .collect();
    Ok(MeansReport {
        antenna_samples: batches * cfg.n_antennas,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec<f64> {
        ExperimentSpec {
            n_users: 24,
            n_active: 4,
            code_len: 24,
            n_antennas: 8,
            n_slots: 3,
            n_trials: 16,
            algorithms: vec![Algorithm::Plain, Algorithm::Omc, Algorithm::FullCsi],
            power_profile: PowerProfile::Equal { power: 1.0 },
            noise: NoiseSpec::SnrDb(0.0),
            seed: 7,
            fix_codes: false,
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = tiny_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let spec = tiny_spec();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_experiment(&spec))
            .unwrap();
        let quad = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_experiment(&spec))
            .unwrap();
        assert_eq!(single, quad);
    }

    #[test]
    fn omc_and_plain_agree_on_slot_one() {
        let spec = tiny_spec();
        let results = run_experiment(&spec).unwrap();
        let pof = |algo: &str, slot: usize| {
            results
                .iter()
                .find(|r| r.algorithm == algo && r.slot == slot)
                .unwrap()
                .pof
        };
        assert_eq!(pof("plain", 1), pof("omc", 1));
    }

    #[test]
    fn confidence_interval_brackets_the_estimate() {
        let spec = tiny_spec();
        for row in run_experiment(&spec).unwrap() {
            assert!(row.ci_low <= row.pof && row.pof <= row.ci_high);
            assert!((0.0..=1.0).contains(&row.pof));
        }
    }

    #[test]
    fn lambda_mean_tracks_collected_knowledge() {
        let spec = tiny_spec();
        let results = run_experiment(&spec).unwrap();
        let lambda = |algo: &str, slot: usize| {
            results
                .iter()
                .find(|r| r.algorithm == algo && r.slot == slot)
                .unwrap()
                .lambda_mean
        };
        assert_eq!(lambda("omc", 1), 0.0);
        assert_eq!(lambda("omc", 2), 4.0);
        assert!(lambda("omc", 3) > 4.0);
        assert_eq!(lambda("full_csi", 2), 24.0);
        assert_eq!(lambda("plain", 3), 0.0);
    }

    #[test]
    fn otd_demands_equal_power() {
        let mut spec = tiny_spec();
        spec.algorithms = vec![Algorithm::Otd];
        spec.power_profile = PowerProfile::UniformDbSpread { spread_db: 6.0 };
        assert!(matches!(run_experiment(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn csv_emission_has_the_documented_schema() {
        let spec = tiny_spec();
        let results = run_experiment(&spec).unwrap();
        let mut buf = Vec::new();
        write_slot_csv(&results, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "slot,algorithm,trials,failures,pof,ci_low,ci_high,lambda_mean"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("1,plain,16,"));
        // Nine significant digits in scientific notation.
        let pof_field = first.split(',').nth(4).unwrap();
        assert!(
            pof_field.contains('e') && pof_field.len() >= 10,
            "field {pof_field}"
        );
    }

    #[test]
    fn json_emission_round_trips() {
        let spec = tiny_spec();
        let results = run_experiment(&spec).unwrap();
        let mut buf = Vec::new();
        write_slot_json(&results, &mut buf).unwrap();
        let parsed: Vec<SlotResult> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(parsed, results);
    }

    #[test]
    fn single_point_sweep_matches_the_direct_call() {
        let grid = BoundGrid {
            kind: BoundKind::OmcLargeM,
            code_lens: vec![49510],
            known_users: vec![120_000],
            n_users: 400_000,
            n_active: 40,
            n_antennas: 50_000,
            active_known: None,
            p_min: 1.0,
            p_max: 1.0,
            noise_var: 1.0 / 49510.0,
        };
        let rows = run_bound_sweep(&grid).unwrap();
        assert_eq!(rows.len(), 1);
        let inputs = BoundInputs::equal_power(
            49510,
            50_000,
            400_000,
            40,
            120_000,
            1.0,
            1.0 / 49510.0,
            0.5,
        )
        .unwrap();
        let direct = omc_pof_bound_large_m(&inputs).unwrap();
        assert_eq!(rows[0].value, direct.value);
        assert_eq!(rows[0].active_known, 12);
    }

    #[test]
    fn empty_grid_gives_an_empty_table() {
        let grid = BoundGrid::<f64> {
            kind: BoundKind::Omc,
            code_lens: vec![],
            known_users: vec![],
            n_users: 100,
            n_active: 5,
            n_antennas: 10,
            active_known: None,
            p_min: 1.0,
            p_max: 1.0,
            noise_var: 0.0,
        };
        assert!(run_bound_sweep(&grid).unwrap().is_empty());
    }

    #[test]
    fn forced_silence_gives_zero_means() {
        // All-zero signal with zero noise: every class mean is zero, and
        // the report degrades gracefully (denominators stay finite).
        let cfg = SystemConfig::<f64>::equal_power(16, 2, 8, 4, 1, 1.0, 0.0, 3).unwrap();
        let report = verify_means(&cfg, 16).unwrap();
        assert_eq!(report.classes.len(), 4);
        for class in &report.classes {
            assert!(class.analytic > 0.0);
        }
    }

    #[test]
    fn analytic_class_gap_matches_the_closed_form() {
        let cfg =
            SystemConfig::<f64>::equal_power(20, 4, 35, 4, 1, 1.0, 1.0 / 35.0, 3).unwrap();
        let report = verify_means(&cfg, 64).unwrap();
        let gap = report.classes[3].analytic - report.classes[0].analytic;
        assert!((gap - (3.0 - 1.0 / 35.0)).abs() < 1e-12);
    }
}
