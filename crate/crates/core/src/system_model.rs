//! Random objects of the measurement model and slot synthesis.
//!
//! A scenario covers one coherence interval: a signature code matrix and a
//! channel gain matrix are drawn once, then every random access slot draws
//! a fresh active set and receiver noise. The received slot is
//! `Y = C X + W` with `X` carrying the scaled channel rows of the active
//! users and all-zero rows elsewhere.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::{axpy, Mat};
use crate::scalar::Scalar;

/// Scenario dimensions and physical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig<T> {
    /// Total number of users (N).
    pub n_users: usize,
    /// Number of simultaneously active users (K).
    pub n_active: usize,
    /// Signature code length (L).
    pub code_len: usize,
    /// Number of receive antennas (M).
    pub n_antennas: usize,
    /// Random access slots per coherence interval.
    pub n_slots: usize,
    /// Linear received power per user, length `n_users`.
    pub powers: Vec<T>,
    /// Receiver noise variance, linear.
    pub noise_var: T,
    /// Seed for all substreams of the scenario.
    pub seed: u64,
}

impl<T: Scalar> SystemConfig<T> {
    /// Equal-power configuration.
    #[allow(clippy::too_many_arguments)]
    pub fn equal_power(
        n_users: usize,
        n_active: usize,
        code_len: usize,
        n_antennas: usize,
        n_slots: usize,
        power: T,
        noise_var: T,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            n_users,
            n_active,
            code_len,
            n_antennas,
            n_slots,
            powers: vec![power; n_users],
            noise_var,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be at least 1".into()));
        }
        if self.n_active == 0 || self.n_active > self.n_users {
            return Err(Error::Config(format!(
                "n_active must satisfy 1 <= K <= N, got K={} N={}",
                self.n_active, self.n_users
            )));
        }
        if self.code_len == 0 {
            return Err(Error::Config("code_len must be at least 1".into()));
        }
        if self.n_antennas == 0 {
            return Err(Error::Config("n_antennas must be at least 1".into()));
        }
        if self.n_slots == 0 {
            return Err(Error::Config("n_slots must be at least 1".into()));
        }
        if self.powers.len() != self.n_users {
            return Err(Error::Config(format!(
                "powers has {} entries for {} users",
                self.powers.len(),
                self.n_users
            )));
        }
        if self.powers.iter().any(|p| *p <= T::zero() || !p.is_finite()) {
            return Err(Error::Config("all powers must be positive".into()));
        }
        if self.noise_var < T::zero() || !self.noise_var.is_finite() {
            return Err(Error::Config("noise_var must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn p_min(&self) -> T {
        self.powers.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn p_max(&self) -> T {
        self.powers.iter().copied().fold(T::zero(), T::max)
    }

    /// Whether every user is received at the same power.
    pub fn equal_powers(&self) -> bool {
        self.powers.windows(2).all(|w| w[0] == w[1])
    }
}

/// Noise variance from a per-user SNR in dB, defined as
/// `P / (L * noise_var)` for received power `P` and code length `L`.
pub fn noise_var_from_snr_db<T: Scalar>(power: T, code_len: usize, snr_db: T) -> T {
    let ten = T::from_count(10);
    let snr = ten.powf(snr_db / ten);
    power / (T::from_count(code_len) * snr)
}

/// Signature code matrix, `code_len x n_users`, entries `±1/sqrt(L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix<T> {
    pub entries: Mat<T>,
}

/// Channel gain matrix, `n_antennas x n_users`, IID standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix<T> {
    pub entries: Mat<T>,
}

/// Active-user set of one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityPattern {
    /// Active user indices, ascending.
    pub active_set: Vec<usize>,
    /// 0/1 indicator, length `n_users`.
    pub indicator: Vec<bool>,
}

impl ActivityPattern {
    pub fn from_set(mut active_set: Vec<usize>, n_users: usize) -> Self {
        active_set.sort_unstable();
        let mut indicator = vec![false; n_users];
        for &n in &active_set {
            indicator[n] = true;
        }
        Self {
            active_set,
            indicator,
        }
    }

    pub fn is_active(&self, user: usize) -> bool {
        self.indicator[user]
    }
}

/// One synthesized random access slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotData<T> {
    /// Received measurements, `code_len x n_antennas`.
    pub received: Mat<T>,
    /// Transmitted signal matrix, `n_users x n_antennas`; row `n` is zero
    /// for inactive users.
    pub signal: Mat<T>,
    /// Receiver noise, `code_len x n_antennas`.
    pub noise: Mat<T>,
    pub activity: ActivityPattern,
}

/// Draw the signature code matrix: IID equiprobable `±1/sqrt(L)` entries.
pub fn gen_codes<T: Scalar>(cfg: &SystemConfig<T>, rng: &mut impl Rng) -> CodeMatrix<T> {
    let magnitude = T::one() / T::from_count(cfg.code_len).sqrt();
    let entries = Mat::from_fn(cfg.code_len, cfg.n_users, |_, _| {
        if rng.gen::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    });
    CodeMatrix { entries }
}

/// Draw the channel gain matrix: IID standard normal entries.
pub fn gen_channels<T: Scalar>(cfg: &SystemConfig<T>, rng: &mut impl Rng) -> ChannelMatrix<T> {
    let entries = Mat::from_fn(cfg.n_antennas, cfg.n_users, |_, _| T::standard_normal(rng));
    ChannelMatrix { entries }
}

/// Draw a uniformly random set of `n_active` users.
pub fn draw_activity<T: Scalar>(cfg: &SystemConfig<T>, rng: &mut impl Rng) -> ActivityPattern {
    let picked = sample(rng, cfg.n_users, cfg.n_active).into_vec();
    ActivityPattern::from_set(picked, cfg.n_users)
}

/// Synthesize one received slot, `Y = C X + W`.
pub fn synthesize_slot<T: Scalar>(
    codes: &CodeMatrix<T>,
    channels: &ChannelMatrix<T>,
    activity: &ActivityPattern,
    cfg: &SystemConfig<T>,
    rng: &mut impl Rng,
) -> Result<SlotData<T>> {
    let (code_len, n_users, n_antennas) = (cfg.code_len, cfg.n_users, cfg.n_antennas);
    if codes.entries.rows() != code_len || codes.entries.cols() != n_users {
        return Err(Error::DimensionMismatch(format!(
            "codes are {}x{}, config expects {}x{}",
            codes.entries.rows(),
            codes.entries.cols(),
            code_len,
            n_users
        )));
    }
    if channels.entries.rows() != n_antennas || channels.entries.cols() != n_users {
        return Err(Error::DimensionMismatch(format!(
            "channels are {}x{}, config expects {}x{}",
            channels.entries.rows(),
            channels.entries.cols(),
            n_antennas,
            n_users
        )));
    }
    if activity.indicator.len() != n_users {
        return Err(Error::DimensionMismatch(format!(
            "activity indicator has {} entries for {} users",
            activity.indicator.len(),
            n_users
        )));
    }

    let mut signal = Mat::zeros(n_users, n_antennas);
    for &n in &activity.active_set {
        let amplitude = cfg.powers[n].sqrt();
        let row = signal.row_mut(n);
        for (m, dst) in row.iter_mut().enumerate() {
            *dst = amplitude * channels.entries[(m, n)];
        }
    }

    let sigma = cfg.noise_var.sqrt();
    let noise = Mat::from_fn(code_len, n_antennas, |_, _| sigma * T::standard_normal(rng));

    // Accumulate in ascending user order, noise last, so the result is
    // bit-identical to the full product C * X + W (zero signal rows
    // contribute exactly zero).
    let mut received = Mat::zeros(code_len, n_antennas);
    for l in 0..code_len {
        let code_row = codes.entries.row(l);
        let out_row = received.row_mut(l);
        for &n in &activity.active_set {
            axpy(code_row[n], signal.row(n), out_row);
        }
    }
    received.add_assign(&noise);

    Ok(SlotData {
        received,
        signal,
        noise,
        activity: activity.clone(),
    })
}
