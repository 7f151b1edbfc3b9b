//! Closed-form upper bounds on the probability of support-recovery
//! failure, and the minimum code-length inequalities they imply.
//!
//! The tail bounds split the users of a slot into four classes: inactive
//! or active, with or without collected CSI. Each class carries a
//! sub-exponential parameter pair `(variance, scale)`; the bound is a
//! four-term exponential max over the populated classes, valid only while
//! every populated class satisfies `deviation / 2 > variance / scale`.
//! All logarithms are natural; code lengths below 16 are rejected so that
//! `ln ln L` stays above 1.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Minimum code length accepted by every formula here.
pub const MIN_CODE_LEN: usize = 16;

/// Search cap of the minimum-code-length solver.
pub const CODE_LEN_CAP: u64 = 1_000_000_000;

/// Inputs to the bound evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs<T> {
    /// Code length (L).
    pub code_len: usize,
    /// Number of antennas (M).
    pub n_antennas: usize,
    /// Total number of users (N).
    pub n_users: usize,
    /// Number of active users (K).
    pub n_active: usize,
    /// Users with collected CSI.
    pub known_users: usize,
    /// Active users with CSI.
    pub active_known: usize,
    /// Active users without CSI.
    pub active_unknown: usize,
    /// Smallest received power.
    pub p_min: T,
    /// Largest received power.
    pub p_max: T,
    /// Noise variance.
    pub noise_var: T,
    /// Target failure probability for the inequality solvers.
    pub target_pof: T,
}

impl<T: Scalar> BoundInputs<T> {
    /// Equal-power inputs with the expected CSI overlap
    /// `active_known = round(K * known / N)`.
    #[allow(clippy::too_many_arguments)]
    pub fn equal_power(
        code_len: usize,
        n_antennas: usize,
        n_users: usize,
        n_active: usize,
        known_users: usize,
        power: T,
        noise_var: T,
        target_pof: T,
    ) -> Result<Self> {
        let active_known = expected_active_known(n_active, known_users, n_users);
        let inputs = Self {
            code_len,
            n_antennas,
            n_users,
            n_active,
            known_users,
            active_known,
            active_unknown: n_active - active_known,
            p_min: power,
            p_max: power,
            noise_var,
            target_pof,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_active == 0 || self.n_active > self.n_users {
            return Err(Error::InvalidPopulations(format!(
                "n_active must satisfy 1 <= K <= N, got K={} N={}",
                self.n_active, self.n_users
            )));
        }
        if self.known_users > self.n_users {
            return Err(Error::InvalidPopulations(format!(
                "known_users {} exceeds n_users {}",
                self.known_users, self.n_users
            )));
        }
        if self.active_known + self.active_unknown != self.n_active {
            return Err(Error::InvalidPopulations(format!(
                "active split {} + {} does not sum to K = {}",
                self.active_known, self.active_unknown, self.n_active
            )));
        }
        if self.active_known > self.known_users {
            return Err(Error::InvalidPopulations(format!(
                "active_known {} exceeds known_users {}",
                self.active_known, self.known_users
            )));
        }
        if self.active_unknown > self.n_users - self.known_users {
            return Err(Error::InvalidPopulations(format!(
                "active_unknown {} exceeds the {} users without CSI",
                self.active_unknown,
                self.n_users - self.known_users
            )));
        }
        if self.p_min <= T::zero() || self.p_max < self.p_min {
            return Err(Error::InvalidPopulations(
                "powers must satisfy 0 < p_min <= p_max".into(),
            ));
        }
        if self.noise_var < T::zero() {
            return Err(Error::InvalidPopulations(
                "noise_var must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn equal_power_only(&self, what: &str) -> Result<()> {
        if self.p_min != self.p_max {
            return Err(Error::PowerControlRequired(format!(
                "{what} needs equal powers, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }
}

/// Expected number of active users with CSI under uniform activity.
pub fn expected_active_known(n_active: usize, known_users: usize, n_users: usize) -> usize {
    ((n_active as f64) * (known_users as f64) / (n_users as f64)).round() as usize
}

/// User class of one exponent term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserClass {
    InactiveNoCsi,
    ActiveNoCsi,
    InactiveWithCsi,
    ActiveWithCsi,
}

impl UserClass {
    pub const ALL: [UserClass; 4] = [
        UserClass::InactiveNoCsi,
        UserClass::ActiveNoCsi,
        UserClass::InactiveWithCsi,
        UserClass::ActiveWithCsi,
    ];

    pub fn label(self) -> &'static str {
        match self {
            UserClass::InactiveNoCsi => "inactive_no_csi",
            UserClass::ActiveNoCsi => "active_no_csi",
            UserClass::InactiveWithCsi => "inactive_with_csi",
            UserClass::ActiveWithCsi => "active_with_csi",
        }
    }
}

/// Sub-exponential pair of one user class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassParams<T> {
    /// Variance proxy (the squared sub-exponential width).
    pub variance: T,
    /// Scale (the sub-exponential slope the exponent divides by).
    pub scale: T,
}

/// The deviation scales and per-class sub-exponential parameters behind
/// the tail bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SubExpParams<T> {
    /// Deviation captured for users without CSI: `p_min (1 - 1/L)`.
    pub deviation_no_csi: T,
    /// Deviation captured for users with CSI: `p_min (3 - 1/L)`.
    pub deviation_with_csi: T,
    pub inactive_no_csi: ClassParams<T>,
    pub active_no_csi: ClassParams<T>,
    pub inactive_with_csi: ClassParams<T>,
    pub active_with_csi: ClassParams<T>,
}

impl<T: Scalar> SubExpParams<T> {
    pub fn class(&self, class: UserClass) -> ClassParams<T> {
        match class {
            UserClass::InactiveNoCsi => self.inactive_no_csi,
            UserClass::ActiveNoCsi => self.active_no_csi,
            UserClass::InactiveWithCsi => self.inactive_with_csi,
            UserClass::ActiveWithCsi => self.active_with_csi,
        }
    }
}

/// Validity of one class's tail condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermValidity {
    /// `deviation / 2 > variance / scale` holds.
    Holds,
    /// The condition fails; the exponential tail does not apply.
    Fails,
    /// The class has no members, so no condition is required.
    Empty,
}

/// Per-class validity flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityFlags {
    pub inactive_no_csi: TermValidity,
    pub active_no_csi: TermValidity,
    pub inactive_with_csi: TermValidity,
    pub active_with_csi: TermValidity,
}

impl ValidityFlags {
    pub fn all_hold(&self) -> bool {
        [
            self.inactive_no_csi,
            self.active_no_csi,
            self.inactive_with_csi,
            self.active_with_csi,
        ]
        .iter()
        .all(|v| *v != TermValidity::Fails)
    }

    pub fn class(&self, class: UserClass) -> TermValidity {
        match class {
            UserClass::InactiveNoCsi => self.inactive_no_csi,
            UserClass::ActiveNoCsi => self.active_no_csi,
            UserClass::InactiveWithCsi => self.inactive_with_csi,
            UserClass::ActiveWithCsi => self.active_with_csi,
        }
    }
}

/// Which expression produced the reported value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundBranch {
    /// The exponential tail expression (possibly clamped at 1).
    ExponentialTail,
    /// A validity condition failed; the trivial bound 1 is reported.
    ClampedTrivial,
}

/// An evaluated failure-probability bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<T> {
    /// Bound value, clamped to `[0, 1]`.
    pub value: T,
    pub branch: BoundBranch,
    /// Class whose exponent term attains the max, when the tail applies.
    pub dominant_term: Option<UserClass>,
    /// Tail-condition flags; absent for the large-antenna closed forms,
    /// which carry no such conditions.
    pub validity: Option<ValidityFlags>,
}

fn check_code_len(code_len: usize) -> Result<()> {
    if code_len < MIN_CODE_LEN {
        return Err(Error::LogLogDomain(code_len));
    }
    Ok(())
}

fn lnln<T: Scalar>(code_len: usize) -> T {
    T::from_count(code_len).ln().ln()
}

/// Sub-exponential parameters of the four user classes.
pub fn subexp_params<T: Scalar>(inputs: &BoundInputs<T>) -> Result<SubExpParams<T>> {
    inputs.validate()?;
    check_code_len(inputs.code_len)?;
    if inputs.n_active < 2 {
        return Err(Error::InvalidPopulations(
            "the tail parameterization needs n_active >= 2".into(),
        ));
    }
    let code_len = T::from_count(inputs.code_len);
    let antennas = T::from_count(inputs.n_antennas);
    let actives = T::from_count(inputs.n_active);
    let actives_m1 = actives - T::one();
    let ll: T = lnln(inputs.code_len);
    let p_max = inputs.p_max;
    let nv = inputs.noise_var;
    let c = |v: usize| T::from_count(v);

    let deviation_no_csi = inputs.p_min * (T::one() - code_len.recip());
    let deviation_with_csi = inputs.p_min * (c(3) - code_len.recip());

    let base = c(4) * ll;
    let base_m = c(16) * ll / antennas;
    let scale_nb = base
        .max(base_m)
        .max(c(4) * nv * code_len / (antennas * actives * p_max))
        * actives
        * p_max
        / code_len;
    let scale_ng = base
        .max(base_m)
        .max(c(4) * nv * code_len / (antennas * actives_m1 * p_max))
        * actives_m1
        * p_max
        / code_len;
    let scale_fb = base.max(base_m) * actives * p_max / code_len;
    let scale_fg = base.max(base_m) * actives_m1 * p_max / code_len;

    let l2 = code_len * code_len;
    let l3 = l2 * code_len;
    let var_nb = c(4) * (code_len - T::one()) * actives * p_max * p_max / l3
        + c(64) * actives * actives * p_max * p_max * ll * ll / (antennas * l2)
        + (c(4) * code_len * nv * nv + c(32) * nv * actives * p_max * ll)
            / (antennas * code_len);
    let var_ng = c(4) * (code_len - T::one()) * actives_m1 * p_max * p_max / l3
        + c(64) * actives_m1 * actives_m1 * p_max * p_max * ll * ll / (antennas * l2)
        + (c(4) * code_len * nv * nv
            + c(8) * code_len * nv * p_max
            + c(32) * nv * actives * p_max * ll)
            / (antennas * code_len)
        + (c(3) * p_max * p_max
            + c(48) * actives_m1 * actives_m1 * p_max * p_max * ll * ll / l2
            + c(24) * actives_m1 * p_max * ll / code_len)
            / antennas;
    let var_fb = c(4) * (code_len - T::one()) * actives * p_max * p_max / l3
        + c(64) * actives * actives * p_max * p_max * ll * ll / (antennas * l2)
        + (c(4) * code_len * nv * nv + c(96) * nv * actives * p_max * ll)
            / (antennas * code_len)
        + (nv * nv
            + c(48) * actives * actives * p_max * p_max * ll * ll / l2
            + c(8) * nv * actives * p_max * ll / code_len)
            / antennas;
    let var_fg = c(4) * (code_len - T::one()) * actives * p_max * p_max / l3
        + c(64) * actives_m1 * actives_m1 * p_max * p_max * ll * ll / (antennas * l2)
        + (c(12) * nv * nv
            + c(8) * nv * (c(15) * p_max + c(12) * actives_m1 * p_max * ll / code_len))
            / antennas
        + (c(105) * p_max * p_max
            + c(144) * actives_m1 * actives_m1 * p_max * p_max * ll * ll / l2
            + (c(360) * p_max * p_max + c(24) * nv) * actives_m1 * p_max * ll / code_len
            + c(3) * nv * nv
            + c(30) * p_max * nv)
            / antennas;

    Ok(SubExpParams {
        deviation_no_csi,
        deviation_with_csi,
        inactive_no_csi: ClassParams {
            variance: var_nb,
            scale: scale_nb,
        },
        active_no_csi: ClassParams {
            variance: var_ng,
            scale: scale_ng,
        },
        inactive_with_csi: ClassParams {
            variance: var_fb,
            scale: scale_fb,
        },
        active_with_csi: ClassParams {
            variance: var_fg,
            scale: scale_fg,
        },
    })
}

/// Class populations in the fixed `UserClass::ALL` order.
fn populations<T: Scalar>(inputs: &BoundInputs<T>) -> [usize; 4] {
    [
        inputs.n_users - inputs.known_users - inputs.active_unknown,
        inputs.active_unknown,
        inputs.known_users - inputs.active_known,
        inputs.active_known,
    ]
}

/// Deviation used per class: the opportunistic max-correlation detector
/// captures the larger deviation only for active users with CSI, the
/// two-threshold detector for every user with CSI.
fn class_deviation<T: Scalar>(params: &SubExpParams<T>, class: UserClass, otd: bool) -> T {
    match class {
        UserClass::InactiveNoCsi | UserClass::ActiveNoCsi => params.deviation_no_csi,
        UserClass::InactiveWithCsi => {
            if otd {
                params.deviation_with_csi
            } else {
                params.deviation_no_csi
            }
        }
        UserClass::ActiveWithCsi => params.deviation_with_csi,
    }
}

fn four_term_bound<T: Scalar>(inputs: &BoundInputs<T>, otd: bool) -> Result<BoundReport<T>> {
    let params = subexp_params(inputs)?;
    let pops = populations(inputs);
    let two = T::one() + T::one();

    let mut flags = [TermValidity::Empty; 4];
    for (i, class) in UserClass::ALL.iter().enumerate() {
        if pops[i] == 0 {
            continue;
        }
        let cp = params.class(*class);
        let deviation = class_deviation(&params, *class, otd);
        flags[i] = if deviation / two > cp.variance / cp.scale {
            TermValidity::Holds
        } else {
            TermValidity::Fails
        };
    }
    let validity = ValidityFlags {
        inactive_no_csi: flags[0],
        active_no_csi: flags[1],
        inactive_with_csi: flags[2],
        active_with_csi: flags[3],
    };

    if !validity.all_hold() {
        return Ok(BoundReport {
            value: T::one(),
            branch: BoundBranch::ClampedTrivial,
            dominant_term: None,
            validity: Some(validity),
        });
    }

    let mut best: Option<(T, UserClass)> = None;
    for (i, class) in UserClass::ALL.iter().enumerate() {
        if pops[i] == 0 {
            continue;
        }
        let cp = params.class(*class);
        let deviation = class_deviation(&params, *class, otd);
        let exponent = -deviation / (two * cp.scale) + T::from_count(pops[i]).ln();
        match best {
            Some((current, _)) if exponent <= current => {}
            _ => best = Some((exponent, *class)),
        }
    }
    let (exponent, dominant) = best.expect("at least one class is populated");
    let value = (T::from_count(4) * exponent.exp()).min(T::one());
    Ok(BoundReport {
        value,
        branch: BoundBranch::ExponentialTail,
        dominant_term: Some(dominant),
        validity: Some(validity),
    })
}

/// Tail bound on the failure probability of the opportunistic
/// max-correlation detector.
pub fn omc_pof_bound<T: Scalar>(inputs: &BoundInputs<T>) -> Result<BoundReport<T>> {
    four_term_bound(inputs, false)
}

/// Tail bound on the failure probability of the two-threshold detector.
/// Requires equal powers.
pub fn otd_pof_bound<T: Scalar>(inputs: &BoundInputs<T>) -> Result<BoundReport<T>> {
    inputs.equal_power_only("the two-threshold bound")?;
    four_term_bound(inputs, true)
}

/// Large-antenna closed form for the max-correlation detector:
/// `4 max(N - known, known) exp(-p_min (L-1) / (8 K p_max ln ln L))`.
pub fn omc_pof_bound_large_m<T: Scalar>(inputs: &BoundInputs<T>) -> Result<BoundReport<T>> {
    inputs.validate()?;
    check_code_len(inputs.code_len)?;
    let ll: T = lnln(inputs.code_len);
    let code_len = T::from_count(inputs.code_len);
    let unknown = inputs.n_users - inputs.known_users;
    let exponent = -inputs.p_min * (code_len - T::one())
        / (T::from_count(8) * T::from_count(inputs.n_active) * inputs.p_max * ll);
    let prefactor = T::from_count(unknown.max(inputs.known_users));
    let value = (T::from_count(4) * prefactor * exponent.exp()).min(T::one());
    let dominant = if unknown >= inputs.known_users {
        UserClass::InactiveNoCsi
    } else {
        UserClass::InactiveWithCsi
    };
    Ok(BoundReport {
        value,
        branch: BoundBranch::ExponentialTail,
        dominant_term: Some(dominant),
        validity: None,
    })
}

/// Large-antenna closed form for the two-threshold detector:
/// `4 max((N - known) exp(-(L-1)/(8 K lnln L)), known exp(-(3L-1)/(8 K lnln L)))`.
pub fn otd_pof_bound_large_m<T: Scalar>(inputs: &BoundInputs<T>) -> Result<BoundReport<T>> {
    inputs.validate()?;
    inputs.equal_power_only("the two-threshold bound")?;
    check_code_len(inputs.code_len)?;
    let ll: T = lnln(inputs.code_len);
    let code_len = T::from_count(inputs.code_len);
    let denom = T::from_count(8) * T::from_count(inputs.n_active) * ll;
    let unknown = T::from_count(inputs.n_users - inputs.known_users);
    let known = T::from_count(inputs.known_users);
    let no_csi_term = unknown * (-(code_len - T::one()) / denom).exp();
    let csi_term = known * (-(T::from_count(3) * code_len - T::one()) / denom).exp();
    let (max_term, dominant) = if no_csi_term >= csi_term {
        (no_csi_term, UserClass::InactiveNoCsi)
    } else {
        (csi_term, UserClass::InactiveWithCsi)
    };
    Ok(BoundReport {
        value: (T::from_count(4) * max_term).min(T::one()),
        branch: BoundBranch::ExponentialTail,
        dominant_term: Some(dominant),
        validity: None,
    })
}

/// Which measurement inequality to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    /// Opportunistic max correlation, partial CSI.
    Omc,
    /// Ordinary thresholding, no CSI.
    Plain,
    /// Thresholding with full CSI.
    FullCsi,
    /// Two-threshold detector, few users with CSI.
    OtdSmallLambda,
    /// Two-threshold detector, most users with CSI.
    OtdLargeLambda,
}

impl MeasurementKind {
    pub const ALL: [MeasurementKind; 5] = [
        MeasurementKind::Omc,
        MeasurementKind::Plain,
        MeasurementKind::FullCsi,
        MeasurementKind::OtdSmallLambda,
        MeasurementKind::OtdLargeLambda,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MeasurementKind::Omc => "omc",
            MeasurementKind::Plain => "plain",
            MeasurementKind::FullCsi => "full-csi",
            MeasurementKind::OtdSmallLambda => "otd-small-lambda",
            MeasurementKind::OtdLargeLambda => "otd-large-lambda",
        }
    }

    /// Whether the left-hand side is `(3L-1)/lnln L` instead of
    /// `(L-1)/lnln L`.
    fn steep_lhs(self) -> bool {
        matches!(
            self,
            MeasurementKind::FullCsi | MeasurementKind::OtdLargeLambda
        )
    }
}

fn inequality_rhs<T: Scalar>(kind: MeasurementKind, inputs: &BoundInputs<T>) -> Result<T> {
    inputs.validate()?;
    if inputs.target_pof <= T::zero() || inputs.target_pof >= T::one() {
        return Err(Error::Config(format!(
            "target_pof must lie in (0, 1), got {}",
            inputs.target_pof
        )));
    }
    let delta = inputs.target_pof;
    let actives = T::from_count(inputs.n_active);
    let power_ratio = T::from_count(8) * actives * inputs.p_max / inputs.p_min;
    let unknown = inputs.n_users - inputs.known_users;
    Ok(match kind {
        MeasurementKind::Omc => {
            let pop = T::from_count(inputs.known_users.max(unknown));
            power_ratio * (T::from_count(4) * pop / delta).ln()
        }
        MeasurementKind::Plain | MeasurementKind::FullCsi => {
            let pop = T::from_count(inputs.n_users - inputs.n_active);
            power_ratio * (T::from_count(2) * pop / delta).ln()
        }
        MeasurementKind::OtdSmallLambda => {
            inputs.equal_power_only("the two-threshold inequality")?;
            T::from_count(8) * actives * (T::from_count(4) * T::from_count(unknown) / delta).ln()
        }
        MeasurementKind::OtdLargeLambda => {
            inputs.equal_power_only("the two-threshold inequality")?;
            T::from_count(8)
                * actives
                * (T::from_count(4) * T::from_count(inputs.known_users) / delta).ln()
        }
    })
}

/// Whether code length `l` satisfies the selected measurement inequality.
pub fn measurement_predicate<T: Scalar>(
    kind: MeasurementKind,
    inputs: &BoundInputs<T>,
    code_len: u64,
) -> Result<bool> {
    if code_len < MIN_CODE_LEN as u64 {
        return Ok(false);
    }
    let rhs = inequality_rhs(kind, inputs)?;
    let l = T::from_u64(code_len).expect("code length representable");
    let numerator = if kind.steep_lhs() {
        T::from_count(3) * l - T::one()
    } else {
        l - T::one()
    };
    Ok(numerator / l.ln().ln() >= rhs)
}

/// Smallest code length `L >= 16` meeting the selected inequality.
///
/// The left-hand sides are increasing in `L` on the accepted domain, so
/// an exponential ramp followed by a binary search finds the boundary.
/// Fails with a cap error if nothing at or below [`CODE_LEN_CAP`] works.
pub fn solve_measurement_inequality<T: Scalar>(
    kind: MeasurementKind,
    inputs: &BoundInputs<T>,
) -> Result<u64> {
    let floor = MIN_CODE_LEN as u64;
    if measurement_predicate(kind, inputs, floor)? {
        return Ok(floor);
    }
    // Ramp up keeping `lo` at the last code length known to fail.
    let mut lo = floor;
    let mut hi = floor;
    loop {
        hi = (hi * 2).min(CODE_LEN_CAP);
        if measurement_predicate(kind, inputs, hi)? {
            break;
        }
        if hi == CODE_LEN_CAP {
            return Err(Error::CapExceeded(CODE_LEN_CAP));
        }
        lo = hi;
    }
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if measurement_predicate(kind, inputs, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
