//! Random killing times.
//!
//! When the gaps between killings are i.i.d. draws from a law `mu_beta`, the
//! populations at killing times form a two-type branching process in a
//! random environment. Its fate is decided by the top Lyapunov exponent
//!
//! ```text
//!     delta = lim n^-1 log || M(T_n) ... M(T_1) ||,   ||M|| = max_j sum_i |M_ij|
//! ```
//!
//! `delta <= 0` gives extinction for almost every environment, `delta > 0`
//! survival with positive probability. With `p = 1` only persistent bacteria
//! carry over, the process is single-type, and `delta = E[log r_bar(T_1)]`
//! exactly.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::MeanField;
use crate::model::ModelParams;
use crate::rng::stream;

/// Default lower bound on custom atoms.
pub const DEFAULT_T_MIN: f64 = 1e-6;
/// Countable supports are truncated once the remaining mass drops below this.
pub const TAIL_MASS: f64 = 1e-12;
/// Two-sided 99% normal quantile used for verdicts.
pub const Z_99: f64 = 2.576;

/// A law of the time between two killings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilySpec", into = "FamilySpec")]
pub enum EnvFamily {
    /// Geometric on `{1, 2, 3, ...}` with success probability `1/beta`
    /// (mean `beta`, needs `beta >= 1`).
    Geometric { beta: f64 },
    /// Exponential with mean `beta`.
    Exponential { beta: f64 },
    /// Half-half mixture of two atoms: `{beta/10, 3 max(beta, 1)}` for
    /// `beta <= 15`, `{beta - 13.5, beta - 12}` above.
    TwoPoint { beta: f64 },
    /// Finitely many atoms `(time, weight)`.
    Custom { atoms: Vec<(f64, f64)>, t_min: f64 },
}

impl EnvFamily {
    pub fn geometric(beta: f64) -> Result<Self> {
        EnvFamily::Geometric { beta }.checked()
    }

    pub fn exponential(beta: f64) -> Result<Self> {
        EnvFamily::Exponential { beta }.checked()
    }

    pub fn two_point(beta: f64) -> Result<Self> {
        EnvFamily::TwoPoint { beta }.checked()
    }

    pub fn custom(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::custom_with_min(atoms, DEFAULT_T_MIN)
    }

    pub fn custom_with_min(mut atoms: Vec<(f64, f64)>, t_min: f64) -> Result<Self> {
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        EnvFamily::Custom { atoms, t_min }.checked()
    }

    /// A point mass at `t`.
    pub fn constant(t: f64) -> Result<Self> {
        Self::custom(vec![(t, 1.0)])
    }

    fn checked(self) -> Result<Self> {
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("{v} must be finite and positive")))
            }
        };
        match &self {
            EnvFamily::Geometric { beta } => {
                if !(beta.is_finite() && *beta >= 1.0) {
                    return Err(Error::invalid("beta", format!("{beta}: geometric mean must be >= 1")));
                }
            }
            EnvFamily::Exponential { beta } | EnvFamily::TwoPoint { beta } => positive("beta", *beta)?,
            EnvFamily::Custom { atoms, t_min } => {
                positive("t_min", *t_min)?;
                if atoms.is_empty() {
                    return Err(Error::invalid("atoms", "need at least one atom"));
                }
                for &(t, w) in atoms {
                    if !(t.is_finite() && t >= *t_min) {
                        return Err(Error::invalid("atoms", format!("time {t} below t_min {t_min}")));
                    }
                    positive("atoms", w)?;
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("atoms", format!("weights sum to {total}, not 1")));
                }
            }
        }
        Ok(self)
    }

    /// The two atoms of the two-point family, low first.
    fn two_point_atoms(beta: f64) -> [f64; 2] {
        if beta <= 15.0 {
            [beta / 10.0, 3.0 * beta.max(1.0)]
        } else {
            [beta - 13.5, beta - 12.0]
        }
    }

    /// Exact mean.
    pub fn mean(&self) -> f64 {
        match self {
            EnvFamily::Geometric { beta } | EnvFamily::Exponential { beta } => *beta,
            EnvFamily::TwoPoint { beta } => {
                let [lo, hi] = Self::two_point_atoms(*beta);
                0.5 * (lo + hi)
            }
            EnvFamily::Custom { atoms, .. } => atoms.iter().map(|(t, w)| t * w).sum(),
        }
    }

    /// Quantile function; nondecreasing in `u`. Sampling inverts it, so two
    /// members of a family driven by the same uniforms are coupled.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            EnvFamily::Geometric { beta } => {
                if *beta == 1.0 {
                    return 1.0;
                }
                let k = ((-u).ln_1p() / (-1.0 / beta).ln_1p()).ceil();
                k.max(1.0)
            }
            EnvFamily::Exponential { beta } => -beta * (-u).ln_1p(),
            EnvFamily::TwoPoint { beta } => {
                let [lo, hi] = Self::two_point_atoms(*beta);
                if u < 0.5 {
                    lo
                } else {
                    hi
                }
            }
            EnvFamily::Custom { atoms, .. } => {
                let mut acc = 0.0;
                for &(t, w) in atoms {
                    acc += w;
                    if u < acc {
                        return t;
                    }
                }
                atoms[atoms.len() - 1].0
            }
        }
    }

    /// `mu((0, t])`
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            EnvFamily::Geometric { beta } => 1.0 - (1.0 - 1.0 / beta).powf(t.floor()),
            EnvFamily::Exponential { beta } => -(-t / beta).exp_m1(),
            _ => self
                .atoms()
                .unwrap_or_default()
                .iter()
                .filter(|a| a.0 <= t)
                .map(|a| a.1)
                .sum(),
        }
    }

    /// `integral over (0, t0] of t mu(dt)`
    pub fn partial_mean(&self, t0: f64) -> f64 {
        match self {
            EnvFamily::Exponential { beta } => beta - (t0 + beta) * (-t0 / beta).exp(),
            _ => self
                .atoms()
                .unwrap_or_default()
                .iter()
                .filter(|a| a.0 <= t0)
                .map(|a| a.0 * a.1)
                .sum(),
        }
    }

    /// Atoms `(time, weight)` of a discrete family, low first. Geometric
    /// supports are cut once the tail mass is below [`TAIL_MASS`].
    /// `None` for the exponential family.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            EnvFamily::Exponential { .. } => None,
            EnvFamily::Geometric { beta } => {
                let q = 1.0 / beta;
                let mut out = Vec::new();
                let mut tail = 1.0;
                let mut k = 1.0;
                while tail >= TAIL_MASS {
                    let w = tail * q;
                    out.push((k, w));
                    tail *= 1.0 - q;
                    k += 1.0;
                }
                Some(out)
            }
            EnvFamily::TwoPoint { beta } => {
                let [lo, hi] = Self::two_point_atoms(*beta);
                Some(vec![(lo, 0.5), (hi, 0.5)])
            }
            EnvFamily::Custom { atoms, .. } => Some(atoms.clone()),
        }
    }

    /// Smallest possible gap, when bounded away from zero.
    pub fn min_time(&self) -> Option<f64> {
        match self {
            EnvFamily::Exponential { .. } => None,
            EnvFamily::Geometric { .. } => Some(1.0),
            EnvFamily::TwoPoint { beta } => Some(Self::two_point_atoms(*beta)[0]),
            EnvFamily::Custom { atoms, .. } => Some(atoms[0].0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// `n` i.i.d. gaps.
pub fn sample_times<R: Rng + ?Sized>(family: &EnvFamily, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| family.sample(rng)).collect()
}

pub fn family_mean(family: &EnvFamily) -> f64 {
    family.mean()
}

/// Configuration-file form of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Geometric,
    Exponential,
    Twopoint,
    Custom,
}

impl TryFrom<FamilySpec> for EnvFamily {
    type Error = Error;

    fn try_from(spec: FamilySpec) -> Result<Self> {
        let beta = || spec.beta.ok_or_else(|| Error::invalid("beta", "missing"));
        match spec.family {
            FamilyName::Geometric => EnvFamily::geometric(beta()?),
            FamilyName::Exponential => EnvFamily::exponential(beta()?),
            FamilyName::Twopoint => EnvFamily::two_point(beta()?),
            FamilyName::Custom => {
                let atoms = spec.atoms.ok_or_else(|| Error::invalid("atoms", "missing"))?;
                EnvFamily::custom_with_min(atoms, spec.t_min.unwrap_or(DEFAULT_T_MIN))
            }
        }
    }
}

impl From<EnvFamily> for FamilySpec {
    fn from(f: EnvFamily) -> Self {
        let with_beta = |family, beta| FamilySpec {
            family,
            beta: Some(beta),
            atoms: None,
            t_min: None,
        };
        match f {
            EnvFamily::Geometric { beta } => with_beta(FamilyName::Geometric, beta),
            EnvFamily::Exponential { beta } => with_beta(FamilyName::Exponential, beta),
            EnvFamily::TwoPoint { beta } => with_beta(FamilyName::Twopoint, beta),
            EnvFamily::Custom { atoms, t_min } => FamilySpec {
                family: FamilyName::Custom,
                beta: None,
                atoms: Some(atoms),
                t_min: Some(t_min),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LyapunovVerdict {
    Survive,
    Extinct,
    Inconclusive,
}

impl LyapunovVerdict {
    /// Sign test with a `z * std_err` band.
    pub fn from_estimate(delta: f64, std_err: f64, z: f64) -> Self {
        if delta - z * std_err > 0.0 {
            LyapunovVerdict::Survive
        } else if delta + z * std_err < 0.0 {
            LyapunovVerdict::Extinct
        } else {
            LyapunovVerdict::Inconclusive
        }
    }
}

impl std::fmt::Display for LyapunovVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub epochs: usize,
    pub replicates: usize,
    /// Leading epochs excluded from the growth-rate average; defaults to
    /// `epochs / 10`.
    pub burn_in: Option<usize>,
    /// Renormalize the running product every this many epochs.
    pub renorm_every: usize,
    pub master_seed: u64,
    pub z: f64,
}

impl LyapunovConfig {
    pub fn new(epochs: usize, replicates: usize, master_seed: u64) -> Self {
        LyapunovConfig {
            epochs,
            replicates,
            burn_in: None,
            renorm_every: 1,
            master_seed,
            z: Z_99,
        }
    }

    fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.epochs / 10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub delta_hat: f64,
    pub std_err: f64,
    pub epochs: usize,
    pub burn_in: usize,
    pub replicates: usize,
    pub verdict: LyapunovVerdict,
}

/// Max column sum.
fn col_norm(m: &[[f64; 2]; 2]) -> f64 {
    (m[0][0].abs() + m[1][0].abs()).max(m[0][1].abs() + m[1][1].abs())
}

fn mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Growth rate of one environment realization: `log ||M_n ... M_1||`
/// increments after the burn-in, averaged per epoch.
fn replicate_rate(mf: &MeanField, family: &EnvFamily, cfg: &LyapunovConfig, index: u64) -> f64 {
    let mut rng = stream(cfg.master_seed, index);
    let x_plus = mf.spectral().x_plus;
    let burn_in = cfg.burn_in();
    let every = cfg.renorm_every.max(1);
    let mut prod = [[1.0, 0.0], [0.0, 1.0]];
    let mut log_acc = 0.0;
    let mut log_at_burn = 0.0;
    for k in 1..=cfg.epochs {
        let t = family.sample(&mut rng);
        // M(t) = e^{t x+} * scaled
        log_acc += t * x_plus;
        prod = mul(&mf.scaled_moment(t), &prod);
        if k % every == 0 || k == burn_in || k == cfg.epochs {
            let nrm = col_norm(&prod);
            log_acc += nrm.ln();
            for v in prod.iter_mut().flatten() {
                *v /= nrm;
            }
        }
        if k == burn_in {
            log_at_burn = log_acc;
        }
    }
    (log_acc - log_at_burn) / (cfg.epochs - burn_in) as f64
}

/// Estimate the Lyapunov exponent with default burn-in and renormalization.
pub fn lyapunov(
    params: &ModelParams,
    family: &EnvFamily,
    epochs: usize,
    replicates: usize,
    master_seed: u64,
) -> Result<LyapunovEstimate> {
    lyapunov_with(params, family, &LyapunovConfig::new(epochs, replicates, master_seed))
}

/// Estimate the Lyapunov exponent by renormalized products of moment
/// matrices, one independent environment per replicate.
pub fn lyapunov_with(
    params: &ModelParams,
    family: &EnvFamily,
    cfg: &LyapunovConfig,
) -> Result<LyapunovEstimate> {
    if params.a() == 0.0 && params.p() == 1.0 {
        return Err(Error::DegenerateProduct);
    }
    if cfg.replicates < 2 {
        return Err(Error::invalid("replicates", "need at least 2"));
    }
    if cfg.burn_in() >= cfg.epochs {
        return Err(Error::invalid("epochs", "must exceed the burn-in"));
    }
    let mf = MeanField::new(params)?;
    let rates: Vec<f64> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|i| replicate_rate(&mf, family, cfg, i))
        .collect();
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_err = (var / n).sqrt();
    Ok(LyapunovEstimate {
        delta_hat: mean,
        std_err,
        epochs: cfg.epochs,
        burn_in: cfg.burn_in(),
        replicates: cfg.replicates,
        verdict: LyapunovVerdict::from_estimate(mean, std_err, cfg.z),
    })
}

/// `E[log r_bar(T_1)]` for `p = 1` and a discrete family: the exact
/// single-type criterion (positive means survival).
pub fn exact_log_mean(params: &ModelParams, family: &EnvFamily) -> Result<f64> {
    if params.p() < 1.0 {
        return Err(Error::NotApplicable("exact criterion needs p = 1; use lyapunov"));
    }
    if params.a() == 0.0 {
        return Err(Error::NotApplicable("exact criterion needs a > 0"));
    }
    let atoms = family
        .atoms()
        .ok_or(Error::NotApplicable("exact criterion needs a discrete family"))?;
    let mf = MeanField::new(params)?;
    Ok(atoms.iter().map(|&(t, w)| w * mf.log_r_bar(t)).sum())
}

/// One-parameter families for threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Geometric,
    Exponential,
    /// Constant gap equal to `beta`.
    Atom,
}

impl EnvKind {
    pub fn at(self, beta: f64) -> Result<EnvFamily> {
        match self {
            EnvKind::Geometric => EnvFamily::geometric(beta),
            EnvKind::Exponential => EnvFamily::exponential(beta),
            EnvKind::Atom => EnvFamily::constant(beta),
        }
    }

    fn is_discrete(self) -> bool {
        !matches!(self, EnvKind::Exponential)
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(EnvKind::Geometric),
            "exponential" => Ok(EnvKind::Exponential),
            "atom" => Ok(EnvKind::Atom),
            _ => Err(Error::invalid("family", format!("`{s}` cannot be searched over beta"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub epochs: usize,
    pub max_epochs: usize,
    pub replicates: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionMethod {
    Exact,
    Lyapunov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaBracket {
    /// Largest probed `beta` judged extinct.
    pub lo: f64,
    /// Smallest probed `beta` judged surviving.
    pub hi: f64,
    /// False when an inconclusive probe stopped the search early.
    pub converged: bool,
    pub evaluations: usize,
    pub method: CriterionMethod,
}

/// Bracket the critical `beta` separating extinction from survival.
///
/// With `p = 1` and a discrete family the exact criterion decides each
/// probe; otherwise the Lyapunov estimate does, doubling its epochs up to
/// `max_epochs` while the verdict is inconclusive. An inconclusive probe
/// ends the search with the current (wider) bracket.
pub fn beta_critical(
    params: &ModelParams,
    kind: EnvKind,
    search: &BetaSearch,
) -> Result<BetaBracket> {
    if !(search.lo < search.hi) || !(search.tol > 0.0) {
        return Err(Error::invalid("range", "need lo < hi and tol > 0"));
    }
    if !params.is_nontrivial() {
        return Err(Error::TrivialExtinction {
            reason: "a + 1 - p = 0",
        });
    }
    MeanField::new(params)?;
    let method = if params.p() == 1.0 && kind.is_discrete() {
        CriterionMethod::Exact
    } else {
        CriterionMethod::Lyapunov
    };
    let mut evaluations = 0;
    let mut judge = |beta: f64| -> Result<LyapunovVerdict> {
        evaluations += 1;
        let family = kind.at(beta)?;
        if method == CriterionMethod::Exact {
            let v = exact_log_mean(params, &family)?;
            return Ok(if v > 0.0 {
                LyapunovVerdict::Survive
            } else {
                LyapunovVerdict::Extinct
            });
        }
        let mut epochs = search.epochs;
        loop {
            let cfg = LyapunovConfig::new(epochs, search.replicates, search.master_seed);
            let est = lyapunov_with(params, &family, &cfg)?;
            if est.verdict != LyapunovVerdict::Inconclusive || epochs * 2 > search.max_epochs {
                return Ok(est.verdict);
            }
            epochs *= 2;
        }
    };

    let v_lo = judge(search.lo)?;
    let v_hi = judge(search.hi)?;
    if v_lo != LyapunovVerdict::Extinct || v_hi != LyapunovVerdict::Survive {
        return Err(Error::NoSignChange {
            lo: search.lo,
            hi: search.hi,
            lo_verdict: v_lo.to_string(),
            hi_verdict: v_hi.to_string(),
        });
    }
    let (mut lo, mut hi) = (search.lo, search.hi);
    let mut converged = true;
    while hi - lo > search.tol {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        match judge(mid)? {
            LyapunovVerdict::Extinct => lo = mid,
            LyapunovVerdict::Survive => hi = mid,
            LyapunovVerdict::Inconclusive => {
                converged = false;
                break;
            }
        }
    }
    Ok(BetaBracket {
        lo,
        hi,
        converged,
        evaluations,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::{classify, critical_time, Verdict};
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn example_one() -> ModelParams {
        let s = 21f64.sqrt();
        ModelParams::new((s + 3.0) / 4.0, 0.5, (s - 3.0) / 4.0, 0.5, 0.5, 1.0).unwrap()
    }

    fn r_bar_closed(t: f64) -> f64 {
        let s = 21f64.sqrt();
        t.exp() * (5.0 - s) / 8.0 + (-t).exp() * (3.0 + s) / 8.0
    }

    #[test]
    fn single_atom_draws_are_constant() {
        let f = EnvFamily::constant(2.5).unwrap();
        let mut rng = stream(1, 0);
        assert!(sample_times(&f, 100, &mut rng).iter().all(|&t| t == 2.5));
    }

    #[test]
    fn geometric_sample_mean() {
        let f = EnvFamily::geometric(4.0).unwrap();
        let mut rng = stream(2, 0);
        let n = 1_000_000;
        let draws = sample_times(&f, n, &mut rng);
        assert!(draws.iter().all(|&t| t >= 1.0 && t.fract() == 0.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sigma = (4.0f64 * 3.0).sqrt() / 1e3;
        assert!((mean - 4.0).abs() < 4.0 * sigma, "mean={mean}");
    }

    #[test]
    fn two_point_at_one() {
        let f = EnvFamily::two_point(1.0).unwrap();
        let mut rng = stream(3, 0);
        let n = 100_000;
        let draws = sample_times(&f, n, &mut rng);
        assert!(draws.iter().all(|&t| t == 0.1 || t == 3.0));
        let low = draws.iter().filter(|&&t| t == 0.1).count() as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((low - 0.5).abs() < 4.0 * sigma);
    }

    #[test]
    fn family_means() {
        assert_eq!(EnvFamily::geometric(7.0).unwrap().mean(), 7.0);
        assert_eq!(EnvFamily::exponential(0.3).unwrap().mean(), 0.3);
        assert_relative_eq!(EnvFamily::two_point(1.0).unwrap().mean(), 1.55);
        assert_eq!(EnvFamily::custom(vec![(1.0, 0.5), (3.0, 0.5)]).unwrap().mean(), 2.0);
        // truncated geometric series reproduces the mean
        let atoms = EnvFamily::geometric(5.0).unwrap().atoms().unwrap();
        let m: f64 = atoms.iter().map(|a| a.0 * a.1).sum();
        assert!((m - 5.0).abs() < 1e-9);
    }

    #[test]
    fn two_point_branches() {
        assert_eq!(EnvFamily::two_point(16.5).unwrap().atoms().unwrap(), vec![(3.0, 0.5), (4.5, 0.5)]);
        assert_eq!(EnvFamily::two_point(0.5).unwrap().atoms().unwrap(), vec![(0.05, 0.5), (3.0, 0.5)]);
        assert_eq!(EnvFamily::two_point(15.0).unwrap().atoms().unwrap(), vec![(1.5, 0.5), (45.0, 0.5)]);
    }

    #[test]
    fn family_validation() {
        assert!(EnvFamily::geometric(0.5).is_err());
        assert!(EnvFamily::exponential(0.0).is_err());
        assert!(EnvFamily::custom(vec![(1.0, 0.5)]).is_err());
        assert!(EnvFamily::custom(vec![(0.0, 1.0)]).is_err());
        assert!(EnvFamily::custom(vec![]).is_err());
        assert!(EnvFamily::custom_with_min(vec![(0.5, 1.0)], 1.0).is_err());
    }

    #[test]
    fn family_json() {
        let f: EnvFamily = serde_json::from_str(r#"{"family":"geometric","beta":4}"#).unwrap();
        assert_eq!(f, EnvFamily::Geometric { beta: 4.0 });
        let f: EnvFamily =
            serde_json::from_str(r#"{"family":"custom","atoms":[[3,0.5],[1,0.5]]}"#).unwrap();
        assert_eq!(f.atoms().unwrap()[0], (1.0, 0.5));
        assert!(serde_json::from_str::<EnvFamily>(r#"{"family":"geometric"}"#).is_err());
        assert!(serde_json::from_str::<EnvFamily>(r#"{"family":"geometric","beta":2,"x":1}"#).is_err());
        let back: EnvFamily = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn exact_log_mean_example_one() {
        let m = example_one();
        let v = exact_log_mean(&m, &EnvFamily::two_point(16.5).unwrap()).unwrap();
        let expect = 0.5 * (r_bar_closed(3.0).ln() + r_bar_closed(4.5).ln());
        assert_relative_eq!(v, expect, max_relative = 1e-12);
        // half of (0.0909 + 1.5491)
        assert!((v - 0.8200).abs() < 1e-4, "{v}");
        let v = exact_log_mean(&m, &EnvFamily::two_point(15.0001).unwrap()).unwrap();
        assert!((v + 0.359).abs() < 1e-3, "{v}");
        let tc = critical_time(&m, 1e-12).unwrap().t_c;
        let v = exact_log_mean(&m, &EnvFamily::constant(tc).unwrap()).unwrap();
        assert!(v.abs() < 1e-11);
    }

    #[test]
    fn exact_log_mean_reported_values_for_small_and_first_branch_beta() {
        // Computed signs, reported as they are.
        let m = example_one();
        let at_half = exact_log_mean(&m, &EnvFamily::two_point(0.5).unwrap()).unwrap();
        assert!((at_half - 0.023).abs() < 1e-3, "{at_half}");
        let at_15 = exact_log_mean(&m, &EnvFamily::two_point(15.0).unwrap()).unwrap();
        assert!((at_15 - 20.6).abs() < 0.1, "{at_15}");
    }

    #[test]
    fn exact_log_mean_not_applicable() {
        let m = example_one().with_p(0.5).unwrap();
        assert!(matches!(
            exact_log_mean(&m, &EnvFamily::constant(1.0).unwrap()),
            Err(Error::NotApplicable(_))
        ));
        assert!(matches!(
            exact_log_mean(&example_one(), &EnvFamily::exponential(1.0).unwrap()),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn constant_environment_reduces_to_perron_root() {
        let m = example_one().with_p(0.6).unwrap();
        for t in [0.5, 2.0, 6.0] {
            let est = lyapunov(&m, &EnvFamily::constant(t).unwrap(), 2_000, 4, 1).unwrap();
            let gamma = MeanField::new(&m).unwrap().moment_matrix(t).unwrap().gamma_plus;
            assert!((est.delta_hat - gamma.ln()).abs() < 1e-10, "t={t}");
            let expect = match classify(&m, t).unwrap().verdict {
                Verdict::PositiveSurvival => LyapunovVerdict::Survive,
                Verdict::AlmostSureExtinction => LyapunovVerdict::Extinct,
            };
            assert_eq!(est.verdict, expect);
        }
    }

    #[test]
    fn no_killing_rate_is_x_plus_times_mean() {
        let m = example_one().with_p(0.0).unwrap();
        for f in [EnvFamily::exponential(0.7).unwrap(), EnvFamily::geometric(2.0).unwrap()] {
            let est = lyapunov(&m, &f, 5_000, 32, 9).unwrap();
            let expect = MeanField::new(&m).unwrap().spectral().x_plus * f.mean();
            assert!((est.delta_hat - expect).abs() <= 2.0 * est.std_err.max(1e-12) + 1e-9,
                "{} vs {expect} (se {})", est.delta_hat, est.std_err);
        }
    }

    #[test]
    fn certain_kill_matches_exact_criterion() {
        let m = example_one();
        for f in [EnvFamily::two_point(1.0).unwrap(), EnvFamily::geometric(3.0).unwrap()] {
            let est = lyapunov(&m, &f, 10_000, 32, 5).unwrap();
            let exact = exact_log_mean(&m, &f).unwrap();
            assert!((est.delta_hat - exact).abs() <= 2.0 * est.std_err, "{} vs {exact}", est.delta_hat);
        }
    }

    #[test]
    fn renormalization_cadence_does_not_matter() {
        let m = example_one().with_p(0.7).unwrap();
        let f = EnvFamily::exponential(1.5).unwrap();
        let mut every = LyapunovConfig::new(3_000, 4, 11);
        let a = lyapunov_with(&m, &f, &every).unwrap();
        every.renorm_every = 16;
        let b = lyapunov_with(&m, &f, &every).unwrap();
        assert!((a.delta_hat - b.delta_hat).abs() < 1e-10);
    }

    #[test]
    fn degenerate_product_is_an_error() {
        let m = ModelParams::new(1.0, 0.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(
            lyapunov(&m, &EnvFamily::constant(1.0).unwrap(), 100, 2, 0),
            Err(Error::DegenerateProduct)
        );
    }

    #[test]
    fn lyapunov_is_reproducible() {
        let m = example_one().with_p(0.5).unwrap();
        let f = EnvFamily::exponential(2.0).unwrap();
        assert_eq!(lyapunov(&m, &f, 1_000, 8, 3).unwrap(), lyapunov(&m, &f, 1_000, 8, 3).unwrap());
    }

    #[test]
    fn atom_family_bracket_contains_t_c() {
        let m = example_one();
        let search = BetaSearch {
            lo: 1.0,
            hi: 5.0,
            tol: 1e-6,
            epochs: 1_000,
            max_epochs: 8_000,
            replicates: 8,
            master_seed: 1,
        };
        let b = beta_critical(&m, EnvKind::Atom, &search).unwrap();
        let tc = critical_time(&m, 1e-12).unwrap().t_c;
        assert_eq!(b.method, CriterionMethod::Exact);
        assert!(b.lo <= tc && tc <= b.hi && b.hi - b.lo <= 1e-6, "{b:?}");
    }

    /// Exact series oracle: sum_k (1/beta)(1 - 1/beta)^(k-1) log r_bar(k).
    fn geometric_series(beta: f64) -> f64 {
        let q = 1.0 / beta;
        let mut sum = 0.0;
        let mut tail = 1.0;
        let mut k = 1.0;
        while tail >= 1e-12 {
            sum += tail * q * r_bar_closed(k).ln();
            tail *= 1.0 - q;
            k += 1.0;
        }
        sum
    }

    #[test]
    fn geometric_bracket_under_certain_kill() {
        let m = example_one();
        let search = BetaSearch {
            lo: 1.0,
            hi: 50.0,
            tol: 1e-8,
            epochs: 1_000,
            max_epochs: 1_000,
            replicates: 4,
            master_seed: 1,
        };
        let b = beta_critical(&m, EnvKind::Geometric, &search).unwrap();
        assert!(b.lo > 1.0 && b.converged);
        assert!(geometric_series(b.lo) <= 0.0 && geometric_series(b.hi) > 0.0, "{b:?}");
    }

    #[test]
    fn no_sign_change_is_reported() {
        let m = example_one();
        let search = BetaSearch {
            lo: 4.0,
            hi: 5.0,
            tol: 1e-3,
            epochs: 100,
            max_epochs: 100,
            replicates: 2,
            master_seed: 1,
        };
        assert!(matches!(
            beta_critical(&m, EnvKind::Atom, &search),
            Err(Error::NoSignChange { .. })
        ));
    }

    #[test]
    fn growth_conditions_of_monotone_families() {
        // (1): mass near zero vanishes as beta grows.
        for t0 in [0.5, 2.0, 10.0] {
            let g: Vec<f64> = [2.0, 20.0, 200.0, 2000.0]
                .iter()
                .map(|&b| EnvFamily::geometric(b).unwrap().cdf(t0))
                .collect();
            assert!(g.windows(2).all(|w| w[1] < w[0] || w[0] == 0.0) && *g.last().unwrap() < 0.01);
            let e: Vec<f64> = [2.0, 20.0, 200.0, 2000.0]
                .iter()
                .map(|&b| EnvFamily::exponential(b).unwrap().cdf(t0))
                .collect();
            assert!(e.windows(2).all(|w| w[1] < w[0]) && *e.last().unwrap() < 0.01);
        }
        // (3): small-gap mass dominates as beta -> 0 (exponential only: the
        // geometric family lives on beta >= 1).
        for t0 in [0.1, 1.0] {
            let ratio = |b: f64| {
                let f = EnvFamily::exponential(b).unwrap();
                let inside = f.partial_mean(t0);
                inside / (f.mean() - inside)
            };
            assert!(ratio(t0 / 5.0) < ratio(t0 / 10.0));
            assert!(ratio(t0 / 50.0) > 1e15);
        }
    }

    proptest! {
        #[test]
        fn quantiles_are_stochastically_ordered(b1 in 1.0..30.0f64, db in 0.0..30.0f64, u in 0.0..1.0f64) {
            let b2 = b1 + db;
            let g1 = EnvFamily::geometric(b1).unwrap().quantile(u);
            let g2 = EnvFamily::geometric(b2).unwrap().quantile(u);
            prop_assert!(g1 <= g2);
            let e1 = EnvFamily::exponential(b1).unwrap().quantile(u);
            let e2 = EnvFamily::exponential(b2).unwrap().quantile(u);
            prop_assert!(e1 <= e2);
        }
    }

    #[test]
    fn two_point_ordered_within_each_branch() {
        let low: Vec<f64> = (1..=300).map(|i| i as f64 * 0.05).collect();
        let high: Vec<f64> = (1..=300).map(|i| 15.0 + i as f64 * 0.05).collect();
        for betas in [low, high] {
            for u in [0.1, 0.49, 0.5, 0.9] {
                let q: Vec<f64> = betas.iter().map(|&b| EnvFamily::two_point(b).unwrap().quantile(u)).collect();
                assert!(q.windows(2).all(|w| w[0] <= w[1]), "u={u}");
            }
        }
        // Across the branch switch the upper atom falls from 45 to just above 3.
        let at = |b: f64| EnvFamily::two_point(b).unwrap().quantile(0.9);
        assert!(at(15.0) > at(15.05));
    }
}
