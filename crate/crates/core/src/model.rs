//! Model parameters and the raw population state.
//!
//! A susceptible bacterium reproduces at rate `lambda`, switches to the
//! persistent state at rate `a` and dies at rate `d_n`. A persistent bacterium
//! reverts at rate `b` and dies at rate `d_r`. At every mass-killing each
//! susceptible bacterium dies independently with probability `p`; persistent
//! bacteria are immune.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six raw numbers, as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub dn: f64,
    pub dr: f64,
    pub p: f64,
}

/// Validated model parameters.
///
/// Non-supercritical parameter sets are accepted and flagged: the chain is
/// well defined without the growth condition, and the analytic routines that
/// need it check [`ModelParams::is_supercritical`] themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    lambda: f64,
    a: f64,
    b: f64,
    d_n: f64,
    d_r: f64,
    p: f64,
    supercritical: bool,
    nontrivial: bool,
}

impl ModelParams {
    /// Validate six raw numbers.
    ///
    /// Rejects non-finite values, negative rates, `b <= 0` and `p` outside
    /// `[0, 1]`. Everything else is accepted and classified.
    pub fn validate(raw: RawParams) -> Result<Self> {
        let rate = |field: &'static str, v: f64| -> Result<f64> {
            if !v.is_finite() {
                return Err(Error::invalid(field, format!("{v} is not finite")));
            }
            if v < 0.0 {
                return Err(Error::invalid(field, format!("{v} is negative")));
            }
            Ok(v)
        };
        let lambda = rate("lambda", raw.lambda)?;
        let a = rate("a", raw.a)?;
        let b = rate("b", raw.b)?;
        let d_n = rate("dn", raw.dn)?;
        let d_r = rate("dr", raw.dr)?;
        if b <= 0.0 {
            return Err(Error::invalid("b", "must be strictly positive"));
        }
        let p = raw.p;
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("p", format!("{p} is outside [0, 1]")));
        }
        let margin = (b + d_r) * (lambda - d_n) - a * d_r;
        Ok(ModelParams {
            lambda,
            a,
            b,
            d_n,
            d_r,
            p,
            supercritical: margin > 0.0,
            nontrivial: a + (1.0 - p) > 0.0,
        })
    }

    pub fn new(lambda: f64, a: f64, b: f64, d_n: f64, d_r: f64, p: f64) -> Result<Self> {
        Self::validate(RawParams {
            lambda,
            a,
            b,
            dn: d_n,
            dr: d_r,
            p,
        })
    }

    /// Same rates, different kill probability.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::validate(RawParams { p, ..self.raw() })
    }

    /// Same parameters with one rate replaced, re-validated.
    pub fn with_raw(&self, f: impl FnOnce(&mut RawParams)) -> Result<Self> {
        let mut raw = self.raw();
        f(&mut raw);
        Self::validate(raw)
    }

    pub fn raw(&self) -> RawParams {
        RawParams {
            lambda: self.lambda,
            a: self.a,
            b: self.b,
            dn: self.d_n,
            dr: self.d_r,
            p: self.p,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn d_n(&self) -> f64 {
        self.d_n
    }
    pub fn d_r(&self) -> f64 {
        self.d_r
    }
    pub fn p(&self) -> f64 {
        self.p
    }

    /// `(b + d_r)(lambda - d_n) - a d_r`, i.e. `-det A`.
    pub fn growth_margin(&self) -> f64 {
        (self.b + self.d_r) * (self.lambda - self.d_n) - self.a * self.d_r
    }

    /// The mean dynamics without killings grow: `x+ > 0`.
    pub fn is_supercritical(&self) -> bool {
        self.supercritical
    }

    /// `a + 1 - p > 0`. When false every mass-killing wipes out the
    /// susceptible population and nothing ever becomes persistent.
    pub fn is_nontrivial(&self) -> bool {
        self.nontrivial
    }

    pub(crate) fn require_supercritical(&self) -> Result<()> {
        if self.supercritical {
            Ok(())
        } else {
            Err(Error::NotSupercritical {
                margin: self.growth_margin(),
            })
        }
    }
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        Self::validate(raw)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        p.raw()
    }
}

/// Extinction for every schedule, including no killings at all.
pub fn spontaneous_extinction(params: &ModelParams) -> bool {
    !params.is_supercritical()
}

/// Counts of susceptible (`n`) and persistent (`r`) bacteria at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub n: u64,
    pub r: u64,
    pub t: f64,
}

impl PopulationState {
    pub fn new(n: u64, r: u64) -> Self {
        PopulationState { n, r, t: 0.0 }
    }

    pub fn total(&self) -> u64 {
        self.n + self.r
    }

    pub fn is_extinct(&self) -> bool {
        self.n == 0 && self.r == 0
    }
}
