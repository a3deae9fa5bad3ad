//! Critical thresholds for periodic killing.
//!
//! With kills every `T` time units, the surviving populations at kill times
//! form a two-type Galton-Watson process with mean matrix `M(T)`, which
//! survives with positive probability iff the Perron root `gamma+(T) > 1`.
//! For `p > 0` there is a single period `T_c(p)` where `gamma+` crosses 1,
//! found as the positive root of `t -> F_{t,p}(1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::MeanField;
use crate::model::ModelParams;

/// Default absolute tolerance on `T_c`.
pub const DEFAULT_TOL_T: f64 = 1e-10;
/// Default absolute tolerance on `p_c`.
pub const DEFAULT_TOL_P: f64 = 1e-12;
/// Bracket expansion gives up beyond this period.
pub const MAX_PERIOD: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalTimeResult {
    pub t_c: f64,
    pub bracket: (f64, f64),
    /// `|F_{t_c,p}(1)|`
    pub residual: f64,
    pub iterations: u32,
    /// Perron root at `t_c`; 1 up to the tolerance.
    pub gamma_plus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    AlmostSureExtinction,
    PositiveSurvival,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub gamma_plus: f64,
}

fn require_killing(params: &ModelParams) -> Result<()> {
    if params.p() == 0.0 {
        return Err(Error::TrivialExtinction {
            reason: "p = 0: no killing, T_c is 0",
        });
    }
    if !params.is_nontrivial() {
        return Err(Error::TrivialExtinction {
            reason: "a + 1 - p = 0",
        });
    }
    Ok(())
}

/// Bisect `f` on `[lo, hi]` with `f(lo) > 0 >= f(hi)` down to width `tol`.
fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64, u32) {
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    (lo, hi, iterations)
}

/// The critical period `T_c(p)`: extinction almost surely iff `T <= T_c(p)`.
pub fn critical_time(params: &ModelParams, tol_t: f64) -> Result<CriticalTimeResult> {
    if !(tol_t > 0.0) {
        return Err(Error::invalid("tol_t", "must be positive"));
    }
    let mf = MeanField::new(params)?;
    require_killing(params)?;
    let p = params.p();
    let f = |t: f64| mf.scaled_unit_residual(t, p);

    // F(1) rises from 0 with slope p (b + d_r) > 0, then changes sign once.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_PERIOD {
            return Err(Error::NotFound(format!(
                "F_(t,p)(1) still positive at t = {lo}"
            )));
        }
    }
    if lo == 0.0 {
        let mut seed = hi;
        loop {
            seed *= 0.5;
            if seed < f64::MIN_POSITIVE {
                return Err(Error::NotFound("no positive lower bracket".into()));
            }
            if f(seed) > 0.0 {
                lo = seed;
                break;
            }
            hi = seed;
        }
    }

    let (lo, hi, iterations) = bisect(lo, hi, tol_t, f);
    let t_c = 0.5 * (lo + hi);
    let mm = mf.moment_matrix(t_c)?;
    // gamma+ must sit at 1 up to the bracket width times its slope.
    let g_lo = mf.moment_matrix(lo)?.gamma_plus;
    let g_hi = mf.moment_matrix(hi)?.gamma_plus;
    let slope = ((g_hi - g_lo) / (hi - lo)).abs();
    let allowed = 10.0 * tol_t * slope.max(1.0) + 1e-14;
    if (mm.gamma_plus - 1.0).abs() > allowed {
        return Err(Error::ValidationFailed(format!(
            "gamma+ = {} at t_c = {t_c}",
            mm.gamma_plus
        )));
    }
    Ok(CriticalTimeResult {
        t_c,
        bracket: (lo, hi),
        residual: (f(t_c) * (t_c * mf.spectral().x_plus).exp()).abs(),
        iterations,
        gamma_plus: mm.gamma_plus,
    })
}

/// Critical kill probability `p_c(t)` for a fixed period `t`; the `p` stored
/// in `params` is ignored.
///
/// Returns `None` when `t >= T_c(1)`: the population then survives with
/// positive probability for every `p < 1`.
pub fn critical_p(params: &ModelParams, t: f64, tol_p: f64) -> Result<Option<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid("t", "must be finite and positive"));
    }
    if !(tol_p > 0.0) {
        return Err(Error::invalid("tol_p", "must be positive"));
    }
    let mf = MeanField::new(params)?;
    // F_{t,p}(1) is strictly increasing in p.
    let f = |p: f64| mf.scaled_unit_residual(t, p);
    if f(1.0) <= 0.0 {
        return Ok(None);
    }
    let (lo, hi, _) = bisect(0.0, 1.0, tol_p, |p| -f(p));
    // -f(lo) > 0 means F < 0 (survival) below p_c.
    Ok(Some(0.5 * (lo + hi)))
}

/// Extinction or survival for killings every `period` time units.
///
/// `gamma+ = 1` counts as extinction.
pub fn classify(params: &ModelParams, period: f64) -> Result<Classification> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::invalid("period", "must be finite and positive"));
    }
    let mm = MeanField::new(params)?.moment_matrix(period)?;
    let verdict = if mm.gamma_plus > 1.0 {
        Verdict::PositiveSurvival
    } else {
        Verdict::AlmostSureExtinction
    };
    Ok(Classification {
        verdict,
        gamma_plus: mm.gamma_plus,
    })
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    Lambda,
    P,
    A,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Lambda => "lambda",
            SweepVar::P => "p",
            SweepVar::A => "a",
        }
    }

    fn set(self, params: &ModelParams, v: f64) -> Result<ModelParams> {
        params.with_raw(|r| match self {
            SweepVar::Lambda => r.lambda = v,
            SweepVar::P => r.p = v,
            SweepVar::A => r.a = v,
        })
    }
}

impl std::str::FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepVar::Lambda),
            "p" => Ok(SweepVar::P),
            "a" => Ok(SweepVar::A),
            _ => Err(Error::invalid("var", format!("unknown sweep variable `{s}`"))),
        }
    }
}

/// One axis of a sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

impl Axis {
    /// `steps` evenly spaced values from `from` to `to` inclusive.
    pub fn linspace(var: SweepVar, from: f64, to: f64, steps: usize) -> Self {
        let values = match steps {
            0 => vec![],
            1 => vec![from],
            _ => (0..steps)
                .map(|i| {
                    if i == steps - 1 {
                        to
                    } else {
                        from + (to - from) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        };
        Axis { var, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowStatus {
    #[serde(rename = "ok")]
    Ok,
    NotSupercritical,
    TrivialExtinction,
    InvalidParameter,
    SpectralGapTooSmall,
    NotFound,
    ValidationFailed,
}

impl RowStatus {
    fn from_error(e: &Error) -> Self {
        match e {
            Error::NotSupercritical { .. } => RowStatus::NotSupercritical,
            Error::TrivialExtinction { .. } => RowStatus::TrivialExtinction,
            Error::SpectralGapTooSmall { .. } => RowStatus::SpectralGapTooSmall,
            Error::ValidationFailed(_) => RowStatus::ValidationFailed,
            Error::InvalidParameter { .. } => RowStatus::InvalidParameter,
            _ => RowStatus::NotFound,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::NotSupercritical => "NotSupercritical",
            RowStatus::TrivialExtinction => "TrivialExtinction",
            RowStatus::InvalidParameter => "InvalidParameter",
            RowStatus::SpectralGapTooSmall => "SpectralGapTooSmall",
            RowStatus::NotFound => "NotFound",
            RowStatus::ValidationFailed => "ValidationFailed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Grid coordinates, in axis order.
    pub coords: Vec<f64>,
    pub t_c: Option<f64>,
    pub residual: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub vars: Vec<SweepVar>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Column names: the grid variables, then `t_c,residual,status`.
    pub fn header(&self) -> Vec<&'static str> {
        self.vars
            .iter()
            .map(|v| v.name())
            .chain(["t_c", "residual", "status"])
            .collect()
    }
}

/// `T_c` over a grid of one or two of `{lambda, p, a}`, the rest fixed.
///
/// Grid points that violate a precondition are kept with a status instead
/// of aborting. Rows come out in grid order (last axis fastest) whatever
/// the thread count.
pub fn sweep(base: &ModelParams, axes: &[Axis], tol_t: f64) -> Result<SweepTable> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::invalid("axes", "sweep needs one or two axes"));
    }
    if axes.len() == 2 && axes[0].var == axes[1].var {
        return Err(Error::invalid("axes", "sweep axes must differ"));
    }
    let points: Vec<Vec<f64>> = match axes {
        [x] => x.values.iter().map(|&v| vec![v]).collect(),
        [x, y] => x
            .values
            .iter()
            .flat_map(|&u| y.values.iter().map(move |&v| vec![u, v]))
            .collect(),
        _ => unreachable!(),
    };
    let rows = points
        .into_par_iter()
        .map(|coords| {
            let params = axes
                .iter()
                .zip(&coords)
                .try_fold(*base, |acc, (ax, &v)| ax.var.set(&acc, v));
            match params.and_then(|m| critical_time(&m, tol_t)) {
                Ok(res) => SweepRow {
                    coords,
                    t_c: Some(res.t_c),
                    residual: Some(res.residual),
                    status: RowStatus::Ok,
                },
                Err(e) => SweepRow {
                    coords,
                    t_c: None,
                    residual: None,
                    status: RowStatus::from_error(&e),
                },
            }
        })
        .collect();
    Ok(SweepTable {
        vars: axes.iter().map(|a| a.var).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_one() -> ModelParams {
        let s = 21f64.sqrt();
        ModelParams::new((s + 3.0) / 4.0, 0.5, (s - 3.0) / 4.0, 0.5, 0.5, 1.0).unwrap()
    }

    fn triangular(p: f64) -> ModelParams {
        ModelParams::new(1.0, 0.0, 1.0, 0.0, 0.0, p).unwrap()
    }

    fn figure(p: f64) -> ModelParams {
        ModelParams::new(3.7, 0.01, 0.01, 0.025, 0.025, p).unwrap()
    }

    #[test]
    fn example_one_critical_time() {
        let s = 21f64.sqrt();
        let exact = (3.0 + s).ln() - (5.0 - s).ln();
        let res = critical_time(&example_one(), DEFAULT_TOL_T).unwrap();
        assert_relative_eq!(res.t_c, exact, max_relative = 1e-9);
        assert!((res.t_c - 2.89950).abs() < 1e-5);
        assert!(res.bracket.1 - res.bracket.0 <= DEFAULT_TOL_T);
        assert!(res.residual < 1e-9);
    }

    #[test]
    fn triangular_critical_time_closed_form() {
        for i in 1..10 {
            let p = i as f64 / 10.0;
            let res = critical_time(&triangular(p), DEFAULT_TOL_T).unwrap();
            assert!((res.t_c + (1.0 - p).ln()).abs() < 1e-9, "p={p}");
        }
        assert!((critical_time(&triangular(0.5), DEFAULT_TOL_T).unwrap().t_c - 2f64.ln()).abs() < 1e-9);
        assert!(critical_time(&triangular(1e-6), DEFAULT_TOL_T).unwrap().t_c < 1e-5);
    }

    #[test]
    fn critical_time_errors() {
        assert!(matches!(
            critical_time(&triangular(1.0), DEFAULT_TOL_T),
            Err(Error::TrivialExtinction { .. })
        ));
        assert!(matches!(
            critical_time(&triangular(0.0), DEFAULT_TOL_T),
            Err(Error::TrivialExtinction { .. })
        ));
        let sub = ModelParams::new(1.0, 3.0, 1.0, 0.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            critical_time(&sub, DEFAULT_TOL_T),
            Err(Error::NotSupercritical { .. })
        ));
    }

    #[test]
    fn sign_structure_around_t_c() {
        for m in [example_one(), figure(0.9), figure(0.3), triangular(0.7)] {
            let tc = critical_time(&m, DEFAULT_TOL_T).unwrap().t_c;
            let mf = MeanField::new(&m).unwrap();
            for k in 1..50 {
                let below = tc * (1.0 - 1e-6) * k as f64 / 50.0;
                assert!(mf.scaled_unit_residual(below, m.p()) > 0.0);
                let above = tc * (1.0 + 1e-6) * (1.0 + k as f64);
                assert!(mf.scaled_unit_residual(above, m.p()) < 0.0);
            }
            assert_eq!(classify(&m, 0.99 * tc).unwrap().verdict, Verdict::AlmostSureExtinction);
            assert_eq!(classify(&m, 1.01 * tc).unwrap().verdict, Verdict::PositiveSurvival);
        }
    }

    #[test]
    fn classify_examples() {
        let c = classify(&example_one(), 3.0).unwrap();
        assert_eq!(c.verdict, Verdict::PositiveSurvival);
        assert!((c.gamma_plus - 1.0952).abs() < 1e-4);
        assert_eq!(
            classify(&example_one(), 2.0).unwrap().verdict,
            Verdict::AlmostSureExtinction
        );
        for period in [0.01, 1.0, 5.0] {
            let c = classify(&example_one().with_p(0.0).unwrap(), period).unwrap();
            assert_eq!(c.verdict, Verdict::PositiveSurvival);
        }
        assert!(classify(&example_one(), 0.0).is_err());
    }

    #[test]
    fn critical_p_inverts_triangular() {
        for &t in &[0.05, 0.5, 1.0, 2.0] {
            let pc = critical_p(&triangular(0.5), t, DEFAULT_TOL_P).unwrap().unwrap();
            assert!((pc - (1.0 - (-t).exp())).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn critical_p_near_and_beyond_tc1() {
        let tc1 = critical_time(&example_one(), DEFAULT_TOL_T).unwrap().t_c;
        let pc = critical_p(&example_one(), tc1 - 1e-3, DEFAULT_TOL_P).unwrap().unwrap();
        assert!(pc < 1.0 && pc > 0.99, "pc={pc}");
        assert_eq!(critical_p(&example_one(), tc1 + 1e-6, DEFAULT_TOL_P).unwrap(), None);
        assert_eq!(critical_p(&example_one(), 10.0, DEFAULT_TOL_P).unwrap(), None);
    }

    #[test]
    fn critical_p_and_time_are_inverse() {
        for m in [figure(0.5), figure(0.95), example_one().with_p(0.4).unwrap()] {
            let tc = critical_time(&m, DEFAULT_TOL_T).unwrap().t_c;
            let pc = critical_p(&m, tc, DEFAULT_TOL_P).unwrap().unwrap();
            assert!((pc - m.p()).abs() < 1e-7, "pc={pc} p={}", m.p());
        }
    }

    #[test]
    fn t_c_increasing_in_p() {
        let mut last = 0.0;
        for i in 1..=40 {
            let p = i as f64 / 40.0;
            let tc = critical_time(&figure(p), DEFAULT_TOL_T).unwrap().t_c;
            assert!(tc > last, "p={p}");
            last = tc;
        }
    }

    #[test]
    fn figure_p_sweep() {
        let table = sweep(&figure(0.5), &[Axis::linspace(SweepVar::P, 0.9, 1.0, 3)], DEFAULT_TOL_T).unwrap();
        assert_eq!(table.header(), vec!["p", "t_c", "residual", "status"]);
        assert_eq!(table.rows.len(), 3);
        let tcs: Vec<f64> = table.rows.iter().map(|r| r.t_c.unwrap()).collect();
        assert!(tcs[0] < tcs[1] && tcs[1] < tcs[2], "{tcs:?}");
        assert_eq!(table.rows[1].coords, vec![0.95]);
    }

    #[test]
    fn single_point_sweep_is_critical_time() {
        let table = sweep(&figure(0.5), &[Axis { var: SweepVar::P, values: vec![0.8] }], DEFAULT_TOL_T).unwrap();
        let direct = critical_time(&figure(0.8), DEFAULT_TOL_T).unwrap();
        assert_eq!(table.rows[0].t_c, Some(direct.t_c));
    }

    #[test]
    fn a_sweep_diverges_at_growth_boundary() {
        let base = figure(0.9);
        let boundary = (base.lambda() - base.d_n()) * (base.b() + base.d_r()) / base.d_r();
        let values: Vec<f64> = [0.5, 0.9, 0.99, 1.001, 1.1]
            .iter()
            .map(|f| f * boundary)
            .collect();
        let table = sweep(&base, &[Axis { var: SweepVar::A, values }], DEFAULT_TOL_T).unwrap();
        let ok: Vec<f64> = table.rows[..3].iter().map(|r| r.t_c.unwrap()).collect();
        assert!(ok.windows(2).all(|w| w[1] > w[0]), "{ok:?}");
        assert!(ok[2] > 10.0 * ok[0], "{ok:?}");
        assert_eq!(table.rows[3].status, RowStatus::NotSupercritical);
        assert_eq!(table.rows[4].status, RowStatus::NotSupercritical);
    }

    #[test]
    fn two_axis_sweep_order_and_statuses() {
        let table = sweep(
            &figure(0.5),
            &[
                Axis::linspace(SweepVar::Lambda, 1.0, 3.0, 3),
                Axis { var: SweepVar::P, values: vec![0.0, 0.9, 1.0] },
            ],
            DEFAULT_TOL_T,
        )
        .unwrap();
        assert_eq!(table.header(), vec!["lambda", "p", "t_c", "residual", "status"]);
        assert_eq!(table.rows.len(), 9);
        assert_eq!(table.rows[1].coords, vec![1.0, 0.9]);
        assert_eq!(table.rows[3].coords, vec![2.0, 0.0]);
        assert_eq!(table.rows[0].status, RowStatus::TrivialExtinction);
        for row in table.rows.chunks(3) {
            assert!(row[1].t_c.unwrap() < row[2].t_c.unwrap());
        }
    }

    #[test]
    fn no_persistence_death_t_c_decreases_in_a() {
        let base = ModelParams::new(3.7, 1.0, 0.01, 0.025, 0.0, 0.9).unwrap();
        let tcs: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&a| critical_time(&base.with_raw(|r| r.a = a).unwrap(), DEFAULT_TOL_T).unwrap().t_c)
            .collect();
        assert!(tcs[0] > tcs[1] && tcs[1] > tcs[2], "{tcs:?}");
    }
}
