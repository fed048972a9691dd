//! Bounded least-squares calibration of the exponential propagator.
//!
//! Returns are regressed on lagged signed impacts `f(x_{t-l})`, `l = 1..=L`,
//! with kernel weights `g0 * exp(-l / tau)`. For a fixed `tau` the optimal
//! `g0 >= 0` is a clamped one-dimensional linear solve, so the search is a
//! log-spaced grid over `tau in [0.5, 180]` followed by Brent refinement in
//! `ln tau`. Everything works on per-block sufficient statistics so the
//! rolling folds never revisit the raw series.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{signed_instant_impact, CalibrationError, ImpactForm, ImpactParams, TAU_MAX, TAU_MIN};
use crate::marketdata::MarketUniverse;

/// Impact scale fixed during fitting: one basis point per unit of
/// `|x|^beta`. Only the product with `g0` is identified.
pub const CALIBRATION_GAMMA: f64 = 1e-4;
/// Symbols whose mean out-of-fold R^2 does not exceed this are excluded.
pub const RETAIN_R2: f64 = 0.02;
pub const DEFAULT_LAGS: [usize; 4] = [5, 10, 20, 30];
const TAU_GRID: usize = 48;

/// One contiguous stretch of minutes (typically a trading day). Lags never
/// reach across segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationSegment {
    pub returns: Vec<Option<f64>>,
    /// Signed participation per minute; `None` on minutes without trades.
    pub participation: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
struct Moments {
    lags: usize,
    n: usize,
    xtx: Vec<f64>,
    xtr: Vec<f64>,
    rtr: f64,
    rsum: f64,
}

impl Moments {
    fn new(lags: usize) -> Self {
        Moments { lags, n: 0, xtx: vec![0.0; lags * lags], xtr: vec![0.0; lags], rtr: 0.0, rsum: 0.0 }
    }

    fn add_row(&mut self, r: f64, x: &[f64]) {
        let l = self.lags;
        self.n += 1;
        self.rtr += r * r;
        self.rsum += r;
        for i in 0..l {
            if x[i] == 0.0 {
                continue;
            }
            self.xtr[i] += x[i] * r;
            for j in 0..l {
                self.xtx[i * l + j] += x[i] * x[j];
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.rtr += o.rtr;
        self.rsum += o.rsum;
        self.xtr.iter_mut().zip(&o.xtr).for_each(|(a, b)| *a += b);
        self.xtx.iter_mut().zip(&o.xtx).for_each(|(a, b)| *a += b);
    }

    /// `(w . X'r, w' X'X w)` for kernel weights at `tau`.
    fn projections(&self, tau: f64) -> (f64, f64) {
        let l = self.lags;
        let w: Vec<f64> = (1..=l).map(|lag| (-(lag as f64) / tau).exp()).collect();
        let a = w.iter().zip(&self.xtr).map(|(w, x)| w * x).sum();
        let mut b = 0.0;
        for i in 0..l {
            for j in 0..l {
                b += w[i] * w[j] * self.xtx[i * l + j];
            }
        }
        (a, b)
    }

    fn sse(&self, g0: f64, tau: f64) -> f64 {
        let (a, b) = self.projections(tau);
        self.rtr - 2.0 * g0 * a + g0 * g0 * b
    }

    fn sst(&self) -> f64 {
        self.rtr - self.rsum * self.rsum / self.n as f64
    }

    /// Best non-negative `g0` at `tau` and the resulting SSE.
    fn profile(&self, tau: f64) -> (f64, f64) {
        let (a, b) = self.projections(tau);
        if b <= 0.0 {
            return (0.0, self.rtr);
        }
        let g0 = (a / b).max(0.0);
        (g0, self.rtr - 2.0 * g0 * a + g0 * g0 * b)
    }
}

/// Brent's minimiser on `[lo, hi]` (golden section with parabolic steps).
fn brent_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = lo + GOLD * (hi - lo);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (hi - lo) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (lo - x) && p < q * (hi - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { hi - x } else { lo - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1 * d.signum() };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

struct Fitted {
    g0: f64,
    tau: f64,
    at_bound: bool,
}

fn fit_moments(m: &Moments) -> Fitted {
    let (ln_lo, ln_hi) = (TAU_MIN.ln(), TAU_MAX.ln());
    let grid: Vec<f64> =
        (0..TAU_GRID).map(|i| ln_lo + (ln_hi - ln_lo) * i as f64 / (TAU_GRID - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|lt| m.profile(lt.exp()).1).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(TAU_GRID - 1)];
    let (ln_tau, sse) = brent_min(|lt| m.profile(lt.exp()).1, lo, hi, 1e-10);
    let ln_tau = if sse <= values[best] { ln_tau } else { grid[best] };
    let tau = ln_tau.exp().clamp(TAU_MIN, TAU_MAX);
    let g0 = m.profile(tau).0;
    let at_bound = g0 == 0.0 || tau <= TAU_MIN * (1.0 + 1e-6) || tau >= TAU_MAX * (1.0 - 1e-6);
    Fitted { g0, tau, at_bound }
}

/// Result of calibrating one symbol for one form and maximum lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub params: ImpactParams,
    pub max_lag: usize,
    pub fold_r2: Vec<f64>,
    pub r2_bar: f64,
    /// The optimum sits on a bound (`g0 = 0` or `tau` at 0.5 / 180).
    pub at_bound: bool,
    pub n_obs: usize,
}

/// Fits `(g0, tau)` for one symbol with `gamma` fixed at
/// [`CALIBRATION_GAMMA`], scoring out-of-fold R^2 on `folds` expanding
/// windows over contiguous time blocks.
pub fn calibrate_propagator(
    segments: &[CalibrationSegment],
    form: ImpactForm,
    max_lag: usize,
    folds: usize,
) -> Result<CalibrationFit, CalibrationError> {
    if max_lag == 0 {
        return Err(CalibrationError::Invalid("max_lag must be at least 1".into()));
    }
    if folds < 2 {
        return Err(CalibrationError::Invalid("at least two folds are required".into()));
    }
    for s in segments {
        if s.returns.len() != s.participation.len() {
            return Err(CalibrationError::Invalid("returns and participation are not aligned".into()));
        }
    }
    let shape = ImpactParams { gamma: CALIBRATION_GAMMA, beta: form.beta(), g0: 1.0, tau: 1.0, form };
    let n_rows: usize = segments.iter().map(|s| s.returns.iter().flatten().count()).sum();
    let blocks = folds + 1;
    if n_rows < blocks * (max_lag + 2) {
        return Err(CalibrationError::Degenerate(format!(
            "{n_rows} usable returns is too few for {folds} folds at lag {max_lag}"
        )));
    }

    let mut block_moments = vec![Moments::new(max_lag); blocks];
    let mut row = 0usize;
    let mut x = vec![0.0; max_lag];
    for seg in segments {
        let f: Vec<f64> = seg
            .participation
            .iter()
            .map(|p| p.map_or(0.0, |p| signed_instant_impact(p, &shape)))
            .collect();
        for (t, r) in seg.returns.iter().enumerate() {
            let Some(r) = *r else { continue };
            for (l, xl) in x.iter_mut().enumerate() {
                *xl = if t > l { f[t - l - 1] } else { 0.0 };
            }
            let b = row * blocks / n_rows;
            block_moments[b].add_row(r, &x);
            row += 1;
        }
    }

    let mut all = Moments::new(max_lag);
    for b in &block_moments {
        all.merge(b);
    }
    if !(all.sst() > 0.0) {
        return Err(CalibrationError::Degenerate("returns have zero variance".into()));
    }
    if all.xtx.iter().step_by(max_lag + 1).all(|d| *d == 0.0) {
        return Err(CalibrationError::Degenerate("signed participation is identically zero".into()));
    }

    let mut fold_r2 = Vec::with_capacity(folds);
    let mut train = block_moments[0].clone();
    for test in &block_moments[1..] {
        let fit = fit_moments(&train);
        let sst = test.sst();
        let r2 = if sst > 0.0 { 1.0 - test.sse(fit.g0, fit.tau) / sst } else { 0.0 };
        fold_r2.push(r2);
        train.merge(test);
    }
    let fit = fit_moments(&all);
    let r2_bar = fold_r2.iter().sum::<f64>() / fold_r2.len() as f64;
    Ok(CalibrationFit {
        params: ImpactParams { g0: fit.g0, tau: fit.tau, ..shape },
        max_lag,
        fold_r2,
        r2_bar,
        at_bound: fit.at_bound,
        n_obs: n_rows,
    })
}

/// Per-day calibration segments for one symbol, optionally restricted to an
/// inclusive date range.
pub fn segments_from_universe(
    universe: &MarketUniverse,
    symbol: &str,
    dates: Option<(u32, u32)>,
) -> Vec<CalibrationSegment> {
    let Some(days) = universe.days_of(symbol) else { return Vec::new() };
    days.values()
        .filter(|d| dates.is_none_or(|(a, b)| (a..=b).contains(&d.date)))
        .map(|d| CalibrationSegment {
            returns: d.minutes.iter().map(|m| m.mid_return).collect(),
            participation: d.minutes.iter().map(|m| if m.volume > 0.0 { m.imbalance } else { None }).collect(),
        })
        .collect()
}

/// One row of the calibration store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub symbol: String,
    pub params: ImpactParams,
    pub r2_bar: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationStore {
    pub records: BTreeMap<String, StoreRecord>,
}

impl CalibrationStore {
    pub fn get(&self, symbol: &str) -> Option<&StoreRecord> {
        self.records.get(symbol)
    }

    pub fn retained(&self) -> impl Iterator<Item = &StoreRecord> {
        self.records.values().filter(|r| r.retained)
    }

    pub fn insert(&mut self, record: StoreRecord) {
        self.records.insert(record.symbol.clone(), record);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormLagSummary {
    pub form: ImpactForm,
    pub max_lag: usize,
    pub mean_r2: f64,
    pub n_symbols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolCalibration {
    pub symbol: String,
    pub fits: Vec<(ImpactForm, usize, Result<CalibrationFit, String>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub per_symbol: Vec<SymbolCalibration>,
    pub summary: Vec<FormLagSummary>,
    pub winning_form: ImpactForm,
    pub store: CalibrationStore,
    pub retained: Vec<String>,
    pub warnings: Vec<String>,
}

impl CalibrationReport {
    pub fn mean_r2(&self, form: ImpactForm, max_lag: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.form == form && s.max_lag == max_lag).map(|s| s.mean_r2)
    }
}

/// Calibrates both forms at every maximum lag for each symbol, summarises
/// mean R^2 per (form, lag), picks the form with the higher average, and
/// keeps each symbol's best lag under that form.
pub fn compare_impact_forms(
    dataset: &BTreeMap<String, Vec<CalibrationSegment>>,
    lags: &[usize],
    folds: usize,
) -> Result<CalibrationReport, CalibrationError> {
    if dataset.len() < 2 {
        return Err(CalibrationError::Invalid("form comparison needs at least two symbols".into()));
    }
    if lags.is_empty() {
        return Err(CalibrationError::Invalid("lag grid is empty".into()));
    }
    let per_symbol: Vec<SymbolCalibration> = dataset
        .par_iter()
        .map(|(symbol, segs)| {
            let mut fits = Vec::new();
            for form in ImpactForm::ALL {
                for &lag in lags {
                    let fit = calibrate_propagator(segs, form, lag, folds).map_err(|e| e.to_string());
                    fits.push((form, lag, fit));
                }
            }
            SymbolCalibration { symbol: symbol.clone(), fits }
        })
        .collect();

    let mut summary = Vec::new();
    for form in ImpactForm::ALL {
        for &lag in lags {
            let r2: Vec<f64> = per_symbol
                .iter()
                .flat_map(|s| s.fits.iter())
                .filter(|(f, l, _)| *f == form && *l == lag)
                .filter_map(|(_, _, fit)| fit.as_ref().ok().map(|f| f.r2_bar))
                .collect();
            let mean_r2 = if r2.is_empty() { f64::NEG_INFINITY } else { r2.iter().sum::<f64>() / r2.len() as f64 };
            summary.push(FormLagSummary { form, max_lag: lag, mean_r2, n_symbols: r2.len() });
        }
    }
    let form_avg = |form: ImpactForm| {
        let xs: Vec<f64> = summary.iter().filter(|s| s.form == form).map(|s| s.mean_r2).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let winning_form =
        if form_avg(ImpactForm::Sqrt) >= form_avg(ImpactForm::Linear) { ImpactForm::Sqrt } else { ImpactForm::Linear };

    let mut store = CalibrationStore::default();
    let mut warnings = Vec::new();
    for s in &per_symbol {
        let best = s
            .fits
            .iter()
            .filter(|(f, _, _)| *f == winning_form)
            .filter_map(|(_, _, fit)| fit.as_ref().ok())
            .max_by(|a, b| a.r2_bar.total_cmp(&b.r2_bar));
        match best {
            Some(fit) => store.insert(StoreRecord {
                symbol: s.symbol.clone(),
                params: fit.params,
                r2_bar: fit.r2_bar,
                retained: fit.r2_bar > RETAIN_R2,
            }),
            None => warnings.push(format!("{}: no successful {winning_form} calibration", s.symbol)),
        }
    }
    let retained: Vec<String> = store.retained().map(|r| r.symbol.clone()).collect();
    if retained.is_empty() {
        warnings.push(format!("no symbol has mean out-of-fold R^2 above {RETAIN_R2}"));
    }
    Ok(CalibrationReport { per_symbol, summary, winning_form, store, retained, warnings })
}

const STORE_COLUMNS: [&str; 8] = ["symbol", "form", "gamma", "beta", "g0", "tau", "r2_bar", "retained"];

pub fn write_calibration_store(path: &Path, store: &CalibrationStore) -> Result<(), CalibrationError> {
    let err = |e: csv::Error| CalibrationError::Store { path: path.display().to_string(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(STORE_COLUMNS).map_err(err)?;
    for r in store.records.values() {
        let p = &r.params;
        w.write_record([
            r.symbol.clone(),
            p.form.to_string(),
            p.gamma.to_string(),
            p.beta.to_string(),
            p.g0.to_string(),
            p.tau.to_string(),
            r.r2_bar.to_string(),
            u8::from(r.retained).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CalibrationError::Store { path: path.display().to_string(), msg: e.to_string() })
}

pub fn read_calibration_store(path: &Path) -> Result<CalibrationStore, CalibrationError> {
    let fail = |line: u64, msg: String| CalibrationError::Store { path: format!("{}:{line}", path.display()), msg };
    let mut r = csv::Reader::from_path(path).map_err(|e| fail(0, e.to_string()))?;
    let headers = r.headers().map_err(|e| fail(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != STORE_COLUMNS {
        return Err(fail(1, format!("expected columns {STORE_COLUMNS:?}")));
    }
    let mut store = CalibrationStore::default();
    for rec in r.records() {
        let rec = rec.map_err(|e| fail(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| fail(line, format!("{}: {e}", STORE_COLUMNS[i])));
        let form: ImpactForm = rec[1].parse().map_err(|e: super::ImpactError| fail(line, e.to_string()))?;
        let params = ImpactParams { gamma: num(2)?, beta: num(3)?, g0: num(4)?, tau: num(5)?, form };
        params.validate().map_err(|e| fail(line, e.to_string()))?;
        let retained = match &rec[7] {
            "1" => true,
            "0" => false,
            other => return Err(fail(line, format!("retained must be 0 or 1, got {other:?}"))),
        };
        store.insert(StoreRecord { symbol: rec[0].to_string(), params, r2_bar: num(6)?, retained });
    }
    Ok(store)
}

/// Writes the (form, max lag) mean-R^2 table.
pub fn write_lag_study(path: &Path, summary: &[FormLagSummary]) -> Result<(), CalibrationError> {
    let err = |e: csv::Error| CalibrationError::Store { path: path.display().to_string(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["form", "max_lag", "mean_r2", "n_symbols"]).map_err(err)?;
    for s in summary {
        w.write_record([s.form.to_string(), s.max_lag.to_string(), s.mean_r2.to_string(), s.n_symbols.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| CalibrationError::Store { path: path.display().to_string(), msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Returns driven by a planted propagator plus Gaussian noise.
    fn planted(n: usize, g0: f64, tau: f64, noise: f64, seed: u64) -> CalibrationSegment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ImpactParams { gamma: CALIBRATION_GAMMA, beta: 0.5, g0, tau, form: ImpactForm::Sqrt };
        let part: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut acc = 0.0;
        let mut returns = Vec::with_capacity(n);
        for x in &part {
            let z: f64 = StandardNormal.sample(&mut rng);
            returns.push(Some(acc + noise * z));
            acc = (acc + g0 * signed_instant_impact(*x, &p)) * (-1.0 / tau).exp();
        }
        CalibrationSegment { returns, participation: part.into_iter().map(Some).collect() }
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let (x, fx) = brent_min(|x| (x - 1.3).powi(2) + 2.0, 0.0, 3.0, 1e-12);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_planted_parameters_noise_free() {
        let seg = planted(20_000, 0.5, 6.0, 0.0, 1);
        let fit = calibrate_propagator(&[seg], ImpactForm::Sqrt, 40, 4).unwrap();
        assert!((fit.params.tau - 6.0).abs() < 0.1, "tau {}", fit.params.tau);
        assert!((fit.params.g0 - 0.5).abs() < 0.01, "g0 {}", fit.params.g0);
        assert!(fit.r2_bar > 0.9);
    }

    #[test]
    fn noise_only_gives_no_explanatory_power() {
        let seg = planted(20_000, 0.0, 6.0, 2e-4, 2);
        let fit = calibrate_propagator(&[seg], ImpactForm::Sqrt, 20, 5).unwrap();
        assert!(fit.r2_bar <= 0.005, "r2 {}", fit.r2_bar);
    }

    #[test]
    fn bounds_hold_on_short_noisy_samples() {
        for seed in 0..30 {
            let seg = planted(400, 0.2, 3.0, 5e-4, seed);
            let fit = calibrate_propagator(&[seg], ImpactForm::Sqrt, 10, 2).unwrap();
            assert!(fit.params.g0 >= 0.0);
            assert!((TAU_MIN..=TAU_MAX).contains(&fit.params.tau));
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let flat = CalibrationSegment { returns: vec![Some(0.0); 500], participation: vec![Some(0.3); 500] };
        assert!(matches!(
            calibrate_propagator(&[flat], ImpactForm::Sqrt, 5, 3),
            Err(CalibrationError::Degenerate(_))
        ));
        let seg = planted(500, 0.5, 6.0, 1e-4, 3);
        assert!(matches!(calibrate_propagator(&[seg], ImpactForm::Sqrt, 5, 1), Err(CalibrationError::Invalid(_))));
    }

    #[test]
    fn store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.csv");
        let mut store = CalibrationStore::default();
        store.insert(StoreRecord {
            symbol: "AAA".into(),
            params: ImpactParams::new(ImpactForm::Sqrt, 1e-4, 0.37, 5.5).unwrap(),
            r2_bar: 0.031,
            retained: true,
        });
        write_calibration_store(&path, &store).unwrap();
        assert_eq!(read_calibration_store(&path).unwrap(), store);
    }

    #[test]
    fn empty_retained_list_warns() {
        let mut data = BTreeMap::new();
        data.insert("A".to_string(), vec![planted(3000, 0.0, 6.0, 1e-4, 10)]);
        data.insert("B".to_string(), vec![planted(3000, 0.0, 6.0, 1e-4, 11)]);
        let report = compare_impact_forms(&data, &[5], 3).unwrap();
        assert!(report.retained.is_empty());
        assert!(!report.warnings.is_empty());
        assert_eq!(report.store.records.len(), 2);
    }
}
