//! Eigenvalue counting by inertia, eigenvalues by bisection, and the
//! asymptotic diagnostics for self-similar weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::PencilDiscretization;
use crate::error::{Error, Result};
use crate::selfsim::SelfSimilarParams;

/// Relative accuracy of [`Counter::eigenvalue`].
pub const EIGEN_RTOL: f64 = 1e-10;
/// Default tolerance of the real gcd in [`period_and_case`].
pub const GCD_TOL: f64 = 1e-9;
const MAX_DENOMINATOR: i64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub negatives: usize,
    pub near_zeros: usize,
}

/// Negative and near-zero pivots of `A - lambda B`.
pub fn inertia(disc: &PencilDiscretization, lambda: f64) -> Inertia {
    let f = disc.factor(lambda);
    Inertia { negatives: f.negatives(), near_zeros: f.near_zeros }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountingResult {
    pub lambda: f64,
    /// Eigenvalues in `[0, lambda]` (zero when `lambda < 0`).
    pub n_plus: usize,
    /// Eigenvalues in `[lambda, 0)` (zero when `lambda >= 0`).
    pub n_minus: usize,
    pub reference_shift: f64,
}

/// Counting functions of one discretized pencil, anchored at a shift `xi`
/// where `A - xi B` is positive definite.
#[derive(Debug, Clone, Copy)]
pub struct Counter<'a> {
    disc: &'a PencilDiscretization,
    shift: f64,
    zero_tol: f64,
}

/// `0`, then `-s, s` for `s` running out from 1 to `1e6` and down to `1e-6`.
pub fn default_shift_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    let mags = (0..=24).map(|k| 10f64.powf(k as f64 / 4.0)).chain((1..=24).map(|k| 10f64.powf(-(k as f64) / 4.0)));
    for s in mags {
        grid.push(-s);
        grid.push(s);
    }
    grid
}

impl<'a> Counter<'a> {
    /// Scans [`default_shift_grid`] for a reference shift.
    pub fn new(disc: &'a PencilDiscretization) -> Result<Self> {
        match crate::assembly::positivity_scan(disc, &default_shift_grid()) {
            Some(xi) => Ok(Self::anchored(disc, xi)),
            None => Err(Error::IndefinitePencil(
                "A - xi B is not positive definite for any scanned xi in [-1e6, 1e6]".into(),
            )),
        }
    }

    pub fn with_shift(disc: &'a PencilDiscretization, xi: f64) -> Result<Self> {
        if crate::assembly::positivity_scan(disc, &[xi]).is_none() {
            return Err(Error::IndefinitePencil(format!("A - xi B is not positive definite at xi = {xi}")));
        }
        Ok(Self::anchored(disc, xi))
    }

    fn anchored(disc: &'a PencilDiscretization, shift: f64) -> Self {
        let n = disc.dim() as f64;
        let b = disc.b.abs_sum();
        let zero_tol = if b > 0.0 { 64.0 * n * f64::EPSILON * disc.a.norm_inf() / b } else { 0.0 };
        Counter { disc, shift, zero_tol }
    }

    pub fn reference_shift(&self) -> f64 {
        self.shift
    }

    pub fn discretization(&self) -> &PencilDiscretization {
        self.disc
    }

    /// Eigenvalues in `(xi, mu)` for `mu > xi`, minus those in `(mu, xi)`
    /// otherwise; differences count eigenvalues in open intervals.
    pub fn signed_count(&self, mu: f64) -> i64 {
        let neg = inertia(self.disc, mu).negatives as i64;
        if mu >= self.shift { neg } else { -neg }
    }

    /// Half-width of the window treated as "at" `mu`.
    pub fn tolerance(&self, mu: f64) -> f64 {
        (1e-9 * mu.abs()).max(self.zero_tol)
    }

    fn below_zero(&self) -> i64 {
        self.signed_count(-self.tolerance(0.0))
    }

    pub fn n_plus(&self, lambda: f64) -> usize {
        if lambda < 0.0 {
            return 0;
        }
        (self.signed_count(lambda + self.tolerance(lambda)) - self.below_zero()).max(0) as usize
    }

    pub fn n_minus(&self, lambda: f64) -> usize {
        if lambda >= 0.0 {
            return 0;
        }
        (self.below_zero() - self.signed_count(lambda - self.tolerance(lambda))).max(0) as usize
    }

    pub fn count(&self, lambda: f64) -> CountingResult {
        CountingResult {
            lambda,
            n_plus: self.n_plus(lambda),
            n_minus: self.n_minus(lambda),
            reference_shift: self.shift,
        }
    }

    /// The `n`-th eigenvalue (`n >= 1`) on the given side of zero, ordered by
    /// magnitude. Zero counts as the first positive eigenvalue when present.
    pub fn eigenvalue(&self, n: usize, side: Side) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidParameters("eigenvalue index starts at 1".into()));
        }
        let sign = match side {
            Side::Positive => 1.0,
            Side::Negative => -1.0,
        };
        let base = self.below_zero();
        // eigenvalues strictly between 0 and sign*t, plus zero on the positive side
        let reached = |t: f64| -> bool {
            let c = match side {
                Side::Positive => self.signed_count(t) - base,
                Side::Negative => base - self.signed_count(-t),
            };
            c >= n as i64
        };
        let zero_band = self.tolerance(0.0);
        if side == Side::Positive && self.n_plus(zero_band) >= n {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (zero_band, 1.0_f64.max(2.0 * zero_band));
        while !reached(hi) {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(Error::NotFound(format!(
                    "fewer than {n} eigenvalues on the {side:?} side"
                )));
            }
        }
        while hi - lo > EIGEN_RTOL * hi {
            let mid = 0.5 * (lo + hi);
            if reached(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(sign * 0.5 * (lo + hi))
    }
}

/// [`Counter::count`] with an explicit reference shift.
pub fn count(disc: &PencilDiscretization, lambda: f64, reference_shift: f64) -> Result<CountingResult> {
    Ok(Counter::with_shift(disc, reference_shift)?.count(lambda))
}

/// [`Counter::eigenvalue`] with a scanned reference shift.
pub fn eigenvalue(disc: &PencilDiscretization, n: usize, side: Side) -> Result<f64> {
    Counter::new(disc)?.eigenvalue(n, side)
}

fn nonzero_products(d: &[f64], dprime: &[f64]) -> Result<Vec<(f64, f64)>> {
    if d.len() != dprime.len() {
        return Err(Error::ParameterMismatch(format!(
            "{} weights but {} scalings",
            d.len(),
            dprime.len()
        )));
    }
    let out: Vec<(f64, f64)> = d
        .iter()
        .zip(dprime)
        .filter(|(a, b)| **a != 0.0 && **b != 0.0)
        .map(|(a, b)| (a * b.abs(), b.signum()))
        .collect();
    if out.iter().any(|&(p, _)| !(p < 1.0)) || d.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidParameters("every product d_i |d'_i| must lie in [0, 1)".into()));
    }
    Ok(out)
}

/// The exponent `D > 0` with `sum (d_i |d'_i|)^D = 1`.
pub fn spectral_dimension(d: &[f64], dprime: &[f64]) -> Result<f64> {
    let products = nonzero_products(d, dprime)?;
    if products.len() < 2 {
        return Err(Error::GeometricCase(format!(
            "{} nonzero product(s); use the geometric ladder analysis",
            products.len()
        )));
    }
    let f = |x: f64| products.iter().map(|&(p, _)| p.powf(x)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseTag {
    /// Log-periodic with period `nu`.
    PeriodicOdd,
    /// Log-periodic with period `2 nu`, and `s_-(x) = s_+(x - nu)`.
    Antiperiodic,
    NonarithmeticConstant,
    GeometricPositive,
    GeometricNegative,
}

impl CaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseTag::PeriodicOdd => "periodic-odd",
            CaseTag::Antiperiodic => "antiperiodic",
            CaseTag::NonarithmeticConstant => "nonarithmetic-constant",
            CaseTag::GeometricPositive => "geometric-positive",
            CaseTag::GeometricNegative => "geometric-negative",
        }
    }
}

/// First continued-fraction convergent `p/q` of `x` with `|q x - p| < tol`.
fn rational_approx(x: f64, tol: f64) -> Option<(i64, i64)> {
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut rest = x;
    for _ in 0..64 {
        let a = rest.floor();
        if a.abs() > 1e12 {
            return None;
        }
        let a = a as i64;
        let (h2, k2) = (a.checked_mul(h1)?.checked_add(h0)?, a.checked_mul(k1)?.checked_add(k0)?);
        if k2 > MAX_DENOMINATOR {
            return None;
        }
        if (k2 as f64 * x - h2 as f64).abs() < tol {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = rest - a as f64;
        if frac <= 0.0 {
            return None;
        }
        rest = 1.0 / frac;
    }
    None
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// Real gcd `nu` of the finite values `-ln(d_i |d'_i|)` and the resulting
/// asymptotic regime. `nu` is `None` when the values are incommensurable
/// within `tol`.
pub fn period_and_case(d: &[f64], dprime: &[f64], tol: f64) -> Result<(Option<f64>, CaseTag)> {
    let products = nonzero_products(d, dprime)?;
    match products.as_slice() {
        [] => return Err(Error::InvalidParameters("all products d_i d'_i vanish".into())),
        [(p, s)] => {
            let tag = if *s > 0.0 { CaseTag::GeometricPositive } else { CaseTag::GeometricNegative };
            return Ok((Some(-p.ln()), tag));
        }
        _ => {}
    }
    let logs: Vec<f64> = products.iter().map(|&(p, _)| -p.ln()).collect();
    let smallest = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut fractions = Vec::with_capacity(logs.len());
    for &l in &logs {
        match rational_approx(l / smallest, tol) {
            Some(f) => fractions.push(f),
            None => return Ok((None, CaseTag::NonarithmeticConstant)),
        }
    }
    let mut common_den = 1i64;
    for &(_, q) in &fractions {
        common_den = common_den / gcd(common_den, q) * q;
        if common_den > MAX_DENOMINATOR {
            return Ok((None, CaseTag::NonarithmeticConstant));
        }
    }
    let numerators: Vec<i64> = fractions.iter().map(|&(p, q)| p * (common_den / q)).collect();
    let g = numerators.iter().fold(0, |acc, &n| gcd(acc, n));
    let nu = smallest * g as f64 / common_den as f64;
    let odd_positive = products
        .iter()
        .zip(&numerators)
        .any(|(&(_, s), &n)| (s > 0.0) == ((n / g) % 2 == 1));
    let tag = if odd_positive { CaseTag::PeriodicOdd } else { CaseTag::Antiperiodic };
    Ok((Some(nu), tag))
}

/// One row of the counting-function profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticSample {
    pub lambda: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    pub ratio_plus: f64,
    pub ratio_minus: f64,
    pub ln_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticsReport {
    pub dimension: f64,
    pub nu: Option<f64>,
    pub case_tag: CaseTag,
    /// Period of `s_+` in `ln lambda`: `nu`, or `2 nu` in the antiperiodic case.
    pub period: Option<f64>,
    pub ratio_plus_min: f64,
    pub ratio_plus_max: f64,
    pub ratio_minus_min: f64,
    pub ratio_minus_max: f64,
    /// Ratio bounds over the top decade of the grid.
    pub top_decade_plus: (f64, f64),
    pub top_decade_minus: (f64, f64),
    /// `max |rho(x) - rho(x + period)|` over the top two decades.
    pub periodicity_defect_plus: Option<f64>,
    pub periodicity_defect_minus: Option<f64>,
    pub samples: Vec<AsymptoticSample>,
}

/// Samples `N_+(lambda)` and `N_-(-lambda)` divided by `lambda^D` on a
/// positive grid.
pub fn asymptotics_report(
    counter: &Counter<'_>,
    d: &[f64],
    dprime: &[f64],
    lambda_grid: &[f64],
) -> Result<AsymptoticsReport> {
    if lambda_grid.is_empty() || lambda_grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameters("lambda grid must be nonempty and positive".into()));
    }
    let dim = spectral_dimension(d, dprime)?;
    let (nu, case_tag) = period_and_case(d, dprime, GCD_TOL)?;
    let period = match case_tag {
        CaseTag::Antiperiodic => nu.map(|v| 2.0 * v),
        CaseTag::PeriodicOdd => nu,
        _ => None,
    };
    let samples: Vec<AsymptoticSample> = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let n_plus = counter.n_plus(lambda);
            let n_minus = counter.n_minus(-lambda);
            let scale = lambda.powf(dim);
            AsymptoticSample {
                lambda,
                n_plus,
                n_minus,
                ratio_plus: n_plus as f64 / scale,
                ratio_minus: n_minus as f64 / scale,
                ln_lambda: lambda.ln(),
            }
        })
        .collect();

    let bounds = |pick: fn(&AsymptoticSample) -> f64, from: f64| {
        samples
            .iter()
            .filter(|s| s.lambda >= from)
            .map(pick)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let top = lambda_grid.iter().copied().fold(0.0, f64::max);
    let plus = |s: &AsymptoticSample| s.ratio_plus;
    let minus = |s: &AsymptoticSample| s.ratio_minus;
    let (ratio_plus_min, ratio_plus_max) = bounds(plus, 0.0);
    let (ratio_minus_min, ratio_minus_max) = bounds(minus, 0.0);
    let window = top.ln() - 100f64.ln();
    let xs: Vec<f64> = samples.iter().map(|s| s.ln_lambda).collect();
    let defect = |pick: fn(&AsymptoticSample) -> f64| {
        let ys: Vec<f64> = samples.iter().map(pick).collect();
        period.and_then(|p| periodicity_defect(&xs, &ys, p, window))
    };
    Ok(AsymptoticsReport {
        dimension: dim,
        nu,
        case_tag,
        period,
        ratio_plus_min,
        ratio_plus_max,
        ratio_minus_min,
        ratio_minus_max,
        top_decade_plus: bounds(plus, top / 10.0),
        top_decade_minus: bounds(minus, top / 10.0),
        periodicity_defect_plus: defect(plus),
        periodicity_defect_minus: defect(minus),
        samples,
    })
}

/// `max |y(x) - y(x + period)|` over sample points `x >= from` with
/// `x + period` inside the sampled range; `y` is interpolated linearly.
pub fn periodicity_defect(xs: &[f64], ys: &[f64], period: f64, from: f64) -> Option<f64> {
    let last = *xs.last()?;
    let mut worst: Option<f64> = None;
    for (&x, &y) in xs.iter().zip(ys) {
        if x < from || x + period > last {
            continue;
        }
        let shifted = interpolate(xs, ys, x + period);
        let diff = (y - shifted).abs();
        worst = Some(worst.map_or(diff, |w| w.max(diff)));
    }
    worst
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let j = xs.partition_point(|&v| v < x);
    if j == 0 {
        return ys[0];
    }
    if j >= xs.len() {
        return ys[ys.len() - 1];
    }
    let s = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + s * (ys[j] - ys[j - 1])
}

/// One rung of an eigenvalue ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderRung {
    pub side: Side,
    /// Ladder number `l`, starting at 1.
    pub ladder: usize,
    pub rung: usize,
    /// Index of the eigenvalue on its side, starting at 1.
    pub index: usize,
    pub eigenvalue: f64,
    /// `lambda_(rung) / lambda_(rung - 1)` within the ladder, divided by the
    /// predicted growth factor.
    pub ratio_to_prediction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometricRegime {
    pub product: f64,
    pub z_plus: usize,
    pub z_minus: usize,
    /// Predicted growth factor between consecutive rungs of a ladder.
    pub predicted_ratio: f64,
    pub rungs: Vec<LadderRung>,
    /// For a negative product: `lambda_-/lambda_+` on matching rungs,
    /// predicted to tend to `1 / product`.
    pub cross_ratios: Vec<f64>,
}

/// Jump counts `(Z_+, Z_-)` of a self-similar function at its interior
/// junctions.
pub fn junction_signs(ptilde: &SelfSimilarParams) -> (usize, usize) {
    let jumps = ptilde.junction_jumps();
    let zp = jumps.iter().filter(|(_, j)| *j > 0.0).count();
    let zm = jumps.iter().filter(|(_, j)| *j < 0.0).count();
    (zp, zm)
}

/// Eigenvalue ladders when exactly one product `d_m d'_m` is nonzero.
///
/// `ptilde` are the parameters of the transformed weight; its widths are the
/// weights `d_i` of `r`.
pub fn geometric_asymptotics(
    counter: &Counter<'_>,
    ptilde: &SelfSimilarParams,
    k_max: usize,
) -> Result<GeometricRegime> {
    let products = nonzero_products(&ptilde.a, &ptilde.dprime)?;
    let [(mag, sign)] = products.as_slice() else {
        return Err(Error::WrongRegime(format!(
            "{} nonzero products; geometric ladders need exactly one",
            products.len()
        )));
    };
    let product = mag * sign;
    let (z_plus, z_minus) = junction_signs(ptilde);
    let mut rungs = Vec::new();
    let mut cross_ratios = Vec::new();
    let mut ladder = |side: Side, l: usize, index_of: &dyn Fn(usize) -> usize, growth: f64| -> Result<Vec<f64>> {
        let mut values = Vec::new();
        for k in 0..=k_max {
            let index = index_of(k);
            let ev = counter.eigenvalue(index, side)?;
            let ratio = values.last().map(|prev: &f64| ev / prev / growth);
            rungs.push(LadderRung { side, ladder: l, rung: k, index, eigenvalue: ev, ratio_to_prediction: ratio });
            values.push(ev);
        }
        Ok(values)
    };
    let predicted_ratio;
    if product > 0.0 {
        predicted_ratio = 1.0 / product;
        for l in 1..=z_plus {
            ladder(Side::Positive, l, &|k| l + k * z_plus, predicted_ratio)?;
        }
        for l in 1..=z_minus {
            ladder(Side::Negative, l, &|k| l + k * z_minus, predicted_ratio)?;
        }
    } else {
        predicted_ratio = 1.0 / (product * product);
        let z = z_plus + z_minus;
        for l in 1..=z {
            let pos = ladder(Side::Positive, l, &|k| l + k * z, predicted_ratio)?;
            let neg = ladder(Side::Negative, l, &|k| l + k * z_plus + (k + 1) * z_minus, predicted_ratio)?;
            cross_ratios.extend(neg.iter().zip(&pos).map(|(n, p)| n / p));
        }
    }
    Ok(GeometricRegime { product, z_plus, z_minus, predicted_ratio, rungs, cross_ratios })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaTerm {
    pub product: f64,
    pub lambda: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub lambda: f64,
    pub lhs: usize,
    pub rhs: usize,
    pub terms: Vec<LemmaTerm>,
    pub holds: bool,
}

/// Compares `N(lambda)` with `sum_i N(products_i * lambda)`.
pub fn lemma31_check(counter: &Counter<'_>, products: &[f64], lambda: f64) -> Result<LemmaCheck> {
    if lambda < 0.0 {
        return Err(Error::InvalidParameters("the inequality is stated for lambda >= 0".into()));
    }
    let lhs = counter.n_plus(lambda);
    let terms: Vec<LemmaTerm> = products
        .iter()
        .map(|&product| LemmaTerm { product, lambda: product * lambda, count: counter.n_plus(product * lambda) })
        .collect();
    let rhs = terms.iter().map(|t| t.count).sum();
    Ok(LemmaCheck { lambda, lhs, rhs, terms, holds: lhs <= rhs })
}
