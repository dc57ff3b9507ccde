//! Self-similar functions on `[0, 1]`.
//!
//! A self-similar function `P` is the fixed point of the affine substitution
//!
//! ```text
//! P(alpha_i + a_i t) = beta'_i + d'_i P(t),   t in (0, 1],  i = 1..n
//! ```
//!
//! where `alpha_i = a_1 + ... + a_{i-1}`. The boundary values `P(0)` and
//! `P(1)` are free data and need not agree with the one-sided limits
//! `P(0+)`, `P(1-)` forced by the substitution; the difference shows up as
//! point masses of the Stieltjes measure `dP` at the endpoints.
//!
//! Points shared by two neighbouring cells are assigned to the left cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for all parameter validation.
pub const PARAM_TOL: f64 = 1e-12;

/// Hard cap on recursion depth for interval integration.
const MAX_RECURSION: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct SelfSimilarParams {
    pub n: usize,
    pub a: Vec<f64>,
    pub dprime: Vec<f64>,
    pub betaprime: Vec<f64>,
    pub p0: f64,
    pub p1: f64,
}

#[derive(Deserialize)]
struct RawParams {
    n: usize,
    a: Vec<f64>,
    dprime: Vec<f64>,
    betaprime: Vec<f64>,
    p0: f64,
    p1: f64,
}

impl TryFrom<RawParams> for SelfSimilarParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        SelfSimilarParams::new(raw.a, raw.dprime, raw.betaprime, raw.p0, raw.p1).and_then(|p| {
            if p.n != raw.n {
                Err(Error::InvalidParameters(format!(
                    "n = {} but {} widths were given",
                    raw.n, p.n
                )))
            } else {
                Ok(p)
            }
        })
    }
}

/// Value of a self-similar function together with a guaranteed error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub error_bound: f64,
}

/// One cell of the IFS tree.
///
/// On the cell `[x0, x0 + width]` the function satisfies
/// `P(x0 + width * t) = shift + weight * P(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub x0: f64,
    pub width: f64,
    pub weight: f64,
    pub shift: f64,
    /// Image of the boundary value `p0` under the cell map.
    pub offset: f64,
    pub level: usize,
}

impl Cell {
    pub fn x1(&self) -> f64 {
        self.x0 + self.width
    }
}

impl SelfSimilarParams {
    pub fn new(
        a: Vec<f64>,
        dprime: Vec<f64>,
        betaprime: Vec<f64>,
        p0: f64,
        p1: f64,
    ) -> Result<Self> {
        let params = SelfSimilarParams {
            n: a.len(),
            a,
            dprime,
            betaprime,
            p0,
            p1,
        };
        params.validate()?;
        Ok(params)
    }

    /// The classical devil's staircase.
    pub fn cantor_ladder() -> Self {
        let third = 1.0 / 3.0;
        SelfSimilarParams {
            n: 3,
            a: vec![third; 3],
            dprime: vec![0.5, 0.0, 0.5],
            betaprime: vec![0.0, 0.5, 0.5],
            p0: 0.0,
            p1: 1.0,
        }
    }

    /// The identity `P(x) = x` written as a self-similar function with `n`
    /// equal pieces.
    pub fn identity(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameters("identity needs n >= 2".into()));
        }
        let w = 1.0 / n as f64;
        let beta = (0..n).map(|i| i as f64 * w).collect();
        SelfSimilarParams::new(vec![w; n], vec![w; n], beta, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 {
            return Err(Error::InvalidParameters(format!("need n >= 2 pieces, got {n}")));
        }
        if self.a.len() != n || self.dprime.len() != n || self.betaprime.len() != n {
            return Err(Error::InvalidParameters(format!(
                "lengths of a, dprime, betaprime must all equal n = {n}"
            )));
        }
        let all = self
            .a
            .iter()
            .chain(&self.dprime)
            .chain(&self.betaprime)
            .chain([&self.p0, &self.p1]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("non-finite parameter".into()));
        }
        if self.a.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidParameters("piece widths must be positive".into()));
        }
        let total: f64 = self.a.iter().sum();
        if (total - 1.0).abs() > PARAM_TOL {
            return Err(Error::InvalidParameters(format!(
                "piece widths sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Left endpoints `alpha_i`, with a trailing exact `1.0`.
    pub fn alpha(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n + 1);
        let mut acc = 0.0;
        for &w in &self.a {
            out.push(acc);
            acc += w;
        }
        out.push(1.0);
        out
    }

    pub fn max_abs_scaling(&self) -> f64 {
        self.dprime.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// `P(0+)`, forced by the first cell map.
    pub fn left_limit(&self) -> f64 {
        fixed_point(self.betaprime[0], self.dprime[0], self.p0)
    }

    /// `P(1-)`, forced by the last cell map.
    pub fn right_limit(&self) -> f64 {
        let k = self.n - 1;
        fixed_point(self.betaprime[k], self.dprime[k], self.p1)
    }

    /// Jumps of `P` at the interior junctions `alpha_2, ..., alpha_n`, as
    /// `(position, jump)` pairs in left-to-right order.
    pub fn junction_jumps(&self) -> Vec<(f64, f64)> {
        let alpha = self.alpha();
        let (left, right) = (self.left_limit(), self.right_limit());
        (0..self.n - 1)
            .map(|b| {
                let before = self.betaprime[b] + self.dprime[b] * right;
                let after = self.betaprime[b + 1] + self.dprime[b + 1] * left;
                (alpha[b + 1], after - before)
            })
            .collect()
    }

    /// Point masses of `dP` at `0` and `1` caused by boundary values that
    /// differ from the one-sided limits.
    pub fn boundary_atoms(&self) -> (f64, f64) {
        (self.left_limit() - self.p0, self.p1 - self.right_limit())
    }

    /// True when `P` has no jumps at all, endpoints included.
    pub fn is_continuous(&self, tol: f64) -> bool {
        let (b0, b1) = self.boundary_atoms();
        b0.abs() <= tol
            && b1.abs() <= tol
            && self.junction_jumps().iter().all(|(_, j)| j.abs() <= tol)
    }

    /// Bounds `[lo, hi]` containing every interior value of `P`, or `None`
    /// when the substitution is not a sup-norm contraction.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        if self.max_abs_scaling() >= 1.0 {
            return None;
        }
        let (l, r) = (self.left_limit(), self.right_limit());
        let (mut lo, mut hi) = (l.min(r), l.max(r));
        for _ in 0..10_000 {
            let (mut nlo, mut nhi) = (lo, hi);
            for (&b, &d) in self.betaprime.iter().zip(&self.dprime) {
                let (u, v) = (b + d * lo, b + d * hi);
                nlo = nlo.min(u.min(v));
                nhi = nhi.max(u.max(v));
            }
            let grew = (nlo - lo).abs() + (nhi - hi).abs();
            lo = nlo;
            hi = nhi;
            if grew <= 1e-15 * (1.0 + hi.abs() + lo.abs()) {
                break;
            }
        }
        // The iteration approaches the invariant interval from inside; pad by
        // the geometric tail of the last increment.
        let m = self.max_abs_scaling();
        let pad = 1e-14 * (1.0 + hi.abs() + lo.abs()) / (1.0 - m);
        Some((lo - pad, hi + pad))
    }

    /// A priori oscillation bound of `P` over the interior of `[0, 1]`.
    pub fn oscillation(&self) -> f64 {
        self.value_range().map_or(f64::INFINITY, |(lo, hi)| hi - lo)
    }

    /// Evaluate `P(x)` by following `depth` digits of the cell expansion.
    pub fn eval(&self, x: f64, depth: usize) -> Result<Evaluation> {
        if !(0.0..=1.0).contains(&x) || x.is_nan() {
            return Err(Error::Domain { value: x });
        }
        if depth == 0 {
            return Err(Error::InvalidParameters("evaluation depth must be >= 1".into()));
        }
        if x == 0.0 {
            return Ok(Evaluation { value: self.p0, error_bound: 0.0 });
        }
        if x == 1.0 {
            return Ok(Evaluation { value: self.p1, error_bound: 0.0 });
        }
        let alpha = self.alpha();
        let (left, right) = (self.left_limit(), self.right_limit());
        let (mut shift, mut weight, mut t) = (0.0, 1.0, x);
        for _ in 0..depth {
            let i = locate(&alpha, t);
            shift += weight * self.betaprime[i];
            weight *= self.dprime[i];
            t = (t - alpha[i]) / self.a[i];
            if weight == 0.0 {
                return Ok(Evaluation { value: shift, error_bound: 0.0 });
            }
            if t >= 1.0 {
                return Ok(Evaluation { value: shift + weight * right, error_bound: 0.0 });
            }
            if t <= 0.0 {
                return Ok(Evaluation { value: shift + weight * left, error_bound: 0.0 });
            }
        }
        Ok(Evaluation {
            value: shift + weight * (left + (right - left) * t),
            error_bound: weight.abs() * self.oscillation(),
        })
    }

    /// All `n^depth` cells of the IFS tree at the given depth, left to right.
    pub fn cells(&self, depth: usize) -> Vec<Cell> {
        let mut out = Vec::new();
        self.walk_cells(depth, false, &mut out);
        out
    }

    /// Cells of the IFS tree down to `depth`, where cells with zero weight
    /// product are not subdivided further (the function is constant there).
    pub fn pruned_cells(&self, depth: usize) -> Vec<Cell> {
        let mut out = Vec::new();
        self.walk_cells(depth, true, &mut out);
        out
    }

    fn walk_cells(&self, depth: usize, prune: bool, out: &mut Vec<Cell>) {
        let alpha = self.alpha();
        let root = Cell {
            x0: 0.0,
            width: 1.0,
            weight: 1.0,
            shift: 0.0,
            offset: self.p0,
            level: 0,
        };
        let mut stack = vec![root];
        while let Some(cell) = stack.pop() {
            if cell.level == depth || (prune && cell.weight == 0.0) {
                out.push(cell);
                continue;
            }
            for i in (0..self.n).rev() {
                let x0 = cell.x0 + cell.width * alpha[i];
                let width = if i + 1 == self.n {
                    cell.x1() - x0
                } else {
                    cell.width * self.a[i]
                };
                let shift = cell.shift + cell.weight * self.betaprime[i];
                let weight = cell.weight * self.dprime[i];
                stack.push(Cell {
                    x0,
                    width,
                    weight,
                    shift,
                    offset: shift + weight * self.p0,
                    level: cell.level + 1,
                });
            }
        }
    }

    /// Moments `int_(0,1) x^k dP` of the interior Stieltjes measure (boundary
    /// point masses excluded), `k = 0..=order`.
    pub fn interior_moments(&self, order: usize) -> Result<Vec<f64>> {
        let alpha = self.alpha();
        let jumps = self.junction_jumps();
        let mut mu = vec![self.right_limit() - self.left_limit()];
        for k in 1..=order {
            let denom = 1.0
                - self
                    .dprime
                    .iter()
                    .zip(&self.a)
                    .map(|(d, a)| d * a.powi(k as i32))
                    .sum::<f64>();
            if denom.abs() <= PARAM_TOL {
                return Err(Error::DegenerateMoments { order: k, residual: denom.abs() });
            }
            let mut rhs = 0.0;
            for i in 0..self.n {
                let mut s = 0.0;
                for (j, m) in mu.iter().enumerate() {
                    s += binomial(k, j) * self.a[i].powi(j as i32) * alpha[i].powi((k - j) as i32) * m;
                }
                rhs += self.dprime[i] * s;
            }
            rhs += jumps.iter().map(|(x, j)| j * x.powi(k as i32)).sum::<f64>();
            mu.push(rhs / denom);
        }
        Ok(mu)
    }

    /// Moments `int_[0,1] x^k dP`, `k = 0..=order`, including the boundary
    /// point masses.
    pub fn moments(&self, order: usize) -> Result<Vec<f64>> {
        let mut mu = self.interior_moments(order)?;
        let (b0, b1) = self.boundary_atoms();
        mu[0] += b0;
        for m in mu.iter_mut() {
            *m += b1;
        }
        Ok(mu)
    }
}

fn fixed_point(beta: f64, d: f64, fallback: f64) -> f64 {
    if (1.0 - d).abs() <= PARAM_TOL {
        fallback
    } else {
        beta / (1.0 - d)
    }
}

/// Index of the cell containing `t` under the left-cell convention.
fn locate(alpha: &[f64], t: f64) -> usize {
    let n = alpha.len() - 1;
    // first i with t <= alpha[i + 1]
    let i = alpha[1..].partition_point(|&edge| edge < t);
    i.min(n - 1)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Precomputed data for integrating polynomials against `scale * dP`.
#[derive(Debug, Clone)]
pub struct SelfSimilarIntegrator {
    params: SelfSimilarParams,
    scale: f64,
    alpha: Vec<f64>,
    mu: [f64; 3],
    jumps: Vec<(f64, f64)>,
    boundary: (f64, f64),
    tail: f64,
}

impl SelfSimilarIntegrator {
    pub fn new(params: &SelfSimilarParams, scale: f64) -> Result<Self> {
        let m = params.interior_moments(2)?;
        let jumps = params
            .junction_jumps()
            .into_iter()
            .filter(|(_, j)| *j != 0.0)
            .collect();
        let tail = params.right_limit().abs().max(params.left_limit().abs()) + params.oscillation();
        Ok(SelfSimilarIntegrator {
            params: params.clone(),
            scale,
            alpha: params.alpha(),
            mu: [m[0], m[1], m[2]],
            jumps,
            boundary: params.boundary_atoms(),
            tail,
        })
    }

    /// Local moments `int s^k scale*dP`, `k = 0, 1, 2`, over `[x0, x1)` (or
    /// `[x0, x1]` when `closed_right`), in the local coordinate
    /// `s = (x - x0) / (x1 - x0)`.
    pub fn local_moments(&self, x0: f64, x1: f64, closed_right: bool) -> [f64; 3] {
        let h = x1 - x0;
        let mut acc = [0.0; 3];
        let tol = 1e-13;
        let inside = |p: f64| p >= x0 - tol && (p < x1 - tol || (closed_right && p <= x1 + tol));
        let add_atom = |acc: &mut [f64; 3], p: f64, w: f64| {
            let s = (p - x0) / h;
            acc[0] += w;
            acc[1] += w * s;
            acc[2] += w * s * s;
        };
        let (b0, b1) = self.boundary;
        if b0 != 0.0 && inside(0.0) {
            add_atom(&mut acc, 0.0, b0);
        }
        if b1 != 0.0 && inside(1.0) {
            add_atom(&mut acc, 1.0, b1);
        }

        // (x0, width, weight, depth)
        let mut stack = vec![(0.0_f64, 1.0_f64, 1.0_f64, 0usize)];
        while let Some((c0, w, d, level)) = stack.pop() {
            let c1 = c0 + w;
            // a cell is assigned by its start, so tiny cells at a cut land
            // in exactly one of the two neighbouring intervals
            if d == 0.0 || (c1 <= x0 + tol && c0 < x0 - tol) || c0 >= x1 - tol {
                continue;
            }
            if c0 >= x0 - tol && c1 <= x1 + tol {
                // whole cell: affine image of the interior measure
                let (sig0, sig1) = ((c0 - x0) / h, w / h);
                let [m0, m1, m2] = self.mu;
                acc[0] += d * m0;
                acc[1] += d * (sig0 * m0 + sig1 * m1);
                acc[2] += d * (sig0 * sig0 * m0 + 2.0 * sig0 * sig1 * m1 + sig1 * sig1 * m2);
                continue;
            }
            if level >= MAX_RECURSION || (d.abs() * self.tail) < 1e-17 {
                // partial cell below resolution: spread its mass uniformly
                let lo = c0.max(x0);
                let hi = c1.min(x1);
                let frac = ((hi - lo) / w).clamp(0.0, 1.0);
                let mass = d * self.mu[0] * frac;
                let (s0, s1) = ((lo - x0) / h, (hi - x0) / h);
                let len = s1 - s0;
                if len > 0.0 {
                    acc[0] += mass;
                    acc[1] += mass * (s0 + s1) / 2.0;
                    acc[2] += mass * (s0 * s0 + s0 * s1 + s1 * s1) / 3.0;
                }
                continue;
            }
            for &(p, j) in &self.jumps {
                let pos = c0 + w * p;
                if inside(pos) {
                    add_atom(&mut acc, pos, d * j);
                }
            }
            for i in 0..self.params.n {
                let cx = c0 + w * self.alpha[i];
                let cw = if i + 1 == self.params.n { c1 - cx } else { w * self.params.a[i] };
                stack.push((cx, cw, d * self.params.dprime[i], level + 1));
            }
        }
        acc.map(|v| v * self.scale)
    }
}

/// A nondecreasing self-similar function with `P(0) = 0`, `P(1) = 1`, used as
/// the primitive `R` of the coefficient `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SelfSimilarParams", into = "SelfSimilarParams")]
pub struct MonotonePrimitive {
    params: SelfSimilarParams,
}

impl TryFrom<SelfSimilarParams> for MonotonePrimitive {
    type Error = Error;

    fn try_from(params: SelfSimilarParams) -> Result<Self> {
        MonotonePrimitive::new(params)
    }
}

impl From<MonotonePrimitive> for SelfSimilarParams {
    fn from(m: MonotonePrimitive) -> Self {
        m.params
    }
}

impl MonotonePrimitive {
    pub fn new(params: SelfSimilarParams) -> Result<Self> {
        params.validate()?;
        let d = &params.dprime;
        if d.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParameters("weights of a monotone primitive must be >= 0".into()));
        }
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > PARAM_TOL {
            return Err(Error::InvalidParameters(format!("weights sum to {total}, expected 1")));
        }
        if d.iter().any(|&w| w >= 1.0 - PARAM_TOL) {
            return Err(Error::InvalidParameters(
                "a single weight equal to 1 makes the primitive jump at an endpoint".into(),
            ));
        }
        let mut acc = 0.0;
        for (i, (&b, &w)) in params.betaprime.iter().zip(d).enumerate() {
            if (b - acc).abs() > PARAM_TOL {
                return Err(Error::InvalidParameters(format!(
                    "offset {i} is {b}, expected cumulative weight {acc}"
                )));
            }
            acc += w;
        }
        if params.p0.abs() > PARAM_TOL || (params.p1 - 1.0).abs() > PARAM_TOL {
            return Err(Error::InvalidParameters("monotone primitive needs P(0)=0, P(1)=1".into()));
        }
        Ok(MonotonePrimitive { params })
    }

    /// Build from widths and weights; offsets are the cumulative weights.
    pub fn from_weights(a: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        let mut acc = 0.0;
        let beta = d
            .iter()
            .map(|w| {
                let b = acc;
                acc += w;
                b
            })
            .collect();
        MonotonePrimitive::new(SelfSimilarParams::new(a, d, beta, 0.0, 1.0)?)
    }

    pub fn cantor() -> Self {
        MonotonePrimitive { params: SelfSimilarParams::cantor_ladder() }
    }

    /// `R(x) = x` with `n` equal pieces.
    pub fn lebesgue(n: usize) -> Result<Self> {
        MonotonePrimitive::new(SelfSimilarParams::identity(n)?)
    }

    pub fn params(&self) -> &SelfSimilarParams {
        &self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params.dprime
    }

    /// Optional continuity check. Valid monotone primitives are continuous,
    /// so this only fails on parameter sets built by hand past validation.
    pub fn check_continuity(&self) -> Result<()> {
        if self.params.is_continuous(1e-10) {
            Ok(())
        } else {
            Err(Error::Validation("monotone primitive has a jump".into()))
        }
    }
}

/// `validate_contraction`: existence of the self-similar `P` in `L_2(dR)`
/// holds iff `sum d_i |d'_i|^2 < 1`.
pub fn validate_contraction(r: &MonotonePrimitive, p: &SelfSimilarParams) -> Result<bool> {
    check_shared_ifs(r.params(), p)?;
    let s: f64 = r
        .weights()
        .iter()
        .zip(&p.dprime)
        .map(|(d, dp)| d * dp * dp)
        .sum();
    Ok(s < 1.0)
}

pub(crate) fn check_shared_ifs(r: &SelfSimilarParams, p: &SelfSimilarParams) -> Result<()> {
    if r.n != p.n {
        return Err(Error::ParameterMismatch(format!("n differs: {} vs {}", r.n, p.n)));
    }
    if r.a.iter().zip(&p.a).any(|(x, y)| (x - y).abs() > PARAM_TOL) {
        return Err(Error::ParameterMismatch("piece widths differ".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewise")]
pub struct PiecewiseLinear {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPiecewise {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawPiecewise> for PiecewiseLinear {
    type Error = Error;

    fn try_from(raw: RawPiecewise) -> Result<Self> {
        PiecewiseLinear::new(raw.breakpoints, raw.values)
    }
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != values.len() {
            return Err(Error::InvalidParameters(
                "need at least two breakpoints and one value per breakpoint".into(),
            ));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameters("breakpoints must start at 0 and end at 1".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameters("breakpoints must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("non-finite value".into()));
        }
        Ok(PiecewiseLinear { breakpoints, values })
    }

    pub fn identity() -> Self {
        PiecewiseLinear { breakpoints: vec![0.0, 1.0], values: vec![0.0, 1.0] }
    }

    pub fn pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { value: x });
        }
        let b = &self.breakpoints;
        let j = b.partition_point(|&p| p <= x).clamp(1, b.len() - 1) - 1;
        let (x0, x1) = (b[j], b[j + 1]);
        let (v0, v1) = (self.values[j], self.values[j + 1]);
        Ok(v0 + (v1 - v0) * (x - x0) / (x1 - x0))
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Apply the IFS substitution operator `k` times to `seed`.
///
/// At shared cell endpoints the left cell's value is kept, so a
/// discontinuous fixed point is approximated by its left-continuous version.
pub fn iterate(params: &SelfSimilarParams, k: usize, seed: &PiecewiseLinear) -> Result<PiecewiseLinear> {
    params.validate()?;
    let alpha = params.alpha();
    let mut cur = seed.clone();
    for _ in 0..k {
        let m = cur.breakpoints.len();
        let mut xs = Vec::with_capacity(params.n * (m - 1) + 1);
        let mut vs = Vec::with_capacity(xs.capacity());
        for i in 0..params.n {
            let start = if i == 0 { 0 } else { 1 };
            for j in start..m {
                let x = if j + 1 == m {
                    alpha[i + 1]
                } else {
                    alpha[i] + params.a[i] * cur.breakpoints[j]
                };
                let v = params.betaprime[i] + params.dprime[i] * cur.values[j];
                xs.push(x);
                vs.push(v);
            }
        }
        cur = PiecewiseLinear { breakpoints: xs, values: vs };
    }
    Ok(cur)
}

/// A monotone piece of a primitive `R`: `R` maps `[x0, x1]` onto `[t0, t1]`.
/// Flat pieces have `t0 == t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
}

impl Segment {
    pub fn is_flat(&self) -> bool {
        self.t1 <= self.t0
    }
}

/// Nondecreasing maps of `[0, 1]` onto `[0, 1]` that can serve as the
/// primitive `R` in the substitution `y = u o R`.
pub trait MonotoneMap: Send + Sync {
    fn value(&self, x: f64) -> f64;

    /// Left-to-right decomposition into monotone pieces at resolution
    /// `depth`. Flat pieces are the detected plateaus.
    fn segments(&self, depth: usize) -> Vec<Segment>;

    /// `inf { x : R(x) >= t }`, resolved to `depth`.
    fn generalized_inverse(&self, t: f64, depth: usize) -> f64;

    /// `R(1) - R(0)`, the total mass of `r`.
    fn total_mass(&self) -> f64 {
        self.value(1.0) - self.value(0.0)
    }

    /// Whether the map is exactly `x -> x`.
    fn is_identity(&self) -> bool {
        false
    }
}

impl MonotoneMap for MonotonePrimitive {
    fn value(&self, x: f64) -> f64 {
        self.params.eval(x.clamp(0.0, 1.0), 64).map(|e| e.value).unwrap_or(f64::NAN)
    }

    fn segments(&self, depth: usize) -> Vec<Segment> {
        self.params
            .pruned_cells(depth)
            .into_iter()
            .map(|c| Segment { x0: c.x0, x1: c.x1(), t0: c.offset, t1: c.offset + c.weight })
            .collect()
    }

    fn is_identity(&self) -> bool {
        self.params.a == self.params.dprime
    }

    fn generalized_inverse(&self, t: f64, depth: usize) -> f64 {
        let p = &self.params;
        let t = t.clamp(0.0, 1.0);
        if t == 0.0 {
            return 0.0;
        }
        let alpha = p.alpha();
        let (mut x0, mut w, mut t) = (0.0, 1.0, t);
        for _ in 0..depth.max(1) {
            // first cell whose cumulative weight reaches t
            let mut i = p.n - 1;
            for k in 0..p.n {
                if p.betaprime[k] + p.dprime[k] >= t && p.dprime[k] > 0.0 {
                    i = k;
                    break;
                }
            }
            x0 += w * alpha[i];
            w *= p.a[i];
            t = ((t - p.betaprime[i]) / p.dprime[i]).clamp(0.0, 1.0);
            if t == 0.0 {
                return x0;
            }
        }
        x0 + w * t
    }
}

impl MonotoneMap for PiecewiseLinear {
    fn value(&self, x: f64) -> f64 {
        self.eval(x.clamp(0.0, 1.0)).unwrap_or(f64::NAN)
    }

    fn segments(&self, depth: usize) -> Vec<Segment> {
        let res = 0.5_f64.powi(depth as i32);
        let mut out = Vec::new();
        for j in 0..self.pieces() {
            let (x0, x1) = (self.breakpoints[j], self.breakpoints[j + 1]);
            let (t0, t1) = (self.values[j], self.values[j + 1]);
            if t1 <= t0 {
                out.push(Segment { x0, x1, t0, t1: t0 });
                continue;
            }
            let parts = ((t1 - t0) / res).ceil().max(1.0) as usize;
            for s in 0..parts {
                let f0 = s as f64 / parts as f64;
                let f1 = (s + 1) as f64 / parts as f64;
                let lerp = |a: f64, b: f64, f: f64| if f == 1.0 { b } else { a + (b - a) * f };
                out.push(Segment {
                    x0: lerp(x0, x1, f0),
                    x1: lerp(x0, x1, f1),
                    t0: lerp(t0, t1, f0),
                    t1: lerp(t0, t1, f1),
                });
            }
        }
        out
    }

    fn is_identity(&self) -> bool {
        self.breakpoints == self.values
    }

    fn generalized_inverse(&self, t: f64, _depth: usize) -> f64 {
        let v = &self.values;
        if t <= v[0] {
            return 0.0;
        }
        let j = v.partition_point(|&y| y < t);
        if j >= v.len() {
            return 1.0;
        }
        let (x0, x1) = (self.breakpoints[j - 1], self.breakpoints[j]);
        let (v0, v1) = (v[j - 1], v[j]);
        x0 + (x1 - x0) * (t - v0) / (v1 - v0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_r() -> MonotonePrimitive {
        MonotonePrimitive::from_weights(vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]).unwrap()
    }

    #[test]
    fn contraction_examples() {
        let r = MonotonePrimitive::cantor();
        let p = SelfSimilarParams::cantor_ladder();
        assert!(validate_contraction(&r, &p).unwrap());

        let p2 = SelfSimilarParams::new(vec![1.0 / 3.0; 3], vec![2.0; 3], vec![0.0; 3], 0.0, 0.0).unwrap();
        assert!(!validate_contraction(&uniform_r(), &p2).unwrap());

        let zero = SelfSimilarParams::new(vec![1.0 / 3.0; 3], vec![0.0; 3], vec![0.0; 3], 0.0, 0.0).unwrap();
        assert!(validate_contraction(&uniform_r(), &zero).unwrap());
    }

    #[test]
    fn contraction_rejects_mismatch() {
        let r = MonotonePrimitive::lebesgue(2).unwrap();
        let p = SelfSimilarParams::cantor_ladder();
        assert!(matches!(validate_contraction(&r, &p), Err(Error::ParameterMismatch(_))));
    }

    #[test]
    fn cantor_eval_examples() {
        let p = SelfSimilarParams::cantor_ladder();
        assert_eq!(p.eval(0.0, 5).unwrap().value, 0.0);
        assert_eq!(p.eval(1.0, 5).unwrap().value, 1.0);
        let mid = p.eval(0.5, 5).unwrap();
        assert_eq!(mid.value, 0.5);
        assert_eq!(mid.error_bound, 0.0);
        let ninth = p.eval(1.0 / 9.0, 2).unwrap();
        assert_abs_diff_eq!(ninth.value, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn eval_domain_error() {
        let p = SelfSimilarParams::cantor_ladder();
        assert!(matches!(p.eval(1.5, 3), Err(Error::Domain { .. })));
        assert!(matches!(p.eval(-0.1, 3), Err(Error::Domain { .. })));
    }

    #[test]
    fn eval_error_bound_is_honest() {
        let p = SelfSimilarParams::cantor_ladder();
        for &x in &[0.05, 0.2, 0.71, 0.93] {
            let exact = p.eval(x, 60).unwrap().value;
            let rough = p.eval(x, 3).unwrap();
            assert!((rough.value - exact).abs() <= rough.error_bound + 1e-15);
        }
    }

    #[test]
    fn iterate_examples() {
        let p = SelfSimilarParams::cantor_ladder();
        let id = PiecewiseLinear::identity();
        assert_eq!(iterate(&p, 0, &id).unwrap(), id);
        let one = iterate(&p, 1, &id).unwrap();
        assert_eq!(one.breakpoints.len(), 4);
        let expect = [(0.0, 0.0), (1.0 / 3.0, 0.5), (2.0 / 3.0, 0.5), (1.0, 1.0)];
        for (k, (x, v)) in expect.iter().enumerate() {
            assert_abs_diff_eq!(one.breakpoints[k], *x, epsilon = 1e-15);
            assert_abs_diff_eq!(one.values[k], *v, epsilon = 1e-15);
        }
    }

    #[test]
    fn iterate_sup_distance_decays() {
        let p = SelfSimilarParams::cantor_ladder();
        let id = PiecewiseLinear::identity();
        for k in [1usize, 3, 5] {
            let pk = iterate(&p, k, &id).unwrap();
            let bound = 0.5_f64.powi(k as i32);
            let mut worst: f64 = 0.0;
            for s in 0..=2000 {
                let x = s as f64 / 2000.0;
                let exact = p.eval(x, 60).unwrap().value;
                worst = worst.max((pk.eval(x).unwrap() - exact).abs());
            }
            assert!(worst <= bound + 1e-12, "k={k}: {worst} > {bound}");
        }
    }

    #[test]
    fn cantor_moments() {
        let p = SelfSimilarParams::cantor_ladder();
        let mu = p.moments(2).unwrap();
        assert_abs_diff_eq!(mu[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mu[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mu[2], 3.0 / 8.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_moments_name_order() {
        // sum d' a = 1 at order 1
        let p = SelfSimilarParams::new(vec![0.5, 0.5], vec![2.0, 0.0], vec![0.0, 0.0], 0.0, 0.0).unwrap();
        assert_eq!(
            p.interior_moments(2).unwrap_err(),
            Error::DegenerateMoments { order: 1, residual: 0.0 }
        );
    }

    #[test]
    fn cells_examples() {
        let p = SelfSimilarParams::cantor_ladder();
        let c0 = p.cells(0);
        assert_eq!(c0.len(), 1);
        assert_eq!((c0[0].x0, c0[0].width, c0[0].weight, c0[0].offset), (0.0, 1.0, 1.0, 0.0));

        let c1 = p.cells(1);
        let w: Vec<f64> = c1.iter().map(|c| c.weight).collect();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert_abs_diff_eq!(c1[1].x0, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c1[2].x1(), 1.0, epsilon = 1e-15);

        let c2 = p.cells(2);
        assert_eq!(c2.len(), 9);
        assert_abs_diff_eq!(c2[0].weight, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(c2[0].width, 1.0 / 9.0, epsilon = 1e-15);
        // offsets reproduce P at left endpoints
        for c in &c2 {
            let v = if c.x0 == 0.0 { 0.0 } else { p.eval(c.x0, 60).unwrap().value };
            assert_abs_diff_eq!(c.offset, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn pruned_cells_skip_plateaus() {
        let p = SelfSimilarParams::cantor_ladder();
        let cells = p.pruned_cells(3);
        // 2^3 live cells and 1 + 2 + 4 plateaus
        assert_eq!(cells.len(), 15);
        let total: f64 = cells.iter().map(|c| c.width).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn monotone_validation() {
        assert!(MonotonePrimitive::from_weights(vec![0.5, 0.5], vec![0.7, 0.4]).is_err());
        assert!(MonotonePrimitive::from_weights(vec![0.5, 0.5], vec![-0.1, 1.1]).is_err());
        let bad_beta = SelfSimilarParams::new(vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0, 0.4], 0.0, 1.0).unwrap();
        assert!(MonotonePrimitive::new(bad_beta).is_err());
        MonotonePrimitive::cantor().check_continuity().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let p = SelfSimilarParams::cantor_ladder();
        let s = serde_json::to_string(&p).unwrap();
        let back: SelfSimilarParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let bad = r#"{"n":2,"a":[0.5,0.6],"dprime":[0,0],"betaprime":[0,0],"p0":0,"p1":0}"#;
        assert!(serde_json::from_str::<SelfSimilarParams>(bad).is_err());
    }

    #[test]
    fn generalized_inverse_examples() {
        let id = MonotonePrimitive::lebesgue(2).unwrap();
        for &t in &[0.0, 0.3, 0.5, 0.77, 1.0] {
            assert_abs_diff_eq!(id.generalized_inverse(t, 60), t, epsilon = 1e-12);
        }
        let c = MonotonePrimitive::cantor();
        assert_abs_diff_eq!(c.generalized_inverse(0.5, 40), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.generalized_inverse(0.25, 40), 1.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn local_moments_match_global() {
        let p = SelfSimilarParams::cantor_ladder();
        let integ = SelfSimilarIntegrator::new(&p, 1.0).unwrap();
        let m = integ.local_moments(0.0, 1.0, true);
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m[2], 0.375, epsilon = 1e-14);
        // a non-aligned split adds up
        let a = integ.local_moments(0.0, 0.4, false);
        let b = integ.local_moments(0.4, 1.0, true);
        assert_abs_diff_eq!(a[0] + b[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cuts_do_not_lose_tiny_cells() {
        // scalings well above the widths pile mass onto cells far below 1e-13
        let p = SelfSimilarParams::new(
            vec![0.491552989549738, 0.265186401894773, 0.24326060855548903],
            vec![0.6495904201581534, 0.6090121017642451, 0.7840240219989629],
            vec![0.0, 0.0, 0.12783874836562287],
            0.0,
            0.0,
        )
        .unwrap();
        let integ = SelfSimilarIntegrator::new(&p, 1.0).unwrap();
        let c = 0.19168325619435594;
        let whole = integ.local_moments(0.0, 1.0, true)[0];
        let split = integ.local_moments(0.0, c, false)[0] + integ.local_moments(c, 1.0, true)[0];
        assert_abs_diff_eq!(whole, split, epsilon = 1e-14);
    }
}
