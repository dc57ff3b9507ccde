//! Composite coefficient measures: finitely many point masses, a
//! piecewise-constant density, and an optional scaled self-similar part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selfsim::{MonotoneMap, SelfSimilarIntegrator, SelfSimilarParams};

/// Positions closer than this are treated as the same point.
pub const POINT_TOL: f64 = 1e-12;

const MAX_SPLIT_DEPTH: usize = 60;

/// Piecewise-constant function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStep")]
pub struct StepFunction {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawStep {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawStep> for StepFunction {
    type Error = Error;

    fn try_from(raw: RawStep) -> Result<Self> {
        StepFunction::new(raw.breaks, raw.values)
    }
}

impl StepFunction {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() < 2 || values.len() + 1 != breaks.len() {
            return Err(Error::InvalidParameters(
                "step function needs k+1 breaks for k values".into(),
            ));
        }
        if breaks[0] != 0.0 || *breaks.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameters("breaks must start at 0 and end at 1".into()));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameters("breaks must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("non-finite density value".into()));
        }
        Ok(StepFunction { breaks, values })
    }

    pub fn constant(c: f64) -> Self {
        StepFunction { breaks: vec![0.0, 1.0], values: vec![c] }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let j = self.breaks.partition_point(|&b| b <= x).clamp(1, self.values.len()) - 1;
        self.values[j]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `int_{x0}^{x1} f dx`.
    pub fn integral(&self, x0: f64, x1: f64) -> f64 {
        self.local_moments(x0, x1)[0]
    }

    pub fn total(&self) -> f64 {
        self.integral(0.0, 1.0)
    }

    pub fn total_abs(&self) -> f64 {
        self.breaks
            .windows(2)
            .zip(&self.values)
            .map(|(w, v)| (w[1] - w[0]) * v.abs())
            .sum()
    }

    /// `int s^k f dx` over `[x0, x1]` with `s = (x - x0)/(x1 - x0)`.
    pub fn local_moments(&self, x0: f64, x1: f64) -> [f64; 3] {
        let h = x1 - x0;
        let mut out = [0.0; 3];
        if h <= 0.0 {
            return out;
        }
        let start = self.breaks.partition_point(|&b| b <= x0).saturating_sub(1);
        for j in start..self.values.len() {
            let (b0, b1) = (self.breaks[j], self.breaks[j + 1]);
            if b0 >= x1 {
                break;
            }
            let lo = b0.max(x0);
            let hi = b1.min(x1);
            if hi <= lo || self.values[j] == 0.0 {
                continue;
            }
            let (s0, s1) = ((lo - x0) / h, (hi - x0) / h);
            let c = self.values[j] * h;
            out[0] += c * (s1 - s0);
            out[1] += c * (s1 * s1 - s0 * s0) / 2.0;
            out[2] += c * (s1 * s1 * s1 - s0 * s0 * s0) / 3.0;
        }
        out
    }
}

/// Self-similar component `scale * dP`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarPart {
    #[serde(flatten)]
    pub params: SelfSimilarParams,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct CompositeMeasure {
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<StepFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selfsim: Option<SelfSimilarPart>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    #[serde(default)]
    atoms: Vec<(f64, f64)>,
    #[serde(default)]
    density: Option<StepFunction>,
    #[serde(default)]
    selfsim: Option<SelfSimilarPart>,
}

impl TryFrom<RawMeasure> for CompositeMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        CompositeMeasure::new(raw.atoms, raw.density, raw.selfsim)
    }
}

impl CompositeMeasure {
    /// Atoms are sorted by position; duplicates are rejected.
    pub fn new(
        mut atoms: Vec<(f64, f64)>,
        density: Option<StepFunction>,
        selfsim: Option<SelfSimilarPart>,
    ) -> Result<Self> {
        if atoms.iter().any(|(x, w)| !(0.0..=1.0).contains(x) || !w.is_finite()) {
            return Err(Error::InvalidParameters("atom positions must lie in [0, 1]".into()));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        if atoms.windows(2).any(|w| w[1].0 - w[0].0 <= POINT_TOL) {
            return Err(Error::InvalidParameters("atom positions must be distinct".into()));
        }
        if let Some(s) = &selfsim {
            s.params.validate()?;
            if !s.scale.is_finite() {
                return Err(Error::InvalidParameters("non-finite self-similar scale".into()));
            }
        }
        Ok(CompositeMeasure { atoms, density, selfsim })
    }

    pub fn zero() -> Self {
        CompositeMeasure::default()
    }

    /// `c` times Lebesgue measure.
    pub fn constant(c: f64) -> Self {
        CompositeMeasure { density: Some(StepFunction::constant(c)), ..Default::default() }
    }

    pub fn lebesgue() -> Self {
        Self::constant(1.0)
    }

    pub fn point_masses(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms, None, None)
    }

    pub fn from_density(density: StepFunction) -> Self {
        CompositeMeasure { density: Some(density), ..Default::default() }
    }

    pub fn from_selfsim(params: SelfSimilarParams, scale: f64) -> Self {
        CompositeMeasure { selfsim: Some(SelfSimilarPart { params, scale }), ..Default::default() }
    }

    pub fn cantor() -> Self {
        Self::from_selfsim(SelfSimilarParams::cantor_ladder(), 1.0)
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.1 == 0.0)
            && self.density.as_ref().is_none_or(StepFunction::is_zero)
            && self.selfsim.as_ref().is_none_or(|s| s.scale == 0.0)
    }

    pub fn atom_positions(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.0).collect()
    }

    /// Measure of `[0, x]`. The error is bounded by the self-similar part's
    /// evaluation bound at `depth`.
    pub fn cdf(&self, x: f64, depth: usize) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { value: x });
        }
        let mut total: f64 = self.atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum();
        if let Some(d) = &self.density {
            total += d.integral(0.0, x);
        }
        if let Some(s) = &self.selfsim {
            let p = &s.params;
            let px = if x == 0.0 { p.left_limit() } else { p.eval(x, depth)?.value };
            total += s.scale * (px - p.p0);
        }
        Ok(total)
    }

    /// Measure of the closed interval `[x0, x1]`, where `x0` and `x1` are
    /// not atoms of the self-similar part.
    pub fn mass_between(&self, x0: f64, x1: f64, depth: usize) -> Result<f64> {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.0 >= x0 && a.0 <= x1)
            .map(|a| a.1)
            .sum();
        Ok(atoms + self.continuous_mass(x0, x1, depth)?)
    }

    /// Mass of the density and self-similar parts on `[x0, x1]`.
    pub fn continuous_mass(&self, x0: f64, x1: f64, depth: usize) -> Result<f64> {
        let mut total = 0.0;
        if let Some(d) = &self.density {
            total += d.integral(x0, x1);
        }
        if let Some(s) = &self.selfsim {
            let p = &s.params;
            let v = |x: f64| -> Result<f64> {
                Ok(if x <= 0.0 { p.p0 } else { p.eval(x, depth)?.value })
            };
            total += s.scale * (v(x1)? - v(x0)?);
        }
        Ok(total)
    }

    pub fn total_mass(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.1).sum();
        let dens = self.density.as_ref().map_or(0.0, StepFunction::total);
        let ss = self.selfsim.as_ref().map_or(0.0, |s| s.scale * (s.params.p1 - s.params.p0));
        atoms + dens + ss
    }

    /// Total variation; infinite when the self-similar part is a
    /// distribution of unbounded variation.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.1.abs()).sum();
        let dens = self.density.as_ref().map_or(0.0, StepFunction::total_abs);
        let ss = self
            .selfsim
            .as_ref()
            .map_or(0.0, |s| s.scale.abs() * selfsim_variation(&s.params));
        atoms + dens + ss
    }

    pub fn is_nonnegative(&self) -> bool {
        self.atoms.iter().all(|a| a.1 >= 0.0)
            && self.density.as_ref().is_none_or(|d| d.values.iter().all(|&v| v >= 0.0))
            && self.selfsim.as_ref().is_none_or(|s| {
                s.scale == 0.0 || {
                    let sign = s.scale.signum();
                    selfsim_is_monotone(&s.params, sign)
                }
            })
    }

    /// Points the discretization must resolve at `depth`: atoms, density
    /// breaks and cell endpoints of the self-similar part.
    pub fn mesh_points(&self, depth: usize) -> Vec<f64> {
        let mut pts = self.atom_positions();
        if let Some(d) = &self.density {
            pts.extend_from_slice(&d.breaks);
        }
        if let Some(s) = &self.selfsim {
            for c in s.params.pruned_cells(depth) {
                pts.push(c.x0);
            }
            pts.push(1.0);
        }
        pts
    }

    pub fn has_density(&self) -> bool {
        self.density.as_ref().is_some_and(|d| !d.is_zero())
    }

    pub fn has_selfsim(&self) -> bool {
        self.selfsim.as_ref().is_some_and(|s| s.scale != 0.0)
    }

    pub fn integrator(&self) -> Result<MeasureIntegrator<'_>> {
        let selfsim = match &self.selfsim {
            Some(s) if s.scale != 0.0 => Some(SelfSimilarIntegrator::new(&s.params, s.scale)?),
            _ => None,
        };
        Ok(MeasureIntegrator { measure: self, selfsim })
    }
}

/// Exact local moments of the non-atomic parts of a measure.
pub struct MeasureIntegrator<'a> {
    measure: &'a CompositeMeasure,
    selfsim: Option<SelfSimilarIntegrator>,
}

impl MeasureIntegrator<'_> {
    /// `int s^k dmu`, `k = 0, 1, 2`, over `[x0, x1)` (closed on the right when
    /// `closed_right`) for the density and self-similar parts, with
    /// `s = (x - x0)/(x1 - x0)`. Explicit atoms are not included.
    pub fn local_moments(&self, x0: f64, x1: f64, closed_right: bool) -> [f64; 3] {
        let mut m = self
            .measure
            .density
            .as_ref()
            .map_or([0.0; 3], |d| d.local_moments(x0, x1));
        if let Some(s) = &self.selfsim {
            let extra = s.local_moments(x0, x1, closed_right);
            for k in 0..3 {
                m[k] += extra[k];
            }
        }
        m
    }
}

fn selfsim_is_monotone(p: &SelfSimilarParams, sign: f64) -> bool {
    let (b0, b1) = p.boundary_atoms();
    let nonneg = |v: f64| sign * v >= -POINT_TOL;
    p.dprime.iter().all(|&d| d >= 0.0)
        && nonneg(b0)
        && nonneg(b1)
        && nonneg(p.right_limit() - p.left_limit())
        && p.junction_jumps().iter().all(|(_, j)| nonneg(*j))
}

fn selfsim_variation(p: &SelfSimilarParams) -> f64 {
    let (b0, b1) = p.boundary_atoms();
    let ends = b0.abs() + b1.abs();
    if selfsim_is_monotone(p, 1.0) || selfsim_is_monotone(p, -1.0) {
        return ends + (p.right_limit() - p.left_limit()).abs();
    }
    let jumps: f64 = p.junction_jumps().iter().map(|(_, j)| j.abs()).sum();
    let contraction: f64 = p.dprime.iter().map(|d| d.abs()).sum();
    if jumps == 0.0 && (p.right_limit() - p.left_limit()).abs() <= POINT_TOL {
        ends
    } else if contraction < 1.0 {
        ends + jumps / (1.0 - contraction)
    } else {
        f64::INFINITY
    }
}

/// `common_atoms`: positions carrying a point mass in both measures.
///
/// Self-similar parts count as atomless here; discrete self-similar weights
/// are expected as explicit atom lists.
pub fn common_atoms(mu: &CompositeMeasure, nu: &CompositeMeasure) -> Vec<f64> {
    mu.atoms
        .iter()
        .filter(|a| a.1 != 0.0)
        .filter(|a| nu.atoms.iter().any(|b| b.1 != 0.0 && (a.0 - b.0).abs() <= POINT_TOL))
        .map(|a| a.0)
        .collect()
}

/// Result of [`step_approximation`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepApproximation {
    pub function: StepFunction,
    /// Per cell: whether it belongs to the retained set (increment of `R`
    /// below `eps^2`). Dropped cells carry the value zero.
    pub retained: Vec<bool>,
    /// Per cell: `f`-mass of the closed cell.
    pub masses: Vec<f64>,
    /// Per cell: increment of `R`.
    pub increments: Vec<f64>,
}

/// Step-function approximation `f_eps` of a nonnegative measure `f`.
///
/// `[0, 1]` is split greedily at (perturbed) midpoints until every cell has
/// `f`-mass below `eps^3` or `R`-increment below `eps^2`. Cells whose
/// increment is at least `eps^2` are dropped; the others carry their
/// averaged `f`-mass.
pub fn step_approximation(
    f: &CompositeMeasure,
    r: &dyn MonotoneMap,
    eps: f64,
) -> Result<StepApproximation> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameters(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !f.is_nonnegative() {
        return Err(Error::Validation("step approximation needs a nonnegative measure".into()));
    }
    let depth = 64;
    let (mass_cap, inc_cap) = (eps.powi(3), eps.powi(2));
    let mut cells: Vec<(f64, f64)> = Vec::new();
    // stack of (u, v, level), right halves pushed first
    let mut stack = vec![(0.0_f64, 1.0_f64, 0usize)];
    while let Some((u, v, level)) = stack.pop() {
        let mass = f.mass_between(u, v, depth)?;
        let inc = r.value(v) - r.value(u);
        if mass < mass_cap || inc < inc_cap {
            cells.push((u, v));
            continue;
        }
        if level >= MAX_SPLIT_DEPTH {
            return Err(Error::ApproximationFailure(format!(
                "cell [{u}, {v}] keeps mass {mass:e} and R-increment {inc:e}; \
                 f and R likely share an atom"
            )));
        }
        let c = split_point(u, v, &f.atoms);
        stack.push((c, v, level + 1));
        stack.push((u, c, level + 1));
    }

    let mut breaks = vec![0.0];
    let (mut values, mut retained, mut masses, mut increments) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &(u, v) in &cells {
        let mass = f.mass_between(u, v, depth)?;
        let inc = r.value(v) - r.value(u);
        let keep = inc < inc_cap;
        breaks.push(v);
        values.push(if keep { mass / (v - u) } else { 0.0 });
        retained.push(keep);
        masses.push(mass);
        increments.push(inc);
    }
    Ok(StepApproximation {
        function: StepFunction::new(breaks, values)?,
        retained,
        masses,
        increments,
    })
}

fn split_point(u: f64, v: f64, atoms: &[(f64, f64)]) -> f64 {
    let mut c = 0.5 * (u + v);
    let nudge = (v - u) * 1e-3;
    for _ in 0..8 {
        if atoms.iter().all(|a| (a.0 - c).abs() > POINT_TOL) {
            break;
        }
        c += nudge;
    }
    c
}
