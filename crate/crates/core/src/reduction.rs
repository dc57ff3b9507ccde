//! The substitution `y = u o R`: coefficients of the original problem are
//! transported to the Lebesgue base `t = R(x)`.

use crate::error::{Error, Result};
use crate::measures::{CompositeMeasure, StepFunction, POINT_TOL};
use crate::selfsim::{check_shared_ifs, MonotoneMap, MonotonePrimitive, SelfSimilarParams};

/// Parameters of `P o R^{-1}` when `R` and `P` share their IFS.
///
/// Cells where `R` is flat are dropped; the remaining cells keep their
/// vertical data and get the weights of `R` as widths.
pub fn pushforward_params(r: &MonotonePrimitive, p: &SelfSimilarParams) -> Result<SelfSimilarParams> {
    let rp = r.params();
    check_shared_ifs(rp, p)?;
    let mut widths = Vec::new();
    let mut scalings = Vec::new();
    let mut offsets = Vec::new();
    for i in 0..p.n {
        let d = rp.dprime[i];
        if d == 0.0 {
            if p.dprime[i] != 0.0 {
                return Err(Error::Unsupported(format!(
                    "piece {} has r-weight 0 but scaling {}; P o R^-1 is not self-similar",
                    i + 1,
                    p.dprime[i]
                )));
            }
            continue;
        }
        widths.push(d);
        scalings.push(p.dprime[i]);
        offsets.push(p.betaprime[i]);
    }
    // renormalize against rounding so the widths sum to 1 exactly enough
    let total: f64 = widths.iter().sum();
    if let Some(last) = widths.last_mut() {
        *last += 1.0 - total;
    }
    SelfSimilarParams::new(widths, scalings, offsets, p.p0, p.p1)
}

/// The measure `g` on the `t`-axis with `int u dg = int (u o R) df`.
///
/// Atoms of `f` move to their images. Mass on plateaus of `R` (flat
/// segments at `depth`) collapses to an atom at the plateau value. The rest
/// is spread uniformly over the image of each rising segment.
pub fn transform_measure(f: &CompositeMeasure, r: &dyn MonotoneMap, depth: usize) -> Result<CompositeMeasure> {
    if r.is_identity() {
        return Ok(f.clone());
    }
    let mut atoms: Vec<(f64, f64)> = f.atoms.iter().map(|&(x, w)| (r.value(x), w)).collect();

    let mut density = None;
    if f.has_density() || f.has_selfsim() {
        let eval_depth = 64;
        let mut breaks = vec![0.0];
        let mut values = Vec::new();
        let segments = r.segments(depth);
        // cumulative masses at shared segment ends, so rounding in the cell
        // geometry telescopes away
        let mut cum = Vec::with_capacity(segments.len() + 1);
        for seg in &segments {
            cum.push(f.continuous_mass(0.0, seg.x0, eval_depth)?);
        }
        cum.push(f.continuous_mass(0.0, 1.0, eval_depth)?);
        for (k, seg) in segments.iter().enumerate() {
            let mass = cum[k + 1] - cum[k];
            if seg.is_flat() {
                if mass != 0.0 {
                    atoms.push((seg.t0, mass));
                }
                continue;
            }
            let (t0, t1) = (seg.t0, seg.t1);
            let last = *breaks.last().unwrap();
            if t0 > last + POINT_TOL {
                // uncovered gap in the image
                values.push(0.0);
                breaks.push(t0);
            }
            let start = *breaks.last().unwrap();
            if t1 <= start {
                // degenerate sliver: fold its mass into the previous cell
                if let (Some(v), [.., b0, b1]) = (values.last_mut(), breaks.as_slice()) {
                    *v += mass / (b1 - b0);
                }
                continue;
            }
            values.push(mass / (t1 - start));
            breaks.push(t1);
        }
        let last = *breaks.last().unwrap();
        if last < 1.0 - POINT_TOL {
            values.push(0.0);
            breaks.push(1.0);
        } else if let (Some(v), [.., b0, b1]) = (values.last_mut(), breaks.as_mut_slice()) {
            // snap to 1 keeping the cell's mass
            *v *= (*b1 - *b0) / (1.0 - *b0);
            *b1 = 1.0;
        }
        if breaks.len() >= 2 {
            density = Some(StepFunction::new(breaks, values)?);
        }
    }
    CompositeMeasure::new(merge_atoms(atoms), density, None)
}

/// Sums atoms whose positions agree within [`POINT_TOL`]; drops zero weights.
pub fn merge_atoms(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (x, w) in atoms {
        match out.last_mut() {
            Some(last) if (x - last.0).abs() <= POINT_TOL => last.1 += w,
            _ => out.push((x, w)),
        }
    }
    out.retain(|a| a.1 != 0.0);
    out
}

/// `inf { x : R(x) >= t }`.
pub fn generalized_inverse(r: &dyn MonotoneMap, t: f64, depth: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain { value: t });
    }
    Ok(r.generalized_inverse(t, depth))
}
