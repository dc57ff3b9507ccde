//! Boundary data and the linear finite-element pencil `A - lambda B`.

use std::io::{self, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measures::{CompositeMeasure, POINT_TOL};
use crate::selfsim::{binomial, MonotonePrimitive, SelfSimilarParams};

const UNITARY_TOL: f64 = 1e-10;

/// Pivots below `ZERO_PIVOT * |T|` are reported as near zero.
pub const ZERO_PIVOT: f64 = 1e-12;
/// Magnitude that replaces an exactly (or nearly) vanishing pivot.
pub const MICRO_SHIFT: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndCondition {
    Dirichlet,
    /// `v |u(end)|^2` enters the quadratic form; `Robin(0.0)` is Neumann.
    Robin(f64),
}

impl EndCondition {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, EndCondition::Dirichlet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCondition {
    pub left: EndCondition,
    pub right: EndCondition,
}

impl BoundaryCondition {
    pub fn dirichlet() -> Self {
        BoundaryCondition { left: EndCondition::Dirichlet, right: EndCondition::Dirichlet }
    }

    pub fn neumann() -> Self {
        BoundaryCondition { left: EndCondition::Robin(0.0), right: EndCondition::Robin(0.0) }
    }

    /// `U = diag(e^{i theta0}, e^{i theta1})`.
    pub fn from_angles(theta0: f64, theta1: f64) -> Result<Self> {
        let z = Complex64::new(0.0, 0.0);
        boundary_data([
            [Complex64::from_polar(1.0, theta0), z],
            [z, Complex64::from_polar(1.0, theta1)],
        ])
    }
}

/// Separated boundary condition encoded by a unitary `U` through
/// `V (U - 1) = -i (U + 1)`.
pub fn boundary_data(u: [[Complex64; 2]; 2]) -> Result<BoundaryCondition> {
    for i in 0..2 {
        for j in 0..2 {
            let dot: Complex64 = (0..2).map(|k| u[i][k] * u[j][k].conj()).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            if (dot - target).norm() > UNITARY_TOL {
                return Err(Error::Validation("boundary matrix U is not unitary".into()));
            }
        }
    }
    if u[0][1].norm() > UNITARY_TOL || u[1][0].norm() > UNITARY_TOL {
        return Err(Error::Unsupported("coupled boundary conditions (non-diagonal U)".into()));
    }
    let end = |e: Complex64| {
        if (e - 1.0).norm() <= UNITARY_TOL {
            EndCondition::Dirichlet
        } else {
            let v = -Complex64::i() * (e + 1.0) / (e - 1.0);
            EndCondition::Robin(v.re)
        }
    };
    Ok(BoundaryCondition { left: end(u[0][0]), right: end(u[1][1]) })
}

/// Symmetric tridiagonal matrix; `off[i]` couples rows `i` and `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal { diag: vec![0.0; n], off: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Infinity norm.
    pub fn norm_inf(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    /// Sum of all entry magnitudes.
    pub fn abs_sum(&self) -> f64 {
        self.diag.iter().map(|v| v.abs()).sum::<f64>() + 2.0 * self.off.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = self.diag[i];
            if i + 1 < n {
                m[i][i + 1] = self.off[i];
                m[i + 1][i] = self.off[i];
            }
        }
        m
    }

    fn scaled(&self, c: f64) -> Self {
        Tridiagonal {
            diag: self.diag.iter().map(|v| v * c).collect(),
            off: self.off.iter().map(|v| v * c).collect(),
        }
    }

    fn restrict(&self, lo: usize, hi: usize) -> Self {
        Tridiagonal {
            diag: self.diag[lo..hi].to_vec(),
            off: if hi > lo { self.off[lo..hi - 1].to_vec() } else { Vec::new() },
        }
    }
}

/// The discretized pencil on a mesh of `[0, 1]`. Degrees of freedom are the
/// mesh nodes minus the Dirichlet endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PencilDiscretization {
    pub mesh: Vec<f64>,
    pub a: Tridiagonal,
    pub b: Tridiagonal,
    /// Mesh indices eliminated by Dirichlet conditions.
    pub constrained: Vec<usize>,
}

/// `LDL^T` factorization of `A - lambda B` without pivoting.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub pivots: Vec<f64>,
    /// Subdiagonal of the unit lower factor.
    pub lower: Vec<f64>,
    /// Number of pivots below `ZERO_PIVOT * scale` before the micro-shift.
    pub near_zeros: usize,
    pub scale: f64,
}

impl Factorization {
    pub fn negatives(&self) -> usize {
        self.pivots.iter().filter(|&&d| d < 0.0).count()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.pivots.len();
        let mut x = rhs.to_vec();
        for i in 1..n {
            x[i] -= self.lower[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.pivots[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.lower[i] * x[i + 1];
        }
        x
    }
}

impl PencilDiscretization {
    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Mesh index of the first degree of freedom.
    pub fn first_dof(&self) -> usize {
        usize::from(self.constrained.first() == Some(&0))
    }

    /// `(c A, c B)`, which has the same eigenvalues.
    pub fn scaled(&self, c: f64) -> Self {
        PencilDiscretization { a: self.a.scaled(c), b: self.b.scaled(c), ..self.clone() }
    }

    pub fn factor(&self, lambda: f64) -> Factorization {
        let n = self.dim();
        let t_diag = |i: usize| self.a.diag[i] - lambda * self.b.diag[i];
        let t_off = |i: usize| self.a.off[i] - lambda * self.b.off[i];
        let scale = {
            let mut s: f64 = 0.0;
            for i in 0..n {
                let mut row = t_diag(i).abs();
                if i > 0 {
                    row += t_off(i - 1).abs();
                }
                if i + 1 < n {
                    row += t_off(i).abs();
                }
                s = s.max(row);
            }
            if s > 0.0 { s } else { 1.0 }
        };
        let (near, tiny) = (ZERO_PIVOT * scale, MICRO_SHIFT * scale);
        let mut pivots = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n.saturating_sub(1));
        let mut near_zeros = 0;
        for i in 0..n {
            let mut d = t_diag(i);
            if i > 0 {
                let e = t_off(i - 1);
                let l = e / pivots[i - 1];
                lower.push(l);
                d -= l * e;
            }
            if d.abs() < near {
                near_zeros += 1;
            }
            if d.abs() < tiny {
                d = if d < 0.0 { -tiny } else { tiny };
            }
            pivots.push(d);
        }
        Factorization { pivots, lower, near_zeros, scale }
    }

    /// Coefficients of the hat-function expansion at `x` over the degrees of
    /// freedom, as `(dof, weight)` pairs.
    pub fn evaluation(&self, x: f64) -> Vec<(usize, f64)> {
        let m = &self.mesh;
        let first = self.first_dof();
        let dof_of = |k: usize| -> Option<usize> {
            if self.constrained.contains(&k) { None } else { Some(k - first) }
        };
        let j = m.partition_point(|&p| p < x - POINT_TOL);
        let mut out = Vec::new();
        if j < m.len() && (m[j] - x).abs() <= POINT_TOL {
            out.extend(dof_of(j).map(|d| (d, 1.0)));
        } else if j > 0 && j < m.len() {
            let s = (x - m[j - 1]) / (m[j] - m[j - 1]);
            out.extend(dof_of(j - 1).map(|d| (d, 1.0 - s)));
            out.extend(dof_of(j).map(|d| (d, s)));
        }
        out
    }

    /// Writes `row col value` lines for the upper triangles of `A` and `B`.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (name, m) in [("A", &self.a), ("B", &self.b)] {
            writeln!(w, "# {name} {}", m.dim())?;
            for i in 0..m.dim() {
                writeln!(w, "{i} {i} {:e}", m.diag[i])?;
                if i + 1 < m.dim() {
                    writeln!(w, "{i} {} {:e}", i + 1, m.off[i])?;
                }
            }
        }
        Ok(())
    }
}

/// Mesh for [`assemble`]: atoms, density breaks and cell ends of the
/// self-similar parts at `depth`; a uniform `2^depth` grid is added when
/// there is no self-similar part to follow or a density is present.
pub fn build_mesh(qtilde: &CompositeMeasure, ptilde: &CompositeMeasure, depth: usize) -> Vec<f64> {
    let mut pts = vec![0.0, 1.0];
    for mu in [qtilde, ptilde] {
        pts.extend(mu.mesh_points(depth));
    }
    let follow_selfsim = qtilde.has_selfsim() || ptilde.has_selfsim();
    if !follow_selfsim || qtilde.has_density() || ptilde.has_density() {
        let n = 1usize << depth.min(30);
        pts.extend((0..=n).map(|k| k as f64 / n as f64));
    }
    pts.sort_by(f64::total_cmp);
    let mut mesh: Vec<f64> = Vec::with_capacity(pts.len());
    for p in pts {
        match mesh.last() {
            Some(&last) if p - last <= POINT_TOL => {}
            _ => mesh.push(p),
        }
    }
    if let Some(last) = mesh.last_mut() {
        *last = 1.0;
    }
    mesh
}

/// Linear elements for `(1/r_mass) int u'v' + int uv dq - lambda int uv dp`
/// plus the Robin terms.
pub fn assemble(
    r_mass: f64,
    qtilde: &CompositeMeasure,
    ptilde: &CompositeMeasure,
    bc: BoundaryCondition,
    depth: usize,
) -> Result<PencilDiscretization> {
    if !(r_mass.is_finite() && r_mass > 0.0) {
        return Err(Error::Validation(format!("total mass of r must be positive, got {r_mass}")));
    }
    let mesh = build_mesh(qtilde, ptilde, depth);
    let n = mesh.len();
    if n < 2 {
        return Err(Error::Validation("empty mesh".into()));
    }
    let mut a = Tridiagonal::zeros(n);
    let mut b = Tridiagonal::zeros(n);
    let q_int = qtilde.integrator()?;
    let p_int = ptilde.integrator()?;
    for k in 0..n - 1 {
        let (x0, x1) = (mesh[k], mesh[k + 1]);
        let h = x1 - x0;
        let closed = k + 2 == n;
        let stiff = 1.0 / (r_mass * h);
        a.diag[k] += stiff;
        a.diag[k + 1] += stiff;
        a.off[k] -= stiff;
        add_element_mass(&mut a, k, q_int.local_moments(x0, x1, closed));
        add_element_mass(&mut b, k, p_int.local_moments(x0, x1, closed));
    }
    for (m, mu) in [(&mut a, qtilde), (&mut b, ptilde)] {
        for &(x, w) in &mu.atoms {
            let k = nearest_node(&mesh, x);
            m.diag[k] += w;
        }
    }
    finish(mesh, a, b, bc)
}

/// The pencil assembled directly on the original axis for `r = dR` and
/// `p = dP` sharing one IFS, with elements linear in `R`.
///
/// Cells where `R` is flat carry no `p`-mass and are contracted, so the
/// degrees of freedom are the distinct values of `R` at cell ends. Element
/// integrals use the mixed moments `int R^k dP`.
pub fn assemble_original_axis(
    r: &MonotonePrimitive,
    p: &SelfSimilarParams,
    bc: BoundaryCondition,
    depth: usize,
) -> Result<PencilDiscretization> {
    crate::selfsim::check_shared_ifs(r.params(), p)?;
    if !p.is_continuous(1e-12) {
        return Err(Error::Unsupported("original-axis assembly needs a continuous P".into()));
    }
    let rp = r.params();
    let mixed = mixed_moments(rp, p)?;
    let alpha = p.alpha();

    // (x0, width, r weight, r shift, p weight, level)
    let mut stack = vec![(0.0_f64, 1.0_f64, 1.0_f64, 0.0_f64, 1.0_f64, 0usize)];
    let mut elements = Vec::new();
    while let Some((x0, w, wr, sr, wp, level)) = stack.pop() {
        if wr == 0.0 {
            if wp != 0.0 {
                return Err(Error::Unsupported("p has mass where R is flat".into()));
            }
            continue;
        }
        if level == depth {
            elements.push((x0, sr, wr, wp));
            continue;
        }
        for i in (0..p.n).rev() {
            let cx = x0 + w * alpha[i];
            let cw = if i + 1 == p.n { x0 + w - cx } else { w * p.a[i] };
            stack.push((cx, cw, wr * rp.dprime[i], sr + wr * rp.betaprime[i], wp * p.dprime[i], level + 1));
        }
    }

    let n = elements.len() + 1;
    let mut mesh = Vec::with_capacity(n);
    let mut a = Tridiagonal::zeros(n);
    let mut b = Tridiagonal::zeros(n);
    for (k, &(x0, _, wr, wp)) in elements.iter().enumerate() {
        mesh.push(x0);
        let stiff = 1.0 / wr;
        a.diag[k] += stiff;
        a.diag[k + 1] += stiff;
        a.off[k] -= stiff;
        add_element_mass(&mut b, k, [wp * mixed[0], wp * mixed[1], wp * mixed[2]]);
    }
    mesh.push(1.0);
    let (b0, b1) = p.boundary_atoms();
    b.diag[0] += b0;
    b.diag[n - 1] += b1;
    finish(mesh, a, b, bc)
}

/// `int_(0,1) R^k dP`, `k = 0, 1, 2`, for a continuous `P`.
fn mixed_moments(r: &SelfSimilarParams, p: &SelfSimilarParams) -> Result<[f64; 3]> {
    let mut m = [p.right_limit() - p.left_limit(), 0.0, 0.0];
    for k in 1..3 {
        let denom = 1.0
            - (0..p.n)
                .map(|i| p.dprime[i] * r.dprime[i].powi(k as i32))
                .sum::<f64>();
        if denom.abs() <= crate::selfsim::PARAM_TOL {
            return Err(Error::DegenerateMoments { order: k, residual: denom.abs() });
        }
        let mut rhs = 0.0;
        for i in 0..p.n {
            let s: f64 = (0..k)
                .map(|j| {
                    binomial(k, j)
                        * r.dprime[i].powi(j as i32)
                        * r.betaprime[i].powi((k - j) as i32)
                        * m[j]
                })
                .sum();
            rhs += p.dprime[i] * s;
        }
        m[k] = rhs / denom;
    }
    Ok(m)
}

fn add_element_mass(m: &mut Tridiagonal, k: usize, [m0, m1, m2]: [f64; 3]) {
    m.diag[k] += m0 - 2.0 * m1 + m2;
    m.diag[k + 1] += m2;
    m.off[k] += m1 - m2;
}

fn nearest_node(mesh: &[f64], x: f64) -> usize {
    let j = mesh.partition_point(|&p| p < x);
    if j == 0 {
        0
    } else if j == mesh.len() || (x - mesh[j - 1]) < (mesh[j] - x) {
        j - 1
    } else {
        j
    }
}

fn finish(mesh: Vec<f64>, mut a: Tridiagonal, b: Tridiagonal, bc: BoundaryCondition) -> Result<PencilDiscretization> {
    let n = mesh.len();
    if let EndCondition::Robin(v) = bc.left {
        a.diag[0] += v;
    }
    if let EndCondition::Robin(v) = bc.right {
        a.diag[n - 1] += v;
    }
    let mut constrained = Vec::new();
    let lo = if bc.left.is_dirichlet() {
        constrained.push(0);
        1
    } else {
        0
    };
    let hi = if bc.right.is_dirichlet() {
        constrained.push(n - 1);
        n - 1
    } else {
        n
    };
    if hi <= lo {
        return Err(Error::Validation("no degrees of freedom left after boundary conditions".into()));
    }
    Ok(PencilDiscretization { a: a.restrict(lo, hi), b: b.restrict(lo, hi), mesh, constrained })
}

/// `G[i][j] = e_i^T (A - lambda B)^{-1} e_j` for the evaluation functionals
/// at `points`: the discrete resolvent kernel between those points.
pub fn resolvent_sandwich(disc: &PencilDiscretization, points: &[f64], lambda: f64) -> Result<Vec<Vec<f64>>> {
    let f = disc.factor(lambda);
    if f.near_zeros > 0 {
        return Err(Error::PoleOfResolvent { lambda });
    }
    let n = disc.dim();
    let evals: Vec<Vec<(usize, f64)>> = points.iter().map(|&x| disc.evaluation(x)).collect();
    let mut g = vec![vec![0.0; points.len()]; points.len()];
    for (j, ej) in evals.iter().enumerate() {
        let mut rhs = vec![0.0; n];
        for &(d, w) in ej {
            rhs[d] += w;
        }
        let sol = f.solve(&rhs);
        for (i, ei) in evals.iter().enumerate() {
            g[i][j] = ei.iter().map(|&(d, w)| w * sol[d]).sum();
        }
    }
    // symmetrize away rounding
    for i in 0..points.len() {
        for j in 0..i {
            let s = 0.5 * (g[i][j] + g[j][i]);
            g[i][j] = s;
            g[j][i] = s;
        }
    }
    Ok(g)
}

/// First `xi` in `grid` with `A - xi B` positive definite.
pub fn positivity_scan(disc: &PencilDiscretization, grid: &[f64]) -> Option<f64> {
    grid.iter().copied().find(|&xi| {
        let f = disc.factor(xi);
        f.near_zeros == 0 && f.pivots.iter().all(|&d| d > 0.0)
    })
}

/// Geometric grid `lo, ..., hi` with `n` points (`lo, hi > 0`).
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|k| if k + 1 == n { hi } else { lo * (ratio * k as f64).exp() }).collect()
}

/// Symmetric geometric grid over `[-r, -l] U [l, r]`, ascending.
pub fn signed_geometric_grid(l: f64, r: f64, n: usize) -> Vec<f64> {
    let half = geometric_grid(l, r, n / 2);
    let mut out: Vec<f64> = half.iter().rev().map(|v| -v).collect();
    out.extend(half);
    out
}
