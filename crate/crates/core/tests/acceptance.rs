//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines are always shown.
//! The process fails when a criterion fails, except for the Weyl band
//! (criterion 5), whose literal form is not satisfiable by any exact count;
//! there the quantization-aware check must hold instead.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use krein_core::assembly::{
    assemble, assemble_original_axis, geometric_grid, positivity_scan, resolvent_sandwich, signed_geometric_grid,
    BoundaryCondition, PencilDiscretization,
};
use krein_core::measures::{CompositeMeasure, SelfSimilarPart, StepFunction};
use krein_core::problem::{BoundarySpec, Problem, WeightSpec, CANTOR_LEMMA_PRODUCTS};
use krein_core::reduction::transform_measure;
use krein_core::selfsim::{iterate, MonotonePrimitive, PiecewiseLinear, SelfSimilarParams};
use krein_core::spectral::{asymptotics_report, lemma31_check, spectral_dimension, Counter, Side};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn two_deltas() -> CompositeMeasure {
    CompositeMeasure::point_masses(vec![(0.4, 1.0), (0.6, 1.0)]).unwrap()
}

fn max_abs(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn counterexample() -> Verdict {
    let start = Instant::now();
    let disc = Problem::cantor_counterexample(6).unwrap().discretize(12).unwrap();
    let counter = Counter::new(&disc).unwrap();
    let mut worst: f64 = 0.0;
    let mut eigs = Vec::new();
    for n in 1..=9 {
        let ev = counter.eigenvalue(n, Side::Positive).unwrap();
        let exact = PI * PI * ((n - 1) * (n - 1)) as f64;
        let err = if n == 1 { ev.abs() } else { (ev - exact).abs() / exact };
        worst = worst.max(err);
        eigs.push(ev);
    }
    let (n510, n85, n0) = (counter.n_plus(510.0), counter.n_plus(85.0), counter.n_plus(0.0));
    let check = lemma31_check(&counter, &CANTOR_LEMMA_PRODUCTS, 510.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 0.02 && (n510, n85, n0) == (8, 3, 1) && check.lhs == 8 && check.rhs == 7 && !check.holds;
    verdict(
        pass,
        format!(
            "max rel err {worst:.2e}; N(510)={n510} N(85)={n85} N(0)={n0}; lhs {} > rhs {}; {secs:.2}s; eigs {:.2?}",
            check.lhs, check.rhs, eigs
        ),
    )
}

fn delta_degeneracies() -> Verdict {
    let p = two_deltas();
    let q = CompositeMeasure::constant(-25.0 * PI * PI / 4.0);
    let mut detail = String::new();
    let mut pass = true;
    for lambda in [-1.0, 1.0, 10.0] {
        let sizes: Vec<f64> = [8, 10, 12]
            .iter()
            .map(|&depth| {
                let d = assemble(1.0, &q, &p, BoundaryCondition::dirichlet(), depth).unwrap();
                max_abs(&resolvent_sandwich(&d, &[0.4, 0.6], lambda).unwrap())
            })
            .collect();
        pass &= sizes[2] < 1e-4 && sizes[2] < sizes[1] && sizes[1] < sizes[0];
        detail += &format!("(a) lambda={lambda}: {:.1e}/{:.1e}/{:.1e}; ", sizes[0], sizes[1], sizes[2]);
    }
    let q7 = CompositeMeasure::constant(-7.0 * PI * PI);
    let d = assemble(1.0, &q7, &p, BoundaryCondition::dirichlet(), 12).unwrap();
    let none = positivity_scan(&d, &signed_geometric_grid(1e-6, 1e6, 200)).is_none();
    let g = resolvent_sandwich(&d, &[0.4, 0.6], 0.0).unwrap();
    let finite = g.iter().flatten().all(|v| v.is_finite());
    let hermitian = (g[0][1] - g[1][0]).abs() <= 1e-12 * max_abs(&g);
    pass &= none && finite && hermitian && max_abs(&g) > 0.0;
    detail += &format!("(b) no positive xi: {none}; G(0) = {g:.4?}");
    verdict(pass, detail)
}

fn multiplier_pushforward() -> Verdict {
    let f = CompositeMeasure::from_density(StepFunction::new(vec![0.0, 0.4, 0.6, 1.0], vec![0.0, 1.0, 0.0]).unwrap());
    let g = transform_measure(&f, &MonotonePrimitive::cantor(), 8).unwrap();
    let atom = g.atoms.iter().find(|a| (a.0 - 0.5).abs() < 1e-12).map(|a| a.1);
    let pass = atom.is_some_and(|w| (w - 0.2).abs() < 1e-6);
    verdict(pass, format!("atom at 1/2: {atom:?}"))
}

fn dimension() -> Verdict {
    let third = 1.0 / 3.0;
    let cantor = spectral_dimension(&[third; 3], &[0.5, 0.0, 0.5]).unwrap();
    let string = spectral_dimension(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
    let e1 = (cantor - 2f64.ln() / 6f64.ln()).abs();
    let e2 = (string - 0.5).abs();
    verdict(e1 < 1e-9 && e2 < 1e-12, format!("D_cantor={cantor:.12} (err {e1:.1e}), D_string={string} (err {e2:.1e})"))
}

/// Returns the literal verdict and whether the quantization-aware check holds.
fn weyl() -> (Verdict, bool) {
    let disc = assemble(1.0, &CompositeMeasure::zero(), &CompositeMeasure::lebesgue(), BoundaryCondition::dirichlet(), 15)
        .unwrap();
    let nodes = disc.mesh.len();
    let counter = Counter::new(&disc).unwrap();
    let grid = geometric_grid(1e3, 1e5, 2001);
    let (mut lo, mut hi, mut at) = (f64::INFINITY, 0.0_f64, 0.0);
    let mut exact_counts = true;
    for &lambda in &grid {
        let n = counter.n_plus(lambda);
        let ratio = n as f64 * PI / lambda.sqrt();
        if ratio < lo {
            lo = ratio;
            at = lambda;
        }
        hi = hi.max(ratio);
        // discrete eigenvalues sit slightly above k^2 pi^2; skip the
        // sliver where that shift decides the count
        let k = (lambda.sqrt() / PI).floor() as usize;
        let near = ((k * k) as f64 * PI * PI - lambda).abs() < 1e-3 * lambda
            || (((k + 1) * (k + 1)) as f64 * PI * PI - lambda).abs() < 1e-3 * lambda;
        exact_counts &= near || n == k;
    }
    let literal = nodes >= 30_000 && lo >= 0.95 && hi <= 1.05;
    let detail = format!(
        "{nodes} nodes; N*pi/sqrt(lambda) in [{lo:.4}, {hi:.4}], minimum at lambda={at:.1}; \
         N(lambda)=floor(sqrt(lambda)/pi) on all samples: {exact_counts}"
    );
    (verdict(literal, detail), exact_counts && nodes >= 30_000)
}

fn log_periodic() -> Verdict {
    let third = 1.0 / 3.0;
    let problem = Problem::lebesgue_string(WeightSpec::SelfSimilar(SelfSimilarParams::cantor_ladder()), BoundarySpec::neumann());
    let disc = problem.discretize(12).unwrap();
    let counter = Counter::new(&disc).unwrap();
    let grid = geometric_grid(1e3, 1e7, 2001);
    let report = asymptotics_report(&counter, &[third; 3], &[0.5, 0.0, 0.5], &grid).unwrap();
    let (c1, c2) = (report.ratio_plus_min, report.ratio_plus_max);
    let width = c2 - c1;
    let defect = report.periodicity_defect_plus.unwrap_or(f64::INFINITY);
    let pass = c1 > 0.0 && c2 / c1 < 3.0 && defect < 0.15 * width;
    verdict(
        pass,
        format!(
            "band [{c1:.4}, {c2:.4}] (c2/c1 = {:.3}); defect {defect:.4} = {:.1}% of band width; case {}",
            c2 / c1,
            100.0 * defect / width,
            report.case_tag.as_str()
        ),
    )
}

fn dense(m: &krein_core::assembly::Tridiagonal) -> DMatrix<f64> {
    let rows = m.to_dense();
    DMatrix::from_fn(m.dim(), m.dim(), |i, j| rows[i][j])
}

/// Finite eigenvalues of the pencil from a dense Cholesky reduction at the
/// reference shift.
fn oracle_eigenvalues(disc: &PencilDiscretization, xi: f64) -> Vec<f64> {
    let a = dense(&disc.a);
    let b = dense(&disc.b);
    let t = &a - &b * xi;
    let chol = t.cholesky().expect("reference shift is positive definite");
    let l = chol.l();
    let linv = l.clone().try_inverse().unwrap();
    let c = &linv * &b * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let kappa = SymmetricEigen::new(c).eigenvalues;
    let scale = kappa.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    kappa.iter().filter(|k| k.abs() > 1e-11 * scale).map(|k| xi + 1.0 / k).collect()
}

fn random_problem(rng: &mut ChaCha8Rng) -> (CompositeMeasure, CompositeMeasure, BoundaryCondition, usize) {
    let depth = rng.gen_range(3..=7);
    let mut atoms = Vec::new();
    for _ in 0..rng.gen_range(0..4) {
        let x: f64 = rng.gen_range(0.02..0.98);
        if atoms.iter().all(|a: &(f64, f64)| (a.0 - x).abs() > 1e-3) {
            atoms.push((x, rng.gen_range(-1.0..2.0)));
        }
    }
    let density = if rng.gen_bool(0.7) {
        let k = rng.gen_range(1..5);
        let mut breaks: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.05..0.95)).collect();
        breaks.push(0.0);
        breaks.push(1.0);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let values = (0..breaks.len() - 1).map(|_| rng.gen_range(-0.5..3.0)).collect();
        StepFunction::new(breaks, values).ok()
    } else {
        None
    };
    let selfsim = rng
        .gen_bool(0.4)
        .then(|| SelfSimilarPart { params: SelfSimilarParams::cantor_ladder(), scale: rng.gen_range(0.2..2.0) });
    let p = CompositeMeasure::new(atoms, density, selfsim).unwrap();
    let q = if rng.gen_bool(0.5) { CompositeMeasure::constant(rng.gen_range(-20.0..20.0)) } else { CompositeMeasure::zero() };
    let end = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.5) {
            krein_core::assembly::EndCondition::Dirichlet
        } else {
            krein_core::assembly::EndCondition::Robin(rng.gen_range(-1.0..3.0))
        }
    };
    let bc = BoundaryCondition { left: end(rng), right: end(rng) };
    (q, p, bc, depth)
}

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut problems, mut mismatches, mut skipped, mut checks) = (0, 0, 0, 0);
    while problems < 20 {
        let (q, p, bc, depth) = random_problem(&mut rng);
        let Ok(disc) = assemble(1.0, &q, &p, bc, depth) else { continue };
        if disc.mesh.len() > 200 {
            continue;
        }
        let Ok(counter) = Counter::new(&disc) else {
            skipped += 1;
            continue;
        };
        problems += 1;
        let eigs = oracle_eigenvalues(&disc, counter.reference_shift());
        let top = eigs.iter().fold(10.0_f64, |acc, v| acc.max(v.abs()));
        let mut done = 0;
        while done < 50 {
            let lambda = rng.gen_range(-top..top) * 1.1;
            if eigs.iter().any(|e| (e - lambda).abs() < 1e-6 * (1.0 + lambda.abs())) || lambda.abs() < 1e-6 {
                continue;
            }
            done += 1;
            checks += 1;
            let expected_plus = eigs.iter().filter(|&&e| e >= -1e-9 && e <= lambda).count();
            let expected_minus = eigs.iter().filter(|&&e| e >= lambda && e < -1e-9).count();
            let got = counter.count(lambda);
            let (want_plus, want_minus) = if lambda >= 0.0 { (expected_plus, 0) } else { (0, expected_minus) };
            if got.n_plus != want_plus || got.n_minus != want_minus {
                mismatches += 1;
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("{problems} problems, {checks} lambdas, {mismatches} mismatches ({skipped} indefinite draws skipped)"),
    )
}

fn moments() -> Verdict {
    let params = SelfSimilarParams::cantor_ladder();
    let mu = params.moments(2).unwrap();
    let exact_err = (mu[1] - 0.5).abs().max((mu[2] - 0.375).abs());
    let p12 = iterate(&params, 12, &PiecewiseLinear::identity()).unwrap();
    let mut sums = [0.0; 3];
    for j in 0..p12.pieces() {
        let (x0, x1) = (p12.breakpoints[j], p12.breakpoints[j + 1]);
        let slope = (p12.values[j + 1] - p12.values[j]) / (x1 - x0);
        if slope == 0.0 {
            continue;
        }
        for (k, s) in sums.iter_mut().enumerate() {
            let e = (k + 1) as i32;
            *s += slope * (x1.powi(e) - x0.powi(e)) / e as f64;
        }
    }
    let brute_err = (0..3).map(|k| (sums[k] - mu[k]).abs()).fold(0.0, f64::max);
    verdict(
        exact_err < 1e-12 && brute_err < 1e-6,
        format!("mu = {mu:?}; exact err {exact_err:.1e}; Stieltjes sums on P_12 err {brute_err:.1e}"),
    )
}

fn isometry() -> Verdict {
    let r = MonotonePrimitive::cantor();
    let p = SelfSimilarParams::cantor_ladder();
    let original = assemble_original_axis(&r, &p, BoundaryCondition::neumann(), 8).unwrap();
    let problem = Problem::from_json(&format!(
        r#"{{"r": {}, "p": {}, "bc": {{"U": "neumann"}}}}"#,
        serde_json::to_string(&r).unwrap(),
        serde_json::to_string(&p).unwrap()
    ))
    .unwrap();
    let transformed = problem.discretize(10).unwrap();
    let (c0, c1) = (Counter::new(&original).unwrap(), Counter::new(&transformed).unwrap());
    let mut worst: f64 = 0.0;
    let mut pairs = Vec::new();
    for n in 1..=6 {
        let (a, b) = (c0.eigenvalue(n, Side::Positive).unwrap(), c1.eigenvalue(n, Side::Positive).unwrap());
        let err = if n == 1 { (a - b).abs() } else { (a - b).abs() / b.abs() };
        worst = worst.max(err);
        pairs.push((a, b));
    }
    verdict(worst <= 0.01, format!("max rel diff {worst:.2e}; (x-axis, t-axis) = {pairs:.3?}"))
}

fn report(id: usize, name: &str, v: &Verdict) -> usize {
    println!("{} criterion {id} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    usize::from(!v.pass)
}

fn main() {
    let mut failures = 0;
    failures += report(1, "counterexample", &counterexample());
    failures += report(2, "delta-weight degeneracies", &delta_degeneracies());
    failures += report(3, "multiplier pushforward", &multiplier_pushforward());
    failures += report(4, "spectral dimension", &dimension());
    let (weyl_literal, weyl_exact) = weyl();
    report(5, "Weyl band [0.95, 1.05]", &weyl_literal);
    if !weyl_literal.pass {
        println!(
            "     note: N is an integer, so N*pi/sqrt(lambda) drops to floor(x)/x with x = sqrt(lambda)/pi; \
             for x just below 11 this is about 0.909, so the band cannot hold on [1e3, 1e5]. \
             Quantization-aware check (N = floor(sqrt(lambda)/pi)): {}",
            if weyl_exact { "PASS" } else { "FAIL" }
        );
    }
    failures += usize::from(!weyl_exact);
    failures += report(6, "log-periodic asymptotics", &log_periodic());
    failures += report(7, "oracle equivalence", &oracle_equivalence());
    failures += report(8, "moment exactness", &moments());
    failures += report(9, "isometry spectrum invariance", &isometry());
    if failures > 0 {
        eprintln!("{failures} acceptance checks failed");
        std::process::exit(1);
    }
}
