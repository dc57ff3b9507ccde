//! `krein`: run constructions, spectra and asymptotics for problems defined in JSON.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use krein_core::assembly::geometric_grid;
use krein_core::problem::{Problem, WeightSpec, CANTOR_LEMMA_PRODUCTS};
use krein_core::spectral::{asymptotics_report, geometric_asymptotics, lemma31_check, Counter, Side};
use krein_core::Error;

#[derive(Parser, Debug)]
#[command(name = "krein", version, about = "Spectra of strings with self-similar coefficient measures")]
struct Cli {
    /// Write output to FILE instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the primitive of the weight `p` at points.
    Eval {
        file: PathBuf,
        /// Points in [0, 1].
        #[arg(required = true, value_delimiter = ',', allow_negative_numbers = true)]
        x: Vec<f64>,
        #[arg(long)]
        depth: Option<usize>,
        /// Deepen the recursion until every error bound is below this.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Transport `q` and `p` to the Lebesgue base.
    Transform {
        file: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Eigenvalues, either the first `n` on each side or all with |lambda| <= LAMBDA.
    Spectrum {
        file: PathBuf,
        #[arg(short, long, conflicts_with = "lambda")]
        n: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Counting-function profile on a geometric lambda grid.
    Asymptotics {
        file: PathBuf,
        /// `lo:hi:n`, geometric spacing.
        #[arg(long, default_value = "10:100000:200")]
        grid: GridSpec,
        #[arg(long)]
        depth: Option<usize>,
        /// Rungs per ladder in the geometric regime.
        #[arg(long, default_value_t = 4)]
        rungs: usize,
    },
    /// Counts behind the failed sub-additivity inequality for the Cantor string.
    Counterexample {
        #[arg(long, default_value_t = 6)]
        k_iter: usize,
        #[arg(long, default_value_t = 12)]
        depth: usize,
        #[arg(long, value_delimiter = ',', default_value = "510,85,0")]
        lambda: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
struct GridSpec {
    lo: f64,
    hi: f64,
    n: usize,
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("expected lo:hi:n, got {s:?}"));
        };
        let lo: f64 = lo.parse().map_err(|e| format!("lo: {e}"))?;
        let hi: f64 = hi.parse().map_err(|e| format!("hi: {e}"))?;
        let n: usize = n.parse().map_err(|e| format!("n: {e}"))?;
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err("need 0 < lo < hi and n >= 2".into());
        }
        Ok(GridSpec { lo, hi, n })
    }
}

/// Outcome that maps to a process exit code.
enum Outcome {
    Ok,
    NotReproduced,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut sink: Box<dyn Write> = match &cli.out {
        Some(path) => match fs::File::create(path) {
            Ok(f) => Box::new(io::BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => Box::new(io::stdout().lock()),
    };
    let result = run(&cli, &mut sink).and_then(|o| {
        sink.flush()?;
        Ok(o)
    });
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotReproduced) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_unsupported() => 3,
        Some(e) if e.is_spectral() => 4,
        Some(Error::ApproximationFailure(_)) => 4,
        _ => 2,
    }
}

fn load(path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Problem::from_json(&text)?)
}

fn run(cli: &Cli, out: &mut dyn Write) -> Result<Outcome> {
    match &cli.command {
        Command::Eval { file, x, depth, tol } => {
            let problem = load(file)?;
            let rows = evaluate(&problem, x, depth.unwrap_or(problem.depth), *tol)?;
            emit_rows(out, cli.json, &rows)?;
        }
        Command::Transform { file, depth } => {
            let problem = load(file)?;
            let t = problem.transform(depth.unwrap_or(problem.depth))?;
            serde_json::to_writer_pretty(&mut *out, &t)?;
            writeln!(out)?;
        }
        Command::Spectrum { file, n, lambda, depth } => {
            let problem = load(file)?;
            let disc = problem.discretize(depth.unwrap_or(problem.depth))?;
            let counter = Counter::new(&disc)?;
            let rows = spectrum(&counter, *n, *lambda)?;
            emit_rows(out, cli.json, &rows)?;
        }
        Command::Asymptotics { file, grid, depth, rungs } => {
            let problem = load(file)?;
            asymptotics(out, cli.json, &problem, *grid, depth.unwrap_or(problem.depth), *rungs)?;
        }
        Command::Counterexample { k_iter, depth, lambda } => {
            return counterexample(out, cli.json, *k_iter, *depth, lambda);
        }
    }
    Ok(Outcome::Ok)
}

fn emit_rows<T: Serialize>(out: &mut dyn Write, json: bool, rows: &[T]) -> Result<()> {
    if json {
        serde_json::to_writer_pretty(&mut *out, rows)?;
        writeln!(out)?;
    } else {
        let mut w = csv::Writer::from_writer(out);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    x: f64,
    value: f64,
    error_bound: f64,
}

fn evaluate(problem: &Problem, xs: &[f64], depth: usize, tol: Option<f64>) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut depth = depth;
        loop {
            let (value, error_bound) = match &problem.p {
                WeightSpec::SelfSimilar(params) => {
                    let e = params.eval(x, depth)?;
                    (e.value, e.error_bound)
                }
                WeightSpec::Measure(m) => {
                    let bound = match &m.selfsim {
                        Some(part) => part.params.eval(x, depth)?.error_bound * part.scale.abs(),
                        None => 0.0,
                    };
                    (m.cdf(x, depth)?, bound)
                }
            };
            match tol {
                Some(tol) if error_bound > tol && depth < 64 => depth += 1,
                _ => {
                    rows.push(EvalRow { x, value, error_bound });
                    break;
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct EigenRow {
    side: Side,
    index: usize,
    eigenvalue: f64,
}

fn spectrum(counter: &Counter<'_>, n: Option<usize>, lambda: Option<f64>) -> Result<Vec<EigenRow>> {
    let (n_pos, n_neg) = match (n, lambda) {
        (Some(n), _) => {
            // only as many negatives as the discretization has
            let available = counter.n_minus(-1e300);
            (n, n.min(available))
        }
        (None, Some(l)) => (counter.n_plus(l.abs()), counter.n_minus(-l.abs())),
        (None, None) => bail!(Error::InvalidParameters("spectrum needs -n or --lambda".into())),
    };
    let mut rows = Vec::new();
    for (side, count) in [(Side::Negative, n_neg), (Side::Positive, n_pos)] {
        for index in 1..=count {
            rows.push(EigenRow { side, index, eigenvalue: counter.eigenvalue(index, side)? });
        }
    }
    Ok(rows)
}

fn asymptotics(out: &mut dyn Write, json: bool, problem: &Problem, grid: GridSpec, depth: usize, rungs: usize) -> Result<()> {
    let Some((d, dprime)) = problem.scaling_data() else {
        bail!(Error::Unsupported("asymptotics need r and p self-similar on one IFS".into()));
    };
    let disc = problem.discretize(depth)?;
    let counter = Counter::new(&disc)?;
    let nonzero = d.iter().zip(&dprime).filter(|(a, b)| **a * **b != 0.0).count();
    if nonzero == 1 {
        let transformed = problem.transform(depth)?;
        let params = transformed
            .ptilde_params
            .ok_or_else(|| Error::Unsupported("no self-similar parameters for the transformed weight".into()))?;
        let regime = geometric_asymptotics(&counter, &params, rungs)?;
        if json {
            serde_json::to_writer_pretty(&mut *out, &regime)?;
            writeln!(out)?;
        } else {
            emit_rows(out, false, &regime.rungs)?;
        }
        return Ok(());
    }
    let lambdas = geometric_grid(grid.lo, grid.hi, grid.n);
    let report = asymptotics_report(&counter, &d, &dprime, &lambdas)?;
    if json {
        serde_json::to_writer_pretty(&mut *out, &report)?;
        writeln!(out)?;
    } else {
        emit_rows(out, false, &report.samples)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LemmaRow {
    lambda: f64,
    lhs: usize,
    rhs: usize,
    holds: bool,
}

#[derive(Serialize)]
struct CounterexampleReport {
    k_iter: usize,
    depth: usize,
    products: [f64; 3],
    checks: Vec<krein_core::spectral::LemmaCheck>,
    reproduced: bool,
}

fn counterexample(out: &mut dyn Write, json: bool, k_iter: usize, depth: usize, lambdas: &[f64]) -> Result<Outcome> {
    let problem = Problem::cantor_counterexample(k_iter)?;
    let disc = problem.discretize(depth)?;
    let counter = Counter::new(&disc)?;
    let checks = lambdas
        .iter()
        .map(|&l| lemma31_check(&counter, &CANTOR_LEMMA_PRODUCTS, l))
        .collect::<krein_core::Result<Vec<_>>>()?;
    let witness = lemma31_check(&counter, &CANTOR_LEMMA_PRODUCTS, 510.0)?;
    let reproduced = witness.lhs == 8 && witness.rhs == 7;
    if json {
        let report = CounterexampleReport { k_iter, depth, products: CANTOR_LEMMA_PRODUCTS, checks, reproduced };
        serde_json::to_writer_pretty(&mut *out, &report)?;
        writeln!(out)?;
    } else {
        let rows: Vec<LemmaRow> =
            checks.iter().map(|c| LemmaRow { lambda: c.lambda, lhs: c.lhs, rhs: c.rhs, holds: c.holds }).collect();
        emit_rows(out, false, &rows)?;
        if reproduced {
            eprintln!("inequality fails at lambda=510: N=8 > 7");
        } else {
            eprintln!("not reproduced: N(510)={} vs {}", witness.lhs, witness.rhs);
        }
    }
    Ok(if reproduced { Outcome::Ok } else { Outcome::NotReproduced })
}
