//! Command-line driver behind the `lrsdp` binary.
//!
//! Exit codes: 0 when `eta_max < tol` (and, for `verify`, every audit
//! passed), 2 when the outer iteration cap was hit, 3 when a verification
//! audit failed, 1 on input errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::alm::{solve, Solution, SolveOptions, SolveStatus};
use crate::apps::maxcut::{build_maxcut, generate_cutting_planes, maxcut_cost, round_cut, EntropyTerm};
use crate::apps::{best_known_cut, gap_percent, ncm, rcp, spca, theta, Graph};
use crate::error::{Result, SdpError};
use crate::io::{
    parse_dense_matrix, parse_graph_rudy, parse_sdpa_sparse, parse_symmetric_matrix, performance_profile,
    verify_instance, ProfileMetric, RunReport, VerificationRecord, VerifyOptions,
};
use crate::linmap::SymMatrix;
use crate::model::{EntropyKind, SdpProblem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CAP: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "lrsdp", version, about = "Low-rank SDP solver (augmented Lagrangian + Riemannian semismooth Newton)")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    #[command(flatten)]
    Problem(ProblemCmd),
    /// Dolan–Moré performance profiles from saved run reports.
    Profile(ProfileArgs),
    /// Solve, then recheck the solution from raw data.
    Verify {
        #[command(subcommand)]
        problem: ProblemCmd,
    },
}

#[derive(Subcommand, Debug)]
enum ProblemCmd {
    /// Max-cut relaxation of a rudy graph.
    Maxcut(MaxcutArgs),
    /// Lovász theta number of a rudy graph.
    Theta(GraphArgs),
    /// Relaxed clustering of an affinity matrix.
    Rcp(RcpArgs),
    /// Nearest correlation matrix.
    Ncm(NcmArgs),
    /// l1-penalized sparse PCA.
    Spca(SpcaArgs),
    /// SDPA sparse file with unit-diagonal or trace structure.
    Sdpa(SdpaArgs),
}

#[derive(Args, Debug, Clone)]
struct SolveArgs {
    /// Target for eta_max.
    #[arg(long, default_value_t = 5e-6)]
    tol: f64,
    /// Factor rank p; defaults depend on the problem class.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    max_outer: usize,
    /// Write the run report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also re-solve with p = n and compare objectives.
    #[arg(long)]
    oracle: bool,
    /// Solver label recorded in the report.
    #[arg(long, default_value = "lrsdp")]
    label: String,
    /// Instance name; defaults to the input file stem.
    #[arg(long)]
    instance: Option<String>,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EntropyArg {
    None,
    Tsallis,
    Renyi,
}

impl EntropyArg {
    fn kind(self) -> Option<EntropyKind> {
        match self {
            EntropyArg::None => None,
            EntropyArg::Tsallis => Some(EntropyKind::Tsallis),
            EntropyArg::Renyi => Some(EntropyKind::Renyi),
        }
    }
}

#[derive(Args, Debug)]
struct MaxcutArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Entropy penalty added to the objective.
    #[arg(long, value_enum, default_value_t = EntropyArg::None)]
    entropy: EntropyArg,
    /// Entropy weight; defaults to 0.1 max|C_ij|.
    #[arg(long)]
    lambda_ent: Option<f64>,
    /// Add triangle cuts found at an entropy-penalized solution.
    #[arg(long)]
    cuts: bool,
    /// Number of cuts; defaults to ceil(sqrt(n/2)).
    #[arg(long)]
    num_cuts: Option<usize>,
    /// Random-hyperplane rounding trials.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args, Debug)]
struct RcpArgs {
    /// Dense affinity matrix W.
    #[arg(long)]
    matrix: PathBuf,
    /// Number of clusters.
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args, Debug)]
struct NcmArgs {
    /// Dense target matrix G.
    #[arg(long)]
    matrix: PathBuf,
    /// Dense weights H; all ones by default.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Elementwise lower bound on X.
    #[arg(long, allow_hyphen_values = true)]
    lower: Option<f64>,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args, Debug)]
struct SpcaArgs {
    /// Dense covariance matrix L.
    #[arg(long)]
    matrix: PathBuf,
    /// l1 weight.
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args, Debug)]
struct SdpaArgs {
    #[arg(long)]
    file: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// time or eta_max.
    #[arg(long, default_value = "time")]
    metric: ProfileMetric,
    /// Write the curves here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

impl clap::builder::ValueParserFactory for ProfileMetric {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<ProfileMetric>().map_err(|e| e.to_string()))
    }
}

/// Problem built from the command line, with what the report needs.
struct Prepared {
    prob: SdpProblem,
    class: &'static str,
    instance: String,
    graph: Option<Graph>,
    trials: usize,
    extras: Vec<(String, f64)>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| SdpError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn solve_options(a: &SolveArgs) -> SolveOptions {
    SolveOptions { tol: a.tol, max_outer: a.max_outer, seed: a.seed, record_trace: false, ..SolveOptions::default() }
}

impl ProblemCmd {
    fn solve_args(&self) -> &SolveArgs {
        match self {
            ProblemCmd::Maxcut(a) => &a.solve,
            ProblemCmd::Theta(a) => &a.solve,
            ProblemCmd::Rcp(a) => &a.solve,
            ProblemCmd::Ncm(a) => &a.solve,
            ProblemCmd::Spca(a) => &a.solve,
            ProblemCmd::Sdpa(a) => &a.solve,
        }
    }

    fn prepare(&self) -> Result<Prepared> {
        let sa = self.solve_args();
        let named = |path: &Path| sa.instance.clone().unwrap_or_else(|| stem(path));
        let plain = |prob, class, instance| Prepared { prob, class, instance, graph: None, trials: 0, extras: vec![] };
        Ok(match self {
            ProblemCmd::Maxcut(a) => {
                let g = parse_graph_rudy(&read(&a.graph)?)?;
                let entropy = match a.entropy.kind() {
                    Some(kind) => {
                        let lambda = match a.lambda_ent {
                            Some(l) => l,
                            None => 0.1 * maxcut_cost(&g)?.max_abs(),
                        };
                        Some(EntropyTerm { kind, lambda })
                    }
                    None => None,
                };
                let mut extras = Vec::new();
                let cuts = if a.cuts {
                    let kind = a.entropy.kind().unwrap_or(EntropyKind::Tsallis);
                    let cs = generate_cutting_planes(&g, kind, a.lambda_ent, a.num_cuts, &solve_options(sa))?;
                    extras.push(("num_cuts".to_string(), cs.len() as f64));
                    Some(cs)
                } else {
                    None
                };
                let prob = build_maxcut(&g, cuts.as_ref(), entropy, sa.rank)?;
                Prepared { prob, class: "maxcut", instance: named(&a.graph), graph: Some(g), trials: a.trials, extras }
            }
            ProblemCmd::Theta(a) => {
                let g = parse_graph_rudy(&read(&a.graph)?)?;
                plain(theta::build_theta(&g, sa.rank)?, "theta", named(&a.graph))
            }
            ProblemCmd::Rcp(a) => {
                let w = SymMatrix::dense(parse_symmetric_matrix(&read(&a.matrix)?)?)?;
                plain(rcp::build_rcp(&w, a.k, sa.rank)?, "rcp", named(&a.matrix))
            }
            ProblemCmd::Ncm(a) => {
                let g = parse_symmetric_matrix(&read(&a.matrix)?)?;
                let h = a.weights.as_deref().map(|p| read(p).and_then(|t| parse_dense_matrix(&t))).transpose()?;
                plain(ncm::build_ncm(&g, h.as_ref(), a.lower, sa.rank)?, "ncm", named(&a.matrix))
            }
            ProblemCmd::Spca(a) => {
                let l = SymMatrix::dense(parse_symmetric_matrix(&read(&a.matrix)?)?)?;
                plain(spca::build_spca(&l, a.lambda, sa.rank)?, "spca", named(&a.matrix))
            }
            ProblemCmd::Sdpa(a) => {
                let d = parse_sdpa_sparse(&read(&a.file)?)?;
                plain(d.to_problem(sa.rank)?, "sdpa", named(&a.file))
            }
        })
    }
}

fn exit_for(sol: &Solution, tol: f64) -> i32 {
    if sol.report.eta_max < tol {
        EXIT_OK
    } else {
        match sol.status {
            SolveStatus::IterationCap => EXIT_CAP,
            SolveStatus::Converged => EXIT_OK,
        }
    }
}

fn print_summary(rep: &RunReport) {
    let k = &rep.kkt;
    println!("instance   {} ({}), n = {}, p = {}, m = {}, m0 = {}, m_I = {}", rep.instance, rep.class, rep.n, rep.p, rep.m, rep.m0, rep.m_ineq);
    println!("status     {:?} after {} outer / {} inner / {} CG iterations, {:.3} s", rep.status, rep.outer_iterations, rep.inner_iterations, rep.cg_iterations, rep.time_secs);
    match k.obj_d {
        Some(d) => println!("objective  primal {:.10e}  dual {:.10e}", k.obj_p, d),
        None => println!("objective  primal {:.10e}", k.obj_p),
    }
    println!("eta        max {:.2e}  p {:.2e}  k* {:.2e}  c1 {:.2e}  g {}", k.eta_max, k.eta_p, k.eta_k_star, k.eta_c1, k.eta_g.map_or("-".into(), |g| format!("{g:.2e}")));
    println!("rank       {} (lambda_min(S) = {:.2e}, global certificate: {})", k.rank, k.lambda_min_s, rep.certificates.global_optimality);
    for (name, v) in &rep.extras {
        println!("{name:<10} {v}");
    }
}

fn print_verification(v: &VerificationRecord) {
    println!("verify     recomputed eta_max {:.2e}, fd gradient error {:.2e}", v.recomputed_eta_max, v.fd_max_rel_error);
    if let Some(o) = &v.oracle {
        println!("oracle     p = {}: obj {:.10e}, relative difference {:.2e} ({})", o.p, o.obj_p, o.rel_diff, if o.agrees { "agrees" } else { "differs" });
    }
    for f in &v.failures {
        println!("FAILED     {f}");
    }
    println!("audits     {}", if v.passed { "passed" } else { "failed" });
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    report: &'a RunReport,
    verification: &'a VerificationRecord,
}

fn run_problem(cmd: &ProblemCmd, verify: bool) -> Result<i32> {
    let sa = cmd.solve_args();
    let opts = solve_options(sa);
    let prep = cmd.prepare()?;
    let sol = solve(&prep.prob, &opts)?;
    let mut rep = RunReport::from_solution(&sa.label, &prep.instance, prep.class, &prep.prob, &sol, &opts);
    rep.extras.extend(prep.extras);
    if let Some(g) = &prep.graph {
        if prep.trials > 0 {
            let (cut, _) = round_cut(g, &sol.r, prep.trials, sa.seed)?;
            rep.extras.insert("cut".into(), cut);
            if let Some(best) = best_known_cut(&prep.instance) {
                rep.extras.insert("gap_percent".into(), gap_percent(best, cut)?);
            }
        }
    }
    print_summary(&rep);
    let mut code = exit_for(&sol, sa.tol);
    if verify || sa.oracle {
        let vo = VerifyOptions { tol: sa.tol, oracle: sa.oracle, seed: sa.seed, solve: opts.clone(), ..VerifyOptions::default() };
        let rec = verify_instance(&prep.prob, &sol, &vo)?;
        print_verification(&rec);
        if !rec.passed && code == EXIT_OK {
            code = EXIT_AUDIT;
        }
        if let Some(path) = &sa.json {
            if verify {
                std::fs::write(path, serde_json::to_string_pretty(&VerifyOutput { report: &rep, verification: &rec })?)?;
                return Ok(code);
            }
        }
    }
    if let Some(path) = &sa.json {
        rep.write(path)?;
    }
    Ok(code)
}

fn run_profile(a: &ProfileArgs) -> Result<i32> {
    let reports = a.reports.iter().map(|p| RunReport::from_json(&read(p)?)).collect::<Result<Vec<_>>>()?;
    let set = performance_profile(&reports, a.metric)?;
    let text = serde_json::to_string_pretty(&set)?;
    match &a.json {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.cmd {
        Command::Problem(p) => run_problem(p, false),
        Command::Verify { problem } => run_problem(problem, true),
        Command::Profile(a) => run_profile(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_accepts_the_documented_flags() {
        let cli = Cli::try_parse_from([
            "lrsdp", "maxcut", "--graph", "g.rudy", "--tol", "1e-6", "--rank", "4", "--entropy", "tsallis",
            "--lambda-ent", "0.3", "--cuts", "--seed", "7", "--max-outer", "50", "--json", "o.json", "--oracle",
        ])
        .unwrap();
        let Command::Problem(ProblemCmd::Maxcut(a)) = cli.cmd else { panic!("wrong subcommand") };
        assert_eq!(a.entropy, EntropyArg::Tsallis);
        assert!(a.cuts && a.solve.oracle);
        assert_eq!((a.solve.rank, a.solve.seed, a.solve.max_outer), (Some(4), 7, 50));
        assert!(Cli::try_parse_from(["lrsdp", "verify", "theta", "--graph", "c5.rudy"]).is_ok());
        assert!(Cli::try_parse_from(["lrsdp", "profile", "--reports", "a.json", "b.json", "--metric", "eta_max"]).is_ok());
        assert!(Cli::try_parse_from(["lrsdp", "ncm", "--matrix", "g.txt", "--lower", "-0.5"]).is_ok());
    }

    #[test]
    fn bad_input_exits_one() {
        assert_eq!(run_cli(["lrsdp", "maxcut", "--graph", "g.rudy", "--bogus"]), EXIT_INPUT);
        assert_eq!(run_cli(["lrsdp", "theta", "--graph", "/nonexistent/file.rudy"]), EXIT_INPUT);
        assert_eq!(run_cli(["lrsdp", "frobnicate"]), EXIT_INPUT);
        assert_eq!(run_cli(["lrsdp", "--help"]), EXIT_OK);
    }
}
