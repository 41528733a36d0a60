//! Command-line front end for common stochastic trend analysis.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use ctrends::detrend::DetMode;
use ctrends::error::CtError;
use ctrends::fdata::{coordinates_of, load_csv, make_basis, project, BasisKind, FunctionalSeries};
use ctrends::gev::{Functional, TestFamily, VrConfig};
use ctrends::limits::{critical_table, LimitFamily, TableStore, DEFAULT_TABLE_SEED};
use ctrends::lrcov::BandwidthSpec;
use ctrends::mc::{DgpKind, DgpSpec, MethodSpec};
use ctrends::procedures::{
    eig_ratio_estimator, lrs_estimator, ns_factors, sequential_bu, sequential_td, sequential_ud,
    subspace_test, KRule, SubspaceKind,
};
use ctrends::runner::{run_eigen, run_test};

#[derive(Parser)]
#[command(name = "ctrends", version, about = "Variance-ratio tests for common stochastic trends")]
struct Cli {
    /// Worker threads for simulation commands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory with precomputed critical-value tables (default: CTRENDS_TABLE_DIR).
    #[arg(long, global = true)]
    table_dir: Option<PathBuf>,
    /// Emit machine-readable JSON instead of plain text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single VR or inverse VR test on a CSV series.
    Analyze(AnalyzeArgs),
    /// Estimate the number of common stochastic trends.
    Dim(DimArgs),
    /// Build and persist a critical-value table.
    Critvals(CritvalsArgs),
    /// Run a Monte Carlo experiment.
    Mc(McArgs),
    /// Test hypotheses on the stationary or nonstationary subspace.
    Subspace(SubspaceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DetArg {
    None,
    Intercept,
    Trend,
}

impl From<DetArg> for DetMode {
    fn from(d: DetArg) -> Self {
        match d {
            DetArg::None => DetMode::None,
            DetArg::Intercept => DetMode::Intercept,
            DetArg::Trend => DetMode::Trend,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Raw,
    Legendre,
    Fourier,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    /// VR(2,1)
    Vr21,
    /// VR(2,0)
    Vr20,
    /// VR(1,0)
    Vr10,
    /// inverse VR on the (2,1) problem
    Inv,
    /// general VR via --dl/--dr
    Vr,
}

#[derive(Clone, Copy, ValueEnum)]
enum FunctionalArg {
    Trace,
    Max,
}

#[derive(Args)]
struct InputArgs {
    /// CSV file; rows are time points, columns grid points or coordinates.
    #[arg(long)]
    input: PathBuf,
    /// Treat the first row as grid abscissae.
    #[arg(long)]
    grid_row: bool,
    /// Skip a (non-grid) header row.
    #[arg(long)]
    header: bool,
    #[arg(long, value_enum, default_value_t = BasisArg::Raw)]
    basis: BasisArg,
    /// Basis dimension for smoothing bases.
    #[arg(long)]
    basis_dim: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> Result<FunctionalSeries, CtError> {
        let raw = load_csv(&self.input, self.header, self.grid_row)?;
        let grid_vec: Vec<f64>;
        let grid: &[f64] = match &raw.grid {
            Some(g) => g,
            None => {
                let g = raw.ncols();
                grid_vec = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
                &grid_vec
            }
        };
        let (kind, dim) = match self.basis {
            BasisArg::Raw => (BasisKind::RawCoordinates, raw.ncols()),
            BasisArg::Legendre => {
                (BasisKind::Legendre, self.basis_dim.unwrap_or(raw.ncols().min(40)))
            }
            BasisArg::Fourier => {
                (BasisKind::Fourier, self.basis_dim.unwrap_or(raw.ncols().min(40)))
            }
        };
        let grid_opt =
            if kind == BasisKind::RawCoordinates && raw.grid.is_none() { None } else { Some(grid) };
        let basis = make_basis(kind, dim, grid_opt)?;
        project(&raw, &basis)
    }
}

#[derive(Args)]
struct TestSpecArgs {
    #[arg(long, value_enum, default_value_t = TestArg::Vr21)]
    test: TestArg,
    /// Left integration order for --test vr.
    #[arg(long)]
    dl: Option<usize>,
    /// Right integration order for --test vr.
    #[arg(long)]
    dr: Option<usize>,
    #[arg(long, value_enum, default_value_t = DetArg::Intercept)]
    det: DetArg,
    #[arg(long, value_enum, default_value_t = FunctionalArg::Trace)]
    functional: FunctionalArg,
    /// Projection rank; default d0+2.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Left bandwidth: integer, "t13"/"t15" ([T^{1/3}], [T^{1/5}]), or "andrews".
    #[arg(long)]
    hl: Option<String>,
    /// Right bandwidth override (same syntax as --hl).
    #[arg(long)]
    hr: Option<String>,
    /// Extractor bandwidth override (same syntax as --hl).
    #[arg(long)]
    hp: Option<String>,
}

fn parse_bw(s: &str) -> Result<BandwidthSpec, CtError> {
    match s {
        "andrews" => Ok(BandwidthSpec::AndrewsPlugin),
        "t13" => Ok(BandwidthSpec::Power { a: 1.0, b: 1.0 / 3.0 }),
        "t15" => Ok(BandwidthSpec::Power { a: 1.0, b: 0.2 }),
        other => other
            .parse::<usize>()
            .map(BandwidthSpec::Fixed)
            .map_err(|_| CtError::Parameter(format!("invalid bandwidth '{other}'"))),
    }
}

impl TestSpecArgs {
    fn config(&self, d0: usize) -> Result<VrConfig, CtError> {
        let det: DetMode = self.det.into();
        let mut cfg = match self.test {
            TestArg::Vr21 => VrConfig::vr21(d0, det),
            TestArg::Vr20 => VrConfig::vr_d0_right(2, d0, det, true),
            TestArg::Vr10 => VrConfig::vr_d0_right(1, d0, det, true),
            TestArg::Inv => VrConfig::inverse(d0, det),
            TestArg::Vr => {
                let d_l = self
                    .dl
                    .ok_or_else(|| CtError::Config("--test vr requires --dl".into()))?;
                let d_r = self
                    .dr
                    .ok_or_else(|| CtError::Config("--test vr requires --dr".into()))?;
                match d_r {
                    1 => {
                        let mut c = VrConfig::vr21(d0, det);
                        c.d_l = d_l;
                        c
                    }
                    0 => VrConfig::vr_d0_right(d_l, d0, det, true),
                    _ => return Err(CtError::Config("--dr must be 0 or 1".into())),
                }
            }
        };
        cfg.functional = match self.functional {
            FunctionalArg::Trace => Functional::Trace,
            FunctionalArg::Max => Functional::Max,
        };
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(h) = &self.hl {
            cfg.bw_l = parse_bw(h)?;
        }
        if let Some(h) = &self.hr {
            cfg.bw_r = parse_bw(h)?;
        }
        if let Some(h) = &self.hp {
            cfg.bw_p = parse_bw(h)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    spec: TestSpecArgs,
    /// Hypothesized number of common stochastic trends.
    #[arg(long)]
    d0: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DimMethod {
    Td,
    Bu,
    Ud,
    Ratio,
    Lrs,
}

#[derive(Args)]
struct DimArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    spec: TestSpecArgs,
    #[arg(long, value_enum)]
    method: DimMethod,
    /// Upper bound on the trend count (td, ratio, lrs).
    #[arg(long)]
    dmax: Option<usize>,
    /// Cap on d0 for the bottom-up search.
    #[arg(long)]
    cap: Option<usize>,
    /// Top-down start offset for the up-down procedure.
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Small-eigenvalue threshold for --method lrs.
    #[arg(long, default_value_t = 1e-4)]
    kappa: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    VrDl1,
    VrDl0,
    Inv,
}

#[derive(Args)]
struct CritvalsArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    d0: usize,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long, default_value_t = 2)]
    dl: usize,
    #[arg(long, value_enum, default_value_t = DetArg::Intercept)]
    det: DetArg,
    #[arg(long, value_enum, default_value_t = FunctionalArg::Trace)]
    functional: FunctionalArg,
    #[arg(long, default_value_t = 20000)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_TABLE_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    /// Output directory (default: --table-dir / CTRENDS_TABLE_DIR / cwd).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DgpArg {
    Far1,
    Var10,
}

#[derive(Clone, Copy, ValueEnum)]
enum McMethodArg {
    Test,
    Td,
    Bu,
    Ud,
    Ratio,
    Lrs,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, value_enum)]
    dgp: DgpArg,
    #[arg(long = "dN")]
    d_n: usize,
    #[arg(long = "T")]
    t: usize,
    #[arg(long)]
    reps: usize,
    #[arg(long, value_enum)]
    method: McMethodArg,
    #[command(flatten)]
    spec: TestSpecArgs,
    /// Null hypothesis d0 for --method test (default d_N).
    #[arg(long)]
    d0: Option<usize>,
    #[arg(long)]
    dmax: Option<usize>,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 1e-4)]
    kappa: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    ContainedInN,
    SpansN,
    ContainedInS,
}

#[derive(Args)]
struct SubspaceArgs {
    #[command(flatten)]
    input: InputArgs,
    /// CSV of hypothesized directions (columns = vectors on the data grid).
    #[arg(long)]
    h0: Option<PathBuf>,
    /// Use Nelson-Siegel level/slope/curvature factors: --ns sigma=1.37.
    #[arg(long)]
    ns: Option<String>,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long = "dN")]
    d_n: usize,
    #[arg(long, value_enum, default_value_t = DetArg::Intercept)]
    det: DetArg,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn store_for(cli: &Cli) -> TableStore {
    TableStore::new(cli.table_dir.clone())
}

fn print_report(rep: &ctrends::runner::TestReport, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(rep).unwrap());
        return;
    }
    println!(
        "{:?} test, d_L={}, d_R={}, d0={}, K={}, det={}, functional={:?}",
        rep.family, rep.d_l, rep.d_r, rep.d0, rep.k, rep.det, rep.functional
    );
    println!("bandwidths: h_L={}, h_R={}, h_P={}, T={}", rep.h_l, rep.h_r, rep.h_p, rep.t_eff);
    println!("statistic   = {:.6}  (normalization n_T = {:.6e})", rep.statistic, rep.n_t);
    println!(
        "critical    = {:.4} (90%), {:.4} (95%), {:.4} (99%)",
        rep.critical_values.q90, rep.critical_values.q95, rep.critical_values.q99
    );
    println!(
        "p-value in ({:.4}, {:.4}]; decision at alpha={}: {}",
        rep.p_bracket.0,
        rep.p_bracket.1,
        rep.alpha,
        if rep.reject { "reject" } else { "do not reject" }
    );
    for f in &rep.flags {
        println!("note: {f}");
    }
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<(), CtError> {
    let series = args.input.load()?;
    let cfg = args.spec.config(args.d0)?;
    let store = store_for(cli);
    let (_, rep) = run_test(&series, &cfg, args.alpha, &store)?;
    print_report(&rep, cli.json);
    Ok(())
}

fn cmd_dim(cli: &Cli, args: &DimArgs) -> Result<(), CtError> {
    let series = args.input.load()?;
    let store = store_for(cli);
    let p = series.dim();
    let base = args.spec.config(0).or_else(|_| args.spec.config(1))?;
    let k_rule = KRule::PerStep(2);

    #[derive(serde::Serialize)]
    struct DimOut {
        method: String,
        estimate: usize,
        detail: serde_json::Value,
    }
    let out = match args.method {
        DimMethod::Td => {
            let mut b = base;
            b.family = TestFamily::Vr;
            let d_max = args.dmax.unwrap_or(p.min(8));
            let est = sequential_td(&series, &b, d_max, k_rule, args.alpha, &store)?;
            DimOut {
                method: "td".into(),
                estimate: est.estimate,
                detail: serde_json::to_value(&est.trace).unwrap(),
            }
        }
        DimMethod::Bu => {
            let b = VrConfig { family: TestFamily::InverseVr, ..VrConfig::inverse(0, base.det) };
            let cap = args.cap.unwrap_or(p.saturating_sub(1));
            let est = sequential_bu(&series, &b, cap, k_rule, args.alpha, &store)?;
            DimOut {
                method: "bu".into(),
                estimate: est.estimate,
                detail: serde_json::to_value(&est.trace).unwrap(),
            }
        }
        DimMethod::Ud => {
            let bu = VrConfig::inverse(0, base.det);
            let mut td = args.spec.config(1)?;
            td.family = TestFamily::Vr;
            let est = sequential_ud(&series, &bu, &td, args.m, k_rule, args.alpha, &store)?;
            DimOut {
                method: "ud".into(),
                estimate: est.estimate,
                detail: serde_json::to_value(&est).unwrap(),
            }
        }
        DimMethod::Ratio => {
            let d_max = args.dmax.unwrap_or(p.saturating_sub(1).min(8));
            let mut cfg = VrConfig::vr21(1, base.det);
            cfg.k = (d_max + 1).min(p);
            let gev = run_eigen(&series, &cfg)?;
            let est = eig_ratio_estimator(&gev.mu, d_max)?;
            let ratios: Vec<f64> = (1..=d_max)
                .map(|j| if gev.mu[j - 1] > 0.0 { gev.mu[j] / gev.mu[j - 1] } else { f64::NAN })
                .collect();
            if !cli.json {
                for (j, r) in ratios.iter().enumerate() {
                    println!("mu_{}/mu_{} = {:.4}", j + 2, j + 1, r);
                }
            }
            DimOut {
                method: "ratio".into(),
                estimate: est,
                detail: serde_json::json!({ "ratios": ratios }),
            }
        }
        DimMethod::Lrs => {
            let d_max = args.dmax.unwrap_or(p.saturating_sub(1).min(8));
            let adjusted = ctrends::detrend::adjust(&series, base.det)?;
            let proj = ctrends::extractor::slack_extractor(
                &adjusted,
                (d_max + 1).min(p),
                false,
                ctrends::lrcov::KernelKind::TukeyHanning,
                &BandwidthSpec::Fixed(0),
            )?;
            let est = lrs_estimator(&proj.source_eigenvalues, args.kappa, d_max)?;
            let ev = &proj.source_eigenvalues;
            let ratios: Vec<f64> =
                (1..=d_max).map(|j| if ev[j - 1] > 0.0 { ev[j] / ev[j - 1] } else { 1.0 }).collect();
            if !cli.json {
                for (j, r) in ratios.iter().enumerate() {
                    println!("kappa_{}/kappa_{} = {:.6}", j + 2, j + 1, r);
                }
            }
            DimOut {
                method: "lrs".into(),
                estimate: est,
                detail: serde_json::json!({ "ratios": ratios }),
            }
        }
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&out).unwrap());
    } else {
        println!("estimated number of common stochastic trends: {}", out.estimate);
    }
    Ok(())
}

fn cmd_critvals(cli: &Cli, args: &CritvalsArgs) -> Result<(), CtError> {
    let det: DetMode = args.det.into();
    let functional = match args.functional {
        FunctionalArg::Trace => Functional::Trace,
        FunctionalArg::Max => Functional::Max,
    };
    let fam = match args.family {
        FamilyArg::VrDl1 => LimitFamily::vr_dl1(args.d0, args.dl, det, functional),
        FamilyArg::VrDl0 => LimitFamily::vr_dl0(args.d0, args.dl, det, functional),
        FamilyArg::Inv => {
            LimitFamily::inverse_vr(args.d0, args.k.unwrap_or(args.d0 + 2), args.dl, det, functional)
        }
    };
    let table = critical_table(&fam, args.reps, args.grid, args.seed)?;
    let dir = args
        .out
        .clone()
        .or_else(|| cli.table_dir.clone())
        .or_else(|| std::env::var_os(ctrends::limits::TABLE_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let path = dir.join(format!("{}.json", fam.file_stem()));
    table.save(&path)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&table).unwrap());
    } else {
        println!(
            "wrote {} (q90={:.4}, q95={:.4}, q99={:.4}, reps={})",
            path.display(),
            table.quantiles.q90,
            table.quantiles.q95,
            table.quantiles.q99,
            table.reps
        );
    }
    Ok(())
}

fn cmd_mc(cli: &Cli, args: &McArgs) -> Result<(), CtError> {
    let dgp = match args.dgp {
        DgpArg::Far1 => DgpSpec::far1(args.d_n, args.t, args.seed),
        DgpArg::Var10 => DgpSpec::var10(args.d_n, args.t, args.seed),
    };
    let det: DetMode = args.spec.det.into();
    let k_rule = KRule::PerStep(2);
    let p = match dgp.kind {
        DgpKind::Far1 => dgp.basis_dim,
        DgpKind::Var10 => 10,
    };
    let method = match args.method {
        McMethodArg::Test => MethodSpec::Test { cfg: args.spec.config(args.d0.unwrap_or(args.d_n))? },
        McMethodArg::Td => {
            let mut base = args.spec.config(1)?;
            base.family = TestFamily::Vr;
            MethodSpec::Td { base, d_max: args.dmax.unwrap_or(args.d_n + 5), k_rule }
        }
        McMethodArg::Bu => MethodSpec::Bu {
            base: VrConfig::inverse(0, det),
            cap: p.saturating_sub(1),
            k_rule,
        },
        McMethodArg::Ud => {
            let mut td = args.spec.config(1)?;
            td.family = TestFamily::Vr;
            MethodSpec::Ud { bu: VrConfig::inverse(0, det), td, m: args.m, k_rule }
        }
        McMethodArg::Ratio => {
            MethodSpec::Ratio { det, d_max: args.dmax.unwrap_or(args.d_n + 5) }
        }
        McMethodArg::Lrs => MethodSpec::Lrs {
            det,
            d_max: args.dmax.unwrap_or(args.d_n + 5),
            kappa: args.kappa,
        },
    };
    let store = store_for(cli);
    let report = ctrends::mc::run_experiment(dgp, &method, args.reps, args.alpha, &store)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        print!("{}", report.text_table());
    }
    Ok(())
}

fn cmd_subspace(cli: &Cli, args: &SubspaceArgs) -> Result<(), CtError> {
    let series = args.input.load()?;
    let vectors: Vec<DVector<f64>> = if let Some(ns) = &args.ns {
        let sigma = ns
            .strip_prefix("sigma=")
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| CtError::Config("--ns expects sigma=<value>".into()))?;
        let grid = series.basis.grid.clone();
        let [g0, g1, g2] = ns_factors(&grid, sigma)?;
        let curves = DMatrix::from_fn(grid.len(), 3, |i, j| match j {
            0 => g0[i],
            1 => g1[i],
            _ => g2[i],
        });
        let coords = coordinates_of(&series.basis, &curves)?;
        (0..3).map(|j| coords.column(j).into_owned()).collect()
    } else if let Some(path) = &args.h0 {
        // rows are grid points, columns are hypothesized vectors
        let raw = load_csv(path, false, false)?;
        let coords = coordinates_of(&series.basis, &raw.values)?;
        (0..coords.ncols()).map(|j| coords.column(j).into_owned()).collect()
    } else {
        return Err(CtError::Config("subspace needs --h0 or --ns".into()));
    };
    let kind = match args.kind {
        KindArg::ContainedInN => SubspaceKind::ContainedInN,
        KindArg::SpansN => SubspaceKind::SpansN,
        KindArg::ContainedInS => SubspaceKind::ContainedInS,
    };
    let store = store_for(cli);
    let rep = subspace_test(
        &series,
        &vectors,
        kind,
        args.d_n,
        args.det.into(),
        args.alpha,
        args.k,
        &store,
    )?;
    print_report(&rep, cli.json);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(&cli, a),
        Command::Dim(a) => cmd_dim(&cli, a),
        Command::Critvals(a) => cmd_critvals(&cli, a),
        Command::Mc(a) => cmd_mc(&cli, a),
        Command::Subspace(a) => cmd_subspace(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CtError::Config(msg)) | Err(CtError::Parameter(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
