use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use todalax::harmonic::Signature;
use todalax::toda::CatLimit;

use todalax_cli::commands;
use todalax_cli::config::{parse_coeffs, parse_complex, resolve_out_dir, DumpFormat, RunCfg};
use todalax_cli::report::Report;

/// Numerical driver for the integrable-systems library: every subcommand
/// evaluates a family of residuals and writes a JSON report.
#[derive(Parser)]
#[command(name = "todalax", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    opts: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// Output directory for reports and dumps; overrides TODALAX_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every randomized construction.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Points per grid side; the grid is a centred square.
    #[arg(long, global = true, default_value_t = 96)]
    resolution: usize,
    /// Half side length of the grid.
    #[arg(long, global = true, default_value_t = 0.5)]
    half_width: f64,
    /// Mask walls this close to a vanishing weight.
    #[arg(long, global = true, default_value_t = 0.05)]
    margin: f64,
    /// Override the static tolerance of every reported residual.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Artifact encoding for grid dumps.
    #[arg(long, global = true, value_enum, default_value_t = DumpFormat::Csv)]
    format: DumpFormat,
}

#[derive(Subcommand)]
enum Cmd {
    /// Basis relation checks for sl(n).
    Algebra {
        #[command(subcommand)]
        sub: AlgebraSub,
    },
    /// Centrally extended loop-algebra bracket checks.
    Affine {
        #[command(subcommand)]
        sub: AffineSub,
    },
    /// Two-dimensional field equations on the Cartan fields.
    Toda {
        #[command(subcommand)]
        sub: TodaSub,
    },
    /// The three-field conformally extended system.
    Cat {
        #[command(subcommand)]
        sub: CatSub,
    },
    /// Reductions from connection data to field equations.
    Reduce {
        #[command(subcommand)]
        sub: ReduceSub,
    },
    /// Projector-built harmonic maps.
    Uniton {
        #[command(subcommand)]
        sub: UnitonSub,
    },
    /// Self-dual gauge system with matter.
    Sdcs {
        #[command(subcommand)]
        sub: SdcsSub,
    },
    /// Triangular factorization and its chiral reduction.
    Wzw {
        #[command(subcommand)]
        sub: WzwSub,
    },
    /// Loop-parameter normal form of a flat pencil.
    Prop1 {
        #[command(subcommand)]
        sub: Prop1Sub,
    },
    /// Aggregate runs.
    Report {
        #[command(subcommand)]
        sub: ReportSub,
    },
}

#[derive(Subcommand)]
enum AlgebraSub {
    /// Check the defining relations and the Jacobi identity exactly.
    Verify {
        #[arg(long)]
        n: usize,
    },
}

#[derive(Subcommand)]
enum AffineSub {
    /// Antisymmetry, Jacobi, and the central pairing on random elements.
    Verify {
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum TodaSub {
    /// Field-equation residual rows.
    Residual {
        #[command(flatten)]
        data: TodaDataArgs,
    },
    /// Flatness and the Cartan rows of the zero-curvature identity.
    Connection {
        #[command(flatten)]
        data: TodaDataArgs,
    },
}

#[derive(Args)]
struct TodaDataArgs {
    /// Number of Cartan fields; the algebra is sl(rank + 1).
    #[arg(long, default_value_t = 1)]
    rank: usize,
    /// Build the radial field from this holomorphic polynomial.
    #[arg(long = "phi-from-f")]
    phi_from_f: Option<String>,
    #[arg(long, default_value = "i")]
    alpha: String,
    #[arg(long, default_value = "1")]
    beta: String,
}

#[derive(Subcommand)]
enum CatSub {
    /// Residuals of all three equations on built-in solution data.
    Verify,
    /// One of the two decoupling limits.
    Limit {
        #[arg(long, value_enum)]
        which: WhichLimit,
    },
}

#[derive(ValueEnum, Clone, Copy)]
enum WhichLimit {
    Sinh,
    Liouville,
}

#[derive(Subcommand)]
enum ReduceSub {
    /// Chiral-pair data down to the three-field system.
    Theorem2 {
        #[arg(long, default_value = "0.4+0.15i")]
        a1: String,
        #[arg(long, default_value = "0.1-0.05i")]
        b1: String,
    },
    /// Admissible pencils down to the two-dimensional field equations.
    Result4 {
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
}

#[derive(Subcommand)]
enum UnitonSub {
    /// Projector, map, and density grids with their invariants.
    Generate {
        #[arg(long)]
        f: String,
        #[arg(long, value_enum)]
        signature: SigArg,
    },
}

#[derive(ValueEnum, Clone, Copy)]
enum SigArg {
    Su2,
    Su11,
}

#[derive(Subcommand)]
enum SdcsSub {
    /// Curvature, matter, and gauge-consistency residuals.
    Verify {
        #[arg(long, default_value = "0,1")]
        f: String,
        #[arg(long, default_value_t = 2.0)]
        kappa: f64,
    },
}

#[derive(Subcommand)]
enum WzwSub {
    /// Random-matrix round trips through the triangular factorization.
    Decompose {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Chiral reduction of the first-order system.
    Orc {
        #[arg(long, default_value = "1")]
        fplus: String,
        #[arg(long, default_value = "1")]
        gplus: String,
    },
}

#[derive(Subcommand)]
enum Prop1Sub {
    /// Recover the undisguised flat family from a conjugated pencil.
    Normalform {
        #[arg(long, default_value = "0,1")]
        f: String,
    },
}

#[derive(Subcommand)]
enum ReportSub {
    /// Run every subcommand at a capped resolution and aggregate.
    Bundle,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let cfg = RunCfg {
        half_width: cli.opts.half_width,
        resolution: cli.opts.resolution,
        margin: cli.opts.margin,
        seed: cli.opts.seed,
        tol: cli.opts.tol,
        out_dir: resolve_out_dir(cli.opts.out.clone()),
        format: cli.opts.format,
    };
    if let Err(msg) = cfg.validate() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match dispatch(cli.cmd, &cfg) {
        Ok(rep) => finish(rep, &cfg),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn finish(rep: Report, cfg: &RunCfg) -> ExitCode {
    match rep.write(&cfg.out_dir) {
        Ok(path) => {
            println!("{}", path.display());
            if rep.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("residuals above tolerance; see the report");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: cannot write report: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd, cfg: &RunCfg) -> todalax::Result<Report> {
    let bad = |m: String| todalax::Error::Domain(m);
    match cmd {
        Cmd::Algebra { sub: AlgebraSub::Verify { n } } => commands::algebra_verify(n, cfg),
        Cmd::Affine { sub: AffineSub::Verify { samples } } => commands::affine_verify(samples, cfg),
        Cmd::Toda { sub } => {
            let (residual_only, data) = match sub {
                TodaSub::Residual { data } => (true, data),
                TodaSub::Connection { data } => (false, data),
            };
            let alpha = parse_complex(&data.alpha).map_err(bad)?;
            let beta = parse_complex(&data.beta).map_err(bad)?;
            let coeffs = data
                .phi_from_f
                .as_deref()
                .map(parse_coeffs)
                .transpose()
                .map_err(bad)?;
            if residual_only {
                commands::toda_residual(data.rank, coeffs.as_deref(), alpha, beta, cfg)
            } else {
                commands::toda_connection(data.rank, coeffs.as_deref(), alpha, beta, cfg)
            }
        }
        Cmd::Cat { sub: CatSub::Verify } => commands::cat_verify(cfg),
        Cmd::Cat { sub: CatSub::Limit { which } } => {
            let which = match which {
                WhichLimit::Sinh => CatLimit::SinhGordon,
                WhichLimit::Liouville => CatLimit::Liouville,
            };
            commands::cat_limit(which, cfg)
        }
        Cmd::Reduce { sub: ReduceSub::Theorem2 { a1, b1 } } => {
            let a1 = parse_complex(&a1).map_err(bad)?;
            let b1 = parse_complex(&b1).map_err(bad)?;
            commands::reduce_theorem2(a1, b1, cfg)
        }
        Cmd::Reduce { sub: ReduceSub::Result4 { count } } => commands::reduce_result4(count, cfg),
        Cmd::Uniton { sub: UnitonSub::Generate { f, signature } } => {
            let coeffs = parse_coeffs(&f).map_err(bad)?;
            let sig = match signature {
                SigArg::Su2 => Signature::Definite,
                SigArg::Su11 => Signature::Indefinite,
            };
            commands::uniton_generate(&coeffs, sig, cfg)
        }
        Cmd::Sdcs { sub: SdcsSub::Verify { f, kappa } } => {
            let coeffs = parse_coeffs(&f).map_err(bad)?;
            commands::sdcs_verify(&coeffs, kappa, cfg)
        }
        Cmd::Wzw { sub: WzwSub::Decompose { samples } } => commands::wzw_decompose(samples, cfg),
        Cmd::Wzw { sub: WzwSub::Orc { fplus, gplus } } => {
            let fp = parse_coeffs(&fplus).map_err(bad)?;
            let gp = parse_coeffs(&gplus).map_err(bad)?;
            commands::wzw_orc(&fp, &gp, cfg)
        }
        Cmd::Prop1 { sub: Prop1Sub::Normalform { f } } => {
            let coeffs = parse_coeffs(&f).map_err(bad)?;
            commands::prop1_normalform(&coeffs, cfg)
        }
        Cmd::Report { sub: ReportSub::Bundle } => commands::report_bundle(cfg),
    }
}
