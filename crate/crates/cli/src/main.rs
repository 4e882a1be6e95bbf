use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use tgpnp_core::study::{csv_line, write_csv, write_csv_to, CSV_HEADER};
use tgpnp_core::{Diagonal, GummelNorm, Method, Pairing, RunConfig, TauRule, Tolerances};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Fem,
    TgSemi,
    TgFull,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fem => Method::Fem,
            MethodArg::TgSemi => Method::TwoGridSemi,
            MethodArg::TgFull => Method::TwoGridFull,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PairingArg {
    Sqrt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DiagonalArg {
    Main,
    Anti,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    Euclidean,
}

/// Time-dependent Poisson–Nernst–Planck convergence and timing studies on the
/// manufactured benchmark of the unit square.
#[derive(Debug, Parser)]
#[command(name = "tgpnp", version)]
struct Args {
    /// Scheme to run.
    #[arg(long, value_enum, default_value = "fem")]
    method: MethodArg,

    /// Fine-mesh subdivisions per axis (comma separated).
    #[arg(long = "m", value_delimiter = ',')]
    m: Vec<usize>,

    /// Coarse-mesh subdivisions, paired with `--m` in order.
    #[arg(long = "m-coarse", value_delimiter = ',')]
    m_coarse: Vec<usize>,

    /// Pair each coarse mesh with the fine mesh of size H² (or derive H = √h).
    #[arg(long, value_enum)]
    pairing: Option<PairingArg>,

    #[arg(long = "final-time", default_value_t = 0.5)]
    final_time: f64,

    /// Time step: `h2` for τ ≈ h², or an explicit value.
    #[arg(long, default_value = "h2")]
    tau: String,

    #[arg(long = "gummel-tol", default_value_t = 1e-6)]
    gummel_tol: f64,

    /// Gummel iteration cap per time level.
    #[arg(long = "max-gummel", default_value_t = 100)]
    max_gummel: usize,

    #[arg(long = "lin-tol", default_value_t = 1e-8)]
    lin_tol: f64,

    #[arg(long = "gummel-norm", value_enum, default_value = "l2")]
    gummel_norm: NormArg,

    /// Cell diagonal: `main` runs lower-left to upper-right, `anti` the other way.
    #[arg(long, value_enum, default_value = "main")]
    diagonal: DiagonalArg,

    /// Time rate w of the second concentration, p² = sin(wt) sin 3πx sin 3πy.
    #[arg(long = "p2-rate", default_value_t = 1.0)]
    p2_rate: f64,

    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config(args: &Args) -> Result<RunConfig> {
    let tau = match args.tau.as_str() {
        "h2" => TauRule::MeshSquared,
        other => TauRule::Fixed(
            other
                .parse()
                .with_context(|| format!("--tau expects `h2` or a number, got `{other}`"))?,
        ),
    };
    Ok(RunConfig {
        method: args.method.into(),
        m_list: args.m.clone(),
        m_coarse: args.m_coarse.clone(),
        pairing: match args.pairing {
            Some(PairingArg::Sqrt) => Pairing::Sqrt,
            None => Pairing::Explicit,
        },
        final_time: args.final_time,
        tau,
        tols: Tolerances {
            gummel_tol: args.gummel_tol,
            lin_tol: args.lin_tol,
            max_gummel: args.max_gummel,
            gummel_norm: match args.gummel_norm {
                NormArg::L2 => GummelNorm::L2,
                NormArg::Euclidean => GummelNorm::Euclidean,
            },
            ..Tolerances::default()
        },
        diagonal: match args.diagonal {
            DiagonalArg::Main => Diagonal::Main,
            DiagonalArg::Anti => Diagonal::Anti,
        },
        p2_rate: args.p2_rate,
    })
}

fn run(args: &Args) -> Result<bool> {
    let cfg = config(args)?;
    let report = tgpnp_core::run_study(&cfg)?;
    for row in &report.rows {
        if let Err(msg) = &row.outcome {
            eprintln!("row m={} failed: {msg}", row.m_fine);
        }
    }
    match &args.out {
        Some(path) => {
            write_csv(&report.rows, path).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("{CSV_HEADER}");
            for row in &report.rows {
                eprintln!("{}", csv_line(row));
            }
        }
        None => write_csv_to(&report.rows, std::io::stdout().lock())?,
    }
    Ok(!report.has_failures())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
