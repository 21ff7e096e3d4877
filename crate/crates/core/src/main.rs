use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rdc::harness::{generate_synthetic, run, RunConfig};
use rdc::store::{save_embeddings, Format};

#[derive(Parser)]
#[command(
    name = "rdc",
    version,
    about = "Ranking distance calibration for few-shot episodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate seeded episodes and report mean accuracy with a 95% interval.
    Run(Box<RunArgs>),
    /// Write a synthetic Gaussian-cluster embedding file.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key=value file; command-line flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    way: Option<usize>,
    #[arg(long)]
    shot: Option<usize>,
    #[arg(long)]
    query: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// kl | mse
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    no_subspace: bool,
    #[arg(long)]
    qe_plain_knn: bool,
    /// positive | negated
    #[arg(long)]
    soften_sign: Option<String>,
    /// sgd | adaptive-moments
    #[arg(long)]
    optimizer: Option<String>,
    /// f32 | f64
    #[arg(long)]
    precision: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut kv: Vec<(&'static str, String)> = Vec::new();
        macro_rules! opt {
            ($($field:ident => $key:literal),* $(,)?) => {
                $(if let Some(v) = &self.$field { kv.push(($key, v.to_string())); })*
            };
        }
        opt!(
            mode => "mode", episodes => "episodes", way => "way", shot => "shot",
            query => "query", seed => "seed", k => "k", k2 => "k2", lambda => "lambda",
            p => "p", alpha => "alpha", tau => "tau", epochs => "epochs", lr => "lr",
            loss => "loss", soften_sign => "soften-sign", optimizer => "optimizer",
            precision => "precision",
        );
        if let Some(p) = &self.input {
            kv.push(("input", p.display().to_string()));
        }
        if let Some(p) = &self.out {
            kv.push(("out", p.display().to_string()));
        }
        for (set, key) in [
            (self.no_attention, "no-attention"),
            (self.no_subspace, "no-subspace"),
            (self.qe_plain_knn, "qe-plain-knn"),
        ] {
            if set {
                kv.push((key, "true".into()));
            }
        }
        kv
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Csv,
    Packed,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the output file's extension (.csv or packed).
    #[arg(long, value_enum)]
    format: Option<FileFormat>,
}

fn execute(cli: Cli) -> rdc::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = RunConfig::default();
            if let Some(path) = &args.config {
                cfg.apply_file(path)?;
            }
            for (key, value) in args.overrides() {
                cfg.apply(key, &value)?;
            }
            let report = run(&cfg)?;
            print!("{}", report.table());
            if let Some(out) = &cfg.output {
                report.save_csv(out)?;
            }
        }
        Command::Generate(args) => {
            let set = generate_synthetic::<f64>(
                args.classes,
                args.per_class,
                args.dim,
                args.sigma,
                args.seed,
            )?;
            let format = match args.format {
                Some(FileFormat::Csv) => Format::Csv,
                Some(FileFormat::Packed) => Format::Packed,
                None => Format::from_path(&args.out),
            };
            save_embeddings(&set, &args.out, format)?;
            println!(
                "wrote {} embeddings ({} classes, dim {}) to {}",
                set.len(),
                set.num_classes(),
                set.dim(),
                args.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
