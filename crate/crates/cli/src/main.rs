use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod run;

#[derive(Debug, Parser)]
#[command(name = "ffields", version, about = "Fit, evaluate and inspect factor field models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every fitting command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Configuration file (`key = value` with optional sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Configuration override `key=value`, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Random seed; defaults to the config value, which defaults to 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; 1 keeps runs bit-reproducible.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a 2-D field to an image (PNG or PPM).
    FitImage {
        #[command(flatten)]
        common: Common,
        image: PathBuf,
    },
    /// Fit a signed distance field to a sample file.
    FitSdf {
        #[command(flatten)]
        common: Common,
        samples: PathBuf,
        /// Held-out samples for the final gIoU; defaults to the training set.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Fit a radiance field to a ray dataset.
    FitRf {
        #[command(flatten)]
        common: Common,
        data: PathBuf,
        /// Held-out views for the final PSNR; defaults to the training set.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Fit several images jointly with one shared basis.
    TrainShared {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Evaluate a checkpoint on an image, SDF sample file or ray dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a checkpoint: the image, an SDF slice or orbit views.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output width and height in pixels.
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Orbit views for radiance fields.
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print parameter counts for a configuration.
    Info {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write synthetic data: image, texture, sphere-sdf, torus-sdf or blob-rays.
    MakeSynthetic {
        kind: String,
        out: PathBuf,
        /// Samples for SDF files.
        #[arg(long, default_value_t = 800_000)]
        count: usize,
        /// Image or view side length in pixels.
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training views for blob-rays.
        #[arg(long, default_value_t = 64)]
        views: usize,
        /// Held-out views for blob-rays, written next to `out` with a `_test` suffix.
        #[arg(long, default_value_t = 8)]
        holdout: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FitImage { common, image } => run::fit_image(&common, &image),
        Command::FitSdf { common, samples, test } => run::fit_sdf(&common, &samples, test.as_deref()),
        Command::FitRf { common, data, test } => run::fit_rf(&common, &data, test.as_deref()),
        Command::TrainShared { common, images } => run::train_shared(&common, &images),
        Command::Eval {
            checkpoint,
            input,
            threads,
        } => run::eval(&checkpoint, &input, threads),
        Command::Render {
            checkpoint,
            size,
            views,
            out,
            threads,
        } => run::render(&checkpoint, size, views, &out, threads),
        Command::Info { config, overrides } => run::info(config.as_deref(), &overrides),
        Command::MakeSynthetic {
            kind,
            out,
            count,
            size,
            seed,
            views,
            holdout,
        } => run::make_synthetic(&kind, &out, count, size, seed, views, holdout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
