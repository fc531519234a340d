use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zeropose::pipeline::{
    self, selftest, DescriptorBackend, PipelineConfig, PipelineError, Sweep,
};

#[derive(Parser)]
#[command(name = "zeropose", version, about = "Template-based 6D pose estimation of unseen objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backend: Option<DescriptorBackend>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Detections JSON replacing ground-truth visible masks.
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render template stores for every model of a dataset.
    RenderTemplates {
        #[command(flatten)]
        common: Common,
        /// Store root; overrides --store.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate poses and write a results CSV.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Results CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a results CSV against the dataset ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        results: Option<PathBuf>,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the template count or the correspondence count.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep: Sweep,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<usize>,
        /// CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a small synthetic dataset in BOP layout.
    SynthDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        images: u32,
    },
    /// End-to-end check on a procedural object; exits 1 on failure.
    Selftest {
        #[arg(long)]
        seed: Option<u64>,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(b) = c.backend {
        cfg.descriptor_backend = b;
    }
    if c.store.is_some() {
        cfg.store = c.store.clone();
    }
    if c.dataset.is_some() {
        cfg.dataset = c.dataset.clone();
    }
    if c.masks.is_some() {
        cfg.masks = c.masks.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_report<T: serde::Serialize>(value: &T, path: &PathBuf) -> Result<(), PipelineError> {
    let bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    std::fs::write(path, bytes).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

fn run(cli: Cli) -> Result<ExitCode, PipelineError> {
    match cli.command {
        Command::RenderTemplates { common, out } => {
            let mut cfg = load_config(&common)?;
            if out.is_some() {
                cfg.store = out;
            }
            let manifests = pipeline::render_templates_for_dataset(&cfg)?;
            for m in &manifests {
                println!("obj {}: {} templates, digest {}", m.object_id, m.views.len(), m.digest());
            }
        }
        Command::Estimate { common, out } => {
            let mut cfg = load_config(&common)?;
            if out.is_some() {
                cfg.results = out;
            }
            let s = pipeline::estimate(&cfg)?;
            println!("{} estimates, {} failures -> {}", s.estimates, s.failures, s.results.display());
        }
        Command::Evaluate { common, results, out } => {
            let mut cfg = load_config(&common)?;
            if results.is_some() {
                cfg.results = results;
            }
            let r = pipeline::evaluate(&cfg, &out)?;
            let s = r.summary;
            println!(
                "{} = {:.4} (MSSD {:.4}, MSPD {:.4}), ADD-0.1d {:.4}, {} instances",
                r.metric, s.ar, s.ar_mssd, s.ar_mspd, s.add_01d, s.instances
            );
        }
        Command::Ablate { common, sweep, values, out } => {
            let cfg = load_config(&common)?;
            let rows = pipeline::ablate(&cfg, sweep, &values)?;
            pipeline::write_ablation_csv(&rows, &out)?;
            for (v, ar) in rows {
                println!("{v}\t{ar:.4}");
            }
        }
        Command::SynthDataset { out, seed, images } => {
            let spec = zeropose::synthetic::SyntheticDatasetSpec { images, seed, ..Default::default() };
            let n = zeropose::synthetic::write_synthetic_dataset(&out, &spec)?;
            println!("{n} instances in {images} images -> {}", out.display());
        }
        Command::Selftest { seed, out } => {
            let opts = selftest::SelftestOptions { seed: seed.unwrap_or(selftest::DEFAULT_SELFTEST_SEED), ..Default::default() };
            let r = selftest::run_selftest(&opts);
            if let Some(p) = &out {
                write_report(&r, p)?;
            }
            println!(
                "{}: median rotation {:.3} deg, median translation {:.2} mm ({:.2}% of {:.1} mm), {}/{} estimated, template spacing {:.2} deg, {:.1} s",
                if r.passed { "PASS" } else { "FAIL" },
                r.median_rotation_deg,
                r.median_translation_mm,
                100.0 * r.median_translation_fraction,
                r.diameter_mm,
                r.successes,
                r.queries,
                r.min_template_spacing_deg,
                r.runtime_s
            );
            if !r.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
