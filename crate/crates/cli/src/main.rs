use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmctune::image::GrayImage;
use mmctune::mma::MmaParams;
use mmctune::runner::{render, run_mmc, SolutionRecord};
use mmctune::vision::DescriptorCache;
use mmctune::workbench::pipeline::{evaluate_model, params_text, split_samples};
use mmctune::workbench::{
    generate_dataset, label_dataset, tune_case, FeasibilityModel, LabelOverrides, Manifest, RunConfig, TrainEvalReport,
};
use mmctune::Error;

#[derive(Parser)]
#[command(
    name = "mmctune",
    version,
    about = "Classifier-gated tuning of MMA parameters for MMC topology optimization"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the one in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded samples into <out>/dataset.
    Gen {
        /// Sample count; defaults to [dataset] samples.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Label the dataset: overrides first, then the connectivity oracle.
    Label {
        /// Override file (`<id> <label>` per line), replacing the configured one.
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
    /// Fit vocabulary and forest on the training split into <out>/model.txt.
    Train,
    /// Evaluate <out>/model.txt on the test split into <out>/eval.
    Eval,
    /// Run the closed tuning loop into <out>/tune.
    Tune {
        /// Train the model first instead of loading <out>/model.txt.
        #[arg(long)]
        train_first: bool,
    },
    /// One optimization run into <out>/run.
    Run {
        /// albefa,asyinit,asyincr,asydecr; defaults to the case reference.
        #[arg(long, value_delimiter = ',')]
        params: Option<Vec<f64>>,
    },
    /// Render a stored record's design to a PGM image.
    Render {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e).into())
}

fn write(p: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e).into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.output_dir.clone();
    let data = out.join("dataset");
    let model_path = out.join("model.txt");
    if !matches!(cli.command, Command::Render { .. }) {
        create_dir(&out)?;
        write(&out.join("config.txt"), &cfg.to_text())?;
    }
    match cli.command {
        Command::Gen { samples } => {
            let n = samples.unwrap_or(cfg.samples);
            let m = generate_dataset(&cfg, n, cfg.seed, &data)?;
            let converged = m.entries.iter().filter(|e| e.converged).count();
            println!(
                "generated {} records ({converged} converged) in {}",
                m.entries.len(),
                data.display()
            );
        }
        Command::Label { overrides } => {
            let m = Manifest::load(&data)?;
            let ov = match overrides.or(cfg.label_overrides.clone()) {
                Some(p) => LabelOverrides::load(&p)?,
                None => LabelOverrides::default(),
            };
            let labeled = label_dataset(&m, &data, &cfg.case, &ov)?;
            labeled.write(&data)?;
            let feasible = labeled
                .entries
                .iter()
                .filter(|e| e.label.as_str() == "feasible")
                .count();
            println!("labeled {} records: {feasible} feasible", labeled.entries.len());
        }
        Command::Train => {
            let model = train(&cfg, &data, &out)?;
            model.save(&model_path)?;
            println!("model written to {}", model_path.display());
        }
        Command::Eval => {
            let model = FeasibilityModel::load(&model_path)?;
            let m = Manifest::load(&data)?;
            let cache = DescriptorCache::new(out.join("cache"))?;
            let (train, test) = split_samples(&m, &data, &cfg, Some(&cache))?;
            let outcome = evaluate_model(&model, &test)?;
            let report = TrainEvalReport::new(&cfg, model, &train, outcome)?;
            report.write(&out.join("eval"))?;
            print!("{}", report.to_text());
        }
        Command::Tune { train_first } => {
            let model = if train_first {
                let model = train(&cfg, &data, &out)?;
                model.save(&model_path)?;
                model
            } else {
                FeasibilityModel::load(&model_path)?
            };
            let bundle = tune_case(&cfg, &model)?;
            bundle.write(&out.join("tune"))?;
            print!("{}", bundle.to_text());
        }
        Command::Run { params } => {
            let params = match params {
                Some(v) => {
                    let a: [f64; 4] = v
                        .try_into()
                        .map_err(|_| Failure::Usage("--params takes exactly four comma-separated values".into()))?;
                    MmaParams::from_array(a)
                }
                None if cfg.case.name == "lshape" => MmaParams::LSHAPE_REFERENCE,
                None => MmaParams::CANTILEVER_REFERENCE,
            };
            params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let mut rec = run_mmc(&cfg.case, &params)?;
            let dir = out.join("run");
            create_dir(&dir)?;
            rec.id = "run".into();
            rec.image_path = Some("run.pgm".into());
            if let Some(img) = &rec.image {
                img.write_pgm(&dir.join("run.pgm"))?;
            }
            write(&dir.join("run.json"), &rec.to_json())?;
            print!("{}", params_text(&params));
            println!(
                "compliance = {:.4}\nvolume_fraction = {:.4}\niterations = {}\nconverged = {}",
                rec.compliance, rec.volume_fraction, rec.iterations, rec.converged
            );
        }
        Command::Render { record, image } => {
            let text = std::fs::read_to_string(&record).map_err(|e| Error::io(&record, e))?;
            let rec = SolutionRecord::from_json(&text)?;
            let img: GrayImage = render(&rec.design, &cfg.case);
            img.write_pgm(&image)?;
        }
    }
    Ok(())
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<FeasibilityModel, Failure> {
    let m = Manifest::load(data)?;
    let cache = DescriptorCache::new(out.join("cache"))?;
    let (train, _) = split_samples(&m, data, cfg, Some(&cache))?;
    Ok(FeasibilityModel::train(&train, cfg)?)
}
