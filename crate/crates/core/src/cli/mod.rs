//! The `fgrnet` command line.
//!
//! Every subcommand resolves its configuration (file, then flags), writes
//! it to `<out>/<command>.toml` and puts its artifacts in the same
//! directory. Exit status: 0 success, 1 usage error, 2 runtime failure.

pub mod config;
pub mod overlay;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use overlay::{render_overlay, Polarity};

use crate::error::{Error, Result};
use crate::interpret::{explain, timing_benchmark, timing_table, BenchMethod, Explainable, OcclusionConfig, SaliencyMethod};
use crate::io::{read_ppm, write_ppm};
use crate::metrics::{confusion_matrix, metrics_from_confusion, MetricsReport};
use crate::model::{load_checkpoint, save_checkpoint, FgrNetParams};
use crate::robustness::{linf_distance, perturb, pgd_attack, robustness_report, AttackConfig, PerturbationSpec};
use crate::synth::{load_dataset, make_dataset, save_dataset, Scheme};
use crate::tensor::Tensor;
use crate::training::{predict_all, train, Example};

#[derive(Debug, Parser)]
#[command(name = "fgrnet", version, about = "Fundus image gradability: training, evaluation and attribution")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled dataset.
    GenData {
        #[arg(long)]
        samples: Option<usize>,
        /// two_class or three_class
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train a model on the training split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score the test split.
    Eval,
    /// Write a saliency map and its overlay for one image.
    Explain {
        #[arg(long)]
        method: Option<SaliencyMethod>,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        rectify: bool,
        #[arg(long)]
        polarity: Option<Polarity>,
        /// PPM image to explain instead of a test image.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Score the test split under each perturbation.
    Perturb {
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Targeted PGD against test images.
    Attack {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        radius: Option<f64>,
        /// Target class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Time prediction and the three attribution methods.
    Bench {
        #[arg(long)]
        runs: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Eval => "eval",
            Command::Explain { .. } => "explain",
            Command::Perturb { .. } => "perturb",
            Command::Attack { .. } => "attack",
            Command::Bench { .. } => "bench",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            2
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Merges the config file and flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
        c.train.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    if let Some(p) = &cli.checkpoint {
        c.checkpoint = Some(p.clone());
    }
    if let Some(d) = &cli.data {
        c.data.dir = Some(d.clone());
    }
    match &cli.command {
        Command::GenData { samples, scheme, size } => {
            set(&mut c.data.samples, samples);
            set(&mut c.data.scheme, scheme);
            set(&mut c.data.size, size);
        }
        Command::Train { epochs } => set(&mut c.train.epochs, epochs),
        Command::Eval => {}
        Command::Explain {
            method,
            class,
            patch,
            rectify,
            polarity,
            image,
        } => {
            set(&mut c.explain.method, method);
            c.explain.class = class.or(c.explain.class);
            c.explain.patch = patch.or(c.explain.patch);
            c.explain.rectify |= rectify;
            c.explain.polarity = polarity.or(c.explain.polarity);
            c.explain.image = image.clone().or(c.explain.image.take());
        }
        Command::Perturb { limit } => set(&mut c.perturb.limit, limit),
        Command::Attack {
            steps,
            radius,
            class,
            trials,
            image,
        } => {
            set(&mut c.attack.steps, steps);
            set(&mut c.attack.radius, radius);
            set(&mut c.attack.trials, trials);
            c.attack.target_class = class.or(c.attack.target_class);
            c.attack.image = image.clone().or(c.attack.image.take());
        }
        Command::Bench { runs } => set(&mut c.bench.runs, runs),
    }
    c.validate()?;
    Ok(c)
}

fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *slot = v.clone();
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write(&cfg.out.join(format!("{}.toml", cli.command.name())), &cfg.to_toml())?;
    match &cli.command {
        Command::GenData { .. } => gen_data(&cfg),
        Command::Train { .. } => train_cmd(&cfg),
        Command::Eval => eval_cmd(&cfg),
        Command::Explain { .. } => explain_cmd(&cfg),
        Command::Perturb { .. } => perturb_cmd(&cfg),
        Command::Attack { .. } => attack_cmd(&cfg),
        Command::Bench { .. } => bench_cmd(&cfg),
    }
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let d = &cfg.data;
    let ds = make_dataset(d.samples, d.scheme, cfg.seed, d.size)?;
    let dir = cfg.data_dir();
    save_dataset(&ds, &dir)?;
    println!(
        "wrote {} training and {} test images to {}",
        ds.train.len(),
        ds.test.len(),
        dir.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<FgrNetParams> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(Error::InvalidArgument(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(&path)
}

fn test_set(cfg: &RunConfig) -> Result<Vec<Example>> {
    let ds = load_dataset(&cfg.data_dir())?;
    let test = ds.test_examples();
    if test.is_empty() {
        return Err(Error::InvalidArgument("dataset has no test images".into()));
    }
    Ok(test)
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(&cfg.data_dir())?;
    let mut mc = cfg.model_config();
    mc.num_classes = ds.scheme.num_classes();
    if let Some(e) = ds.train.first() {
        mc.input_size = e.image.shape()[1];
    }
    let mut params = FgrNetParams::init(&mc, cfg.seed)?;
    let history = train(&mut params, &ds.train_examples(), &ds.test_examples(), &cfg.train, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.5} (rec {:.5}, cls {:.5})  val_acc {:.4}",
            r.epoch, r.loss.total, r.loss.rec, r.loss.cls, r.val_accuracy
        );
    })?;
    let ckpt = cfg.checkpoint_path();
    save_checkpoint(&params, &ckpt)?;
    write(&cfg.out.join("history.tsv"), &history.to_table())?;
    println!("saved {}", ckpt.display());
    Ok(())
}

/// Per-class rows, then macro averages and accuracy.
pub fn metrics_table(m: &MetricsReport) -> String {
    let mut s = String::from("class\tprecision\trecall\tf1\tsupport\n");
    for (n, c) in m.class_names.iter().zip(&m.per_class) {
        let _ = writeln!(s, "{n}\t{:.4}\t{:.4}\t{:.4}\t{}", c.precision, c.recall, c.f1, c.support);
    }
    let _ = writeln!(
        s,
        "macro\t{:.4}\t{:.4}\t{:.4}\t{}",
        m.macro_precision, m.macro_recall, m.macro_f1, m.total
    );
    let _ = writeln!(s, "accuracy\t\t\t{:.4}\t{}", m.accuracy, m.total);
    s
}

fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let params = load_model(cfg)?;
    let test = test_set(cfg)?;
    let k = params.config().num_classes;
    let preds = predict_all(&params, &test, 16)?;
    let labels: Vec<usize> = test.iter().map(|e| e.label).collect();
    let cm = confusion_matrix(&preds, &labels, k)?;
    let m = metrics_from_confusion(&cm)?;
    let mut cm_tsv = String::new();
    for row in &cm.counts {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(cm_tsv, "{}", cells.join("\t"));
    }
    write(&cfg.out.join("metrics.tsv"), &metrics_table(&m))?;
    write(&cfg.out.join("confusion.tsv"), &cm_tsv)?;
    write(&cfg.out.join("metrics.json"), &m.to_json())?;
    print!("{m}{cm}");
    Ok(())
}

/// The configured image, or a test image with its label.
fn pick_image(cfg: &RunConfig, image: &Option<PathBuf>, index: usize) -> Result<(Tensor, Option<usize>)> {
    match image {
        Some(p) => Ok((read_ppm(p)?, None)),
        None => {
            let test = test_set(cfg)?;
            let e = test.get(index).ok_or_else(|| {
                Error::InvalidArgument(format!("test index {index} out of range ({} images)", test.len()))
            })?;
            Ok((e.image.clone(), Some(e.label)))
        }
    }
}

fn predicted(params: &FgrNetParams, image: &Tensor) -> Result<usize> {
    Ok(params.predict(&Tensor::stack(&[image])?)?[0])
}

fn explain_cmd(cfg: &RunConfig) -> Result<()> {
    let params = load_model(cfg)?;
    let e = &cfg.explain;
    let (image, _) = pick_image(cfg, &e.image, e.index)?;
    let class = match e.class {
        Some(c) => c,
        None => predicted(&params, &image)?,
    };
    let mut occ = OcclusionConfig::for_side(params.input_dims()[1]);
    if let Some(p) = e.patch {
        occ.patch = p;
        occ.stride = (p / 2).max(1);
    }
    if let Some(s) = e.stride {
        occ.stride = s;
    }
    occ.baseline = e.baseline;
    let map = explain(&params, &image, class, e.method, e.rectify, Some(occ))?;
    let polarity = e.polarity.unwrap_or_else(|| Polarity::for_map(&map));
    let name = e.method.as_str();
    map.save_raw(&cfg.out.join(format!("saliency_{name}.raw")))?;
    write_ppm(&cfg.out.join(format!("overlay_{name}.ppm")), &render_overlay(&image, &map, polarity)?)?;
    println!(
        "{name} map for class {class}: {}x{}, range [{:.4e}, {:.4e}]",
        map.height,
        map.width,
        map.min(),
        map.max()
    );
    Ok(())
}

fn perturb_cmd(cfg: &RunConfig) -> Result<()> {
    let params = load_model(cfg)?;
    let mut test = test_set(cfg)?;
    test.truncate(cfg.perturb.limit);
    let specs: Vec<PerturbationSpec> = cfg.perturb.kinds.iter().map(|&k| PerturbationSpec::new(k, cfg.seed)).collect();
    let report = robustness_report(&params, &test, &specs)?;
    for s in &specs {
        write_ppm(&cfg.out.join(format!("perturbed_{}.ppm", s.kind)), &perturb(&test[0].image, s)?)?;
    }
    let table = report.to_table();
    write(&cfg.out.join("robustness.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn attack_cmd(cfg: &RunConfig) -> Result<()> {
    let params = load_model(cfg)?;
    let a = &cfg.attack;
    let k = params.config().num_classes;
    let inputs: Vec<(Tensor, Option<usize>)> = match &a.image {
        Some(_) => vec![pick_image(cfg, &a.image, 0)?],
        None => test_set(cfg)?
            .into_iter()
            .take(a.trials)
            .map(|e| (e.image, Some(e.label)))
            .collect(),
    };
    let mut table = String::from("index\tsource_class\ttarget\tp_initial\tp_final\tlinf\n");
    let mut raised = 0;
    for (i, (image, label)) in inputs.iter().enumerate() {
        let source = match label {
            Some(l) => *l,
            None => predicted(&params, image)?,
        };
        let target = a.target_class.unwrap_or((source + 1) % k);
        let ac = AttackConfig {
            steps: a.steps,
            step_size: a.step_size,
            radius: a.radius,
            target_class: target,
        };
        let res = pgd_attack(&params, image, &ac)?;
        let linf = linf_distance(&res.adversarial, image);
        if res.final_probability() > res.initial_probability() {
            raised += 1;
        }
        let _ = writeln!(
            table,
            "{i}\t{source}\t{target}\t{:.6}\t{:.6}\t{:.6}",
            res.initial_probability(),
            res.final_probability(),
            linf
        );
        if i == 0 {
            write_ppm(&cfg.out.join("adversarial_0.ppm"), &res.adversarial)?;
        }
    }
    write(&cfg.out.join("attack.tsv"), &table)?;
    println!(
        "target probability raised on {raised} of {} images",
        inputs.len()
    );
    Ok(())
}

fn bench_cmd(cfg: &RunConfig) -> Result<()> {
    let params = load_model(cfg)?;
    let (image, _) = pick_image(cfg, &None, cfg.bench.index)?;
    let reports = timing_benchmark(&params, &image, &BenchMethod::ALL, cfg.bench.runs)?;
    let table = timing_table(&reports);
    write(&cfg.out.join("timing.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
