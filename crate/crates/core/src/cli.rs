//! Command-line front end: strict TOML run configs, seeded pipelines and
//! report / plot-data emission.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack_batch, attack_manifest, AttackConfig, AttackKind};
use crate::detect::{
    extract_features, fit_ensemble, fit_quantile_detector, read_feature_csv, write_feature_csv, Confusion,
    DetectionSample, QuantileCostDetector,
};
use crate::error::{Error, Result};
use crate::evalharness::{
    clean_records, dataset_from_records, gen_synthetic, load_idx, read_dataset_csv, split_indices, write_dataset_csv,
    Classifier, Dataset, DetectConfig, ExperimentConfig, Origin, PipelineConfig, Record, Seeds, SyntheticSpec,
};
use crate::model::{load_checkpoint, save_checkpoint, NetConfig, ResidualNet};
use crate::textfmt::{format_real, to_string};
use crate::trainer::{TrainConfig, TrainMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_MISSING_FILE: i32 = 4;
pub const EXIT_INVALID: i32 = 5;
pub const EXIT_NUMERIC: i32 = 6;
pub const EXIT_IO: i32 = 7;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::MissingFile(_) => EXIT_MISSING_FILE,
        Error::Dimension(_) | Error::Index(_) | Error::Contract(_) | Error::Format { .. } | Error::Document(_) => {
            EXIT_INVALID
        }
        Error::Numeric(_) | Error::Divergence { .. } => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Training set; defaults to `<out>/dataset.csv`.
    pub dataset: Option<PathBuf>,
    /// Test set; defaults to `<out>/test.csv`.
    pub test_dataset: Option<PathBuf>,
    /// Defaults to `<out>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<out>/adversarial.csv`.
    pub adversarial: Option<PathBuf>,
    /// Defaults to `<out>/features.csv`.
    pub features: Option<PathBuf>,
    /// When both are set, `gen-data` ingests IDX files instead of sampling.
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: SyntheticSpec,
    pub model: NetConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub detect: DetectConfig,
    pub experiment: ExperimentConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: SyntheticSpec::default(),
            model: NetConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            detect: DetectConfig::default(),
            experiment: ExperimentConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, column)
}

impl RunConfig {
    /// Strict parse: unknown keys are errors reported with line and column.
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            Error::Config {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&read_text(path)?)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            data: self.data.clone(),
            model: self.model,
            train: self.train.clone(),
            attack: self.attack.clone(),
            detect: self.detect.clone(),
            experiment: self.experiment.clone(),
        }
    }

    fn path(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(default))
    }
}

fn read_text(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        r => Ok(r?),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn write_records(path: &Path, records: &[Record<f64>]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset_csv(&mut buf, records)?;
    write(path, buf)
}

fn read_records(path: &Path) -> Result<Vec<Record<f64>>> {
    read_dataset_csv(read_text(path)?.as_bytes())
}

#[derive(Debug, Parser)]
#[command(
    name = "resdetect",
    version,
    about = "Adversarial sample detection from residual-network trajectories"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for attacks, features and forests.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Sample (or ingest) the training and test sets.
    GenData,
    /// Train a classifier on the training set.
    Train,
    /// Attack the test set with the configured attack.
    Attack,
    /// Trajectory features of a dataset file.
    ExtractFeatures,
    /// Fit the ensemble detector on a feature file.
    FitDetector,
    /// Detector trained and tested on the configured attack.
    ExperimentSeen,
    /// Detector trained on FGM, tested on other attacks.
    ExperimentUnseen,
    /// Detector trained on a second distribution, tested on a third.
    ExperimentOod,
    /// Embedding scatters and cost histograms of vanilla and LAP nets.
    DemoCircles,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; returns the files it wrote.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::contract(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let pipeline = cfg.pipeline();
    pipeline.validate()?;
    match cmd {
        Command::GenData => gen_data(cfg),
        Command::Train => train_cmd(cfg),
        Command::Attack => attack_cmd(cfg),
        Command::ExtractFeatures => extract_cmd(cfg),
        Command::FitDetector => fit_detector_cmd(cfg),
        Command::ExperimentSeen | Command::ExperimentUnseen | Command::ExperimentOod => {
            let c = classifier(cfg)?;
            let (report, name) = match cmd {
                Command::ExperimentSeen => (pipeline.seen(&c)?, "report_seen.json"),
                Command::ExperimentUnseen => (pipeline.unseen(&c)?, "report_unseen.json"),
                _ => (pipeline.ood(&c)?, "report_ood.json"),
            };
            let path = cfg.out.join(name);
            write(&path, report.to_document())?;
            Ok(vec![path])
        }
        Command::DemoCircles => demo_circles(cfg),
    }
}

fn gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let seeds = Seeds::derive(cfg.seed);
    let p = cfg.pipeline();
    let (train, test) = match (&cfg.paths.idx_images, &cfg.paths.idx_labels) {
        (Some(img), Some(lab)) => {
            let all = load_idx::<f64>(img, lab)?;
            let (a, b) = split_indices(all.len(), seeds.split);
            (all.subset(&a), all.subset(&b))
        }
        (None, None) => (
            gen_synthetic::<f64>(&p.data_spec(&seeds))?,
            gen_synthetic::<f64>(&p.test_spec(&seeds))?,
        ),
        _ => {
            return Err(Error::contract(
                "paths.idx_images and paths.idx_labels must be set together",
            ))
        }
    };
    let a = cfg.path(&cfg.paths.dataset, "dataset.csv");
    let b = cfg.path(&cfg.paths.test_dataset, "test.csv");
    write_records(&a, &clean_records(&train))?;
    write_records(&b, &clean_records(&test))?;
    Ok(vec![a, b])
}

fn load_dataset(path: &Path) -> Result<Dataset<f64>> {
    dataset_from_records(&read_records(path)?)
}

fn load_net(cfg: &RunConfig) -> Result<ResidualNet<f64>> {
    load_checkpoint(&read_text(&cfg.path(&cfg.paths.checkpoint, "checkpoint.json"))?)
}

fn train_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let seeds = Seeds::derive(cfg.seed);
    let data = load_dataset(&cfg.path(&cfg.paths.dataset, "dataset.csv"))?;
    if data.dim() != cfg.model.dim {
        return Err(Error::dim(format!(
            "dataset has d = {}, model.dim = {}",
            data.dim(),
            cfg.model.dim
        )));
    }
    let mut net = ResidualNet::init(&cfg.model, seeds.init)?;
    let report = crate::trainer::train(
        &mut net,
        &data.points,
        &data.labels,
        &cfg.pipeline().train_config(&seeds),
    )?;
    let ck = cfg.path(&cfg.paths.checkpoint, "checkpoint.json");
    let rp = cfg.out.join("train_report.json");
    write(&ck, save_checkpoint(&net))?;
    write(&rp, report.to_document())?;
    Ok(vec![ck, rp])
}

fn attack_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let seeds = Seeds::derive(cfg.seed);
    let net = load_net(cfg)?;
    let test = load_dataset(&cfg.path(&cfg.paths.test_dataset, "test.csv"))?;
    let acfg = cfg.pipeline().attack_config(cfg.attack.kind, &seeds);
    let results = attack_batch(&net, &test.points, &test.labels, &acfg, Some(&test.bounds))?;
    let mut records = clean_records(&test);
    records.extend(results.iter().zip(&test.labels).map(|(r, &label)| Record {
        point: r.adversarial.clone(),
        label,
        origin: Origin::Adversarial,
    }));
    let adv = cfg.path(&cfg.paths.adversarial, "adversarial.csv");
    let man = cfg.out.join("attack_manifest.json");
    write_records(&adv, &records)?;
    write(&man, attack_manifest(&acfg, &results))?;
    Ok(vec![adv, man])
}

fn extract_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    use rayon::prelude::*;
    let net = load_net(cfg)?;
    let records = read_records(&cfg.path(&cfg.paths.adversarial, "adversarial.csv"))?;
    let samples = records
        .par_iter()
        .map(|r| {
            let t = net.forward(&r.point)?;
            Ok(DetectionSample {
                features: extract_features(&t),
                label: u8::from(r.origin == Origin::Adversarial),
                predicted_class: t.predicted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_feature_csv(&mut buf, &samples)?;
    let path = cfg.path(&cfg.paths.features, "features.csv");
    write(&path, buf)?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct DetectorMetricsDoc {
    n_train: usize,
    n_test: usize,
    accuracy: f64,
    tpr: f64,
    fpr: f64,
    auroc: f64,
}

fn fit_detector_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let seeds = Seeds::derive(cfg.seed);
    let samples = read_feature_csv(read_text(&cfg.path(&cfg.paths.features, "features.csv"))?.as_bytes())?;
    let (a, b) = split_indices(samples.len(), seeds.split);
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("feature file too small to split 0.9/0.1"));
    }
    let train: Vec<DetectionSample> = a.iter().map(|&i| samples[i].clone()).collect();
    let test: Vec<&DetectionSample> = b.iter().map(|&i| &samples[i]).collect();
    let dcfg = cfg.pipeline().detect_config(&seeds);
    let det = fit_ensemble(&train, &dcfg.forest, dcfg.min_class_samples)?;
    let verdicts: Vec<_> = test
        .iter()
        .map(|s| det.predict(&s.features.values, s.predicted_class))
        .collect();
    let truth: Vec<u8> = test.iter().map(|s| s.label).collect();
    let c = Confusion::from_labels(&verdicts.iter().map(|v| v.label).collect::<Vec<_>>(), &truth);
    let general: Vec<f64> = verdicts.iter().map(|v| v.general_score).collect();
    let doc = DetectorMetricsDoc {
        n_train: train.len(),
        n_test: test.len(),
        accuracy: c.accuracy(),
        tpr: c.tpr(),
        fpr: c.fpr(),
        auroc: crate::detect::auroc(&general, &truth)?,
    };
    let dp = cfg.out.join("detector.json");
    let mp = cfg.out.join("detector_metrics.json");
    write(&dp, to_string(&det))?;
    write(&mp, to_string(&doc))?;
    Ok(vec![dp, mp])
}

/// The checkpoint and test set on disk when a checkpoint exists (or is
/// named explicitly), otherwise a classifier trained in memory.
fn classifier(cfg: &RunConfig) -> Result<Classifier> {
    let seeds = Seeds::derive(cfg.seed);
    let ck = cfg.path(&cfg.paths.checkpoint, "checkpoint.json");
    if cfg.paths.checkpoint.is_some() || ck.exists() {
        let net = load_net(cfg)?;
        let test_data = load_dataset(&cfg.path(&cfg.paths.test_dataset, "test.csv"))?;
        return Ok(Classifier { seeds, net, test_data });
    }
    Ok(cfg.pipeline().prepare(cfg.seed)?.classifier)
}

/// Blocks drawn in the SVG scatter: 6 and 9, capped at M.
fn shown_blocks(m: usize) -> Vec<usize> {
    let mut b: Vec<usize> = [6, 9].iter().map(|&k| k.min(m)).collect();
    b.dedup();
    b
}

struct DemoNet {
    mode: &'static str,
    net: ResidualNet<f64>,
}

fn demo_circles(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.out.join("demo");
    let mut written = Vec::new();
    let base = cfg.pipeline();
    let mut nets = Vec::new();
    let mut test = None;
    let mut seeds = Seeds::derive(cfg.seed);
    for (mode, name) in [(TrainMode::Vanilla, "vanilla"), (TrainMode::Lap, "lap")] {
        let mut p = base.clone();
        p.train.mode = mode;
        let prepared = p.prepare(cfg.seed)?;
        seeds = prepared.classifier.seeds;
        test = Some(prepared.classifier.test_data);
        nets.push(DemoNet {
            mode: name,
            net: prepared.classifier.net,
        });
    }
    let test = test.expect("two nets trained");
    let n_ood = (test.len() / 10).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.ood);
    let ood: Vec<Vec<f64>> = (0..n_ood)
        .map(|_| (0..2).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let acfg = base.attack_config(AttackKind::Fgm, &seeds);

    for d in &nets {
        let mut groups: Vec<(&str, &[f64])> = test
            .points
            .iter()
            .zip(&test.labels)
            .map(|(p, &y)| (if y == 0 { "class0" } else { "class1" }, p.as_slice()))
            .collect();
        groups.extend(ood.iter().map(|p| ("ood", p.as_slice())));
        let trajs = groups
            .iter()
            .map(|(_, p)| d.net.forward(p))
            .collect::<Result<Vec<_>>>()?;
        let mut csv = String::from("block,x0,x1,group\n");
        for m in 0..=d.net.num_blocks() {
            for ((g, _), t) in groups.iter().zip(&trajs) {
                let e = &t.embeddings[m];
                writeln!(csv, "{m},{},{},{g}", format_real(e[0]), format_real(e[1])).expect("string write");
            }
        }
        let path = dir.join(format!("scatter_{}.csv", d.mode));
        write(&path, csv)?;
        written.push(path);
        let path = dir.join(format!("scatter_{}.svg", d.mode));
        write(
            &path,
            scatter_svg(&groups, &trajs, &shown_blocks(d.net.num_blocks()), d.mode),
        )?;
        written.push(path);

        let clean: Vec<f64> = trajs[..test.len()].iter().map(|t| t.transport_cost()).collect();
        let adv = attack_batch(&d.net, &test.points, &test.labels, &acfg, Some(&test.bounds))?;
        let adv_cost = adv
            .iter()
            .map(|r| Ok(d.net.forward(&r.adversarial)?.transport_cost()))
            .collect::<Result<Vec<f64>>>()?;
        let q = fit_quantile_detector(&clean)?;
        let hist = histogram(&clean, &adv_cost, 30);
        let path = dir.join(format!("cost_histogram_{}.csv", d.mode));
        write(&path, histogram_csv(&hist, &q))?;
        written.push(path);
        let path = dir.join(format!("cost_histogram_{}.svg", d.mode));
        write(&path, histogram_svg(&hist, &q, d.mode))?;
        written.push(path);
    }
    Ok(written)
}

struct Histogram {
    edges: Vec<f64>,
    clean: Vec<usize>,
    adversarial: Vec<usize>,
}

fn histogram(clean: &[f64], adv: &[f64], bins: usize) -> Histogram {
    let hi = clean.iter().chain(adv).fold(0.0f64, |m, &v| m.max(v));
    let hi = if hi > 0.0 { hi } else { 1.0 };
    let w = hi / bins as f64;
    let edges = (0..=bins).map(|i| i as f64 * w).collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0; bins];
        for &x in xs {
            c[((x / w) as usize).min(bins - 1)] += 1;
        }
        c
    };
    Histogram {
        edges,
        clean: count(clean),
        adversarial: count(adv),
    }
}

/// Rows `series,bin_lo,bin_hi,count` for the two series, then one row per
/// quantile line with the threshold as both edges and an empty count.
fn histogram_csv(h: &Histogram, q: &QuantileCostDetector) -> String {
    let mut s = String::from("series,bin_lo,bin_hi,count\n");
    for (name, counts) in [("clean", &h.clean), ("adversarial", &h.adversarial)] {
        for (i, c) in counts.iter().enumerate() {
            writeln!(
                s,
                "{name},{},{},{c}",
                format_real(h.edges[i]),
                format_real(h.edges[i + 1])
            )
            .expect("string write");
        }
    }
    for (p, v) in [(q.q_low, q.low), (q.q_high, q.high)] {
        writeln!(s, "quantile_{p},{},{},", format_real(v), format_real(v)).expect("string write");
    }
    s
}

const SVG_SIZE: f64 = 320.0;

fn svg_open(width: f64, height: f64) -> String {
    format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n")
}

fn scatter_svg(
    groups: &[(&str, &[f64])],
    trajs: &[crate::model::Trajectory<f64>],
    blocks: &[usize],
    title: &str,
) -> String {
    let mut s = svg_open(SVG_SIZE * blocks.len() as f64, SVG_SIZE + 20.0);
    for (panel, &m) in blocks.iter().enumerate() {
        let pts: Vec<&Vec<f64>> = trajs.iter().map(|t| &t.embeddings[m]).collect();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let ox = panel as f64 * SVG_SIZE;
        let map = |v: f64, k: usize| {
            let span = (hi[k] - lo[k]).max(1e-12);
            10.0 + (v - lo[k]) / span * (SVG_SIZE - 20.0)
        };
        writeln!(
            s,
            "<text x=\"{}\" y=\"15\" font-size=\"12\">{title} block {m}</text>",
            ox + 10.0
        )
        .expect("string write");
        for ((g, _), p) in groups.iter().zip(&pts) {
            let color = match *g {
                "class0" => "#1f77b4",
                "class1" => "#ff7f0e",
                _ => "#d62728",
            };
            writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"{color}\"/>",
                ox + map(p[0], 0),
                20.0 + SVG_SIZE - map(p[1], 1)
            )
            .expect("string write");
        }
    }
    s.push_str("</svg>\n");
    s
}

fn histogram_svg(h: &Histogram, q: &QuantileCostDetector, title: &str) -> String {
    let (w, ht) = (2.0 * SVG_SIZE, SVG_SIZE);
    let mut s = svg_open(w, ht);
    let top = h.clean.iter().chain(&h.adversarial).copied().max().unwrap_or(1).max(1) as f64;
    let xmax = *h.edges.last().expect("edges");
    let x = |v: f64| 20.0 + v / xmax * (w - 40.0);
    let bw = x(h.edges[1]) - x(h.edges[0]);
    writeln!(
        s,
        "<text x=\"20\" y=\"15\" font-size=\"12\">{title} transport cost</text>"
    )
    .expect("string write");
    for (counts, color) in [(&h.clean, "#1f77b4"), (&h.adversarial, "#d62728")] {
        for (i, &c) in counts.iter().enumerate() {
            let bh = c as f64 / top * (ht - 40.0);
            writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.5\"/>",
                x(h.edges[i]),
                ht - 20.0 - bh,
                bw,
                bh
            )
            .expect("string write");
        }
    }
    for v in [q.low, q.high] {
        writeln!(
            s,
            "<line x1=\"{0:.2}\" y1=\"20\" x2=\"{0:.2}\" y2=\"{1:.2}\" stroke=\"black\" stroke-dasharray=\"4 2\"/>",
            x(v),
            ht - 20.0
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    s
}
