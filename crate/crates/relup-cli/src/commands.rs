//! Subcommand bodies. Each returns its primary result so the integration
//! and acceptance tests can drive them directly.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relup::data::Dataset;
use relup::train::{
    attach_meta, infer, run_folds, train_step, Adam, Model, ModelConfig, ParamSnapshot,
};

use crate::args::{AblateArgs, BenchArgs, ExportArgs, ParseArgs, SweepArgs, TrainArgs};
use crate::config::{build_config, load_dataset, make_folds, RunOpts};
use crate::summary::RunSummary;
use crate::CliError;

pub const GRID_ALPHA: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
pub const GRID_BETA: [f64; 3] = [1e-6, 1e-5, 1e-4];
pub const GRID_TEMPERATURE: [f64; 3] = [2.0, 3.0, 4.0];

fn config_label(config: &ModelConfig) -> String {
    format!(
        "backbone={} relating-up={} alpha={} beta={} T={} seed={}",
        config.backbone.as_str(),
        config.relating_up,
        config.loss.alpha,
        config.loss.beta,
        config.loss.temperature,
        config.seed
    )
}

fn run_cv(dataset: &Dataset, config: &ModelConfig, run: &RunOpts, seed: u64) -> Result<(RunSummary, Vec<ParamSnapshot>), CliError> {
    let plans = make_folds(dataset, run.folds, seed, config.stratify)?;
    let results = run_folds(dataset, &plans, config, run.folds_parallel)?;
    let (reports, snapshots): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = RunSummary::from_reports(&dataset.name, &config_label(config), reports);
    Ok((summary, snapshots))
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunSummary, CliError> {
    let (config, run) = build_config(&args.common)?;
    let dataset = load_dataset(&run, config.seed)?;
    let (summary, snapshots) = run_cv(&dataset, &config, &run, config.seed)?;

    for (i, f) in summary.folds.iter().enumerate() {
        println!(
            "fold {}: best_epoch={} val={:.4} test={:.4} train_s/epoch={:.4} infer_s={:.4}",
            f.fold_index,
            f.best_epoch,
            summary.best_val(i),
            f.test_accuracy,
            f.wall_time_train_per_epoch,
            f.wall_time_infer
        );
    }
    println!(
        "{} [{}]: test accuracy {} over {} folds",
        summary.dataset,
        summary.config_label,
        summary.pm_line(),
        summary.folds.len()
    );

    if let Some(out) = &run.out {
        fs::create_dir_all(out)?;
        summary.append_csv(&out.join("summary.csv"))?;
        fs::write(out.join("summary.txt"), format!("{}\n", summary.pm_line()))?;
        // checkpoint the fold with the best validation accuracy (first on ties)
        let best = (0..summary.folds.len())
            .max_by(|&a, &b| {
                summary
                    .best_val(a)
                    .partial_cmp(&summary.best_val(b))
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        let mut snap = snapshots[best].clone();
        attach_meta(&mut snap, &config, dataset.feature_dim, dataset.num_classes);
        snap.save(&out.join("checkpoint.bin")).map_err(CliError::from)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<GridRow>, CliError> {
    if args.common.alpha.is_some() || args.common.beta.is_some() || args.common.temperature.is_some() {
        return Err(CliError::Usage(
            "sweep explores the fixed grid; drop --alpha/--beta/--temperature".into(),
        ));
    }
    let (mut config, run) = build_config(&args.common)?;
    config.relating_up = true;
    let dataset = load_dataset(&run, config.seed)?;
    // one fold plan shared by every grid point
    let plans = make_folds(&dataset, run.folds, config.seed, config.stratify)?;

    let mut rows = Vec::with_capacity(GRID_ALPHA.len() * GRID_BETA.len() * GRID_TEMPERATURE.len());
    for &alpha in &GRID_ALPHA {
        for &beta in &GRID_BETA {
            for &temperature in &GRID_TEMPERATURE {
                let mut point = config.clone();
                point.loss.alpha = alpha;
                point.loss.beta = beta;
                point.loss.temperature = temperature;
                let results = run_folds(&dataset, &plans, &point, run.folds_parallel)?;
                let accs: Vec<f64> = results.iter().map(|(r, _)| r.test_accuracy).collect();
                let (mean_accuracy, std_accuracy) = relup::train::mean_std(&accs);
                let row = GridRow {
                    alpha,
                    beta,
                    temperature,
                    mean_accuracy,
                    std_accuracy,
                };
                println!(
                    "alpha={alpha} beta={beta} T={temperature}: {:.2}±{:.2}",
                    mean_accuracy * 100.0,
                    std_accuracy * 100.0
                );
                rows.push(row);
            }
        }
    }

    let best = rows
        .iter()
        .copied()
        .reduce(|a, b| if b.mean_accuracy > a.mean_accuracy { b } else { a })
        .expect("grid is non-empty");
    println!(
        "best: alpha={} beta={} T={} mean={:.2} std={:.2}",
        best.alpha,
        best.beta,
        best.temperature,
        best.mean_accuracy * 100.0,
        best.std_accuracy * 100.0
    );

    if let Some(out) = &run.out {
        fs::create_dir_all(out)?;
        let mut file = fs::File::create(out.join("grid.csv"))?;
        writeln!(file, "alpha,beta,temperature,mean_acc,std_acc")?;
        for r in &rows {
            writeln!(
                file,
                "{},{},{},{},{}",
                r.alpha, r.beta, r.temperature, r.mean_accuracy, r.std_accuracy
            )?;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub arm: &'static str,
    pub use_distill: bool,
    pub use_hint: bool,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>, CliError> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let (mut config, run) = build_config(&args.common)?;
    config.relating_up = true;
    let dataset = load_dataset(&run, config.seed)?;

    let arms: [(&'static str, bool, bool); 4] = [
        ("A1", false, false),
        ("A2", false, true),
        ("A3", true, false),
        ("Full", true, true),
    ];
    let mut accs: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    for s in 0..args.seeds as u64 {
        let seed = config.seed + s;
        // all four arms consume byte-identical fold plans for this seed
        let plans = make_folds(&dataset, run.folds, seed, config.stratify)?;
        for (i, &(_, use_distill, use_hint)) in arms.iter().enumerate() {
            let mut arm_config = config.clone();
            arm_config.seed = seed;
            arm_config.loss.use_distill = use_distill;
            arm_config.loss.use_hint = use_hint;
            let results = run_folds(&dataset, &plans, &arm_config, run.folds_parallel)?;
            accs[i].extend(results.iter().map(|(r, _)| r.test_accuracy));
        }
    }

    let rows: Vec<AblationRow> = arms
        .iter()
        .enumerate()
        .map(|(i, &(arm, use_distill, use_hint))| {
            let (mean_accuracy, std_accuracy) = relup::train::mean_std(&accs[i]);
            AblationRow {
                arm,
                use_distill,
                use_hint,
                mean_accuracy,
                std_accuracy,
            }
        })
        .collect();

    println!("arm   distill hint  accuracy");
    for r in &rows {
        println!(
            "{:<5} {:<7} {:<5} {:.2}±{:.2}",
            r.arm,
            r.use_distill,
            r.use_hint,
            r.mean_accuracy * 100.0,
            r.std_accuracy * 100.0
        );
    }

    if let Some(out) = &run.out {
        fs::create_dir_all(out)?;
        let mut file = fs::File::create(out.join("ablation.csv"))?;
        writeln!(file, "arm,use_distill,use_hint,mean_acc,std_acc")?;
        for r in &rows {
            writeln!(
                file,
                "{},{},{},{},{}",
                r.arm, r.use_distill, r.use_hint, r.mean_accuracy, r.std_accuracy
            )?;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy)]
pub struct BenchReport {
    pub train_epoch_backbone: f64,
    pub train_epoch_relating_up: f64,
    pub train_ratio: f64,
    pub infer_backbone: f64,
    pub infer_relating_up: f64,
    pub infer_ratio: f64,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// One arm under measurement: its own model, optimizer, and rng.
struct BenchArm {
    config: ModelConfig,
    model: Model,
    opt: Adam,
    ids: Vec<usize>,
    rng: ChaCha8Rng,
}

impl BenchArm {
    fn new(dataset: &Dataset, config: ModelConfig, train_ids: &[usize]) -> Result<Self, CliError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::build(&config, dataset.feature_dim, dataset.num_classes, &mut rng)?;
        let opt = Adam::new(model.param_tensors(), config.learning_rate);
        Ok(BenchArm {
            config,
            model,
            opt,
            ids: train_ids.to_vec(),
            rng,
        })
    }

    fn timed_epoch(&mut self, dataset: &Dataset) -> Result<f64, CliError> {
        let start = Instant::now();
        self.ids.shuffle(&mut self.rng);
        for chunk in self.ids.chunks(self.config.batch_size) {
            let batch = dataset.batch(chunk)?;
            train_step(&self.model, &batch, &self.config, &mut self.opt, &mut self.rng)?;
        }
        Ok(start.elapsed().as_secs_f64())
    }

    fn timed_inference(&self, graphs: &[&relup::data::Graph]) -> Result<f64, CliError> {
        let start = Instant::now();
        infer(graphs, &self.model.encoder, &self.model.head_graph, self.config.batch_size)?;
        Ok(start.elapsed().as_secs_f64())
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Option<BenchReport>, CliError> {
    let (config, run) = build_config(&args.common)?;
    if args.epochs == 0 {
        println!("bench: 0 epochs requested, nothing to measure");
        return Ok(None);
    }
    let dataset = load_dataset(&run, config.seed)?;
    let plans = make_folds(&dataset, run.folds, config.seed, config.stratify)?;
    let train_ids = &plans[0].train_ids;

    let mut backbone_config = config.clone();
    backbone_config.relating_up = false;
    let mut relup_config = config.clone();
    relup_config.relating_up = true;
    let mut backbone = BenchArm::new(&dataset, backbone_config, train_ids)?;
    let mut relating = BenchArm::new(&dataset, relup_config, train_ids)?;

    // interleave the arms so allocator and cache drift cancels out of the
    // ratio; the first (warmup) round is discarded
    backbone.timed_epoch(&dataset)?;
    relating.timed_epoch(&dataset)?;
    let mut train_times_b = Vec::with_capacity(args.epochs);
    let mut train_times_r = Vec::with_capacity(args.epochs);
    for _ in 0..args.epochs {
        train_times_b.push(backbone.timed_epoch(&dataset)?);
        train_times_r.push(relating.timed_epoch(&dataset)?);
    }

    let graphs: Vec<&relup::data::Graph> = dataset.graphs.iter().collect();
    backbone.timed_inference(&graphs)?;
    relating.timed_inference(&graphs)?;
    let mut infer_times_b = Vec::with_capacity(5);
    let mut infer_times_r = Vec::with_capacity(5);
    for _ in 0..5 {
        infer_times_b.push(backbone.timed_inference(&graphs)?);
        infer_times_r.push(relating.timed_inference(&graphs)?);
    }

    let (train_b, train_r) = (median(train_times_b), median(train_times_r));
    let (infer_b, infer_r) = (median(infer_times_b), median(infer_times_r));

    let report = BenchReport {
        train_epoch_backbone: train_b,
        train_epoch_relating_up: train_r,
        train_ratio: train_r / train_b,
        infer_backbone: infer_b,
        infer_relating_up: infer_r,
        infer_ratio: infer_r / infer_b,
    };
    println!(
        "train_s_per_epoch: backbone={:.5} relating_up={:.5} ratio={:.3}",
        report.train_epoch_backbone, report.train_epoch_relating_up, report.train_ratio
    );
    println!(
        "infer_s: backbone={:.5} relating_up={:.5} ratio={:.3}",
        report.infer_backbone, report.infer_relating_up, report.infer_ratio
    );
    Ok(Some(report))
}

pub fn cmd_export_embeddings(args: &ExportArgs) -> Result<PathBuf, CliError> {
    let (config, run) = build_config(&args.common)?;
    if !args.checkpoint.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let snap = ParamSnapshot::load(&args.checkpoint).map_err(CliError::from)?;
    let (model, feature_dim, _) = Model::from_snapshot(&snap).map_err(CliError::from)?;
    let dataset = load_dataset(&run, config.seed)?;
    if dataset.feature_dim != feature_dim {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}-dimensional features, dataset has {}",
            feature_dim, dataset.feature_dim
        )));
    }

    let out_dir = run.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("embeddings.csv");
    let mut file = fs::File::create(&path)?;
    let d = model.encoder.output_dim();
    let mut header = String::from("graph_id,label");
    for j in 0..d {
        header.push_str(&format!(",e{j}"));
    }
    writeln!(file, "{header}")?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ids: Vec<usize> = (0..dataset.len()).collect();
    for chunk in ids.chunks(config.batch_size) {
        let batch = dataset.batch(chunk)?;
        let tape = relup::tensor::Tape::new();
        let emb = relup::gnn::encode_graphs(&tape, &batch, &model.encoder, false, &mut rng)
            .map_err(|e| CliError::Other(anyhow::anyhow!(e.to_string())))?;
        let data = emb.data_vec();
        for (row, &gid) in chunk.iter().enumerate() {
            let mut line = format!("{},{}", gid, dataset.graphs[gid].label);
            for j in 0..d {
                line.push_str(&format!(",{}", data[row * d + j]));
            }
            writeln!(file, "{line}")?;
        }
    }
    println!("wrote {} rows to {}", dataset.len(), path.display());
    Ok(path)
}

pub fn cmd_parse_check(args: &ParseArgs) -> Result<(), CliError> {
    let (config, run) = build_config(&args.common)?;
    let dataset = load_dataset(&run, config.seed)?;
    let counts = dataset.class_counts();
    println!("dataset:       {}", dataset.name);
    println!("graphs:        {}", dataset.len());
    println!("classes:       {} {:?}", dataset.num_classes, counts);
    println!("feature_dim:   {}", dataset.feature_dim);
    println!("featurization: {}", dataset.featurization.as_str());
    println!("mean nodes:    {:.2}", dataset.mean_nodes());
    println!("mean edges:    {:.2}", dataset.mean_edges());
    Ok(())
}
