//! Configuration assembly: defaults, then the key=value file, then flags.

use std::collections::BTreeMap;
use std::path::PathBuf;

use relup::data::{
    apply_label_noise, generate_synthetic, load_tudataset, stratification_feasible,
    stratified_folds, unstratified_folds, Dataset, Featurization, FoldPlan,
};
use relup::gnn::{Backbone, Readout};
use relup::train::ModelConfig;

use crate::args::CommonOpts;
use crate::CliError;

/// Run-level options that are not part of the model itself.
#[derive(Debug, Clone)]
pub struct RunOpts {
    pub data_root: PathBuf,
    pub dataset: Option<String>,
    pub synthetic: Option<usize>,
    pub label_noise: f64,
    pub featurize: Option<Featurization>,
    pub folds: usize,
    pub folds_parallel: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunOpts {
    fn default() -> Self {
        RunOpts {
            data_root: PathBuf::from("data"),
            dataset: None,
            synthetic: None,
            label_noise: 0.0,
            featurize: None,
            folds: 10,
            folds_parallel: 1,
            out: None,
        }
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| CliError::Usage(format!("bad value {value:?} for field {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("bad value {value:?} for field {key:?}"))),
    }
}

fn apply_pair(config: &mut ModelConfig, run: &mut RunOpts, key: &str, value: &str) -> Result<(), CliError> {
    match key {
        "backbone" => {
            config.backbone = Backbone::parse(value)
                .ok_or_else(|| CliError::Usage(format!("unknown backbone {value:?}")))?;
        }
        "readout" => {
            config.readout = Readout::parse(value)
                .ok_or_else(|| CliError::Usage(format!("unknown readout {value:?}")))?;
        }
        "relating_up" => config.relating_up = parse_bool(key, value)?,
        "stratify" => config.stratify = parse_bool(key, value)?,
        "alpha" => config.loss.alpha = parse_field(key, value)?,
        "beta" => config.loss.beta = parse_field(key, value)?,
        "temperature" => config.loss.temperature = parse_field(key, value)?,
        "batch_size" => config.batch_size = parse_field(key, value)?,
        "hidden" => config.hidden = parse_field(key, value)?,
        "layers" => config.layers = parse_field(key, value)?,
        "heads" => config.heads = parse_field(key, value)?,
        "relation_layers" => config.relation_layers = parse_field(key, value)?,
        "lr" => config.learning_rate = parse_field(key, value)?,
        "max_epochs" => config.max_epochs = parse_field(key, value)?,
        "patience" => config.patience = parse_field(key, value)?,
        "dropout" => config.dropout = parse_field(key, value)?,
        "seed" => config.seed = parse_field(key, value)?,
        "dataset" => run.dataset = Some(value.to_string()),
        "data_root" => run.data_root = PathBuf::from(value),
        "synthetic" => run.synthetic = Some(parse_field(key, value)?),
        "label_noise" => run.label_noise = parse_field(key, value)?,
        "folds" => run.folds = parse_field(key, value)?,
        "folds_parallel" => run.folds_parallel = parse_field(key, value)?,
        "out" => run.out = Some(PathBuf::from(value)),
        "featurize" => {
            run.featurize = Some(
                Featurization::parse(value)
                    .ok_or_else(|| CliError::Usage(format!("unknown featurization {value:?}")))?,
            );
        }
        _ => return Err(CliError::Usage(format!("unknown config field {key:?}"))),
    }
    Ok(())
}

fn read_config_file(path: &PathBuf) -> Result<BTreeMap<String, String>, CliError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (no, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                no + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Builds the effective configuration: defaults, overlaid by the optional
/// config file, overlaid by explicit flags.
pub fn build_config(opts: &CommonOpts) -> Result<(ModelConfig, RunOpts), CliError> {
    let mut config = ModelConfig::default();
    let mut run = RunOpts::default();

    if let Some(path) = &opts.config {
        for (key, value) in read_config_file(path)? {
            apply_pair(&mut config, &mut run, &key, &value)?;
        }
    }

    if let Some(v) = &opts.backbone {
        apply_pair(&mut config, &mut run, "backbone", v)?;
    }
    if let Some(v) = &opts.readout {
        apply_pair(&mut config, &mut run, "readout", v)?;
    }
    if let Some(v) = opts.relating_up {
        config.relating_up = v;
    }
    if let Some(v) = opts.stratify {
        config.stratify = v;
    }
    if let Some(v) = opts.alpha {
        config.loss.alpha = v;
    }
    if let Some(v) = opts.beta {
        config.loss.beta = v;
    }
    if let Some(v) = opts.temperature {
        config.loss.temperature = v;
    }
    if let Some(v) = opts.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = opts.hidden {
        config.hidden = v;
    }
    if let Some(v) = opts.layers {
        config.layers = v;
    }
    if let Some(v) = opts.heads {
        config.heads = v;
    }
    if let Some(v) = opts.relation_layers {
        config.relation_layers = v;
    }
    if let Some(v) = opts.lr {
        config.learning_rate = v;
    }
    if let Some(v) = opts.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = opts.patience {
        config.patience = v;
    }
    if let Some(v) = opts.dropout {
        config.dropout = v;
    }
    if let Some(v) = opts.seed {
        config.seed = v;
    }
    if let Some(v) = &opts.dataset {
        run.dataset = Some(v.clone());
    }
    if opts.data_root != PathBuf::from("data") {
        run.data_root = opts.data_root.clone();
    }
    if let Some(v) = opts.synthetic {
        run.synthetic = Some(v);
    }
    if let Some(v) = opts.label_noise {
        run.label_noise = v;
    }
    if let Some(v) = &opts.featurize {
        apply_pair(&mut config, &mut run, "featurize", v)?;
    }
    if let Some(v) = opts.folds {
        run.folds = v;
    }
    if opts.folds_parallel != 1 {
        run.folds_parallel = opts.folds_parallel;
    }
    if let Some(v) = &opts.out {
        run.out = Some(v.clone());
    }

    config.validate().map_err(CliError::from)?;
    Ok((config, run))
}

/// Loads the requested dataset: synthetic corpus or TUDataset directory.
pub fn load_dataset(run: &RunOpts, seed: u64) -> Result<Dataset, CliError> {
    if let Some(n) = run.synthetic {
        let mut ds = generate_synthetic(n, seed)?;
        if run.label_noise > 0.0 {
            apply_label_noise(&mut ds, run.label_noise, seed ^ 0x6e6f697365);
        }
        return Ok(ds);
    }
    let Some(name) = &run.dataset else {
        return Err(CliError::Usage(
            "one of --dataset NAME or --synthetic N is required".into(),
        ));
    };
    Ok(load_tudataset(&run.data_root, name, run.featurize)?)
}

/// Fold plans per the configured strategy, with a warning when stratification
/// is infeasible and the planner fell back.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64, stratify: bool) -> Result<Vec<FoldPlan>, CliError> {
    if stratify {
        if !stratification_feasible(dataset, k) {
            eprintln!(
                "warning: some class has fewer than {k} members; falling back to unstratified folds"
            );
        }
        Ok(stratified_folds(dataset, k, seed)?)
    } else {
        Ok(unstratified_folds(dataset, k, seed)?)
    }
}
