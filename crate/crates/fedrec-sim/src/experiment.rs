//! Experiment orchestration: config files, the end-to-end runner, and
//! result emission.
//!
//! A run loads and splits the dataset, injects `ceil(rho * N)` malicious
//! clients, picks the least-popular items as targets, trains for the
//! configured number of epochs under full participation, evaluates
//! exposure and utility after every epoch, and writes plot-ready CSV/DAT
//! series. Everything downstream of (config, master seed) is
//! deterministic, so identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::{AttackKind, AttackParams, AttackState};
use crate::data::{self, DataFormat, InteractionData};
use crate::error::{Error, Result};
use crate::federation::{
    self, ClientState, FederationConfig, Participation, RoundReport, ServerState,
};
use crate::metrics;
use crate::model::{self, HyperParams};
use crate::rng;

/// Everything one experiment needs. Field defaults follow the reference
/// evaluation setup: 8-dimensional embeddings, two 8-unit hidden layers,
/// eta 0.001, 30 epochs, r=4, T=1, n=10, sigma=0.01, xi=0.001, beta=30,
/// alpha=1, rho=0.5%, K in {5, 10, 20, 30}.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: DataFormat,
    pub hyper: HyperParams,
    pub attack: AttackParams,
    /// Sampled negatives per positive (`r`).
    pub neg_ratio: usize,
    /// Number of least-popular items to target (`T`).
    pub target_count: usize,
    pub epochs: usize,
    /// Cutoffs for exposure columns, ascending.
    pub k_list: Vec<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::from("ratings.dat"),
            format: DataFormat::Ml1m,
            hyper: HyperParams::default(),
            attack: AttackParams::default(),
            neg_ratio: 4,
            target_count: 1,
            epochs: 30,
            k_list: vec![5, 10, 20, 30],
            seed: 42,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Canonical `key = value` rendering (parseable by [`parse_config_str`]).
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset = {}", self.dataset.display());
        let _ = writeln!(
            s,
            "format = {}",
            match self.format {
                DataFormat::Ml1m => "ml-1m",
                DataFormat::Csv => "csv",
            }
        );
        let _ = writeln!(s, "attack = {}", self.attack.kind);
        let _ = writeln!(s, "embed_dim = {}", self.hyper.embed_dim);
        let dims: Vec<String> = self.hyper.layer_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "layers = {}", dims.join(","));
        let _ = writeln!(s, "eta = {}", self.hyper.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "r = {}", self.neg_ratio);
        let _ = writeln!(s, "t = {}", self.target_count);
        let _ = writeln!(s, "n = {}", self.attack.n);
        let _ = writeln!(s, "sigma = {}", self.attack.sigma);
        let _ = writeln!(s, "xi = {}", self.attack.xi);
        let _ = writeln!(s, "beta = {}", self.attack.beta);
        let _ = writeln!(s, "alpha = {}", self.attack.alpha);
        let _ = writeln!(s, "rho = {}", self.attack.rho);
        let ks: Vec<String> = self.k_list.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "k = {}", ks.join(","));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        s
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.target_count == 0 {
            return Err(Error::InvalidParameter("t must be >= 1".into()));
        }
        if self.k_list.is_empty() {
            return Err(Error::InvalidParameter("k list must be non-empty".into()));
        }
        if self.k_list.windows(2).any(|w| w[0] >= w[1]) || self.k_list[0] == 0 {
            return Err(Error::InvalidParameter(
                "k list must be strictly ascending positive integers".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConfigKey {
    Dataset,
    Format,
    Attack,
    EmbedDim,
    Layers,
    Eta,
    Epochs,
    R,
    T,
    N,
    Sigma,
    Xi,
    Beta,
    Alpha,
    Rho,
    K,
    Seed,
    Out,
}

fn key_of(name: &str) -> Option<ConfigKey> {
    Some(match name {
        "dataset" => ConfigKey::Dataset,
        "format" => ConfigKey::Format,
        "attack" => ConfigKey::Attack,
        "embed_dim" => ConfigKey::EmbedDim,
        "layers" => ConfigKey::Layers,
        "eta" => ConfigKey::Eta,
        "epochs" => ConfigKey::Epochs,
        "r" => ConfigKey::R,
        "t" => ConfigKey::T,
        "n" => ConfigKey::N,
        "sigma" => ConfigKey::Sigma,
        "xi" => ConfigKey::Xi,
        "beta" => ConfigKey::Beta,
        "alpha" => ConfigKey::Alpha,
        "rho" => ConfigKey::Rho,
        "k" => ConfigKey::K,
        "seed" => ConfigKey::Seed,
        "out" => ConfigKey::Out,
        _ => return None,
    })
}

fn config_err(key: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parse a config from text. Unknown keys are rejected; missing keys take
/// the documented defaults. Blank lines and `#` comments are skipped.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = line.split_once('=').ok_or_else(|| {
            config_err(line, line_no, "expected `key = value`")
        })?;
        let name = name.trim();
        let value = value.trim();
        let key = key_of(name).ok_or_else(|| config_err(name, line_no, "unknown key"))?;

        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| config_err(name, line_no, format!("`{v}` is not a non-negative integer")))
        };
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| config_err(name, line_no, format!("`{v}` is not a number")))
        };
        let parse_list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        config_err(name, line_no, format!("`{}` is not an integer", p.trim()))
                    })
                })
                .collect()
        };

        match key {
            ConfigKey::Dataset => cfg.dataset = PathBuf::from(value),
            ConfigKey::Format => {
                cfg.format = value
                    .parse()
                    .map_err(|e| config_err(name, line_no, format!("{e}")))?
            }
            ConfigKey::Attack => {
                cfg.attack.kind = value
                    .parse()
                    .map_err(|e| config_err(name, line_no, format!("{e}")))?
            }
            ConfigKey::EmbedDim => {
                cfg.hyper.embed_dim = parse_usize(value)?;
                if cfg.hyper.embed_dim == 0 {
                    return Err(config_err(name, line_no, "must be >= 1"));
                }
            }
            ConfigKey::Layers => {
                cfg.hyper.layer_dims = parse_list(value)?;
                if cfg.hyper.layer_dims.is_empty() || cfg.hyper.layer_dims.contains(&0) {
                    return Err(config_err(name, line_no, "layer widths must be >= 1"));
                }
            }
            ConfigKey::Eta => {
                cfg.hyper.learning_rate = parse_f64(value)?;
                if !(cfg.hyper.learning_rate > 0.0) {
                    return Err(config_err(name, line_no, "must be positive"));
                }
            }
            ConfigKey::Epochs => {
                cfg.epochs = parse_usize(value)?;
                if cfg.epochs == 0 {
                    return Err(config_err(name, line_no, "must be >= 1"));
                }
            }
            ConfigKey::R => {
                cfg.neg_ratio = parse_usize(value)?;
                if cfg.neg_ratio == 0 {
                    return Err(config_err(name, line_no, "must be >= 1"));
                }
            }
            ConfigKey::T => {
                cfg.target_count = parse_usize(value)?;
                if cfg.target_count == 0 {
                    return Err(config_err(name, line_no, "must be >= 1"));
                }
            }
            ConfigKey::N => {
                cfg.attack.n = parse_usize(value)?;
                if cfg.attack.n == 0 {
                    return Err(config_err(name, line_no, "must be >= 1"));
                }
            }
            ConfigKey::Sigma => {
                cfg.attack.sigma = parse_f64(value)?;
                if !(cfg.attack.sigma > 0.0) {
                    return Err(config_err(name, line_no, "must be positive"));
                }
            }
            ConfigKey::Xi => {
                cfg.attack.xi = parse_f64(value)?;
                if !(cfg.attack.xi > 0.0) {
                    return Err(config_err(name, line_no, "must be positive"));
                }
            }
            ConfigKey::Beta => cfg.attack.beta = parse_usize(value)?,
            ConfigKey::Alpha => {
                cfg.attack.alpha = parse_f64(value)?;
                if !(cfg.attack.alpha > 0.0) {
                    return Err(config_err(name, line_no, "must be positive"));
                }
            }
            ConfigKey::Rho => {
                cfg.attack.rho = parse_f64(value)?;
                if !(cfg.attack.rho > 0.0 && cfg.attack.rho <= 1.0) {
                    return Err(config_err(name, line_no, "must lie in (0, 1]"));
                }
            }
            ConfigKey::K => {
                cfg.k_list = parse_list(value)?;
                if cfg.k_list.is_empty()
                    || cfg.k_list[0] == 0
                    || cfg.k_list.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(config_err(
                        name,
                        line_no,
                        "must be strictly ascending positive integers",
                    ));
                }
            }
            ConfigKey::Seed => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| config_err(name, line_no, format!("`{value}` is not a u64 seed")))?
            }
            ConfigKey::Out => cfg.out_dir = PathBuf::from(value),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config_str(&text)
}

/// One completed epoch of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: u64,
    /// Mean ER over targets, one entry per configured K.
    pub er_mean: Vec<f64>,
    pub hr10: f64,
    pub ndcg10: f64,
    /// Mean benign training BCE per pair this epoch.
    pub loss: f64,
    pub malicious_participants: usize,
    pub wall_seconds: f64,
}

/// A finished run: per-epoch rows plus identifying metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub k_list: Vec<usize>,
    pub targets: Vec<usize>,
    pub num_malicious: usize,
    pub config_snapshot: String,
    pub version: String,
}

/// ceil(rho * n), guarded against the float representation of `rho`
/// nudging an exact product just above an integer.
pub fn malicious_count(rho: f64, num_users: usize) -> usize {
    let x = rho * num_users as f64;
    let nearest = x.round();
    let v = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    v as usize
}

/// Run an experiment on data already loaded (pre-split). Observing code
/// receives each epoch row as it completes.
pub fn run_on_with(
    config: &ExperimentConfig,
    raw: InteractionData,
    mut observer: impl FnMut(&EpochRow),
) -> Result<RunRecord> {
    config.validate()?;
    let seed = config.seed;
    let data = data::split_per_user(raw, seed);
    if config.target_count > data.num_items() {
        return Err(Error::InvalidParameter(format!(
            "t = {} exceeds the item count {}",
            config.target_count,
            data.num_items()
        )));
    }
    let targets = data::select_target_items(&data, config.target_count);

    let num_malicious = if config.attack.kind == AttackKind::None {
        0
    } else {
        let m = malicious_count(config.attack.rho, data.num_users());
        if m == 0 {
            return Err(Error::InvalidParameter(format!(
                "rho = {} yields no malicious users for {} benign users",
                config.attack.rho,
                data.num_users()
            )));
        }
        m
    };

    let mut attack_params = config.attack.clone();
    attack_params.targets = targets.clone();

    let params = model::init_params(
        &config.hyper,
        data.num_items(),
        rng::param_init_seed(seed),
    )?;
    let mut server = ServerState::new(params);

    let mut clients: Vec<ClientState> = (0..data.num_users())
        .map(|u| ClientState::benign(u, config.hyper.embed_dim, seed))
        .collect();
    let (attack, malicious_clients) = AttackState::new(
        attack_params,
        &data,
        config.hyper.embed_dim,
        num_malicious,
        seed,
    )?;
    clients.extend(malicious_clients);

    let fed_cfg = FederationConfig {
        eta: config.hyper.learning_rate,
        neg_ratio: config.neg_ratio,
        policy: Participation::All,
        master_seed: seed,
    };

    let k_eval = config.k_list.iter().copied().max().unwrap().max(10);
    let mut rows: Vec<EpochRow> = Vec::with_capacity(config.epochs);
    federation::train(
        &mut server,
        &mut clients,
        &attack,
        &data,
        &fed_cfg,
        config.epochs,
        |epoch, report: &RoundReport, params, clients| {
            let lists = metrics::benign_top_k_lists(clients, &data, params, k_eval)?;
            let exposure = metrics::exposure(&targets, &config.k_list, &lists, &data, epoch);
            let utility = metrics::utility_metrics(&lists, 10, &data);
            let row = EpochRow {
                epoch,
                er_mean: exposure.mean,
                hr10: utility.hit_ratio,
                ndcg10: utility.ndcg,
                loss: report.mean_loss,
                malicious_participants: report.malicious_participants,
                wall_seconds: report.wall_seconds,
            };
            observer(&row);
            rows.push(row);
            Ok(())
        },
    )?;

    Ok(RunRecord {
        rows,
        k_list: config.k_list.clone(),
        targets,
        num_malicious,
        config_snapshot: config.render(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// Run an experiment on data already loaded (pre-split).
pub fn run_on(config: &ExperimentConfig, raw: InteractionData) -> Result<RunRecord> {
    run_on_with(config, raw, |_| {})
}

/// Load the configured dataset and run the experiment end to end.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    let raw = data::load_interactions(&config.dataset, config.format)?;
    run_on(config, raw)
}

/// Write `metrics.csv`, one `er@K.dat` per configured K, and `run.txt`
/// into `outdir`. Floats are printed in shortest round-trip form, so
/// re-parsing reproduces the in-memory record exactly.
pub fn emit_series(record: &RunRecord, outdir: impl AsRef<Path>) -> Result<()> {
    let outdir = outdir.as_ref();
    fs::create_dir_all(outdir).map_err(|e| Error::Io {
        path: outdir.to_path_buf(),
        source: e,
    })?;
    let write = |name: &str, content: String| -> Result<()> {
        let path = outdir.join(name);
        fs::write(&path, content).map_err(|e| Error::Io { path, source: e })
    };

    let mut csv = String::from("epoch");
    for k in &record.k_list {
        let _ = write!(csv, ",er@{k}");
    }
    csv.push_str(",hr@10,ndcg@10,loss\n");
    for row in &record.rows {
        let _ = write!(csv, "{}", row.epoch);
        for er in &row.er_mean {
            let _ = write!(csv, ",{er}");
        }
        let _ = writeln!(csv, ",{},{},{}", row.hr10, row.ndcg10, row.loss);
    }
    write("metrics.csv", csv)?;

    for (ki, k) in record.k_list.iter().enumerate() {
        let mut dat = String::new();
        for row in &record.rows {
            let _ = writeln!(dat, "{} {}", row.epoch, row.er_mean[ki]);
        }
        write(&format!("er@{k}.dat"), dat)?;
    }

    let mut info = String::new();
    let _ = writeln!(info, "version = {}", record.version);
    let _ = writeln!(
        info,
        "targets = {}",
        record
            .targets
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(info, "malicious_users = {}", record.num_malicious);
    let _ = writeln!(info, "--- config ---");
    info.push_str(&record.config_snapshot);
    write("run.txt", info)?;
    Ok(())
}
