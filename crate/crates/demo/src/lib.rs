//! Wasm bindings for the browser demo.
//!
//! Three entry points, all JSON-in/JSON-out so the page needs no glue
//! types: [`default_config`] returns the knobs the UI renders,
//! [`run_attack_sim`] trains a toy federation under a chosen attack and
//! returns the per-epoch series, and [`mining_descent`] pre-trains a model
//! and returns hard-user-mining loss traces.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use fedrec_sim::attacks::AttackKind;
use fedrec_sim::data::{self, SyntheticSpec};
use fedrec_sim::experiment::{self, ExperimentConfig};
use fedrec_sim::model::{self, HyperParams};
use fedrec_sim::{attacks, rng};

/// Everything the demo page can tweak.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub users: usize,
    pub items: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub exponent: f64,
    pub taste_groups: usize,
    pub taste_boost: f64,
    pub data_seed: u64,
    pub attack: String,
    pub malicious: usize,
    pub epochs: usize,
    pub seed: u64,
    pub n: usize,
    pub sigma: f64,
    pub xi: f64,
    pub beta: usize,
    pub alpha: f64,
    pub embed_dim: usize,
    pub layers: Vec<usize>,
    pub eta: f64,
    pub neg_ratio: usize,
    pub k: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            users: 200,
            items: 100,
            min_interactions: 20,
            max_interactions: 30,
            exponent: 1.2,
            taste_groups: 4,
            taste_boost: 8.0,
            data_seed: 17,
            attack: "a-ra".to_string(),
            malicious: 2,
            epochs: 30,
            seed: 1,
            n: 10,
            sigma: 0.01,
            xi: 0.001,
            beta: 30,
            alpha: 4.0,
            embed_dim: 8,
            layers: vec![8, 8],
            eta: 0.001,
            neg_ratio: 4,
            k: 10,
        }
    }
}

#[derive(Debug, Serialize)]
struct SimSeries {
    attack: String,
    target: usize,
    malicious: usize,
    epochs: Vec<u64>,
    er: Vec<f64>,
    hr10: Vec<f64>,
    ndcg10: Vec<f64>,
    loss: Vec<f64>,
}

fn err_to_js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn sim_series(cfg: &DemoConfig) -> Result<SimSeries, String> {
    let spec = SyntheticSpec {
        num_users: cfg.users,
        num_items: cfg.items,
        min_interactions: cfg.min_interactions,
        max_interactions: cfg.max_interactions,
        exponent: cfg.exponent,
        taste_groups: cfg.taste_groups,
        taste_boost: cfg.taste_boost,
    };
    let raw = data::generate_synthetic(&spec, cfg.data_seed).map_err(|e| e.to_string())?;

    let kind: AttackKind = cfg.attack.parse().map_err(|e: fedrec_sim::Error| e.to_string())?;
    let mut exp_cfg = ExperimentConfig::default();
    exp_cfg.hyper = HyperParams {
        embed_dim: cfg.embed_dim,
        layer_dims: cfg.layers.clone(),
        learning_rate: cfg.eta,
    };
    exp_cfg.attack.kind = kind;
    exp_cfg.attack.n = cfg.n;
    exp_cfg.attack.sigma = cfg.sigma;
    exp_cfg.attack.xi = cfg.xi;
    exp_cfg.attack.beta = cfg.beta;
    exp_cfg.attack.alpha = cfg.alpha;
    exp_cfg.attack.rho = if cfg.users > 0 {
        cfg.malicious as f64 / cfg.users as f64
    } else {
        0.0
    };
    exp_cfg.neg_ratio = cfg.neg_ratio;
    exp_cfg.epochs = cfg.epochs;
    exp_cfg.seed = cfg.seed;
    exp_cfg.k_list = vec![cfg.k];

    let record = experiment::run_on(&exp_cfg, raw).map_err(|e| e.to_string())?;
    Ok(SimSeries {
        attack: kind.to_string(),
        target: record.targets[0],
        malicious: record.num_malicious,
        epochs: record.rows.iter().map(|r| r.epoch).collect(),
        er: record.rows.iter().map(|r| r.er_mean[0]).collect(),
        hr10: record.rows.iter().map(|r| r.hr10).collect(),
        ndcg10: record.rows.iter().map(|r| r.ndcg10).collect(),
        loss: record.rows.iter().map(|r| r.loss).collect(),
    })
}

/// Default demo configuration as JSON.
#[wasm_bindgen]
pub fn default_config() -> String {
    serde_json::to_string_pretty(&DemoConfig::default()).expect("serializable defaults")
}

/// Train a toy federation under the configured attack and return the
/// per-epoch exposure/utility series as JSON.
#[wasm_bindgen]
pub fn run_attack_sim(config_json: &str) -> Result<String, JsValue> {
    let cfg: DemoConfig = serde_json::from_str(config_json).map_err(err_to_js)?;
    let series = sim_series(&cfg).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&series).map_err(err_to_js)
}

#[derive(Debug, Serialize)]
struct MiningTraces {
    target: usize,
    /// One loss trace per initial vector, `beta + 1` points each.
    traces: Vec<Vec<f64>>,
}

/// Pre-train a clean toy model, then run hard-user mining from several
/// random initial vectors and return the per-iteration loss traces.
#[wasm_bindgen]
pub fn mining_descent(config_json: &str) -> Result<String, JsValue> {
    let cfg: DemoConfig = serde_json::from_str(config_json).map_err(err_to_js)?;
    let spec = SyntheticSpec {
        num_users: cfg.users,
        num_items: cfg.items,
        min_interactions: cfg.min_interactions,
        max_interactions: cfg.max_interactions,
        exponent: cfg.exponent,
        taste_groups: cfg.taste_groups,
        taste_boost: cfg.taste_boost,
    };
    let raw = data::generate_synthetic(&spec, cfg.data_seed).map_err(err_to_js)?;

    let mut exp_cfg = ExperimentConfig::default();
    exp_cfg.hyper = HyperParams {
        embed_dim: cfg.embed_dim,
        layer_dims: cfg.layers.clone(),
        learning_rate: cfg.eta,
    };
    exp_cfg.neg_ratio = cfg.neg_ratio;
    exp_cfg.epochs = cfg.epochs.max(1);
    exp_cfg.seed = cfg.seed;
    exp_cfg.k_list = vec![cfg.k];

    // Reuse the experiment runner for the pre-training phase, then rebuild
    // the final parameters for mining. Cheapest correct route: run the
    // training loop directly.
    let seed = cfg.seed;
    let data = data::split_per_user(raw, seed);
    let target = data::select_target_items(&data, 1)[0];
    let params = model::init_params(&exp_cfg.hyper, data.num_items(), rng::param_init_seed(seed))
        .map_err(err_to_js)?;
    let mut server = fedrec_sim::federation::ServerState::new(params);
    let mut clients: Vec<fedrec_sim::federation::ClientState> = (0..data.num_users())
        .map(|u| fedrec_sim::federation::ClientState::benign(u, exp_cfg.hyper.embed_dim, seed))
        .collect();
    let fed_cfg = fedrec_sim::federation::FederationConfig {
        eta: exp_cfg.hyper.learning_rate,
        neg_ratio: exp_cfg.neg_ratio,
        policy: fedrec_sim::federation::Participation::All,
        master_seed: seed,
    };
    fedrec_sim::federation::train(
        &mut server,
        &mut clients,
        &attacks::AttackState::None,
        &data,
        &fed_cfg,
        exp_cfg.epochs,
        |_, _, _, _| Ok(()),
    )
    .map_err(err_to_js)?;

    let mut traces = Vec::new();
    for j in 0..8u64 {
        let p0 = model::init_user_embedding(cfg.embed_dim, rng::derive(seed, 0xDE0, j, 0));
        let (_, losses) =
            attacks::mine_hard_user_trace(&server.params, target, &p0, cfg.xi, cfg.beta)
                .map_err(err_to_js)?;
        traces.push(losses);
    }
    let out = MiningTraces { target, traces };
    serde_json::to_string(&out).map_err(err_to_js)
}
