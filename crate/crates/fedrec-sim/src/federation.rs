//! Federated training protocol: parameter broadcast, local client steps,
//! gradient upload, and server-side aggregation.
//!
//! The server owns the shared parameters and mutates them through exactly
//! one path, [`ServerState::apply_round`], which accepts nothing but an
//! aggregated [`GradientUpdate`]. User embeddings and training sets never
//! leave their client: a benign client's step returns only the
//! shared-parameter gradient and applies the embedding update to its own
//! state.

use rand::seq::index;

use crate::attacks::AttackState;
use crate::data::{self, InteractionData, TrainingSet};
use crate::error::{Error, Result};
use crate::model::{
    self, bce_dscore, GlobalParams, GradScratch, GradientUpdate, ForwardTape,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Benign,
    Malicious,
}

/// One simulated client: a user index, the locally held embedding, and a
/// role. Benign clients read their interactions from [`InteractionData`]
/// at step time; malicious clients hold no real interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub user: usize,
    pub embedding: Vec<f64>,
    pub role: Role,
}

impl ClientState {
    pub fn benign(user: usize, embed_dim: usize, master_seed: u64) -> Self {
        ClientState {
            user,
            embedding: model::init_user_embedding(embed_dim, rng::user_init_seed(master_seed, user)),
            role: Role::Benign,
        }
    }

    pub fn malicious(user: usize, embed_dim: usize, master_seed: u64) -> Self {
        ClientState {
            user,
            embedding: model::init_user_embedding(embed_dim, rng::user_init_seed(master_seed, user)),
            role: Role::Malicious,
        }
    }
}

/// Which clients take part in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Participation {
    /// Every client participates (used for per-epoch evaluation runs).
    All,
    /// A seeded uniform sample of `fraction * num_clients` clients;
    /// malicious clients sit in the same pool as benign ones.
    Fraction(f64),
}

/// Per-round knobs shared by every client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FederationConfig {
    pub eta: f64,
    /// Negative instances sampled per positive (`r`).
    pub neg_ratio: usize,
    pub policy: Participation,
    pub master_seed: u64,
}

/// The central server: shared parameters plus a round counter. It never
/// stores any user embedding.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub params: GlobalParams,
    pub round: u64,
}

impl ServerState {
    pub fn new(params: GlobalParams) -> Self {
        ServerState { params, round: 0 }
    }

    /// The single mutation path for shared parameters: one aggregated
    /// gradient per round (Theta <- Theta - eta * total).
    pub fn apply_round(&mut self, total: &GradientUpdate, eta: f64) -> Result<()> {
        model::apply_update(&mut self.params, total, eta)
    }
}

/// What happened in one training round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub benign_participants: usize,
    pub malicious_participants: usize,
    /// L2 norm of the aggregated gradient before application.
    pub gradient_norm: f64,
    /// Mean benign BCE loss per training pair this round.
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Choose the participants of round `t`, returned in ascending client
/// index. With `Fraction(f)` (0 < f <= 1) the count is `round(f * n)`.
pub fn select_participants(
    _round: u64,
    policy: Participation,
    seed: u64,
    num_clients: usize,
) -> Vec<usize> {
    match policy {
        Participation::All => (0..num_clients).collect(),
        Participation::Fraction(f) => {
            let count = ((f * num_clients as f64).round() as usize).min(num_clients);
            let mut rng = rng::stream(seed);
            let mut chosen: Vec<usize> = index::sample(&mut rng, num_clients, count).into_vec();
            chosen.sort_unstable();
            chosen
        }
    }
}

/// Result of one client's local step.
#[derive(Debug, Clone)]
pub struct ClientStep {
    pub update: GradientUpdate,
    /// Summed BCE loss over the client's pairs.
    pub loss: f64,
    pub num_pairs: usize,
    /// Set when the training set was empty (zero update uploaded).
    pub empty: bool,
}

/// Local SGD step over a training set: computes BCE gradients of the shared
/// parameters and of the local embedding at the *current* point, applies
/// the embedding update in place, and returns the shared-parameter
/// gradient for upload.
///
/// Gradients are normalized by the local pair count (the usual mean
/// reduction of the BCE loss). The server later sums the per-client
/// gradients as-is; without the local mean, that sum grows with the total
/// number of training pairs and no fixed learning rate survives it.
pub(crate) fn local_sgd_step(
    embedding: &mut [f64],
    tset: &TrainingSet,
    params: &GlobalParams,
    eta: f64,
) -> Result<ClientStep> {
    let mut update = GradientUpdate::zeros_like(params);
    if tset.pairs.is_empty() {
        return Ok(ClientStep {
            update,
            loss: 0.0,
            num_pairs: 0,
            empty: true,
        });
    }
    let inv_count = 1.0 / tset.pairs.len() as f64;
    let mut grad_p = vec![0.0; embedding.len()];
    let mut tape = ForwardTape::default();
    let mut scratch = GradScratch::default();
    let mut loss = 0.0;
    for &(item, label) in &tset.pairs {
        let score = model::forward_into(embedding, item, params, &mut tape)?;
        loss -= if label { score.ln() } else { (1.0 - score).ln() };
        model::backward_accum(
            &tape,
            inv_count * bce_dscore(score, label),
            params,
            &mut update,
            &mut grad_p,
            &mut scratch,
        )?;
    }
    for (p, g) in embedding.iter_mut().zip(&grad_p) {
        *p -= eta * g;
    }
    Ok(ClientStep {
        update,
        loss,
        num_pairs: tset.pairs.len(),
        empty: false,
    })
}

/// One benign client's round: BCE gradients over its training set, local
/// embedding update, and upload of the shared-parameter gradient only.
pub fn benign_client_step(
    client: &mut ClientState,
    tset: &TrainingSet,
    params: &GlobalParams,
    eta: f64,
) -> Result<ClientStep> {
    if client.role != Role::Benign {
        return Err(Error::InvalidParameter(
            "benign_client_step called on a malicious client".into(),
        ));
    }
    local_sgd_step(&mut client.embedding, tset, params, eta)
}

/// Run one round: broadcast, client steps, deterministic aggregation, one
/// server update.
///
/// Clients are visited in ascending index order; benign ones run a local
/// BCE step over freshly sampled negatives, malicious ones obtain their
/// poisoned update from the attack module. All uploads are summed in visit
/// order and applied once.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    attack: &AttackState,
    data: &InteractionData,
    cfg: &FederationConfig,
) -> Result<RoundReport> {
    let watch = Stopwatch::start();
    let round = server.round;
    let participants = select_participants(
        round,
        cfg.policy,
        rng::selection_seed(cfg.master_seed, round),
        clients.len(),
    );

    let mut total = GradientUpdate::zeros_like(&server.params);
    let mut benign_count = 0;
    let mut malicious_count = 0;
    let mut loss_sum = 0.0;
    let mut pair_count = 0usize;

    for &idx in &participants {
        let client = &mut clients[idx];
        match client.role {
            Role::Benign => {
                let tset =
                    data::sample_negatives(client.user, data, cfg.neg_ratio, cfg.master_seed, round);
                let step = benign_client_step(client, &tset, &server.params, cfg.eta)?;
                loss_sum += step.loss;
                pair_count += step.num_pairs;
                total.add(&step.update);
                benign_count += 1;
            }
            Role::Malicious => {
                let ordinal = client.user - data.num_users();
                let update =
                    attack.malicious_update(client, ordinal, &server.params, data, round, cfg)?;
                total.add(&update);
                malicious_count += 1;
            }
        }
    }

    let gradient_norm = total.l2_norm();
    server.apply_round(&total, cfg.eta)?;
    server.round += 1;

    Ok(RoundReport {
        round,
        benign_participants: benign_count,
        malicious_participants: malicious_count,
        gradient_norm,
        mean_loss: if pair_count > 0 {
            loss_sum / pair_count as f64
        } else {
            0.0
        },
        wall_seconds: watch.seconds(),
    })
}

/// Train for `epochs` full-participation rounds, invoking `eval_hook`
/// after each one with the post-round parameters and client states.
///
/// One epoch is one round under `Participation::All`: every client (benign
/// and malicious) participates, and negatives are resampled per epoch. The
/// hook receives read-only access to client embeddings; that access exists
/// for the experimenter only and is never available to the simulated
/// server.
pub fn train(
    server: &mut ServerState,
    clients: &mut [ClientState],
    attack: &AttackState,
    data: &InteractionData,
    cfg: &FederationConfig,
    epochs: usize,
    mut eval_hook: impl FnMut(u64, &RoundReport, &GlobalParams, &[ClientState]) -> Result<()>,
) -> Result<Vec<RoundReport>> {
    let round_cfg = FederationConfig {
        policy: Participation::All,
        ..*cfg
    };
    let mut reports = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let report = run_round(server, clients, attack, data, &round_cfg)?;
        let epoch = server.round;
        eval_hook(epoch, &report, &server.params, clients)?;
        reports.push(report);
    }
    Ok(reports)
}
