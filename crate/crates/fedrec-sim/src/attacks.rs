//! Malicious-client behavior: poisoned gradient generation.
//!
//! Two gradient poisoning strategies plus two baselines:
//!
//! * random approximation — benign embeddings are approximated by Gaussian
//!   draws and the poison descends a promotion loss that pushes target
//!   scores toward 1 for those draws;
//! * hard-user mining — the Gaussian draws are first optimized for a few
//!   gradient steps toward behaving like users that hold the target as a
//!   negative instance, then the same promotion loss is used;
//! * fake profiles — injected users interact with the targets plus random
//!   filler items and otherwise train like benign clients;
//! * explicit boosting — malicious clients train the promotion loss with
//!   their own persistent embedding.
//!
//! Poison generation is a pure function of (shared parameters, attack
//! parameters, seed); the attacker never sees benign embeddings or
//! interactions.

use rand_distr::{Distribution, Normal};

use crate::data::{self, InteractionData, TrainingSet};
use crate::error::{Error, Result};
use crate::federation::{self, ClientState, FederationConfig};
use crate::model::{
    self, ForwardTape, GlobalParams, GradScratch, GradientUpdate,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    None,
    /// Fake-profile injection (random filler items).
    Ra,
    /// Explicit boosting with the malicious user's own embedding.
    Eb,
    /// Random approximation of benign embeddings.
    ARa,
    /// Random approximation refined by hard-user mining.
    AHum,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => Ok(AttackKind::None),
            "ra" => Ok(AttackKind::Ra),
            "eb" => Ok(AttackKind::Eb),
            "a-ra" => Ok(AttackKind::ARa),
            "a-hum" => Ok(AttackKind::AHum),
            other => Err(Error::InvalidParameter(format!(
                "unknown attack kind `{other}` (expected none, ra, eb, a-ra or a-hum)"
            ))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackKind::None => "none",
            AttackKind::Ra => "ra",
            AttackKind::Eb => "eb",
            AttackKind::ARa => "a-ra",
            AttackKind::AHum => "a-hum",
        };
        f.write_str(s)
    }
}

/// Attack hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackParams {
    pub kind: AttackKind,
    /// Target item indices whose exposure the attacker maximizes.
    pub targets: Vec<usize>,
    /// Approximation vectors drawn per target.
    pub n: usize,
    /// Standard deviation of the Gaussian embedding approximation.
    pub sigma: f64,
    /// Learning rate of the hard-user mining inner loop.
    pub xi: f64,
    /// Mining iterations; 0 degenerates hard-user mining to plain random
    /// approximation.
    pub beta: usize,
    /// Scale applied to the poisoned update (trade-off coefficient).
    pub alpha: f64,
    /// Malicious-user proportion of the benign population.
    pub rho: f64,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            kind: AttackKind::None,
            targets: Vec::new(),
            n: 10,
            sigma: 0.01,
            xi: 0.001,
            beta: 30,
            alpha: 1.0,
            rho: 0.005,
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<()> {
        if self.kind != AttackKind::None && self.targets.is_empty() {
            return Err(Error::InvalidParameter(
                "attack requires at least one target item".into(),
            ));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::InvalidParameter("xi must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        if self.kind != AttackKind::None && !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidParameter("rho must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn check_targets(&self, params: &GlobalParams) -> Result<()> {
        for &t in &self.targets {
            if t >= params.num_items() {
                return Err(Error::ItemOutOfRange {
                    item: t,
                    num_items: params.num_items(),
                });
            }
        }
        Ok(())
    }
}

/// An approximated benign-user embedding, tied to the target item it was
/// drawn (and possibly mined) for.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxEmbedding {
    pub values: Vec<f64>,
    pub target: usize,
}

/// Draw the per-target approximation vectors: for each target in order,
/// `n` vectors with i.i.d. N(0, sigma^2) entries, entry-major.
///
/// Both attack variants consume this exact stream, which is what makes
/// hard-user mining with zero iterations bit-identical to plain random
/// approximation under a shared seed.
pub fn draw_approx_embeddings(
    embed_dim: usize,
    params: &AttackParams,
    seed: u64,
) -> Vec<ApproxEmbedding> {
    let mut rng = rng::stream(seed);
    let normal = Normal::new(0.0, params.sigma).expect("validated sigma");
    let mut out = Vec::with_capacity(params.targets.len() * params.n);
    for &target in &params.targets {
        for _ in 0..params.n {
            let values = (0..embed_dim).map(|_| normal.sample(&mut rng)).collect();
            out.push(ApproxEmbedding { values, target });
        }
    }
    out
}

/// Gradient of the promotion loss
/// `(1/n) * sum_over_embeddings -log score(p_hat, target)` with respect to
/// the shared parameters, with the approximation vectors held constant.
fn promotion_gradient(
    theta: &GlobalParams,
    embeddings: &[ApproxEmbedding],
    n: usize,
) -> Result<GradientUpdate> {
    let mut update = GradientUpdate::zeros_like(theta);
    let mut discard_p = vec![0.0; theta.embed_dim()];
    let mut tape = ForwardTape::default();
    let mut scratch = GradScratch::default();
    let inv_n = 1.0 / n as f64;
    for approx in embeddings {
        let score = model::forward_into(&approx.values, approx.target, theta, &mut tape)?;
        // d(-log s)/ds = -1/s, scaled by 1/n.
        let dl_dscore = -inv_n / score;
        model::backward_accum(&tape, dl_dscore, theta, &mut update, &mut discard_p, &mut scratch)?;
    }
    Ok(update)
}

/// Poisoned update via random approximation: draw the Gaussian embedding
/// approximations, then return `alpha` times the promotion-loss gradient.
/// The drawn vectors receive no update.
pub fn a_ra_update(theta: &GlobalParams, params: &AttackParams, seed: u64) -> Result<GradientUpdate> {
    params.validate()?;
    params.check_targets(theta)?;
    let embeddings = draw_approx_embeddings(theta.embed_dim(), params, seed);
    let mut update = promotion_gradient(theta, &embeddings, params.n)?;
    update.scale(params.alpha);
    Ok(update)
}

/// Hard-user mining inner loop with the per-iteration loss trace.
///
/// Minimizes `l(p) = -log(1 - score(p, target))` — the loss a benign user
/// holding the target as a negative would contribute — by `beta` plain
/// gradient steps with rate `xi`, holding the shared parameters fixed.
/// Returns the mined vector and the loss at each iterate (`beta + 1`
/// values, initial point included).
pub fn mine_hard_user_trace(
    theta: &GlobalParams,
    target: usize,
    p_init: &[f64],
    xi: f64,
    beta: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = p_init.to_vec();
    let mut losses = Vec::with_capacity(beta + 1);
    let mut theta_discard = GradientUpdate::zeros_like(theta);
    let mut grad_p = vec![0.0; p.len()];
    let mut tape = ForwardTape::default();
    let mut scratch = GradScratch::default();
    for _ in 0..beta {
        let score = model::forward_into(&p, target, theta, &mut tape)?;
        losses.push(-(1.0 - score).ln());
        // d(-log(1 - s))/ds = 1/(1 - s).
        grad_p.iter_mut().for_each(|g| *g = 0.0);
        model::backward_accum(
            &tape,
            1.0 / (1.0 - score),
            theta,
            &mut theta_discard,
            &mut grad_p,
            &mut scratch,
        )?;
        for (pv, g) in p.iter_mut().zip(&grad_p) {
            *pv -= xi * g;
        }
    }
    let final_score = model::forward_into(&p, target, theta, &mut tape)?;
    losses.push(-(1.0 - final_score).ln());
    Ok((p, losses))
}

/// Hard-user mining: `beta` gradient-descent steps on the hard-user loss,
/// returning the mined vector. `beta = 0` returns the initial vector
/// unchanged.
pub fn mine_hard_user(
    theta: &GlobalParams,
    target: usize,
    p_init: &[f64],
    xi: f64,
    beta: usize,
) -> Result<Vec<f64>> {
    let (p, _) = mine_hard_user_trace(theta, target, p_init, xi, beta)?;
    Ok(p)
}

/// Poisoned update via hard-user mining: draw per-target Gaussian vectors,
/// mine each one toward hard-user behavior, then compute the promotion
/// gradient treating the mined vectors as constants.
pub fn a_hum_update(theta: &GlobalParams, params: &AttackParams, seed: u64) -> Result<GradientUpdate> {
    params.validate()?;
    params.check_targets(theta)?;
    let mut embeddings = draw_approx_embeddings(theta.embed_dim(), params, seed);
    for approx in &mut embeddings {
        approx.values =
            mine_hard_user(theta, approx.target, &approx.values, params.xi, params.beta)?;
    }
    let mut update = promotion_gradient(theta, &embeddings, params.n)?;
    update.scale(params.alpha);
    Ok(update)
}

/// Build fake users for the random-attack baseline.
///
/// Each fake user's positive profile is the target set plus `F` filler
/// items drawn uniformly from the non-target items, where `F` is the mean
/// benign train-profile size (rounded) minus the number of targets,
/// clamped at zero. The fakes afterwards behave exactly like benign
/// clients on their synthetic profiles.
pub fn ra_make_fake_clients(
    data: &InteractionData,
    params: &AttackParams,
    embed_dim: usize,
    num_fakes: usize,
    master_seed: u64,
) -> Result<Vec<(ClientState, Vec<usize>)>> {
    params.validate()?;
    for &t in &params.targets {
        if t >= data.num_items() {
            return Err(Error::ItemOutOfRange {
                item: t,
                num_items: data.num_items(),
            });
        }
    }
    let mean_profile = data.mean_train_profile().round() as usize;
    let filler_count = mean_profile.saturating_sub(params.targets.len());

    let mut fakes = Vec::with_capacity(num_fakes);
    for j in 0..num_fakes {
        let user = data.num_users() + j;
        let mut rng = rng::stream(rng::ra_profile_seed(master_seed, j));
        let (fillers, _) =
            data::sample_negative_items(&params.targets, data.num_items(), filler_count, &mut rng);
        let mut profile = params.targets.clone();
        profile.extend(fillers);
        fakes.push((ClientState::malicious(user, embed_dim, master_seed), profile));
    }
    Ok(fakes)
}

/// Explicit-boosting step: gradient of
/// `sum_over_targets -log score(p_u, target)` using the malicious user's
/// own persistent embedding. Uploads the shared-parameter gradient and
/// updates the embedding locally, like a benign client would.
pub fn eb_update(
    theta: &GlobalParams,
    embedding: &mut [f64],
    params: &AttackParams,
    eta: f64,
) -> Result<GradientUpdate> {
    params.check_targets(theta)?;
    let mut update = GradientUpdate::zeros_like(theta);
    if params.targets.is_empty() {
        return Ok(update);
    }
    let mut grad_p = vec![0.0; embedding.len()];
    let mut tape = ForwardTape::default();
    let mut scratch = GradScratch::default();
    for &target in &params.targets {
        let score = model::forward_into(embedding, target, theta, &mut tape)?;
        model::backward_accum(&tape, -1.0 / score, theta, &mut update, &mut grad_p, &mut scratch)?;
    }
    for (p, g) in embedding.iter_mut().zip(&grad_p) {
        *p -= eta * g;
    }
    Ok(update)
}

/// Attack-side state for one experiment. Immutable after construction;
/// per-round mutable state (fake and boosting embeddings) lives in the
/// malicious clients themselves.
#[derive(Debug, Clone)]
pub enum AttackState {
    None,
    ARa(AttackParams),
    AHum(AttackParams),
    /// Fake-profile baseline, with one synthetic positive profile per fake.
    Ra {
        params: AttackParams,
        profiles: Vec<Vec<usize>>,
    },
    Eb(AttackParams),
}

impl AttackState {
    /// Build the attack state and its malicious clients. Malicious clients
    /// get user indices `num_users..num_users + num_malicious` so they sit
    /// in the same selection pool as benign users.
    pub fn new(
        params: AttackParams,
        data: &InteractionData,
        embed_dim: usize,
        num_malicious: usize,
        master_seed: u64,
    ) -> Result<(AttackState, Vec<ClientState>)> {
        if params.kind == AttackKind::None || num_malicious == 0 {
            return Ok((AttackState::None, Vec::new()));
        }
        params.validate()?;
        let make_clients = || {
            (0..num_malicious)
                .map(|j| ClientState::malicious(data.num_users() + j, embed_dim, master_seed))
                .collect::<Vec<_>>()
        };
        match params.kind {
            AttackKind::None => unreachable!(),
            AttackKind::ARa => Ok((AttackState::ARa(params), make_clients())),
            AttackKind::AHum => Ok((AttackState::AHum(params), make_clients())),
            AttackKind::Eb => Ok((AttackState::Eb(params), make_clients())),
            AttackKind::Ra => {
                let fakes = ra_make_fake_clients(data, &params, embed_dim, num_malicious, master_seed)?;
                let mut clients = Vec::with_capacity(num_malicious);
                let mut profiles = Vec::with_capacity(num_malicious);
                for (client, profile) in fakes {
                    clients.push(client);
                    profiles.push(profile);
                }
                Ok((AttackState::Ra { params, profiles }, clients))
            }
        }
    }

    /// The update one malicious client uploads this round.
    pub fn malicious_update(
        &self,
        client: &mut ClientState,
        ordinal: usize,
        theta: &GlobalParams,
        data: &InteractionData,
        round: u64,
        cfg: &FederationConfig,
    ) -> Result<GradientUpdate> {
        let seed = rng::attack_seed(cfg.master_seed, round, ordinal);
        match self {
            AttackState::None => Ok(GradientUpdate::zeros_like(theta)),
            AttackState::ARa(params) => a_ra_update(theta, params, seed),
            AttackState::AHum(params) => a_hum_update(theta, params, seed),
            AttackState::Eb(params) => eb_update(theta, &mut client.embedding, params, cfg.eta),
            AttackState::Ra { profiles, .. } => {
                // Fake users train like benign clients on their synthetic
                // profiles, negatives resampled per round.
                let profile = &profiles[ordinal];
                let mut rng =
                    rng::stream(rng::negatives_seed(cfg.master_seed, round, client.user));
                let (negatives, truncated) = data::sample_negative_items(
                    profile,
                    data.num_items(),
                    cfg.neg_ratio * profile.len(),
                    &mut rng,
                );
                let mut pairs: Vec<(usize, bool)> =
                    profile.iter().map(|&i| (i, true)).collect();
                pairs.extend(negatives.into_iter().map(|i| (i, false)));
                let tset = TrainingSet {
                    user: client.user,
                    pairs,
                    truncated,
                };
                let step = federation::local_sgd_step(&mut client.embedding, &tset, theta, cfg.eta)?;
                Ok(step.update)
            }
        }
    }
}
