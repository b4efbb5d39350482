//! Dual actor-critic PPO: rollout collection, GAE at both levels,
//! clipped-surrogate losses with KL/value/entropy terms, and a joint update
//! of the role and primitive networks on the same samples.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sample_categorical, softmax_logprob_entropy, Adam, CategoricalEval, Mlp, MlpSpec, Trace};
use crate::observation::{local_feature_dim, observe_team, JointScope, RobotFeatures, JOINT_FEATURE_DIM};
use crate::policy::{primitive_actor_input, role_actor_input, PolicyBundle, PrimitiveAction, RoleAction};
use crate::reward::{exploration_ability, primitive_rewards, AbilityMode, RewardWeights};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::world::{generate_map, ScenarioConfig};

/// Weights of the KL, value and entropy terms of one level's loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub kl: f64,
    pub value: f64,
    pub entropy: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self { kl: 0.5, value: 1e-4, entropy: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub role_coef: LossCoefficients,
    pub primitive_coef: LossCoefficients,
    /// Robot-timesteps per rollout buffer.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    /// Environment steps to train for.
    pub total_timesteps: u64,
    pub hidden: Vec<usize>,
    pub role_period: usize,
    pub ability_mode: AbilityMode,
    pub joint_scope: JointScope,
    /// Per-network global gradient-norm clip.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            clip_eps: 0.2,
            gamma: 0.9,
            gae_lambda: 0.95,
            role_coef: LossCoefficients::default(),
            primitive_coef: LossCoefficients::default(),
            batch_size: 5000,
            minibatch_size: 1000,
            epochs: 4,
            total_timesteps: 200_000,
            hidden: vec![64, 32],
            role_period: 1,
            ability_mode: AbilityMode::AsPrinted,
            joint_scope: JointScope::Global,
            max_grad_norm: Some(0.5),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip epsilon must be positive");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be nonnegative");
        }
        if self.minibatch_size == 0 || self.batch_size == 0 || self.batch_size % self.minibatch_size != 0 {
            return bad("minibatch size must divide the batch size");
        }
        if self.epochs == 0 || self.role_period == 0 {
            return bad("epochs and role period must be positive");
        }
        Ok(())
    }
}

/// Centralised critics, used only during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critics {
    /// Input: local ‖ joint ‖ aggregated features.
    pub role: Mlp,
    /// Input: local ‖ role ‖ joint features.
    pub primitive: Mlp,
}

pub fn primitive_critic_input(feat: &RobotFeatures, role: RoleAction) -> Vec<f64> {
    let mut x = Vec::with_capacity(feat.local.len() + 1 + feat.joint.len());
    x.extend_from_slice(&feat.local);
    x.push(role.index() as f64);
    x.extend_from_slice(&feat.joint);
    x
}

/// The four networks trained together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub bundle: PolicyBundle,
    pub critics: Critics,
}

/// Index of a network inside an [`Agent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetId {
    RoleActor = 0,
    PrimitiveActor = 1,
    RoleCritic = 2,
    PrimitiveCritic = 3,
}

impl NetId {
    pub const ALL: [NetId; 4] = [NetId::RoleActor, NetId::PrimitiveActor, NetId::RoleCritic, NetId::PrimitiveCritic];

    pub fn name(self) -> &'static str {
        match self {
            NetId::RoleActor => "role_actor",
            NetId::PrimitiveActor => "primitive_actor",
            NetId::RoleCritic => "role_critic",
            NetId::PrimitiveCritic => "primitive_critic",
        }
    }
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(r_fov: usize, hidden: &[usize], role_period: usize, rng: &mut R) -> Result<Self> {
        let local = local_feature_dim(r_fov);
        let bundle = PolicyBundle::new(local, JOINT_FEATURE_DIM, hidden, role_period, rng)?;
        let sizes = |input: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(1);
            MlpSpec::new(s)
        };
        let critics = Critics {
            role: Mlp::init(sizes(2 * local + JOINT_FEATURE_DIM)?, 1.0, rng),
            primitive: Mlp::init(sizes(local + 1 + JOINT_FEATURE_DIM)?, 1.0, rng),
        };
        Ok(Self { bundle, critics })
    }

    pub fn net(&self, id: NetId) -> &Mlp {
        match id {
            NetId::RoleActor => &self.bundle.role_actor,
            NetId::PrimitiveActor => &self.bundle.primitive_actor,
            NetId::RoleCritic => &self.critics.role,
            NetId::PrimitiveCritic => &self.critics.primitive,
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut Mlp {
        match id {
            NetId::RoleActor => &mut self.bundle.role_actor,
            NetId::PrimitiveActor => &mut self.bundle.primitive_actor,
            NetId::RoleCritic => &mut self.critics.role,
            NetId::PrimitiveCritic => &mut self.critics.primitive,
        }
    }
}

/// One robot at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: RobotFeatures,
    pub role: RoleAction,
    /// Whether the role was sampled at this step (otherwise it was held).
    pub role_decision: bool,
    pub role_logprob: f64,
    pub role_value: f64,
    pub action: PrimitiveAction,
    pub primitive_logprob: f64,
    pub primitive_value: f64,
    pub role_reward: f64,
    pub primitive_reward: f64,
    pub done: bool,
}

/// Consecutive transitions of one robot in one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Values of the state after the last transition (zero when it is terminal).
    pub bootstrap_role: f64,
    pub bootstrap_primitive: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub capacity: usize,
    pub trajectories: Vec<Trajectory>,
    pub episodes: usize,
    pub env_steps: usize,
    pub r_e_sum: f64,
    pub r_c_sum: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.trajectories.iter().map(|t| t.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }
}

/// Generalised advantage estimation, computed backwards in one pass.
///
/// `δ_t = r_t + γ·V_{t+1}·(1 − done_t) − V_t`, `A_t = δ_t + γλ(1 − done_t)·A_{t+1}`,
/// with `V_T = bootstrap_value`. Returns `(advantages, returns = A + V)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} rewards, {} values, {} done flags",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero-mean, unit-variance advantages; left untouched when the variance is below 1e-8.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if var < 1e-8 {
        return adv.to_vec();
    }
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// One level's loss value, its terms and its gradients with respect to the
/// new log-probabilities, entropies and values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PpoLoss {
    pub total: f64,
    pub clip: f64,
    pub kl: f64,
    pub value: f64,
    pub entropy: f64,
    pub mean_entropy: f64,
    pub clip_fraction: f64,
    pub d_logprob: Vec<f64>,
    pub d_entropy: Vec<f64>,
    pub d_value: Vec<f64>,
}

/// Policy-side inputs of [`ppo_loss`].
#[derive(Debug, Clone, Copy)]
pub struct PolicyTerms<'a> {
    pub new_logprobs: &'a [f64],
    pub old_logprobs: &'a [f64],
    pub advantages: &'a [f64],
    pub entropies: &'a [f64],
}

/// `L = L_clip + c1·L_kl + c2·L_vf + c3·L_e` where
/// `L_clip = −mean(min(ρA, clip(ρ, 1−ε, 1+ε)A))`, `L_kl = max(0, mean(old − new))`,
/// `L_vf = mean((V − R)²)` and `L_e = −mean(H)`. Advantages are used as given.
pub fn ppo_loss(
    policy: PolicyTerms<'_>,
    new_values: &[f64],
    returns: &[f64],
    clip_eps: f64,
    coef: LossCoefficients,
) -> Result<PpoLoss> {
    let m = policy.new_logprobs.len();
    if policy.old_logprobs.len() != m || policy.advantages.len() != m || policy.entropies.len() != m {
        return Err(Error::LengthMismatch("policy terms differ in length".into()));
    }
    if new_values.len() != returns.len() {
        return Err(Error::LengthMismatch("values and returns differ in length".into()));
    }
    let mut out = PpoLoss {
        d_logprob: vec![0.0; m],
        d_entropy: vec![0.0; m],
        d_value: vec![0.0; new_values.len()],
        ..Default::default()
    };
    if m > 0 {
        let inv = 1.0 / m as f64;
        let mut clipped = 0usize;
        let mut kl_sum = 0.0;
        for i in 0..m {
            let ratio = (policy.new_logprobs[i] - policy.old_logprobs[i]).exp();
            let a = policy.advantages[i];
            let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            let unclipped = ratio * a;
            let bounded = clipped_ratio * a;
            if unclipped <= bounded {
                out.clip -= unclipped * inv;
                out.d_logprob[i] -= unclipped * inv;
            } else {
                out.clip -= bounded * inv;
                clipped += 1;
            }
            kl_sum += policy.old_logprobs[i] - policy.new_logprobs[i];
            out.mean_entropy += policy.entropies[i] * inv;
        }
        let kl_mean = kl_sum * inv;
        if kl_mean > 0.0 {
            out.kl = kl_mean;
            for d in &mut out.d_logprob {
                *d -= coef.kl * inv;
            }
        }
        out.entropy = -out.mean_entropy;
        out.d_entropy.iter_mut().for_each(|d| *d = -coef.entropy * inv);
        out.clip_fraction = clipped as f64 * inv;
    }
    if !new_values.is_empty() {
        let inv = 1.0 / new_values.len() as f64;
        for (i, (v, r)) in new_values.iter().zip(returns).enumerate() {
            out.value += (v - r).powi(2) * inv;
            out.d_value[i] = coef.value * 2.0 * (v - r) * inv;
        }
    }
    out.total = out.clip + coef.kl * out.kl + coef.value * out.value + coef.entropy * out.entropy;
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "clip {} kl {} value {} entropy {}",
            out.clip, out.kl, out.value, out.entropy
        )));
    }
    Ok(out)
}

/// Network inputs and stored targets of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub role_input: Vec<f64>,
    pub primitive_input: Vec<f64>,
    pub primitive_critic_input: Vec<f64>,
    pub role: usize,
    pub role_decision: bool,
    pub old_role_logprob: f64,
    pub role_advantage: f64,
    pub role_return: f64,
    pub action: usize,
    pub old_primitive_logprob: f64,
    pub primitive_advantage: f64,
    pub primitive_return: f64,
}

/// Runs GAE for both levels over every trajectory and flattens the buffer.
pub fn build_samples(buffer: &RolloutBuffer, config: &TrainConfig) -> Result<Vec<TrainSample>> {
    let mut out = Vec::with_capacity(buffer.len());
    for traj in &buffer.trajectories {
        let ts = &traj.transitions;
        let dones: Vec<bool> = ts.iter().map(|t| t.done).collect();
        let (role_adv, role_ret) = gae(
            &ts.iter().map(|t| t.role_reward).collect::<Vec<_>>(),
            &ts.iter().map(|t| t.role_value).collect::<Vec<_>>(),
            &dones,
            traj.bootstrap_role,
            config.gamma,
            config.gae_lambda,
        )?;
        let (prim_adv, prim_ret) = gae(
            &ts.iter().map(|t| t.primitive_reward).collect::<Vec<_>>(),
            &ts.iter().map(|t| t.primitive_value).collect::<Vec<_>>(),
            &dones,
            traj.bootstrap_primitive,
            config.gamma,
            config.gae_lambda,
        )?;
        for (i, t) in ts.iter().enumerate() {
            out.push(TrainSample {
                role_input: role_actor_input(&t.features),
                primitive_input: primitive_actor_input(&t.features.local, t.role),
                primitive_critic_input: primitive_critic_input(&t.features, t.role),
                role: t.role.index(),
                role_decision: t.role_decision,
                old_role_logprob: t.role_logprob,
                role_advantage: role_adv[i],
                role_return: role_ret[i],
                action: t.action.index(),
                old_primitive_logprob: t.primitive_logprob,
                primitive_advantage: prim_adv[i],
                primitive_return: prim_ret[i],
            });
        }
    }
    Ok(out)
}

struct SampleForward {
    role_trace: Trace,
    role_eval: CategoricalEval,
    role_value_trace: Trace,
    prim_trace: Trace,
    prim_eval: CategoricalEval,
    prim_value_trace: Trace,
}

/// Loss and gradients of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchOutput {
    /// `L_r + L_p`
    pub loss: f64,
    pub role: PpoLoss,
    pub primitive: PpoLoss,
    /// Gradients indexed by [`NetId`].
    pub grads: [Vec<f64>; 4],
    pub approx_kl_role: f64,
    pub approx_kl_primitive: f64,
}

/// Total hierarchical loss `L_r + L_p` on `batch` and its exact gradient with
/// respect to all four networks. Advantages are normalised per minibatch.
pub fn minibatch_loss(agent: &Agent, batch: &[TrainSample], config: &TrainConfig) -> Result<MinibatchOutput> {
    let fwd: Vec<SampleForward> = batch
        .iter()
        .map(|s| {
            let role_trace = agent.bundle.role_actor.forward_trace(&s.role_input)?;
            let role_eval = softmax_logprob_entropy(role_trace.output(), s.role);
            let role_value_trace = agent.critics.role.forward_trace(&s.role_input)?;
            let prim_trace = agent.bundle.primitive_actor.forward_trace(&s.primitive_input)?;
            let prim_eval = softmax_logprob_entropy(prim_trace.output(), s.action);
            let prim_value_trace = agent.critics.primitive.forward_trace(&s.primitive_critic_input)?;
            Ok(SampleForward { role_trace, role_eval, role_value_trace, prim_trace, prim_eval, prim_value_trace })
        })
        .collect::<Result<_>>()?;

    let decisions: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].role_decision).collect();
    let role_new: Vec<f64> = decisions.iter().map(|&i| fwd[i].role_eval.log_prob).collect();
    let role_old: Vec<f64> = decisions.iter().map(|&i| batch[i].old_role_logprob).collect();
    let role_adv = normalize_advantages(&decisions.iter().map(|&i| batch[i].role_advantage).collect::<Vec<_>>());
    let role_ent: Vec<f64> = decisions.iter().map(|&i| fwd[i].role_eval.entropy).collect();
    let role_values: Vec<f64> = fwd.iter().map(|f| f.role_value_trace.output()[0]).collect();
    let role_returns: Vec<f64> = batch.iter().map(|s| s.role_return).collect();
    let role = ppo_loss(
        PolicyTerms { new_logprobs: &role_new, old_logprobs: &role_old, advantages: &role_adv, entropies: &role_ent },
        &role_values,
        &role_returns,
        config.clip_eps,
        config.role_coef,
    )?;

    let prim_new: Vec<f64> = fwd.iter().map(|f| f.prim_eval.log_prob).collect();
    let prim_old: Vec<f64> = batch.iter().map(|s| s.old_primitive_logprob).collect();
    let prim_adv = normalize_advantages(&batch.iter().map(|s| s.primitive_advantage).collect::<Vec<_>>());
    let prim_ent: Vec<f64> = fwd.iter().map(|f| f.prim_eval.entropy).collect();
    let prim_values: Vec<f64> = fwd.iter().map(|f| f.prim_value_trace.output()[0]).collect();
    let prim_returns: Vec<f64> = batch.iter().map(|s| s.primitive_return).collect();
    let primitive = ppo_loss(
        PolicyTerms { new_logprobs: &prim_new, old_logprobs: &prim_old, advantages: &prim_adv, entropies: &prim_ent },
        &prim_values,
        &prim_returns,
        config.clip_eps,
        config.primitive_coef,
    )?;

    let mut grads: [Vec<f64>; 4] = NetId::ALL.map(|id| vec![0.0; agent.net(id).params().len()]);
    let logit_grad = |eval: &CategoricalEval, d_lp: f64, d_h: f64| -> Vec<f64> {
        let gh = eval.grad_entropy();
        eval.grad_log_prob.iter().zip(gh).map(|(a, b)| d_lp * a + d_h * b).collect()
    };
    for (j, &i) in decisions.iter().enumerate() {
        let g = logit_grad(&fwd[i].role_eval, role.d_logprob[j], role.d_entropy[j]);
        agent.bundle.role_actor.backward_trace(&fwd[i].role_trace, &g, &mut grads[0])?;
    }
    for (i, f) in fwd.iter().enumerate() {
        let g = logit_grad(&f.prim_eval, primitive.d_logprob[i], primitive.d_entropy[i]);
        agent.bundle.primitive_actor.backward_trace(&f.prim_trace, &g, &mut grads[1])?;
        agent.critics.role.backward_trace(&f.role_value_trace, &[role.d_value[i]], &mut grads[2])?;
        agent.critics.primitive.backward_trace(&f.prim_value_trace, &[primitive.d_value[i]], &mut grads[3])?;
    }

    let approx_kl = |new: &[f64], old: &[f64]| -> f64 {
        if new.is_empty() {
            0.0
        } else {
            new.iter().zip(old).map(|(n, o)| o - n).sum::<f64>() / new.len() as f64
        }
    };
    Ok(MinibatchOutput {
        loss: role.total + primitive.total,
        approx_kl_role: approx_kl(&role_new, &role_old),
        approx_kl_primitive: approx_kl(&prim_new, &prim_old),
        role,
        primitive,
        grads,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub loss_role: f64,
    pub loss_primitive: f64,
    pub entropy_role: f64,
    pub entropy_primitive: f64,
    pub approx_kl_role: f64,
    pub approx_kl_primitive: f64,
    pub clip_fraction_role: f64,
    pub clip_fraction_primitive: f64,
    pub minibatches: usize,
}

fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}

/// Several epochs of shuffled minibatch steps over the buffer. Every network
/// takes one optimizer step per minibatch.
pub fn update(
    buffer: &RolloutBuffer,
    agent: &mut Agent,
    optimizers: &mut [Adam; 4],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics> {
    let samples = build_samples(buffer, config)?;
    let mut diag = UpdateDiagnostics::default();
    if samples.is_empty() {
        return Ok(diag);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let mut out = minibatch_loss(agent, &batch, config)?;
            if out.grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient);
            }
            for (id, grad) in NetId::ALL.into_iter().zip(out.grads.iter_mut()) {
                if let Some(max) = config.max_grad_norm {
                    clip_grad_norm(grad, max);
                }
                optimizers[id as usize].update(agent.net_mut(id).params_mut(), grad)?;
            }
            diag.loss_role += out.role.total;
            diag.loss_primitive += out.primitive.total;
            diag.entropy_role += out.role.mean_entropy;
            diag.entropy_primitive += out.primitive.mean_entropy;
            diag.approx_kl_role += out.approx_kl_role;
            diag.approx_kl_primitive += out.approx_kl_primitive;
            diag.clip_fraction_role += out.role.clip_fraction;
            diag.clip_fraction_primitive += out.primitive.clip_fraction;
            diag.minibatches += 1;
        }
    }
    let n = diag.minibatches as f64;
    diag.loss_role /= n;
    diag.loss_primitive /= n;
    diag.entropy_role /= n;
    diag.entropy_primitive /= n;
    diag.approx_kl_role /= n;
    diag.approx_kl_primitive /= n;
    diag.clip_fraction_role /= n;
    diag.clip_fraction_primitive /= n;
    Ok(diag)
}

/// Everything needed to run training episodes.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub scenario: &'a ScenarioConfig,
    pub config: &'a TrainConfig,
    pub weights: RewardWeights,
    pub b_e: f64,
}

/// Plays one training episode (at most `max_steps` steps) with the current
/// networks and returns one trajectory per robot.
pub fn rollout_episode(
    agent: &Agent,
    ctx: RolloutContext<'_>,
    map_seed: u64,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Trajectory>, f64, f64)> {
    let scenario = ScenarioConfig { seed: map_seed, ..ctx.scenario.clone() };
    let mut world = generate_map(&scenario)?;
    world.initial_sense();
    let n = world.n_robots();
    let mut trajectories = vec![Trajectory::default(); n];
    let mut roles = vec![RoleAction::Explore; n];
    let (mut r_e_sum, mut r_c_sum) = (0.0, 0.0);
    let limit = max_steps.min(scenario.episode_len);
    let bundle = &agent.bundle;
    let mut truncated = false;
    for t in 0..limit {
        let feats = observe_team(&world, ctx.config.joint_scope);
        let decide = t % bundle.role_period == 0;
        let mut step = Vec::with_capacity(n);
        for (i, f) in feats.into_iter().enumerate() {
            let role_in = role_actor_input(&f);
            let role_logits = bundle.role_actor.forward(&role_in)?;
            if decide {
                let probs = crate::nn::softmax(&role_logits);
                roles[i] = RoleAction::from_index(sample_categorical(&probs, rng));
            }
            let role_eval = softmax_logprob_entropy(&role_logits, roles[i].index());
            let role_value = agent.critics.role.forward(&role_in)?[0];
            let prim_logits = bundle.primitive_actor.forward(&primitive_actor_input(&f.local, roles[i]))?;
            let probs = crate::nn::softmax(&prim_logits);
            let action = PrimitiveAction::from_index(sample_categorical(&probs, rng));
            let prim_eval = softmax_logprob_entropy(&prim_logits, action.index());
            let primitive_value = agent.critics.primitive.forward(&primitive_critic_input(&f, roles[i]))?[0];
            step.push(Transition {
                features: f,
                role: roles[i],
                role_decision: decide,
                role_logprob: role_eval.log_prob,
                role_value,
                action,
                primitive_logprob: prim_eval.log_prob,
                primitive_value,
                role_reward: 0.0,
                primitive_reward: 0.0,
                done: false,
            });
        }
        let actions: Vec<PrimitiveAction> = step.iter().map(|s| s.action).collect();
        let events = world.step(&actions)?;
        let rec = primitive_rewards(&events, &roles, ctx.b_e, ctx.weights);
        r_e_sum += rec.r_e;
        r_c_sum += rec.r_c;
        let done = t + 1 == scenario.episode_len || world.is_complete();
        for (i, mut tr) in step.into_iter().enumerate() {
            tr.role_reward = rec.r_role;
            tr.primitive_reward = rec.per_robot_primitive[i];
            tr.done = done;
            trajectories[i].transitions.push(tr);
        }
        if done {
            break;
        }
        truncated = t + 1 == limit;
    }
    if truncated {
        let feats = observe_team(&world, ctx.config.joint_scope);
        for (i, f) in feats.iter().enumerate() {
            trajectories[i].bootstrap_role = agent.critics.role.forward(&role_actor_input(f))?[0];
            trajectories[i].bootstrap_primitive = agent.critics.primitive.forward(&primitive_critic_input(f, roles[i]))?[0];
        }
    }
    Ok((trajectories, r_e_sum, r_c_sum))
}

/// Plays episodes on freshly generated maps until the buffer holds
/// `batch_size` robot-timesteps (rounded down to whole team steps). The last
/// episode is cut short and bootstrapped when it would overflow.
pub fn collect_rollouts(
    agent: &Agent,
    ctx: RolloutContext<'_>,
    seed: u64,
    first_episode: u64,
) -> Result<RolloutBuffer> {
    let n = ctx.scenario.n_robots;
    let max_env_steps = ctx.config.batch_size / n;
    let mut buffer = RolloutBuffer { capacity: ctx.config.batch_size, ..Default::default() };
    let mut episode = first_episode;
    while buffer.env_steps < max_env_steps {
        let map_seed = derive_seed(seed, streams::EPISODE_MAP, episode);
        let mut rng = stream_rng(seed, streams::TRAIN_ROLLOUT, episode);
        let remaining = max_env_steps - buffer.env_steps;
        let (trajs, r_e, r_c) = rollout_episode(agent, ctx, map_seed, remaining, &mut rng)?;
        buffer.env_steps += trajs[0].transitions.len();
        buffer.r_e_sum += r_e;
        buffer.r_c_sum += r_c;
        buffer.trajectories.extend(trajs);
        buffer.episodes += 1;
        episode += 1;
    }
    Ok(buffer)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub update_index: u64,
    pub steps: u64,
    pub loss_role: f64,
    pub loss_primitive: f64,
    pub r_e_mean: f64,
    pub r_c_mean: f64,
    pub role_explore_fraction: f64,
    pub entropy_role: f64,
    pub entropy_primitive: f64,
}

impl TrainLogRow {
    pub const HEADER: &'static str =
        "update_index,steps,L_r,L_p,R_e_mean,R_c_mean,role_explore_fraction,entropy_role,entropy_prim";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.update_index,
            self.steps,
            self.loss_role,
            self.loss_primitive,
            self.r_e_mean,
            self.r_c_mean,
            self.role_explore_fraction,
            self.entropy_role,
            self.entropy_primitive
        )
    }
}

/// Training state: networks, optimizer moments and counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub scenario: ScenarioConfig,
    pub config: TrainConfig,
    pub weights: RewardWeights,
    pub seed: u64,
    pub agent: Agent,
    pub optimizers: [Adam; 4],
    pub update_index: u64,
    pub env_steps: u64,
    pub episodes: u64,
}

impl Trainer {
    pub fn new(scenario: ScenarioConfig, config: TrainConfig, weights: RewardWeights, seed: u64) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        if config.batch_size < scenario.n_robots {
            return Err(Error::InvalidConfig("batch must hold at least one team step".into()));
        }
        let mut rng = stream_rng(seed, streams::INIT, 0);
        let agent = Agent::new(scenario.r_fov, &config.hidden, config.role_period, &mut rng)?;
        let optimizers = NetId::ALL.map(|id| Adam::new(agent.net(id).params().len(), config.learning_rate));
        Ok(Self { scenario, config, weights, seed, agent, optimizers, update_index: 0, env_steps: 0, episodes: 0 })
    }

    pub fn b_e(&self) -> Result<f64> {
        exploration_ability(self.scenario.rad_e, 1.0, self.config.ability_mode)
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.config.total_timesteps
    }

    /// One collect + update cycle.
    pub fn train_iteration(&mut self) -> Result<TrainLogRow> {
        let ctx = RolloutContext { scenario: &self.scenario, config: &self.config, weights: self.weights, b_e: self.b_e()? };
        let buffer = collect_rollouts(&self.agent, ctx, self.seed, self.episodes)?;
        let mut rng = stream_rng(self.seed, streams::TRAIN_SHUFFLE, self.update_index);
        let diag = update(&buffer, &mut self.agent, &mut self.optimizers, &self.config, &mut rng)?;
        self.episodes += buffer.episodes as u64;
        self.env_steps += buffer.env_steps as u64;
        self.update_index += 1;
        let decisions: Vec<&Transition> = buffer.transitions().filter(|t| t.role_decision).collect();
        let explore = decisions.iter().filter(|t| t.role == RoleAction::Explore).count();
        Ok(TrainLogRow {
            update_index: self.update_index,
            steps: self.env_steps,
            loss_role: diag.loss_role,
            loss_primitive: diag.loss_primitive,
            r_e_mean: buffer.r_e_sum / buffer.env_steps as f64,
            r_c_mean: buffer.r_c_sum / buffer.env_steps as f64,
            role_explore_fraction: 100.0 * explore as f64 / decisions.len().max(1) as f64,
            entropy_role: diag.entropy_role,
            entropy_primitive: diag.entropy_primitive,
        })
    }

    /// Trains until `total_timesteps` environment steps have been collected.
    pub fn train(&mut self, mut on_update: impl FnMut(&TrainLogRow)) -> Result<()> {
        while !self.is_finished() {
            let row = self.train_iteration()?;
            on_update(&row);
        }
        Ok(())
    }
}
