//! Actor and critic networks and the masked categorical distribution over actions.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use davinci_core::encoding::{ActionMask, EncodedState, NUM_ACTIONS};

use crate::encoder::{Batch, Dropout, EncoderCache, EncoderConfig, StateEncoder};
use crate::layers::{relu_backward, relu_in_place, Linear, ParamList, ParamListMut};
use crate::scalar::Scalar;
use crate::LearnError;

/// Written into illegal logits; finite so that no arithmetic produces NaN.
pub const MASK_SENTINEL: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Actor,
    Critic,
}

impl Head {
    pub fn out_dim(self) -> usize {
        match self {
            Head::Actor => NUM_ACTIONS,
            Head::Critic => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Actor => "actor",
            Head::Critic => "critic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub encoder: EncoderConfig,
    pub hidden_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), hidden_dim: 128 }
    }
}

impl NetworkConfig {
    pub fn tiny() -> Self {
        Self { encoder: EncoderConfig::tiny(), hidden_dim: 8 }
    }
}

/// Encoder, one hidden ReLU layer, and a linear output head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub head: Head,
    pub config: NetworkConfig,
    pub encoder: StateEncoder<T>,
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct NetworkCache<T> {
    encoder: EncoderCache<T>,
    cls: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(head: Head, config: NetworkConfig, rng: &mut impl Rng) -> Result<Self, LearnError> {
        if config.hidden_dim == 0 {
            return Err(LearnError::Config("hidden_dim must be positive".into()));
        }
        let encoder = StateEncoder::new(config.encoder.clone(), rng)?;
        let hidden = Linear::new(config.encoder.model_dim, config.hidden_dim, rng);
        let output = Linear::new(config.hidden_dim, head.out_dim(), rng);
        Ok(Self { head, config, encoder, hidden, output })
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// Outputs `[batch, out_dim]` plus the activations needed by [`Network::backward`].
    pub fn forward_cached<R: Rng>(
        &self,
        batch: &Batch,
        rng: Dropout<'_, R>,
    ) -> Result<(Vec<T>, NetworkCache<T>), LearnError> {
        let (cls, encoder) = self.encoder.forward(batch, rng)?;
        let b = batch.len();
        let mut hidden = self.hidden.forward(&cls, b);
        relu_in_place(&mut hidden);
        let out = self.output.forward(&hidden, b);
        Ok((out, NetworkCache { encoder, cls, hidden }))
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, batch: &Batch) -> Result<Vec<T>, LearnError> {
        Ok(self.forward_cached::<rand::rngs::SmallRng>(batch, None)?.0)
    }

    /// Accumulates parameter gradients for the output gradient `dout`.
    pub fn backward(&mut self, batch: &Batch, cache: &NetworkCache<T>, dout: &[T]) {
        let b = batch.len();
        let mut dh = self.output.backward(&cache.hidden, dout, b);
        relu_backward(&cache.hidden, &mut dh);
        let dcls = self.hidden.backward(&cache.cls, &dh, b);
        self.encoder.backward(batch, &cache.encoder, &dcls);
    }

    pub fn params(&self) -> ParamList<'_, T> {
        let mut out = Vec::new();
        let p = self.head.name();
        self.encoder.params(&format!("{p}.encoder"), &mut out);
        self.hidden.params(&format!("{p}.hidden"), &mut out);
        self.output.params(&format!("{p}.output"), &mut out);
        out
    }

    pub fn params_mut(&mut self) -> ParamListMut<'_, T> {
        let mut out = Vec::new();
        let p = self.head.name();
        self.encoder.params_mut(&format!("{p}.encoder"), &mut out);
        self.hidden.params_mut(&format!("{p}.hidden"), &mut out);
        self.output.params_mut(&format!("{p}.output"), &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Copies values into a network of another precision with the same shape.
    pub fn convert<U: Scalar>(&self) -> Network<U> {
        let mut rng = rand::rngs::SmallRng::seed_from_u64(0);
        let mut out = Network::<U>::new(self.head, self.config.clone(), &mut rng).expect("config already validated");
        for ((_, src), (_, dst)) in self.params().into_iter().zip(out.params_mut()) {
            for (d, s) in dst.value.iter_mut().zip(&src.value) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }
}

/// Logits with illegal entries replaced by [`MASK_SENTINEL`].
pub fn masked_logits<T: Scalar>(logits: &[T], mask: &ActionMask) -> Result<Vec<T>, LearnError> {
    if mask.count() == 0 {
        return Err(LearnError::EmptyMask);
    }
    let sentinel = T::lit(MASK_SENTINEL);
    Ok(logits.iter().enumerate().map(|(i, l)| if mask.get(i) { *l } else { sentinel }).collect())
}

/// Log-probabilities of a masked logit row.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|v| (*v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|v| *v - lse).collect()
}

/// Entropy over the legal entries of a log-probability row.
pub fn masked_entropy<T: Scalar>(logp: &[T], mask: &ActionMask) -> T {
    mask.indices().map(|i| -logp[i].exp() * logp[i]).sum()
}

/// Inverse-CDF draw from the legal entries.
pub fn sample_action<T: Scalar>(logp: &[T], mask: &ActionMask, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for i in mask.indices() {
        acc += logp[i].as_f64().exp();
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Most probable legal index; ties go to the lowest index.
pub fn greedy_action<T: Scalar>(logp: &[T], mask: &ActionMask) -> usize {
    let mut best = None::<(usize, T)>;
    for i in mask.indices() {
        if best.is_none_or(|(_, v)| logp[i] > v) {
            best = Some((i, logp[i]));
        }
    }
    best.expect("mask has a legal action").0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f32>,
    pub masked_logits: Vec<f32>,
    pub value: f32,
}

/// Log-probabilities and entropy of one masked policy row.
#[derive(Debug, Clone)]
pub struct RowStats<T> {
    pub logp: Vec<T>,
    pub entropy: T,
}

pub fn row_stats<T: Scalar>(logits: &[T], mask: &ActionMask) -> Result<RowStats<T>, LearnError> {
    let logp = log_softmax(&masked_logits(logits, mask)?);
    let entropy = masked_entropy(&logp, mask);
    Ok(RowStats { logp, entropy })
}

/// Adds `coef·∂(log π(a))/∂z + ent_coef·∂H/∂z` to `grad` for one row.
pub fn policy_row_grad<T: Scalar>(
    stats: &RowStats<T>,
    mask: &ActionMask,
    action: usize,
    coef: T,
    ent_coef: T,
    grad: &mut [T],
) {
    for i in mask.indices() {
        let p = stats.logp[i].exp();
        let dlogp = if i == action { T::one() - p } else { -p };
        let dent = -p * (stats.logp[i] + stats.entropy);
        grad[i] += coef * dlogp + ent_coef * dent;
    }
}

/// Independent actor and critic, each with its own encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub actor: Network<T>,
    pub critic: Network<T>,
}

impl<T: Scalar> ActorCritic<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, LearnError> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let actor = Network::new(Head::Actor, config.clone(), &mut rng)?;
        let critic = Network::new(Head::Critic, config, &mut rng)?;
        Ok(Self { actor, critic })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.actor.config
    }

    /// Evaluation-mode policy statistics and values for a batch of states.
    pub fn evaluate(&self, batch: &Batch, masks: &[ActionMask]) -> Result<Vec<(RowStats<T>, T)>, LearnError> {
        let logits = self.actor.forward(batch)?;
        let values = self.critic.forward(batch)?;
        masks
            .iter()
            .enumerate()
            .map(|(i, mask)| Ok((row_stats(&logits[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS], mask)?, values[i])))
            .collect()
    }

    pub fn policy_output(&self, state: &EncodedState, mask: &ActionMask) -> Result<PolicyOutput, LearnError> {
        let batch = Batch::from_states([state]);
        let logits = self.actor.forward(&batch)?;
        let masked = masked_logits(&logits, mask)?;
        let value = self.critic.forward(&batch)?[0];
        let f = |v: &Vec<T>| v.iter().map(|x| x.as_f64() as f32).collect();
        Ok(PolicyOutput { logits: f(&logits), masked_logits: f(&masked), value: value.as_f64() as f32 })
    }
}
