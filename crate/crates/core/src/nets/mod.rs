//! The five networks and their value-level sampling ops.
//!
//! One parameter store holds four groups, named by prefix:
//!
//! * `actor.*`   — shared policy trunk, GRU, head, and the hypernet
//!   decoders (`actor.dec.*`) that emit per-agent layer weights. This
//!   whole group moves with the actor loss and transfers across team
//!   sizes.
//! * `critic.*`  — centralized value function over the global state.
//! * `latent.*`  — encoder producing each agent's strategy distribution.
//! * `infer.*`   — centralized scorer of the team's latent distributions;
//!   the only group trained by its own regression loss.
//!
//! Network structs hold parameter names plus dimensions; forwards are
//! tape ops that accept a single vector or a `(B, ·)` batch.

mod actor;
mod critic;
mod hete;
mod infer;
mod latent;

pub use actor::ActorNet;
pub use critic::CriticNet;
pub use hete::{HeteDecoder, HeteParams};
pub use infer::InferenceNet;
pub use latent::{LatentDistribution, LatentNet, LatentSample};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{CoreError, Result};

/// Logit offset applied to invalid actions; exp(-1e9 - m) underflows to
/// exactly zero probability.
pub const MASK_PENALTY: f64 = -1e9;

/// Additive floor keeping latent standard deviations strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Dimensions shared by every network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    /// Per-agent observation length (team-size independent).
    pub obs: usize,
    /// Global state length (grows with unit count).
    pub og: usize,
    /// Hidden width of MLPs, GRUs and the per-agent layer.
    pub hidden: usize,
    /// Strategy latent dimensionality.
    pub latent: usize,
    pub actions: usize,
    /// Ally team size (inference-net input only).
    pub n_agents: usize,
}

/// Policy head output for one agent.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// Masked logits; invalid actions sit at [`MASK_PENALTY`].
    pub logits: Vec<f64>,
    pub h_next: Vec<f64>,
}

/// Log-probabilities from masked logits (stable log-softmax).
pub fn log_probs(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln() + mx;
    logits.iter().map(|&x| x - lse).collect()
}

/// Sample an action from masked logits; returns `(action, log_prob)`.
///
/// Greedy mode takes the arg-max (lowest index on ties) and consumes no
/// randomness.
pub fn sample_action(po: &PolicyOutput, rng: &mut ChaCha8Rng, greedy: bool) -> Result<(usize, f64)> {
    let lp = log_probs(&po.logits);
    if greedy {
        let mut best = 0;
        for (i, &l) in po.logits.iter().enumerate() {
            if l > po.logits[best] {
                best = i;
            }
        }
        return Ok((best, lp[best]));
    }
    let probs: Vec<f64> = lp.iter().map(|&l| l.exp()).collect();
    let u: f64 = rng.gen::<f64>();
    let mut cum = 0.0;
    let mut pick = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            pick = i;
            break;
        }
    }
    if po.logits[pick] <= MASK_PENALTY / 2.0 {
        // Total valid mass underflowed below u; only possible when no
        // action is valid, which the env forbids.
        return Err(CoreError::Contract("sampled a masked action".into()));
    }
    Ok((pick, lp[pick]))
}

/// Draw `l = mu + sigma ⊙ noise` with standard-normal noise. The noise is
/// returned so the sample can be reproduced exactly inside a tape.
pub fn sample_latent(d: &LatentDistribution, rng: &mut ChaCha8Rng) -> LatentSample {
    let noise: Vec<f64> = d.mu.iter().map(|_| StandardNormal.sample(rng)).collect();
    let l = d
        .mu
        .iter()
        .zip(&d.sigma)
        .zip(&noise)
        .map(|((&m, &s), &n)| m + s * n)
        .collect();
    LatentSample { l, noise }
}

/// Initialize every network for `dims`, returning the store plus net
/// definitions. Baselines skip the latent machinery via `with_latents`.
pub struct NetSet {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub latent: Option<LatentNet>,
    pub decoder: Option<HeteDecoder>,
    pub inference: Option<InferenceNet>,
}

impl NetSet {
    pub fn init(
        store: &mut ParamStore,
        dims: NetDims,
        with_latents: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NetSet> {
        let actor = ActorNet::init(store, dims, with_latents, rng)?;
        let critic = CriticNet::init(store, dims, rng)?;
        let (latent, decoder, inference) = if with_latents {
            (
                Some(LatentNet::init(store, dims, rng)?),
                Some(HeteDecoder::init(store, dims, rng)?),
                Some(InferenceNet::init(store, dims, rng)?),
            )
        } else {
            (None, None, None)
        };
        Ok(NetSet { actor, critic, latent, decoder, inference })
    }
}

/// Mask panalty row for a tape: 0 where valid, [`MASK_PENALTY`] where not.
pub fn mask_rows(masks: &[Vec<bool>], actions: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(masks.len() * actions);
    for m in masks {
        if m.len() != actions {
            return Err(CoreError::shape("mask_rows", &[actions], &[m.len()]));
        }
        if !m.iter().any(|&v| v) {
            return Err(CoreError::Contract("action mask with no valid action".into()));
        }
        for &v in m {
            data.push(if v { 0.0 } else { MASK_PENALTY });
        }
    }
    Tensor::matrix(masks.len(), actions, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn uniform_logits_sample_log_prob() {
        let po = PolicyOutput { logits: vec![0.0; 6], h_next: vec![] };
        let mut rng = rng_for(0, "nets-test", 0);
        let (_, lp) = sample_action(&po, &mut rng, false).unwrap();
        assert!((lp - (1.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_takes_argmax_lowest_index_on_ties() {
        let po = PolicyOutput { logits: vec![1.0, 3.0, 3.0, -1.0], h_next: vec![] };
        let mut rng = rng_for(0, "nets-test", 1);
        let (a, _) = sample_action(&po, &mut rng, true).unwrap();
        assert_eq!(a, 1);
    }

    #[test]
    fn masked_actions_are_never_sampled() {
        let mut logits = vec![0.3, -0.2, 0.9, 0.0, 0.1, -0.4];
        logits[2] += MASK_PENALTY; // mask the would-be argmax
        logits[5] += MASK_PENALTY;
        let po = PolicyOutput { logits, h_next: vec![] };
        let mut rng = rng_for(1, "nets-test", 2);
        for _ in 0..10_000 {
            let (a, _) = sample_action(&po, &mut rng, false).unwrap();
            assert!(a != 2 && a != 5);
        }
        let (g, _) = sample_action(&po, &mut rng, true).unwrap();
        assert_ne!(g, 2);
    }

    #[test]
    fn sample_frequencies_match_softmax() {
        // Monte-Carlo oracle: 1e5 draws, tolerance 0.01 ≈ 6σ.
        let logits = vec![0.5, -1.0, 0.0, 2.0];
        let po = PolicyOutput { logits: logits.clone(), h_next: vec![] };
        let lp = log_probs(&logits);
        let mut rng = rng_for(2, "nets-test", 3);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let (a, _) = sample_action(&po, &mut rng, false).unwrap();
            counts[a] += 1;
        }
        for i in 0..4 {
            let freq = counts[i] as f64 / n as f64;
            assert!(
                (freq - lp[i].exp()).abs() < 0.01,
                "action {i}: freq {freq} vs prob {}",
                lp[i].exp()
            );
        }
    }

    #[test]
    fn latent_sample_reparameterization_holds_exactly() {
        let d = LatentDistribution {
            mu: vec![0.3, -0.7, 2.0],
            sigma: vec![0.5, 1.0, 0.1],
        };
        let mut rng = rng_for(3, "nets-test", 4);
        let s = sample_latent(&d, &mut rng);
        for j in 0..3 {
            assert_eq!(s.l[j], d.mu[j] + d.sigma[j] * s.noise[j]);
        }
    }

    #[test]
    fn latent_sample_moments_match_distribution() {
        // 1e6-draw Monte-Carlo oracle, tolerance 0.01 per coordinate.
        let d = LatentDistribution { mu: vec![0.0; 3], sigma: vec![1.0; 3] };
        let mut rng = rng_for(4, "nets-test", 5);
        let n = 1_000_000;
        let mut sum = [0.0; 3];
        let mut sumsq = [0.0; 3];
        for _ in 0..n {
            let s = sample_latent(&d, &mut rng);
            for j in 0..3 {
                sum[j] += s.l[j];
                sumsq[j] += s.l[j] * s.l[j];
            }
        }
        for j in 0..3 {
            let mean = sum[j] / n as f64;
            let std = (sumsq[j] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 0.01, "mean[{j}] = {mean}");
            assert!((std - 1.0).abs() < 0.01, "std[{j}] = {std}");
        }
    }
}
