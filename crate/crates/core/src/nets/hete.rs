//! Hypernetwork decoders: latent sample → per-agent layer weights.
//!
//! A 3-layer MLP embeds the latent; two linear decoders map the
//! embedding to the weight matrix and bias of the agent's private
//! layer. The weight decoder output is scaled by `1/sqrt(width)` to
//! keep decoded layers well-conditioned, and its bias is initialized to
//! the flattened identity: at init every agent's private layer is a
//! no-op, so training starts from the homogeneous policy.
//!
//! These parameters live under `actor.dec.*` — they are part of the
//! actor group and are updated by the actor loss alone.

use rand_chacha::ChaCha8Rng;

use super::NetDims;
use crate::autodiff::{linear, linear_scaled, LinearParams, NodeId, ParamStore, Tape, Tensor, WeightInit};
use crate::error::Result;

/// Decoded per-agent layer: `y = w·x + b` with `w` of shape
/// `(width, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl HeteParams {
    /// The neutral layer: identity weights, zero bias.
    pub fn identity(width: usize) -> HeteParams {
        let mut w = Tensor::zeros(&[width, width]);
        for i in 0..width {
            w.data_mut()[i * width + i] = 1.0;
        }
        HeteParams { w, b: Tensor::zeros(&[width]) }
    }
}

#[derive(Debug, Clone)]
pub struct HeteDecoder {
    fc1: LinearParams,
    fc2: LinearParams,
    fc3: LinearParams,
    w_dec: LinearParams,
    b_dec: LinearParams,
    pub width: usize,
    pub scale: f64,
}

impl HeteDecoder {
    pub fn init(store: &mut ParamStore, dims: NetDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let h = dims.hidden;
        let fc1 = LinearParams::init(store, "actor.dec.fc1", h, dims.latent, WeightInit::FanInUniform, rng)?;
        let fc2 = LinearParams::init(store, "actor.dec.fc2", h, h, WeightInit::FanInUniform, rng)?;
        let fc3 = LinearParams::init(store, "actor.dec.fc3", h, h, WeightInit::FanInUniform, rng)?;
        let w_dec = LinearParams::init(store, "actor.dec.w", h * h, h, WeightInit::Zeros, rng)?;
        let b_dec = LinearParams::init(store, "actor.dec.b", h, h, WeightInit::Zeros, rng)?;
        // Identity start: zero decoder weights + identity bias mean
        // decode(l) is the neutral layer for every l at init.
        let ident = HeteParams::identity(h);
        store.set_value(&w_dec.b, Tensor::vector(ident.w.data().to_vec()))?;
        Ok(HeteDecoder { fc1, fc2, fc3, w_dec, b_dec, width: h, scale: 1.0 / (h as f64).sqrt() })
    }

    /// Batched decode of `(B, latent)` samples into flattened weight
    /// rows `(B, width²)` and biases `(B, width)`.
    pub fn forward(&self, tape: &mut Tape, l: NodeId) -> Result<(NodeId, NodeId)> {
        let e = linear(tape, &self.fc1, l)?;
        let e = tape.relu(e);
        let e = linear(tape, &self.fc2, e)?;
        let e = tape.relu(e);
        let emb = linear(tape, &self.fc3, e)?;
        let w_flat = linear_scaled(tape, &self.w_dec, emb, self.scale)?;
        let b = linear(tape, &self.b_dec, emb)?;
        Ok((w_flat, b))
    }

    /// Decode a single latent into concrete layer parameters.
    pub fn decode_one(&self, store: &ParamStore, l: &[f64]) -> Result<HeteParams> {
        let mut tape = Tape::new(store);
        let ln = tape.leaf(Tensor::matrix(1, l.len(), l.to_vec())?);
        let (w_flat, b) = self.forward(&mut tape, ln)?;
        Ok(HeteParams {
            w: Tensor::matrix(self.width, self.width, tape.value(w_flat).data().to_vec())?,
            b: Tensor::vector(tape.value(b).data().to_vec()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn dims() -> NetDims {
        NetDims { obs: 11, og: 20, hidden: 8, latent: 3, actions: 6, n_agents: 2 }
    }

    #[test]
    fn decode_at_init_is_identity_for_any_latent() {
        let mut store = ParamStore::new();
        let mut rng = rng_for(0, "hete-test", 0);
        let dec = HeteDecoder::init(&mut store, dims(), &mut rng).unwrap();
        for l in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]] {
            let hp = dec.decode_one(&store, &l).unwrap();
            assert_eq!(hp, HeteParams::identity(8), "latent {l:?}");
        }
    }

    #[test]
    fn all_zero_decoder_params_decode_to_zero() {
        let mut store = ParamStore::new();
        let mut rng = rng_for(1, "hete-test", 1);
        let dec = HeteDecoder::init(&mut store, dims(), &mut rng).unwrap();
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for n in names {
            let sh = store.value(&n).unwrap().shape().to_vec();
            store.set_value(&n, Tensor::zeros(&sh)).unwrap();
        }
        let hp = dec.decode_one(&store, &[0.7, -0.1, 0.4]).unwrap();
        assert!(hp.w.data().iter().all(|&v| v == 0.0));
        assert!(hp.b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distinct_latents_decode_to_distinct_layers_once_trained() {
        // Perturb the weight decoder away from zero; different latents
        // must then produce different layers.
        let mut store = ParamStore::new();
        let mut rng = rng_for(2, "hete-test", 2);
        let dec = HeteDecoder::init(&mut store, dims(), &mut rng).unwrap();
        let sh = store.value("actor.dec.w.w").unwrap().shape().to_vec();
        let perturbed = crate::autodiff::Tensor::from_vec(
            &sh,
            (0..sh[0] * sh[1]).map(|i| ((i % 13) as f64 - 6.0) * 0.01).collect(),
        )
        .unwrap();
        store.set_value("actor.dec.w.w", perturbed).unwrap();
        let a = dec.decode_one(&store, &[1.0, 0.0, 0.0]).unwrap();
        let b = dec.decode_one(&store, &[0.0, 1.0, 0.0]).unwrap();
        let max_diff = a
            .w
            .data()
            .iter()
            .zip(b.w.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 1e-6, "layers identical: max diff {max_diff}");
    }
}
