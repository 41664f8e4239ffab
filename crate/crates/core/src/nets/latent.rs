//! Per-agent strategy-latent encoder.
//!
//! Maps `(o_t, h_{t-1})` — the agent's observation and its actor GRU
//! state from the previous step — to a diagonal Gaussian over the latent
//! space. Parameters are shared across agents; heterogeneity comes from
//! each agent's inputs, not its weights.

use rand_chacha::ChaCha8Rng;

use super::{NetDims, SIGMA_FLOOR};
use crate::autodiff::{linear, LinearParams, NodeId, ParamStore, Tape, Tensor, WeightInit};
use crate::error::Result;

/// Diagonal Gaussian over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    /// Strictly positive: softplus of the head output plus
    /// [`SIGMA_FLOOR`].
    pub sigma: Vec<f64>,
}

/// A reparameterized draw: `l = mu + sigma ⊙ noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub l: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LatentNet {
    fc1: LinearParams,
    fc2: LinearParams,
    head: LinearParams,
    pub latent_dim: usize,
}

impl LatentNet {
    pub fn init(store: &mut ParamStore, dims: NetDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let input = dims.obs + dims.hidden;
        Ok(LatentNet {
            fc1: LinearParams::init(store, "latent.fc1", dims.hidden, input, WeightInit::FanInUniform, rng)?,
            fc2: LinearParams::init(store, "latent.fc2", dims.hidden, dims.hidden, WeightInit::FanInUniform, rng)?,
            head: LinearParams::init(store, "latent.head", 2 * dims.latent, dims.hidden, WeightInit::FanInUniform, rng)?,
            latent_dim: dims.latent,
        })
    }

    /// Batched forward over `(B, obs + hidden)` rows; returns
    /// `(mu, sigma)`, each `(B, latent)`.
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> Result<(NodeId, NodeId)> {
        let h1 = linear(tape, &self.fc1, input)?;
        let h1 = tape.relu(h1);
        let h2 = linear(tape, &self.fc2, h1)?;
        let h2 = tape.relu(h2);
        let out = linear(tape, &self.head, h2)?;
        let mu = tape.slice_cols(out, 0, self.latent_dim)?;
        let raw = tape.slice_cols(out, self.latent_dim, self.latent_dim)?;
        let sp = tape.softplus(raw);
        let sigma = tape.add_const(sp, SIGMA_FLOOR);
        Ok((mu, sigma))
    }

    /// Single-agent convenience used by tests and diagnostics.
    pub fn forward_one(&self, store: &ParamStore, o: &[f64], h: &[f64]) -> Result<LatentDistribution> {
        let mut tape = Tape::new(store);
        let mut row = o.to_vec();
        row.extend_from_slice(h);
        let len = row.len();
        let input = tape.leaf(Tensor::matrix(1, len, row)?);
        let (mu, sigma) = self.forward(&mut tape, input)?;
        Ok(LatentDistribution {
            mu: tape.value(mu).data().to_vec(),
            sigma: tape.value(sigma).data().to_vec(),
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
    fn sigma_strictly_positive_even_for_extreme_inputs() {
        let mut store = ParamStore::new();
        let mut rng = rng_for(0, "latent-test", 0);
        let net = LatentNet::init(&mut store, dims(), &mut rng).unwrap();
        for scale in [0.0, 1.0, 50.0, -50.0] {
            let o = vec![scale; 11];
            let h = vec![-scale; 8];
            let d = net.forward_one(&store, &o, &h).unwrap();
            assert_eq!(d.mu.len(), 3);
            assert!(d.sigma.iter().all(|&s| s >= SIGMA_FLOOR), "sigma {:?}", d.sigma);
        }
    }

    #[test]
    fn batched_rows_match_single_forward_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = rng_for(1, "latent-test", 1);
        let net = LatentNet::init(&mut store, dims(), &mut rng).unwrap();
        use rand::Rng;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
            .map(|_| {
                (
                    (0..11).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let mut tape = Tape::new(&store);
        let flat: Vec<f64> = rows
            .iter()
            .flat_map(|(o, h)| o.iter().chain(h.iter()).cloned().collect::<Vec<_>>())
            .collect();
        let input = tape.leaf(Tensor::matrix(5, 19, flat).unwrap());
        let (mu, sigma) = net.forward(&mut tape, input).unwrap();
        for (r, (o, h)) in rows.iter().enumerate() {
            let one = net.forward_one(&store, o, h).unwrap();
            assert_eq!(tape.value(mu).row(r), &one.mu[..], "mu row {r}");
            assert_eq!(tape.value(sigma).row(r), &one.sigma[..], "sigma row {r}");
        }
    }
}
