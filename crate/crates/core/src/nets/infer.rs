//! Centralized scorer of the team's latent distributions.
//!
//! Takes the global state concatenated with every agent's `(mu, sigma)`
//! and regresses the team return. During the latent update its
//! parameters are frozen (constants on the tape) so that only the
//! encoder moves; its own regression loss is the sole thing that trains
//! it.

use rand_chacha::ChaCha8Rng;

use super::NetDims;
use crate::autodiff::{linear, linear_frozen, LinearParams, NodeId, ParamStore, Tape};
use crate::autodiff::WeightInit;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct InferenceNet {
    fc1: LinearParams,
    fc2: LinearParams,
    head: LinearParams,
    pub input_dim: usize,
}

impl InferenceNet {
    pub fn init(store: &mut ParamStore, dims: NetDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let input = dims.og + 2 * dims.latent * dims.n_agents;
        Ok(InferenceNet {
            fc1: LinearParams::init(store, "infer.fc1", dims.hidden, input, WeightInit::FanInUniform, rng)?,
            fc2: LinearParams::init(store, "infer.fc2", dims.hidden, dims.hidden, WeightInit::FanInUniform, rng)?,
            head: LinearParams::init(store, "infer.head", 1, dims.hidden, WeightInit::FanInUniform, rng)?,
            input_dim: input,
        })
    }

    /// Score one input vector (or a batch of rows). With `frozen` the
    /// parameters contribute no gradients — the caller is optimizing the
    /// distributions feeding in, not this net.
    pub fn forward(&self, tape: &mut Tape, input: NodeId, frozen: bool) -> Result<NodeId> {
        let lin = |tape: &mut Tape, p: &LinearParams, x: NodeId| -> Result<NodeId> {
            if frozen {
                linear_frozen(tape, p, x)
            } else {
                linear(tape, p, x)
            }
        };
        let x = lin(tape, &self.fc1, input)?;
        let x = tape.relu(x);
        let x = lin(tape, &self.fc2, x)?;
        let x = tape.relu(x);
        let v = lin(tape, &self.head, x)?;
        Ok(tape.flatten(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::rng::rng_for;

    #[test]
    fn frozen_forward_produces_no_parameter_gradients() {
        let dims = NetDims { obs: 11, og: 20, hidden: 8, latent: 3, actions: 6, n_agents: 2 };
        let mut store = ParamStore::new();
        let mut rng = rng_for(0, "infer-test", 0);
        let net = InferenceNet::init(&mut store, dims, &mut rng).unwrap();
        assert_eq!(net.input_dim, 20 + 12);

        let mut tape = Tape::new(&store);
        let input = tape.leaf(Tensor::vector(vec![0.25; 32]));
        let v = net.forward(&mut tape, input, true).unwrap();
        let loss = tape.mean(v).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.param_grads().is_empty(), "frozen forward leaked gradients");

        let mut tape = Tape::new(&store);
        let input = tape.leaf(Tensor::vector(vec![0.25; 32]));
        let v = net.forward(&mut tape, input, false).unwrap();
        let loss = tape.mean(v).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(!grads.param_grads().is_empty());
    }
}
