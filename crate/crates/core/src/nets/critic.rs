//! Centralized recurrent value function over the global state.

use rand_chacha::ChaCha8Rng;

use super::NetDims;
use crate::autodiff::{gru_step, linear, GruParams, LinearParams, NodeId, ParamStore, Tape};
use crate::autodiff::WeightInit;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CriticNet {
    fc1: LinearParams,
    fc2: LinearParams,
    gru: GruParams,
    head: LinearParams,
}

impl CriticNet {
    pub fn init(store: &mut ParamStore, dims: NetDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(CriticNet {
            fc1: LinearParams::init(store, "critic.fc1", dims.hidden, dims.og, WeightInit::FanInUniform, rng)?,
            fc2: LinearParams::init(store, "critic.fc2", dims.hidden, dims.hidden, WeightInit::FanInUniform, rng)?,
            gru: GruParams::init(store, "critic.gru", dims.hidden, dims.hidden, rng)?,
            head: LinearParams::init(store, "critic.head", 1, dims.hidden, WeightInit::FanInUniform, rng)?,
        })
    }

    /// `og` is `(B, og)`, `h_prev` `(B, hidden)`; returns value estimates
    /// `(B,)` and the next hidden state.
    pub fn forward(&self, tape: &mut Tape, og: NodeId, h_prev: NodeId) -> Result<(NodeId, NodeId)> {
        let x = linear(tape, &self.fc1, og)?;
        let x = tape.relu(x);
        let x = linear(tape, &self.fc2, x)?;
        let x = tape.relu(x);
        let h_next = gru_step(tape, &self.gru, x, h_prev)?;
        let v_mat = linear(tape, &self.head, h_next)?;
        let v = tape.flatten(v_mat);
        Ok((v, h_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::rng::rng_for;

    #[test]
    fn produces_one_value_per_row() {
        let dims = NetDims { obs: 11, og: 20, hidden: 8, latent: 3, actions: 6, n_agents: 2 };
        let mut store = ParamStore::new();
        let mut rng = rng_for(0, "critic-test", 0);
        let net = CriticNet::init(&mut store, dims, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let og = tape.leaf(Tensor::matrix(3, 20, vec![0.1; 60]).unwrap());
        let h = tape.leaf(Tensor::zeros(&[3, 8]));
        let (v, h_next) = net.forward(&mut tape, og, h).unwrap();
        assert_eq!(tape.value(v).shape(), &[3]);
        assert_eq!(tape.value(h_next).shape(), &[3, 8]);
        assert!(tape.value(v).all_finite());
    }
}
