//! Shared-parameter recurrent policy with an optional per-agent layer.
//!
//! Pipeline: obs → 2-layer MLP → GRU → (decoded per-agent layer) →
//! action head → masked logits. The GRU state is returned *before* the
//! per-agent layer, so recurrence itself stays shared and a checkpoint
//! transfers unchanged across team sizes.

use rand_chacha::ChaCha8Rng;

use super::{NetDims, PolicyOutput};
use crate::autodiff::{gru_step, linear, GruParams, LinearParams, NodeId, ParamStore, Tape, Tensor};
use crate::autodiff::WeightInit;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ActorNet {
    fc1: LinearParams,
    fc2: LinearParams,
    gru: GruParams,
    head: LinearParams,
    pub hidden: usize,
}

impl ActorNet {
    /// `with_hete` only controls whether decoders exist elsewhere; the
    /// trunk is identical either way.
    pub fn init(
        store: &mut ParamStore,
        dims: NetDims,
        _with_hete: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(ActorNet {
            fc1: LinearParams::init(store, "actor.fc1", dims.hidden, dims.obs, WeightInit::FanInUniform, rng)?,
            fc2: LinearParams::init(store, "actor.fc2", dims.hidden, dims.hidden, WeightInit::FanInUniform, rng)?,
            gru: GruParams::init(store, "actor.gru", dims.hidden, dims.hidden, rng)?,
            head: LinearParams::init(store, "actor.head", dims.actions, dims.hidden, WeightInit::FanInUniform, rng)?,
            hidden: dims.hidden,
        })
    }

    /// Batched forward. `o` is `(B, obs)`, `h_prev` `(B, hidden)`,
    /// `hete` optionally carries `(w_flat (B, hidden²), b (B, hidden))`
    /// rows decoded from each agent's latent, and `mask` is a
    /// `(B, actions)` additive penalty matrix (0 = valid).
    ///
    /// Returns `(masked logits (B, actions), h_next (B, hidden))`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        o: NodeId,
        h_prev: NodeId,
        hete: Option<(NodeId, NodeId)>,
        mask: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let x = linear(tape, &self.fc1, o)?;
        let x = tape.relu(x);
        let x = linear(tape, &self.fc2, x)?;
        let x = tape.relu(x);
        let h_next = gru_step(tape, &self.gru, x, h_prev)?;
        let feat = match hete {
            Some((w_flat, b)) => {
                let wx = tape.row_matvec(w_flat, h_next, self.hidden, self.hidden)?;
                tape.add(wx, b)?
            }
            None => h_next,
        };
        let logits = linear(tape, &self.head, feat)?;
        let masked = tape.add(logits, mask)?;
        Ok((masked, h_next))
    }

    /// Single-agent forward with concrete inputs; used by tests.
    pub fn forward_one(
        &self,
        store: &ParamStore,
        o: &[f64],
        h_prev: &[f64],
        hete_rows: Option<(&[f64], &[f64])>,
        mask: &[bool],
    ) -> Result<PolicyOutput> {
        let mut tape = Tape::new(store);
        let on = tape.leaf(Tensor::matrix(1, o.len(), o.to_vec())?);
        let hn = tape.leaf(Tensor::matrix(1, h_prev.len(), h_prev.to_vec())?);
        let hete = match hete_rows {
            Some((w, b)) => Some((
                tape.leaf(Tensor::matrix(1, w.len(), w.to_vec())?),
                tape.leaf(Tensor::matrix(1, b.len(), b.to_vec())?),
            )),
            None => None,
        };
        let mk = super::mask_rows(&[mask.to_vec()], mask.len())?;
        let mask_node = tape.leaf(mk);
        let (logits, h_next) = self.forward(&mut tape, on, hn, hete, mask_node)?;
        Ok(PolicyOutput {
            logits: tape.value(logits).data().to_vec(),
            h_next: tape.value(h_next).data().to_vec(),
        })
    }
}
