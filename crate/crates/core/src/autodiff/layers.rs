//! Linear and GRU building blocks on top of the tape.
//!
//! A layer struct holds parameter *names*; the values live in the
//! [`ParamStore`], so the same layer definition drives init, forward
//! passes, checkpointing and optimization without duplicating state.

use rand_chacha::ChaCha8Rng;

use super::init::{init_matrix, WeightInit};
use super::store::ParamStore;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct LinearParams {
    pub w: String,
    pub b: String,
}

impl LinearParams {
    /// Register `prefix.w` / `prefix.b` with the given init (bias zero).
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        out: usize,
        inn: usize,
        init: WeightInit,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        store.insert(&w, init_matrix(rng, out, inn, init))?;
        store.insert(&b, Tensor::zeros(&[out]))?;
        Ok(LinearParams { w, b })
    }
}

/// `y = x·Wᵀ + b`. Input may be a vector or a `(B, in)` batch.
pub fn linear(tape: &mut Tape, p: &LinearParams, x: NodeId) -> Result<NodeId> {
    linear_scaled(tape, p, x, 1.0)
}

/// `y = scale·(x·Wᵀ) + b`; the bias is not scaled.
pub fn linear_scaled(tape: &mut Tape, p: &LinearParams, x: NodeId, scale: f64) -> Result<NodeId> {
    let w = tape.param(&p.w)?;
    let b = tape.param(&p.b)?;
    tape.linear(x, w, Some(b), scale)
}

/// Like [`linear`], but the parameters enter as constants: no gradient
/// flows to them.
pub fn linear_frozen(tape: &mut Tape, p: &LinearParams, x: NodeId) -> Result<NodeId> {
    let w = tape.frozen(&p.w)?;
    let b = tape.frozen(&p.b)?;
    tape.linear(x, w, Some(b), 1.0)
}

/// GRU cell parameters: input weights `w_*` (fan-in uniform), recurrent
/// weights `u_*` (orthogonal), biases zero.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub wz: String,
    pub uz: String,
    pub bz: String,
    pub wr: String,
    pub ur: String,
    pub br: String,
    pub wh: String,
    pub uh: String,
    pub bh: String,
}

impl GruParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        input: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mk = |gate: &str, kind: &str| format!("{prefix}.{gate}{kind}");
        let p = GruParams {
            wz: mk("z", ".w"),
            uz: mk("z", ".u"),
            bz: mk("z", ".b"),
            wr: mk("r", ".w"),
            ur: mk("r", ".u"),
            br: mk("r", ".b"),
            wh: mk("h", ".w"),
            uh: mk("h", ".u"),
            bh: mk("h", ".b"),
        };
        for (w, u, b) in [(&p.wz, &p.uz, &p.bz), (&p.wr, &p.ur, &p.br), (&p.wh, &p.uh, &p.bh)] {
            store.insert(w, init_matrix(rng, hidden, input, WeightInit::FanInUniform))?;
            store.insert(u, init_matrix(rng, hidden, hidden, WeightInit::Orthogonal))?;
            store.insert(b, Tensor::zeros(&[hidden]))?;
        }
        Ok(p)
    }
}

/// One GRU step:
///
/// ```text
/// z = σ(x·Wzᵀ + h·Uzᵀ + bz)
/// r = σ(x·Wrᵀ + h·Urᵀ + br)
/// ĥ = tanh(x·Whᵀ + (r⊙h)·Uhᵀ + bh)
/// h' = h + z⊙(ĥ − h)
/// ```
///
/// With all-zero parameters and zero hidden state: z = 0.5, ĥ = 0, so
/// h' = 0.
pub fn gru_step(tape: &mut Tape, p: &GruParams, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
    let gate = |tape: &mut Tape, w: &str, u: &str, b: &str, inp: NodeId| -> Result<NodeId> {
        let wn = tape.param(w)?;
        let bn = tape.param(b)?;
        let un = tape.param(u)?;
        let xw = tape.linear(x, wn, Some(bn), 1.0)?;
        let hu = tape.linear(inp, un, None, 1.0)?;
        tape.add(xw, hu)
    };
    let z_pre = gate(tape, &p.wz, &p.uz, &p.bz, h_prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, &p.wr, &p.ur, &p.br, h_prev)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let h_pre = gate(tape, &p.wh, &p.uh, &p.bh, rh)?;
    let h_cand = tape.tanh(h_pre);
    let delta = tape.sub(h_cand, h_prev)?;
    let zd = tape.mul(z, delta)?;
    tape.add(h_prev, zd)
}
