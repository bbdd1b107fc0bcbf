//! The entity LSTM cell and bidirectional encoder, built as tape
//! subgraphs.
//!
//! The default `Literal` gate form keeps the published cell exactly as
//! written: the input gate reads (h_{t-1}, c_{t-1}) but not the input
//! vector, and the forget gate is coupled as 1 - i_t:
//!
//!   i_t = sigmoid(W_ih h_{t-1} + W_ic c_{t-1} + b_i)
//!   c_t = (1 - i_t) * c_{t-1} + i_t * tanh(W_cx x_t + W_ch h_{t-1} + b_c)
//!   o_t = sigmoid(W_ox x_t + W_oh h_{t-1} + W_oc c_t + b_o)
//!   h_t = o_t * tanh(c_t)
//!
//! `Standard` additionally feeds x_t into the input gate (an extra W_ix
//! term), which is the conventional reading of that gate; the coupled
//! forget gate is kept in both modes.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    Literal,
    Standard,
}

impl GateMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GateMode::Literal => "literal",
            GateMode::Standard => "standard",
        }
    }
}

impl FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(GateMode::Literal),
            "standard" => Ok(GateMode::Standard),
            other => Err(Error::InvalidArgument(format!(
                "unknown lstm gate mode {other:?} (expected literal or standard)"
            ))),
        }
    }
}

/// Shape and naming scheme for one LSTM direction. Parameter names are
/// `<prefix>.<weight>`.
#[derive(Debug, Clone)]
pub struct LstmSpec {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub mode: GateMode,
}

impl LstmSpec {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, mode: GateMode) -> Self {
        LstmSpec {
            prefix: prefix.to_string(),
            input_dim,
            hidden,
            mode,
        }
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let d = self.input_dim;
        let mut shapes = vec![
            (self.name("w_ih"), vec![h, h]),
            (self.name("w_ic"), vec![h, h]),
            (self.name("w_cx"), vec![h, d]),
            (self.name("w_ch"), vec![h, h]),
            (self.name("w_ox"), vec![h, d]),
            (self.name("w_oh"), vec![h, h]),
            (self.name("w_oc"), vec![h, h]),
        ];
        if self.mode == GateMode::Standard {
            shapes.push((self.name("w_ix"), vec![h, d]));
        }
        shapes
    }

    pub fn bias_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        vec![
            (self.name("b_i"), vec![h]),
            (self.name("b_c"), vec![h]),
            (self.name("b_o"), vec![h]),
        ]
    }

    /// One step of the cell; returns (h_t, c_t).
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &BTreeMap<String, NodeId>,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        consts: &CellConsts,
    ) -> Result<(NodeId, NodeId)> {
        let p = |name: &str| -> Result<NodeId> {
            params
                .get(&self.name(name))
                .copied()
                .ok_or_else(|| Error::UnknownParameter(self.name(name)))
        };

        // input gate
        let mut i_pre = tape.affine(p("w_ih")?, h_prev, Some(p("b_i")?))?;
        let ic = tape.affine(p("w_ic")?, c_prev, None)?;
        i_pre = tape.add(i_pre, ic)?;
        if self.mode == GateMode::Standard {
            let ix = tape.affine(p("w_ix")?, x, None)?;
            i_pre = tape.add(i_pre, ix)?;
        }
        let i = tape.sigmoid(i_pre);

        // candidate and coupled write
        let mut cand_pre = tape.affine(p("w_cx")?, x, Some(p("b_c")?))?;
        let ch = tape.affine(p("w_ch")?, h_prev, None)?;
        cand_pre = tape.add(cand_pre, ch)?;
        let cand = tape.tanh(cand_pre);

        let neg_i = tape.mul(i, consts.neg_ones)?;
        let one_minus_i = tape.add(consts.ones, neg_i)?;
        let keep = tape.mul(one_minus_i, c_prev)?;
        let write = tape.mul(i, cand)?;
        let c = tape.add(keep, write)?;

        // output gate
        let mut o_pre = tape.affine(p("w_ox")?, x, Some(p("b_o")?))?;
        let oh = tape.affine(p("w_oh")?, h_prev, None)?;
        o_pre = tape.add(o_pre, oh)?;
        let oc = tape.affine(p("w_oc")?, c, None)?;
        o_pre = tape.add(o_pre, oc)?;
        let o = tape.sigmoid(o_pre);

        let c_tanh = tape.tanh(c);
        let h = tape.mul(o, c_tanh)?;
        Ok((h, c))
    }

    /// Run over a sequence from zero initial state. `reverse` scans right to
    /// left; either way the returned hidden states are in input order.
    pub fn run(
        &self,
        tape: &mut Tape,
        params: &BTreeMap<String, NodeId>,
        inputs: &[NodeId],
        reverse: bool,
        consts: &CellConsts,
    ) -> Result<Vec<NodeId>> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("lstm over empty sequence".into()));
        }
        let zero = tape.constant(Tensor::zeros(vec![self.hidden]));
        let mut h = zero;
        let mut c = zero;
        let mut out = Vec::with_capacity(inputs.len());
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for &t in &order {
            let (nh, nc) = self.step(tape, params, inputs[t], h, c, consts)?;
            h = nh;
            c = nc;
            out.push(h);
        }
        if reverse {
            out.reverse();
        }
        Ok(out)
    }
}

/// Shared per-tape constants for the coupled gate's 1 - i term.
#[derive(Debug, Clone, Copy)]
pub struct CellConsts {
    ones: NodeId,
    neg_ones: NodeId,
}

impl CellConsts {
    pub fn new(tape: &mut Tape, hidden: usize) -> Self {
        CellConsts {
            ones: tape.constant(Tensor::vector(vec![1.0; hidden])),
            neg_ones: tape.constant(Tensor::vector(vec![-1.0; hidden])),
        }
    }
}

/// Bidirectional encoder: concatenates forward and backward hidden states
/// per position into 2H-wide context vectors.
#[derive(Debug, Clone)]
pub struct BiLstmSpec {
    pub fwd: LstmSpec,
    pub bwd: LstmSpec,
}

impl BiLstmSpec {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, mode: GateMode) -> Self {
        BiLstmSpec {
            fwd: LstmSpec::new(&format!("{prefix}_fwd"), input_dim, hidden, mode),
            bwd: LstmSpec::new(&format!("{prefix}_bwd"), input_dim, hidden, mode),
        }
    }

    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = self.fwd.weight_shapes();
        shapes.extend(self.bwd.weight_shapes());
        shapes
    }

    pub fn bias_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = self.fwd.bias_shapes();
        shapes.extend(self.bwd.bias_shapes());
        shapes
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &BTreeMap<String, NodeId>,
        inputs: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let consts = CellConsts::new(tape, self.fwd.hidden);
        let fwd = self.fwd.run(tape, params, inputs, false, &consts)?;
        let bwd = self.bwd.run(tape, params, inputs, true, &consts)?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat(&[f, b]))
            .collect()
    }

    /// Final states of each direction concatenated: [fwd h_T; bwd h_1].
    /// This is the character-encoder readout.
    pub fn encode_final(
        &self,
        tape: &mut Tape,
        params: &BTreeMap<String, NodeId>,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let consts = CellConsts::new(tape, self.fwd.hidden);
        let fwd = self.fwd.run(tape, params, inputs, false, &consts)?;
        let bwd = self.bwd.run(tape, params, inputs, true, &consts)?;
        tape.concat(&[*fwd.last().unwrap(), bwd[0]])
    }
}

/// Value-level single step, for analytic checks and parity tests: builds a
/// throwaway tape around `step`.
pub fn lstm_step_values(
    spec: &LstmSpec,
    store: &crate::params::ParameterStore,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let mut nodes = BTreeMap::new();
    for (name, _) in spec.weight_shapes().iter().chain(spec.bias_shapes().iter()) {
        nodes.insert(name.clone(), tape.parameter(name, store.get(name)?.clone()));
    }
    let xn = tape.constant(x.clone());
    let hn = tape.constant(h_prev.clone());
    let cn = tape.constant(c_prev.clone());
    let consts = CellConsts::new(&mut tape, spec.hidden);
    let (h, c) = spec.step(&mut tape, &nodes, xn, hn, cn, &consts)?;
    Ok((tape.value(h).clone(), tape.value(c).clone()))
}
