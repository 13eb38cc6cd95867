//! Bidirectional LSTM layer built from graph primitives.
//!
//! Standard cell without peepholes: sigmoid input/forget/output gates, tanh
//! candidate and output squashing, zero initial states. The variational
//! dropout masks are applied to the layer input and the previous hidden
//! state, identically at every timestep.

use super::{BiLstmLayerIds, Binder, LstmDirIds, ModelError};
use crate::graph::{Graph, NodeId};
use crate::matrix::Matrix;

fn lstm_direction(
    g: &mut Graph,
    binder: &mut Binder,
    ids: &LstmDirIds,
    inputs: &[NodeId],
    input_mask: &Matrix,
    rec_mask: &Matrix,
    reversed: bool,
) -> Result<Vec<NodeId>, ModelError> {
    let h0 = g.input(Matrix::zeros(1, ids.hidden));
    let c0 = g.input(Matrix::zeros(1, ids.hidden));
    let w: Vec<NodeId> = ids.w.iter().map(|&i| binder.node(g, i)).collect();
    let u: Vec<NodeId> = ids.u.iter().map(|&i| binder.node(g, i)).collect();
    let b: Vec<NodeId> = ids.b.iter().map(|&i| binder.node(g, i)).collect();

    let mut h = h0;
    let mut c = c0;
    let mut states = vec![h0; inputs.len()];
    let order: Vec<usize> = if reversed {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let x = g.apply_mask(inputs[t], input_mask.clone())?;
        let hm = g.apply_mask(h, rec_mask.clone())?;
        let mut gates = Vec::with_capacity(4);
        for gi in 0..4 {
            let xw = g.matmul(x, w[gi])?;
            let hu = g.matmul(hm, u[gi])?;
            let s = g.add(xw, hu)?;
            let pre = g.add(s, b[gi])?;
            gates.push(pre);
        }
        let i_gate = g.sigmoid(gates[0]);
        let f_gate = g.sigmoid(gates[1]);
        let o_gate = g.sigmoid(gates[2]);
        let cand = g.tanh(gates[3]);
        let keep = g.hadamard(f_gate, c)?;
        let write = g.hadamard(i_gate, cand)?;
        c = g.add(keep, write)?;
        let squashed = g.tanh(c);
        h = g.hadamard(o_gate, squashed)?;
        states[t] = h;
    }
    Ok(states)
}

/// Runs one bidirectional layer over per-step input rows; returns per-step
/// rows of the concatenated forward and backward hidden states (1 x 2h).
pub fn bilstm_layer(
    g: &mut Graph,
    binder: &mut Binder,
    layer: &BiLstmLayerIds,
    inputs: &[NodeId],
    masks: &[(Matrix, Matrix); 2],
) -> Result<Vec<NodeId>, ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let fwd = lstm_direction(
        g,
        binder,
        &layer.dirs[0],
        inputs,
        &masks[0].0,
        &masks[0].1,
        false,
    )?;
    let bwd = lstm_direction(
        g,
        binder,
        &layer.dirs[1],
        inputs,
        &masks[1].0,
        &masks[1].1,
        true,
    )?;
    fwd.iter()
        .zip(&bwd)
        .map(|(&f, &b)| Ok(g.concat_cols(f, b)?))
        .collect()
}
