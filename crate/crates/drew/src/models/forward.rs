//! Forward passes for all architectures, on a shared delay buffer.
//!
//! Layer `l` of the rewired models aggregates, for each scheduled hop `k`,
//! the state the schedule points at (`l - tau(k)`), so every forward keeps
//! the full history of node states on the tape. Snapshots double as the
//! per-layer states the sensitivity analysis differentiates.

use super::context::HopContext;
use super::params::{Binding, LayerLayout, LayerSlots, MlpSlots, ModelParams};
use super::{Arch, ModelError};
use crate::schedule::DelayBuffer;
use crate::tensor::{Shape, SparseRef, TRef, Tape, TensorError};
use std::sync::Arc;

/// Node embeddings after the last layer.
pub fn forward_embeddings(
    tape: &mut Tape,
    params: &ModelParams,
    binding: &mut Binding,
    ctx: &HopContext,
    x: TRef,
    training: bool,
) -> Result<TRef, ModelError> {
    let snaps = forward_with_snapshots(tape, params, binding, ctx, x, training)?;
    Ok(*snaps.last().expect("at least the initial state"))
}

/// All per-layer node states `h^(0) ..= h^(L)`, where `h^(0)` is the
/// projected input.
pub fn forward_with_snapshots(
    tape: &mut Tape,
    params: &ModelParams,
    binding: &mut Binding,
    ctx: &HopContext,
    x: TRef,
    training: bool,
) -> Result<Vec<TRef>, ModelError> {
    let cfg = params.config();
    if ctx.k_cap() != params.k_cap() {
        return Err(ModelError::Config(format!(
            "context k_cap {} does not match parameters built for {}",
            ctx.k_cap(),
            params.k_cap()
        )));
    }
    if ctx.schedule().layer_count() != cfg.layers {
        return Err(ModelError::Config(format!(
            "context schedules {} layers, config has {}",
            ctx.schedule().layer_count(),
            cfg.layers
        )));
    }
    let xs = tape.shape(x);
    if xs.ndim() != 2 || xs.rows() != ctx.total_nodes() || xs.cols() != cfg.in_dim {
        return Err(ModelError::Tensor(TensorError::Validation(format!(
            "features must be {}x{}, got {xs}",
            ctx.total_nodes(),
            cfg.in_dim
        ))));
    }

    let layout = params.layout();
    let h0 = match layout.in_proj {
        Some((w, b)) => {
            let projected = tape.matmul(x, binding.refs[w])?;
            tape.add_bias(projected, binding.refs[b])?
        }
        None => x,
    };
    let mut buf = DelayBuffer::new(tape, h0);

    // register each hop matrix once per tape; gated layers aggregate
    // through explicit edge lists instead
    let sparse: Vec<SparseRef> = match cfg.arch {
        Arch::Gcn | Arch::DrewGcn | Arch::SpGcn => (1..=ctx.k_cap())
            .map(|k| tape.register_sparse(Arc::clone(ctx.gamma(k))))
            .collect(),
        Arch::DrewGin => (1..=ctx.k_cap())
            .map(|k| tape.register_sparse(Arc::clone(ctx.incidence(k))))
            .collect(),
        Arch::DrewGatedGcn => Vec::new(),
    };

    for (l, layer) in layout.layers.iter().enumerate() {
        let h_cur = buf.last();
        let update = match &layer.slots {
            LayerSlots::Gcn { w } => {
                let agg = tape.spmm(sparse[0], h_cur)?;
                let mixed = tape.matmul(agg, binding.refs[*w])?;
                residual_relu(tape, cfg.linear_probe, h_cur, mixed)?
            }
            LayerSlots::DrewGcn { hop_w } => {
                let mut terms = Vec::with_capacity(ctx.schedule().layer(l).len());
                for e in ctx.schedule().layer(l) {
                    let h_src = buf.get(e.source)?;
                    let agg = tape.spmm(sparse[e.hop - 1], h_src)?;
                    terms.push(tape.matmul(agg, binding.refs[hop_w[e.hop - 1]])?);
                }
                let summed = tape.sum_n(&terms)?;
                residual_relu(tape, cfg.linear_probe, h_cur, summed)?
            }
            LayerSlots::DrewGin { self_mlp, hop_mlps } => {
                let self_out = apply_mlp(tape, binding, self_mlp, h_cur)?;
                let mut terms = vec![tape.scalar_mul(self_out, 1.0 + cfg.gin_eps)];
                for e in ctx.schedule().layer(l) {
                    let h_src = buf.get(e.source)?;
                    let transformed = apply_mlp(tape, binding, &hop_mlps[e.hop - 1], h_src)?;
                    terms.push(tape.spmm(sparse[e.hop - 1], transformed)?);
                }
                tape.sum_n(&terms)?
            }
            LayerSlots::Gated { w1, w2, w3, w4 } => {
                let gate_self = tape.matmul(h_cur, binding.refs[*w3])?;
                let self_term = tape.matmul(h_cur, binding.refs[*w1])?;
                let mut terms = vec![self_term];
                for e in ctx.schedule().layer(l) {
                    let h_src = buf.get(e.source)?;
                    let gate_src = tape.matmul(h_src, binding.refs[*w4])?;
                    let msg_src = tape.matmul(h_src, binding.refs[*w2])?;
                    terms.push(gated_hop(
                        tape,
                        ctx,
                        e.hop,
                        gate_self,
                        gate_src,
                        msg_src,
                        cfg.gate_eps,
                    )?);
                }
                tape.sum_n(&terms)?
            }
            LayerSlots::SpGcn { w, alpha_raw } => {
                let alpha = simplex_weights(tape, binding.refs[*alpha_raw], ctx.k_cap())?;
                let mut terms = Vec::with_capacity(ctx.k_cap());
                for k in 1..=ctx.k_cap() {
                    let agg = tape.spmm(sparse[k - 1], h_cur)?;
                    let mixed = tape.matmul(agg, binding.refs[*w])?;
                    terms.push(tape.scale(mixed, alpha[k - 1])?);
                }
                let summed = tape.sum_n(&terms)?;
                residual_relu(tape, cfg.linear_probe, h_cur, summed)?
            }
        };
        let update = maybe_bn(tape, binding, layer, update, training)?;
        buf.push(tape, update)?;
    }

    Ok(buf.states().to_vec())
}

/// `h + relu(update)`, or the bare update in probe mode.
fn residual_relu(
    tape: &mut Tape,
    probe: bool,
    h: TRef,
    update: TRef,
) -> Result<TRef, ModelError> {
    if probe {
        return Ok(update);
    }
    let activated = tape.relu(update);
    Ok(tape.add(h, activated)?)
}

fn maybe_bn(
    tape: &mut Tape,
    binding: &mut Binding,
    layer: &LayerLayout,
    h: TRef,
    training: bool,
) -> Result<TRef, ModelError> {
    match layer.bn {
        Some((gamma, beta, stats_idx)) => Ok(tape.batch_norm(
            h,
            binding.refs[gamma],
            binding.refs[beta],
            &mut binding.bn_stats[stats_idx],
            training,
            0.1,
            1e-5,
        )?),
        None => Ok(h),
    }
}

fn apply_mlp(
    tape: &mut Tape,
    binding: &Binding,
    slots: &MlpSlots,
    h: TRef,
) -> Result<TRef, ModelError> {
    let z1 = tape.matmul(h, binding.refs[slots.l1w])?;
    let z1 = tape.add_bias(z1, binding.refs[slots.l1b])?;
    let a1 = tape.relu(z1);
    let z2 = tape.matmul(a1, binding.refs[slots.l2w])?;
    Ok(tape.add_bias(z2, binding.refs[slots.l2b])?)
}

/// One gated hop aggregation: per-edge sigmoid gates normalized over each
/// node's hop-`k` shell, applied to the transformed source states.
fn gated_hop(
    tape: &mut Tape,
    ctx: &HopContext,
    k: usize,
    gate_self: TRef,
    gate_src: TRef,
    msg_src: TRef,
    gate_eps: f64,
) -> Result<TRef, ModelError> {
    let n = ctx.total_nodes();
    let edges = ctx.hop_edges(k);
    let gi = tape.gather_rows(gate_self, Arc::clone(&edges.i))?;
    let gj = tape.gather_rows(gate_src, Arc::clone(&edges.j))?;
    let pre = tape.add(gi, gj)?;
    let gate_raw = tape.sigmoid(pre);
    let denom_rows = tape.scatter_add_rows(gate_raw, Arc::clone(&edges.i), n)?;
    let denom_rows = tape.add_scalar(denom_rows, gate_eps);
    let denom = tape.gather_rows(denom_rows, Arc::clone(&edges.i))?;
    let gate = tape.div(gate_raw, denom)?;
    let messages = tape.gather_rows(msg_src, Arc::clone(&edges.j))?;
    let weighted = tape.mul(gate, messages)?;
    Ok(tape.scatter_add_rows(weighted, Arc::clone(&edges.i), n)?)
}

/// Hop weights constrained to the simplex: softplus of the raw vector,
/// divided by its total. Returns one single-element tensor per hop.
fn simplex_weights(
    tape: &mut Tape,
    alpha_raw: TRef,
    k_cap: usize,
) -> Result<Vec<TRef>, ModelError> {
    let positive = tape.softplus(alpha_raw);
    let total = tape.sum_all(positive);
    let column = tape.reshape(positive, Shape::matrix(k_cap, 1))?;
    let mut weights = Vec::with_capacity(k_cap);
    for k in 0..k_cap {
        let picked = tape.gather_rows(column, Arc::new(vec![k as u32]))?;
        let flat = tape.reshape(picked, Shape::scalar())?;
        weights.push(tape.div(flat, total)?);
    }
    Ok(weights)
}

/// Final linear map applied to the selected rows of the embeddings.
/// For a disjoint-union batch, pass one row index per instance.
pub fn readout_node(
    tape: &mut Tape,
    params: &ModelParams,
    binding: &Binding,
    embeddings: TRef,
    rows: &[u32],
) -> Result<TRef, ModelError> {
    let (w, b) = params
        .layout()
        .head
        .ok_or_else(|| ModelError::Config("probe models have no readout head".into()))?;
    let picked = tape.gather_rows(embeddings, Arc::new(rows.to_vec()))?;
    let logits = tape.matmul(picked, binding.refs[w])?;
    Ok(tape.add_bias(logits, binding.refs[b])?)
}

/// Mean-pooled readout over all rows.
pub fn readout_mean(
    tape: &mut Tape,
    params: &ModelParams,
    binding: &Binding,
    embeddings: TRef,
) -> Result<TRef, ModelError> {
    let (w, b) = params
        .layout()
        .head
        .ok_or_else(|| ModelError::Config("probe models have no readout head".into()))?;
    let pooled = tape.mean_axis(embeddings, 0)?;
    let d = tape.shape(embeddings).cols();
    let row = tape.reshape(pooled, Shape::matrix(1, d))?;
    let logits = tape.matmul(row, binding.refs[w])?;
    Ok(tape.add_bias(logits, binding.refs[b])?)
}
