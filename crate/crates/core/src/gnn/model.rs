use rayon::prelude::*;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::system::{unstack_complex, BeamformingSolution, ChannelSample};

use super::params::{GnnHyperparams, GnnParameters, Linear, ParamVars};
use super::topology::GraphBatch;

/// Guard inside the per-AP norm so an all-zero output stays differentiable.
pub const NORM_EPS: f64 = 1e-12;

/// Samples per independent forward pass in [`predict`].
const PREDICT_CHUNK: usize = 64;

fn linear<T: Real>(tape: &mut Tape<T>, x: Var, lin: Linear) -> Result<Var> {
    let y = tape.matmul(x, lin.weight)?;
    tape.add(y, lin.bias)
}

/// Edge update `leaky(W [v_ap; v_other; e] + b)` with the concatenation
/// expressed as three partial products so vertex terms are computed once per
/// vertex rather than once per edge.
///
/// `ap` is `[B, M, H]`; `other` is `[B, U, H]` for user edges (broadcast over
/// APs) or `[B, H]` for target edges; `edge` is `[B, M, (U,) F]`.
fn edge_update<T: Real>(
    tape: &mut Tape<T>,
    lin: Linear,
    ap: Var,
    other: Var,
    edge: Var,
    slope: f64,
) -> Result<Var> {
    let h = tape.shape(ap)[2];
    let f = *tape.shape(edge).last().unwrap();
    let m = tape.shape(ap)[1];
    let w_ap = tape.slice(lin.weight, 0, 0, h)?;
    let w_other = tape.slice(lin.weight, 0, h, h)?;
    let w_edge = tape.slice(lin.weight, 0, 2 * h, f)?;
    let from_ap = tape.matmul(ap, w_ap)?;
    let from_other = tape.matmul(other, w_other)?;
    let from_edge = tape.matmul(edge, w_edge)?;
    let per_user = tape.shape(edge).len() == 4;
    let (from_ap, from_other) = if per_user {
        let u = tape.shape(edge)[2];
        (
            tape.broadcast_axis(from_ap, 2, u)?,
            tape.broadcast_axis(from_other, 1, m)?,
        )
    } else {
        (from_ap, tape.broadcast_axis(from_other, 1, m)?)
    };
    let z = tape.add(from_edge, from_ap)?;
    let z = tape.add(z, from_other)?;
    let z = tape.add(z, lin.bias)?;
    Ok(tape.leaky_relu(z, slope))
}

/// Runs the message-passing network and returns raw per-edge outputs as
/// `[B, M, U + 1, 2 N_t]`, user streams first, then the sensing stream.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    hyper: &GnnHyperparams,
    batch: &GraphBatch<T>,
) -> Result<Var> {
    if batch.tx_antennas != hyper.tx_antennas {
        return Err(Error::DimensionMismatch(format!(
            "batch has N_t={}, network expects N_t={}",
            batch.tx_antennas, hyper.tx_antennas
        )));
    }
    if vars.layers.len() != hyper.depth {
        return Err(Error::Shape(format!(
            "{} registered layers for depth {}",
            vars.layers.len(),
            hyper.depth
        )));
    }
    let b = batch.len();
    let (m, u) = (batch.topology.ap_count, batch.topology.ue_count);
    let h = hyper.hidden;
    let init_ue = tape.constant(batch.ue_edges.clone());
    let init_st = tape.constant(batch.st_edges.clone());
    let mut v_ap = tape.constant(Tensor::zeros(&[b, m, h]));
    let mut v_ue = tape.constant(Tensor::zeros(&[b, u, h]));
    let mut v_st = tape.constant(Tensor::zeros(&[b, h]));
    let (mut e_ue, mut e_st) = (init_ue, init_st);

    for layer in &vars.layers {
        let agg = tape.sum_axis(e_ue, 2)?;
        let x = tape.concat(&[agg, v_ap], 2)?;
        let from_ue = linear(tape, x, layer.ue_to_ap)?;
        let x = tape.concat(&[e_st, v_ap], 2)?;
        let from_st = linear(tape, x, layer.st_to_ap)?;
        let next_ap = tape.add(from_ue, from_st)?;

        let agg = tape.sum_axis(e_ue, 1)?;
        let x = tape.concat(&[agg, v_ue], 2)?;
        let next_ue = linear(tape, x, layer.ue_to_ue)?;

        let agg = tape.sum_axis(e_st, 1)?;
        let x = tape.concat(&[agg, v_st], 1)?;
        let next_st = linear(tape, x, layer.st_to_st)?;

        (v_ap, v_ue, v_st) = (next_ap, next_ue, next_st);

        let act = edge_update(tape, layer.edge_ue, v_ap, v_ue, e_ue, hyper.slope)?;
        e_ue = tape.concat(&[act, init_ue], 3)?;
        let act = edge_update(tape, layer.edge_st, v_ap, v_st, e_st, hyper.slope)?;
        e_st = tape.concat(&[act, init_st], 2)?;
    }

    let io = hyper.io_width();
    let out_ue = linear(tape, e_ue, vars.head_ue)?;
    let out_st = linear(tape, e_st, vars.head_st)?;
    let out_st = tape.reshape(out_st, &[b, m, 1, io])?;
    tape.concat(&[out_ue, out_st], 2)
}

/// Scales raw outputs so every AP spends exactly `ap_power`.
pub fn normalize_on_tape<T: Real>(tape: &mut Tape<T>, raw: Var, ap_power: f64) -> Result<Var> {
    let shape = tape.shape(raw).to_vec();
    if shape.len() != 4 {
        return Err(Error::Shape(format!(
            "raw outputs must be [B, M, S, 2N_t], got {shape:?}"
        )));
    }
    let sq = tape.square(raw);
    let per_stream = tape.sum_axis(sq, 3)?;
    let per_ap = tape.sum_axis(per_stream, 2)?;
    let eps = tape.constant(Tensor::scalar(T::from_f64(NORM_EPS)));
    let guarded = tape.add(per_ap, eps)?;
    let norm = tape.sqrt(guarded)?;
    let norm = tape.broadcast_axis(norm, 2, shape[2])?;
    let norm = tape.broadcast_axis(norm, 3, shape[3])?;
    let unit = tape.div(raw, norm)?;
    Ok(tape.scalar_mul(unit, ap_power.sqrt()))
}

/// Converts raw `[B, M, S, 2 N_t]` outputs into feasible beams, computing
/// the normalization in the precision of `raw`.
pub fn normalize_to_beams<T: Real>(
    raw: &Tensor<T>,
    ap_power: f64,
) -> Result<Vec<BeamformingSolution>> {
    let shape = raw.shape();
    if shape.len() != 4 || !shape[3].is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "raw outputs must be [B, M, S, 2N_t], got {shape:?}"
        )));
    }
    let (b, m, s, io) = (shape[0], shape[1], shape[2], shape[3]);
    let scale = T::from_f64(ap_power.sqrt());
    let eps = T::from_f64(NORM_EPS);
    let per_ap = s * io;
    let mut out = Vec::with_capacity(b);
    for block in raw.data().chunks(m * per_ap) {
        let mut beams = Vec::with_capacity(m * s * io / 2);
        for ap in block.chunks(per_ap) {
            let energy: T = ap.iter().map(|x| *x * *x).sum();
            let k = scale / (energy + eps).sqrt();
            for stream in ap.chunks(io) {
                let scaled: Vec<f64> = stream.iter().map(|x| (*x * k).to_f64()).collect();
                beams.extend(unstack_complex(&scaled)?);
            }
        }
        out.push(BeamformingSolution::from_flat(m, s, io / 2, beams)?);
    }
    Ok(out)
}

/// Checks that a scenario can be served by a network with these hyperparameters.
pub fn check_compatible(config: &SystemConfig, hyper: &GnnHyperparams) -> Result<()> {
    config.validate()?;
    if config.sensing_streams != 1 {
        return Err(Error::config(
            "Q",
            "the graph network serves exactly one sensing stream",
        ));
    }
    if config.tx_antennas != hyper.tx_antennas {
        return Err(Error::config(
            "N_t",
            format!(
                "network was built for N_t={}, configuration has N_t={}",
                hyper.tx_antennas, config.tx_antennas
            ),
        ));
    }
    Ok(())
}

/// Raw outputs of a forward pass without gradient bookkeeping beyond the
/// tape itself.
pub fn raw_outputs<T: Real>(
    params: &GnnParameters<T>,
    samples: &[&ChannelSample],
) -> Result<Tensor<T>> {
    let batch = GraphBatch::new(samples, params.hyper().tx_antennas)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let raw = forward(&mut tape, &vars, params.hyper(), &batch)?;
    Ok(tape.value(raw).clone())
}

/// Beams for every sample. Forward passes run in the parameters' precision;
/// normalization runs in 64-bit so power is exact to double rounding.
pub fn predict<T: Real>(
    params: &GnnParameters<T>,
    config: &SystemConfig,
    samples: &[ChannelSample],
) -> Result<Vec<BeamformingSolution>> {
    check_compatible(config, params.hyper())?;
    for s in samples {
        s.check_dims(config)?;
    }
    let chunks: Vec<Vec<BeamformingSolution>> = samples
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let refs: Vec<&ChannelSample> = chunk.iter().collect();
            let raw = raw_outputs(params, &refs)?;
            normalize_to_beams(&raw.cast::<f64>(), config.ap_power)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}
