use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::gnn::{
    check_compatible, forward, normalize_on_tape, GnnParameters, GraphBatch, ParamVars,
};
use crate::system::ChannelSample;

/// Samples per independent tape. Fixed so gradients do not depend on the
/// number of worker threads.
pub const CHUNK: usize = 64;

/// Per-sample objective pieces recorded on a tape, each shaped `[B]`.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub sum_rate: Var,
    pub sensing_snr: Var,
    pub objective: Var,
}

/// `|x^H y|^2` terms from stacked operands of equal shape `[..., 2N]`,
/// summed over the antenna axis `axis`.
fn inner_power<T: Real>(tape: &mut Tape<T>, x: Var, y: Var, axis: usize) -> Result<(Var, Var)> {
    let n = tape.shape(x)[axis] / 2;
    let (xr, xi) = (tape.slice(x, axis, 0, n)?, tape.slice(x, axis, n, n)?);
    let (yr, yi) = (tape.slice(y, axis, 0, n)?, tape.slice(y, axis, n, n)?);
    let rr = tape.mul(xr, yr)?;
    let ii = tape.mul(xi, yi)?;
    let ri = tape.mul(xr, yi)?;
    let ir = tape.mul(xi, yr)?;
    let re = tape.add(rr, ii)?;
    let im = tape.sub(ri, ir)?;
    Ok((tape.sum_axis(re, axis)?, tape.sum_axis(im, axis)?))
}

fn log2_one_plus<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let one = tape.constant(Tensor::scalar(T::ONE));
    let shifted = tape.add(x, one)?;
    let ln = tape.ln(shifted)?;
    Ok(tape.scalar_mul(ln, 1.0 / LN_2))
}

/// Sum rate, sensing SNR and joint objective of normalized beams
/// `[B, M, U + 1, 2 N_t]` for the samples packed in `batch`.
pub fn objective_on_tape<T: Real>(
    tape: &mut Tape<T>,
    beams: Var,
    batch: &GraphBatch<T>,
    config: &SystemConfig,
) -> Result<ObjectiveVars> {
    let shape = tape.shape(beams).to_vec();
    let (b, m, u) = (
        batch.len(),
        batch.topology.ap_count,
        batch.topology.ue_count,
    );
    let s = u + 1;
    if shape != [b, m, s, 2 * batch.tx_antennas] {
        return Err(Error::Shape(format!(
            "beams {shape:?} do not fit a batch of {b} with M={m}, U={u}"
        )));
    }

    // communication: g[b,u,s] = sum_m h_mu^H f_ms
    let h = tape.constant(batch.ue_edges.clone());
    let h = tape.broadcast_axis(h, 3, s)?;
    let f = tape.broadcast_axis(beams, 2, u)?;
    let (re, im) = inner_power(tape, h, f, 4)?;
    let re = tape.sum_axis(re, 1)?;
    let im = tape.sum_axis(im, 1)?;
    let re2 = tape.square(re);
    let im2 = tape.square(im);
    let power = tape.add(re2, im2)?;
    let mut diag = Tensor::zeros(&[u, s]);
    for k in 0..u {
        diag.data_mut()[k * s + k] = T::ONE;
    }
    let diag = tape.constant(diag);
    let own = tape.mul(power, diag)?;
    let signal = tape.sum_axis(own, 2)?;
    let total = tape.sum_axis(power, 2)?;
    let interference = tape.sub(total, signal)?;
    let noise = tape.constant(Tensor::scalar(T::from_f64(config.ue_noise_var)));
    let denom = tape.add(interference, noise)?;
    let sinr = tape.div(signal, denom)?;
    let rates = log2_one_plus(tape, sinr)?;
    let sum_rate = tape.sum_axis(rates, 1)?;

    // sensing: sum_m gain_m sum_s |a_m^H f_ms|^2 / (M sigma_r^2)
    let a = tape.constant(batch.st_edges.clone());
    let a = tape.broadcast_axis(a, 2, s)?;
    let (re, im) = inner_power(tape, a, beams, 3)?;
    let re2 = tape.square(re);
    let im2 = tape.square(im);
    let per_stream = tape.add(re2, im2)?;
    let illumination = tape.sum_axis(per_stream, 2)?;
    let gain = tape.constant(batch.target_gain.clone());
    let echoed = tape.mul(illumination, gain)?;
    let echoed = tape.sum_axis(echoed, 1)?;
    let sensing_snr = tape.scalar_mul(echoed, 1.0 / (m as f64 * config.radar_noise_var));
    let sensing_log = log2_one_plus(tape, sensing_snr)?;

    let weighted = tape.scalar_mul(sensing_log, config.sensing_weight);
    let objective = tape.add(sum_rate, weighted)?;
    Ok(ObjectiveVars {
        sum_rate,
        sensing_snr,
        objective,
    })
}

/// Records `-(1/scale_count) * sum(objective)` over `batch` and returns it
/// with the per-sample objective handles.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    params: &GnnParameters<T>,
    batch: &GraphBatch<T>,
    config: &SystemConfig,
    scale_count: usize,
) -> Result<(Var, ObjectiveVars)> {
    let raw = forward(tape, vars, params.hyper(), batch)?;
    let beams = normalize_on_tape(tape, raw, config.ap_power)?;
    let terms = objective_on_tape(tape, beams, batch, config)?;
    let total = tape.sum(terms.objective);
    Ok((tape.scalar_mul(total, -1.0 / scale_count as f64), terms))
}

fn check_batch(
    params_hyper: &crate::gnn::GnnHyperparams,
    config: &SystemConfig,
    samples: &[&ChannelSample],
) -> Result<()> {
    check_compatible(config, params_hyper)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for s in samples {
        s.check_dims(config)?;
    }
    Ok(())
}

/// Negated mean objective of the network over `samples`.
pub fn loss<T: Real>(
    params: &GnnParameters<T>,
    samples: &[&ChannelSample],
    config: &SystemConfig,
) -> Result<f64> {
    Ok(loss_and_gradients(params, samples, config, false)?.0)
}

/// Loss and, when `with_grad`, its gradient with respect to every parameter
/// tensor. Samples are processed in fixed-size chunks that may run in
/// parallel; partial results are reduced in chunk order.
pub fn loss_and_gradients<T: Real>(
    params: &GnnParameters<T>,
    samples: &[&ChannelSample],
    config: &SystemConfig,
    with_grad: bool,
) -> Result<(f64, Vec<Tensor<T>>)> {
    check_batch(params.hyper(), config, samples)?;
    let total = samples.len();
    let parts: Vec<(f64, Vec<Tensor<T>>)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let batch = GraphBatch::new(chunk, params.hyper().tx_antennas)?;
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let (loss, _) = loss_on_tape(&mut tape, &vars, params, &batch, config, total)?;
            let value = tape.value(loss).data()[0].to_f64();
            let grads = if with_grad {
                tape.backward(loss)?.into_vec()
            } else {
                Vec::new()
            };
            Ok((value, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut value, mut grads) = iter.next().expect("at least one chunk");
    for (v, g) in iter {
        value += v;
        for (acc, x) in grads.iter_mut().zip(&g) {
            for (a, b) in acc.data_mut().iter_mut().zip(x.data()) {
                *a += *b;
            }
        }
    }
    Ok((value, grads))
}
