use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Largest disagreement between reverse-mode and central-difference
/// gradients of `loss_fn` at `params`.
///
/// Each coordinate's error is `|ad - fd| / max(|ad|, |fd|, floor)`, so
/// components smaller than `floor` are compared in absolute terms.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &[Tensor<f64>],
    step: f64,
    floor: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 || floor.is_nan() || floor <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step {step} and floor {floor} must be positive"
        )));
    }
    let eval = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.param(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok((tape, loss))
    };
    let scalar = |values: &[Tensor<f64>]| -> Result<f64> {
        let (tape, loss) = eval(values)?;
        tape.value(loss)
            .item()
            .ok_or_else(|| Error::InvalidArgument("loss must be a scalar".into()))
    };

    let (tape, loss) = eval(params)?;
    let analytic = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            probe[p].data_mut()[i] = orig + step;
            let up = scalar(&probe)?;
            probe[p].data_mut()[i] = orig - step;
            let down = scalar(&probe)?;
            probe[p].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = grad.data()[i];
            let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
