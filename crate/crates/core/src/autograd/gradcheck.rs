use crate::error::{Error, Result};

use super::{backpropagate, NodeId, ParamStore, Tape};

/// Compares tape gradients with central finite differences.
///
/// `forward` records a scalar loss on the tape it is given, reading
/// trainable leaves from the store it is given. It is evaluated once with
/// the tape for the analytic gradient and twice per parameter entry
/// (`θ ± h`) for the numerical one. Everything runs in `f64`.
///
/// Returns the maximum over all entries of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(forward: F, params: &ParamStore<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {h}")));
    }
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, p)?;
        let v = tape.value(loss)?.item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("forward produced {v}")));
        }
        Ok(v)
    };

    let mut analytic = params.clone();
    analytic.zero_grads();
    {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, &analytic)?;
        let v = tape.value(loss)?.item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("forward produced {v}")));
        }
        backpropagate(&tape, loss, &mut analytic)?;
    }

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let mut worst = 0f64;
    for name in &names {
        let grads = analytic.grad(name)?.data().to_vec();
        for (i, &a) in grads.iter().enumerate() {
            let orig = probe.values_mut(name)?[i];
            probe.values_mut(name)?[i] = orig + h;
            let plus = eval(&probe)?;
            probe.values_mut(name)?[i] = orig - h;
            let minus = eval(&probe)?;
            probe.values_mut(name)?[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
