use super::dense::DenseMatrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares tape gradients against central differences.
///
/// `build` receives a fresh tape and one leaf per entry of `params` and must
/// return a scalar loss node. Returns the largest
/// `|analytic − numeric| / max(1e-8, |numeric|)` over every parameter entry.
pub fn grad_check<F>(build: F, params: &[DenseMatrix], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |ps: &[DenseMatrix]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &leaves);
        if tape.shape(loss) != (1, 1) {
            return Err(Error::Validation(format!(
                "grad_check needs a scalar loss, got shape {:?}",
                tape.shape(loss)
            )));
        }
        Ok((tape, leaves, loss))
    };

    let (tape, leaves, loss) = eval(params)?;
    let grads = tape.backward(loss);
    let analytic: Vec<DenseMatrix> = leaves.iter().map(|&v| grads.wrt(v)).collect();

    let mut worst = 0.0f64;
    let mut perturbed = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for idx in 0..params[p].as_slice().len() {
            let orig = params[p].as_slice()[idx];
            perturbed[p].as_mut_slice()[idx] = orig + epsilon;
            let plus = scalar_loss(&eval(&perturbed)?);
            perturbed[p].as_mut_slice()[idx] = orig - epsilon;
            let minus = scalar_loss(&eval(&perturbed)?);
            perturbed[p].as_mut_slice()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (grad.as_slice()[idx] - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn scalar_loss((tape, _, loss): &(Tape, Vec<Var>, Var)) -> f64 {
    tape.value(*loss).get(0, 0)
}
