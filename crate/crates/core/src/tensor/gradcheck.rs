//! Central finite-difference checking of recorded adjoints.

use super::{Element, Tape, Tensor, TensorError, Value};

/// Compares the tape's adjoints for `f` at `x` against central finite
/// differences `(f(x + eps e) - f(x - eps e)) / 2 eps`, coordinate by
/// coordinate, and returns the worst relative error. Magnitudes below 1e-8
/// fall back to absolute error. `f` must be deterministic and produce a
/// scalar; run in 64-bit mode for meaningful thresholds.
pub fn grad_check<E, F>(f: F, x: &Tensor<E>, eps: E) -> Result<f64, TensorError>
where
    E: Element,
    F: Fn(&mut Tape<E>, Value) -> Result<Value, TensorError>,
{
    let eval = |xt: &Tensor<E>| -> Result<E, TensorError> {
        let mut tape = Tape::no_grad();
        let v = tape.leaf(xt.clone(), false);
        let out = f(&mut tape, v)?;
        if !tape.value(out).is_scalar() {
            return Err(TensorError::NonScalarLoss(tape.value(out).shape().to_vec()));
        }
        Ok(tape.value(out).item())
    };

    let y0 = eval(x)?;
    let y1 = eval(x)?;
    if y0.to_f64().to_bits() != y1.to_f64().to_bits() {
        return Err(TensorError::NonDeterministic);
    }

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(v) {
        Some(g) => g.iter().map(|e| e.to_f64()).collect(),
        None => vec![0.0; x.numel()],
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe)?.to_f64();
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe)?.to_f64();
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps.to_f64());
        let denom = numeric.abs().max(analytic[i].abs());
        let err = if denom < 1e-8 {
            (numeric - analytic[i]).abs()
        } else {
            (numeric - analytic[i]).abs() / denom
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        // Linear f: central differences are exact at any step, so a wide
        // step avoids the cancellation noise of a tiny one.
        let x = Tensor::<f64>::from_f64(&[2, 3], &[0.4, -1.2, 2.0, 0.1, -0.6, 1.7]);
        let err = grad_check(|t, v| t.sum_all(v), &x, 1e-2).unwrap();
        assert!(err < 1e-12, "worst err {err}");
    }

    #[test]
    fn softmax_sum_of_squares_matches() {
        let x = Tensor::<f64>::from_f64(&[2, 4], &[0.3, -0.8, 1.4, 0.2, -1.1, 0.5, 0.9, -0.4]);
        let err = grad_check(
            |t, v| {
                let s = t.softmax_rows(v)?;
                let q = t.mul(s, s)?;
                t.sum_all(q)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "worst err {err}");
    }

    #[test]
    fn gelu_slope_at_zero_is_half() {
        let x = Tensor::<f64>::scalar(0.0);
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), true);
        let y = tape.gelu(v).unwrap();
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert!((tape.grad(v).unwrap()[0] - 0.5).abs() < 1e-12);
        let err = grad_check(
            |t, v| {
                let g = t.gelu(v)?;
                t.sum_all(g)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "worst err {err}");
    }

    #[test]
    fn corrupted_adjoint_is_detected() {
        let x = Tensor::<f64>::from_f64(&[3], &[0.7, -0.3, 1.2]);
        let err = grad_check(
            |t, v| {
                t.debug_corrupt_adjoints(true);
                let g = t.gelu(v)?;
                t.sum_all(g)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-3, "corruption went undetected: {err}");
    }
}
