use crate::error::{Error, Result};
use crate::param::{Gradient, ParamVector};

/// `w - eta * mean(grads)`.
pub fn sgd_minibatch_step(w: &ParamVector, grads: &[Gradient], eta: f64) -> Result<ParamVector> {
    if grads.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut mean = ParamVector::zeros(w.layout().clone());
    let scale = 1.0 / grads.len() as f64;
    for g in grads {
        mean.axpy(scale, &g.values)?;
    }
    let mut out = w.clone();
    out.axpy(-eta, &mean)?;
    out.ensure_finite("sgd step")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::GradientSource;

    fn grad(v: Vec<f64>) -> Gradient {
        Gradient::new(ParamVector::from_flat(v).unwrap(), GradientSource::SingleSample)
    }

    #[test]
    fn zero_rate_is_identity() {
        let w = ParamVector::from_flat(vec![1.0, -2.0]).unwrap();
        let out = sgd_minibatch_step(&w, &[grad(vec![5.0, 5.0])], 0.0).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn unit_rate_single_gradient() {
        let w = ParamVector::from_flat(vec![1.0, -2.0]).unwrap();
        let out = sgd_minibatch_step(&w, &[grad(vec![0.5, 1.0])], 1.0).unwrap();
        assert_eq!(out.as_slice(), &[0.5, -3.0]);
    }

    #[test]
    fn two_quadratics() {
        // f_i = (w - a_i)^2 / 2 with a = {0, 2} at w = 0: gradients 0 and -2
        let w = ParamVector::from_flat(vec![0.0]).unwrap();
        let out = sgd_minibatch_step(&w, &[grad(vec![0.0]), grad(vec![-2.0])], 0.5).unwrap();
        assert_eq!(out.as_slice(), &[0.5]);
    }

    #[test]
    fn empty_and_mismatched() {
        let w = ParamVector::from_flat(vec![0.0]).unwrap();
        assert!(matches!(sgd_minibatch_step(&w, &[], 0.1), Err(Error::EmptyBatch)));
        assert!(sgd_minibatch_step(&w, &[grad(vec![1.0, 2.0])], 0.1).is_err());
    }
}
