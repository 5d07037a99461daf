//! Finite-sum objectives `f(w) = (1/n) sum_i f_i(w)` as seen by the optimizers.

use crate::error::{Error, Result};
use crate::param::{Gradient, GradientSource, Layout, ParamVector};
use crate::stats::compensated_sum;

/// Per-sample gradients of a finite-sum objective.
pub trait SampleGradients {
    fn num_samples(&self) -> usize;

    fn layout(&self) -> &Layout;

    /// Adds `scale * grad f_i(w)` into `out`.
    fn accumulate_gradient(
        &self,
        w: &ParamVector,
        sample: usize,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()>;

    fn sample_gradient(&self, w: &ParamVector, sample: usize) -> Result<Gradient> {
        let mut g = ParamVector::zeros(self.layout().clone());
        self.accumulate_gradient(w, sample, 1.0, g.as_mut_slice())?;
        Ok(Gradient::new(g, GradientSource::SingleSample))
    }

    /// Mean gradient over `samples` (repeats allowed).
    fn mean_gradient(&self, w: &ParamVector, samples: &[usize]) -> Result<Gradient> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut g = ParamVector::zeros(self.layout().clone());
        let scale = 1.0 / samples.len() as f64;
        for &i in samples {
            self.accumulate_gradient(w, i, scale, g.as_mut_slice())?;
        }
        Ok(Gradient::new(g, GradientSource::Minibatch))
    }

    fn full_gradient(&self, w: &ParamVector) -> Result<Gradient> {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.mean_gradient(w, &all)
    }
}

/// A finite sum whose per-sample losses can also be evaluated.
pub trait FiniteSumObjective: SampleGradients {
    fn sample_loss(&self, w: &ParamVector, sample: usize) -> Result<f64>;

    fn loss(&self, w: &ParamVector) -> Result<f64> {
        let n = self.num_samples();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let losses = (0..n)
            .map(|i| self.sample_loss(w, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(compensated_sum(losses) / n as f64)
    }
}

pub(crate) fn check_sample(sample: usize, n: usize) -> Result<()> {
    if sample >= n {
        return Err(Error::InvalidArgument(format!(
            "sample index {sample} out of range for {n} samples"
        )));
    }
    Ok(())
}
