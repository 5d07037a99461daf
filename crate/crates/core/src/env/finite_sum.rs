//! Synthetic convex finite sums with known optimum and Lipschitz constant.

use crate::error::{Error, Result};
use crate::objective::{check_sample, FiniteSumObjective, SampleGradients};
use crate::param::{Layout, ParamVector};

/// A finite sum for which `w*`, `f(w*)` and the per-sample gradient
/// Lipschitz constant `L` may be known.
pub trait FiniteSumProblem: FiniteSumObjective {
    fn optimum(&self) -> Option<&ParamVector>;

    fn lipschitz(&self) -> Option<f64>;

    fn optimal_value(&self) -> Option<f64> {
        self.optimum().and_then(|w| self.loss(w).ok())
    }

    /// `f(w) - f(w*)`.
    fn suboptimality(&self, w: &ParamVector) -> Result<f64> {
        let fstar = self
            .optimal_value()
            .ok_or_else(|| Error::Unsupported("optimum unknown".into()))?;
        Ok(self.loss(w)? - fstar)
    }
}

fn check_rows(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("{what}: need at least one sample")))?;
    let d = first.len();
    if d == 0 {
        return Err(Error::InvalidArgument(format!("{what}: zero-dimensional samples")));
    }
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.len(),
            });
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what.to_string()));
        }
    }
    Ok(d)
}

/// `f_i(w) = |w - a_i|^2 / 2`; `w*` is the mean of the centres, `L = 1`.
#[derive(Clone, Debug)]
pub struct QuadraticFiniteSum {
    centers: Vec<Vec<f64>>,
    layout: Layout,
    optimum: ParamVector,
}

impl QuadraticFiniteSum {
    pub fn new(centers: Vec<Vec<f64>>) -> Result<Self> {
        let d = check_rows(&centers, "quadratic centres")?;
        let n = centers.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|j| crate::stats::compensated_sum(centers.iter().map(|c| c[j])) / n)
            .collect();
        Ok(Self {
            centers,
            layout: Layout::flat(d),
            optimum: ParamVector::from_flat(mean)?,
        })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }
}

pub fn quadratic_finite_sum(a: Vec<Vec<f64>>) -> Result<QuadraticFiniteSum> {
    QuadraticFiniteSum::new(a)
}

impl SampleGradients for QuadraticFiniteSum {
    fn num_samples(&self) -> usize {
        self.centers.len()
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn accumulate_gradient(&self, w: &ParamVector, sample: usize, scale: f64, out: &mut [f64]) -> Result<()> {
        check_sample(sample, self.centers.len())?;
        if w.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        for ((o, wi), ai) in out.iter_mut().zip(w.as_slice()).zip(&self.centers[sample]) {
            *o += scale * (wi - ai);
        }
        Ok(())
    }
}

impl FiniteSumObjective for QuadraticFiniteSum {
    fn sample_loss(&self, w: &ParamVector, sample: usize) -> Result<f64> {
        check_sample(sample, self.centers.len())?;
        if w.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(0.5
            * w.as_slice()
                .iter()
                .zip(&self.centers[sample])
                .map(|(wi, ai)| (wi - ai) * (wi - ai))
                .sum::<f64>())
    }
}

impl FiniteSumProblem for QuadraticFiniteSum {
    fn optimum(&self) -> Option<&ParamVector> {
        Some(&self.optimum)
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// l2-regularised logistic loss
/// `f_i(w) = log(1 + exp(-y_i <x_i, w>)) + (lambda/2) |w|^2`.
#[derive(Clone, Debug)]
pub struct LogisticFiniteSum {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    lambda: f64,
    layout: Layout,
    lipschitz: f64,
    optimum: Option<ParamVector>,
}

/// Settings for the full-batch descent that locates `w*`.
const OPTIMUM_GRAD_TOL: f64 = 1e-12;
const OPTIMUM_MAX_ITERS: usize = 2_000_000;

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticFiniteSum {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, lambda: f64) -> Result<Self> {
        let d = check_rows(&features, "logistic features")?;
        if labels.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument("labels must be -1 or +1".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        let max_sq = features
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        let mut problem = Self {
            features,
            labels,
            lambda,
            layout: Layout::flat(d),
            lipschitz: lambda + max_sq / 4.0,
            optimum: None,
        };
        problem.optimum = problem.descend_to_optimum()?;
        Ok(problem)
    }

    /// Full-batch gradient descent with step `1/L`; `None` if the gradient
    /// never gets below tolerance (possible with `lambda = 0`).
    fn descend_to_optimum(&self) -> Result<Option<ParamVector>> {
        if self.lipschitz == 0.0 {
            // all-zero features and no regulariser: every point is optimal
            return Ok(Some(ParamVector::zeros(self.layout.clone())));
        }
        let step = 1.0 / self.lipschitz;
        let mut w = ParamVector::zeros(self.layout.clone());
        for _ in 0..OPTIMUM_MAX_ITERS {
            let g = self.full_gradient(&w)?;
            if g.values.norm_sq().sqrt() <= OPTIMUM_GRAD_TOL {
                return Ok(Some(w));
            }
            w.axpy(-step, &g.values)?;
        }
        Ok(None)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn margin(&self, w: &ParamVector, i: usize) -> f64 {
        self.labels[i]
            * self.features[i]
                .iter()
                .zip(w.as_slice())
                .map(|(x, wi)| x * wi)
                .sum::<f64>()
    }
}

pub fn logistic_finite_sum(features: Vec<Vec<f64>>, labels: Vec<f64>, lambda: f64) -> Result<LogisticFiniteSum> {
    LogisticFiniteSum::new(features, labels, lambda)
}

impl SampleGradients for LogisticFiniteSum {
    fn num_samples(&self) -> usize {
        self.features.len()
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn accumulate_gradient(&self, w: &ParamVector, sample: usize, scale: f64, out: &mut [f64]) -> Result<()> {
        check_sample(sample, self.features.len())?;
        if w.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        let y = self.labels[sample];
        let coef = -y * sigmoid(-self.margin(w, sample));
        for ((o, x), wi) in out.iter_mut().zip(&self.features[sample]).zip(w.as_slice()) {
            *o += scale * (coef * x + self.lambda * wi);
        }
        Ok(())
    }
}

impl FiniteSumObjective for LogisticFiniteSum {
    fn sample_loss(&self, w: &ParamVector, sample: usize) -> Result<f64> {
        check_sample(sample, self.features.len())?;
        if w.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(softplus(-self.margin(w, sample)) + 0.5 * self.lambda * w.norm_sq())
    }
}

impl FiniteSumProblem for LogisticFiniteSum {
    fn optimum(&self) -> Option<&ParamVector> {
        self.optimum.as_ref()
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_gradient, gradients_agree};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_single_center() {
        let q = quadratic_finite_sum(vec![vec![2.5, -1.0]]).unwrap();
        assert_eq!(q.optimum().unwrap().as_slice(), &[2.5, -1.0]);
        assert_eq!(q.optimal_value(), Some(0.0));
        assert_eq!(q.lipschitz(), Some(1.0));
    }

    #[test]
    fn quadratic_symmetric_pair() {
        let q = quadratic_finite_sum(vec![vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(q.optimum().unwrap().as_slice(), &[0.0]);
        // (1/2)(1/2 + 1/2) per the mean over two samples
        assert_eq!(q.optimal_value(), Some(0.5));
    }

    #[test]
    fn quadratic_rejects_ragged() {
        assert!(quadratic_finite_sum(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(quadratic_finite_sum(vec![]).is_err());
    }

    #[test]
    fn logistic_gradient_at_zero() {
        let xs = vec![vec![1.0, 2.0], vec![-0.5, 3.0], vec![2.0, -1.0]];
        let ys = vec![1.0, -1.0, 1.0];
        let p = logistic_finite_sum(xs.clone(), ys.clone(), 0.3).unwrap();
        let g = p.full_gradient(&ParamVector::zeros(Layout::flat(2))).unwrap();
        for j in 0..2 {
            let want = xs.iter().zip(&ys).map(|(x, y)| -0.5 * y * x[j]).sum::<f64>() / 3.0;
            assert!((g.as_slice()[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_heavy_regularizer_pins_origin() {
        let p = logistic_finite_sum(vec![vec![1.0, -2.0], vec![0.5, 0.5]], vec![1.0, -1.0], 1e6).unwrap();
        assert!(p.optimum().unwrap().as_slice().iter().all(|x| x.abs() < 1e-4));
    }

    #[test]
    fn logistic_separable_pair_matches_bisection() {
        // x = +-1 with matching labels; f(w) = softplus(-w) + 0.05 w^2,
        // f'(w) = -sigmoid(-w) + 0.1 w which bisection solves independently
        let p = logistic_finite_sum(vec![vec![1.0], vec![-1.0]], vec![1.0, -1.0], 0.1).unwrap();
        let fprime = |w: f64| -1.0 / (1.0 + w.exp()) + 0.1 * w;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fprime(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let wstar = p.optimum().unwrap().as_slice()[0];
        assert!((wstar - 0.5 * (lo + hi)).abs() < 1e-10, "{wstar} vs {lo}");
    }

    #[test]
    fn logistic_same_label_data_allowed() {
        let p = logistic_finite_sum(vec![vec![1.0], vec![2.0]], vec![1.0, 1.0], 0.5).unwrap();
        assert!(p.optimum().is_some());
        assert!(logistic_finite_sum(vec![vec![1.0]], vec![0.0], 0.5).is_err());
    }

    #[test]
    fn gradients_pass_finite_difference_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<f64> = (0..10).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let logistic = logistic_finite_sum(xs.clone(), ys, 0.05).unwrap();
        let quad = quadratic_finite_sum(xs).unwrap();
        for _ in 0..20 {
            let w = ParamVector::from_flat((0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            for p in [&logistic as &dyn FiniteSumProblem, &quad] {
                let analytic = p.full_gradient(&w).unwrap();
                let numeric = finite_difference_gradient(|v| p.loss(v).unwrap(), &w, 1e-5).unwrap();
                gradients_agree(analytic.as_slice(), numeric.as_slice(), 1e-5, 1e-7).unwrap();
            }
        }
    }
}
