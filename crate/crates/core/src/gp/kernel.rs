//! Stationary and linear covariance functions over joint (parameter, context)
//! inputs, plus product/sum composites that split the input into a parameter
//! block and a context block.

use serde::{Deserialize, Serialize};

use super::InputPoint;
use crate::error::{Error, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Matérn with smoothness 3/2: `s²(1 + √3 r) exp(-√3 r)`.
    #[serde(rename = "matern_nu_1_5")]
    Matern15,
    #[serde(rename = "rbf")]
    Rbf,
    /// `s² Σ a_j b_j / l_j²`.
    #[serde(rename = "linear")]
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    Product,
    Sum,
}

/// A single family with per-coordinate lengthscales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseKernel {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    /// Signal standard deviation `s`; the kernel's variance at zero distance is `s²`.
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
}

fn default_output_scale() -> f64 {
    1.0
}

impl BaseKernel {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, output_scale: f64) -> Self {
        Self {
            family,
            lengthscales,
            output_scale,
        }
    }

    fn validate(&self, dim: usize, field: &str) -> Result<()> {
        if self.lengthscales.len() != dim {
            return Err(Error::config(
                format!("{field}.lengthscales"),
                format!(
                    "expected {dim} lengthscales, got {}",
                    self.lengthscales.len()
                ),
            ));
        }
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::config(
                format!("{field}.lengthscales"),
                format!("lengthscales must be positive and finite, found {l}"),
            ));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::config(
                format!("{field}.output_scale"),
                "output scale must be positive",
            ));
        }
        Ok(())
    }

    /// Evaluates over coordinate pairs; the caller guarantees the pair count
    /// equals the lengthscale count.
    #[inline]
    fn eval_pairs(&self, pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
        let s2 = self.output_scale * self.output_scale;
        match self.family {
            KernelFamily::Linear => {
                let dot: f64 = pairs
                    .zip(&self.lengthscales)
                    .map(|((a, b), l)| a * b / (l * l))
                    .sum();
                s2 * dot
            }
            KernelFamily::Rbf => {
                let r2 = scaled_sq_dist(pairs, &self.lengthscales);
                s2 * (-0.5 * r2).exp()
            }
            KernelFamily::Matern15 => {
                let r = scaled_sq_dist(pairs, &self.lengthscales).sqrt();
                s2 * (1.0 + SQRT_3 * r) * (-SQRT_3 * r).exp()
            }
        }
    }

    /// Evaluates on plain coordinate slices.
    pub fn eval_slices(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_pairs(a.iter().copied().zip(b.iter().copied()))
    }
}

#[inline]
fn scaled_sq_dist(pairs: impl Iterator<Item = (f64, f64)>, lengthscales: &[f64]) -> f64 {
    pairs
        .zip(lengthscales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum()
}

/// Covariance over `(θ, z)`. A base kernel spans the concatenated coordinates;
/// a composite applies `theta` to θ only and `context` to z only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Base(BaseKernel),
    Composite {
        mode: CompositionMode,
        theta: BaseKernel,
        context: BaseKernel,
    },
}

impl KernelSpec {
    pub fn matern(lengthscales: Vec<f64>, output_scale: f64) -> Self {
        KernelSpec::Base(BaseKernel::new(
            KernelFamily::Matern15,
            lengthscales,
            output_scale,
        ))
    }

    pub fn composite(mode: CompositionMode, theta: BaseKernel, context: BaseKernel) -> Self {
        KernelSpec::Composite {
            mode,
            theta,
            context,
        }
    }

    /// Checks lengthscale counts against the declared input dimensions.
    pub fn validate(&self, theta_dim: usize, context_dim: usize) -> Result<()> {
        match self {
            KernelSpec::Base(k) => k.validate(theta_dim + context_dim, "kernel"),
            KernelSpec::Composite { theta, context, .. } => {
                theta.validate(theta_dim, "kernel.theta")?;
                context.validate(context_dim, "kernel.context")
            }
        }
    }

    /// Kernel value with a dimension check against this kernel's lengthscales.
    pub fn eval(&self, a: &InputPoint, b: &InputPoint) -> Result<f64> {
        if a.theta.len() != b.theta.len() || a.z.len() != b.z.len() {
            return Err(Error::Dimension {
                expected: a.dim(),
                actual: b.dim(),
                context: "kernel inputs",
            });
        }
        self.validate(a.theta.len(), a.z.len())?;
        Ok(self.eval_unchecked(a, b))
    }

    /// Kernel value assuming dimensions were validated up front.
    #[inline]
    pub fn eval_unchecked(&self, a: &InputPoint, b: &InputPoint) -> f64 {
        match self {
            KernelSpec::Base(k) => k.eval_pairs(
                a.theta
                    .iter()
                    .chain(&a.z)
                    .copied()
                    .zip(b.theta.iter().chain(&b.z).copied()),
            ),
            KernelSpec::Composite {
                mode,
                theta,
                context,
            } => {
                let left = theta.eval_slices(&a.theta, &b.theta);
                let right = context.eval_slices(&a.z, &b.z);
                match mode {
                    CompositionMode::Product => left * right,
                    CompositionMode::Sum => left + right,
                }
            }
        }
    }

    /// Prior variance `k(v, v)`.
    #[inline]
    pub fn diag(&self, a: &InputPoint) -> f64 {
        self.eval_unchecked(a, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn pt(theta: &[f64], z: &[f64]) -> InputPoint {
        InputPoint::new(theta.to_vec(), z.to_vec())
    }

    #[test]
    fn matern_zero_distance_is_signal_variance() {
        let k = KernelSpec::matern(vec![0.3], 1.0);
        let a = pt(&[0.7], &[]);
        assert_eq!(k.eval(&a, &a).unwrap(), 1.0);
        let k2 = KernelSpec::matern(vec![0.3], 2.0);
        assert_relative_eq!(k2.eval(&a, &a).unwrap(), 4.0);
    }

    #[test]
    fn matern_unit_distance_closed_form() {
        // (1 + √3) e^{-√3}, evaluated with 30-digit arithmetic offline.
        let expected = 0.483_357_724_596_507_65_f64;
        let k = KernelSpec::matern(vec![1.0], 1.0);
        let v = k.eval(&pt(&[0.0], &[]), &pt(&[1.0], &[])).unwrap();
        assert!((v - expected).abs() < 1e-15, "{v}");
    }

    #[test]
    fn sum_composite_adds_blocks() {
        // Linear kernels with hand-chosen inputs give left = 0.3, right = 0.2.
        let theta = BaseKernel::new(KernelFamily::Linear, vec![1.0], 1.0);
        let ctx = BaseKernel::new(KernelFamily::Linear, vec![1.0], 1.0);
        let k = KernelSpec::composite(CompositionMode::Sum, theta.clone(), ctx.clone());
        let a = pt(&[0.5], &[0.4]);
        let b = pt(&[0.6], &[0.5]);
        assert_relative_eq!(theta.eval_slices(&a.theta, &b.theta), 0.3, epsilon = 1e-15);
        assert_relative_eq!(ctx.eval_slices(&a.z, &b.z), 0.2, epsilon = 1e-15);
        assert_relative_eq!(k.eval(&a, &b).unwrap(), 0.5, epsilon = 1e-15);
        let kp = KernelSpec::composite(CompositionMode::Product, theta, ctx);
        assert_relative_eq!(kp.eval(&a, &b).unwrap(), 0.06, epsilon = 1e-15);
    }

    #[test]
    fn rbf_matches_definition() {
        let k = KernelSpec::Base(BaseKernel::new(KernelFamily::Rbf, vec![0.5, 2.0], 1.5));
        let v = k.eval(&pt(&[0.0], &[1.0]), &pt(&[0.5], &[-1.0])).unwrap();
        let r2: f64 = 1.0 + 1.0;
        assert_relative_eq!(v, 2.25 * (-0.5 * r2).exp(), epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let k = KernelSpec::matern(vec![1.0, 1.0], 1.0);
        assert!(matches!(
            k.eval(&pt(&[0.0], &[]), &pt(&[1.0], &[])),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            k.eval(&pt(&[0.0, 1.0], &[]), &pt(&[1.0], &[])),
            Err(Error::Dimension { .. })
        ));
        let bad = KernelSpec::matern(vec![-1.0], 1.0);
        assert!(bad.validate(1, 0).is_err());
    }

    fn any_kernel() -> impl Strategy<Value = KernelSpec> {
        let family = prop_oneof![
            Just(KernelFamily::Matern15),
            Just(KernelFamily::Rbf),
            Just(KernelFamily::Linear)
        ];
        let base = (family.clone(), prop::collection::vec(0.1f64..3.0, 3), 0.5f64..2.0)
            .prop_map(|(f, l, s)| KernelSpec::Base(BaseKernel::new(f, l, s)));
        let comp = (
            prop_oneof![Just(CompositionMode::Product), Just(CompositionMode::Sum)],
            family.clone(),
            prop::collection::vec(0.1f64..3.0, 2),
            family,
            0.1f64..3.0,
        )
            .prop_map(|(m, f1, l1, f2, l2)| {
                KernelSpec::composite(
                    m,
                    BaseKernel::new(f1, l1, 1.0),
                    BaseKernel::new(f2, vec![l2], 1.0),
                )
            });
        prop_oneof![base, comp]
    }

    fn any_point() -> impl Strategy<Value = InputPoint> {
        (prop::collection::vec(-2.0f64..2.0, 2), -2.0f64..2.0)
            .prop_map(|(t, z)| InputPoint::new(t, vec![z]))
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(k in any_kernel(), a in any_point(), b in any_point()) {
            let ab = k.eval(&a, &b).unwrap();
            let ba = k.eval(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn gram_matrices_are_psd(
            k in any_kernel(),
            pts in prop::collection::vec(any_point(), 1..20),
        ) {
            let n = pts.len();
            let gram = DMatrix::from_fn(n, n, |i, j| k.eval_unchecked(&pts[i], &pts[j]));
            let min_eig = gram.symmetric_eigenvalues().min();
            prop_assert!(min_eig >= -1e-9, "min eigenvalue {}", min_eig);
        }

        #[test]
        fn composite_theta_factor_ignores_context(
            k in any_kernel(), a in any_point(), b in any_point(), dz in -1.0f64..1.0,
        ) {
            if let KernelSpec::Composite { theta, .. } = &k {
                let mut b2 = b.clone();
                b2.z[0] += dz;
                prop_assert_eq!(
                    theta.eval_slices(&a.theta, &b.theta),
                    theta.eval_slices(&a.theta, &b2.theta)
                );
            }
        }
    }
}
