use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{InputPoint, KernelSpec, OutputIndex};
use crate::error::{Error, Result};

/// Diagonal jitter tried in order when the Gram matrix will not factorize.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const PREDICT_CHUNK: usize = 128;

/// Cholesky factor of `K + (σ² + jitter) I` shared by the outputs that use
/// the same kernel.
#[derive(Clone, Debug)]
struct FactorGroup {
    kernel: KernelSpec,
    outputs: Vec<usize>,
    chol: DMatrix<f64>,
    jitter: f64,
    /// `(K + σ²I)⁻¹ y` for each output in `outputs`, one column each.
    alpha: DMatrix<f64>,
}

/// Posterior means and variances for a batch of queries, one column per output.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
    /// Smallest variance seen before clamping at zero.
    pub min_raw_variance: f64,
}

impl Prediction {
    pub fn std_dev(&self, query: usize, output: usize) -> f64 {
        self.variance[(query, output)].sqrt()
    }
}

/// Exact GP regression with independent outputs over a shared input set.
///
/// Every output uses `kernel` unless a per-output override is set. Each output
/// is a zero-mean GP; outputs sharing a kernel share one factorization.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    kernel: KernelSpec,
    overrides: Vec<Option<KernelSpec>>,
    noise_sigma: f64,
    theta_dim: usize,
    context_dim: usize,
    inputs: Vec<InputPoint>,
    observations: Vec<Vec<f64>>,
    groups: Vec<FactorGroup>,
    output_group: Vec<usize>,
}

impl SurrogateModel {
    pub fn new(
        kernel: KernelSpec,
        noise_sigma: f64,
        num_outputs: usize,
        theta_dim: usize,
        context_dim: usize,
    ) -> Result<Self> {
        Self::with_overrides(
            kernel,
            vec![None; num_outputs],
            noise_sigma,
            theta_dim,
            context_dim,
        )
    }

    /// `overrides[i]`, when set, replaces the shared kernel for output `i`.
    pub fn with_overrides(
        kernel: KernelSpec,
        overrides: Vec<Option<KernelSpec>>,
        noise_sigma: f64,
        theta_dim: usize,
        context_dim: usize,
    ) -> Result<Self> {
        if overrides.is_empty() {
            return Err(Error::config("outputs", "at least one output is required"));
        }
        if !(noise_sigma.is_finite() && noise_sigma > 0.0) {
            return Err(Error::config("kernel.noise_sigma", "noise sigma must be positive"));
        }
        kernel.validate(theta_dim, context_dim)?;
        for k in overrides.iter().flatten() {
            k.validate(theta_dim, context_dim)?;
        }

        let mut groups: Vec<FactorGroup> = Vec::new();
        let mut output_group = Vec::with_capacity(overrides.len());
        for (i, ov) in overrides.iter().enumerate() {
            let k = ov.as_ref().unwrap_or(&kernel);
            match groups.iter().position(|g| &g.kernel == k) {
                Some(g) => {
                    groups[g].outputs.push(i);
                    output_group.push(g);
                }
                None => {
                    output_group.push(groups.len());
                    groups.push(FactorGroup {
                        kernel: k.clone(),
                        outputs: vec![i],
                        chol: DMatrix::zeros(0, 0),
                        jitter: 0.0,
                        alpha: DMatrix::zeros(0, 0),
                    });
                }
            }
        }
        for g in &mut groups {
            g.alpha = DMatrix::zeros(0, g.outputs.len());
        }

        Ok(Self {
            kernel,
            overrides,
            noise_sigma,
            theta_dim,
            context_dim,
            inputs: Vec::new(),
            observations: Vec::new(),
            groups,
            output_group,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.output_group.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn inputs(&self) -> &[InputPoint] {
        &self.inputs
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn kernel_for(&self, output: usize) -> &KernelSpec {
        self.overrides[output].as_ref().unwrap_or(&self.kernel)
    }

    /// Largest jitter currently applied to any factorization.
    pub fn jitter(&self) -> f64 {
        self.groups.iter().map(|g| g.jitter).fold(0.0, f64::max)
    }

    fn check_input(&self, v: &InputPoint) -> Result<()> {
        if v.theta.len() != self.theta_dim {
            return Err(Error::Dimension {
                expected: self.theta_dim,
                actual: v.theta.len(),
                context: "parameter vector",
            });
        }
        if v.z.len() != self.context_dim {
            return Err(Error::Dimension {
                expected: self.context_dim,
                actual: v.z.len(),
                context: "context vector",
            });
        }
        if !v.is_finite() {
            return Err(Error::config("input", "input coordinates must be finite"));
        }
        Ok(())
    }

    /// Conditions every output on one more joint measurement.
    pub fn add_observation(&mut self, v: InputPoint, y: Vec<f64>) -> Result<()> {
        self.check_input(&v)?;
        if y.len() != self.num_outputs() {
            return Err(Error::Dimension {
                expected: self.num_outputs(),
                actual: y.len(),
                context: "measurement vector",
            });
        }
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Measurement { index, value });
        }

        self.inputs.push(v);
        self.observations.push(y);
        let noise_var = self.noise_sigma * self.noise_sigma;
        for g in &mut self.groups {
            if !g.append(&self.inputs, noise_var) {
                g.refactor(&self.inputs, noise_var)?;
            }
            g.solve_alpha(&self.observations);
        }
        Ok(())
    }

    /// Snapshot-style variant of [`SurrogateModel::add_observation`].
    pub fn with_observation(&self, v: InputPoint, y: Vec<f64>) -> Result<Self> {
        let mut next = self.clone();
        next.add_observation(v, y)?;
        Ok(next)
    }

    /// Posterior mean and variance of output `i` at `q`.
    pub fn posterior(&self, q: &InputPoint, i: OutputIndex) -> Result<(f64, f64)> {
        self.check_input(q)?;
        if i.0 >= self.num_outputs() {
            return Err(Error::Dimension {
                expected: self.num_outputs(),
                actual: i.0 + 1,
                context: "output index",
            });
        }
        let p = self.predict(std::slice::from_ref(q));
        Ok((p.mean[(0, i.0)], p.variance[(0, i.0)]))
    }

    /// Batch posterior for all outputs. Inputs must match the model dimensions.
    pub fn predict(&self, queries: &[InputPoint]) -> Prediction {
        let m = queries.len();
        let outputs = self.num_outputs();
        let mut mean = DMatrix::zeros(m, outputs);
        let mut variance = DMatrix::zeros(m, outputs);
        let mut min_raw = f64::INFINITY;

        let chunks: Vec<(usize, Prediction)> = queries
            .par_chunks(PREDICT_CHUNK)
            .enumerate()
            .map(|(c, chunk)| (c * PREDICT_CHUNK, self.predict_chunk(chunk)))
            .collect();
        for (offset, p) in chunks {
            let rows = p.mean.nrows();
            mean.rows_mut(offset, rows).copy_from(&p.mean);
            variance.rows_mut(offset, rows).copy_from(&p.variance);
            min_raw = min_raw.min(p.min_raw_variance);
        }
        Prediction {
            mean,
            variance,
            min_raw_variance: min_raw,
        }
    }

    fn predict_chunk(&self, queries: &[InputPoint]) -> Prediction {
        let m = queries.len();
        let n = self.len();
        let mut mean = DMatrix::zeros(m, self.num_outputs());
        let mut variance = DMatrix::zeros(m, self.num_outputs());
        let mut min_raw = f64::INFINITY;

        for g in &self.groups {
            let prior: Vec<f64> = queries.iter().map(|q| g.kernel.diag(q)).collect();
            if n == 0 {
                for (r, p) in prior.iter().enumerate() {
                    for &o in &g.outputs {
                        variance[(r, o)] = *p;
                    }
                    min_raw = min_raw.min(*p);
                }
                continue;
            }
            let cross = DMatrix::from_fn(n, m, |j, r| {
                g.kernel.eval_unchecked(&self.inputs[j], &queries[r])
            });
            let mu = cross.tr_mul(&g.alpha);
            let v = g
                .chol
                .solve_lower_triangular(&cross)
                .expect("cholesky factor has a non-zero diagonal");
            for r in 0..m {
                let reduction: f64 = v.column(r).norm_squared();
                let raw = prior[r] - reduction;
                min_raw = min_raw.min(raw);
                let var = raw.max(0.0);
                for (col, &o) in g.outputs.iter().enumerate() {
                    mean[(r, o)] = mu[(r, col)];
                    variance[(r, o)] = var;
                }
            }
        }
        Prediction {
            mean,
            variance,
            min_raw_variance: min_raw,
        }
    }
}

impl FactorGroup {
    /// Extends the factor by one row. Returns false when the new pivot is not
    /// safely positive, in which case the caller refactors from scratch.
    fn append(&mut self, inputs: &[InputPoint], noise_var: f64) -> bool {
        let n = inputs.len() - 1;
        let new = &inputs[n];
        let k: DVector<f64> =
            DVector::from_iterator(n, inputs[..n].iter().map(|x| self.kernel.eval_unchecked(x, new)));
        let diag = self.kernel.diag(new) + noise_var + self.jitter;
        let row = if n == 0 {
            DVector::zeros(0)
        } else {
            match self.chol.solve_lower_triangular(&k) {
                Some(r) => r,
                None => return false,
            }
        };
        let pivot2 = diag - row.norm_squared();
        if !(pivot2.is_finite() && pivot2 > 1e-12 * diag.max(f64::MIN_POSITIVE)) {
            return false;
        }
        let mut chol = DMatrix::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for j in 0..n {
            chol[(n, j)] = row[j];
        }
        chol[(n, n)] = pivot2.sqrt();
        self.chol = chol;
        true
    }

    fn refactor(&mut self, inputs: &[InputPoint], noise_var: f64) -> Result<()> {
        let n = inputs.len();
        let gram = DMatrix::from_fn(n, n, |i, j| self.kernel.eval_unchecked(&inputs[i], &inputs[j]));
        for &jitter in JITTER_LADDER.iter().filter(|j| **j >= self.jitter) {
            let mut a = gram.clone();
            for i in 0..n {
                a[(i, i)] += noise_var + jitter;
            }
            if let Some(c) = a.cholesky() {
                if jitter > 0.0 {
                    log::warn!("gram matrix needed jitter {jitter:e} to factorize (n = {n})");
                }
                self.chol = c.unpack();
                self.jitter = jitter;
                return Ok(());
            }
        }
        let d = gram.diagonal();
        Err(Error::Factorization {
            size: n,
            max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
            min_diag: d.min(),
            max_diag: d.max(),
        })
    }

    fn solve_alpha(&mut self, observations: &[Vec<f64>]) {
        let n = observations.len();
        let y = DMatrix::from_fn(n, self.outputs.len(), |j, c| observations[j][self.outputs[c]]);
        let tmp = self
            .chol
            .solve_lower_triangular(&y)
            .expect("cholesky factor has a non-zero diagonal");
        self.alpha = self
            .chol
            .tr_solve_lower_triangular(&tmp)
            .expect("cholesky factor has a non-zero diagonal");
    }
}
