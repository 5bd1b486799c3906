use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttentionSpec, AttnBackward, Dd, Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::AttnTiling;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Step for the double-double reference differences.
pub const FD_STEP_REF: f64 = 1e-9;

/// Arithmetic the analytic gradient is computed in. The reference central
/// differences are evaluated in double-double at the same (rounded) point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, entry)` of the worst entry.
    pub worst: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            checked: 0,
            worst: (0, 0),
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        }
    }

    fn record(&mut self, at: (usize, usize), analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.checked == 1 {
            self.max_rel_error = err;
            self.worst = at;
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
    }
}

/// Relative error `|a - c| / max(|a|, |c|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A scalar function that can be recorded in either precision.
pub trait CheckFn {
    fn record<F: Scalar>(&self, g: &mut Graph<'_, F>, inputs: &[Var]) -> Result<Var>;
}

fn finite_scalar<F: Scalar>(g: &Graph<'_, F>, out: Var) -> Result<F> {
    if g.value(out).len() != 1 {
        return Err(Error::NotScalarLoss(g.shape(out).to_vec()));
    }
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFiniteValue(format!("function value {}", v.f64())));
    }
    Ok(v)
}

fn analytic<F: Scalar>(
    inputs: &[Tensor<F>],
    build: impl Fn(&mut Graph<'_, F>, &[Var]) -> Result<Var>,
) -> Result<Vec<Vec<f64>>> {
    let inputs: Vec<Tensor<F>> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(true);
            t
        })
        .collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = build(&mut g, &vars)?;
    finite_scalar(&g, out)?;
    let grads = g.backward(out)?;
    let mut res = Vec::with_capacity(vars.len());
    for (i, (&v, t)) in vars.iter().zip(&inputs).enumerate() {
        let d: Vec<f64> = grads.wrt(v, t.numel()).iter().map(|x| x.f64()).collect();
        if let Some(j) = d.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue(format!("gradient of input {i} entry {j}")));
        }
        res.push(d);
    }
    Ok(res)
}

fn central<F: Scalar>(
    inputs: &[Tensor<F>],
    eps: f64,
    analytic: &[&[Vec<f64>]],
    build: impl Fn(&mut Graph<'_, F>, &[Var]) -> Result<Var>,
) -> Result<Vec<GradCheckReport>> {
    let mut work = inputs.to_vec();
    let eval = |work: &[Tensor<F>]| -> Result<F> {
        let mut g = Graph::new();
        let vars: Vec<Var> = work.iter().map(|t| g.param(t)).collect();
        let out = build(&mut g, &vars)?;
        finite_scalar(&g, out)
    };
    let mut reports = vec![GradCheckReport::new(); analytic.len()];
    for i in 0..work.len() {
        for j in 0..work[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + F::c(eps);
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - F::c(eps);
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / F::c(2.0 * eps);
            for (report, a) in reports.iter_mut().zip(analytic) {
                report.record((i, j), a[i][j], numeric.f64());
            }
        }
    }
    Ok(reports)
}

/// Checks every entry of every input against central differences with step
/// `eps`, all in the inputs' own precision. `build` records the scalar
/// function on a fresh graph each call.
pub fn grad_check<F: Scalar>(
    inputs: &[Tensor<F>],
    eps: f64,
    build: impl Fn(&mut Graph<'_, F>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    if let Some(bad) = inputs.iter().position(|t| !t.all_finite()) {
        return Err(Error::NonFiniteValue(format!("input {bad}")));
    }
    let a = analytic(inputs, &build)?;
    Ok(central(inputs, eps, &[&a], &build)?.remove(0))
}

/// Compares analytic gradients from the engine running in `precision`
/// against double-double central differences with step `eps`.
pub fn grad_check_in<C: CheckFn>(
    inputs: &[Tensor<f64>],
    eps: f64,
    precision: Precision,
    f: &C,
) -> Result<GradCheckReport> {
    if let Some(bad) = inputs.iter().position(|t| !t.all_finite()) {
        return Err(Error::NonFiniteValue(format!("input {bad}")));
    }
    let a = match precision {
        Precision::Double => analytic(inputs, |g, v| f.record(g, v))?,
        Precision::Single => {
            let single: Vec<Tensor<f32>> = inputs.iter().map(Tensor::cast).collect();
            analytic(&single, |g, v| f.record(g, v))?
        }
    };
    let point: Vec<Tensor<Dd>> = match precision {
        Precision::Double => inputs.iter().map(Tensor::cast).collect(),
        Precision::Single => inputs
            .iter()
            .map(|t| t.cast::<f32>().cast())
            .collect(),
    };
    Ok(central(&point, eps, &[&a], |g, v| f.record(g, v))?.remove(0))
}

/// Checks the 32-bit and 64-bit engines at the same 32-bit point against
/// one shared sweep of double-double central differences. Returns the
/// `(single, double)` reports.
pub fn grad_check_dual<C: CheckFn>(
    inputs: &[Tensor<f32>],
    eps: f64,
    f: &C,
) -> Result<(GradCheckReport, GradCheckReport)> {
    if let Some(bad) = inputs.iter().position(|t| !t.all_finite()) {
        return Err(Error::NonFiniteValue(format!("input {bad}")));
    }
    let single = analytic(inputs, |g, v| f.record(g, v))?;
    let wide: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let double = analytic(&wide, |g, v| f.record(g, v))?;
    let point: Vec<Tensor<Dd>> = inputs.iter().map(Tensor::cast).collect();
    let mut r = central(&point, eps, &[&single, &double], |g, v| f.record(g, v))?;
    let double = r.pop().expect("two reports");
    let single = r.pop().expect("two reports");
    Ok((single, double))
}

/// One primitive of the gradient engine, with fixed small shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    MatMulT,
    Add,
    AddBias,
    Mul,
    Gelu,
    LayerNorm,
    Embedding,
    CrossEntropy,
    Attention,
    AttentionNaive,
    Dropout,
    ScaleReshape,
}

impl Primitive {
    pub const ALL: [Primitive; 13] = [
        Primitive::MatMul,
        Primitive::MatMulT,
        Primitive::Add,
        Primitive::AddBias,
        Primitive::Mul,
        Primitive::Gelu,
        Primitive::LayerNorm,
        Primitive::Embedding,
        Primitive::CrossEntropy,
        Primitive::Attention,
        Primitive::AttentionNaive,
        Primitive::Dropout,
        Primitive::ScaleReshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::MatMulT => "matmul_t",
            Primitive::Add => "add",
            Primitive::AddBias => "add_bias",
            Primitive::Mul => "mul",
            Primitive::Gelu => "gelu",
            Primitive::LayerNorm => "layer_norm",
            Primitive::Embedding => "embedding",
            Primitive::CrossEntropy => "cross_entropy",
            Primitive::Attention => "attention",
            Primitive::AttentionNaive => "attention_naive",
            Primitive::Dropout => "dropout",
            Primitive::ScaleReshape => "scale_reshape",
        }
    }

    fn shapes(self) -> Vec<Vec<usize>> {
        match self {
            Primitive::MatMul => vec![vec![3, 4], vec![4, 5]],
            Primitive::MatMulT => vec![vec![3, 4], vec![5, 4]],
            Primitive::Add | Primitive::Mul => vec![vec![2, 3], vec![2, 3]],
            Primitive::AddBias => vec![vec![3, 4], vec![4]],
            Primitive::Gelu => vec![vec![3, 4]],
            Primitive::LayerNorm => vec![vec![3, 5], vec![5], vec![5]],
            Primitive::Embedding => vec![vec![5, 3]],
            Primitive::CrossEntropy => vec![vec![3, 6]],
            Primitive::Attention | Primitive::AttentionNaive => vec![vec![10, 12]],
            Primitive::Dropout | Primitive::ScaleReshape => vec![vec![2, 3]],
        }
    }

    fn attention_spec(self) -> AttentionSpec {
        AttentionSpec {
            batch: 2,
            seq: 5,
            heads: 2,
            tiling: AttnTiling {
                block_rows: 2,
                block_cols: 3,
            },
            causal: true,
            backward: if self == Primitive::AttentionNaive {
                AttnBackward::Naive
            } else {
                AttnBackward::Recompute
            },
        }
    }
}

/// Contracts `out` with fixed weights so every output entry matters.
fn project<F: Scalar>(g: &mut Graph<'_, F>, out: Var) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    let shape = g.shape(out).to_vec();
    let n = super::numel(&shape);
    let w = (0..n).map(|_| F::c(rng.random_range(0.5..1.5))).collect();
    let w = g.input(shape, w, false)?;
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

impl CheckFn for Primitive {
    fn record<F: Scalar>(&self, g: &mut Graph<'_, F>, v: &[Var]) -> Result<Var> {
        let y = match self {
            Primitive::MatMul => g.matmul(v[0], v[1])?,
            Primitive::MatMulT => g.matmul_t(v[0], v[1])?,
            Primitive::Add => g.add(v[0], v[1])?,
            Primitive::AddBias => g.add_bias(v[0], v[1])?,
            Primitive::Mul => g.mul(v[0], v[1])?,
            Primitive::Gelu => g.gelu(v[0]),
            Primitive::LayerNorm => g.layer_norm(v[0], v[1], v[2])?,
            Primitive::Embedding => g.embedding(v[0], &[4, 0, 4, 2])?,
            Primitive::CrossEntropy => return g.cross_entropy(v[0], &[1, 5, 0]),
            Primitive::Attention | Primitive::AttentionNaive => {
                g.attention(v[0], self.attention_spec())?
            }
            Primitive::Dropout => {
                let mask = (0..6)
                    .map(|i| if i % 3 == 0 { F::zero() } else { F::c(2.0) })
                    .collect();
                g.dropout(v[0], mask)?
            }
            Primitive::ScaleReshape => {
                let y = g.scale(v[0], F::c(-1.5));
                g.reshape(y, vec![3, 2])?
            }
        };
        project(g, y)
    }
}

/// Result for one primitive in [`primitive_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// Runs [`grad_check_in`] over every primitive on random inputs.
pub fn primitive_suite(seed: u64, precision: Precision) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Primitive::ALL
        .iter()
        .map(|&p| {
            let inputs: Vec<Tensor<f64>> = p
                .shapes()
                .into_iter()
                .map(|shape| {
                    let n = super::numel(&shape);
                    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    Tensor::new(shape, data)
                })
                .collect::<Result<_>>()?;
            let report = grad_check_in(&inputs, FD_STEP_REF, precision, &p)?;
            Ok(PrimitiveCheck {
                name: p.name(),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let report = grad_check(std::slice::from_ref(&x), FD_STEP, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4);
        let mut x = x;
        x.set_requires_grad(true);
        let mut g = Graph::new();
        let xv = g.param(&x);
        let sq = g.mul(xv, xv).unwrap();
        let loss = g.sum(sq);
        assert_eq!(g.backward(loss).unwrap().get(xv).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn uniform_cross_entropy() {
        let x = Tensor::new(vec![1, 4], vec![0.0f64; 4]).unwrap();
        let report = grad_check(std::slice::from_ref(&x), FD_STEP, |g, v| g.cross_entropy(v[0], &[2])).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let mut x = x.cast::<f32>();
        x.set_requires_grad(true);
        let mut g = Graph::new();
        let xv = g.param(&x);
        let loss = g.cross_entropy(xv, &[2]).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(xv).unwrap(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(vec![4], vec![0.5f64, -1.0, 2.0, 3.0]).unwrap();
        let report = grad_check(&[x], FD_STEP, |g, v| {
            let y = g.scale(v[0], 3.0);
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn non_finite_is_reported() {
        let x = Tensor::new(vec![1], vec![f64::MAX]).unwrap();
        let err = grad_check(&[x], FD_STEP, |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        });
        assert!(matches!(err, Err(Error::NonFiniteValue(_))));
    }

    #[test]
    fn primitives_in_64_bit() {
        for check in primitive_suite(3, Precision::Double).unwrap() {
            assert!(check.report.max_rel_error < 1e-6, "{} {:?}", check.name, check.report);
        }
    }

    #[test]
    fn primitives_in_32_bit() {
        for check in primitive_suite(3, Precision::Single).unwrap() {
            assert!(check.report.max_rel_error < 1e-3, "{} {:?}", check.name, check.report);
        }
    }
}
