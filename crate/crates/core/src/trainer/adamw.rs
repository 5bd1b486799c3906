use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// AdamW and clipping hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            weight_decay: 0.1,
            clip_norm: 1.0,
        }
    }
}

impl OptimHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm >= 0.0;
        if !ok {
            return Err(Error::ConfigInvalid(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<F: Scalar = f32> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Scalar> OptimState<F> {
    pub fn zeros(params: &[Tensor<F>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            t: 0,
        }
    }
}

fn first_non_finite<F: Scalar>(grads: &[Vec<F>]) -> Option<(usize, usize)> {
    grads.iter().enumerate().find_map(|(i, g)| {
        g.iter().position(|x| !x.is_finite()).map(|j| (i, j))
    })
}

/// One decoupled-decay Adam update. Element math runs in f64 and is rounded
/// once on store. `decays[i]` selects which tensors receive weight decay.
/// A non-finite gradient aborts with parameters and state untouched.
pub fn adamw_step<F: Scalar>(
    params: &mut [Tensor<F>],
    decays: &[bool],
    grads: &[Vec<F>],
    state: &mut OptimState<F>,
    hyper: &OptimHyper,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || decays.len() != params.len() || state.m.len() != params.len()
    {
        return Err(Error::ShapeMismatch {
            op: "adamw",
            left: vec![params.len()],
            right: vec![grads.len(), decays.len(), state.m.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "adamw",
                left: p.shape().to_vec(),
                right: vec![g.len()],
            });
        }
    }
    if let Some((i, j)) = first_non_finite(grads) {
        return Err(Error::NonFiniteGradient(format!("tensor {i} entry {j}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let wd = if decays[i] { hyper.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j].f64();
            let mj = b1 * m[j].f64() + (1.0 - b1) * g;
            let vj = b2 * v[j].f64() + (1.0 - b2) * g * g;
            m[j] = F::c(mj);
            v[j] = F::c(vj);
            let m_hat = mj / c1;
            let v_hat = vj / c2;
            let wf = w.f64();
            *w = F::c(wf - lr * m_hat / (v_hat.sqrt() + hyper.epsilon) - lr * wd * wf);
        }
    }
    Ok(())
}

/// Scales gradients so their global L2 norm is at most `clip_norm` and
/// returns the norm before clipping. `clip_norm == 0` only measures.
pub fn clip_gradients<F: Scalar>(grads: &mut [Vec<F>], clip_norm: f64) -> Result<f64> {
    if let Some((i, j)) = first_non_finite(grads) {
        return Err(Error::NonFiniteGradient(format!("tensor {i} entry {j}")));
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt();
    if clip_norm > 0.0 && norm > clip_norm {
        let s = F::c(clip_norm / norm);
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x *= s);
    }
    Ok(norm)
}
