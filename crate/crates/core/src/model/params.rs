use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{param_count, GptConfig};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;

/// Per-layer tensors, in storage order.
pub const LAYER_FIELDS: [&str; 12] = [
    "ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b", "ln2_g", "ln2_b", "fc_w", "fc_b",
    "fcproj_w", "fcproj_b",
];

/// Offsets of each field inside a layer's block of tensors.
pub(crate) mod field {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const QKV_W: usize = 2;
    pub const QKV_B: usize = 3;
    pub const PROJ_W: usize = 4;
    pub const PROJ_B: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const FC_W: usize = 8;
    pub const FC_B: usize = 9;
    pub const FCPROJ_W: usize = 10;
    pub const FCPROJ_B: usize = 11;
}

/// All model weights as an ordered list of named tensors. Matrices are
/// stored `[in, out]`; the token table is `[vocab, d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GptParams<F: Scalar = f32> {
    config: GptConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

/// Names and shapes for a config, in storage order.
pub fn param_layout(cfg: &GptConfig) -> Vec<(String, Vec<usize>)> {
    let (v, t, d) = (cfg.vocab_size, cfg.seq_len, cfg.d_model);
    let mut out = vec![
        ("wte".to_string(), vec![v, d]),
        ("wpe".to_string(), vec![t, d]),
    ];
    for l in 0..cfg.n_layer {
        let shapes = [
            vec![d],
            vec![d],
            vec![d, 3 * d],
            vec![3 * d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, 4 * d],
            vec![4 * d],
            vec![4 * d, d],
            vec![d],
        ];
        for (name, shape) in LAYER_FIELDS.iter().zip(shapes) {
            out.push((format!("h{l}.{name}"), shape));
        }
    }
    out.push(("lnf_g".to_string(), vec![d]));
    out.push(("lnf_b".to_string(), vec![d]));
    if !cfg.tie_embeddings {
        out.push(("lm_head".to_string(), vec![v, d]));
    }
    out
}

impl<F: Scalar> GptParams<F> {
    /// Normal(0, 0.02) weights, residual output projections scaled by
    /// `1/sqrt(2 * n_layer)`, zero biases, unit norm scales.
    pub fn init(cfg: &GptConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid =
            Normal::new(0.0, INIT_STD / (2.0 * cfg.n_layer as f64).sqrt()).expect("valid std");
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in param_layout(cfg) {
            let n = shape.iter().product();
            let short = name.rsplit('.').next().unwrap_or(&name);
            let data: Vec<F> = if short.ends_with("_g") {
                vec![F::one(); n]
            } else if shape.len() == 1 {
                vec![F::zero(); n]
            } else {
                let dist = if short == "proj_w" || short == "fcproj_w" {
                    &resid
                } else {
                    &base
                };
                (0..n).map(|_| F::c(dist.sample(&mut rng))).collect()
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config: *cfg,
            names,
            tensors,
        })
    }

    /// Builds from named tensors, checking names and shapes against `cfg`.
    pub fn from_named(cfg: &GptConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        cfg.validate()?;
        let layout = param_layout(cfg);
        if layout.len() != named.len() {
            return Err(Error::ConfigInvalid(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((want, shape), (name, t)) in layout.into_iter().zip(named) {
            if want != name || t.shape() != shape.as_slice() {
                return Err(Error::ConfigInvalid(format!(
                    "parameter {name} {:?} does not match expected {want} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config: *cfg,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &GptConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    /// Whether weight decay applies: matrices and embedding tables only.
    pub fn decays(&self, index: usize) -> bool {
        self.tensors[index].ndim() >= 2
    }

    pub fn numel(&self) -> u64 {
        self.tensors.iter().map(|t| t.numel() as u64).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<G: Scalar>(&self) -> GptParams<G> {
        GptParams {
            config: self.config,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Index arithmetic over the storage order of [`param_layout`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    n_layer: usize,
    tied: bool,
}

impl Layout {
    pub fn new(cfg: &GptConfig) -> Self {
        Self {
            n_layer: cfg.n_layer,
            tied: cfg.tie_embeddings,
        }
    }

    pub fn layer(&self, l: usize, field: usize) -> usize {
        2 + l * LAYER_FIELDS.len() + field
    }

    pub fn final_norm(&self) -> (usize, usize) {
        let base = 2 + self.n_layer * LAYER_FIELDS.len();
        (base, base + 1)
    }

    pub fn head(&self) -> usize {
        if self.tied {
            0
        } else {
            self.final_norm().1 + 1
        }
    }
}

/// Checks the stored count against the closed form.
pub fn count_matches(params: &GptParams<impl Scalar>) -> bool {
    params.numel() == param_count(params.config())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_closed_form() {
        for tie in [true, false] {
            let cfg = GptConfig {
                tie_embeddings: tie,
                ..GptConfig::tiny(64)
            };
            let p = GptParams::<f32>::init(&cfg, 1).unwrap();
            assert!(count_matches(&p));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = GptConfig::tiny(64);
        let a = GptParams::<f32>::init(&cfg, 7).unwrap();
        let b = GptParams::<f32>::init(&cfg, 7).unwrap();
        let c = GptParams::<f32>::init(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn biases_zero_and_scales_one() {
        let cfg = GptConfig::tiny(64);
        let p = GptParams::<f32>::init(&cfg, 3).unwrap();
        for (name, t) in p.names().iter().zip(p.tensors()) {
            if name.ends_with("_b") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
            if name.ends_with("_g") {
                assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
            }
        }
        let std = |t: &Tensor<f32>| {
            let n = t.numel() as f64;
            (t.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / n).sqrt()
        };
        let big = GptParams::<f32>::init(&GptConfig { d_model: 64, ..cfg }, 3).unwrap();
        assert!((std(big.get("h0.fc_w").unwrap()) - 0.02).abs() < 0.002);
        assert!((std(big.get("h0.fcproj_w").unwrap()) - 0.01).abs() < 0.001);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let cfg = GptConfig::tiny(64);
        let p = GptParams::<f32>::init(&cfg, 3).unwrap();
        let mut named: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        named[1].1 = Tensor::zeros(vec![3, 3]);
        assert!(GptParams::from_named(&cfg, named).is_err());
    }
}
