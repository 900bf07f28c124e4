//! Parameter tensors and their initialization.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::{seeds, Result};

/// Weights for one encoder layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All model weights plus the config that shaped them.
///
/// Gradients and optimizer moments reuse this struct (zeroed), so anything
/// that walks parameters elementwise can zip [`Parameters::tensors_mut`]
/// streams, which enumerate tensors in a fixed documented order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub config: ModelConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

fn normal_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, 0.02).expect("valid stddev");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Fresh parameters for a config.
///
/// Matrices and embeddings draw from N(0, 0.02) off one ChaCha8 stream
/// seeded by `config.seed`; biases start at zero and layer-norm gains at
/// one. The draw order is: token embeddings, position embeddings, then per
/// layer wq, wk, wv, wo, w1, w2, and finally the output head.
pub fn init_params(config: &ModelConfig) -> Result<Parameters> {
    config.validate()?;
    let mut rng = seeds::rng(config.seed, "model/init");
    let d = config.d_model;
    let ff = config.d_ff();

    let tok_emb = normal_mat(config.vocab_size, d, &mut rng);
    let pos_emb = normal_mat(config.max_len, d, &mut rng);
    let layers = (0..config.n_layers)
        .map(|_| LayerParams {
            wq: normal_mat(d, d, &mut rng),
            wk: normal_mat(d, d, &mut rng),
            wv: normal_mat(d, d, &mut rng),
            wo: normal_mat(d, d, &mut rng),
            w1: normal_mat(d, ff, &mut rng),
            w2: normal_mat(ff, d, &mut rng),
            bq: Array1::zeros(d),
            bk: Array1::zeros(d),
            bv: Array1::zeros(d),
            bo: Array1::zeros(d),
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            b1: Array1::zeros(ff),
            b2: Array1::zeros(d),
        })
        .collect();
    let out_w = normal_mat(d, config.vocab_size, &mut rng);

    Ok(Parameters {
        config: *config,
        tok_emb,
        pos_emb,
        layers,
        lnf_g: Array1::ones(d),
        lnf_b: Array1::zeros(d),
        out_w,
        out_b: Array1::zeros(config.vocab_size),
    })
}

impl Parameters {
    /// All-zero parameters with the same shapes; the shape donor for
    /// gradients and optimizer moments.
    pub fn zeros(config: &ModelConfig) -> Result<Parameters> {
        let mut p = init_params(config)?;
        for (_, mut t) in p.tensors_mut() {
            t.fill(0.0);
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Parameters {
        Parameters::zeros(&self.config).expect("own config is valid")
    }

    /// Named views of every tensor, in the fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = vec![
            ("tok_emb".into(), self.tok_emb.view().into_dyn()),
            ("pos_emb".into(), self.pos_emb.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.wq"), l.wq.view().into_dyn()));
            out.push((format!("layers.{i}.wk"), l.wk.view().into_dyn()));
            out.push((format!("layers.{i}.wv"), l.wv.view().into_dyn()));
            out.push((format!("layers.{i}.wo"), l.wo.view().into_dyn()));
            out.push((format!("layers.{i}.bq"), l.bq.view().into_dyn()));
            out.push((format!("layers.{i}.bk"), l.bk.view().into_dyn()));
            out.push((format!("layers.{i}.bv"), l.bv.view().into_dyn()));
            out.push((format!("layers.{i}.bo"), l.bo.view().into_dyn()));
            out.push((format!("layers.{i}.ln1_g"), l.ln1_g.view().into_dyn()));
            out.push((format!("layers.{i}.ln1_b"), l.ln1_b.view().into_dyn()));
            out.push((format!("layers.{i}.ln2_g"), l.ln2_g.view().into_dyn()));
            out.push((format!("layers.{i}.ln2_b"), l.ln2_b.view().into_dyn()));
            out.push((format!("layers.{i}.w1"), l.w1.view().into_dyn()));
            out.push((format!("layers.{i}.b1"), l.b1.view().into_dyn()));
            out.push((format!("layers.{i}.w2"), l.w2.view().into_dyn()));
            out.push((format!("layers.{i}.b2"), l.b2.view().into_dyn()));
        }
        out.push(("lnf_g".into(), self.lnf_g.view().into_dyn()));
        out.push(("lnf_b".into(), self.lnf_b.view().into_dyn()));
        out.push(("out_w".into(), self.out_w.view().into_dyn()));
        out.push(("out_b".into(), self.out_b.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`Parameters::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, f64>)> = vec![
            ("tok_emb".into(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".into(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.wq"), l.wq.view_mut().into_dyn()));
            out.push((format!("layers.{i}.wk"), l.wk.view_mut().into_dyn()));
            out.push((format!("layers.{i}.wv"), l.wv.view_mut().into_dyn()));
            out.push((format!("layers.{i}.wo"), l.wo.view_mut().into_dyn()));
            out.push((format!("layers.{i}.bq"), l.bq.view_mut().into_dyn()));
            out.push((format!("layers.{i}.bk"), l.bk.view_mut().into_dyn()));
            out.push((format!("layers.{i}.bv"), l.bv.view_mut().into_dyn()));
            out.push((format!("layers.{i}.bo"), l.bo.view_mut().into_dyn()));
            out.push((format!("layers.{i}.ln1_g"), l.ln1_g.view_mut().into_dyn()));
            out.push((format!("layers.{i}.ln1_b"), l.ln1_b.view_mut().into_dyn()));
            out.push((format!("layers.{i}.ln2_g"), l.ln2_g.view_mut().into_dyn()));
            out.push((format!("layers.{i}.ln2_b"), l.ln2_b.view_mut().into_dyn()));
            out.push((format!("layers.{i}.w1"), l.w1.view_mut().into_dyn()));
            out.push((format!("layers.{i}.b1"), l.b1.view_mut().into_dyn()));
            out.push((format!("layers.{i}.w2"), l.w2.view_mut().into_dyn()));
            out.push((format!("layers.{i}.b2"), l.b2.view_mut().into_dyn()));
        }
        out.push(("lnf_g".into(), self.lnf_g.view_mut().into_dyn()));
        out.push(("lnf_b".into(), self.lnf_b.view_mut().into_dyn()));
        out.push(("out_w".into(), self.out_w.view_mut().into_dyn()));
        out.push(("out_b".into(), self.out_b.view_mut().into_dyn()));
        out
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds `other`'s tensors elementwise, used for gradient accumulation.
    pub fn add_assign(&mut self, other: &Parameters) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.zip_mut_with(&b, |x, y| *x += y);
        }
    }

    /// Scales every tensor, used to average accumulated gradients.
    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }

    /// True if any tensor holds a NaN or infinity.
    pub fn any_non_finite(&self) -> bool {
        self.tensors()
            .iter()
            .any(|(_, t)| t.iter().any(|x| !x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let c = ModelConfig::desk(50, 9);
        let a = init_params(&c).unwrap();
        let b = init_params(&c).unwrap();
        assert_eq!(a, b);

        let c2 = ModelConfig { seed: 10, ..c };
        let d = init_params(&c2).unwrap();
        assert_ne!(a.tok_emb, d.tok_emb);
    }

    #[test]
    fn init_respects_shape_and_moments() {
        let c = ModelConfig::desk(80, 3);
        let p = init_params(&c).unwrap();
        assert_eq!(p.tok_emb.shape(), &[80, 64]);
        assert_eq!(p.pos_emb.shape(), &[64, 64]);
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].w1.shape(), &[64, 128]);
        assert_eq!(p.layers[0].w2.shape(), &[128, 64]);
        assert_eq!(p.out_w.shape(), &[64, 80]);
        assert!(p.layers[0].bq.iter().all(|&x| x == 0.0));
        assert!(p.layers[0].ln1_g.iter().all(|&x| x == 1.0));

        // Weight draws should look like N(0, 0.02).
        let flat: Vec<f64> = p.tok_emb.iter().copied().collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let var = flat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / flat.len() as f64;
        assert!(mean.abs() < 2e-3, "mean {mean}");
        assert!((var.sqrt() - 0.02).abs() < 2e-3, "std {}", var.sqrt());
    }

    #[test]
    fn invalid_config_fails_init() {
        let mut c = ModelConfig::desk(0, 1);
        assert!(init_params(&c).is_err());
        c.vocab_size = 10;
        c.d_model = 63;
        assert!(init_params(&c).is_err());
    }

    #[test]
    fn tensor_walk_covers_every_parameter_once() {
        let c = ModelConfig::desk(30, 2);
        let p = init_params(&c).unwrap();
        let d = 64usize;
        let ff = 128usize;
        let per_layer = 4 * d * d + 4 * d + 4 * d + d * ff + ff + ff * d + d;
        let expected = 30 * d + 64 * d + 2 * per_layer + 2 * d + d * 30 + 30;
        assert_eq!(p.n_params(), expected);

        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut mp = p.clone();
        let names_mut: Vec<String> = mp.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names[0], "tok_emb");
        assert!(names.contains(&"layers.1.w2".to_string()));
    }

    #[test]
    fn accumulate_and_scale_behave_elementwise() {
        let c = ModelConfig::desk(10, 4);
        let p = init_params(&c).unwrap();
        let mut acc = p.zeros_like();
        acc.add_assign(&p);
        acc.add_assign(&p);
        acc.scale(0.5);
        assert_eq!(acc, p);
        assert!(!acc.any_non_finite());
        acc.out_b[3] = f64::NAN;
        assert!(acc.any_non_finite());
    }
}
