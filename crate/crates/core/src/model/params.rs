use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lstm::LstmLayer;
use super::{ModelConfig, ModelError, Tensor};
use crate::textnorm::CaseFactor;

/// All trainable tensors of the encoder-decoder.
///
/// Gradients use the same type, so optimizers and checkpoints can walk both
/// with [`ModelParams::visit`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub src_embed: Array2<f64>,
    pub src_case_embed: Array2<f64>,
    pub tgt_embed: Array2<f64>,
    pub tgt_case_embed: Array2<f64>,
    pub enc_fwd: Vec<LstmLayer>,
    pub enc_bwd: Vec<LstmLayer>,
    pub dec: Vec<LstmLayer>,
    /// `W_a`, `H × H`
    pub attn: Array2<f64>,
    /// `W_c` applied to `[context; h]`, `2H × H`
    pub combine: Array2<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
    pub case_w: Array2<f64>,
    pub case_b: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        let input = config.embedding + config.case_embedding;
        let dec_input = input + if config.input_feed { h } else { 0 };
        let stack = |first: usize| -> Vec<LstmLayer> {
            (0..config.layers)
                .map(|l| LstmLayer::zeros(if l == 0 { first } else { h }, h))
                .collect()
        };
        ModelParams {
            config: config.clone(),
            src_embed: Array2::zeros((config.src_vocab, config.embedding)),
            src_case_embed: Array2::zeros((CaseFactor::COUNT, config.case_embedding)),
            tgt_embed: Array2::zeros((config.tgt_vocab, config.embedding)),
            tgt_case_embed: Array2::zeros((CaseFactor::COUNT, config.case_embedding)),
            enc_fwd: stack(input),
            enc_bwd: stack(input),
            dec: stack(dec_input),
            attn: Array2::zeros((h, h)),
            combine: Array2::zeros((2 * h, h)),
            out_w: Array2::zeros((h, config.tgt_vocab)),
            out_b: Array1::zeros(config.tgt_vocab),
            case_w: Array2::zeros((h, CaseFactor::COUNT)),
            case_b: Array1::zeros(CaseFactor::COUNT),
        }
    }

    /// Uniform initialization in `[-init_scale, init_scale]`, visiting tensors
    /// in [`ModelParams::visit`] order.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = config.init_scale;
        params.visit_mut(|_, mut t| {
            t.mapv_inplace(|_| {
                if scale > 0.0 {
                    rng.gen_range(-scale..=scale)
                } else {
                    0.0
                }
            })
        });
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Calls `f` on every tensor with a stable dotted name.
    pub fn visit<F: FnMut(&str, ArrayViewD<'_, f64>)>(&self, mut f: F) {
        f("src_embed", self.src_embed.view().into_dyn());
        f("src_case_embed", self.src_case_embed.view().into_dyn());
        f("tgt_embed", self.tgt_embed.view().into_dyn());
        f("tgt_case_embed", self.tgt_case_embed.view().into_dyn());
        for (prefix, stack) in [("enc_fwd", &self.enc_fwd), ("enc_bwd", &self.enc_bwd), ("dec", &self.dec)] {
            for (l, layer) in stack.iter().enumerate() {
                f(&format!("{prefix}.{l}.w_x"), layer.w_x.view().into_dyn());
                f(&format!("{prefix}.{l}.w_h"), layer.w_h.view().into_dyn());
                f(&format!("{prefix}.{l}.bias"), layer.bias.view().into_dyn());
            }
        }
        f("attn", self.attn.view().into_dyn());
        f("combine", self.combine.view().into_dyn());
        f("out_w", self.out_w.view().into_dyn());
        f("out_b", self.out_b.view().into_dyn());
        f("case_w", self.case_w.view().into_dyn());
        f("case_b", self.case_b.view().into_dyn());
    }

    pub fn visit_mut<F: FnMut(&str, ArrayViewMutD<'_, f64>)>(&mut self, mut f: F) {
        f("src_embed", self.src_embed.view_mut().into_dyn());
        f("src_case_embed", self.src_case_embed.view_mut().into_dyn());
        f("tgt_embed", self.tgt_embed.view_mut().into_dyn());
        f("tgt_case_embed", self.tgt_case_embed.view_mut().into_dyn());
        for (prefix, stack) in [
            ("enc_fwd", &mut self.enc_fwd),
            ("enc_bwd", &mut self.enc_bwd),
            ("dec", &mut self.dec),
        ] {
            for (l, layer) in stack.iter_mut().enumerate() {
                f(&format!("{prefix}.{l}.w_x"), layer.w_x.view_mut().into_dyn());
                f(&format!("{prefix}.{l}.w_h"), layer.w_h.view_mut().into_dyn());
                f(&format!("{prefix}.{l}.bias"), layer.bias.view_mut().into_dyn());
            }
        }
        f("attn", self.attn.view_mut().into_dyn());
        f("combine", self.combine.view_mut().into_dyn());
        f("out_w", self.out_w.view_mut().into_dyn());
        f("out_b", self.out_b.view_mut().into_dyn());
        f("case_w", self.case_w.view_mut().into_dyn());
        f("case_b", self.case_b.view_mut().into_dyn());
    }

    /// Pairs every tensor of `self` with the same-named tensor of `other`.
    pub fn zip_mut<F>(&mut self, other: &ModelParams, mut f: F)
    where
        F: FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    {
        let mut others = Vec::new();
        other.visit(|_, t| others.push(t.to_owned()));
        let mut it = others.into_iter();
        self.visit_mut(|name, t| {
            let o = it.next().expect("same layout");
            f(name, t, o.view());
        });
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push(Tensor::from_view(name, t)));
        out
    }

    /// Overwrites every tensor from `tensors`, which must match names and shapes.
    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<(), ModelError> {
        let mut expected = Vec::new();
        self.visit(|name, t| expected.push((name.to_string(), t.shape().to_vec())));
        if expected.len() != tensors.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(ModelError::Shape(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        let mut it = tensors.iter();
        self.visit_mut(|_, mut dst| {
            let src = it.next().expect("checked above");
            for (d, s) in dst.iter_mut().zip(&src.data) {
                *d = *s;
            }
        });
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit(|_, t| sq += t.iter().map(|v| v * v).sum::<f64>());
        sq.sqrt()
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        let mut bad = None;
        self.visit(|name, t| {
            if bad.is_none() && !t.iter().all(|v| v.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        match bad {
            Some(name) => Err(ModelError::NonFinite(name)),
            None => Ok(()),
        }
    }

    /// Flat coordinate access in visit order, for gradient checks.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        let mut out = None;
        self.visit(|_, t| {
            if out.is_none() {
                if index < t.len() {
                    out = t.iter().nth(index).copied();
                } else {
                    index -= t.len();
                }
            }
        });
        out.expect("flat index in range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        let mut done = false;
        self.visit_mut(|_, mut t| {
            if !done {
                if index < t.len() {
                    *t.iter_mut().nth(index).expect("in range") = value;
                    done = true;
                } else {
                    index -= t.len();
                }
            }
        });
        assert!(done, "flat index in range");
    }

    /// Name of the tensor containing flat coordinate `index`.
    pub fn flat_name(&self, mut index: usize) -> String {
        let mut out = None;
        self.visit(|name, t| {
            if out.is_none() {
                if index < t.len() {
                    out = Some(name.to_string());
                } else {
                    index -= t.len();
                }
            }
        });
        out.expect("flat index in range")
    }
}
