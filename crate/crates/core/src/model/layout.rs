use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::nn::{Mat, ParamId, ParamSet, Scalar};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SelfAttn {
    pub norm: Norm,
    pub w_qkv: ParamId,
    pub b_qkv: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct CrossAttn {
    pub norm: Norm,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_kv: ParamId,
    pub b_kv: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    pub norm: Norm,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncLayer {
    pub attn: SelfAttn,
    pub ff: FeedForward,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecLayer {
    pub attn: SelfAttn,
    pub cross: CrossAttn,
    pub ff: FeedForward,
}

/// Where each weight lives in the flat [`ParamSet`]. Built in a fixed order,
/// so a seed fully determines the initial values.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embed: ParamId,
    pub out_proj: Option<ParamId>,
    pub out_bias: ParamId,
    pub enc: Vec<EncLayer>,
    pub enc_norm: Norm,
    pub dec: Vec<DecLayer>,
    pub dec_norm: Norm,
}

struct Builder<'a, T: Scalar, R: Rng> {
    params: &'a mut ParamSet<T>,
    rng: &'a mut R,
}

impl<'a, T: Scalar, R: Rng> Builder<'a, T, R> {
    fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let m = Mat::from_fn(fan_in, fan_out, |_, _| T::of(self.rng.gen_range(-a..a)));
        self.params.add(name, m)
    }

    fn zeros(&mut self, name: String, cols: usize) -> ParamId {
        self.params.add(name, Mat::zeros(1, cols))
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        let gain = self
            .params
            .add(format!("{name}.gain"), Mat::from_fn(1, d, |_, _| T::one()));
        let bias = self.zeros(format!("{name}.bias"), d);
        Norm { gain, bias }
    }

    fn self_attn(&mut self, name: &str, d: usize) -> SelfAttn {
        SelfAttn {
            norm: self.norm(&format!("{name}.norm"), d),
            // Q, K and V share one fused projection; initialize per block.
            w_qkv: {
                let a = (6.0 / (2 * d) as f64).sqrt();
                let m = Mat::from_fn(d, 3 * d, |_, _| T::of(self.rng.gen_range(-a..a)));
                self.params.add(format!("{name}.w_qkv"), m)
            },
            b_qkv: self.zeros(format!("{name}.b_qkv"), 3 * d),
            w_out: self.xavier(format!("{name}.w_out"), d, d),
            b_out: self.zeros(format!("{name}.b_out"), d),
        }
    }

    fn cross_attn(&mut self, name: &str, d: usize) -> CrossAttn {
        CrossAttn {
            norm: self.norm(&format!("{name}.norm"), d),
            w_q: self.xavier(format!("{name}.w_q"), d, d),
            b_q: self.zeros(format!("{name}.b_q"), d),
            w_kv: {
                let a = (6.0 / (2 * d) as f64).sqrt();
                let m = Mat::from_fn(d, 2 * d, |_, _| T::of(self.rng.gen_range(-a..a)));
                self.params.add(format!("{name}.w_kv"), m)
            },
            b_kv: self.zeros(format!("{name}.b_kv"), 2 * d),
            w_out: self.xavier(format!("{name}.w_out"), d, d),
            b_out: self.zeros(format!("{name}.b_out"), d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, ff: usize) -> FeedForward {
        FeedForward {
            norm: self.norm(&format!("{name}.norm"), d),
            w1: self.xavier(format!("{name}.w1"), d, ff),
            b1: self.zeros(format!("{name}.b1"), ff),
            w2: self.xavier(format!("{name}.w2"), ff, d),
            b2: self.zeros(format!("{name}.b2"), d),
        }
    }
}

impl Layout {
    /// Allocates and randomly initializes every parameter.
    pub fn build<T: Scalar, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> (Layout, ParamSet<T>) {
        let d = cfg.d_model;
        let mut params = ParamSet::default();
        let mut b = Builder {
            params: &mut params,
            rng,
        };
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let embed = {
            let m = Mat::from_fn(cfg.vocab_size, d, |_, _| T::of(normal.sample(b.rng)));
            b.params.add("embed", m)
        };
        let enc = (0..cfg.n_enc_layers)
            .map(|i| EncLayer {
                attn: b.self_attn(&format!("enc.{i}.attn"), d),
                ff: b.ff(&format!("enc.{i}.ff"), d, cfg.ff_dim),
            })
            .collect();
        let enc_norm = b.norm("enc.norm", d);
        let dec = (0..cfg.n_dec_layers)
            .map(|i| DecLayer {
                attn: b.self_attn(&format!("dec.{i}.attn"), d),
                cross: b.cross_attn(&format!("dec.{i}.cross"), d),
                ff: b.ff(&format!("dec.{i}.ff"), d, cfg.ff_dim),
            })
            .collect();
        let dec_norm = b.norm("dec.norm", d);
        let out_proj = (!cfg.tie_output).then(|| {
            let m = Mat::from_fn(cfg.vocab_size, d, |_, _| T::of(normal.sample(b.rng)));
            b.params.add("out_proj", m)
        });
        let out_bias = b.zeros("out_bias".into(), cfg.vocab_size);
        (
            Layout {
                embed,
                out_proj,
                out_bias,
                enc,
                enc_norm,
                dec,
                dec_norm,
            },
            params,
        )
    }

    /// Matrix used by the output projection.
    pub fn output_table(&self) -> ParamId {
        self.out_proj.unwrap_or(self.embed)
    }
}
