use super::ModelConfig;
use crate::nn::{Gradients, Mat, ParamSet, Scalar};

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Adam<T> {
    pub m: Vec<Mat<T>>,
    pub v: Vec<Mat<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || -> Vec<Mat<T>> { params.iter().map(|(_, p)| Mat::zeros(p.rows(), p.cols())).collect() };
        Adam { m: zeros(), v: zeros() }
    }

    /// One bias-corrected update for 1-based `step`, with optional global-norm
    /// clipping. Returns the pre-clip gradient norm.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: Gradients<T>, cfg: &ModelConfig, step: u64) -> f64 {
        let norm = grads.sq_norm().sqrt();
        let clip = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            cfg.clip_norm / norm
        } else {
            1.0
        };
        let lr = cfg.lr_at(step);
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let (b1t, b2t) = (T::of(b1), T::of(b2));
        let (one_b1, one_b2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let eps = T::of(cfg.adam_eps);
        let clip = T::of(clip);
        for (i, g) in grads.into_vec().into_iter().enumerate() {
            let Some(g) = g else { continue };
            let id = crate::nn::ParamId(i);
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pp, mm), vv), &gg) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                let gg = gg * clip;
                *mm = b1t * *mm + one_b1 * gg;
                *vv = b2t * *vv + one_b2 * gg * gg;
                *pp -= step_size * *mm / ((*vv).sqrt() / bc2_sqrt + eps);
            }
        }
        norm
    }
}
