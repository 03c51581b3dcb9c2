use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub epochs_constant: usize,
    pub epochs_decay: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            epochs_constant: 100,
            epochs_decay: 100,
            batch_size: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr >= 0.0
            && self.base_lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_constant + self.epochs_decay
    }

    /// Constant `base_lr` for `epochs_constant` epochs, then linear to 0 over
    /// `epochs_decay` epochs; 0 from then on.
    pub fn lr(&self, epoch: usize) -> f32 {
        if epoch < self.epochs_constant {
            return self.base_lr;
        }
        if epoch >= self.total_epochs() {
            return 0.0;
        }
        let done = (epoch - self.epochs_constant) as f64 / self.epochs_decay as f64;
        (self.base_lr as f64 * (1.0 - done)) as f32
    }
}

pub fn lr_schedule(cfg: &OptimizerConfig, epoch: usize) -> f32 {
    cfg.lr(epoch)
}

/// First and second moment estimates for every tensor of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Moments {
    pub fn zeros(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        Moments {
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Checks that every moment tensor matches its parameter's shape.
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        for (name, p) in params.iter() {
            for (kind, map) in [("m", &self.m), ("v", &self.v)] {
                match map.get(name) {
                    Some(t) if t.shape() == p.shape() => {}
                    _ => {
                        return Err(Error::ModelMismatch(format!(
                            "{}: moment {kind} of {name} is missing or misshapen",
                            params.arch().tag.name()
                        )))
                    }
                }
            }
        }
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::ModelMismatch(format!(
                "{}: moment tensor count differs from parameter count",
                params.arch().tag.name()
            )));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Tensors whose
/// gradient holds a non-finite value are left untouched; their names are returned.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    moments: &mut Moments,
    lr: f32,
    cfg: &OptimizerConfig,
    t: u64,
) -> Result<Vec<String>> {
    if !(lr >= 0.0) || t == 0 {
        return Err(Error::Contract(format!("adam step needs lr ≥ 0 and t ≥ 1, got {lr} and {t}")));
    }
    let (b1, b2) = (cfg.beta1 as f64, cfg.beta2 as f64);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let mut skipped = Vec::new();
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::ModelMismatch(format!("no gradient for {name}")))?;
        let (m, v) = match (moments.m.get_mut(name), moments.v.get_mut(name)) {
            (Some(m), Some(v)) => (m, v),
            _ => return Err(Error::ModelMismatch(format!("no optimizer moments for {name}"))),
        };
        if g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::ModelMismatch(format!("shape mismatch in adam step for {name}")));
        }
        if !g.is_finite() {
            log::warn!("adam: non-finite gradient for {name}, update skipped");
            skipped.push(name.clone());
            continue;
        }
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = md[i] as f64 / c1;
            let vh = vd[i] as f64 / c2;
            pd[i] -= (lr as f64 * mh / (vh.sqrt() + cfg.eps as f64)) as f32;
        }
    }
    Ok(skipped)
}
