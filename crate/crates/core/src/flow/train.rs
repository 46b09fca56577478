//! CFM training: the flow-matching regression with the geometric endpoint
//! penalty, the cosine penalty ramp, an adaptive-moment optimizer with
//! decoupled weight decay, and the teacher-student consistency loss used by
//! reward-guided fine-tuning.

use super::{
    backward, forward_with_cache, is_trainable, sample_time, Architecture, EndpointPenalty,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::geom::PointConfiguration;
use crate::logging;
use crate::par;
use crate::sampler::sample_prior;
use crate::search::ScoredSample;
use crate::surrogate::{HeilbronnSurrogateParams, StarSurrogateParams};
use crate::ProblemInstance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One training pair under the convention t = 0 ⇔ data, t = 1 ⇔ prior:
/// x_t = t·x_prior + (1−t)·x_data, target velocity v* = x_data − x_prior.
#[derive(Debug, Clone)]
pub struct CfmItem {
    pub x_prior: Vec<f64>,
    pub x_data: Vec<f64>,
    pub condition: Vec<f64>,
    pub t: f64,
}

/// An interpolated state for the consistency term.
#[derive(Debug, Clone)]
pub struct ConsistencyItem {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub condition: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub penalty_weight_max: f64,
    pub time_mixture_weight: f64,
    pub time_power: f64,
    pub top_fraction: f64,
    pub seed: u64,
    /// Override; defaults per problem family when absent.
    pub arch: Option<Architecture>,
    /// Softplus sharpness of the sphere endpoint penalty.
    pub penalty_overlap_beta: f64,
    pub penalty_heilbronn: HeilbronnSurrogateParams,
    pub penalty_star: StarSurrogateParams,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-4,
            grad_clip_norm: 1.0,
            penalty_weight_max: 0.1,
            time_mixture_weight: 0.5,
            time_power: 2.0,
            top_fraction: 0.5,
            seed: 0,
            arch: None,
            penalty_overlap_beta: 50.0,
            penalty_heilbronn: HeilbronnSurrogateParams::default(),
            penalty_star: StarSurrogateParams::default(),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be >= 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Validation("grad_clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Cosine penalty warm-up: zero at the start, full weight λ_max at half of
/// training and beyond.
pub fn penalty_ramp(epoch: usize, total_epochs: usize, lambda_max: f64) -> f64 {
    let half = (total_epochs as f64 / 2.0).max(1e-12);
    let frac = (epoch as f64 / half).min(1.0);
    lambda_max * 0.5 * (1.0 - (std::f64::consts::PI * frac).cos())
}

/// Flow-matching loss with the endpoint penalty; returns the scalar total and
/// accumulated parameter gradients (batch-averaged, sequentially reduced).
pub fn cfm_loss(
    params: &ModelParams,
    batch: &[CfmItem],
    penalty_weight: f64,
    penalty: &EndpointPenalty,
) -> Result<(f64, ModelParams)> {
    let d = params.arch.input_dim;
    let b = batch.len().max(1) as f64;
    let mut grads = ModelParams::zeros(params.arch);
    let mut total = 0.0;

    for (si, item) in batch.iter().enumerate() {
        let n_tok = item.x_data.len() / d;
        if item.x_prior.len() != item.x_data.len() {
            return Err(Error::ShapeMismatch("prior/data length mismatch".into()));
        }
        let t = item.t;
        let x_t: Vec<f64> = item
            .x_prior
            .iter()
            .zip(item.x_data.iter())
            .map(|(p, q)| t * p + (1.0 - t) * q)
            .collect();
        let (v, cache) = forward_with_cache(params, &x_t, n_tok, t, &item.condition)?;

        let mut dv = vec![0.0; v.len()];
        let mut flow = 0.0;
        for i in 0..v.len() {
            let target = item.x_data[i] - item.x_prior[i];
            let r = v[i] - target;
            flow += r * r;
            dv[i] = 2.0 * r / b;
        }

        let mut pen = 0.0;
        if penalty_weight != 0.0 && !matches!(penalty, EndpointPenalty::None) {
            let endpoint: Vec<f64> = x_t.iter().zip(v.iter()).map(|(x, vi)| x + t * vi).collect();
            let cfg = PointConfiguration {
                dim: d,
                count: n_tok,
                coords: endpoint,
                radii: None,
            };
            let (p, gp) = penalty.eval(&cfg, &item.condition)?;
            pen = p;
            for i in 0..dv.len() {
                dv[i] += penalty_weight * t * gp[i] / b;
            }
        }

        let sample_loss = flow + penalty_weight * pen;
        if !sample_loss.is_finite() {
            return Err(Error::NonFiniteLoss { sample: si });
        }
        total += sample_loss / b;
        backward(params, &cache, &dv, &mut grads);
    }
    Ok((total, grads))
}

/// Mean squared discrepancy between the student's and the frozen teacher's
/// velocity fields on shared interpolated states; gradients flow to the
/// student only.
pub fn consistency_loss(
    student: &ModelParams,
    teacher: &ModelParams,
    batch: &[ConsistencyItem],
) -> Result<(f64, ModelParams)> {
    let d = student.arch.input_dim;
    let b = batch.len().max(1) as f64;
    let mut grads = ModelParams::zeros(student.arch);
    let mut total = 0.0;
    for item in batch {
        let n_tok = item.x_t.len() / d;
        let (vs, cache) = forward_with_cache(student, &item.x_t, n_tok, item.t, &item.condition)?;
        let (vt, _) = forward_with_cache(teacher, &item.x_t, n_tok, item.t, &item.condition)?;
        let mut dv = vec![0.0; vs.len()];
        let mut loss = 0.0;
        for i in 0..vs.len() {
            let r = vs[i] - vt[i];
            loss += r * r;
            dv[i] = 2.0 * r / b;
        }
        total += loss / b;
        backward(student, &cache, &dv, &mut grads);
    }
    Ok((total, grads))
}

/// Reward-weighted flow matching with the consistency term evaluated on the
/// same interpolated states; used by the fine-tuning loop.
pub fn weighted_cfm_with_consistency(
    student: &ModelParams,
    teacher: &ModelParams,
    batch: &[CfmItem],
    weights: &[f64],
    alpha: f64,
) -> Result<(f64, ModelParams)> {
    if batch.len() != weights.len() {
        return Err(Error::ShapeMismatch("batch/weight length mismatch".into()));
    }
    let d = student.arch.input_dim;
    let b = batch.len().max(1) as f64;
    let mut grads = ModelParams::zeros(student.arch);
    let mut total = 0.0;
    for (si, (item, &w)) in batch.iter().zip(weights.iter()).enumerate() {
        let n_tok = item.x_data.len() / d;
        let t = item.t;
        let x_t: Vec<f64> = item
            .x_prior
            .iter()
            .zip(item.x_data.iter())
            .map(|(p, q)| t * p + (1.0 - t) * q)
            .collect();
        let (vs, cache) = forward_with_cache(student, &x_t, n_tok, t, &item.condition)?;
        let (vt, _) = forward_with_cache(teacher, &x_t, n_tok, t, &item.condition)?;
        let mut dv = vec![0.0; vs.len()];
        let mut flow = 0.0;
        let mut consist = 0.0;
        for i in 0..vs.len() {
            let target = item.x_data[i] - item.x_prior[i];
            let rf = vs[i] - target;
            let rc = vs[i] - vt[i];
            flow += rf * rf;
            consist += rc * rc;
            dv[i] = (2.0 * w * rf + 2.0 * alpha * rc) / b;
        }
        let sample_loss = (w * flow + alpha * consist) / b;
        if !sample_loss.is_finite() {
            return Err(Error::NonFiniteLoss { sample: si });
        }
        total += sample_loss;
        backward(student, &cache, &dv, &mut grads);
    }
    Ok((total, grads))
}

/// Adaptive-moment optimizer with decoupled weight decay and constant
/// learning rate (β₁ = 0.9, β₂ = 0.999, weight decay 0.01).
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let shapes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step_count: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Clip the global gradient norm, then update every trainable tensor in
    /// registry order.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, clip_norm: f64) {
        let grad_tensors = grads.named_tensors();
        let mut norm_sq = 0.0;
        for (name, t) in &grad_tensors {
            if is_trainable(name) {
                norm_sq += t.data.iter().map(|g| g * g).sum::<f64>();
            }
        }
        let norm = norm_sq.sqrt();
        let scale = if norm > clip_norm && norm > 0.0 {
            clip_norm / norm
        } else {
            1.0
        };

        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let lr = self.learning_rate;

        for (idx, (name, tensor)) in params.named_tensors_mut().into_iter().enumerate() {
            if !is_trainable(&name) {
                continue;
            }
            let g = &grad_tensors[idx].1.data;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..tensor.data.len() {
                let gi = g[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                tensor.data[i] -=
                    lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * tensor.data[i]);
            }
        }
    }
}

/// Final parameters plus the frozen teacher copy and the per-epoch losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub teacher: ModelParams,
    pub epoch_losses: Vec<f64>,
}

/// Train the conditional flow model on a dataset of scored samples. Fresh
/// priors and times are drawn per item per epoch; batches are shuffled with a
/// seeded permutation, so the whole procedure is a deterministic function of
/// (dataset, hyper).
pub fn train(
    dataset: &[ScoredSample],
    instance: &ProblemInstance,
    hyper: &TrainHyper,
) -> Result<TrainOutcome> {
    train_from(dataset, instance, hyper, None)
}

/// As [`train`], optionally warm-starting from existing parameters.
pub fn train_from(
    dataset: &[ScoredSample],
    instance: &ProblemInstance,
    hyper: &TrainHyper,
    warm_start: Option<&ModelParams>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    hyper.validate()?;
    let arch = match hyper.arch {
        Some(a) => a,
        None => Architecture::default_for(instance),
    };
    if arch.input_dim != instance.dim {
        return Err(Error::ShapeMismatch(
            "architecture input_dim does not match instance".into(),
        ));
    }
    if arch.cond_dim != crate::geom::condition_len(instance.kind) {
        return Err(Error::ShapeMismatch(
            "architecture cond_dim does not match instance".into(),
        ));
    }

    let mut params = match warm_start {
        Some(p) if p.arch == arch => p.clone(),
        Some(_) => {
            return Err(Error::ShapeMismatch(
                "warm-start architecture mismatch".into(),
            ))
        }
        None => ModelParams::init(arch, hyper.seed)?,
    };
    let penalty = EndpointPenalty::for_instance(
        instance,
        &hyper.penalty_heilbronn,
        &hyper.penalty_star,
        hyper.penalty_overlap_beta,
    );
    let mut opt = AdamW::new(&params, hyper.learning_rate);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let n = dataset.len();

    for epoch in 0..hyper.epochs {
        let lambda = penalty_ramp(epoch, hyper.epochs, hyper.penalty_weight_max);
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(hyper.seed, epoch as u64 + 1));
        // Seeded shuffle of the item order.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<CfmItem> = chunk
                .iter()
                .map(|&idx| {
                    let item = &dataset[idx];
                    let prior = sample_prior(instance, &mut rng);
                    CfmItem {
                        x_prior: prior.coords,
                        x_data: item.config.coords.clone(),
                        condition: item.condition.clone(),
                        t: sample_time(&mut rng, hyper.time_mixture_weight, hyper.time_power),
                    }
                })
                .collect();
            let (loss, grads) = cfm_loss(&params, &batch, lambda, &penalty)?;
            opt.step(&mut params, &grads, hyper.grad_clip_norm);
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        let mean = epoch_loss / seen.max(1) as f64;
        epoch_losses.push(mean);
        logging::emit(
            "train_epoch",
            serde_json::json!({ "epoch": epoch, "mean_loss": mean, "penalty_weight": lambda }),
        );
    }

    let teacher = params.clone();
    Ok(TrainOutcome {
        params,
        teacher,
        epoch_losses,
    })
}
