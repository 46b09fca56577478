//! The permutation-equivariant conditional velocity network: each point of a
//! configuration is a token, time and condition enter through FiLM modulation
//! of every layer, and there is no positional encoding of any kind. The
//! reverse pass lives in [`net`]; training in [`train`].

mod net;
mod train;

pub use train::{
    cfm_loss, consistency_loss, penalty_ramp, train, train_from, weighted_cfm_with_consistency,
    AdamW, CfmItem, ConsistencyItem, TrainHyper, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::geom::{PointConfiguration, ProblemInstance, ProblemKind};
use crate::surrogate::{
    heilbronn_softmin, overlap_energy, star_surrogate, HeilbronnSurrogateParams,
    StarSurrogateParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A named dense tensor (1- or 2-D), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Architecture descriptor of the velocity network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Random Fourier frequency count F; the time embedding has 2F+4 entries.
    pub freq_count: usize,
    pub input_dim: usize,
    pub cond_dim: usize,
    pub ff_hidden: usize,
}

impl Architecture {
    /// Default architecture per problem family: wide-and-shallow for sphere
    /// packing, narrower-and-deeper for the square-domain problems.
    pub fn default_for(instance: &ProblemInstance) -> Self {
        let (width, depth, heads) = match instance.kind {
            ProblemKind::SpheresInCube => (512, 2, 8),
            _ => (256, 6, 8),
        };
        Self {
            width,
            depth,
            heads,
            freq_count: 16,
            input_dim: instance.dim,
            cond_dim: crate::geom::condition_len(instance.kind),
            ff_hidden: 4 * width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.heads == 0 || self.freq_count == 0 {
            return Err(Error::Validation("architecture sizes must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Validation("width must be divisible by heads".into()));
        }
        Ok(())
    }

    pub fn time_embed_len(&self) -> usize {
        2 * self.freq_count + 4
    }

    pub fn embed_in_len(&self) -> usize {
        self.time_embed_len() + self.cond_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub norm1_gain: Tensor,
    pub film_gamma_w: Tensor,
    pub film_gamma_b: Tensor,
    pub film_beta_w: Tensor,
    pub film_beta_b: Tensor,
    pub q_w: Tensor,
    pub q_b: Tensor,
    pub k_w: Tensor,
    pub k_b: Tensor,
    pub v_w: Tensor,
    pub v_b: Tensor,
    pub o_w: Tensor,
    pub o_b: Tensor,
    pub norm2_gain: Tensor,
    pub ff_in_w: Tensor,
    pub ff_in_b: Tensor,
    pub ff_out_w: Tensor,
    pub ff_out_b: Tensor,
}

/// Named tensors of the velocity network (student or frozen teacher).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    /// Fixed random Fourier frequencies; persisted but never trained.
    pub time_freqs: Tensor,
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_gain: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ModelParams {
    /// Zero-shaped parameter set (also used as a gradient accumulator).
    pub fn zeros(arch: Architecture) -> Self {
        let w = arch.width;
        let e = arch.embed_in_len();
        let hh = arch.ff_hidden;
        let d = arch.input_dim;
        let layer = || LayerParams {
            norm1_gain: Tensor::zeros(&[w]),
            film_gamma_w: Tensor::zeros(&[w, w]),
            film_gamma_b: Tensor::zeros(&[w]),
            film_beta_w: Tensor::zeros(&[w, w]),
            film_beta_b: Tensor::zeros(&[w]),
            q_w: Tensor::zeros(&[w, w]),
            q_b: Tensor::zeros(&[w]),
            k_w: Tensor::zeros(&[w, w]),
            k_b: Tensor::zeros(&[w]),
            v_w: Tensor::zeros(&[w, w]),
            v_b: Tensor::zeros(&[w]),
            o_w: Tensor::zeros(&[w, w]),
            o_b: Tensor::zeros(&[w]),
            norm2_gain: Tensor::zeros(&[w]),
            ff_in_w: Tensor::zeros(&[2 * hh, w]),
            ff_in_b: Tensor::zeros(&[2 * hh]),
            ff_out_w: Tensor::zeros(&[w, hh]),
            ff_out_b: Tensor::zeros(&[w]),
        };
        Self {
            arch,
            time_freqs: Tensor::zeros(&[arch.freq_count]),
            input_w: Tensor::zeros(&[w, d]),
            input_b: Tensor::zeros(&[w]),
            embed_w: Tensor::zeros(&[w, e]),
            embed_b: Tensor::zeros(&[w]),
            layers: (0..arch.depth).map(|_| layer()).collect(),
            final_gain: Tensor::zeros(&[w]),
            head_w: Tensor::zeros(&[d, w]),
            head_b: Tensor::zeros(&[d]),
        }
    }

    /// Seeded initialization: scaled-normal weights, unit norm gains, zero
    /// biases and an exactly zero output head. Time frequencies are drawn
    /// once from a normal of scale 10 and never change afterwards.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = |rng: &mut ChaCha8Rng| -> f64 {
            let u1: f64 = rng.gen::<f64>().max(1e-12);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        for v in params.time_freqs.data.iter_mut() {
            *v = 10.0 * normal(&mut rng);
        }
        let init_matrix = |t: &mut Tensor, rng: &mut ChaCha8Rng| {
            let fan_in = t.shape[1] as f64;
            let std = 1.0 / fan_in.sqrt();
            for v in t.data.iter_mut() {
                let u1: f64 = rng.gen::<f64>().max(1e-12);
                let u2: f64 = rng.gen();
                *v = std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
        };
        init_matrix(&mut params.input_w, &mut rng);
        init_matrix(&mut params.embed_w, &mut rng);
        for layer in params.layers.iter_mut() {
            layer.norm1_gain.data.fill(1.0);
            layer.norm2_gain.data.fill(1.0);
            // Small FiLM weights so modulation starts near identity.
            init_matrix(&mut layer.film_gamma_w, &mut rng);
            init_matrix(&mut layer.film_beta_w, &mut rng);
            for v in layer.film_gamma_w.data.iter_mut() {
                *v *= 0.1;
            }
            for v in layer.film_beta_w.data.iter_mut() {
                *v *= 0.1;
            }
            init_matrix(&mut layer.q_w, &mut rng);
            init_matrix(&mut layer.k_w, &mut rng);
            init_matrix(&mut layer.v_w, &mut rng);
            init_matrix(&mut layer.o_w, &mut rng);
            init_matrix(&mut layer.ff_in_w, &mut rng);
            init_matrix(&mut layer.ff_out_w, &mut rng);
        }
        params.final_gain.data.fill(1.0);
        // head_w / head_b stay exactly zero.
        Ok(params)
    }

    /// Tensors in registry order, used by the optimizer and the checkpoint.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("time.freqs".into(), &self.time_freqs),
            ("input.w".into(), &self.input_w),
            ("input.b".into(), &self.input_b),
            ("embed.w".into(), &self.embed_w),
            ("embed.b".into(), &self.embed_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let pairs: [(&str, &Tensor); 18] = [
                ("norm1.g", &l.norm1_gain),
                ("film.gamma.w", &l.film_gamma_w),
                ("film.gamma.b", &l.film_gamma_b),
                ("film.beta.w", &l.film_beta_w),
                ("film.beta.b", &l.film_beta_b),
                ("attn.q.w", &l.q_w),
                ("attn.q.b", &l.q_b),
                ("attn.k.w", &l.k_w),
                ("attn.k.b", &l.k_b),
                ("attn.v.w", &l.v_w),
                ("attn.v.b", &l.v_b),
                ("attn.o.w", &l.o_w),
                ("attn.o.b", &l.o_b),
                ("norm2.g", &l.norm2_gain),
                ("ff.in.w", &l.ff_in_w),
                ("ff.in.b", &l.ff_in_b),
                ("ff.out.w", &l.ff_out_w),
                ("ff.out.b", &l.ff_out_b),
            ];
            for (name, t) in pairs {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("final_norm.g".into(), &self.final_gain));
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("time.freqs".into(), &mut self.time_freqs),
            ("input.w".into(), &mut self.input_w),
            ("input.b".into(), &mut self.input_b),
            ("embed.w".into(), &mut self.embed_w),
            ("embed.b".into(), &mut self.embed_b),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let pairs: [(&str, &mut Tensor); 18] = [
                ("norm1.g", &mut l.norm1_gain),
                ("film.gamma.w", &mut l.film_gamma_w),
                ("film.gamma.b", &mut l.film_gamma_b),
                ("film.beta.w", &mut l.film_beta_w),
                ("film.beta.b", &mut l.film_beta_b),
                ("attn.q.w", &mut l.q_w),
                ("attn.q.b", &mut l.q_b),
                ("attn.k.w", &mut l.k_w),
                ("attn.k.b", &mut l.k_b),
                ("attn.v.w", &mut l.v_w),
                ("attn.v.b", &mut l.v_b),
                ("attn.o.w", &mut l.o_w),
                ("attn.o.b", &mut l.o_b),
                ("norm2.g", &mut l.norm2_gain),
                ("ff.in.w", &mut l.ff_in_w),
                ("ff.in.b", &mut l.ff_in_b),
                ("ff.out.w", &mut l.ff_out_w),
                ("ff.out.b", &mut l.ff_out_b),
            ];
            for (name, t) in pairs {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("final_norm.g".into(), &mut self.final_gain));
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// True for tensors the optimizer updates; the time frequencies are frozen.
pub fn is_trainable(name: &str) -> bool {
    name != "time.freqs"
}

/// Random Fourier features plus a polynomial tail:
/// [sin(2πω_j t), cos(2πω_j t), t, t², t³, log(1+t)]. Out-of-range times are
/// clamped with a warning.
pub fn time_embedding(t: f64, freqs: &[f64]) -> Vec<f64> {
    let t = if (0.0..=1.0).contains(&t) {
        t
    } else {
        crate::logging::emit(
            "time_clamped",
            serde_json::json!({ "t": t }),
        );
        t.clamp(0.0, 1.0)
    };
    let mut out = Vec::with_capacity(2 * freqs.len() + 4);
    let tau = 2.0 * std::f64::consts::PI * t;
    for &w in freqs {
        out.push((tau * w).sin());
    }
    for &w in freqs {
        out.push((tau * w).cos());
    }
    out.push(t);
    out.push(t * t);
    out.push(t * t * t);
    out.push((1.0 + t).ln());
    out
}

/// Evaluate the velocity field on a configuration. Shapes must match the
/// architecture descriptor; the output has one d-vector per token.
pub fn velocity_forward(
    params: &ModelParams,
    config: &PointConfiguration,
    t: f64,
    condition: &[f64],
) -> Result<Vec<f64>> {
    if config.dim != params.arch.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "model expects dim {}, config has {}",
            params.arch.input_dim, config.dim
        )));
    }
    if condition.len() != params.arch.cond_dim {
        return Err(Error::ShapeMismatch(format!(
            "model expects condition of {}, got {}",
            params.arch.cond_dim,
            condition.len()
        )));
    }
    let mut embed_in = time_embedding(t, &params.time_freqs.data);
    embed_in.extend_from_slice(condition);
    let (y, _) = net::forward(params, &config.coords, &embed_in, config.count)?;
    Ok(y)
}

pub(crate) fn forward_with_cache(
    params: &ModelParams,
    coords: &[f64],
    n_tok: usize,
    t: f64,
    condition: &[f64],
) -> Result<(Vec<f64>, net::Cache)> {
    let mut embed_in = time_embedding(t, &params.time_freqs.data);
    embed_in.extend_from_slice(condition);
    net::forward(params, coords, &embed_in, n_tok)
}

pub(crate) use net::backward;

/// Draw a training time: a mixture of U(0,1) and a power-law component u^γ
/// biased toward the data end (t = 0).
pub fn sample_time(rng: &mut ChaCha8Rng, mixture_weight: f64, power: f64) -> f64 {
    let u: f64 = rng.gen();
    if rng.gen::<f64>() < mixture_weight {
        u.powf(power)
    } else {
        u
    }
}

/// Endpoint penalty applied to the projected data endpoint during training.
#[derive(Debug, Clone)]
pub enum EndpointPenalty {
    None,
    /// Softplus overlap energy at the sample's own effective radius.
    SphereOverlap { beta: f64, box_side: f64 },
    /// Hinge (target A_min − softmin(x̂))₊.
    HeilbronnHinge { params: HeilbronnSurrogateParams },
    /// Hinge (D̃(x̂) − target D*)₊.
    StarHinge { params: StarSurrogateParams },
}

impl EndpointPenalty {
    pub fn for_instance(
        instance: &ProblemInstance,
        heilbronn: &HeilbronnSurrogateParams,
        star: &StarSurrogateParams,
        overlap_beta: f64,
    ) -> Self {
        match instance.kind {
            ProblemKind::SpheresInCube => EndpointPenalty::SphereOverlap {
                beta: overlap_beta,
                box_side: instance.box_side,
            },
            ProblemKind::Heilbronn => EndpointPenalty::HeilbronnHinge {
                params: heilbronn.clone(),
            },
            ProblemKind::StarDiscrepancy => EndpointPenalty::StarHinge {
                params: star.clone(),
            },
            // Centers-only generation: radii are recovered downstream.
            ProblemKind::CirclesSumRadii => EndpointPenalty::None,
        }
    }

    /// Value and gradient at the projected endpoint; `condition` carries the
    /// per-sample targets.
    pub fn eval(
        &self,
        endpoint: &PointConfiguration,
        condition: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            EndpointPenalty::None => Ok((0.0, vec![0.0; endpoint.coords.len()])),
            EndpointPenalty::SphereOverlap { beta, box_side } => {
                let r = condition.first().copied().unwrap_or(0.0) * box_side;
                if r <= 0.0 {
                    return Ok((0.0, vec![0.0; endpoint.coords.len()]));
                }
                let e = overlap_energy(endpoint, r, *beta)?;
                Ok((e.value, e.gradient))
            }
            EndpointPenalty::HeilbronnHinge { params } => {
                let target = condition.get(1).copied().unwrap_or(0.0);
                let e = heilbronn_softmin(endpoint, params)?;
                if target - e.value > 0.0 {
                    Ok((target - e.value, e.gradient.iter().map(|g| -g).collect()))
                } else {
                    Ok((0.0, vec![0.0; endpoint.coords.len()]))
                }
            }
            EndpointPenalty::StarHinge { params } => {
                let target = condition.get(1).copied().unwrap_or(0.0);
                let e = star_surrogate(endpoint, params)?;
                if e.value - target > 0.0 {
                    Ok((e.value - target, e.gradient))
                } else {
                    Ok((0.0, vec![0.0; endpoint.coords.len()]))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            width: 8,
            depth: 1,
            heads: 2,
            freq_count: 3,
            input_dim: 2,
            cond_dim: 2,
            ff_hidden: 16,
        }
    }

    #[test]
    fn time_embedding_boundary_values() {
        let freqs = vec![0.7, -1.3, 2.2];
        let e0 = time_embedding(0.0, &freqs);
        assert_eq!(e0.len(), 2 * 3 + 4);
        for i in 0..3 {
            assert_eq!(e0[i], 0.0);
            assert_eq!(e0[3 + i], 1.0);
        }
        assert_eq!(&e0[6..], &[0.0, 0.0, 0.0, 0.0]);

        let e1 = time_embedding(1.0, &freqs);
        assert_eq!(e1[6], 1.0);
        assert_eq!(e1[7], 1.0);
        assert_eq!(e1[8], 1.0);
        assert!((e1[9] - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn time_embedding_is_deterministic() {
        let freqs = vec![1.0, 2.0];
        let a = time_embedding(0.37, &freqs);
        let b = time_embedding(0.37, &freqs);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_initialized_head_outputs_zero() {
        let params = ModelParams::init(tiny_arch(), 3).unwrap();
        let config = PointConfiguration::new(2, 5, vec![0.1; 10]).unwrap();
        let v = velocity_forward(&params, &config, 0.5, &[0.1, 0.2]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut params = ModelParams::init(tiny_arch(), 4).unwrap();
        // Non-zero head so the output is nontrivial.
        for (i, v) in params.head_w.data.iter_mut().enumerate() {
            *v = 0.01 * (i as f64 + 1.0);
        }
        let config =
            PointConfiguration::new(2, 4, vec![0.1, 0.9, 0.3, 0.2, 0.7, 0.5, 0.4, 0.6]).unwrap();
        let a = velocity_forward(&params, &config, 0.3, &[0.5, 0.1]).unwrap();
        let b = velocity_forward(&params, &config, 0.3, &[0.5, 0.1]).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ModelParams::init(tiny_arch(), 5).unwrap();
        for v in params.head_w.data.iter_mut() {
            *v = 0.05 * (2.0 * rng.gen::<f64>() - 1.0);
        }
        let n = 6;
        let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
        let config = PointConfiguration::new(2, n, coords.clone()).unwrap();
        let base = velocity_forward(&params, &config, 0.4, &[0.3, 0.7]).unwrap();

        // A nontrivial permutation.
        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let mut pcoords = vec![0.0; 2 * n];
        for (new_i, &old_i) in perm.iter().enumerate() {
            pcoords[2 * new_i] = coords[2 * old_i];
            pcoords[2 * new_i + 1] = coords[2 * old_i + 1];
        }
        let pconfig = PointConfiguration::new(2, n, pcoords).unwrap();
        let pout = velocity_forward(&params, &pconfig, 0.4, &[0.3, 0.7]).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for k in 0..2 {
                let diff = (pout[2 * new_i + k] - base[2 * old_i + k]).abs();
                assert!(diff <= 1e-9, "equivariance violated by {diff}");
            }
        }
    }

    #[test]
    fn sample_time_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 1_000_000;
        // Pure power-law component: E[u^2] = 1/3.
        let mean: f64 =
            (0..n).map(|_| sample_time(&mut rng, 1.0, 2.0)).sum::<f64>() / n as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.002, "mean {mean}");
        // Pure uniform: E[t] = 1/2.
        let mean: f64 =
            (0..n).map(|_| sample_time(&mut rng, 0.0, 2.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
        // Even mixture: E[t] = 5/12.
        let mean: f64 =
            (0..n).map(|_| sample_time(&mut rng, 0.5, 2.0)).sum::<f64>() / n as f64;
        assert!((mean - 5.0 / 12.0).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn named_tensor_registry_is_consistent() {
        let params = ModelParams::init(tiny_arch(), 1).unwrap();
        let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let mut params2 = params.clone();
        let names_mut: Vec<String> = params2
            .named_tensors_mut()
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"layer0.attn.q.w".to_string()));
        assert!(params.param_count() > 0);
    }
}
