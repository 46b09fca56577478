//! Geometry-aware sampling: problem priors, ODE integration of the learned
//! velocity field interleaved with constraint projection and proximal
//! relaxation, objective hooks for the square-domain problems, and terminal
//! refinement.

use crate::error::{Error, Result};
use crate::flow::{velocity_forward, ModelParams};
use crate::geom::{
    self, min_pairwise_distance, PointConfiguration, ProblemInstance, ProblemKind,
};
use crate::surrogate::{
    heilbronn_softmin, star_surrogate, HeilbronnSurrogateParams, StarSurrogateParams,
};
use crate::{logging, par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    /// Flow discretization steps K.
    pub steps: usize,
    /// Projection iterations per step.
    pub projection_iters: usize,
    /// Proximal iterations per step.
    pub proximal_iters: usize,
    /// Proximal step size η.
    pub proximal_step: f64,
    /// Proximal constraint weight λ.
    pub proximal_weight: f64,
    /// Extra objective/projection passes after integration.
    pub terminal_polish_steps: usize,
    /// Terminal feasibility tolerance.
    pub terminal_tol: f64,
    /// Annealed (start, end) step temperature of the objective hooks.
    pub objective_step_temperature: (f64, f64),
    /// Per-point displacement cap per integration step.
    pub step_cap: f64,
    /// Surrogate parameters of the Heilbronn objective hook.
    pub heilbronn: HeilbronnSurrogateParams,
    /// Surrogate parameters of the star-discrepancy objective hook.
    pub star: StarSurrogateParams,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            steps: 40,
            projection_iters: 2,
            proximal_iters: 2,
            proximal_step: 0.1,
            proximal_weight: 1.0,
            terminal_polish_steps: 20,
            terminal_tol: 1e-8,
            objective_step_temperature: (5e-3, 5e-4),
            step_cap: 0.05,
            heilbronn: HeilbronnSurrogateParams::default(),
            star: StarSurrogateParams::default(),
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Validation("sampler steps must be >= 1".into()));
        }
        if !(self.terminal_tol > 0.0) {
            return Err(Error::Validation("terminal_tol must be positive".into()));
        }
        let (a, b) = self.objective_step_temperature;
        if !(a >= b && b > 0.0) {
            return Err(Error::Validation(
                "objective step temperatures must satisfy start >= end > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Draw one configuration from the problem's prior.
///
/// Spheres: centers on a uniformly chosen face of the margin box with small
/// Gaussian jitter; star: a 2-D Latin hypercube; Heilbronn and circles:
/// i.i.d. uniform in the unit square. Circle samples carry zero radii
/// (centers-only generation).
pub fn sample_prior(instance: &ProblemInstance, rng: &mut ChaCha8Rng) -> PointConfiguration {
    let n = instance.count;
    let d = instance.dim;
    let l = instance.box_side;
    match instance.kind {
        ProblemKind::SpheresInCube => {
            // Nominal margin for the prior box: a loose fraction of the cell
            // size so faces exist even before any radius is known.
            let r = 0.2 * l / (n as f64).powf(1.0 / d as f64);
            let lo = r;
            let hi = l - r;
            let jitter = 0.02 * l;
            let mut coords = vec![0.0; n * d];
            for i in 0..n {
                let face_axis = rng.gen_range(0..d);
                let face_side = rng.gen_range(0..2usize);
                for k in 0..d {
                    let base = if k == face_axis {
                        if face_side == 0 {
                            lo
                        } else {
                            hi
                        }
                    } else {
                        lo + (hi - lo) * rng.gen::<f64>()
                    };
                    // Box-Muller normal jitter.
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    coords[i * d + k] = (base + jitter * z).clamp(0.0, l);
                }
            }
            PointConfiguration {
                dim: d,
                count: n,
                coords,
                radii: None,
            }
        }
        ProblemKind::StarDiscrepancy => {
            // Latin hypercube: one point per row and column stratum.
            let mut xs: Vec<usize> = (0..n).collect();
            let mut ys: Vec<usize> = (0..n).collect();
            shuffle(&mut xs, rng);
            shuffle(&mut ys, rng);
            let mut coords = vec![0.0; 2 * n];
            for i in 0..n {
                coords[2 * i] = (xs[i] as f64 + rng.gen::<f64>()) / n as f64;
                coords[2 * i + 1] = (ys[i] as f64 + rng.gen::<f64>()) / n as f64;
            }
            PointConfiguration {
                dim: 2,
                count: n,
                coords,
                radii: None,
            }
        }
        ProblemKind::Heilbronn | ProblemKind::CirclesSumRadii => {
            let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>() * l).collect();
            let radii = if instance.has_radii() {
                Some(vec![0.0; n])
            } else {
                None
            };
            PointConfiguration {
                dim: 2,
                count: n,
                coords,
                radii,
            }
        }
    }
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Reflect every coordinate into [lo, hi]; after ten reflections, clamp.
pub(crate) fn reflect_into_box(coords: &mut [f64], lo: f64, hi: f64) {
    let span = hi - lo;
    for c in coords.iter_mut() {
        if span <= 0.0 {
            *c = 0.5 * (lo + hi);
            continue;
        }
        let mut passes = 0;
        while (*c < lo || *c > hi) && passes < 10 {
            if *c < lo {
                *c = 2.0 * lo - *c;
            } else if *c > hi {
                *c = 2.0 * hi - *c;
            }
            passes += 1;
        }
        *c = c.clamp(lo, hi);
    }
}

/// Adaptive wall margin m(x) = ½·min pairwise distance (0 for one point).
pub fn adaptive_margin(config: &PointConfiguration, box_side: f64) -> f64 {
    match min_pairwise_distance(config) {
        Ok(d) => (0.5 * d).min(0.49 * box_side),
        Err(_) => 0.0,
    }
}

/// One midpoint ODE step of dx/dτ = v(x, 1−τ) with a per-point displacement
/// cap, followed by iterative reflection into the instance's box (adaptive
/// for spheres, unit box otherwise).
pub fn integrate_step(
    params: &ModelParams,
    state: &PointConfiguration,
    instance: &ProblemInstance,
    condition: &[f64],
    tau_k: f64,
    tau_k1: f64,
    step_cap: f64,
    step_index: usize,
) -> Result<PointConfiguration> {
    let dt = tau_k1 - tau_k;
    let d = state.dim;
    let v1 = velocity_forward(params, state, 1.0 - tau_k, condition)?;
    if v1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteVelocity { step: step_index });
    }
    let mut mid = state.clone();
    apply_capped(&mut mid.coords, &v1, 0.5 * dt, step_cap, d);
    let tau_mid = 0.5 * (tau_k + tau_k1);
    let v2 = velocity_forward(params, &mid, 1.0 - tau_mid, condition)?;
    if v2.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteVelocity { step: step_index });
    }
    let mut next = state.clone();
    apply_capped(&mut next.coords, &v2, dt, step_cap, d);

    match instance.kind {
        ProblemKind::SpheresInCube => {
            let m = adaptive_margin(&next, instance.box_side);
            reflect_into_box(&mut next.coords, m, instance.box_side - m);
        }
        _ => reflect_into_box(&mut next.coords, 0.0, instance.box_side),
    }
    Ok(next)
}

/// x += scale·v with the per-point displacement magnitude capped.
fn apply_capped(coords: &mut [f64], v: &[f64], scale: f64, cap: f64, d: usize) {
    let n = coords.len() / d;
    for i in 0..n {
        let mut norm2 = 0.0;
        for k in 0..d {
            let dv = scale * v[i * d + k];
            norm2 += dv * dv;
        }
        let norm = norm2.sqrt();
        let factor = if norm > cap && norm > 0.0 { cap / norm } else { 1.0 };
        for k in 0..d {
            coords[i * d + k] += factor * scale * v[i * d + k];
        }
    }
}

/// One pass of the degree-normalized contact correction plus wall-normal
/// pushes; returns the displacement field (zero when feasible).
fn projection_displacement(
    config: &PointConfiguration,
    r: f64,
    box_side: f64,
) -> Vec<f64> {
    let n = config.count;
    let d = config.dim;
    let mut delta = vec![0.0; n * d];
    let mut degree = vec![0usize; n];
    let mut pushes: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = geom::dist(config, i, j);
            let h = 2.0 * r - dist;
            if h > 0.0 {
                degree[i] += 1;
                degree[j] += 1;
                pushes.push((i, j, h));
            }
        }
    }
    for (i, j, h) in pushes {
        let dist = geom::dist(config, i, j);
        for k in 0..d {
            // Coincident pair: deterministic pseudo-random unit direction.
            let nk = if dist > 0.0 {
                (config.point(i)[k] - config.point(j)[k]) / dist
            } else {
                let phase = ((i * 31 + j * 17 + k * 7) as f64 * 0.618_033_9).fract();
                (2.0 * phase - 1.0) / (d as f64).sqrt()
            };
            delta[i * d + k] += 0.5 * h * nk / degree[i] as f64;
            delta[j * d + k] -= 0.5 * h * nk / degree[j] as f64;
        }
    }
    // Wall-normal corrections into the adaptive box.
    let m = adaptive_margin(config, box_side);
    for i in 0..n {
        for k in 0..d {
            let c = config.point(i)[k];
            if c < m {
                delta[i * d + k] += m - c;
            } else if c > box_side - m {
                delta[i * d + k] -= c - (box_side - m);
            }
        }
    }
    delta
}

/// Linearized constraint enforcement for packings: repeat degree-normalized
/// pairwise updates and wall pushes until no constraint is active or
/// `max_iters` is reached.
pub fn gauss_newton_project(
    config: &PointConfiguration,
    r: f64,
    max_iters: usize,
    box_side: f64,
) -> PointConfiguration {
    let mut cur = config.clone();
    for _ in 0..max_iters {
        let delta = projection_displacement(&cur, r, box_side);
        if delta.iter().all(|&v| v == 0.0) {
            break;
        }
        for (c, dv) in cur.coords.iter_mut().zip(delta.iter()) {
            *c += dv;
        }
    }
    cur
}

/// Constraint-violation displacement used as the Jᵀh direction in the
/// proximal step: the negated repair field.
fn residual_direction(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    r: f64,
) -> Vec<f64> {
    match instance.kind {
        ProblemKind::SpheresInCube => projection_displacement(config, r, instance.box_side)
            .iter()
            .map(|v| -v)
            .collect(),
        _ => config
            .coords
            .iter()
            .map(|&c| {
                let clamped = c.clamp(0.0, instance.box_side);
                clamped - c
            })
            .map(|v| -v)
            .collect(),
    }
}

/// Proximal relaxation toward the optimal-transport anchor with a lookahead
/// penalty on the constraint residuals of the predicted endpoint.
#[allow(clippy::too_many_arguments)]
pub fn proximal_relax(
    config: &PointConfiguration,
    x_prior: &PointConfiguration,
    tau_prime: f64,
    params: &ModelParams,
    instance: &ProblemInstance,
    condition: &[f64],
    r: f64,
    settings: &SamplerSettings,
) -> Result<PointConfiguration> {
    let anchor: Vec<f64> = x_prior
        .coords
        .iter()
        .zip(config.coords.iter())
        .map(|(p, x)| (1.0 - tau_prime) * p + tau_prime * x)
        .collect();
    let mut cur = config.clone();
    let eta = settings.proximal_step;
    let lambda = settings.proximal_weight;
    for _ in 0..settings.proximal_iters {
        let v = velocity_forward(params, &cur, 1.0 - tau_prime, condition)?;
        let mut lookahead = cur.clone();
        for (c, vi) in lookahead.coords.iter_mut().zip(v.iter()) {
            *c += (1.0 - tau_prime) * vi;
        }
        let jt_h = residual_direction(&lookahead, instance, r);
        for i in 0..cur.coords.len() {
            cur.coords[i] -= eta * ((cur.coords[i] - anchor[i]) + lambda * jt_h[i]);
        }
    }
    Ok(cur)
}

/// One guarded normalized step on the problem's smooth objective: soft-min
/// area ascent for Heilbronn, smooth discrepancy descent for star. A step
/// that worsens the surrogate is retried once at half size, then accepted.
pub fn objective_projection_step(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    temperature: f64,
    settings: &SamplerSettings,
) -> Result<PointConfiguration> {
    let (value, gradient, ascend) = match instance.kind {
        ProblemKind::Heilbronn => {
            let e = heilbronn_softmin(config, &settings.heilbronn)?;
            (e.value, e.gradient, true)
        }
        ProblemKind::StarDiscrepancy => {
            let e = star_surrogate(config, &settings.star)?;
            (e.value, e.gradient, false)
        }
        _ => {
            return Err(Error::Validation(
                "objective step applies to Heilbronn and star only".into(),
            ))
        }
    };
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm < 1e-18 {
        return Ok(config.clone());
    }
    let sign = if ascend { 1.0 } else { -1.0 };
    let trial = |step: f64| -> PointConfiguration {
        let mut out = config.clone();
        for (c, g) in out.coords.iter_mut().zip(gradient.iter()) {
            *c = (*c + sign * step * g / norm).clamp(0.0, instance.box_side);
        }
        out
    };
    let candidate = trial(temperature);
    let cand_value = match instance.kind {
        ProblemKind::Heilbronn => heilbronn_softmin(&candidate, &settings.heilbronn)?.value,
        _ => star_surrogate(&candidate, &settings.star)?.value,
    };
    let improved = if ascend {
        cand_value >= value
    } else {
        cand_value <= value
    };
    if improved {
        Ok(candidate)
    } else {
        Ok(trial(0.5 * temperature))
    }
}

/// Extra projection passes with tightened tolerance until the maximum overlap
/// residual (and adaptive wall violation) falls below `tol`; errors out as a
/// projection stall after 500 passes.
pub fn terminal_refine(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    r: f64,
    tol: f64,
) -> Result<PointConfiguration> {
    match instance.kind {
        ProblemKind::SpheresInCube => {
            let mut cur = config.clone();
            for _pass in 0..500 {
                let rep = geom::feasibility(&cur, instance, r);
                if rep.max_pair_violation <= tol && rep.max_wall_violation <= tol {
                    return Ok(cur);
                }
                cur = gauss_newton_project(&cur, r, 1, instance.box_side);
            }
            let rep = geom::feasibility(&cur, instance, r);
            if rep.max_pair_violation <= tol && rep.max_wall_violation <= tol {
                Ok(cur)
            } else {
                Err(Error::ProjectionStall { tol, passes: 500 })
            }
        }
        ProblemKind::CirclesSumRadii => {
            // Centers are trivially feasible after the clamp; radii are
            // handled downstream by the exact LP.
            let mut cur = config.clone();
            cur.clamp_to_box(0.0, instance.box_side);
            Ok(cur)
        }
        _ => {
            let mut cur = config.clone();
            cur.clamp_to_box(0.0, instance.box_side);
            Ok(cur)
        }
    }
}

/// Geometric temperature anneal across the K sampler steps.
fn hook_temperature(settings: &SamplerSettings, k: usize) -> f64 {
    let (start, end) = settings.objective_step_temperature;
    let steps = settings.steps.max(2);
    let frac = k as f64 / (steps - 1) as f64;
    start * (end / start).powf(frac)
}

fn gas_sample_one(
    params: &ModelParams,
    instance: &ProblemInstance,
    condition: &[f64],
    settings: &SamplerSettings,
    seed: u64,
) -> Result<PointConfiguration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = sample_prior(instance, &mut rng);
    let mut state = prior.clone();
    let k_steps = settings.steps;
    // Target radius for packing projections comes from the conditioning.
    let r_target = condition.first().copied().unwrap_or(0.0) * instance.box_side;

    for k in 0..k_steps {
        let tau_k = k as f64 / k_steps as f64;
        let tau_k1 = (k + 1) as f64 / k_steps as f64;
        state = integrate_step(
            params,
            &state,
            instance,
            condition,
            tau_k,
            tau_k1,
            settings.step_cap,
            k,
        )?;
        match instance.kind {
            ProblemKind::SpheresInCube => {
                state =
                    gauss_newton_project(&state, r_target, settings.projection_iters, instance.box_side);
            }
            _ => state.clamp_to_box(0.0, instance.box_side),
        }
        state = proximal_relax(
            &state,
            &prior,
            tau_k1,
            params,
            instance,
            condition,
            r_target,
            settings,
        )?;
        if matches!(
            instance.kind,
            ProblemKind::Heilbronn | ProblemKind::StarDiscrepancy
        ) {
            state = objective_projection_step(&state, instance, hook_temperature(settings, k), settings)?;
        }
    }

    match instance.kind {
        ProblemKind::SpheresInCube => {
            terminal_refine(&state, instance, r_target, settings.terminal_tol)
        }
        ProblemKind::CirclesSumRadii => {
            let mut out = terminal_refine(&state, instance, 0.0, settings.terminal_tol)?;
            out.radii = Some(vec![0.0; out.count]);
            Ok(out)
        }
        _ => {
            let (_, end_temp) = settings.objective_step_temperature;
            for _ in 0..settings.terminal_polish_steps {
                state = objective_projection_step(&state, instance, end_temp, settings)?;
            }
            state.clamp_to_box(0.0, instance.box_side);
            Ok(state)
        }
    }
}

/// Draw `n_samples` configurations by interleaving flow integration with
/// constraint projection, proximal relaxation and the objective hooks.
/// Deterministic per (seed, sample index); failed samples are dropped with a
/// logged count.
pub fn gas_sample(
    params: &ModelParams,
    instance: &ProblemInstance,
    n_samples: usize,
    condition: &[f64],
    settings: &SamplerSettings,
    seed: u64,
) -> Result<Vec<PointConfiguration>> {
    settings.validate()?;
    let results = par::run_indexed(n_samples, |i| {
        gas_sample_one(
            params,
            instance,
            condition,
            settings,
            par::sample_seed(seed, i),
        )
    });
    let mut out = Vec::with_capacity(n_samples);
    let mut dropped = 0usize;
    for r in results {
        match r {
            Ok(c) => out.push(c),
            Err(_) => dropped += 1,
        }
    }
    if dropped > 0 {
        logging::emit(
            "gas_samples_dropped",
            serde_json::json!({ "dropped": dropped, "requested": n_samples }),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod gas_tests {
    use super::*;
    use crate::flow::Architecture;
    use crate::geom::feasibility;

    fn zero_model(instance: &ProblemInstance) -> ModelParams {
        let arch = Architecture {
            width: 8,
            depth: 1,
            heads: 2,
            freq_count: 3,
            input_dim: instance.dim,
            cond_dim: crate::geom::condition_len(instance.kind),
            ff_hidden: 16,
        };
        ModelParams::init(arch, 0).unwrap()
    }

    #[test]
    fn integrate_step_zero_velocity_is_identity() {
        let inst = ProblemInstance::new(ProblemKind::Heilbronn, 2, 4, 1.0).unwrap();
        let params = zero_model(&inst);
        let c = PointConfiguration::new(2, 4, vec![0.2, 0.3, 0.7, 0.8, 0.4, 0.6, 0.1, 0.9])
            .unwrap();
        let out = integrate_step(&params, &c, &inst, &[0.1, 0.2], 0.0, 0.1, 0.05, 0).unwrap();
        assert_eq!(out.coords, c.coords);
    }

    #[test]
    fn integrate_step_matches_plain_midpoint_when_cap_inactive() {
        let inst = ProblemInstance::new(ProblemKind::Heilbronn, 2, 2, 1.0).unwrap();
        let mut params = zero_model(&inst);
        // Constant output via head bias only.
        params.head_b.data = vec![0.02, -0.01];
        let c = PointConfiguration::new(2, 2, vec![0.5, 0.5, 0.3, 0.4]).unwrap();
        let dt = 0.1;
        let out = integrate_step(&params, &c, &inst, &[0.1, 0.2], 0.2, 0.3, 10.0, 0).unwrap();
        for i in 0..2 {
            assert!((out.coords[2 * i] - (c.coords[2 * i] + dt * 0.02)).abs() < 1e-12);
            assert!((out.coords[2 * i + 1] - (c.coords[2 * i + 1] - dt * 0.01)).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_separates_symmetric_pair_in_one_iteration() {
        let r = 0.1;
        let h = 0.03;
        let c = PointConfiguration::new(
            3,
            2,
            vec![0.5 - (2.0 * r - h) / 2.0, 0.5, 0.5, 0.5 + (2.0 * r - h) / 2.0, 0.5, 0.5],
        )
        .unwrap();
        let out = gauss_newton_project(&c, r, 1, 1.0);
        let d = geom::dist(&out, 0, 1);
        assert!((d - 2.0 * r).abs() < 1e-12, "distance {d}");
    }

    #[test]
    fn projection_leaves_feasible_config_unchanged() {
        // Pairwise and adaptive-wall feasible: d = 0.3, margin 0.15.
        let c = PointConfiguration::new(3, 2, vec![0.35, 0.5, 0.5, 0.65, 0.5, 0.5]).unwrap();
        let out = gauss_newton_project(&c, 0.1, 5, 1.0);
        assert_eq!(out.coords, c.coords);
    }

    #[test]
    fn projection_reduces_max_violation_monotonically() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<f64> = (0..30).map(|_| 0.3 + 0.4 * rng.gen::<f64>()).collect();
        let mut cur = PointConfiguration::new(3, 10, coords).unwrap();
        let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, 10, 1.0).unwrap();
        let r = 0.12;
        let mut prev = feasibility(&cur, &inst, r).max_pair_violation;
        let mut iters = 0;
        while prev > 1e-12 && iters < 400 {
            cur = gauss_newton_project(&cur, r, 1, 1.0);
            let now = feasibility(&cur, &inst, r).max_pair_violation;
            assert!(now < prev, "violation did not decrease: {prev} -> {now}");
            prev = now;
            iters += 1;
        }
        assert!(prev <= 1e-12, "never became feasible: {prev}");
    }

    #[test]
    fn proximal_contracts_toward_anchor_without_residuals() {
        let inst = ProblemInstance::new(ProblemKind::Heilbronn, 2, 2, 1.0).unwrap();
        let params = zero_model(&inst);
        let prior = PointConfiguration::new(2, 2, vec![0.1, 0.1, 0.9, 0.9]).unwrap();
        let state = PointConfiguration::new(2, 2, vec![0.3, 0.4, 0.6, 0.5]).unwrap();
        let settings = SamplerSettings {
            proximal_iters: 1,
            ..Default::default()
        };
        let tau = 0.5;
        let out = proximal_relax(&state, &prior, tau, &params, &inst, &[0.1, 0.2], 0.0, &settings)
            .unwrap();
        let eta = settings.proximal_step;
        for i in 0..4 {
            let anchor = (1.0 - tau) * prior.coords[i] + tau * state.coords[i];
            let expect = state.coords[i] - eta * (state.coords[i] - anchor);
            assert!((out.coords[i] - expect).abs() < 1e-12);
        }
        // Fixed point when already at the anchor.
        let fixed =
            proximal_relax(&prior, &prior, 1.0, &params, &inst, &[0.1, 0.2], 0.0, &settings)
                .unwrap();
        for (a, b) in fixed.coords.iter().zip(prior.coords.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn proximal_objective_nonincreasing_with_zero_model() {
        use rand::{Rng, SeedableRng};
        let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, 8, 1.0).unwrap();
        let params = zero_model(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = 0.15;
        let prior_coords: Vec<f64> = (0..24).map(|_| rng.gen::<f64>()).collect();
        let state_coords: Vec<f64> = (0..24).map(|_| 0.3 + 0.4 * rng.gen::<f64>()).collect();
        let prior = PointConfiguration::new(3, 8, prior_coords).unwrap();
        let state = PointConfiguration::new(3, 8, state_coords).unwrap();
        let cond = vec![r, 8.0, 0.0, 2.0 * r];
        let tau = 0.7;

        let objective = |c: &PointConfiguration| -> f64 {
            let anchor: Vec<f64> = prior
                .coords
                .iter()
                .zip(state.coords.iter())
                .map(|(p, x)| (1.0 - tau) * p + tau * x)
                .collect();
            let dist2: f64 = c
                .coords
                .iter()
                .zip(anchor.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let mut pen = 0.0;
            for i in 0..c.count {
                for j in (i + 1)..c.count {
                    let h = (2.0 * r - geom::dist(c, i, j)).max(0.0);
                    pen += h * h;
                }
            }
            0.5 * dist2 + pen
        };

        let mut settings = SamplerSettings::default();
        settings.proximal_iters = 1;
        let mut cur = state.clone();
        let mut prev = objective(&cur);
        for _ in 0..4 {
            cur = proximal_relax(&cur, &prior, tau, &params, &inst, &cond, r, &settings).unwrap();
            let now = objective(&cur);
            assert!(now <= prev + 1e-9, "objective increased: {prev} -> {now}");
            prev = now;
        }
    }

    #[test]
    fn objective_step_noop_on_zero_gradient() {
        let inst = ProblemInstance::new(ProblemKind::Heilbronn, 2, 3, 1.0).unwrap();
        // An exactly degenerate configuration has zero soft-min gradient by
        // symmetry of the epsilon-smoothed area at det = 0.
        let c = PointConfiguration::new(2, 3, vec![0.2, 0.2, 0.5, 0.5, 0.8, 0.8]).unwrap();
        let settings = SamplerSettings::default();
        let out = objective_projection_step(&c, &inst, 1e-3, &settings).unwrap();
        assert_eq!(out.coords, c.coords);
    }

    #[test]
    fn objective_step_improves_or_backtracks() {
        use rand::{Rng, SeedableRng};
        let inst = ProblemInstance::new(ProblemKind::Heilbronn, 2, 5, 1.0).unwrap();
        let settings = SamplerSettings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let coords: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
            let c = PointConfiguration::new(2, 5, coords).unwrap();
            let before = heilbronn_softmin(&c, &settings.heilbronn).unwrap().value;
            let out = objective_projection_step(&c, &inst, 5e-3, &settings).unwrap();
            let after = heilbronn_softmin(&out, &settings.heilbronn).unwrap().value;
            // Either the full step improved, or the half step was accepted.
            let moved: f64 = out
                .coords
                .iter()
                .zip(c.coords.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(after >= before || moved <= 2.6e-3, "after {after} before {before} moved {moved}");
        }
    }

    #[test]
    fn terminal_refine_feasible_input_unchanged() {
        let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, 2, 1.0).unwrap();
        let c = PointConfiguration::new(3, 2, vec![0.35, 0.5, 0.5, 0.65, 0.5, 0.5]).unwrap();
        let out = terminal_refine(&c, &inst, 0.1, 1e-8).unwrap();
        assert_eq!(out.coords, c.coords);
    }

    #[test]
    fn terminal_refine_resolves_tiny_overlap() {
        let r = 0.1;
        let d0 = 2.0 * r - 1e-6;
        let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, 2, 1.0).unwrap();
        let c = PointConfiguration::new(
            3,
            2,
            vec![0.5 - d0 / 2.0, 0.5, 0.5, 0.5 + d0 / 2.0, 0.5, 0.5],
        )
        .unwrap();
        let out = terminal_refine(&c, &inst, r, 1e-8).unwrap();
        let resid = (2.0 * r - geom::dist(&out, 0, 1)).max(0.0);
        assert!(resid <= 1e-8, "residual {resid}");
    }

    #[test]
    fn gas_zero_model_spheres_emits_feasible_samples() {
        let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, 8, 1.0).unwrap();
        let params = zero_model(&inst);
        let r = 0.08;
        let cond = vec![r, 8.0, 0.5, 2.0 * r];
        let settings = SamplerSettings {
            steps: 10,
            ..Default::default()
        };
        let out = gas_sample(&params, &inst, 8, &cond, &settings, 3).unwrap();
        assert_eq!(out.len(), 8);
        for s in &out {
            let rep = feasibility(s, &inst, r);
            assert!(rep.max_pair_violation <= settings.terminal_tol);
            assert!(rep.max_wall_violation <= settings.terminal_tol + 1e-12);
        }
    }

    #[test]
    fn gas_worker_count_does_not_change_output() {
        let inst = ProblemInstance::new(ProblemKind::Heilbronn, 2, 5, 1.0).unwrap();
        let params = zero_model(&inst);
        let cond = vec![5.0 / 128.0, 0.01];
        let settings = SamplerSettings {
            steps: 6,
            ..Default::default()
        };
        par::set_workers(1);
        let a = gas_sample(&params, &inst, 12, &cond, &settings, 9).unwrap();
        par::set_workers(4);
        let b = gas_sample(&params, &inst, 12, &cond, &settings, 9).unwrap();
        par::set_workers(0);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.coords, y.coords);
        }
    }
}

#[cfg(test)]
mod prior_tests {
    use super::*;
    use crate::geom::exact_star_discrepancy;

    #[test]
    fn sphere_prior_points_near_faces() {
        let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, 12, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = sample_prior(&inst, &mut rng);
        let r = 0.2 / 12f64.powf(1.0 / 3.0);
        for i in 0..c.count {
            let p = c.point(i);
            let near_face = (0..3).any(|k| {
                (p[k] - r).abs() <= 0.1 || (p[k] - (1.0 - r)).abs() <= 0.1
            });
            assert!(near_face, "point {i} not near any margin face: {p:?}");
        }
    }

    #[test]
    fn latin_hypercube_stratification() {
        let inst = ProblemInstance::new(ProblemKind::StarDiscrepancy, 2, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = sample_prior(&inst, &mut rng);
        let mut x_strata = [false; 4];
        let mut y_strata = [false; 4];
        for i in 0..4 {
            let p = c.point(i);
            let xs = (p[0] * 4.0).floor() as usize;
            let ys = (p[1] * 4.0).floor() as usize;
            assert!(!x_strata[xs.min(3)] && !y_strata[ys.min(3)]);
            x_strata[xs.min(3)] = true;
            y_strata[ys.min(3)] = true;
        }
        assert!(exact_star_discrepancy(&c).is_ok());
    }

    #[test]
    fn prior_is_deterministic_per_seed() {
        let inst = ProblemInstance::new(ProblemKind::Heilbronn, 2, 7, 1.0).unwrap();
        let a = sample_prior(&inst, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_prior(&inst, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn reflection_law() {
        let mut c = vec![-0.3, 0.5, 1.2];
        reflect_into_box(&mut c, 0.0, 1.0);
        assert!((c[0] - 0.3).abs() < 1e-15);
        assert!((c[1] - 0.5).abs() < 1e-15);
        assert!((c[2] - 0.8).abs() < 1e-15);
    }
}
