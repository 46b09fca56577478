//! Stochastic local search and the problem-specific "final push" composites.
//! SRP alternates random perturbations with annealed normalized gradient
//! descent on a smooth surrogate; a bounded quasi-Newton polish, an active
//! max-min refinement for Heilbronn, and an exact LP radii recovery for
//! circles sharpen the result before exact scoring.

use crate::error::{Error, Result};
use crate::geom::{
    self, min_pairwise_distance, min_triangle_area, PointConfiguration, ProblemInstance,
    ProblemKind,
};
use crate::simplex::{self, LpProblem};
use crate::surrogate::{
    heilbronn_active_triples, HeilbronnSurrogate, HeilbronnSurrogateParams, SphereSurrogate,
    SphereSurrogateParams, StarSurrogate, StarSurrogateParams, SumRadiiSurrogate,
    SumRadiiSurrogateParams, Surrogate, SurrogateEval,
};
use crate::{par, sampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A configuration together with its exact objective value and conditioning
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub config: PointConfiguration,
    pub score: f64,
    pub condition: Vec<f64>,
}

// ---------------------------------------------------------------------------
// SRP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrpSchedule {
    pub outer_iters: usize,
    pub inner_steps: usize,
    pub step_size: f64,
    pub step_decay: f64,
    /// Random-displacement magnitude; default is half the current step size.
    pub perturb_scale: Option<f64>,
    pub backtrack_budget: usize,
    /// Geometric sharpness schedule (beta_0, beta_final).
    pub anneal: Option<(f64, f64)>,
    pub wall_clamp: bool,
}

impl Default for SrpSchedule {
    fn default() -> Self {
        Self {
            outer_iters: 500,
            inner_steps: 60,
            step_size: 0.035,
            step_decay: 0.994,
            perturb_scale: None,
            backtrack_budget: 6,
            anneal: Some((40.0, 300.0)),
            wall_clamp: true,
        }
    }
}

impl SrpSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_steps == 0 {
            return Err(Error::Validation("SRP iteration counts must be >= 1".into()));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::Validation("step_decay must be in (0, 1]".into()));
        }
        if let Some((b0, bf)) = self.anneal {
            if !(b0 > 0.0 && bf >= b0) {
                return Err(Error::Validation(
                    "anneal needs 0 < beta_0 <= beta_final".into(),
                ));
            }
        }
        Ok(())
    }
}

fn try_eval(surrogate: &dyn Surrogate, vars: &[f64]) -> Option<SurrogateEval> {
    match surrogate.eval(vars) {
        Ok(e) if e.value.is_finite() => Some(e),
        _ => None,
    }
}

/// Stochastic relaxation with perturbations: alternate a uniform random
/// displacement with `inner_steps` normalized-gradient descent steps, with
/// per-outer step decay, optional backtracking, box clamping and sharpness
/// annealing. Returns the best-by-surrogate iterate seen.
pub fn srp(
    initial: &PointConfiguration,
    surrogate: &mut dyn Surrogate,
    schedule: &SrpSchedule,
    rng_seed: u64,
) -> PointConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut vars = initial.vars();
    if schedule.wall_clamp {
        surrogate.clamp(&mut vars);
    }
    surrogate.refresh(&vars);

    let mut best_vars = vars.clone();
    let mut best_val = try_eval(surrogate, &vars).map_or(f64::INFINITY, |e| e.value);

    let outer = schedule.outer_iters;
    for it in 0..outer {
        let frac = if outer > 1 {
            it as f64 / (outer - 1) as f64
        } else {
            1.0
        };
        surrogate.set_progress(frac);
        if let Some((b0, bf)) = schedule.anneal {
            surrogate.set_beta(b0 * (bf / b0).powf(frac));
        }
        surrogate.refresh(&vars);

        let eta = schedule.step_size * schedule.step_decay.powi(it as i32);
        let perturb = schedule.perturb_scale.unwrap_or(0.5 * eta);
        for v in vars.iter_mut() {
            *v += perturb * (2.0 * rng.gen::<f64>() - 1.0);
        }
        if schedule.wall_clamp {
            surrogate.clamp(&mut vars);
        }

        let mut cur = match try_eval(surrogate, &vars) {
            Some(e) => e,
            None => continue,
        };
        if cur.value <= best_val {
            best_val = cur.value;
            best_vars = vars.clone();
        }

        for _ in 0..schedule.inner_steps {
            let norm = cur.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < 1e-18 {
                break;
            }
            let mut step = eta;
            let base = vars.clone();
            let mut accepted = None;
            for attempt in 0..=schedule.backtrack_budget {
                let mut cand: Vec<f64> = base
                    .iter()
                    .zip(cur.gradient.iter())
                    .map(|(v, g)| v - step * g / norm)
                    .collect();
                if schedule.wall_clamp {
                    surrogate.clamp(&mut cand);
                }
                let cand_eval = try_eval(surrogate, &cand);
                let improves = cand_eval
                    .as_ref()
                    .map_or(false, |e| e.value <= cur.value);
                if improves || attempt == schedule.backtrack_budget {
                    accepted = cand_eval.map(|e| (cand, e));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, eval)) => {
                    vars = cand;
                    cur = eval;
                    if cur.value <= best_val {
                        best_val = cur.value;
                        best_vars = vars.clone();
                    }
                }
                None => break,
            }
        }
    }
    initial
        .from_vars(&best_vars)
        .expect("vars length preserved")
}

// ---------------------------------------------------------------------------
// Bounded quasi-Newton polish
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolishSettings {
    /// Quasi-Newton history length.
    pub memory: usize,
    /// Projected-gradient infinity-norm tolerance.
    pub grad_tol: f64,
    /// Relative objective-change tolerance.
    pub f_tol: f64,
    pub max_iters: usize,
    /// Per-coordinate bounds; defaults to the surrogate's own box.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for PolishSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-8,
            f_tol: 1e-12,
            max_iters: 2000,
            bounds: None,
        }
    }
}

fn clamp_to_bounds(vars: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in vars.iter_mut().zip(lo.iter()).zip(hi.iter()) {
        *v = v.clamp(l, h);
    }
}

fn projected_gradient(vars: &[f64], grad: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    vars.iter()
        .zip(grad.iter())
        .zip(lo.iter().zip(hi.iter()))
        .map(|((&v, &g), (&l, &h))| {
            if (v <= l + 1e-12 && g > 0.0) || (v >= h - 1e-12 && g < 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

/// Limited-memory quasi-Newton descent with gradient projection onto the
/// bound box and active-bound freezing. Monotone non-increasing in the
/// surrogate value.
pub fn quasi_newton_polish(
    config: &PointConfiguration,
    surrogate: &mut dyn Surrogate,
    settings: &PolishSettings,
) -> Result<PointConfiguration> {
    let (lo, hi) = match &settings.bounds {
        Some((l, h)) => (l.clone(), h.clone()),
        None => surrogate.bounds(),
    };
    if lo.len() != surrogate.dim() || hi.len() != surrogate.dim() {
        return Err(Error::ShapeMismatch("polish bounds length mismatch".into()));
    }
    let mut vars = config.vars();
    clamp_to_bounds(&mut vars, &lo, &hi);
    surrogate.refresh(&vars);

    let eval = |v: &[f64]| -> Result<SurrogateEval> { surrogate.eval(v) };
    let mut cur = match eval(&vars) {
        Ok(e) if e.value.is_finite() => e,
        _ => {
            return Err(Error::DivergentPolish {
                last: Box::new(config.clone()),
            })
        }
    };

    // (s, y, rho) history for the two-loop recursion.
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::new();

    for _ in 0..settings.max_iters {
        let pg = projected_gradient(&vars, &cur.gradient, &lo, &hi);
        let pg_inf = pg.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if pg_inf <= settings.grad_tol {
            break;
        }

        // Two-loop recursion on the projected gradient.
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(&mut q, -a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y).max(1e-300);
            for v in q.iter_mut() {
                *v *= gamma;
            }
        }
        for ((s, y, rho), &a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(&mut q, a - b, s);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        // Freeze active bounds.
        for (i, d) in dir.iter_mut().enumerate() {
            if (vars[i] <= lo[i] + 1e-12 && *d < 0.0) || (vars[i] >= hi[i] - 1e-12 && *d > 0.0) {
                *d = 0.0;
            }
        }
        if dot(&dir, &cur.gradient) >= 0.0 {
            dir = pg.iter().map(|g| -g).collect();
        }

        // Projected backtracking line search (Armijo on the projected step).
        let mut alpha = 1.0;
        let mut accepted: Option<(Vec<f64>, SurrogateEval)> = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = vars
                .iter()
                .zip(dir.iter())
                .map(|(v, d)| v + alpha * d)
                .collect();
            clamp_to_bounds(&mut cand, &lo, &hi);
            if let Ok(e) = eval(&cand) {
                if e.value.is_finite() {
                    let gs: f64 = cur
                        .gradient
                        .iter()
                        .zip(cand.iter().zip(vars.iter()))
                        .map(|(g, (c, v))| g * (c - v))
                        .sum();
                    if e.value <= cur.value + 1e-4 * gs.min(0.0) && e.value <= cur.value {
                        accepted = Some((cand, e));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((next, next_eval)) = accepted else {
            break;
        };

        let s: Vec<f64> = next.iter().zip(vars.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_eval
            .gradient
            .iter()
            .zip(cur.gradient.iter())
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > settings.memory.max(1) {
                history.pop_front();
            }
        }

        let f_drop = cur.value - next_eval.value;
        vars = next;
        cur = next_eval;
        if f_drop <= settings.f_tol * cur.value.abs().max(1.0) {
            break;
        }
    }
    config.from_vars(&vars)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn axpy(target: &mut [f64], a: f64, x: &[f64]) {
    for (t, v) in target.iter_mut().zip(x.iter()) {
        *t += a * v;
    }
}

// ---------------------------------------------------------------------------
// Heilbronn active max-min refinement
// ---------------------------------------------------------------------------

/// Sequential linearization of the lifted max-min program: maximize t subject
/// to A_ijk(X) >= t over the `k_active` smallest triangles, with a 0.01
/// infinity-norm trust region per round. Returns the iterate with the best
/// exact minimum area.
pub fn active_maxmin_refine(
    points: &PointConfiguration,
    k_active: usize,
    max_rounds: usize,
) -> Result<PointConfiguration> {
    if points.dim != 2 || points.count < 3 {
        return Err(Error::ShapeMismatch(
            "max-min refinement needs dim 2 and at least 3 points".into(),
        ));
    }
    let n = points.count;
    let trust = 0.01f64;
    let mut config = points.clone();
    let mut best_area = min_triangle_area(&config)?;
    let mut best = config.clone();
    let mut prev_t = f64::NEG_INFINITY;

    for _round in 0..max_rounds {
        let triples = heilbronn_active_triples(&config, k_active.max(1));
        // Degenerate active triangle: nudge deterministically and retry.
        let degenerate = triples
            .iter()
            .any(|&(i, j, k)| geom::triangle_det(&config, i, j, k) == 0.0);
        if degenerate {
            for (idx, c) in config.coords.iter_mut().enumerate() {
                *c = (*c + 1e-9 * ((idx as f64 * 0.754_877).fract() - 0.5)).clamp(0.0, 1.0);
            }
            continue;
        }

        // LP variables: shifted displacements delta_j = dx_j - lo_j, then t.
        let mut lo = vec![0.0; 2 * n];
        let mut width = vec![0.0; 2 * n];
        for j in 0..2 * n {
            let l = (-trust).max(-config.coords[j]);
            let u = trust.min(1.0 - config.coords[j]);
            lo[j] = l;
            width[j] = (u - l).max(0.0);
        }
        let nv = 2 * n + 1;
        let mut constraints: Vec<(Vec<f64>, f64)> = Vec::new();
        for &(i, j, k) in &triples {
            let det = geom::triangle_det(&config, i, j, k);
            let area = 0.5 * det.abs();
            let sgn = if det >= 0.0 { 0.5 } else { -0.5 };
            let mut grad = vec![0.0; 2 * n];
            let (pi, pj, pk) = (config.point(i), config.point(j), config.point(k));
            grad[2 * i] = sgn * (pj[1] - pk[1]);
            grad[2 * i + 1] = sgn * (pk[0] - pj[0]);
            grad[2 * j] = sgn * (pk[1] - pi[1]);
            grad[2 * j + 1] = sgn * (pi[0] - pk[0]);
            grad[2 * k] = sgn * (pi[1] - pj[1]);
            grad[2 * k + 1] = sgn * (pj[0] - pi[0]);
            // t - g · (delta + lo) <= area
            let mut row = vec![0.0; nv];
            let mut rhs = area;
            for (c, &g) in row.iter_mut().zip(grad.iter()) {
                *c = -g;
            }
            rhs += dot(&grad, &lo);
            row[2 * n] = 1.0;
            constraints.push((row, rhs));
        }
        for j in 0..2 * n {
            let mut row = vec![0.0; nv];
            row[j] = 1.0;
            constraints.push((row, width[j]));
        }
        let mut t_row = vec![0.0; nv];
        t_row[2 * n] = 1.0;
        constraints.push((t_row, 1.0));

        let mut objective = vec![0.0; nv];
        objective[2 * n] = 1.0;
        let sol = simplex::solve(&LpProblem {
            objective,
            constraints,
        })?;

        for j in 0..2 * n {
            config.coords[j] = (config.coords[j] + sol.x[j] + lo[j]).clamp(0.0, 1.0);
        }
        let area = min_triangle_area(&config)?;
        if area > best_area {
            best_area = area;
            best = config.clone();
        }
        if (sol.objective - prev_t).abs() < 1e-10 {
            break;
        }
        prev_t = sol.objective;
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Exact radii recovery
// ---------------------------------------------------------------------------

/// Safety shrink applied to LP radii so strict feasibility holds numerically.
pub const RADII_SHRINK: f64 = 1e-9;

/// Maximize the total radius for frozen centers: r_i bounded by the wall
/// margins and r_i + r_j by the pair distances. Solved exactly by the dense
/// simplex, then shrunk by [`RADII_SHRINK`].
pub fn radii_lp(centers: &PointConfiguration) -> Result<Vec<f64>> {
    if centers.dim != 2 {
        return Err(Error::ShapeMismatch("radii LP needs dim 2".into()));
    }
    let n = centers.count;
    for (idx, &c) in centers.coords.iter().enumerate() {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::OutOfDomain {
                index: idx,
                value: c,
                hi: 1.0,
            });
        }
    }
    let mut constraints: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        let p = centers.point(i);
        let wall = p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]);
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        constraints.push((row, wall));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = geom::dist(centers, i, j);
            if d == 0.0 {
                return Err(Error::CoincidentCenters { i, j });
            }
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            row[j] = 1.0;
            constraints.push((row, d));
        }
    }
    let sol = simplex::solve(&LpProblem {
        objective: vec![1.0; n],
        constraints,
    })?;
    Ok(sol.x.iter().map(|r| (r - RADII_SHRINK).max(0.0)).collect())
}

// ---------------------------------------------------------------------------
// Physics-push baseline
// ---------------------------------------------------------------------------

/// Reciprocal-distance repulsion baseline: each center moves along the
/// normalized sum of vectors pointing away from its neighbours, weighted by
/// 1/distance. Exists as the comparison baseline for SRP.
pub fn physics_push_baseline(
    centers: &PointConfiguration,
    iters: usize,
    step: f64,
    rng_seed: u64,
) -> PointConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = centers.count;
    let d = centers.dim;
    let mut coords = centers.coords.clone();
    let mut moves = vec![0.0; n * d];
    for _ in 0..iters {
        for m in moves.iter_mut() {
            *m = 0.0;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut d2 = 0.0;
                for k in 0..d {
                    let delta = coords[i * d + k] - coords[j * d + k];
                    d2 += delta * delta;
                }
                if d2 == 0.0 {
                    // Coincident pair: substitute a random unit direction.
                    let mut dir = vec![0.0; d];
                    let mut norm = 0.0f64;
                    for v in dir.iter_mut() {
                        *v = 2.0 * rng.gen::<f64>() - 1.0;
                        norm += *v * *v;
                    }
                    let norm = norm.sqrt().max(1e-12);
                    for (k, v) in dir.iter().enumerate() {
                        moves[i * d + k] += v / norm;
                    }
                    continue;
                }
                for k in 0..d {
                    let delta = coords[i * d + k] - coords[j * d + k];
                    moves[i * d + k] += delta / d2;
                }
            }
        }
        for i in 0..n {
            let norm: f64 = (0..d)
                .map(|k| moves[i * d + k] * moves[i * d + k])
                .sum::<f64>()
                .sqrt();
            if norm < 1e-18 {
                continue;
            }
            for k in 0..d {
                coords[i * d + k] =
                    (coords[i * d + k] + step * moves[i * d + k] / norm).clamp(0.0, 1.0);
            }
        }
    }
    PointConfiguration {
        dim: d,
        count: n,
        coords,
        radii: centers.radii.clone(),
    }
}

/// Largest common radius supported by equal circles at these centers in the
/// unit square (the min-excess comparison metric up to an affine transform).
pub fn supported_radius(centers: &PointConfiguration) -> f64 {
    let n = centers.count;
    let mut r = f64::INFINITY;
    for i in 0..n {
        let p = centers.point(i);
        for k in 0..centers.dim {
            r = r.min(p[k]).min(1.0 - p[k]);
        }
        for j in (i + 1)..n {
            r = r.min(0.5 * geom::dist(centers, i, j));
        }
    }
    r.max(0.0)
}

// ---------------------------------------------------------------------------
// Final push
// ---------------------------------------------------------------------------

/// Every hyperparameter of the local-search composite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushParams {
    pub srp: SrpSchedule,
    pub polish: PolishSettings,
    pub heilbronn: HeilbronnSurrogateParams,
    pub star: StarSurrogateParams,
    /// Rebuild star anchor grids from the current points on each refresh.
    pub star_critical_grid: bool,
    pub sumradii: SumRadiiSurrogateParams,
    pub sphere: SphereSurrogateParams,
    /// Active-set size of the max-min refinement.
    pub maxmin_k_active: usize,
    pub maxmin_rounds: usize,
    /// How many top configurations get the max-min pass during data
    /// generation (pushed flow samples always get it).
    pub refine_top: usize,
}

impl Default for PushParams {
    fn default() -> Self {
        Self {
            srp: SrpSchedule::default(),
            polish: PolishSettings::default(),
            heilbronn: HeilbronnSurrogateParams::default(),
            star: StarSurrogateParams::default(),
            star_critical_grid: true,
            sumradii: SumRadiiSurrogateParams::default(),
            sphere: SphereSurrogateParams::default(),
            maxmin_k_active: 25,
            maxmin_rounds: 50,
            refine_top: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PushContext {
    DataGeneration,
    FlowSample,
}

fn scored(instance: &ProblemInstance, config: PointConfiguration) -> Result<ScoredSample> {
    let score = exact_score(instance, &config)?;
    let condition = geom::condition_vector(instance, &config)?;
    Ok(ScoredSample {
        config,
        score,
        condition,
    })
}

/// Exact objective of a configuration: minimum pairwise distance (spheres),
/// minimum triangle area (Heilbronn), total radius (circles; recovered by LP
/// when radii are absent) or exact star discrepancy.
pub fn exact_score(instance: &ProblemInstance, config: &PointConfiguration) -> Result<f64> {
    match instance.kind {
        ProblemKind::SpheresInCube => min_pairwise_distance(config),
        ProblemKind::Heilbronn => min_triangle_area(config),
        ProblemKind::CirclesSumRadii => match &config.radii {
            Some(r) => Ok(r.iter().sum()),
            None => Ok(radii_lp(config)?.iter().sum()),
        },
        ProblemKind::StarDiscrepancy => geom::exact_star_discrepancy(config),
    }
}

/// Iteratively clamp sphere centers into the adaptive box [m(x), L-m(x)]
/// until the wall constraint holds.
fn enforce_adaptive_walls(config: &mut PointConfiguration, box_side: f64) {
    for _ in 0..50 {
        let m = sampler::adaptive_margin(config, box_side);
        let mut violated = false;
        for c in config.coords.iter_mut() {
            let clamped = c.clamp(m, box_side - m);
            if (clamped - *c).abs() > 1e-15 {
                violated = true;
            }
            *c = clamped;
        }
        if !violated {
            break;
        }
    }
}

fn push_spheres(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    params: &PushParams,
    seed: u64,
) -> Result<ScoredSample> {
    let mut surr = SphereSurrogate::new(
        instance.count,
        instance.dim,
        instance.box_side,
        params.sphere.clone(),
    );
    let relaxed = srp(config, &mut surr, &params.srp, seed);
    // The polish sees every pair and wall item; a stale active set over a
    // long descent would let unwatched pairs collide.
    surr.use_active = false;
    let polished = match quasi_newton_polish(&relaxed, &mut surr, &params.polish) {
        Ok(p) => p,
        Err(Error::DivergentPolish { last }) => *last,
        Err(e) => return Err(e),
    };
    // Make the adaptive wall constraint exact on each stage and keep the
    // best by exact minimum separation.
    let mut best: Option<ScoredSample> = None;
    for cand in [relaxed, polished] {
        let mut fixed = cand;
        enforce_adaptive_walls(&mut fixed, instance.box_side);
        let s = scored(instance, fixed)?;
        if best.as_ref().map_or(true, |b| s.score > b.score) {
            best = Some(s);
        }
    }
    Ok(best.expect("two candidates"))
}

fn push_heilbronn(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    params: &PushParams,
    seed: u64,
    ctx: PushContext,
) -> Result<ScoredSample> {
    let mut surr = HeilbronnSurrogate::new(instance.count, params.heilbronn.clone());
    let mut relaxed = srp(config, &mut surr, &params.srp, seed);
    relaxed.clamp_to_box(0.0, 1.0);
    let polished = match quasi_newton_polish(&relaxed, &mut surr, &params.polish) {
        Ok(p) => p,
        Err(Error::DivergentPolish { last }) => *last,
        Err(e) => return Err(e),
    };
    let refined = if ctx == PushContext::FlowSample {
        active_maxmin_refine(&polished, params.maxmin_k_active, params.maxmin_rounds)?
    } else {
        polished.clone()
    };
    // Exact-score tracking across stages; never worse than the input.
    let mut input = config.clone();
    input.clamp_to_box(0.0, 1.0);
    let mut best: Option<ScoredSample> = None;
    for cand in [input, relaxed, polished, refined] {
        let s = scored(instance, cand)?;
        if best.as_ref().map_or(true, |b| s.score > b.score) {
            best = Some(s);
        }
    }
    Ok(best.expect("four candidates"))
}

fn circles_variant(
    centers: &PointConfiguration,
    radii0: Vec<f64>,
    params: &PushParams,
    seed: u64,
) -> Result<PointConfiguration> {
    let start = PointConfiguration::with_radii(
        2,
        centers.count,
        centers.coords.clone(),
        radii0,
    )?;
    let mut surr = SumRadiiSurrogate::new(centers.count, params.sumradii.clone());
    let relaxed = srp(&start, &mut surr, &params.srp, seed);
    let polished = match quasi_newton_polish(&relaxed, &mut surr, &params.polish) {
        Ok(p) => p,
        Err(Error::DivergentPolish { last }) => *last,
        Err(e) => return Err(e),
    };
    // Freeze the centers found by local search; recover radii exactly.
    let frozen = PointConfiguration::new(2, polished.count, polished.coords.clone())?;
    let radii = radii_lp(&frozen)?;
    PointConfiguration::with_radii(2, frozen.count, frozen.coords, radii)
}

fn push_circles(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    params: &PushParams,
    seed: u64,
    ctx: PushContext,
) -> Result<ScoredSample> {
    let mut centers = PointConfiguration::new(2, config.count, config.coords.clone())?;
    centers.clamp_to_box(0.0, 1.0);
    let incoming = config
        .radii
        .clone()
        .unwrap_or_else(|| vec![0.0; config.count]);

    let mut candidates: Vec<PointConfiguration> = Vec::new();
    candidates.push(circles_variant(
        &centers,
        incoming,
        params,
        par::derive_seed(seed, 1),
    )?);
    if ctx == PushContext::FlowSample {
        candidates.push(circles_variant(
            &centers,
            vec![0.01; config.count],
            params,
            par::derive_seed(seed, 2),
        )?);
    }
    // The input's own centers with exact radii, so the result never falls
    // below the input quality (modulo the safety shrink).
    let base_radii = radii_lp(&centers)?;
    candidates.push(PointConfiguration::with_radii(
        2,
        centers.count,
        centers.coords.clone(),
        base_radii,
    )?);

    let mut best: Option<ScoredSample> = None;
    for cand in candidates {
        let s = scored(instance, cand)?;
        if best.as_ref().map_or(true, |b| s.score > b.score) {
            best = Some(s);
        }
    }
    Ok(best.expect("at least one candidate"))
}

fn push_star(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    params: &PushParams,
    seed: u64,
) -> Result<ScoredSample> {
    let mut surr = StarSurrogate::new(instance.count, params.star.clone(), params.star_critical_grid);
    let mut relaxed = srp(config, &mut surr, &params.srp, seed);
    relaxed.clamp_to_box(0.0, 1.0);
    let mut polished = match quasi_newton_polish(&relaxed, &mut surr, &params.polish) {
        Ok(p) => p,
        Err(Error::DivergentPolish { last }) => *last,
        Err(e) => return Err(e),
    };
    polished.clamp_to_box(0.0, 1.0);
    let mut input = config.clone();
    input.clamp_to_box(0.0, 1.0);
    // Exact-score tracking across every stage; the surrogate can disagree
    // with exact D* near its optimum, so the polish is not trusted blindly.
    let mut best: Option<ScoredSample> = None;
    for cand in [input, relaxed, polished] {
        let s = scored(instance, cand)?;
        if best.as_ref().map_or(true, |b| s.score < b.score) {
            best = Some(s);
        }
    }
    Ok(best.expect("three candidates"))
}

pub(crate) fn final_push_ctx(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    params: &PushParams,
    seed: u64,
    ctx: PushContext,
) -> Result<ScoredSample> {
    match instance.kind {
        ProblemKind::SpheresInCube => push_spheres(config, instance, params, seed),
        ProblemKind::Heilbronn => push_heilbronn(config, instance, params, seed, ctx),
        ProblemKind::CirclesSumRadii => push_circles(config, instance, params, seed, ctx),
        ProblemKind::StarDiscrepancy => push_star(config, instance, params, seed),
    }
}

/// Problem-dispatched refinement composite applied to generated samples:
/// SRP, quasi-Newton polish and the exact subproblem solves, followed by
/// exact scoring.
pub fn final_push(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    params: &PushParams,
    seed: u64,
) -> Result<ScoredSample> {
    final_push_ctx(config, instance, params, seed, PushContext::FlowSample)
}

// ---------------------------------------------------------------------------
// Training-set generation
// ---------------------------------------------------------------------------

/// Run `n_samples` seeded final pushes from prior initials and retain the top
/// fraction by objective. During data generation the Heilbronn max-min pass
/// is applied only to the best [`PushParams::refine_top`] configurations.
pub fn generate_training_set(
    instance: &ProblemInstance,
    n_samples: usize,
    top_fraction: f64,
    params: &PushParams,
    seed: u64,
) -> Result<Vec<ScoredSample>> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Validation("top_fraction must be in (0, 1]".into()));
    }
    let results = par::run_indexed(n_samples, |i| {
        let s = par::sample_seed(seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let initial = sampler::sample_prior(instance, &mut rng);
        final_push_ctx(
            &initial,
            instance,
            params,
            par::derive_seed(s, 7),
            PushContext::DataGeneration,
        )
    });
    let mut samples: Vec<ScoredSample> = Vec::with_capacity(n_samples);
    for r in results {
        samples.push(r?);
    }

    let dir = instance.direction();
    sort_samples(&mut samples, dir);

    if instance.kind == ProblemKind::Heilbronn && params.refine_top > 0 {
        let top = params.refine_top.min(samples.len());
        let refined = par::run_indexed(top, |i| {
            active_maxmin_refine(
                &samples[i].config,
                params.maxmin_k_active,
                params.maxmin_rounds,
            )
        });
        for (i, r) in refined.into_iter().enumerate() {
            let cfg = r?;
            let s = scored(instance, cfg)?;
            if dir.better(s.score, samples[i].score) {
                samples[i] = s;
            }
        }
        sort_samples(&mut samples, dir);
    }

    let keep = ((top_fraction * n_samples as f64).ceil() as usize)
        .max(1)
        .min(samples.len());
    samples.truncate(keep);
    Ok(samples)
}

/// Sort samples best-first for the instance's objective direction, with a
/// deterministic total order.
pub fn sort_samples(samples: &mut [ScoredSample], direction: crate::geom::Direction) {
    samples.sort_by(|a, b| match direction {
        crate::geom::Direction::Maximize => b.score.total_cmp(&a.score),
        crate::geom::Direction::Minimize => a.score.total_cmp(&b.score),
    });
}
