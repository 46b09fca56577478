//! Differentiable surrogate objectives with hand-coded gradients. These are
//! shared by the SRP local search, the flow-model endpoint penalties and the
//! sampler's objective hooks. Every gradient here is validated against
//! central finite differences in the test suite; there is no autodiff.

use crate::error::{Error, Result};
use crate::geom::{triangle_det, PointConfiguration};
use serde::{Deserialize, Serialize};

/// Value and gradient of a surrogate at one point. The gradient is aligned
/// with the configuration's flattened coordinates (plus radii when present).
#[derive(Debug, Clone)]
pub struct SurrogateEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Regularized pair distance used inside gradients so near-coincident points
/// do not produce 0/0; the hard error is reserved for exact coincidence.
#[inline]
pub(crate) fn reg_dist(d2: f64) -> f64 {
    (d2 + 1e-18).sqrt()
}

/// Logistic sigmoid with the exponent clamped to |z| <= 60.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-60.0, 60.0);
    1.0 / (1.0 + (-z).exp())
}

/// Softplus (1/beta)·log(1+e^{beta·u}) with the stable branch for beta·u > 30.
#[inline]
pub fn softplus(u: f64, beta: f64) -> f64 {
    let v = beta * u;
    if v > 30.0 {
        u + (-v).exp().ln_1p() / beta
    } else {
        v.exp().ln_1p() / beta
    }
}

// ---------------------------------------------------------------------------
// Sphere / circle overlap energy
// ---------------------------------------------------------------------------

/// Softplus overlap energy Σ_{i<j} ψ(2r − ‖x_i − x_j‖).
pub fn overlap_energy(
    config: &PointConfiguration,
    r: f64,
    beta_softplus: f64,
) -> Result<SurrogateEval> {
    let n = config.count;
    let d = config.dim;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = crate::geom::dist2(config, i, j);
            if d2 == 0.0 {
                return Err(Error::CoincidentPair { i, j });
            }
            let dist = d2.sqrt();
            let u = 2.0 * r - dist;
            value += softplus(u, beta_softplus);
            let dpsi = sigmoid(beta_softplus * u);
            let dreg = reg_dist(d2);
            for k in 0..d {
                let delta = config.point(i)[k] - config.point(j)[k];
                let g = -dpsi * delta / dreg;
                grad[i * d + k] += g;
                grad[j * d + k] -= g;
            }
        }
    }
    Ok(SurrogateEval {
        value,
        gradient: grad,
    })
}

// ---------------------------------------------------------------------------
// Heilbronn soft-min triangle area
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeilbronnSurrogateParams {
    /// Log-sum-exp sharpness.
    pub beta: f64,
    /// Smoothing inside the |det| proxy.
    pub epsilon: f64,
    /// Restrict the log-sum-exp to the K smallest triangles (by exact area).
    pub active_k: Option<usize>,
    /// Quadratic wall-penalty weight for the SRP loss.
    pub wall_weight: f64,
}

impl Default for HeilbronnSurrogateParams {
    fn default() -> Self {
        Self {
            beta: 40.0,
            epsilon: 1e-12,
            active_k: Some(100),
            wall_weight: 1.0,
        }
    }
}

fn all_triples(n: usize) -> Vec<(usize, usize, usize)> {
    let mut v = Vec::with_capacity(n * (n - 1) * (n - 2) / 6);
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                v.push((i, j, k));
            }
        }
    }
    v
}

/// Select the indices of the `k` smallest-area triangles (plus ties within a
/// small tolerance), returned in lexicographic triple order so summation
/// order is deterministic.
pub(crate) fn heilbronn_active_triples(
    config: &PointConfiguration,
    k: usize,
) -> Vec<(usize, usize, usize)> {
    let triples = all_triples(config.count);
    if triples.len() <= k {
        return triples;
    }
    let mut areas: Vec<(f64, usize)> = triples
        .iter()
        .enumerate()
        .map(|(t, &(i, j, kk))| (0.5 * triangle_det(config, i, j, kk).abs(), t))
        .collect();
    areas.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cutoff = areas[k - 1].0 + 1e-9;
    let mut keep: Vec<usize> = areas
        .iter()
        .take_while(|(a, _)| *a <= cutoff)
        .map(|&(_, t)| t)
        .collect();
    keep.sort_unstable();
    keep.into_iter().map(|t| triples[t]).collect()
}

fn heilbronn_softmin_over(
    config: &PointConfiguration,
    params: &HeilbronnSurrogateParams,
    triples: &[(usize, usize, usize)],
) -> SurrogateEval {
    let n = config.count;
    let beta = params.beta;
    let eps = params.epsilon;

    // Smoothed areas and the max-shift for a stable log-sum-exp.
    let areas: Vec<f64> = triples
        .iter()
        .map(|&(i, j, k)| 0.5 * (triangle_det(config, i, j, k).powi(2) + eps).sqrt())
        .collect();
    let m = areas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for &a in &areas {
        z += (-beta * (a - m)).exp();
    }
    let value = m - z.ln() / beta;

    let mut grad = vec![0.0; 2 * n];
    for (t, &(i, j, k)) in triples.iter().enumerate() {
        let w = (-beta * (areas[t] - m)).exp() / z;
        let det = triangle_det(config, i, j, k);
        // dA/dD for A = ½·sqrt(D²+ε).
        let da_dd = 0.5 * det / (det * det + eps).sqrt();
        let c = w * da_dd;
        let (pi, pj, pk) = (config.point(i), config.point(j), config.point(k));
        grad[2 * i] += c * (pj[1] - pk[1]);
        grad[2 * i + 1] += c * (pk[0] - pj[0]);
        grad[2 * j] += c * (pk[1] - pi[1]);
        grad[2 * j + 1] += c * (pi[0] - pk[0]);
        grad[2 * k] += c * (pi[1] - pj[1]);
        grad[2 * k + 1] += c * (pj[0] - pi[0]);
    }
    SurrogateEval {
        value,
        gradient: grad,
    }
}

/// Soft-min (log-sum-exp) of the smoothed triangle areas, optionally over the
/// `active_k` smallest triangles of the current iterate.
pub fn heilbronn_softmin(
    config: &PointConfiguration,
    params: &HeilbronnSurrogateParams,
) -> Result<SurrogateEval> {
    if config.dim != 2 || config.count < 3 {
        return Err(Error::ShapeMismatch(
            "heilbronn softmin needs dim 2 and at least 3 points".into(),
        ));
    }
    let triples = match params.active_k {
        Some(k) => heilbronn_active_triples(config, k.max(1)),
        None => all_triples(config.count),
    };
    Ok(heilbronn_softmin_over(config, params, &triples))
}

fn wall_penalty_2d(config: &PointConfiguration) -> (f64, Vec<f64>) {
    let n = config.count;
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * n];
    for i in 0..n {
        for k in 0..2 {
            let c = config.point(i)[k];
            let below = (-c).max(0.0);
            let above = (c - 1.0).max(0.0);
            value += below * below + above * above;
            grad[2 * i + k] += -2.0 * below + 2.0 * above;
        }
    }
    (value, grad)
}

/// SRP loss for Heilbronn: quadratic wall penalty minus the soft-min area.
pub fn heilbronn_srp_loss(
    config: &PointConfiguration,
    params: &HeilbronnSurrogateParams,
) -> Result<SurrogateEval> {
    let softmin = heilbronn_softmin(config, params)?;
    let (w, wgrad) = wall_penalty_2d(config);
    let value = params.wall_weight * w - softmin.value;
    let gradient = wgrad
        .iter()
        .zip(softmin.gradient.iter())
        .map(|(wg, sg)| params.wall_weight * wg - sg)
        .collect();
    Ok(SurrogateEval { value, gradient })
}

// ---------------------------------------------------------------------------
// Star discrepancy surrogate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StarSurrogateParams {
    /// Anchored-box corner grids in (0, 1].
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
    /// Sigmoid gate temperature.
    pub tau_sigmoid: f64,
    /// Optional geometric (start, end) schedule for the gate temperature,
    /// advanced with the SRP anneal.
    pub tau_anneal: Option<(f64, f64)>,
    /// Log-sum-exp sharpness.
    pub beta: f64,
    /// Smoothing inside the |Δ| proxy.
    pub epsilon: f64,
    /// Restrict to the top-K boxes with largest |Δ| of the current iterate.
    pub top_k: Option<usize>,
}

impl Default for StarSurrogateParams {
    fn default() -> Self {
        Self {
            grid_x: uniform_grid(16),
            grid_y: uniform_grid(16),
            tau_sigmoid: 0.01,
            tau_anneal: None,
            beta: 50.0,
            epsilon: 1e-12,
            top_k: None,
        }
    }
}

/// m equispaced anchors k/m for k = 1..=m.
pub fn uniform_grid(m: usize) -> Vec<f64> {
    (1..=m).map(|k| k as f64 / m as f64).collect()
}

/// Separable sigmoid gate tables, flattened: sx[ai*n+i] = σ((a_ai − x_i)/τ).
fn star_gates(
    config: &PointConfiguration,
    params: &StarSurrogateParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = config.count;
    let tau = params.tau_sigmoid;
    let mut sx = Vec::with_capacity(params.grid_x.len() * n);
    for &a in &params.grid_x {
        for i in 0..n {
            sx.push(sigmoid((a - config.point(i)[0]) / tau));
        }
    }
    let mut sy = Vec::with_capacity(params.grid_y.len() * n);
    for &b in &params.grid_y {
        for i in 0..n {
            sy.push(sigmoid((b - config.point(i)[1]) / tau));
        }
    }
    (sx, sy)
}

fn star_delta_at(
    params: &StarSurrogateParams,
    sx: &[f64],
    sy: &[f64],
    n: usize,
    ai: usize,
    bi: usize,
) -> f64 {
    let nf = n as f64;
    let (xr, yr) = (&sx[ai * n..(ai + 1) * n], &sy[bi * n..(bi + 1) * n]);
    let mut mass = 0.0;
    for i in 0..n {
        mass += xr[i] * yr[i];
    }
    mass / nf - params.grid_x[ai] * params.grid_y[bi]
}

fn star_deltas_from_gates(
    params: &StarSurrogateParams,
    sx: &[f64],
    sy: &[f64],
    n: usize,
) -> Vec<f64> {
    let nb = params.grid_y.len();
    let total = params.grid_x.len() * nb;
    (0..total)
        .map(|t| star_delta_at(params, sx, sy, n, t / nb, t % nb))
        .collect()
}

/// Top-K boxes by |Δ|, returned in grid order so the full selection
/// reproduces the unrestricted sum bit-for-bit.
pub(crate) fn star_top_boxes(deltas: &[f64], k: usize) -> Vec<usize> {
    if k >= deltas.len() {
        return (0..deltas.len()).collect();
    }
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&p, &q| deltas[q].abs().total_cmp(&deltas[p].abs()).then(p.cmp(&q)));
    let mut keep: Vec<usize> = order.into_iter().take(k.max(1)).collect();
    keep.sort_unstable();
    keep
}

/// Value and gradient over an explicit box subset; deltas are aligned with
/// `boxes` by position.
fn star_surrogate_over(
    config: &PointConfiguration,
    params: &StarSurrogateParams,
    boxes: &[usize],
    deltas_at: &[f64],
    sx: &[f64],
    sy: &[f64],
) -> SurrogateEval {
    let n = config.count;
    let nf = n as f64;
    let (tau, beta, eps) = (params.tau_sigmoid, params.beta, params.epsilon);
    let nb = params.grid_y.len();

    let gs: Vec<f64> = deltas_at.iter().map(|d| (d * d + eps).sqrt()).collect();
    let m = gs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &g in &gs {
        z += (beta * (g - m)).exp();
    }
    let value = m + z.ln() / beta;

    let mut grad = vec![0.0; 2 * n];
    for (pos, &t) in boxes.iter().enumerate() {
        let w = (beta * (gs[pos] - m)).exp() / z;
        let delta = deltas_at[pos];
        let dg_dd = delta / (delta * delta + eps).sqrt();
        let coef = w * dg_dd / (nf * tau);
        let (ai, bi) = (t / nb, t % nb);
        let (xr, yr) = (&sx[ai * n..(ai + 1) * n], &sy[bi * n..(bi + 1) * n]);
        for i in 0..n {
            let sa = xr[i];
            let sb = yr[i];
            grad[2 * i] += coef * (-sa * (1.0 - sa) * sb);
            grad[2 * i + 1] += coef * (-sb * (1.0 - sb) * sa);
        }
    }
    SurrogateEval {
        value,
        gradient: grad,
    }
}

/// Smooth softmax aggregation of per-box discrepancies over an anchor grid.
pub fn star_surrogate(
    config: &PointConfiguration,
    params: &StarSurrogateParams,
) -> Result<SurrogateEval> {
    if config.dim != 2 {
        return Err(Error::ShapeMismatch("star surrogate needs dim 2".into()));
    }
    if params.grid_x.is_empty() || params.grid_y.is_empty() {
        return Err(Error::Validation("star surrogate needs nonempty grids".into()));
    }
    let (sx, sy) = star_gates(config, params);
    let deltas = star_deltas_from_gates(params, &sx, &sy, config.count);
    let boxes: Vec<usize> = match params.top_k {
        Some(k) => star_top_boxes(&deltas, k.max(1)),
        None => (0..deltas.len()).collect(),
    };
    let deltas_at: Vec<f64> = boxes.iter().map(|&t| deltas[t]).collect();
    Ok(star_surrogate_over(
        config, params, &boxes, &deltas_at, &sx, &sy,
    ))
}

// ---------------------------------------------------------------------------
// Sum-of-radii penalty objective
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SumRadiiSurrogateParams {
    pub wall_weight: f64,
    pub overlap_weight: f64,
    pub radius_bonus: f64,
}

impl Default for SumRadiiSurrogateParams {
    fn default() -> Self {
        Self {
            wall_weight: 50.0,
            overlap_weight: 50.0,
            radius_bonus: 1.0,
        }
    }
}

/// Smooth penalty objective for circle packing: quadratic wall and overlap
/// hinges minus the total radius. Gradient covers centers then radii (3N).
pub fn sumradii_srp_loss(
    config: &PointConfiguration,
    params: &SumRadiiSurrogateParams,
) -> Result<SurrogateEval> {
    if config.dim != 2 {
        return Err(Error::ShapeMismatch("sum-radii loss needs dim 2".into()));
    }
    let radii = config.radii.as_ref().ok_or(Error::RadiiAbsent)?;
    let n = config.count;
    let (w_wall, w_ov, alpha) = (
        params.wall_weight,
        params.overlap_weight,
        params.radius_bonus,
    );
    let mut value = 0.0;
    let mut grad = vec![0.0; 3 * n];

    for i in 0..n {
        let (x, y, r) = (config.point(i)[0], config.point(i)[1], radii[i]);
        // [r - x]+, [r - (1-x)]+, [r - y]+, [r - (1-y)]+ squared.
        let terms = [
            (r - x, -1.0, 0),
            (r - (1.0 - x), 1.0, 0),
            (r - y, -1.0, 1),
            (r - (1.0 - y), 1.0, 1),
        ];
        for (u, dsign, axis) in terms {
            let up = u.max(0.0);
            value += w_wall * up * up;
            grad[2 * i + axis] += w_wall * 2.0 * up * dsign;
            grad[2 * n + i] += w_wall * 2.0 * up;
        }
        value -= alpha * r;
        grad[2 * n + i] -= alpha;
    }

    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = crate::geom::dist2(config, i, j);
            let dist = d2.sqrt();
            let u = radii[i] + radii[j] - dist;
            if d2 == 0.0 && radii[i] + radii[j] > 0.0 {
                return Err(Error::CoincidentPair { i, j });
            }
            let up = u.max(0.0);
            if up > 0.0 {
                value += w_ov * up * up;
                let dreg = reg_dist(d2);
                for k in 0..2 {
                    let delta = config.point(i)[k] - config.point(j)[k];
                    let g = w_ov * 2.0 * up * (-delta / dreg);
                    grad[2 * i + k] += g;
                    grad[2 * j + k] -= g;
                }
                grad[2 * n + i] += w_ov * 2.0 * up;
                grad[2 * n + j] += w_ov * 2.0 * up;
            }
        }
    }
    Ok(SurrogateEval {
        value,
        gradient: grad,
    })
}

// ---------------------------------------------------------------------------
// The SRP-facing surrogate trait
// ---------------------------------------------------------------------------

/// A smooth objective over a flattened variable vector, minimized by the
/// local search. `refresh` re-selects cached active sets (and adaptive
/// targets) once per SRP outer iteration; `set_beta` is the annealing hook.
pub trait Surrogate: Send {
    fn dim(&self) -> usize;
    fn eval(&self, vars: &[f64]) -> Result<SurrogateEval>;
    fn refresh(&mut self, _vars: &[f64]) {}
    fn set_beta(&mut self, _beta: f64) {}
    /// Fraction of the annealing schedule completed, in [0, 1].
    fn set_progress(&mut self, _frac: f64) {}
    /// Project an iterate into the feasible box.
    fn clamp(&self, _vars: &mut [f64]) {}
    /// Per-coordinate bounds for the quasi-Newton polish.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
}

fn unit_box_bounds(len: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![0.0; len], vec![1.0; len])
}

/// Heilbronn SRP surrogate with an active triangle set refreshed per outer
/// iteration.
pub struct HeilbronnSurrogate {
    pub params: HeilbronnSurrogateParams,
    count: usize,
    active: Option<Vec<(usize, usize, usize)>>,
}

impl HeilbronnSurrogate {
    pub fn new(count: usize, params: HeilbronnSurrogateParams) -> Self {
        Self {
            params,
            count,
            active: None,
        }
    }

    fn config_from(&self, vars: &[f64]) -> PointConfiguration {
        PointConfiguration {
            dim: 2,
            count: self.count,
            coords: vars.to_vec(),
            radii: None,
        }
    }
}

impl Surrogate for HeilbronnSurrogate {
    fn dim(&self) -> usize {
        2 * self.count
    }

    fn eval(&self, vars: &[f64]) -> Result<SurrogateEval> {
        let config = self.config_from(vars);
        match &self.active {
            Some(triples) => {
                let softmin = heilbronn_softmin_over(&config, &self.params, triples);
                let (w, wgrad) = wall_penalty_2d(&config);
                let value = self.params.wall_weight * w - softmin.value;
                let gradient = wgrad
                    .iter()
                    .zip(softmin.gradient.iter())
                    .map(|(wg, sg)| self.params.wall_weight * wg - sg)
                    .collect();
                Ok(SurrogateEval { value, gradient })
            }
            None => heilbronn_srp_loss(&config, &self.params),
        }
    }

    fn refresh(&mut self, vars: &[f64]) {
        if let Some(k) = self.params.active_k {
            let config = self.config_from(vars);
            self.active = Some(heilbronn_active_triples(&config, k.max(1)));
        }
    }

    fn set_beta(&mut self, beta: f64) {
        self.params.beta = beta;
    }

    fn clamp(&self, vars: &mut [f64]) {
        for v in vars.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        unit_box_bounds(2 * self.count)
    }
}

/// Star-discrepancy SRP surrogate; optionally rebuilds the anchor grids from
/// the current point coordinates (critical grid) on each refresh, and caches
/// the top-K active boxes so inner descent steps see a fixed smooth
/// objective.
pub struct StarSurrogate {
    pub params: StarSurrogateParams,
    count: usize,
    pub critical_grid: bool,
    active: Option<Vec<usize>>,
}

impl StarSurrogate {
    pub fn new(count: usize, params: StarSurrogateParams, critical_grid: bool) -> Self {
        Self {
            params,
            count,
            critical_grid,
            active: None,
        }
    }

    fn config_from(&self, vars: &[f64]) -> PointConfiguration {
        PointConfiguration {
            dim: 2,
            count: self.count,
            coords: vars.to_vec(),
            radii: None,
        }
    }
}

impl Surrogate for StarSurrogate {
    fn dim(&self) -> usize {
        2 * self.count
    }

    fn eval(&self, vars: &[f64]) -> Result<SurrogateEval> {
        let config = self.config_from(vars);
        match &self.active {
            Some(boxes) => {
                let n = config.count;
                let nb = self.params.grid_y.len();
                let (sx, sy) = star_gates(&config, &self.params);
                let deltas_at: Vec<f64> = boxes
                    .iter()
                    .map(|&t| star_delta_at(&self.params, &sx, &sy, n, t / nb, t % nb))
                    .collect();
                Ok(star_surrogate_over(
                    &config,
                    &self.params,
                    boxes,
                    &deltas_at,
                    &sx,
                    &sy,
                ))
            }
            None => star_surrogate(&config, &self.params),
        }
    }

    fn refresh(&mut self, vars: &[f64]) {
        if self.critical_grid {
            let mut gx: Vec<f64> = (0..self.count)
                .map(|i| vars[2 * i].clamp(1e-6, 1.0))
                .collect();
            let mut gy: Vec<f64> = (0..self.count)
                .map(|i| vars[2 * i + 1].clamp(1e-6, 1.0))
                .collect();
            gx.push(1.0);
            gy.push(1.0);
            gx.sort_by(|a, b| a.total_cmp(b));
            gy.sort_by(|a, b| a.total_cmp(b));
            gx.dedup();
            gy.dedup();
            self.params.grid_x = gx;
            self.params.grid_y = gy;
        }
        if let Some(k) = self.params.top_k {
            let config = self.config_from(vars);
            let (sx, sy) = star_gates(&config, &self.params);
            let deltas = star_deltas_from_gates(&self.params, &sx, &sy, config.count);
            self.active = Some(star_top_boxes(&deltas, k.max(1)));
        } else {
            self.active = None;
        }
    }

    fn set_beta(&mut self, beta: f64) {
        self.params.beta = beta;
    }

    fn set_progress(&mut self, frac: f64) {
        if let Some((t0, t1)) = self.params.tau_anneal {
            self.params.tau_sigmoid = t0 * (t1 / t0).powf(frac.clamp(0.0, 1.0));
        }
    }

    fn clamp(&self, vars: &mut [f64]) {
        for v in vars.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        unit_box_bounds(2 * self.count)
    }
}

/// Circle sum-of-radii SRP surrogate over centers and radii.
pub struct SumRadiiSurrogate {
    pub params: SumRadiiSurrogateParams,
    count: usize,
}

impl SumRadiiSurrogate {
    pub fn new(count: usize, params: SumRadiiSurrogateParams) -> Self {
        Self { params, count }
    }
}

impl Surrogate for SumRadiiSurrogate {
    fn dim(&self) -> usize {
        3 * self.count
    }

    fn eval(&self, vars: &[f64]) -> Result<SurrogateEval> {
        let config = PointConfiguration {
            dim: 2,
            count: self.count,
            coords: vars[..2 * self.count].to_vec(),
            radii: Some(vars[2 * self.count..].to_vec()),
        };
        sumradii_srp_loss(&config, &self.params)
    }

    fn clamp(&self, vars: &mut [f64]) {
        let n = self.count;
        for v in vars[..2 * n].iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        for v in vars[2 * n..].iter_mut() {
            *v = v.clamp(0.0, 0.5);
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count;
        let mut lo = vec![0.0; 3 * n];
        let mut hi = vec![1.0; 3 * n];
        for v in hi[2 * n..].iter_mut() {
            *v = 0.5;
        }
        let _ = &mut lo;
        (lo, hi)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SphereSurrogateParams {
    /// Softplus sharpness of the overlap term.
    pub beta_softplus: f64,
    /// Soft-min sharpness over pair distances.
    pub beta_softmin: f64,
    /// Adaptive target separation as a multiple of the current d_min.
    pub target_margin: f64,
    /// Pairs within this window above d_min stay in the active set.
    pub active_window: f64,
    pub overlap_weight: f64,
    pub softmin_weight: f64,
}

impl Default for SphereSurrogateParams {
    fn default() -> Self {
        Self {
            beta_softplus: 200.0,
            beta_softmin: 200.0,
            target_margin: 1.02,
            active_window: 0.06,
            overlap_weight: 1.0,
            softmin_weight: 1.0,
        }
    }
}

/// Sphere-packing SRP surrogate over the extended distance family
/// {‖x_i − x_j‖} ∪ {2·dist(x_i, wall)}: a soft-min term whose ascent
/// maximizes the effective packing separation, plus a softplus overlap
/// penalty toward a target separation tied to the current minimum. Wall
/// distances enter doubled (the mirror-image distance), so the soft-min
/// directly encodes max min(d_min, 2·margin) and no adaptive clamp is
/// needed during the search.
pub struct SphereSurrogate {
    pub params: SphereSurrogateParams,
    count: usize,
    space_dim: usize,
    box_side: f64,
    target_sep: f64,
    /// When false, every pair and wall item participates in each eval; the
    /// quasi-Newton polish needs this since its long descent would otherwise
    /// collide items outside a stale active set.
    pub use_active: bool,
    /// Active items: pair (i, j) encoded as (i, j); wall item encoded as
    /// (i, count + 2·axis + side).
    active: Option<Vec<(usize, usize)>>,
}

#[derive(Clone, Copy)]
enum DistItem {
    Pair(usize, usize),
    /// (point, axis, side): side 0 is the low wall, 1 the high wall.
    Wall(usize, usize, usize),
}

impl SphereSurrogate {
    pub fn new(count: usize, space_dim: usize, box_side: f64, params: SphereSurrogateParams) -> Self {
        Self {
            params,
            count,
            space_dim,
            box_side,
            target_sep: box_side,
            use_active: true,
            active: None,
        }
    }

    fn decode(&self, (a, b): (usize, usize)) -> DistItem {
        if b < self.count {
            DistItem::Pair(a, b)
        } else {
            let w = b - self.count;
            DistItem::Wall(a, w / 2, w % 2)
        }
    }

    fn all_items(&self) -> Vec<(usize, usize)> {
        let n = self.count;
        let mut v = Vec::with_capacity(n * (n - 1) / 2 + 2 * n * self.space_dim);
        for i in 0..n {
            for j in (i + 1)..n {
                v.push((i, j));
            }
        }
        for i in 0..n {
            for k in 0..self.space_dim {
                v.push((i, n + 2 * k));
                v.push((i, n + 2 * k + 1));
            }
        }
        v
    }

    fn item_dist(&self, vars: &[f64], code: (usize, usize)) -> f64 {
        let d = self.space_dim;
        match self.decode(code) {
            DistItem::Pair(i, j) => {
                let mut s = 0.0;
                for k in 0..d {
                    let delta = vars[i * d + k] - vars[j * d + k];
                    s += delta * delta;
                }
                s.sqrt()
            }
            DistItem::Wall(i, axis, side) => {
                let c = vars[i * d + axis];
                if side == 0 {
                    2.0 * c
                } else {
                    2.0 * (self.box_side - c)
                }
            }
        }
    }

    fn min_item_dist(&self, vars: &[f64], items: &[(usize, usize)]) -> f64 {
        items
            .iter()
            .map(|&c| self.item_dist(vars, c))
            .fold(f64::INFINITY, f64::min)
    }
}

impl Surrogate for SphereSurrogate {
    fn dim(&self) -> usize {
        self.count * self.space_dim
    }

    fn eval(&self, vars: &[f64]) -> Result<SurrogateEval> {
        let d = self.space_dim;
        let owned;
        let items: &[(usize, usize)] = match &self.active {
            Some(p) => p,
            None => {
                owned = self.all_items();
                &owned
            }
        };
        let p = &self.params;
        let beta = p.beta_softmin;

        let dists: Vec<f64> = items.iter().map(|&c| self.item_dist(vars, c)).collect();
        for (t, &code) in items.iter().enumerate() {
            if dists[t] == 0.0 {
                if let DistItem::Pair(i, j) = self.decode(code) {
                    return Err(Error::CoincidentPair { i, j });
                }
            }
        }
        let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let target = self.target_sep.min(p.target_margin * self.box_side);

        let mut z = 0.0;
        for &dist in &dists {
            z += (-beta * (dist - dmin)).exp();
        }
        let softmin = dmin - z.ln() / beta;

        // The overlap term is averaged over items so the total stays on the
        // soft-min's scale regardless of how many pairs are active; a summed
        // penalty would rate a collapsed configuration better than a packed
        // one.
        let inv_items = 1.0 / items.len() as f64;
        let mut value = -p.softmin_weight * softmin;
        let mut grad = vec![0.0; vars.len()];
        for (t, &code) in items.iter().enumerate() {
            let dist = dists[t];
            let w_soft = (-beta * (dist - dmin)).exp() / z;
            let u = target - dist;
            value += p.overlap_weight * inv_items * softplus(u, p.beta_softplus);
            let dpsi = p.overlap_weight * inv_items * sigmoid(p.beta_softplus * u);
            // d(value)/d(dist): both terms favour larger distances.
            let dv_dd = -dpsi - p.softmin_weight * w_soft;
            match self.decode(code) {
                DistItem::Pair(i, j) => {
                    let dreg = reg_dist(dist * dist);
                    for k in 0..d {
                        let delta = vars[i * d + k] - vars[j * d + k];
                        let g = dv_dd * delta / dreg;
                        grad[i * d + k] += g;
                        grad[j * d + k] -= g;
                    }
                }
                DistItem::Wall(i, axis, side) => {
                    // dist = 2c (low) or 2(L−c) (high).
                    let sign = if side == 0 { 2.0 } else { -2.0 };
                    grad[i * d + axis] += dv_dd * sign;
                }
            }
        }
        Ok(SurrogateEval {
            value,
            gradient: grad,
        })
    }

    fn refresh(&mut self, vars: &[f64]) {
        let all = self.all_items();
        let dmin = self.min_item_dist(vars, &all);
        self.target_sep = self.params.target_margin * dmin;
        if !self.use_active {
            self.active = None;
            return;
        }
        let window = (dmin + self.params.active_window.max(0.04 * dmin))
            .max(1.1 * self.target_sep);
        let mut active: Vec<(usize, usize)> = all
            .iter()
            .copied()
            .filter(|&c| self.item_dist(vars, c) <= window)
            .collect();
        if active.is_empty() {
            active = all;
        }
        self.active = Some(active);
    }

    fn set_beta(&mut self, beta: f64) {
        // The anneal drives the soft-min sharpness: smooth and global early,
        // concentrated on the worst item late.
        self.params.beta_softmin = beta;
    }

    fn clamp(&self, vars: &mut [f64]) {
        for v in vars.iter_mut() {
            *v = v.clamp(0.0, self.box_side);
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![0.0; self.dim()],
            vec![self.box_side; self.dim()],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_config(dim: usize, n: usize, seed: u64) -> PointConfiguration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<f64> = (0..dim * n).map(|_| rng.gen::<f64>()).collect();
        PointConfiguration::new(dim, n, coords).unwrap()
    }

    #[test]
    fn overlap_energy_at_exact_tangency() {
        let c = PointConfiguration::new(3, 2, vec![0.0, 0.0, 0.0, 0.4, 0.0, 0.0]).unwrap();
        let e = overlap_energy(&c, 0.2, 10.0).unwrap();
        assert!((e.value - 2.0f64.ln() / 10.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_energy_vanishes_far_apart() {
        let c = PointConfiguration::new(3, 2, vec![0.0, 0.0, 0.0, 10.4, 0.0, 0.0]).unwrap();
        let e = overlap_energy(&c, 0.2, 10.0).unwrap();
        assert!(e.value <= 1e-40);
    }

    #[test]
    fn overlap_energy_rejects_coincident_points() {
        let c = PointConfiguration::new(3, 2, vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            overlap_energy(&c, 0.2, 10.0),
            Err(Error::CoincidentPair { .. })
        ));
    }

    #[test]
    fn overlap_energy_gradient_matches_finite_differences() {
        let c = random_config(3, 8, 42);
        let grad = overlap_energy(&c, 0.3, 25.0).unwrap().gradient;
        let fd = fdcheck::central_diff(
            |v| {
                let cfg = PointConfiguration::new(3, 8, v.to_vec()).unwrap();
                overlap_energy(&cfg, 0.3, 25.0).unwrap().value
            },
            &c.coords,
            1e-6,
        );
        assert!(fdcheck::max_rel_err(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn softmin_single_triangle_identity() {
        let c = PointConfiguration::new(2, 3, vec![0.1, 0.1, 0.9, 0.2, 0.3, 0.8]).unwrap();
        let params = HeilbronnSurrogateParams {
            active_k: None,
            ..Default::default()
        };
        let det = triangle_det(&c, 0, 1, 2);
        let area_eps = 0.5 * (det * det + params.epsilon).sqrt();
        let e = heilbronn_softmin(&c, &params).unwrap();
        assert!((e.value - area_eps).abs() < 1e-14);
    }

    #[test]
    fn softmin_sandwich_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for beta in [40.0, 300.0] {
            for _ in 0..100 {
                let n = rng.gen_range(4..9usize);
                let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
                let c = PointConfiguration::new(2, n, coords).unwrap();
                let params = HeilbronnSurrogateParams {
                    beta,
                    active_k: None,
                    ..Default::default()
                };
                let e = heilbronn_softmin(&c, &params).unwrap();
                // Exact min of the smoothed areas and the triple count.
                let mut m = f64::INFINITY;
                let mut t = 0usize;
                for i in 0..n {
                    for j in (i + 1)..n {
                        for k in (j + 1)..n {
                            let det = triangle_det(&c, i, j, k);
                            m = m.min(0.5 * (det * det + params.epsilon).sqrt());
                            t += 1;
                        }
                    }
                }
                assert!(e.value <= m + 1e-12);
                assert!(e.value >= m - (t as f64).ln() / beta - 1e-12);
            }
        }
    }

    #[test]
    fn softmin_gradient_matches_finite_differences() {
        let c = random_config(2, 6, 7);
        let params = HeilbronnSurrogateParams {
            beta: 40.0,
            active_k: None,
            ..Default::default()
        };
        let grad = heilbronn_softmin(&c, &params).unwrap().gradient;
        let fd = fdcheck::central_diff(
            |v| {
                let cfg = PointConfiguration::new(2, 6, v.to_vec()).unwrap();
                heilbronn_softmin(&cfg, &params).unwrap().value
            },
            &c.coords,
            1e-6,
        );
        assert!(fdcheck::max_rel_err(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn srp_loss_interior_equals_negative_softmin() {
        let c = random_config(2, 5, 3);
        let params = HeilbronnSurrogateParams {
            active_k: None,
            ..Default::default()
        };
        let loss = heilbronn_srp_loss(&c, &params).unwrap();
        let softmin = heilbronn_softmin(&c, &params).unwrap();
        assert!((loss.value + softmin.value).abs() < 1e-15);
    }

    #[test]
    fn srp_loss_wall_term_quadratic() {
        let c = PointConfiguration::new(2, 3, vec![1.1, 0.5, 0.2, 0.2, 0.6, 0.9]).unwrap();
        let params = HeilbronnSurrogateParams {
            wall_weight: 1.0,
            active_k: None,
            ..Default::default()
        };
        let loss = heilbronn_srp_loss(&c, &params).unwrap();
        let softmin = heilbronn_softmin(&c, &params).unwrap();
        assert!((loss.value - (0.01 - softmin.value)).abs() < 1e-12);
    }

    #[test]
    fn star_surrogate_single_anchor_small_delta() {
        // One point at the origin, anchor (1,1): the gate mass cancels the
        // area term, leaving the epsilon floor.
        let c = PointConfiguration::new(2, 1, vec![0.0, 0.0]).unwrap();
        let params = StarSurrogateParams {
            grid_x: vec![1.0],
            grid_y: vec![1.0],
            tau_sigmoid: 0.01,
            tau_anneal: None,
            beta: 1.0,
            epsilon: 1e-12,
            top_k: None,
        };
        let e = star_surrogate(&c, &params).unwrap();
        assert!((e.value - 1e-6).abs() < 1e-8);
    }

    #[test]
    fn star_surrogate_corner_point_delta() {
        let c = PointConfiguration::new(2, 1, vec![1.0, 1.0]).unwrap();
        let params = StarSurrogateParams {
            grid_x: vec![1.0],
            grid_y: vec![1.0],
            tau_sigmoid: 0.01,
            tau_anneal: None,
            beta: 1.0,
            epsilon: 1e-12,
            top_k: None,
        };
        let e = star_surrogate(&c, &params).unwrap();
        assert!((e.value - 0.75).abs() < 1e-6);
    }

    #[test]
    fn star_surrogate_gradient_matches_finite_differences() {
        let c = random_config(2, 10, 21);
        let params = StarSurrogateParams {
            grid_x: uniform_grid(8),
            grid_y: uniform_grid(8),
            tau_sigmoid: 0.05,
            tau_anneal: None,
            beta: 30.0,
            epsilon: 1e-12,
            top_k: None,
        };
        let grad = star_surrogate(&c, &params).unwrap().gradient;
        let fd = fdcheck::central_diff(
            |v| {
                let cfg = PointConfiguration::new(2, 10, v.to_vec()).unwrap();
                star_surrogate(&cfg, &params).unwrap().value
            },
            &c.coords,
            1e-6,
        );
        assert!(fdcheck::max_rel_err(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn star_surrogate_full_topk_is_bit_identical() {
        let c = random_config(2, 9, 33);
        let base = StarSurrogateParams {
            grid_x: uniform_grid(6),
            grid_y: uniform_grid(6),
            ..Default::default()
        };
        let full = star_surrogate(&c, &base).unwrap();
        let topk = star_surrogate(
            &c,
            &StarSurrogateParams {
                top_k: Some(36),
                ..base
            },
        )
        .unwrap();
        assert_eq!(full.value.to_bits(), topk.value.to_bits());
        for (a, b) in full.gradient.iter().zip(topk.gradient.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sumradii_loss_tangent_pair() {
        let c = PointConfiguration::with_radii(
            2,
            2,
            vec![0.25, 0.5, 0.75, 0.5],
            vec![0.25, 0.25],
        )
        .unwrap();
        let params = SumRadiiSurrogateParams {
            wall_weight: 1.0,
            overlap_weight: 1.0,
            radius_bonus: 1.0,
        };
        let e = sumradii_srp_loss(&c, &params).unwrap();
        assert!((e.value + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sumradii_loss_overlapping_pair_arithmetic() {
        let c = PointConfiguration::with_radii(2, 2, vec![0.25, 0.5, 0.75, 0.5], vec![0.3, 0.3])
            .unwrap();
        let params = SumRadiiSurrogateParams {
            wall_weight: 1.0,
            overlap_weight: 1.0,
            radius_bonus: 1.0,
        };
        let e = sumradii_srp_loss(&c, &params).unwrap();
        assert!((e.value - (2.0 * 0.0025 + 0.01 - 0.6)).abs() < 1e-12);
    }

    #[test]
    fn sumradii_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let coords: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
        let radii: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * 0.3).collect();
        let c = PointConfiguration::with_radii(2, 5, coords, radii).unwrap();
        let params = SumRadiiSurrogateParams::default();
        let grad = sumradii_srp_loss(&c, &params).unwrap().gradient;
        let vars = c.vars();
        let fd = fdcheck::central_diff(
            |v| {
                let cfg = c.from_vars(v).unwrap();
                sumradii_srp_loss(&cfg, &params).unwrap().value
            },
            &vars,
            1e-6,
        );
        assert!(fdcheck::max_rel_err(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn sphere_surrogate_gradient_matches_finite_differences() {
        let c = random_config(3, 6, 55);
        let mut surr = SphereSurrogate::new(6, 3, 1.0, SphereSurrogateParams::default());
        surr.refresh(&c.coords);
        let grad = surr.eval(&c.coords).unwrap().gradient;
        let fd = fdcheck::central_diff(|v| surr.eval(v).unwrap().value, &c.coords, 1e-6);
        assert!(fdcheck::max_rel_err(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn overlap_energy_pairwise_monotone_in_distance() {
        // Moving one isolated pair apart cannot increase the energy.
        for sep in [0.3, 0.5, 0.8, 1.2] {
            let c =
                PointConfiguration::new(3, 2, vec![0.0, 0.0, 0.0, sep, 0.0, 0.0]).unwrap();
            let e = overlap_energy(&c, 0.3, 25.0).unwrap();
            // Gradient along +x for the second point must be <= 0 in value terms:
            // d(value)/d(sep) <= 0.
            let dv_dsep = e.gradient[3];
            assert!(dv_dsep <= 1e-12);
        }
    }
}
