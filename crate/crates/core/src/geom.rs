//! Exact, non-differentiable objective oracles and feasibility checks for the
//! four problem families. Everything here is plain f64 with fixed-order
//! reductions, so results are bit-reproducible and safe to use as ground truth
//! in tests and dataset validation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which extremal problem a configuration belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    SpheresInCube,
    CirclesSumRadii,
    Heilbronn,
    StarDiscrepancy,
}

/// Objective direction. Star discrepancy is the only minimized objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// True when `a` is a strictly better score than `b` in this direction.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        }
    }

    pub fn worst(self) -> f64 {
        match self {
            Direction::Maximize => f64::NEG_INFINITY,
            Direction::Minimize => f64::INFINITY,
        }
    }
}

/// A problem instance: the kind plus its dimensions, count and domain box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub dim: usize,
    pub count: usize,
    #[serde(default = "default_box_side")]
    pub box_side: f64,
}

fn default_box_side() -> f64 {
    1.0
}

impl ProblemInstance {
    pub fn new(kind: ProblemKind, dim: usize, count: usize, box_side: f64) -> Result<Self> {
        let inst = Self {
            kind,
            dim,
            count,
            box_side,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Validation("count must be positive".into()));
        }
        if !(self.box_side > 0.0) {
            return Err(Error::Validation("box_side must be positive".into()));
        }
        match self.kind {
            ProblemKind::SpheresInCube => {
                if self.dim < 2 {
                    return Err(Error::Validation("sphere packing needs dim >= 2".into()));
                }
            }
            _ => {
                if self.dim != 2 {
                    return Err(Error::Validation(format!(
                        "{:?} forces dim = 2, got {}",
                        self.kind, self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// Star discrepancy is minimized; everything else is maximized.
    pub fn direction(&self) -> Direction {
        match self.kind {
            ProblemKind::StarDiscrepancy => Direction::Minimize,
            _ => Direction::Maximize,
        }
    }

    /// Circle packing carries per-point radii alongside the centers.
    pub fn has_radii(&self) -> bool {
        matches!(self.kind, ProblemKind::CirclesSumRadii)
    }
}

/// One candidate solution: `count` points in `dim` dimensions, coordinates
/// flattened row-major per point, plus optional per-point radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfiguration {
    pub dim: usize,
    pub count: usize,
    pub coords: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
}

impl PointConfiguration {
    pub fn new(dim: usize, count: usize, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != dim * count {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coords, got {}",
                dim * count,
                coords.len()
            )));
        }
        Ok(Self {
            dim,
            count,
            coords,
            radii: None,
        })
    }

    pub fn with_radii(dim: usize, count: usize, coords: Vec<f64>, radii: Vec<f64>) -> Result<Self> {
        if coords.len() != dim * count {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coords, got {}",
                dim * count,
                coords.len()
            )));
        }
        if radii.len() != count {
            return Err(Error::ShapeMismatch(format!(
                "expected {} radii, got {}",
                count,
                radii.len()
            )));
        }
        Ok(Self {
            dim,
            count,
            coords,
            radii: Some(radii),
        })
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Flattened optimization variables: coordinates, then radii when present.
    pub fn vars(&self) -> Vec<f64> {
        let mut v = self.coords.clone();
        if let Some(r) = &self.radii {
            v.extend_from_slice(r);
        }
        v
    }

    /// Rebuild a configuration from a variable vector produced by [`vars`].
    pub fn from_vars(&self, vars: &[f64]) -> Result<Self> {
        let nd = self.dim * self.count;
        let expected = nd + if self.radii.is_some() { self.count } else { 0 };
        if vars.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {} vars, got {}",
                expected,
                vars.len()
            )));
        }
        Ok(Self {
            dim: self.dim,
            count: self.count,
            coords: vars[..nd].to_vec(),
            radii: self.radii.as_ref().map(|_| vars[nd..].to_vec()),
        })
    }

    pub fn clamp_to_box(&mut self, lo: f64, hi: f64) {
        for c in &mut self.coords {
            *c = c.clamp(lo, hi);
        }
    }
}

/// Squared Euclidean distance between points `i` and `j`.
#[inline]
pub fn dist2(config: &PointConfiguration, i: usize, j: usize) -> f64 {
    let (a, b) = (config.point(i), config.point(j));
    let mut s = 0.0;
    for k in 0..config.dim {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[inline]
pub fn dist(config: &PointConfiguration, i: usize, j: usize) -> f64 {
    dist2(config, i, j).sqrt()
}

/// Minimum pairwise Euclidean distance; half of it is the effective radius
/// supported by the configuration.
pub fn min_pairwise_distance(config: &PointConfiguration) -> Result<f64> {
    if config.count < 2 {
        return Err(Error::DegenerateConfiguration(
            "min_pairwise_distance needs at least 2 points".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for i in 0..config.count {
        for j in (i + 1)..config.count {
            let d = dist2(config, i, j);
            if d < best {
                best = d;
            }
        }
    }
    Ok(best.sqrt())
}

/// Signed parallelogram area of (p_j - p_i, p_k - p_i); triangle area is half
/// its absolute value.
#[inline]
pub fn triangle_det(config: &PointConfiguration, i: usize, j: usize, k: usize) -> f64 {
    let (pi, pj, pk) = (config.point(i), config.point(j), config.point(k));
    (pj[0] - pi[0]) * (pk[1] - pi[1]) - (pj[1] - pi[1]) * (pk[0] - pi[0])
}

/// Exact minimum triangle area over all C(N,3) triples; 0 when any triple is
/// collinear.
pub fn min_triangle_area(config: &PointConfiguration) -> Result<f64> {
    if config.dim != 2 {
        return Err(Error::ShapeMismatch("min_triangle_area needs dim = 2".into()));
    }
    if config.count < 3 {
        return Err(Error::DegenerateConfiguration(
            "min_triangle_area needs at least 3 points".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for i in 0..config.count {
        for j in (i + 1)..config.count {
            for k in (j + 1)..config.count {
                let a = 0.5 * triangle_det(config, i, j, k).abs();
                if a < best {
                    best = a;
                }
            }
        }
    }
    Ok(best)
}

/// Exact anchored star discrepancy of a 2-D point set in the unit square.
///
/// The supremum over anchored boxes is attained on the critical grid
/// G = ({x-coords} ∪ {1}) × ({y-coords} ∪ {1}); at each grid node the
/// closed count realizes the limit from above and the strict count the
/// limit from below, so the max of both branches is the true supremum.
pub fn exact_star_discrepancy(config: &PointConfiguration) -> Result<f64> {
    if config.dim != 2 {
        return Err(Error::ShapeMismatch("star discrepancy needs dim = 2".into()));
    }
    for (idx, &c) in config.coords.iter().enumerate() {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::OutOfDomain {
                index: idx,
                value: c,
                hi: 1.0,
            });
        }
    }
    let n = config.count;
    let nf = n as f64;
    let mut gx: Vec<f64> = (0..n).map(|i| config.point(i)[0]).collect();
    let mut gy: Vec<f64> = (0..n).map(|i| config.point(i)[1]).collect();
    gx.push(1.0);
    gy.push(1.0);
    gx.sort_by(|a, b| a.total_cmp(b));
    gy.sort_by(|a, b| a.total_cmp(b));
    gx.dedup();
    gy.dedup();

    let mut best = 0.0f64;
    for &a in &gx {
        for &b in &gy {
            let mut strict = 0usize;
            let mut closed = 0usize;
            for i in 0..n {
                let p = config.point(i);
                if p[0] < a && p[1] < b {
                    strict += 1;
                }
                if p[0] <= a && p[1] <= b {
                    closed += 1;
                }
            }
            let area = a * b;
            let over = closed as f64 / nf - area;
            let under = area - strict as f64 / nf;
            if over > best {
                best = over;
            }
            if under > best {
                best = under;
            }
        }
    }
    Ok(best)
}

/// Pair and wall constraint-violation maxima, clipped below at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub max_pair_violation: f64,
    pub max_wall_violation: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_pair_violation <= tol && self.max_wall_violation <= tol
    }
}

/// Constraint-violation report for the instance's constraint family.
///
/// Spheres use the common radius `r` for pairs and the adaptive wall margin
/// m(x) = ½·min pairwise distance; circles use their own radii for both pair
/// and wall terms; the square-domain problems only check the unit box.
pub fn feasibility(
    config: &PointConfiguration,
    instance: &ProblemInstance,
    r: f64,
) -> FeasibilityReport {
    let l = instance.box_side;
    let mut pair = 0.0f64;
    let mut wall = 0.0f64;
    match instance.kind {
        ProblemKind::SpheresInCube => {
            let mut min_d = f64::INFINITY;
            for i in 0..config.count {
                for j in (i + 1)..config.count {
                    let d = dist(config, i, j);
                    if d < min_d {
                        min_d = d;
                    }
                    let v = 2.0 * r - d;
                    if v > pair {
                        pair = v;
                    }
                }
            }
            let m = if config.count >= 2 { 0.5 * min_d } else { 0.0 };
            for i in 0..config.count {
                for k in 0..config.dim {
                    let c = config.point(i)[k];
                    let v = (m - c).max(c - (l - m));
                    if v > wall {
                        wall = v;
                    }
                }
            }
        }
        ProblemKind::CirclesSumRadii => {
            let radii = config.radii.as_deref().unwrap_or(&[]);
            for i in 0..config.count {
                let ri = radii.get(i).copied().unwrap_or(0.0);
                for j in (i + 1)..config.count {
                    let rj = radii.get(j).copied().unwrap_or(0.0);
                    let v = ri + rj - dist(config, i, j);
                    if v > pair {
                        pair = v;
                    }
                }
                let p = config.point(i);
                let margin = p[0].min(l - p[0]).min(p[1]).min(l - p[1]);
                let v = ri - margin;
                if v > wall {
                    wall = v;
                }
            }
        }
        ProblemKind::Heilbronn | ProblemKind::StarDiscrepancy => {
            for i in 0..config.count {
                for k in 0..config.dim {
                    let c = config.point(i)[k];
                    let v = (-c).max(c - l);
                    if v > wall {
                        wall = v;
                    }
                }
            }
        }
    }
    FeasibilityReport {
        max_pair_violation: pair.max(0.0),
        max_wall_violation: wall.max(0.0),
    }
}

/// Total radius of a circle configuration.
pub fn sum_radii(config: &PointConfiguration) -> Result<f64> {
    let radii = config.radii.as_ref().ok_or(Error::RadiiAbsent)?;
    Ok(radii.iter().sum())
}

/// Problem-specific conditioning statistics of a configuration.
///
/// Spheres: (r_eff/L, N, face-contact ratio, d_min/L); Heilbronn: (n/128,
/// A_min); circles: (n/128, Σr, min pair slack, min wall slack); star:
/// (N/128, D*).
pub fn condition_vector(instance: &ProblemInstance, config: &PointConfiguration) -> Result<Vec<f64>> {
    let l = instance.box_side;
    match instance.kind {
        ProblemKind::SpheresInCube => {
            let d_min = min_pairwise_distance(config)?;
            let r_eff = 0.5 * d_min;
            let band = 1e-3 * l;
            let mut touching = 0usize;
            for i in 0..config.count {
                let p = config.point(i);
                let near = (0..config.dim).any(|k| {
                    (p[k] - r_eff).abs() <= band || (p[k] - (l - r_eff)).abs() <= band
                });
                if near {
                    touching += 1;
                }
            }
            Ok(vec![
                r_eff / l,
                config.count as f64,
                touching as f64 / config.count as f64,
                d_min / l,
            ])
        }
        ProblemKind::Heilbronn => Ok(vec![
            config.count as f64 / 128.0,
            min_triangle_area(config)?,
        ]),
        ProblemKind::CirclesSumRadii => {
            let radii = config.radii.as_ref().ok_or(Error::RadiiAbsent)?;
            let mut pair_slack = f64::INFINITY;
            let mut wall_slack = f64::INFINITY;
            for i in 0..config.count {
                for j in (i + 1)..config.count {
                    let s = dist(config, i, j) - (radii[i] + radii[j]);
                    if s < pair_slack {
                        pair_slack = s;
                    }
                }
                let p = config.point(i);
                let s = p[0].min(l - p[0]).min(p[1]).min(l - p[1]) - radii[i];
                if s < wall_slack {
                    wall_slack = s;
                }
            }
            if config.count < 2 {
                pair_slack = 0.0;
            }
            Ok(vec![
                config.count as f64 / 128.0,
                radii.iter().sum(),
                pair_slack,
                wall_slack,
            ])
        }
        ProblemKind::StarDiscrepancy => Ok(vec![
            config.count as f64 / 128.0,
            exact_star_discrepancy(config)?,
        ]),
    }
}

/// Length of the condition vector for a problem kind.
pub fn condition_len(kind: ProblemKind) -> usize {
    match kind {
        ProblemKind::SpheresInCube => 4,
        ProblemKind::Heilbronn => 2,
        ProblemKind::CirclesSumRadii => 4,
        ProblemKind::StarDiscrepancy => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg2(coords: &[f64]) -> PointConfiguration {
        PointConfiguration::new(2, coords.len() / 2, coords.to_vec()).unwrap()
    }

    #[test]
    fn min_distance_unit_separation() {
        let c = PointConfiguration::new(3, 2, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(min_pairwise_distance(&c).unwrap(), 1.0);
    }

    #[test]
    fn min_distance_rejects_single_point() {
        let c = PointConfiguration::new(3, 1, vec![0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            min_pairwise_distance(&c),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn min_distance_matches_pair_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coords: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let c = PointConfiguration::new(3, 10, coords).unwrap();
        // Independent exhaustive scan.
        let mut expect = f64::INFINITY;
        for i in 0..10 {
            for j in 0..10 {
                if i == j {
                    continue;
                }
                let mut s = 0.0;
                for k in 0..3 {
                    let d = c.coords[i * 3 + k] - c.coords[j * 3 + k];
                    s += d * d;
                }
                expect = expect.min(s.sqrt());
            }
        }
        assert_eq!(min_pairwise_distance(&c).unwrap(), expect);
    }

    #[test]
    fn triangle_area_right_triangle() {
        let c = cfg2(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(min_triangle_area(&c).unwrap(), 0.5);
    }

    #[test]
    fn triangle_area_collinear_triple_is_zero() {
        let c = cfg2(&[0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 0.0, 1.0]);
        assert_eq!(min_triangle_area(&c).unwrap(), 0.0);
    }

    #[test]
    fn triangle_area_matches_direct_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let coords: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
            let c = cfg2(&coords);
            let cross = (coords[2] - coords[0]) * (coords[5] - coords[1])
                - (coords[3] - coords[1]) * (coords[4] - coords[0]);
            let expect = 0.5 * cross.abs();
            assert!((min_triangle_area(&c).unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn star_discrepancy_corner_point() {
        let c = cfg2(&[1.0, 1.0]);
        assert_eq!(exact_star_discrepancy(&c).unwrap(), 1.0);
    }

    #[test]
    fn star_discrepancy_center_point() {
        let c = cfg2(&[0.5, 0.5]);
        assert!((exact_star_discrepancy(&c).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn star_discrepancy_rejects_out_of_box() {
        let c = cfg2(&[0.5, 1.5]);
        assert!(matches!(
            exact_star_discrepancy(&c),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn feasibility_tangent_circles() {
        let inst = ProblemInstance::new(ProblemKind::CirclesSumRadii, 2, 2, 1.0).unwrap();
        let c = PointConfiguration::with_radii(
            2,
            2,
            vec![0.25, 0.5, 0.75, 0.5],
            vec![0.25, 0.25],
        )
        .unwrap();
        let rep = feasibility(&c, &inst, 0.0);
        assert_eq!(rep.max_pair_violation, 0.0);
        assert_eq!(rep.max_wall_violation, 0.0);
    }

    #[test]
    fn feasibility_overlapping_circles() {
        let inst = ProblemInstance::new(ProblemKind::CirclesSumRadii, 2, 2, 1.0).unwrap();
        let c = PointConfiguration::with_radii(2, 2, vec![0.25, 0.5, 0.75, 0.5], vec![0.3, 0.3])
            .unwrap();
        let rep = feasibility(&c, &inst, 0.0);
        assert!((rep.max_pair_violation - 0.1).abs() < 1e-15);
        assert!((rep.max_wall_violation - 0.05).abs() < 1e-15);
    }

    #[test]
    fn feasibility_matches_brute_force_scan() {
        let inst = ProblemInstance::new(ProblemKind::CirclesSumRadii, 2, 20, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let radii: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() * 0.2).collect();
        let c = PointConfiguration::with_radii(2, 20, coords, radii.clone()).unwrap();
        let rep = feasibility(&c, &inst, 0.0);

        let mut pair = 0.0f64;
        let mut wall = 0.0f64;
        for i in 0..20 {
            for j in 0..20 {
                if i == j {
                    continue;
                }
                let dx = c.coords[2 * i] - c.coords[2 * j];
                let dy = c.coords[2 * i + 1] - c.coords[2 * j + 1];
                pair = pair.max(radii[i] + radii[j] - (dx * dx + dy * dy).sqrt());
            }
            let (x, y) = (c.coords[2 * i], c.coords[2 * i + 1]);
            for m in [x, 1.0 - x, y, 1.0 - y] {
                wall = wall.max(radii[i] - m);
            }
        }
        assert!((rep.max_pair_violation - pair.max(0.0)).abs() < 1e-15);
        assert!((rep.max_wall_violation - wall.max(0.0)).abs() < 1e-15);
    }

    #[test]
    fn sum_radii_basics() {
        let c = PointConfiguration::with_radii(
            2,
            2,
            vec![0.25, 0.5, 0.75, 0.5],
            vec![0.25, 0.25],
        )
        .unwrap();
        assert_eq!(sum_radii(&c).unwrap(), 0.5);
        let no_radii = cfg2(&[0.0, 0.0]);
        assert!(matches!(sum_radii(&no_radii), Err(Error::RadiiAbsent)));
    }

    #[test]
    fn min_distance_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coords: Vec<f64> = (0..24).map(|_| rng.gen::<f64>()).collect();
        let base = PointConfiguration::new(3, 8, coords.clone()).unwrap();
        let d0 = min_pairwise_distance(&base).unwrap();

        // Permutation invariance.
        let mut perm_coords = coords.clone();
        perm_coords.rotate_left(3);
        let perm = PointConfiguration::new(3, 8, perm_coords).unwrap();
        assert_eq!(min_pairwise_distance(&perm).unwrap(), d0);

        // Translation invariance.
        let shifted: Vec<f64> = coords.iter().map(|c| c + 0.37).collect();
        let t = PointConfiguration::new(3, 8, shifted).unwrap();
        assert!((min_pairwise_distance(&t).unwrap() - d0).abs() < 1e-12);

        // Scaling by s scales the result by s.
        let scaled: Vec<f64> = coords.iter().map(|c| c * 2.5).collect();
        let s = PointConfiguration::new(3, 8, scaled).unwrap();
        assert!((min_pairwise_distance(&s).unwrap() - 2.5 * d0).abs() < 1e-12);
    }

    /// Fine-grid scan lower bound used as the discrepancy oracle in tests.
    pub(crate) fn star_scan(config: &PointConfiguration, cells: usize) -> f64 {
        let n = config.count as f64;
        let mut best = 0.0f64;
        for ai in 0..=cells {
            let a = ai as f64 / cells as f64;
            for bi in 0..=cells {
                let b = bi as f64 / cells as f64;
                let mut strict = 0usize;
                let mut closed = 0usize;
                for i in 0..config.count {
                    let p = config.point(i);
                    if p[0] < a && p[1] < b {
                        strict += 1;
                    }
                    if p[0] <= a && p[1] <= b {
                        closed += 1;
                    }
                }
                best = best
                    .max(closed as f64 / n - a * b)
                    .max(a * b - strict as f64 / n);
            }
        }
        best
    }

    #[test]
    fn star_discrepancy_dominates_fine_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = rng.gen_range(2..12usize);
            let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
            let c = cfg2(&coords);
            let exact = exact_star_discrepancy(&c).unwrap();
            let scan = star_scan(&c, 400);
            assert!(scan <= exact + 1e-12, "scan {scan} above exact {exact}");
            assert!(exact - scan <= 1.0 / 400.0, "gap too large: {}", exact - scan);
        }
    }

    #[test]
    fn condition_vectors_have_declared_length() {
        let heil = ProblemInstance::new(ProblemKind::Heilbronn, 2, 3, 1.0).unwrap();
        let c = cfg2(&[0.1, 0.2, 0.9, 0.3, 0.4, 0.8]);
        let v = condition_vector(&heil, &c).unwrap();
        assert_eq!(v.len(), condition_len(ProblemKind::Heilbronn));
        assert!((v[0] - 3.0 / 128.0).abs() < 1e-15);
    }
}
