//! Constraint projection operators mapping wide-domain samples to (or toward)
//! valid environment designs, plus exact finalization and an optimal
//! assignment solver.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DicodeError, Result};
use crate::rng::rng_from_seed;

/// Axis-aligned rectangle used for layout bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn clamp_point(&self, p: (f64, f64)) -> (f64, f64) {
        (
            p.0.clamp(self.min_x, self.max_x),
            p.1.clamp(self.min_y, self.max_y),
        )
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.min_x && p.0 <= self.max_x && p.1 >= self.min_y && p.1 <= self.max_y
    }
}

/// A scenario-bound projection with a soft `project` (idempotent, identity on
/// valid designs) and an exact `finalize` guaranteeing hard feasibility.
pub trait ProjectionOperator {
    fn scenario_id(&self) -> &str;
    /// Soft projection X -> X. Idempotent; identity on embedded valid designs.
    fn project(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Exact finalization X -> Theta (embedded back into X).
    fn finalize(&self, x: &[f64]) -> Result<Vec<f64>>;
}

// ---------------------------------------------------------------------------
// Binary top-k mask projection
// ---------------------------------------------------------------------------

/// Per channel, keep the `counts[c]` highest-valued cells as ones. A cell may
/// be selected by at most one channel; conflicts are resolved by global value
/// order with re-filling from the next-ranked cell. Ties break toward the
/// lowest linear cell index, then the lowest channel.
pub fn project_binary_topk(
    x: &[f64],
    n_channels: usize,
    n_cells: usize,
    counts: &[usize],
) -> Result<Vec<f64>> {
    if x.len() != n_channels * n_cells {
        return Err(DicodeError::ShapeMismatch(format!(
            "expected {} values ({n_channels} channels x {n_cells} cells), got {}",
            n_channels * n_cells,
            x.len()
        )));
    }
    if counts.len() != n_channels {
        return Err(DicodeError::ShapeMismatch(format!(
            "expected {n_channels} counts, got {}",
            counts.len()
        )));
    }
    if counts.iter().sum::<usize>() > n_cells {
        return Err(DicodeError::Infeasible(format!(
            "total count {} exceeds {} cells",
            counts.iter().sum::<usize>(),
            n_cells
        )));
    }
    // Global greedy over (value desc, cell asc, channel asc).
    let mut entries: Vec<(usize, usize)> = (0..n_channels)
        .flat_map(|c| (0..n_cells).map(move |cell| (c, cell)))
        .collect();
    entries.sort_by(|&(c1, cell1), &(c2, cell2)| {
        let v1 = x[c1 * n_cells + cell1];
        let v2 = x[c2 * n_cells + cell2];
        v2.total_cmp(&v1)
            .then(cell1.cmp(&cell2))
            .then(c1.cmp(&c2))
    });
    let mut out = vec![0.0; x.len()];
    let mut taken = vec![0usize; n_channels];
    let mut cell_used = vec![false; n_cells];
    let mut remaining: usize = counts.iter().sum();
    for (c, cell) in entries {
        if remaining == 0 {
            break;
        }
        // NEG_INFINITY marks a cell as unavailable to this channel.
        if x[c * n_cells + cell] == f64::NEG_INFINITY {
            continue;
        }
        if taken[c] < counts[c] && !cell_used[cell] {
            out[c * n_cells + cell] = 1.0;
            taken[c] += 1;
            cell_used[cell] = true;
            remaining -= 1;
        }
    }
    if remaining > 0 {
        return Err(DicodeError::Infeasible(
            "counts exceed available non-conflicting cells".into(),
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Hungarian assignment
// ---------------------------------------------------------------------------

/// Minimum-cost assignment on a square matrix, O(n^3) with potentials.
/// Returns `perm` with `perm[row] = column`.
pub fn assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Err(DicodeError::InvalidArgument("empty cost matrix".into()));
    }
    for row in cost {
        if row.len() != n {
            return Err(DicodeError::ShapeMismatch(format!(
                "cost matrix must be square: {n} rows, row of len {}",
                row.len()
            )));
        }
        if row.iter().any(|c| !c.is_finite()) {
            return Err(DicodeError::InvalidArgument(
                "cost matrix must be finite".into(),
            ));
        }
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    Ok(perm)
}

// ---------------------------------------------------------------------------
// Coordinate snap projection
// ---------------------------------------------------------------------------

/// A colored planar entity to be matched onto integer grid cells.
pub type ColoredPoint = (f64, f64, u32);

fn cell_center(idx: usize, grid_w: usize) -> (f64, f64) {
    ((idx % grid_w) as f64, (idx / grid_w) as f64)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Nearest grid cell under Euclidean distance (per-axis rounding).
pub fn nearest_cell(p: (f64, f64), grid_w: usize, grid_h: usize) -> (usize, usize) {
    let cx = p.0.round().clamp(0.0, (grid_w - 1) as f64) as usize;
    let cy = p.1.round().clamp(0.0, (grid_h - 1) as f64) as usize;
    (cx, cy)
}

/// True when `target` is strictly the nearest cell to `p` with margin 1e-9.
fn strictly_nearest(p: (f64, f64), target: usize, grid_w: usize, grid_h: usize) -> bool {
    let d_target = dist2(p, cell_center(target, grid_w)).sqrt();
    for idx in 0..grid_w * grid_h {
        if idx == target {
            continue;
        }
        let d = dist2(p, cell_center(idx, grid_w)).sqrt();
        if d_target + 1e-9 >= d {
            return false;
        }
    }
    true
}

/// Match entities to grid cells by minimum total Manhattan cost, then move
/// each entity linearly toward its matched cell center by the minimal fraction
/// that makes the matched cell strictly nearest. Colors are never changed.
pub fn project_coordinate_snap(
    entities: &[ColoredPoint],
    grid_w: usize,
    grid_h: usize,
) -> Result<Vec<ColoredPoint>> {
    let n_cells = grid_w * grid_h;
    if entities.len() > n_cells {
        return Err(DicodeError::Infeasible(format!(
            "{} entities exceed {} grid cells",
            entities.len(),
            n_cells
        )));
    }
    if entities.is_empty() {
        return Ok(Vec::new());
    }
    let clamped: Vec<ColoredPoint> = entities
        .iter()
        .map(|&(u, v, c)| {
            (
                u.clamp(0.0, (grid_w - 1) as f64),
                v.clamp(0.0, (grid_h - 1) as f64),
                c,
            )
        })
        .collect();
    // Square cost matrix padded with zero-cost dummy rows; the dummy rows
    // absorb unused cells without affecting the optimal real assignment.
    let mut cost = vec![vec![0.0; n_cells]; n_cells];
    for (i, &(u, v, _)) in clamped.iter().enumerate() {
        for (j, row_cost) in cost[i].iter_mut().enumerate() {
            let (cx, cy) = cell_center(j, grid_w);
            *row_cost = (u - cx).abs() + (v - cy).abs();
        }
    }
    let perm = assignment(&cost)?;
    let mut out = Vec::with_capacity(entities.len());
    for (i, &(u, v, color)) in clamped.iter().enumerate() {
        let target = perm[i];
        let center = cell_center(target, grid_w);
        let lambda = if strictly_nearest((u, v), target, grid_w, grid_h) {
            0.0
        } else {
            // Minimal lambda in [0, 1] making the matched cell strictly
            // nearest, by binary search to tolerance 1e-6.
            let mut lo = 0.0;
            let mut hi = 1.0;
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                let p = (u + mid * (center.0 - u), v + mid * (center.1 - v));
                if strictly_nearest(p, target, grid_w, grid_h) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        out.push((
            u + lambda * (center.0 - u),
            v + lambda * (center.1 - v),
            color,
        ));
    }
    Ok(out)
}

/// Snap each entity to its nearest cell's integer coordinates. Errors if two
/// entities share a nearest cell, which signals that `project_coordinate_snap`
/// was skipped.
pub fn finalize_coordinate_snap(
    entities: &[ColoredPoint],
    grid_w: usize,
    grid_h: usize,
) -> Result<Vec<(usize, usize, u32)>> {
    let mut out = Vec::with_capacity(entities.len());
    let mut used = vec![false; grid_w * grid_h];
    for &(u, v, c) in entities {
        let (cx, cy) = nearest_cell((u, v), grid_w, grid_h);
        let idx = cy * grid_w + cx;
        if used[idx] {
            return Err(DicodeError::Infeasible(format!(
                "two entities share nearest cell ({cx}, {cy}); run projection first"
            )));
        }
        used[idx] = true;
        out.push((cx, cy, c));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Minimum-distance projection (wind layouts)
// ---------------------------------------------------------------------------

/// Conservative feasibility bound: the box admits `n` points with pairwise
/// distance >= d_min if a square or hexagonal lattice packing of that many
/// points fits.
pub fn packing_capacity(d_min: f64, bounds: &Rect) -> usize {
    let (w, h) = (bounds.width(), bounds.height());
    if w < 0.0 || h < 0.0 {
        return 0;
    }
    let per_row = (w / d_min).floor() as usize + 1;
    let square = per_row * ((h / d_min).floor() as usize + 1);
    // Hexagonal rows spaced d_min * sqrt(3)/2, alternate rows offset by
    // d_min/2 (which may lose one point per offset row).
    let row_gap = d_min * 3f64.sqrt() / 2.0;
    let n_rows = (h / row_gap).floor() as usize + 1;
    let offset_row = if w >= d_min / 2.0 {
        ((w - d_min / 2.0) / d_min).floor() as usize + 1
    } else {
        0
    };
    let hex = (n_rows.div_ceil(2)) * per_row + (n_rows / 2) * offset_row;
    square.max(hex)
}

/// Soft minimum-distance projection: penalized least-movement gradient
/// descent, then a clamp to bounds. Output is near-feasible, not exact.
pub fn project_min_distance(
    points: &[(f64, f64)],
    d_min: f64,
    bounds: &Rect,
) -> Result<Vec<(f64, f64)>> {
    if d_min <= 0.0 {
        return Err(DicodeError::InvalidArgument(format!(
            "d_min must be positive, got {d_min}"
        )));
    }
    if points.len() > packing_capacity(d_min, bounds) {
        return Err(DicodeError::Infeasible(format!(
            "{} points cannot pack into bounds at d_min {d_min}",
            points.len()
        )));
    }
    let rho = 10.0 / (d_min * d_min);
    let step = 0.05 * d_min;
    let n = points.len();
    let mut z: Vec<(f64, f64)> = points.to_vec();
    for _ in 0..200 {
        let mut grad = vec![(0.0, 0.0); n];
        for i in 0..n {
            // Movement term.
            grad[i].0 += 2.0 * (z[i].0 - points[i].0);
            grad[i].1 += 2.0 * (z[i].1 - points[i].1);
            // Boundary penalty.
            let over_x = (bounds.min_x - z[i].0).max(0.0) - (z[i].0 - bounds.max_x).max(0.0);
            let over_y = (bounds.min_y - z[i].1).max(0.0) - (z[i].1 - bounds.max_y).max(0.0);
            grad[i].0 -= 2.0 * rho * over_x;
            grad[i].1 -= 2.0 * rho * over_y;
        }
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (z[i].0 - z[j].0, z[i].1 - z[j].1);
                let dist = (dx * dx + dy * dy).sqrt();
                if dist >= d_min || dist < 1e-12 {
                    continue;
                }
                // d/dz of rho * (d_min - dist)^2.
                let coef = -2.0 * rho * (d_min - dist) / dist;
                grad[i].0 += coef * dx;
                grad[i].1 += coef * dy;
                grad[j].0 -= coef * dx;
                grad[j].1 -= coef * dy;
            }
        }
        for i in 0..n {
            z[i].0 -= step * grad[i].0;
            z[i].1 -= step * grad[i].1;
        }
    }
    Ok(z.into_iter().map(|p| bounds.clamp_point(p)).collect())
}

/// Exact repair: repeatedly push violating pairs apart symmetrically to the
/// target separation, re-clamping to bounds, until the minimum pairwise
/// distance is at least `d_min`. Coincident pairs separate along a direction
/// drawn from the seeded tie-break source.
pub fn finalize_min_distance(
    points: &[(f64, f64)],
    d_min: f64,
    bounds: &Rect,
    tie_seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if d_min <= 0.0 {
        return Err(DicodeError::InvalidArgument(format!(
            "d_min must be positive, got {d_min}"
        )));
    }
    let n = points.len();
    let mut z: Vec<(f64, f64)> = points.iter().map(|&p| bounds.clamp_point(p)).collect();
    let mut tie_rng = rng_from_seed(tie_seed);
    // Small overshoot so the repaired distance survives re-rounding.
    let target = d_min * (1.0 + 1e-9);
    for _ in 0..10_000 {
        let mut violated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (z[i].0 - z[j].0, z[i].1 - z[j].1);
                let dist = (dx * dx + dy * dy).sqrt();
                if dist >= d_min {
                    continue;
                }
                violated = true;
                let (ux, uy) = if dist < 1e-12 {
                    let angle: f64 = tie_rng.random_range(0.0..std::f64::consts::TAU);
                    (angle.cos(), angle.sin())
                } else {
                    (dx / dist, dy / dist)
                };
                let mid = (0.5 * (z[i].0 + z[j].0), 0.5 * (z[i].1 + z[j].1));
                let half = 0.5 * target;
                z[i] = bounds.clamp_point((mid.0 + half * ux, mid.1 + half * uy));
                z[j] = bounds.clamp_point((mid.0 - half * ux, mid.1 - half * uy));
            }
        }
        if !violated {
            return Ok(z);
        }
    }
    Err(DicodeError::Infeasible(
        "minimum-distance repair did not converge in 10000 iterations".into(),
    ))
}

// ---------------------------------------------------------------------------
// Scenario-bound operators
// ---------------------------------------------------------------------------

/// Binary shelf-mask projection: forbidden cells (goals, spawns) are excluded
/// before the top-k selection and always come out zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryMaskProjection {
    pub scenario_id: String,
    pub grid_w: usize,
    pub grid_h: usize,
    pub counts: Vec<usize>,
    pub forbidden_cells: Vec<usize>,
}

impl BinaryMaskProjection {
    fn n_cells(&self) -> usize {
        self.grid_w * self.grid_h
    }
}

impl ProjectionOperator for BinaryMaskProjection {
    fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n_cells = self.n_cells();
        let mut masked = x.to_vec();
        for c in 0..self.counts.len() {
            for &cell in &self.forbidden_cells {
                masked[c * n_cells + cell] = f64::NEG_INFINITY;
            }
        }
        // total_cmp sorts -inf last, so forbidden cells are never selected.
        let mut out = project_binary_topk(&masked, self.counts.len(), n_cells, &self.counts)?;
        for v in out.iter_mut() {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    fn finalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        // The top-k projection is already exact for this domain.
        self.project(x)
    }
}

/// Coordinate-list projection via Hungarian matching and nearest-cell snap.
/// Colors are fixed per entity index and not part of the diffused data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordSnapProjection {
    pub scenario_id: String,
    pub grid_w: usize,
    pub grid_h: usize,
    pub colors: Vec<u32>,
}

impl CoordSnapProjection {
    fn decode(&self, x: &[f64]) -> Result<Vec<ColoredPoint>> {
        if x.len() != 2 * self.colors.len() {
            return Err(DicodeError::ShapeMismatch(format!(
                "expected {} coords, got {}",
                2 * self.colors.len(),
                x.len()
            )));
        }
        Ok(self
            .colors
            .iter()
            .enumerate()
            .map(|(i, &c)| (x[2 * i], x[2 * i + 1], c))
            .collect())
    }

    fn encode(entities: &[ColoredPoint]) -> Vec<f64> {
        entities.iter().flat_map(|&(u, v, _)| [u, v]).collect()
    }
}

impl ProjectionOperator for CoordSnapProjection {
    fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let entities = self.decode(x)?;
        let projected = project_coordinate_snap(&entities, self.grid_w, self.grid_h)?;
        Ok(Self::encode(&projected))
    }

    fn finalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        let entities = self.decode(x)?;
        let projected = project_coordinate_snap(&entities, self.grid_w, self.grid_h)?;
        let snapped = finalize_coordinate_snap(&projected, self.grid_w, self.grid_h)?;
        Ok(snapped
            .iter()
            .flat_map(|&(u, v, _)| [u as f64, v as f64])
            .collect())
    }
}

/// Per-coordinate box clamp (obstacle local neighborhoods). Exact, so project
/// and finalize coincide.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClampBoxProjection {
    pub scenario_id: String,
    /// (lo, hi) per coordinate.
    pub limits: Vec<(f64, f64)>,
}

impl ProjectionOperator for ClampBoxProjection {
    fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.limits.len() {
            return Err(DicodeError::ShapeMismatch(format!(
                "expected {} coords, got {}",
                self.limits.len(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(self.limits.iter())
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect())
    }

    fn finalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.project(x)
    }
}

/// Turbine layout projection. `project` composes the soft least-movement
/// descent with the exact repair so the operator is idempotent and maps into
/// the feasible set; `finalize` re-runs the repair as a guarantee.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinDistanceProjection {
    pub scenario_id: String,
    pub d_min: f64,
    pub bounds: Rect,
    pub tie_seed: u64,
}

impl MinDistanceProjection {
    fn decode(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        if x.len() % 2 != 0 {
            return Err(DicodeError::ShapeMismatch(format!(
                "layout needs an even number of coords, got {}",
                x.len()
            )));
        }
        Ok(x.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }
}

impl ProjectionOperator for MinDistanceProjection {
    fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let points = self.decode(x)?;
        let soft = project_min_distance(&points, self.d_min, &self.bounds)?;
        let exact = finalize_min_distance(&soft, self.d_min, &self.bounds, self.tie_seed)?;
        Ok(exact.into_iter().flat_map(|(a, b)| [a, b]).collect())
    }

    fn finalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.project(x)
    }
}
