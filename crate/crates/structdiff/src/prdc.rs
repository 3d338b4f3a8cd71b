//! Precision / Recall / Density / Coverage over k-NN sphere manifolds.
//!
//! All sphere-membership tests are closed (dist <= radius) and k-NN radii
//! exclude the query point itself. `prdc` is the direct quadratic
//! implementation; `prdc_grid` uses a uniform spatial hash for 2-D inputs
//! and performs the same squared-distance comparisons in the same f64
//! arithmetic, so the two agree exactly, not just approximately.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrdcReport {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
    pub k: usize,
    pub n_real: usize,
    pub n_gen: usize,
}

/// A point set with per-point k-NN radii (self excluded).
#[derive(Debug, Clone)]
pub struct Manifold {
    points: Array2<f64>,
    radii: Vec<f64>,
    k: usize,
}

impl Manifold {
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
    pub fn k(&self) -> usize {
        self.k
    }
}

fn check_inputs(points: &Array2<f64>, k: usize) -> Result<()> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(Error::BadNeighborCount { k, n });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("manifold points".into()));
    }
    Ok(())
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// k-th smallest value of `vals` (1-based k), by partial selection.
fn kth_smallest(vals: &mut [f64], k: usize) -> f64 {
    let (_, kth, _) = vals.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    *kth
}

/// Direct O(n^2) manifold construction; the reference implementation.
pub fn build_manifold(points: &Array2<f64>, k: usize) -> Result<Manifold> {
    check_inputs(points, k)?;
    let n = points.nrows();
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        let pi = points.row(i);
        for j in 0..n {
            if j != i {
                dists.push(dist_sq(pi.as_slice().unwrap(), points.row(j).as_slice().unwrap()));
            }
        }
        radii.push(kth_smallest(&mut dists, k).sqrt());
    }
    Ok(Manifold {
        points: points.clone(),
        radii,
        k,
    })
}

/// Number of manifold spheres containing each query point.
pub fn membership_counts(manifold: &Manifold, queries: &Array2<f64>) -> Result<Vec<usize>> {
    if queries.ncols() != manifold.points.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "manifold dim {} vs query dim {}",
            manifold.points.ncols(),
            queries.ncols()
        )));
    }
    let mut counts = vec![0usize; queries.nrows()];
    for (q, count) in queries.rows().into_iter().zip(counts.iter_mut()) {
        let qs = q.as_slice().unwrap();
        for (i, p) in manifold.points.rows().into_iter().enumerate() {
            let r = manifold.radii[i];
            if dist_sq(qs, p.as_slice().unwrap()) <= r * r {
                *count += 1;
            }
        }
    }
    Ok(counts)
}

fn report_from_parts(
    real_counts_per_gen: &[usize],
    real_in_gen_manifold: &[bool],
    real_covered: &[bool],
    k: usize,
    n_real: usize,
    n_gen: usize,
) -> PrdcReport {
    let precision = real_counts_per_gen.iter().filter(|&&c| c > 0).count() as f64 / n_gen as f64;
    let density =
        real_counts_per_gen.iter().sum::<usize>() as f64 / (k as f64 * n_real as f64);
    let recall = real_in_gen_manifold.iter().filter(|&&b| b).count() as f64 / n_real as f64;
    let coverage = real_covered.iter().filter(|&&b| b).count() as f64 / n_real as f64;
    PrdcReport {
        precision,
        recall,
        density,
        coverage,
        k,
        n_real,
        n_gen,
    }
}

/// Reference PRDC: quadratic scans everywhere.
pub fn prdc(real: &Array2<f64>, generated: &Array2<f64>, k: usize) -> Result<PrdcReport> {
    if real.ncols() != generated.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "real dim {} vs generated dim {}",
            real.ncols(),
            generated.ncols()
        )));
    }
    let real_manifold = build_manifold(real, k)?;
    let gen_manifold = build_manifold(generated, k)?;

    let gen_counts = membership_counts(&real_manifold, generated)?;
    let real_in_gen: Vec<bool> = membership_counts(&gen_manifold, real)?
        .into_iter()
        .map(|c| c > 0)
        .collect();

    // Coverage: does any generated point fall inside real point i's sphere?
    let n_real = real.nrows();
    let mut covered = vec![false; n_real];
    for (i, p) in real.rows().into_iter().enumerate() {
        let r = real_manifold.radii[i];
        let ps = p.as_slice().unwrap();
        covered[i] = generated
            .rows()
            .into_iter()
            .any(|g| dist_sq(ps, g.as_slice().unwrap()) <= r * r);
    }

    Ok(report_from_parts(
        &gen_counts,
        &real_in_gen,
        &covered,
        k,
        n_real,
        generated.nrows(),
    ))
}

// ---- spatial-hash accelerated path (2-D) ----

struct Grid {
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

const MAX_GRID_SIDE: usize = 2048;

impl Grid {
    fn build(points: &Array2<f64>) -> Grid {
        let n = points.nrows();
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for row in points.rows() {
            min_x = min_x.min(row[0]);
            max_x = max_x.max(row[0]);
            min_y = min_y.min(row[1]);
            max_y = max_y.max(row[1]);
        }
        let ex = (max_x - min_x).max(0.0);
        let ey = (max_y - min_y).max(0.0);
        // Aim for ~2 points per cell, bound the grid to a sane size, and
        // survive degenerate (all-duplicate / collinear) inputs.
        let mut cell = ((ex * ey).max(1e-300) * 2.0 / n as f64).sqrt();
        cell = cell
            .max(ex / MAX_GRID_SIDE as f64)
            .max(ey / MAX_GRID_SIDE as f64);
        if !cell.is_finite() || cell <= 0.0 {
            cell = 1.0;
        }
        let nx = ((ex / cell).ceil() as usize + 1).clamp(1, MAX_GRID_SIDE);
        let ny = ((ey / cell).ceil() as usize + 1).clamp(1, MAX_GRID_SIDE);
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, row) in points.rows().into_iter().enumerate() {
            let (cx, cy) = Self::cell_of(row[0], row[1], min_x, min_y, cell, nx, ny);
            cells[cy * nx + cx].push(i as u32);
        }
        Grid {
            cell,
            x0: min_x,
            y0: min_y,
            nx,
            ny,
            cells,
        }
    }

    fn cell_of(
        x: f64,
        y: f64,
        x0: f64,
        y0: f64,
        cell: f64,
        nx: usize,
        ny: usize,
    ) -> (usize, usize) {
        let cx = (((x - x0) / cell).floor() as isize).clamp(0, nx as isize - 1) as usize;
        let cy = (((y - y0) / cell).floor() as isize).clamp(0, ny as isize - 1) as usize;
        (cx, cy)
    }

    fn query_cell(&self, x: f64, y: f64) -> (isize, isize) {
        (
            ((x - self.x0) / self.cell).floor() as isize,
            ((y - self.y0) / self.cell).floor() as isize,
        )
    }

    /// Smallest distance from (x, y) to cell (cx, cy); zero inside the cell.
    fn min_dist_sq_to_cell(&self, x: f64, y: f64, cx: isize, cy: isize) -> f64 {
        let lo_x = self.x0 + cx as f64 * self.cell;
        let lo_y = self.y0 + cy as f64 * self.cell;
        let dx = (lo_x - x).max(0.0).max(x - (lo_x + self.cell));
        let dy = (lo_y - y).max(0.0).max(y - (lo_y + self.cell));
        dx * dx + dy * dy
    }

    /// Visit cells in expanding Chebyshev rings around the query until the
    /// next ring cannot beat the search bound. `visit(cell_index,
    /// min_dist_sq_to_cell)` returns the updated bound (squared distance);
    /// rings stop when ring_lower^2 > bound. `initial_bound` lets callers
    /// that already know their prune radius (membership and coverage
    /// queries) skip distant rings outright — critical for queries far
    /// outside the occupied grid, which would otherwise scan every ring
    /// before learning any bound.
    fn ring_search(&self, x: f64, y: f64, initial_bound: f64, mut visit: impl FnMut(usize, f64) -> f64) {
        let (qx, qy) = self.query_cell(x, y);
        let max_ring = {
            let span_x = (qx.max(self.nx as isize - 1 - qx)).max(0) as usize + 1;
            let span_y = (qy.max(self.ny as isize - 1 - qy)).max(0) as usize + 1;
            span_x.max(span_y) + 1
        };
        let mut bound = initial_bound;
        let mut step = |cx: isize, cy: isize, bound: &mut f64| {
            if cx < 0 || cx >= self.nx as isize || cy < 0 || cy >= self.ny as isize {
                return;
            }
            let idx = cy as usize * self.nx + cx as usize;
            if self.cells[idx].is_empty() {
                return;
            }
            let md = self.min_dist_sq_to_cell(x, y, cx, cy);
            if md > *bound {
                return;
            }
            *bound = visit(idx, md);
        };
        for ring in 0..=max_ring {
            if ring > 0 {
                // Any cell in this ring is at least (ring - 1) cells away.
                let lower = (ring - 1) as f64 * self.cell;
                if lower * lower > bound {
                    break;
                }
            }
            let r = ring as isize;
            if r == 0 {
                step(qx, qy, &mut bound);
                continue;
            }
            // Shell only: top and bottom edges, then the side columns.
            for cx in (qx - r)..=(qx + r) {
                step(cx, qy - r, &mut bound);
                step(cx, qy + r, &mut bound);
            }
            for cy in (qy - r + 1)..=(qy + r - 1) {
                step(qx - r, cy, &mut bound);
                step(qx + r, cy, &mut bound);
            }
        }
    }
}

/// Exact k-NN radii via the spatial hash. Produces the same values as the
/// quadratic scan: the k-th order statistic of the same distance multiset.
fn knn_radii_grid(points: &Array2<f64>, grid: &Grid, k: usize) -> Vec<f64> {
    let n = points.nrows();
    let mut radii = vec![0.0; n];
    // Best-k squared distances, kept sorted ascending (k is small).
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for i in 0..n {
        best.clear();
        let (x, y) = (points[[i, 0]], points[[i, 1]]);
        grid.ring_search(x, y, f64::INFINITY, |cell_idx, _| {
            for &j in &grid.cells[cell_idx] {
                let j = j as usize;
                if j == i {
                    continue;
                }
                let d = dist_sq(
                    &[x, y],
                    points.row(j).as_slice().unwrap(),
                );
                if best.len() < k {
                    let pos = best.partition_point(|&b| b < d);
                    best.insert(pos, d);
                } else if d < best[k - 1] {
                    let pos = best.partition_point(|&b| b < d);
                    best.insert(pos, d);
                    best.pop();
                }
            }
            if best.len() < k {
                f64::INFINITY
            } else {
                best[k - 1]
            }
        });
        radii[i] = best[k - 1].sqrt();
    }
    radii
}

/// Per-query count of enclosing spheres, using per-cell radius maxima to
/// prune. Exact: every non-pruned pair is tested with dist_sq <= r^2.
fn membership_counts_grid(
    points: &Array2<f64>,
    radii: &[f64],
    grid: &Grid,
    queries: &Array2<f64>,
) -> Vec<usize> {
    let cell_max_r: Vec<f64> = grid
        .cells
        .iter()
        .map(|c| {
            c.iter()
                .map(|&i| radii[i as usize])
                .fold(0.0_f64, f64::max)
        })
        .collect();
    let global_max_r = radii.iter().copied().fold(0.0_f64, f64::max);
    let global_max_sq = global_max_r * global_max_r;

    let mut counts = vec![0usize; queries.nrows()];
    for (qi, q) in queries.rows().into_iter().enumerate() {
        let (x, y) = (q[0], q[1]);
        let mut count = 0usize;
        grid.ring_search(x, y, global_max_sq, |cell_idx, md| {
            // A sphere from this cell can only enclose the query if the
            // cell's largest radius reaches it.
            let rmax = cell_max_r[cell_idx];
            if md <= rmax * rmax {
                for &j in &grid.cells[cell_idx] {
                    let j = j as usize;
                    let r = radii[j];
                    if dist_sq(&[x, y], points.row(j).as_slice().unwrap()) <= r * r {
                        count += 1;
                    }
                }
            }
            global_max_sq
        });
        counts[qi] = count;
    }
    counts
}

/// For each center/radius, is there any point of `targets` within radius?
fn any_within_grid(
    centers: &Array2<f64>,
    radii: &[f64],
    targets: &Array2<f64>,
    target_grid: &Grid,
) -> Vec<bool> {
    let mut hit = vec![false; centers.nrows()];
    for (i, c) in centers.rows().into_iter().enumerate() {
        let (x, y) = (c[0], c[1]);
        let r_sq = radii[i] * radii[i];
        let mut found = false;
        target_grid.ring_search(x, y, r_sq, |cell_idx, _| {
            if !found {
                for &j in &target_grid.cells[cell_idx] {
                    let row = targets.row(j as usize);
                    if dist_sq(&[x, y], row.as_slice().unwrap()) <= r_sq {
                        found = true;
                        break;
                    }
                }
            }
            if found {
                // Any bound below ring_lower^2 stops expansion immediately.
                -1.0
            } else {
                r_sq
            }
        });
        hit[i] = found;
    }
    hit
}

/// Grid-accelerated PRDC for 2-D point sets; other dimensions fall back to
/// the quadratic path. Results are identical to `prdc`.
pub fn prdc_grid(real: &Array2<f64>, generated: &Array2<f64>, k: usize) -> Result<PrdcReport> {
    if real.ncols() != 2 || generated.ncols() != 2 {
        return prdc(real, generated, k);
    }
    check_inputs(real, k)?;
    check_inputs(generated, k)?;

    let real_grid = Grid::build(real);
    let gen_grid = Grid::build(generated);
    let real_radii = knn_radii_grid(real, &real_grid, k);
    let gen_radii = knn_radii_grid(generated, &gen_grid, k);

    let gen_counts = membership_counts_grid(real, &real_radii, &real_grid, generated);
    let real_in_gen: Vec<bool> =
        membership_counts_grid(generated, &gen_radii, &gen_grid, real)
            .into_iter()
            .map(|c| c > 0)
            .collect();
    let covered = any_within_grid(real, &real_radii, generated, &gen_grid);

    Ok(report_from_parts(
        &gen_counts,
        &real_in_gen,
        &covered,
        k,
        real.nrows(),
        generated.nrows(),
    ))
}
