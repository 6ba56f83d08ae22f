//! Active-contour mask refinement: the largest foreground component's
//! boundary is resampled into a closed snake and evolved by gradient
//! descent on elasticity + rigidity + edge-attraction energy, with
//! backtracking step control so the energy never increases; the final
//! contour is rasterized back into a mask.

use crate::localizer::Mask;
use crate::{Error, Result};

/// Snake energy weights and iteration controls.
#[derive(Debug, Clone, Copy)]
pub struct SnakeParams {
    /// Elasticity weight on |v'|².
    pub alpha: f32,
    /// Rigidity weight on |v''|².
    pub beta: f32,
    /// Edge-attraction weight on the smoothed-mask gradient magnitude.
    pub ext_weight: f32,
    pub iterations: usize,
    /// Initial descent step in pixels (reset every iteration).
    pub step: f32,
}

impl Default for SnakeParams {
    fn default() -> Self {
        SnakeParams { alpha: 0.1, beta: 0.05, ext_weight: 1.0, iterations: 200, step: 0.2 }
    }
}

impl SnakeParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f32| v.is_finite() && v >= 0.0;
        if !(ok(self.alpha) && ok(self.beta) && ok(self.ext_weight) && ok(self.step)) {
            return Err(Error::InvalidArg("snake weights must be finite and >= 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArg("snake needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Contour sample count for the snake.
pub const CONTOUR_POINTS: usize = 200;

const MAX_BACKTRACKS: usize = 12;

/// Refine the largest foreground component's boundary; see module docs.
pub fn refine_contour(mask: &Mask, params: &SnakeParams) -> Result<Mask> {
    refine_contour_traced(mask, params).map(|(m, _)| m)
}

/// As [`refine_contour`], also returning the energy after the initial
/// sampling and after every accepted iteration (monotone nonincreasing).
pub fn refine_contour_traced(mask: &Mask, params: &SnakeParams) -> Result<(Mask, Vec<f64>)> {
    params.validate()?;
    if mask.fg_count() == 0 {
        return Err(Error::InvalidArg("cannot refine an empty mask".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    let comp = largest_component(mask);
    let boundary = trace_boundary(&comp, h, w);
    if boundary.len() < 4 {
        // Degenerate blob: nothing to evolve.
        let mut out = Mask::zeros(h, w);
        for &(y, x) in &boundary {
            out.set(y, x, 1.0);
        }
        return Ok((out, vec![0.0]));
    }
    let mut contour = resample_closed(&boundary, CONTOUR_POINTS);

    // Edge map: gradient magnitude of the Gaussian-smoothed mask, plus its
    // own gradients for the descent direction.
    let smooth = gaussian5(&comp, h, w);
    let mag = grad_magnitude(&smooth, h, w);
    let (mag_gx, mag_gy) = grads(&mag, h, w);

    let energy = |pts: &[(f64, f64)]| -> f64 {
        let n = pts.len();
        let mut e = 0.0f64;
        for i in 0..n {
            let p = pts[i];
            let q = pts[(i + 1) % n];
            let r = pts[(i + n - 1) % n];
            let dx = q.0 - p.0;
            let dy = q.1 - p.1;
            e += params.alpha as f64 * (dx * dx + dy * dy);
            let cx = q.0 - 2.0 * p.0 + r.0;
            let cy = q.1 - 2.0 * p.1 + r.1;
            e += params.beta as f64 * (cx * cx + cy * cy);
            e -= params.ext_weight as f64 * bilinear(&mag, h, w, p.0, p.1);
        }
        e
    };

    let mut energies = Vec::with_capacity(params.iterations + 1);
    let mut e_cur = energy(&contour);
    energies.push(e_cur);
    let n = contour.len();
    for _ in 0..params.iterations {
        // Analytic gradient of the discrete energy.
        let mut grad = vec![(0.0f64, 0.0f64); n];
        for i in 0..n {
            let p = contour[i];
            let q = contour[(i + 1) % n];
            let r = contour[(i + n - 1) % n];
            let q2 = contour[(i + 2) % n];
            let r2 = contour[(i + n - 2) % n];
            let a = 2.0 * params.alpha as f64;
            let mut gx = a * (2.0 * p.0 - q.0 - r.0);
            let mut gy = a * (2.0 * p.1 - q.1 - r.1);
            let b = 2.0 * params.beta as f64;
            gx += b * (6.0 * p.0 - 4.0 * (q.0 + r.0) + q2.0 + r2.0);
            gy += b * (6.0 * p.1 - 4.0 * (q.1 + r.1) + q2.1 + r2.1);
            gx -= params.ext_weight as f64 * bilinear(&mag_gx, h, w, p.0, p.1);
            gy -= params.ext_weight as f64 * bilinear(&mag_gy, h, w, p.0, p.1);
            grad[i] = (gx, gy);
        }
        // Backtracking line search keeps the descent monotone.
        let mut step = params.step as f64;
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<(f64, f64)> = contour
                .iter()
                .zip(&grad)
                .map(|(&(x, y), &(gx, gy))| {
                    (
                        (x - step * gx).clamp(0.0, (w - 1) as f64),
                        (y - step * gy).clamp(0.0, (h - 1) as f64),
                    )
                })
                .collect();
            let e_new = energy(&trial);
            if e_new <= e_cur {
                contour = trial;
                e_cur = e_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // local fixed point: no decreasing step found
        }
        energies.push(e_cur);
    }
    Ok((fill_contour(&contour, h, w), energies))
}

/// Largest 4-connected foreground component as a binary grid.
fn largest_component(mask: &Mask) -> Vec<f32> {
    let (h, w) = (mask.height(), mask.width());
    let mut label = vec![usize::MAX; h * w];
    let mut best = (0usize, usize::MAX); // (size, label id)
    let mut next = 0usize;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if label[start] != usize::MAX || !mask.is_fg(start / w, start % w) {
            continue;
        }
        let mut size = 0usize;
        stack.push(start);
        label[start] = next;
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut push = |ny: usize, nx: usize| {
                let q = ny * w + nx;
                if label[q] == usize::MAX && mask.is_fg(ny, nx) {
                    label[q] = next;
                    stack.push(q);
                }
            };
            if y > 0 {
                push(y - 1, x);
            }
            if y + 1 < h {
                push(y + 1, x);
            }
            if x > 0 {
                push(y, x - 1);
            }
            if x + 1 < w {
                push(y, x + 1);
            }
        }
        if size > best.0 {
            best = (size, next);
        }
        next += 1;
    }
    (0..h * w).map(|p| if label[p] == best.1 { 1.0 } else { 0.0 }).collect()
}

/// Moore-neighbor boundary trace of a binary grid, clockwise, returning
/// (y, x) boundary cells of its single traced component.
fn trace_boundary(grid: &[f32], h: usize, w: usize) -> Vec<(usize, usize)> {
    let fg = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && grid[y as usize * w + x as usize] > 0.5
    };
    // Topmost-leftmost foreground cell.
    let mut start = None;
    'outer: for y in 0..h as isize {
        for x in 0..w as isize {
            if fg(y, x) {
                start = Some((y, x));
                break 'outer;
            }
        }
    }
    let Some(start) = start else {
        return Vec::new();
    };
    // Clockwise Moore neighborhood, beginning west.
    const N: [(isize, isize); 8] =
        [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)];
    let mut boundary = vec![(start.0 as usize, start.1 as usize)];
    let mut cur = start;
    let mut backtrack = 0usize; // index into N of the cell we came from
    loop {
        let mut found = None;
        for k in 0..8 {
            let dir = (backtrack + 1 + k) % 8;
            let cand = (cur.0 + N[dir].0, cur.1 + N[dir].1);
            if fg(cand.0, cand.1) {
                // New backtrack: direction pointing at the previous cell.
                backtrack = (dir + 4) % 8;
                found = Some(cand);
                break;
            }
        }
        let Some(nextc) = found else {
            break; // isolated cell
        };
        if nextc == start && boundary.len() > 1 {
            break;
        }
        boundary.push((nextc.0 as usize, nextc.1 as usize));
        cur = nextc;
        if boundary.len() > 4 * h * w {
            break; // safety net; cannot happen for well-formed grids
        }
    }
    boundary
}

/// Resample a closed pixel chain to `n` points uniformly by arc length,
/// in (x, y) coordinates.
fn resample_closed(chain: &[(usize, usize)], n: usize) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = chain.iter().map(|&(y, x)| (x as f64, y as f64)).collect();
    let m = pts.len();
    let mut cum = vec![0.0f64; m + 1];
    for i in 0..m {
        let a = pts[i];
        let b = pts[(i + 1) % m];
        cum[i + 1] = cum[i] + ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    }
    let total = cum[m];
    if total <= 0.0 {
        return vec![pts[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for j in 0..n {
        let target = total * j as f64 / n as f64;
        while seg + 1 < m && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        let a = pts[seg];
        let b = pts[(seg + 1) % m];
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
    }
    out
}

/// 5-tap binomial blur, separable, clamped borders.
fn gaussian5(grid: &[f32], h: usize, w: usize) -> Vec<f64> {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let at = |v: &[f64], y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        v[y * w + x]
    };
    let src: Vec<f64> = grid.iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..5)
                .map(|k| K[k] * at(&src, y as isize, x as isize + k as isize - 2))
                .sum();
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..5)
                .map(|k| K[k] * at(&tmp, y as isize + k as isize - 2, x as isize))
                .sum();
        }
    }
    out
}

fn grads(grid: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        grid[y * w + x]
    };
    let mut gx = vec![0.0f64; h * w];
    let mut gy = vec![0.0f64; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            gx[y as usize * w + x as usize] = 0.5 * (at(y, x + 1) - at(y, x - 1));
            gy[y as usize * w + x as usize] = 0.5 * (at(y + 1, x) - at(y - 1, x));
        }
    }
    (gx, gy)
}

fn grad_magnitude(grid: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (gx, gy) = grads(grid, h, w);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

fn bilinear(grid: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let v00 = grid[y0 * w + x0];
    let v01 = grid[y0 * w + x1];
    let v10 = grid[y1 * w + x0];
    let v11 = grid[y1 * w + x1];
    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Rasterize a closed contour: even-odd interior fill at pixel centers,
/// plus every cell the contour itself passes through (keeps thin
/// right/bottom boundaries that the half-open crossing rule would drop).
fn fill_contour(contour: &[(f64, f64)], h: usize, w: usize) -> Mask {
    let mut out = Mask::zeros(h, w);
    let n = contour.len();
    for row in 0..h {
        let ry = row as f64;
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..n {
            let (x0, y0) = contour[i];
            let (x1, y1) = contour[(i + 1) % n];
            if (y0 <= ry && ry < y1) || (y1 <= ry && ry < y0) {
                xs.push(x0 + (ry - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in xs.chunks(2) {
            if pair.len() < 2 {
                break;
            }
            let a = pair[0].ceil().max(0.0) as usize;
            let b = pair[1].floor().min((w - 1) as f64) as usize;
            for x in a..=b.min(w - 1) {
                if (x as f64) >= pair[0] && (x as f64) <= pair[1] {
                    out.set(row, x, 1.0);
                }
            }
        }
    }
    // Stamp the contour cells and the segments between them.
    for i in 0..n {
        let (x0, y0) = contour[i];
        let (x1, y1) = contour[(i + 1) % n];
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (x0 + t * (x1 - x0)).round();
            let y = (y0 + t * (y1 - y0)).round();
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                out.set(y as usize, x as usize, 1.0);
            }
        }
    }
    out
}
