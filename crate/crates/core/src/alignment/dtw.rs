use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A monotone warping path with its normalized cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `(t_learner, t_reference)` pairs from `(0, 0)` to `(T₁−1, T₂−1)`.
    pub path: Vec<(usize, usize)>,
    /// Local cost at each path cell.
    pub step_costs: Vec<f64>,
    /// `sqrt(Σ w_k) / K` with `w_k` the squared local costs and `K` the path length.
    pub cost: f64,
    /// Reference frames matched to each learner frame.
    pub correlation: Vec<Vec<usize>>,
}

impl AlignmentResult {
    /// Sum of squared local costs along the path.
    pub fn accumulated(&self) -> f64 {
        self.step_costs.iter().fold(0.0, |acc, c| acc + c * c)
    }
}

/// Predecessor step in preference order for equal accumulated cost.
const STEPS: [(usize, usize); 3] = [(1, 1), (1, 0), (0, 1)];

/// Whether cell `(i, j)` lies inside a Sakoe–Chiba band of half-width `r`
/// around the scaled diagonal.
fn in_band(i: usize, j: usize, t1: usize, t2: usize, band: Option<usize>) -> bool {
    let Some(r) = band else { return true };
    if t1 == 1 || t2 == 1 {
        return true;
    }
    let (a, b) = ((t1 - 1) as f64, (t2 - 1) as f64);
    let d = (i as f64 / a - j as f64 / b).abs() * a.max(b);
    d <= r as f64 + 1e-9
}

/// DTW over a precomputed `T₁×T₂` grid of nonnegative local distances.
///
/// The dynamic program minimizes the sum of squared local distances. Ties in
/// the backtrack prefer a diagonal step, then a learner step, then a
/// reference step.
pub fn dtw_from_costs(local: &Matrix, band: Option<usize>) -> Result<AlignmentResult> {
    let (t1, t2) = local.shape();
    if t1 == 0 || t2 == 0 {
        return Err(Error::validation("dtw needs at least one frame on each side"));
    }
    if let Some(v) = local.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("dtw local cost {v} is not finite")));
    }
    if band == Some(0) && t1 != t2 {
        return Err(Error::validation("band width 0 only admits equal-length sequences"));
    }
    let inf = f64::INFINITY;
    let mut acc = vec![inf; t1 * t2];
    let mut from = vec![u8::MAX; t1 * t2];
    for i in 0..t1 {
        for j in 0..t2 {
            if !in_band(i, j, t1, t2, band) {
                continue;
            }
            let w = local.get(i, j) * local.get(i, j);
            if i == 0 && j == 0 {
                acc[0] = w;
                continue;
            }
            let mut best = inf;
            let mut arg = u8::MAX;
            for (k, &(di, dj)) in STEPS.iter().enumerate() {
                if i < di || j < dj {
                    continue;
                }
                let prev = acc[(i - di) * t2 + (j - dj)];
                if prev < best {
                    best = prev;
                    arg = k as u8;
                }
            }
            if arg != u8::MAX {
                acc[i * t2 + j] = best + w;
                from[i * t2 + j] = arg;
            }
        }
    }
    if !acc[t1 * t2 - 1].is_finite() {
        return Err(Error::validation(format!("no warping path fits inside band {band:?}")));
    }
    let (mut i, mut j) = (t1 - 1, t2 - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        let (di, dj) = STEPS[from[i * t2 + j] as usize];
        i -= di;
        j -= dj;
        path.push((i, j));
    }
    path.reverse();
    Ok(finish(local, path))
}

fn finish(local: &Matrix, path: Vec<(usize, usize)>) -> AlignmentResult {
    let step_costs: Vec<f64> = path.iter().map(|&(i, j)| local.get(i, j)).collect();
    let sum = step_costs.iter().fold(0.0, |acc, c| acc + c * c);
    let mut correlation = vec![Vec::new(); local.rows()];
    for &(i, j) in &path {
        correlation[i].push(j);
    }
    AlignmentResult {
        cost: sum.sqrt() / path.len() as f64,
        path,
        step_costs,
        correlation,
    }
}

/// Euclidean distance between every row of `a` and every row of `b`.
pub fn euclidean_costs(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::validation(format!(
            "feature widths differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let d: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            out.set(i, j, d.sqrt());
        }
    }
    Ok(out)
}

/// DTW between two feature sequences under Euclidean local cost.
pub fn dtw_align(a: &Matrix, b: &Matrix, band: Option<usize>) -> Result<AlignmentResult> {
    dtw_from_costs(&euclidean_costs(a, b)?, band)
}

/// Cost of matching frame `t` to frame `t` for equal-length inputs.
pub fn diagonal_result(local: &Matrix) -> Result<AlignmentResult> {
    if local.rows() != local.cols() || local.rows() == 0 {
        return Err(Error::validation("diagonal path needs a nonempty square grid"));
    }
    Ok(finish(local, (0..local.rows()).map(|t| (t, t)).collect()))
}
