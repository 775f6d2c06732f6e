//! Empirical measures on the plane and the exact Wasserstein-2 distance
//! between equal-size point clouds.

use crate::error::{Error, Result};

/// A particle state: position `y` and velocity `x`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2 {
    pub y: f64,
    pub x: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { y: 0.0, x: 0.0 };

    pub fn new(y: f64, x: f64) -> Self {
        Self { y, x }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.y * self.y + self.x * self.x
    }

    #[inline]
    pub fn dist_sq(self, other: Point2) -> f64 {
        let dy = self.y - other.y;
        let dx = self.x - other.x;
        dy * dy + dx * dx
    }

    pub fn is_finite(self) -> bool {
        self.y.is_finite() && self.x.is_finite()
    }
}

/// Uniform probability measure on a nonempty cloud of finite points.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Point2>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("empirical measure needs at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Argument(format!("non-finite point at index {i}")));
        }
        Ok(Self { points })
    }

    /// `n` copies of `p`.
    pub fn dirac(p: Point2, n: usize) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_position(&self) -> f64 {
        mean_position(&self.points)
    }

    /// `(1/N) Σ |z_i|^p`, i.e. `W_p^p(π, δ₀)`.
    pub fn moment(&self, p: u32) -> Result<f64> {
        if p == 0 {
            return Err(Error::Argument("moment order must be at least 1".into()));
        }
        let s: f64 = if p == 2 {
            self.points.iter().map(|z| z.norm_sq()).sum()
        } else {
            self.points
                .iter()
                .map(|z| z.norm_sq().sqrt().powi(p as i32))
                .sum()
        };
        Ok(s / self.len() as f64)
    }

    pub fn w2(&self, other: &EmpiricalMeasure) -> Result<f64> {
        w2(self.points(), other.points())
    }
}

pub(crate) fn mean_position(points: &[Point2]) -> f64 {
    points.iter().map(|p| p.y).sum::<f64>() / points.len() as f64
}

/// Exact W2 between two equal-size uniform clouds.
pub fn w2(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "w2 needs equal-size measures, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Argument("w2 of empty measures".into()));
    }
    let n = a.len();
    let cost: Vec<f64> = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| p.dist_sq(*q)))
        .collect();
    let assignment = min_cost_assignment(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Minimum-cost perfect matching on a dense `n × n` row-major cost matrix
/// by successive shortest augmenting paths with dual potentials.
/// Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    assignment
}
