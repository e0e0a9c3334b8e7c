use super::{dist, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Largest cardinality accepted by the exact assignment solver.
pub const DEFAULT_EMD_CAP: usize = 512;

/// A bijection from the points of one cloud to the points of another.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `assignment[i]` is the index in `b` matched to point `i` of `a`.
    pub assignment: Vec<usize>,
    /// Mean Euclidean distance over matched pairs.
    pub cost: f64,
}

impl Matching {
    fn is_bijection(&self, n: usize) -> bool {
        if self.assignment.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for &j in &self.assignment {
            if j >= n || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }
}

/// Earth mover's distance between equal-size clouds, solved exactly.
pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<Matching> {
    emd_with_cap(a, b, DEFAULT_EMD_CAP)
}

pub fn emd_with_cap(a: &PointCloud, b: &PointCloud, cap: usize) -> Result<Matching> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::InvalidInput(format!("EMD needs equal cardinalities, got {} and {}", n, b.len())));
    }
    if n > cap {
        return Err(Error::CapacityExceeded { size: n, cap });
    }
    let (pa, pb) = (a.points(), b.points());
    let mut costs = Vec::with_capacity(n * n);
    for p in pa {
        costs.extend(pb.iter().map(|q| dist(p, q)));
    }
    let assignment = hungarian(&costs, n);
    let cost = matched_cost(pa, pb, &assignment);
    Ok(Matching { assignment, cost })
}

fn matched_cost(pa: &[Vec3], pb: &[Vec3], assignment: &[usize]) -> f64 {
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| dist(&pa[i], &pb[j])).sum();
    total / pa.len() as f64
}

/// Minimum-cost perfect assignment on a dense `n x n` row-major matrix.
///
/// Shortest augmenting paths with dual potentials, O(n^3). Rows are added one
/// at a time; every strict `<` keeps the lowest column on ties.
fn hungarian(costs: &[f64], n: usize) -> Vec<usize> {
    // 1-based with a virtual column 0, following the classical formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[col0] = true;
            let i0 = row_of[col0];
            let base = (i0 - 1) * n;
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[base + j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of[col0] = row_of[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Gradients of the EMD cost with respect to both clouds, holding the
/// matching fixed. Coincident pairs contribute zero.
pub fn emd_grad(a: &PointCloud, b: &PointCloud, matching: &Matching) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::InvalidInput(format!("EMD needs equal cardinalities, got {} and {}", n, b.len())));
    }
    if !matching.is_bijection(n) {
        return Err(Error::InvalidInput("matching is not a bijection over the clouds".into()));
    }
    let (pa, pb) = (a.points(), b.points());
    let cost = matched_cost(pa, pb, &matching.assignment);
    if (cost - matching.cost).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "stale matching: stored cost {} but clouds give {}",
            matching.cost, cost
        )));
    }
    let scale = 1.0 / n as f64;
    let mut ga = vec![[0.0; 3]; n];
    let mut gb = vec![[0.0; 3]; n];
    for (i, &j) in matching.assignment.iter().enumerate() {
        let d = dist(&pa[i], &pb[j]);
        if d == 0.0 {
            continue;
        }
        for k in 0..3 {
            let g = scale * (pa[i][k] - pb[j][k]) / d;
            ga[i][k] = g;
            gb[j][k] = -g;
        }
    }
    Ok((ga, gb))
}
