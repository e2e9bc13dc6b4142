//! Optimal one-to-one correspondence between reference points and detections.
//!
//! [`solve_lap`] is a shortest-augmenting-path Hungarian solver (`O(n³)`).
//! Among equal-cost optima it returns the lexicographically smallest
//! assignment `(det of ref 0, det of ref 1, ...)`: every optimal assignment
//! is a perfect matching on the zero-reduced-cost edges of the optimal dual,
//! so the smallest one is picked greedily on that subgraph.
//!
//! [`solve_lap_rect`] handles spurious and missed detections by giving every
//! reference and every detection a private dummy partner at cost `c_max`.

use nalgebra::Matrix2;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Mahalanobis,
}

/// `n_ref × n_det` matrix of non-negative finite costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
    metric: Metric,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>, metric: Metric) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!(
                "cost entries must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self { values, metric })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn n_refs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_dets(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, r: usize, d: usize) -> f64 {
        self.values[[r, d]]
    }

    pub fn transpose(&self) -> Self {
        Self {
            values: self.values.t().to_owned(),
            metric: self.metric,
        }
    }

    /// All costs multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.values * factor, self.metric)
    }
}

/// A partial matching between references (rows) and detections (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// `(ref index, det index)`, sorted by ref index.
    pub pairs: Vec<(usize, usize)>,
    pub unassigned_refs: Vec<usize>,
    pub unassigned_dets: Vec<usize>,
    pub total_cost: f64,
}

impl AssignmentResult {
    /// Every index of each side appears exactly once across pairs and unassigned lists.
    pub fn is_valid(&self, n_refs: usize, n_dets: usize) -> bool {
        let mut refs = vec![0u8; n_refs];
        let mut dets = vec![0u8; n_dets];
        for &(r, d) in &self.pairs {
            if r >= n_refs || d >= n_dets {
                return false;
            }
            refs[r] += 1;
            dets[d] += 1;
        }
        for &r in &self.unassigned_refs {
            if r >= n_refs {
                return false;
            }
            refs[r] += 1;
        }
        for &d in &self.unassigned_dets {
            if d >= n_dets {
                return false;
            }
            dets[d] += 1;
        }
        refs.iter().chain(&dets).all(|&c| c == 1) && self.total_cost >= 0.0
    }

    pub fn det_for_ref(&self, r: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == r).map(|p| p.1)
    }

    pub fn ref_for_det(&self, d: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == d).map(|p| p.0)
    }
}

pub fn euclidean_cost(refs: &[Vec2], dets: &[Vec2]) -> CostMatrix {
    let values = Array2::from_shape_fn((refs.len(), dets.len()), |(i, j)| {
        let dx = refs[i][0] - dets[j][0];
        let dy = refs[i][1] - dets[j][1];
        (dx * dx + dy * dy).sqrt()
    });
    CostMatrix {
        values,
        metric: Metric::Euclidean,
    }
}

/// `D_ij = sqrt((r_i − d_j)ᵀ Σ_i⁻¹ (r_i − d_j))` with one covariance per reference.
pub fn mahalanobis_cost(
    refs: &[Vec2],
    dets: &[Vec2],
    covariances: &[Matrix2<f64>],
) -> Result<CostMatrix> {
    if covariances.len() != refs.len() {
        return Err(Error::domain(format!(
            "{} covariances for {} references",
            covariances.len(),
            refs.len()
        )));
    }
    let mut factors = Vec::with_capacity(refs.len());
    for (i, cov) in covariances.iter().enumerate() {
        let sym = (cov[(0, 1)] - cov[(1, 0)]).abs() <= 1e-12 * cov.abs().max();
        let chol = if sym { cov.cholesky() } else { None };
        match chol {
            Some(c) => factors.push(c.l()),
            None => {
                return Err(Error::domain(format!(
                    "covariance {i} is not symmetric positive-definite"
                )))
            }
        }
    }
    let values = Array2::from_shape_fn((refs.len(), dets.len()), |(i, j)| {
        let l = &factors[i];
        let dx = refs[i][0] - dets[j][0];
        let dy = refs[i][1] - dets[j][1];
        // whiten with L⁻¹
        let y1 = dx / l[(0, 0)];
        let y2 = (dy - l[(1, 0)] * y1) / l[(1, 1)];
        (y1 * y1 + y2 * y2).sqrt()
    });
    Ok(CostMatrix {
        values,
        metric: Metric::Mahalanobis,
    })
}

/// Exact minimum-cost perfect matching of a square cost matrix.
pub fn solve_lap(cost: &CostMatrix) -> Result<AssignmentResult> {
    let n = cost.n_refs();
    if cost.n_dets() != n {
        return Err(Error::domain(format!(
            "solve_lap needs a square matrix, got {}x{}; use solve_lap_rect",
            n,
            cost.n_dets()
        )));
    }
    let assignment = solve_square(&cost.values);
    let pairs: Vec<(usize, usize)> = assignment.iter().copied().enumerate().collect();
    let total_cost = pairs.iter().map(|&(i, j)| cost.values[[i, j]]).sum();
    Ok(AssignmentResult {
        pairs,
        unassigned_refs: Vec::new(),
        unassigned_dets: Vec::new(),
        total_cost,
    })
}

/// Rectangular assignment with outlier rejection.
///
/// Each reference may instead pair with a dummy detection, and each detection
/// with a dummy reference, at cost `c_max` apiece. Items matched to dummies
/// are reported unassigned; the total cost counts `c_max` for each of them.
pub fn solve_lap_rect(cost: &CostMatrix, c_max: f64) -> Result<AssignmentResult> {
    if !(c_max > 0.0 && c_max.is_finite()) {
        return Err(Error::domain(format!(
            "c_max must be positive, got {c_max}"
        )));
    }
    let (n, m) = (cost.n_refs(), cost.n_dets());
    let size = n + m;
    let padded = Array2::from_shape_fn((size, size), |(i, j)| match (i < n, j < m) {
        (true, true) => cost.values[[i, j]],
        (false, false) => 0.0,
        _ => c_max,
    });
    let assignment = solve_square(&padded);

    let mut pairs = Vec::new();
    let mut unassigned_refs = Vec::new();
    let mut matched_dets = vec![false; m];
    let mut total_cost = 0.0;
    for (i, &j) in assignment.iter().enumerate().take(n) {
        if j < m {
            pairs.push((i, j));
            matched_dets[j] = true;
            total_cost += cost.values[[i, j]];
        } else {
            unassigned_refs.push(i);
            total_cost += c_max;
        }
    }
    let unassigned_dets: Vec<usize> = (0..m).filter(|&j| !matched_dets[j]).collect();
    total_cost += c_max * unassigned_dets.len() as f64;
    Ok(AssignmentResult {
        pairs,
        unassigned_refs,
        unassigned_dets,
        total_cost,
    })
}

/// Row → column assignment of minimum total cost, lexicographically smallest among ties.
fn solve_square(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    if n == 0 {
        return Vec::new();
    }
    let (assignment, u, v) = hungarian(cost);
    let scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-10 * scale * n as f64;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost[[i, j]] - u[i] - v[j] <= tol)
                .collect()
        })
        .collect();
    lexicographic_matching(&tight).unwrap_or(assignment)
}

/// Shortest augmenting path Hungarian method with row/column potentials.
fn hungarian(cost: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    // 1-based internally; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching in a bipartite graph given by
/// per-row adjacency lists (sorted ascending).
fn lexicographic_matching(adj: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut fixed = vec![usize::MAX; n];
    let mut col_taken = vec![false; n];
    for i in 0..n {
        let mut chosen = None;
        for &j in &adj[i] {
            if col_taken[j] {
                continue;
            }
            col_taken[j] = true;
            if completes(adj, i + 1, &col_taken) {
                chosen = Some(j);
                break;
            }
            col_taken[j] = false;
        }
        fixed[i] = chosen?;
    }
    Some(fixed)
}

/// Whether rows `from..` can be perfectly matched into the untaken columns (Kuhn).
fn completes(adj: &[Vec<usize>], from: usize, taken: &[bool]) -> bool {
    fn augment(
        row: usize,
        adj: &[Vec<usize>],
        taken: &[bool],
        seen: &mut [bool],
        owner: &mut [usize],
    ) -> bool {
        for &j in &adj[row] {
            if taken[j] || seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j] == usize::MAX || augment(owner[j], adj, taken, seen, owner) {
                owner[j] = row;
                return true;
            }
        }
        false
    }
    let n = adj.len();
    let mut owner = vec![usize::MAX; n];
    for row in from..n {
        let mut seen = vec![false; n];
        if !augment(row, adj, taken, &mut seen, &mut owner) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all permutations, lexicographically first among ties.
    fn brute_force(cost: &Array2<f64>) -> (f64, Vec<usize>) {
        fn rec(
            cost: &Array2<f64>,
            row: usize,
            used: &mut Vec<bool>,
            current: &mut Vec<usize>,
            best: &mut (f64, Vec<usize>),
        ) {
            let n = cost.nrows();
            if row == n {
                let total: f64 = current.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
                if total < best.0 {
                    *best = (total, current.clone());
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    current.push(j);
                    rec(cost, row + 1, used, current, best);
                    current.pop();
                    used[j] = false;
                }
            }
        }
        let n = cost.nrows();
        let mut best = (f64::INFINITY, Vec::new());
        rec(cost, 0, &mut vec![false; n], &mut Vec::new(), &mut best);
        best
    }

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(0.0..10.0))
    }

    #[test]
    fn trivial_instances() {
        let diag = Array2::from_shape_fn(
            (4, 4),
            |(i, j)| if i == j { 0.0 } else { 1.0 + (i + j) as f64 },
        );
        let res = solve_lap(&CostMatrix::new(diag, Metric::Euclidean).unwrap()).unwrap();
        assert_eq!(res.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(res.total_cost, 0.0);

        let swap = ndarray::arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let res = solve_lap(&CostMatrix::new(swap, Metric::Euclidean).unwrap()).unwrap();
        assert_eq!(res.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(res.total_cost, 0.0);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.random_range(1..=7);
            let m = random_matrix(&mut rng, n, n);
            let (best, _) = brute_force(&m);
            let res = solve_lap(&CostMatrix::new(m.clone(), Metric::Euclidean).unwrap()).unwrap();
            assert_eq!(res.total_cost, best);
            assert!(res.is_valid(n, n));
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            // small integer costs produce many ties
            let m = Array2::from_shape_fn((n, n), |_| rng.random_range(0..3) as f64);
            let (best, perm) = brute_force(&m);
            let res = solve_lap(&CostMatrix::new(m, Metric::Euclidean).unwrap()).unwrap();
            assert_eq!(res.total_cost, best);
            let got: Vec<usize> = res.pairs.iter().map(|p| p.1).collect();
            assert_eq!(got, perm);
        }
        let flat = Array2::from_elem((5, 5), 1.0);
        let res = solve_lap(&CostMatrix::new(flat, Metric::Euclidean).unwrap()).unwrap();
        assert_eq!(res.pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn permutation_equivariance_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..=8);
            let m = random_matrix(&mut rng, n, n);
            let base = solve_lap(&CostMatrix::new(m.clone(), Metric::Euclidean).unwrap()).unwrap();

            let mut rows: Vec<usize> = (0..n).collect();
            let mut cols: Vec<usize> = (0..n).collect();
            for k in (1..n).rev() {
                rows.swap(k, rng.random_range(0..=k));
                cols.swap(k, rng.random_range(0..=k));
            }
            let permuted = Array2::from_shape_fn((n, n), |(i, j)| m[[rows[i], cols[j]]]);
            let res = solve_lap(&CostMatrix::new(permuted, Metric::Euclidean).unwrap()).unwrap();
            assert_relative_eq!(res.total_cost, base.total_cost, max_relative = 1e-12);
            let mut mapped: Vec<(usize, usize)> =
                res.pairs.iter().map(|&(i, j)| (rows[i], cols[j])).collect();
            mapped.sort();
            assert_eq!(mapped, base.pairs);

            let scaled = solve_lap(&CostMatrix::new(&m * 3.5, Metric::Euclidean).unwrap()).unwrap();
            assert_eq!(scaled.pairs, base.pairs);
            assert_relative_eq!(
                scaled.total_cost,
                3.5 * base.total_cost,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn non_square_is_rejected() {
        let m = CostMatrix::new(Array2::zeros((2, 3)), Metric::Euclidean).unwrap();
        assert!(matches!(solve_lap(&m), Err(Error::Domain(_))));
        assert!(CostMatrix::new(ndarray::arr2(&[[f64::NAN]]), Metric::Euclidean).is_err());
        assert!(CostMatrix::new(ndarray::arr2(&[[-1.0]]), Metric::Euclidean).is_err());
    }

    #[test]
    fn euclidean_cost_cases() {
        let pts = [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]];
        let c = euclidean_cost(&pts, &pts);
        for i in 0..3 {
            assert_eq!(c.get(i, i), 0.0);
        }
        assert_eq!(euclidean_cost(&[[0.0, 0.0]], &[[3.0, 4.0]]).get(0, 0), 5.0);
        let other = [[1.0, 1.0], [4.0, -2.0]];
        assert_eq!(
            euclidean_cost(&pts, &other).transpose(),
            euclidean_cost(&other, &pts)
        );
    }

    #[test]
    fn mahalanobis_cost_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let refs: Vec<Vec2> = (0..5).map(|_| [rng.random(), rng.random()]).collect();
        let dets: Vec<Vec2> = (0..6).map(|_| [rng.random(), rng.random()]).collect();
        let eye = vec![Matrix2::identity(); 5];
        assert_eq!(
            mahalanobis_cost(&refs, &dets, &eye).unwrap().values(),
            euclidean_cost(&refs, &dets).values()
        );

        let s = 0.3;
        let iso = vec![Matrix2::identity() * (s * s); 5];
        let mc = mahalanobis_cost(&refs, &dets, &iso).unwrap();
        let ec = euclidean_cost(&refs, &dets);
        for (a, b) in mc.values().iter().zip(ec.values()) {
            assert_relative_eq!(*a, b / s, max_relative = 1e-12);
        }

        let diag = vec![Matrix2::new(4.0, 0.0, 0.0, 1.0)];
        let d = mahalanobis_cost(&[[0.0, 0.0]], &[[2.0, 0.0]], &diag).unwrap();
        assert_relative_eq!(d.get(0, 0), 1.0, max_relative = 1e-15);

        let corr = vec![Matrix2::new(2.0, 0.5, 0.5, 1.0)];
        let d = mahalanobis_cost(&[[0.0, 0.0]], &[[1.0, -1.0]], &corr)
            .unwrap()
            .get(0, 0);
        let inv = corr[0].try_inverse().unwrap();
        let v = nalgebra::Vector2::new(1.0, -1.0);
        assert_relative_eq!(
            d,
            (v.transpose() * inv * v)[(0, 0)].sqrt(),
            max_relative = 1e-12
        );

        let not_pd = vec![Matrix2::new(1.0, 2.0, 2.0, 1.0)];
        assert!(matches!(
            mahalanobis_cost(&[[0.0, 0.0]], &[[1.0, 0.0]], &not_pd),
            Err(Error::Domain(_))
        ));
        let asym = vec![Matrix2::new(1.0, 0.2, 0.0, 1.0)];
        assert!(mahalanobis_cost(&[[0.0, 0.0]], &[[1.0, 0.0]], &asym).is_err());
    }

    /// Exhaustive optimum of the dummy-augmented problem.
    fn brute_force_rect(cost: &Array2<f64>, c_max: f64) -> f64 {
        let (n, m) = cost.dim();
        let size = n + m;
        let padded = Array2::from_shape_fn((size, size), |(i, j)| match (i < n, j < m) {
            (true, true) => cost[[i, j]],
            (false, false) => 0.0,
            _ => c_max,
        });
        brute_force(&padded).0
    }

    #[test]
    fn rect_outlier_is_dropped() {
        let c_max = 1.0;
        let refs = [[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]];
        let dets = [[0.1, 0.0], [5.1, 0.0], [10.0, 10.0 * c_max + 10.0]];
        let cost = euclidean_cost(&refs, &dets);
        let res = solve_lap_rect(&cost, c_max).unwrap();
        assert_eq!(res.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(res.unassigned_refs, vec![2]);
        assert_eq!(res.unassigned_dets, vec![2]);
        assert!(res.is_valid(3, 3));
        assert_relative_eq!(
            res.total_cost,
            brute_force_rect(cost.values(), c_max),
            max_relative = 1e-12
        );
    }

    #[test]
    fn rect_reduces_to_square_when_costs_are_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.random_range(1..=6);
            let m = random_matrix(&mut rng, n, n);
            let cost = CostMatrix::new(m, Metric::Euclidean).unwrap();
            let a = solve_lap(&cost).unwrap();
            let b = solve_lap_rect(&cost, 10.5).unwrap();
            assert_eq!(a.pairs, b.pairs);
            assert!(b.unassigned_refs.is_empty() && b.unassigned_dets.is_empty());
        }
    }

    #[test]
    fn rect_empty_side() {
        let cost = CostMatrix::new(Array2::zeros((3, 0)), Metric::Euclidean).unwrap();
        let res = solve_lap_rect(&cost, 2.0).unwrap();
        assert!(res.pairs.is_empty());
        assert_eq!(res.unassigned_refs, vec![0, 1, 2]);
        assert_eq!(res.total_cost, 6.0);
        assert!(solve_lap_rect(&cost, 0.0).is_err());
    }

    #[test]
    fn rect_matches_exhaustive_padded_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..200 {
            let n = rng.random_range(0..=4);
            let m = rng.random_range(0..=4);
            let cost = random_matrix(&mut rng, n, m);
            let c_max = rng.random_range(0.5..6.0);
            let res = solve_lap_rect(
                &CostMatrix::new(cost.clone(), Metric::Euclidean).unwrap(),
                c_max,
            )
            .unwrap();
            assert!(res.is_valid(n, m));
            assert_relative_eq!(
                res.total_cost,
                brute_force_rect(&cost, c_max),
                epsilon = 1e-9
            );
            // a kept pair never costs more than dropping both ends
            for &(i, j) in &res.pairs {
                assert!(cost[[i, j]] <= 2.0 * c_max + 1e-12);
            }
        }
    }
}
