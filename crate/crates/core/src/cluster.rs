//! Scalp-map rendering and clustering: polarity alignment, PCA reduction,
//! cosine-distance UPGMA and the within-cluster sum of squares elbow.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::{Error, Result};

/// Grid side; cells sit on `linspace(-1, 1, GRID)` in both axes.
pub const GRID: usize = 67;
/// In-disk cells of the standard mask.
pub const VALID_CELLS: usize = 3409;

const IDW_NEIGHBOURS: usize = 4;

/// Cell coordinates: column → x, row → y with row 0 at the front (+y).
pub fn cell_xy(row: usize, col: usize) -> [f64; 2] {
    let step = 2.0 / (GRID - 1) as f64;
    [-1.0 + col as f64 * step, 1.0 - row as f64 * step]
}

/// Integer form of `x² + y² ≤ 1` on the grid, free of rounding at the rim.
pub fn in_disk(row: usize, col: usize) -> bool {
    let h = (GRID - 1) as i64;
    let (dx, dy) = (2 * col as i64 - h, 2 * row as i64 - h);
    dx * dx + dy * dy <= h * h
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalpMap {
    /// Row-major `GRID × GRID`; `None` outside the head disk.
    pub grid: Vec<Option<f64>>,
    /// (subject, component index) the map came from, when known.
    pub source_ic: Option<(usize, usize)>,
}

impl ScalpMap {
    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.grid[row * GRID + col]
    }

    pub fn mask(&self, row: usize, col: usize) -> bool {
        self.grid[row * GRID + col].is_some()
    }

    /// The valid cells in row-major order.
    pub fn vectorize(&self) -> Vec<f64> {
        self.grid.iter().flatten().copied().collect()
    }

    /// CSV with one line per cell: `row,col,x,y,mask,value` (value empty when masked).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,x,y,mask,value\n");
        for r in 0..GRID {
            for c in 0..GRID {
                let [x, y] = cell_xy(r, c);
                match self.value(r, c) {
                    Some(v) => {
                        let _ = writeln!(out, "{r},{c},{x},{y},1,{v}");
                    }
                    None => {
                        let _ = writeln!(out, "{r},{c},{x},{y},0,");
                    }
                }
            }
        }
        out
    }
}

fn nearest_cell(p: [f64; 2]) -> (usize, usize) {
    let mut best = (0, 0, f64::INFINITY);
    for r in 0..GRID {
        for c in 0..GRID {
            if !in_disk(r, c) {
                continue;
            }
            let [x, y] = cell_xy(r, c);
            let d = (x - p[0]).powi(2) + (y - p[1]).powi(2);
            if d < best.2 {
                best = (r, c, d);
            }
        }
    }
    (best.0, best.1)
}

/// Inverse-distance weighting (power 2) over the four nearest electrodes; each
/// electrode's own cell takes its weight exactly.
pub fn render_scalp_map(weights: &[f64], electrode_xy: &[[f64; 2]]) -> Result<ScalpMap> {
    if weights.len() != electrode_xy.len() {
        return Err(Error::DimensionMismatch {
            context: "scalp-map weights vs montage",
            expected: electrode_xy.len(),
            actual: weights.len(),
        });
    }
    if weights.len() < IDW_NEIGHBOURS {
        return Err(Error::invalid(format!(
            "scalp maps need at least {IDW_NEIGHBOURS} electrodes, got {}",
            weights.len()
        )));
    }
    let mut grid = vec![None; GRID * GRID];
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    for r in 0..GRID {
        for c in 0..GRID {
            if !in_disk(r, c) {
                continue;
            }
            let [x, y] = cell_xy(r, c);
            dists.clear();
            dists.extend(
                electrode_xy
                    .iter()
                    .enumerate()
                    .map(|(j, e)| ((e[0] - x).powi(2) + (e[1] - y).powi(2), j)),
            );
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let near = &dists[..IDW_NEIGHBOURS];
            let value = if near[0].0 == 0.0 {
                weights[near[0].1]
            } else {
                let (num, den) = near
                    .iter()
                    .fold((0.0, 0.0), |(n, d), &(d2, j)| (n + weights[j] / d2, d + 1.0 / d2));
                num / den
            };
            grid[r * GRID + c] = Some(value);
        }
    }
    // pin electrode cells, the closest electrode winning a shared cell
    let mut owner: Vec<Option<(f64, usize)>> = vec![None; GRID * GRID];
    for (j, &p) in electrode_xy.iter().enumerate() {
        let (r, c) = nearest_cell(p);
        let [x, y] = cell_xy(r, c);
        let d = (x - p[0]).powi(2) + (y - p[1]).powi(2);
        let slot = &mut owner[r * GRID + c];
        if slot.is_none_or(|(best, _)| d < best) {
            *slot = Some((d, j));
        }
    }
    for (cell, o) in owner.iter().enumerate() {
        if let Some((_, j)) = o {
            grid[cell] = Some(weights[*j]);
        }
    }
    Ok(ScalpMap { grid, source_ic: None })
}

/// Cell of the electrode's pinned value.
pub fn electrode_cell(p: [f64; 2]) -> (usize, usize) {
    nearest_cell(p)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flips each map so it agrees in sign with the running mean of the maps
/// aligned before it; the first map's largest-magnitude cell is made positive.
/// Returns the aligned maps and the applied signs.
pub fn align_polarity(maps: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let first = maps.first().ok_or_else(|| Error::invalid("no maps to align"))?;
    let d = first.len();
    for (i, m) in maps.iter().enumerate() {
        if m.len() != d {
            return Err(Error::DimensionMismatch {
                context: "map length",
                expected: d,
                actual: m.len(),
            });
        }
        if m.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid(format!("map {i} is identically zero")));
        }
    }
    let pivot = first.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
    let mut signs = vec![if pivot < 0.0 { -1.0 } else { 1.0 }];
    let mut sum: Vec<f64> = first.iter().map(|v| v * signs[0]).collect();
    for m in &maps[1..] {
        let s = if dot(m, &sum) < 0.0 { -1.0 } else { 1.0 };
        sum.iter_mut().zip(m).for_each(|(a, v)| *a += s * v);
        signs.push(s);
    }
    let aligned = maps
        .iter()
        .zip(&signs)
        .map(|(m, s)| m.iter().map(|v| v * s).collect())
        .collect();
    Ok((aligned, signs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// n × k projections of the centred vectors.
    pub scores: DMatrix<f64>,
    /// d × k orthonormal directions.
    pub basis: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Fraction of total variance carried by the k directions.
    pub explained: f64,
    /// Variance of every direction, descending.
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut x = &self.scores * self.basis.transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

/// Rows of `vectors` are observations. Uses the n × n Gram matrix when d > n.
pub fn pca_reduce(vectors: &DMatrix<f64>, variance_fraction: f64) -> Result<Pca> {
    let (n, d) = vectors.shape();
    if n < 2 || d == 0 {
        return Err(Error::invalid("PCA needs at least two observations of dimension ≥ 1"));
    }
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::invalid("variance fraction must lie in (0, 1]"));
    }
    let mean = DVector::from_iterator(d, vectors.column_iter().map(|c| c.mean()));
    let mut xc = vectors.clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;
    let (eigvals, directions) = if d <= n {
        let cov = xc.transpose() * &xc / denom;
        linalg::sym_eigen_desc(&cov)
    } else {
        let gram = &xc * xc.transpose() / denom;
        let (vals, u) = linalg::sym_eigen_desc(&gram);
        let mut basis = xc.transpose() * &u;
        for (j, mut col) in basis.column_iter_mut().enumerate() {
            let norm = col.norm();
            if vals[j] > 0.0 && norm > 0.0 {
                col /= norm;
            } else {
                col.fill(0.0);
            }
        }
        (vals, basis)
    };
    let variances: Vec<f64> = eigvals.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = variances.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("PCA input has zero total variance".into()));
    }
    let mut cum = 0.0;
    let mut k = variances.len();
    for (i, v) in variances.iter().enumerate() {
        cum += v;
        if cum / total >= variance_fraction * (1.0 - 1e-12) {
            k = i + 1;
            break;
        }
    }
    let basis = directions.columns(0, k).into_owned();
    let scores = &xc * &basis;
    Ok(Pca {
        scores,
        basis,
        mean,
        explained: variances[..k].iter().sum::<f64>() / total,
        variances,
    })
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine distance",
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (dot(u, u), dot(v, v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine distance of a zero vector"));
    }
    Ok((1.0 - dot(u, v) / (nu * nv).sqrt()).clamp(0.0, 2.0))
}

/// Pairwise cosine distances between the rows of `x`.
pub fn cosine_distance_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let n = rows.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = cosine_distance(&rows[i], &rows[j])?;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Smaller cluster id; leaves are `0..n`, merge `i` creates id `n + i`.
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaves: usize,
}

impl Dendrogram {
    /// Text merge table.
    pub fn to_text(&self) -> String {
        let mut out = String::from("step,cluster_a,cluster_b,distance,size\n");
        for (i, m) in self.merges.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{}", m.a, m.b, m.distance, m.size);
        }
        out
    }

    /// Leaf labels for a `k`-cluster cut, numbered by first appearance.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.leaves;
        if k == 0 || k > n {
            return Err(Error::invalid(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, m) in self.merges.iter().take(n - k).enumerate() {
            let id = n + i;
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            parent[ra] = id;
            parent[rb] = id;
        }
        let mut names: Vec<Option<usize>> = vec![None; 2 * n];
        let mut next = 0;
        Ok((0..n)
            .map(|leaf| {
                let root = find(&mut parent, leaf);
                *names[root].get_or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect())
    }
}

fn validate_distances(dist: &DMatrix<f64>) -> Result<()> {
    if !dist.is_square() || dist.nrows() == 0 {
        return Err(Error::invalid("distance matrix must be square and nonempty"));
    }
    let n = dist.nrows();
    for i in 0..n {
        if dist[(i, i)] != 0.0 {
            return Err(Error::invalid(format!("distance diagonal entry {i} is not zero")));
        }
        for j in 0..n {
            let v = dist[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("distance ({i}, {j}) = {v} is negative or non-finite")));
            }
            if v != dist[(j, i)] {
                return Err(Error::invalid(format!("distance matrix is asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Average-linkage agglomeration with the size-weighted update
/// `d(A∪B, C) = (|A|·d(A,C) + |B|·d(B,C)) / (|A| + |B|)`. Ties go to the
/// lexicographically smallest (id, id) pair.
pub fn upgma(dist: &DMatrix<f64>) -> Result<Dendrogram> {
    validate_distances(dist)?;
    let n = dist.nrows();
    let total = 2 * n - 1;
    let mut d = vec![0.0; total * total];
    for i in 0..n {
        for j in 0..n {
            d[i * total + j] = dist[(i, j)];
        }
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (0, 0, f64::INFINITY);
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let v = d[a * total + b];
                if v < best.2 {
                    best = (a, b, v);
                }
            }
        }
        let (a, b, dist_ab) = best;
        let id = n + step;
        size[id] = size[a] + size[b];
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        active.retain(|&c| c != a && c != b);
        for &c in &active {
            let v = (sa * d[a * total + c] + sb * d[b * total + c]) / (sa + sb);
            d[id * total + c] = v;
            d[c * total + id] = v;
        }
        active.push(id);
        merges.push(Merge {
            a,
            b,
            distance: dist_ab,
            size: size[id],
        });
    }
    Ok(Dendrogram { merges, leaves: n })
}

/// Σ over clusters of squared Euclidean distances to the cluster centroid.
pub fn wss(scores: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let centroid = DVector::from_iterator(
            scores.ncols(),
            (0..scores.ncols()).map(|j| members.iter().map(|&i| scores[(i, j)]).sum::<f64>() / members.len() as f64),
        );
        for &i in &members {
            total += (scores.row(i).transpose() - &centroid).norm_squared();
        }
    }
    total
}

/// WSS of the dendrogram cut at every K in `k_min..=k_max`.
pub fn wss_elbow(scores: &DMatrix<f64>, dendrogram: &Dendrogram, k_min: usize, k_max: usize) -> Result<Vec<(usize, f64)>> {
    if scores.nrows() != dendrogram.leaves {
        return Err(Error::DimensionMismatch {
            context: "scores rows vs dendrogram leaves",
            expected: dendrogram.leaves,
            actual: scores.nrows(),
        });
    }
    if k_max > scores.nrows() {
        return Err(Error::invalid(format!(
            "K = {k_max} exceeds the {} clustered maps",
            scores.nrows()
        )));
    }
    (k_min.max(1)..=k_max)
        .map(|k| Ok((k, wss(scores, &dendrogram.cut(k)?))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub signs: Vec<f64>,
    pub pca: Pca,
    pub dendrogram: Dendrogram,
    pub labels: Vec<usize>,
    pub wss: Vec<(usize, f64)>,
}

/// Align, reduce to `variance_fraction`, cluster by cosine UPGMA and cut at `k`.
pub fn cluster_maps(maps: &[Vec<f64>], variance_fraction: f64, k: usize, k_max: usize) -> Result<ClusterResult> {
    let (aligned, signs) = align_polarity(maps)?;
    let d = aligned[0].len();
    let x = DMatrix::from_fn(aligned.len(), d, |i, j| aligned[i][j]);
    let pca = pca_reduce(&x, variance_fraction)?;
    let dendrogram = upgma(&cosine_distance_matrix(&pca.scores)?)?;
    let labels = dendrogram.cut(k)?;
    let wss = wss_elbow(&pca.scores, &dendrogram, 1, k_max.min(maps.len()))?;
    Ok(ClusterResult {
        signs,
        pca,
        dendrogram,
        labels,
        wss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_has_3409_cells() {
        let count = (0..GRID).flat_map(|r| (0..GRID).map(move |c| (r, c))).filter(|&(r, c)| in_disk(r, c)).count();
        assert_eq!(count, VALID_CELLS);
    }

    #[test]
    fn three_point_hand_case() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 5.0, 5.0, 5.0, 0.0]);
        let t = upgma(&d).unwrap();
        assert_eq!((t.merges[0].a, t.merges[0].b, t.merges[0].distance), (0, 1, 1.0));
        assert_eq!((t.merges[1].a, t.merges[1].b, t.merges[1].distance), (2, 3, 5.0));
        assert_eq!(t.merges[1].size, 3);
    }

    #[test]
    fn four_point_tie_order() {
        let d = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 2.0, 8.0, 8.0, 2.0, 0.0, 8.0, 8.0, 8.0, 8.0, 0.0, 2.0, 8.0, 8.0, 2.0, 0.0],
        );
        let t = upgma(&d).unwrap();
        let seq: Vec<(usize, usize, f64)> = t.merges.iter().map(|m| (m.a, m.b, m.distance)).collect();
        assert_eq!(seq, vec![(0, 1, 2.0), (2, 3, 2.0), (4, 5, 8.0)]);
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(upgma(&asym).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(upgma(&neg).is_err());
    }

    #[test]
    fn cosine_hand_cases() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), 2.0);
        let d = cosine_distance(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn polarity_pair_and_zero() {
        let v = vec![1.0, -3.0, 2.0];
        let w: Vec<f64> = v.iter().map(|x| -x).collect();
        let (aligned, signs) = align_polarity(&[v.clone(), w]).unwrap();
        assert_eq!(aligned[0], aligned[1]);
        assert_eq!(signs, vec![-1.0, 1.0]);
        assert!(align_polarity(&[v, vec![0.0; 3]]).is_err());
    }

    #[test]
    fn cuts_are_nested_and_wss_vanishes_at_n() {
        let d = DMatrix::from_fn(6, 6, |i, j| ((i as f64) - (j as f64)).abs().powf(1.3));
        let t = upgma(&d).unwrap();
        let x = DMatrix::from_fn(6, 2, |i, j| (i * (j + 1)) as f64);
        let w = wss_elbow(&x, &t, 1, 6).unwrap();
        assert_eq!(w.last().unwrap().1, 0.0);
        for k in 1..6 {
            let coarse = t.cut(k).unwrap();
            let fine = t.cut(k + 1).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    if fine[i] == fine[j] {
                        assert_eq!(coarse[i], coarse[j]);
                    }
                }
            }
        }
        assert!(wss_elbow(&x, &t, 1, 7).is_err());
    }
}
