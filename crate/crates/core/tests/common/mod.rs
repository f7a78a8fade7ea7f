#![allow(dead_code)]

use brakecast::linalg;
use brakecast::synth::{SourceKind, SynthTruth};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Unit-variance Laplacian sources mixed by a random matrix with cond ≤ `max_cond`.
pub fn laplacian_system(m: usize, n: usize, max_cond: f64, seed: u64) -> (DMatrix<f64>, SynthTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0).unwrap();
    let scale = 1.0 / 2f64.sqrt();
    let s = DMatrix::from_fn(m, n, |_, _| {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        sign * exp.sample(&mut rng) * scale
    });
    let g = Normal::new(0.0, 1.0).unwrap();
    let a = loop {
        let a = DMatrix::from_fn(m, m, |_, _| g.sample(&mut rng));
        if linalg::condition_number(&a) <= max_cond {
            break a;
        }
    };
    let x = &a * &s;
    let truth = SynthTruth {
        seed,
        mixing: a,
        sources: s,
        kinds: vec![SourceKind::Background; m],
        onsets: Vec::new(),
        onset_intensities: Vec::new(),
        locked_sources: Vec::new(),
        brake: Vec::new(),
    };
    (x, truth)
}

pub fn white(rows: usize, n: usize, sigma: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(0.0, sigma).unwrap();
    DMatrix::from_fn(rows, n, |_, _| g.sample(&mut rng))
}

/// Twenty noisy maps drawn from two rendered templates with random polarity.
/// Returns the vectorized maps, the planted template of each and its sign.
pub fn two_template_maps(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    use brakecast::{cluster, montage};
    let labels = montage::spread_labels(16).unwrap();
    let xy = montage::positions(&labels).unwrap();
    let frontal: Vec<f64> = xy.iter().map(|p| p[1]).collect();
    let central: Vec<f64> = xy.iter().map(|p| (-(p[0] * p[0] + p[1] * p[1]) / 0.2).exp() - 0.3).collect();
    let templates: Vec<Vec<f64>> = [frontal, central]
        .iter()
        .map(|w| {
            let v = cluster::render_scalp_map(w, &xy).unwrap().vectorize();
            let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
            v.iter().map(|x| x / rms).collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut maps = Vec::new();
    let mut planted = Vec::new();
    let mut signs = Vec::new();
    for i in 0..20 {
        let t = i % 2;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let amp = rng.random_range(0.8..1.2);
        maps.push(templates[t].iter().map(|v| sign * amp * v + noise.sample(&mut rng)).collect());
        planted.push(t);
        signs.push(sign);
    }
    (maps, planted, signs)
}

/// Fraction of items on which two 2-way labelings agree, up to renaming.
pub fn two_way_agreement(a: &[usize], b: &[usize]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same.max(a.len() - same) as f64 / a.len() as f64
}

/// UPGMA that recomputes every cluster-to-cluster average from the leaves.
/// Returns (id_a, id_b, distance, size) per merge.
pub fn brute_force_upgma(d: &DMatrix<f64>) -> Vec<(usize, usize, f64, usize)> {
    let n = d.nrows();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (ca, cb) = (&clusters[x].1, &clusters[y].1);
                let mut sum = 0.0;
                for &i in ca {
                    for &j in cb {
                        sum += d[(i, j)];
                    }
                }
                let avg = sum / (ca.len() * cb.len()) as f64;
                let key = (clusters[x].0.min(clusters[y].0), clusters[x].0.max(clusters[y].0));
                let better = match best {
                    None => true,
                    Some((bx, by, bd)) => {
                        let bkey = (clusters[bx].0.min(clusters[by].0), clusters[bx].0.max(clusters[by].0));
                        avg < bd || (avg == bd && key < bkey)
                    }
                };
                if better {
                    best = Some((x, y, avg));
                }
            }
        }
        let (x, y, dist) = best.unwrap();
        let (ida, idb) = (clusters[x].0, clusters[y].0);
        let mut members = clusters[x].1.clone();
        members.extend(&clusters[y].1);
        clusters.remove(y);
        clusters.remove(x);
        out.push((ida.min(idb), ida.max(idb), dist, members.len()));
        clusters.push((n + step, members));
    }
    out
}
