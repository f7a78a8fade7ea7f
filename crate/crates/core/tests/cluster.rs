mod common;

use brakecast::cluster::{self, GRID, VALID_CELLS};
use brakecast::montage;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_distances(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.random_range(0.0..10.0);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

#[test]
fn upgma_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let d = random_distances(n, &mut rng);
        let fast = cluster::upgma(&d).unwrap();
        let oracle = common::brute_force_upgma(&d);
        assert_eq!(fast.merges.len(), n - 1);
        for (m, o) in fast.merges.iter().zip(&oracle) {
            assert_eq!((m.a, m.b, m.size), (o.0, o.1, o.3));
            assert!((m.distance - o.2).abs() <= 1e-12);
        }
    }
}

#[test]
fn three_point_merge_distances() {
    let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 5.0, 5.0, 5.0, 0.0]);
    let t = cluster::upgma(&d).unwrap();
    let dists: Vec<f64> = t.merges.iter().map(|m| m.distance).collect();
    assert_eq!(dists, vec![1.0, 5.0]);
}

#[test]
fn planted_templates_form_two_clusters() {
    let (maps, planted, _) = common::two_template_maps(3);
    let res = cluster::cluster_maps(&maps, 0.95, 2, 15).unwrap();
    assert!(common::two_way_agreement(&res.labels, &planted) >= 0.9);
    let w = |k: usize| res.wss.iter().find(|(kk, _)| *kk == k).unwrap().1;
    let ratio = (w(1) - w(2)) / (w(2) - w(3));
    assert!(ratio >= 10.0, "{ratio}");
    for pair in res.wss.windows(2) {
        assert!(pair[1].1 <= pair[0].1 + 1e-9);
    }
    assert_eq!(res.wss.last().unwrap().0, 15);
}

#[test]
fn planted_polarity_recovered() {
    let (maps, _, signs) = common::two_template_maps(5);
    let (_, got) = cluster::align_polarity(&maps[..].iter().step_by(2).cloned().collect::<Vec<_>>()).unwrap();
    let want: Vec<f64> = signs.iter().step_by(2).copied().collect();
    let flip = got[0] * want[0];
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(*g, flip * w);
    }
}

#[test]
fn aligned_set_is_unchanged() {
    let (maps, _, _) = common::two_template_maps(6);
    let (once, _) = cluster::align_polarity(&maps).unwrap();
    let (twice, signs) = cluster::align_polarity(&once).unwrap();
    assert_eq!(once, twice);
    assert!(signs.iter().all(|s| *s == 1.0));
}

#[test]
fn rendering_examples() {
    let labels = montage::spread_labels(16).unwrap();
    let xy = montage::positions(&labels).unwrap();
    let flat = cluster::render_scalp_map(&[0.7; 16], &xy).unwrap();
    let v = flat.vectorize();
    assert_eq!(v.len(), VALID_CELLS);
    assert!(v.iter().all(|x| (x - 0.7).abs() <= 1e-12));

    let mut spike = vec![0.0; 16];
    spike[5] = 1.0;
    let map = cluster::render_scalp_map(&spike, &xy).unwrap();
    let (r, c) = cluster::electrode_cell(xy[5]);
    assert_eq!(map.value(r, c), Some(1.0));
    let max = map.vectorize().into_iter().fold(f64::MIN, f64::max);
    assert_eq!(max, 1.0);

    let linear: Vec<f64> = xy.iter().map(|p| p[0]).collect();
    let map = cluster::render_scalp_map(&linear, &xy).unwrap();
    let mut at_nodes: Vec<(f64, f64)> = xy
        .iter()
        .map(|p| {
            let (r, c) = cluster::electrode_cell(*p);
            (cluster::cell_xy(r, c)[0], map.value(r, c).unwrap())
        })
        .collect();
    at_nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in at_nodes.windows(2) {
        if w[1].0 > w[0].0 {
            assert!(w[1].1 >= w[0].1);
        }
    }
    assert!(cluster::render_scalp_map(&[1.0; 3], &xy[..3]).is_err());
    assert!(cluster::render_scalp_map(&[1.0; 15], &xy).is_err());
    assert_eq!(map.grid.len(), GRID * GRID);
}

#[test]
fn pca_examples() {
    let dir: Vec<f64> = (0..VALID_CELLS).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect();
    let line = DMatrix::from_fn(6, VALID_CELLS, |i, j| i as f64 * dir[j] + 0.5);
    let p = cluster::pca_reduce(&line, 0.95).unwrap();
    assert_eq!(p.scores.ncols(), 1);
    assert!((p.explained - 1.0).abs() <= 1e-12);

    let iso = common::white(1000, 10, 1.0, 21);
    let p = cluster::pca_reduce(&iso, 0.95).unwrap();
    assert!(matches!(p.scores.ncols(), 9 | 10), "{}", p.scores.ncols());
    let gram = p.basis.transpose() * &p.basis;
    assert!((gram - DMatrix::identity(p.basis.ncols(), p.basis.ncols())).amax() <= 1e-8);

    let x = common::white(12, 5, 1.0, 22);
    let doubled = DMatrix::from_fn(24, 5, |i, j| x[(i % 12, j)]);
    let a = cluster::pca_reduce(&x, 0.95).unwrap();
    let b = cluster::pca_reduce(&doubled, 0.95).unwrap();
    assert_eq!(a.basis.ncols(), b.basis.ncols());
    for j in 0..a.basis.ncols() {
        let cos = a.basis.column(j).dot(&b.basis.column(j)).abs();
        assert!((cos - 1.0).abs() <= 1e-8);
    }

    assert!(cluster::pca_reduce(&DMatrix::from_element(4, 3, 2.0), 0.95).is_err());
}

#[test]
fn identical_points_have_zero_wss() {
    let x = DMatrix::from_element(5, 3, 1.5);
    let d = DMatrix::zeros(5, 5);
    let t = cluster::upgma(&d).unwrap();
    for (_, w) in cluster::wss_elbow(&x, &t, 1, 5).unwrap() {
        assert_eq!(w, 0.0);
    }
    assert!(cluster::wss_elbow(&x, &t, 1, 6).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn upgma_scales_with_distances(seed in 0u64..10_000, n in 2usize..9, c in 0.01f64..100.0) {
        let d = random_distances(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let a = cluster::upgma(&d).unwrap();
        let b = cluster::upgma(&(&d * c)).unwrap();
        for (x, y) in a.merges.iter().zip(&b.merges) {
            prop_assert_eq!((x.a, x.b, x.size), (y.a, y.b, y.size));
            prop_assert!((y.distance - c * x.distance).abs() <= 1e-9 * c * x.distance.max(1.0));
        }
    }

    #[test]
    fn cosine_ignores_positive_scale(
        u in prop::collection::vec(-5.0f64..5.0, 2..20),
        seed in 0u64..1000,
        c in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|v| v.abs() > 1e-3));
        let v: Vec<f64> = common::white(1, u.len(), 1.0, seed).iter().copied().collect();
        let cu: Vec<f64> = u.iter().map(|x| x * c).collect();
        let d = cluster::cosine_distance(&u, &v).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert!((cluster::cosine_distance(&cu, &v).unwrap() - d).abs() <= 1e-12);
    }

    #[test]
    fn cuts_refine(seed in 0u64..10_000, n in 3usize..9) {
        let d = random_distances(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let t = cluster::upgma(&d).unwrap();
        for k in 1..n {
            let coarse = t.cut(k).unwrap();
            let fine = t.cut(k + 1).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if fine[i] == fine[j] {
                        prop_assert_eq!(coarse[i], coarse[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn pca_reconstruction_error_bounded(seed in 0u64..10_000, frac in 0.5f64..1.0) {
        let x = common::white(15, 6, 1.0, seed);
        let p = cluster::pca_reduce(&x, frac).unwrap();
        let mean = DMatrix::from_fn(15, 6, |_, j| p.mean[j]);
        let total = (&x - &mean).norm_squared();
        let err = (p.reconstruct() - &x).norm_squared();
        prop_assert!(p.explained >= frac);
        prop_assert!(err / total <= 1.0 - p.explained + 1e-9);
    }
}
