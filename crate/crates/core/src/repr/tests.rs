use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::par::Mode;

fn rand_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
}

/// Gauss-Jordan with partial pivoting on the bordered system that carries
/// an unpenalized intercept row/column.
fn normal_equations_oracle(x: &DMatrix<f64>, t: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let (n, p) = x.shape();
    let m = p + 1;
    let col = |r: usize, c: usize| if c == 0 { 1.0 } else { x[(r, c - 1)] };
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().take(m).enumerate() {
            *cell = (0..n).map(|r| col(r, i) * col(r, j)).sum();
        }
        if i > 0 {
            row[i] += alpha;
        }
        row[m] = (0..n).map(|r| col(r, i) * t[r]).sum();
    }
    for c in 0..m {
        let piv = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..m {
            if r != c {
                let f = a[r][c];
                let pivot_row = a[c].clone();
                for (v, pv) in a[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    (a[0][m], (1..m).map(|i| a[i][m]).collect())
}

#[test]
fn ridge_matches_oracle_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..50 {
        let (n, p) = (20, 5);
        let x = rand_matrix(&mut rng, n, p);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let alpha = [0.0, 0.1, 1.0, 10.0][trial % 4];
        let m = ridge_fit(&x, &t, alpha).unwrap();
        let (b0, b) = normal_equations_oracle(&x, &t, alpha);
        let scale = b.iter().fold(b0.abs(), |s, v| s.max(v.abs()));
        assert!((m.intercept - b0).abs() <= 1e-8 * scale);
        for (u, v) in m.coef.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-8 * scale, "trial {trial}: {u} vs {v}");
        }
    }
}

#[test]
fn ridge_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_matrix(&mut rng, 4, 3);
    let t = vec![1.0, -2.0, 0.5, 3.0];
    let exact = ridge_fit(&x, &t, 0.0).unwrap();
    for (p, v) in exact.predict(&x).unwrap().iter().zip(&t) {
        assert!((p - v).abs() < 1e-9);
    }
    let huge = ridge_fit(&x, &t, 1e12).unwrap();
    let mean = t.iter().sum::<f64>() / 4.0;
    assert!(huge.coef.iter().all(|c| c.abs() < 1e-9));
    assert!(huge.predict(&x).unwrap().iter().all(|p| (p - mean).abs() < 1e-9));
    assert!(ridge_fit(&x, &t, -1.0).is_err());
}

#[test]
fn ridge_singular_takes_minimum_norm() {
    // duplicated column: minimum-norm splits the weight evenly
    let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    let t = vec![0.0, 2.0, 4.0, 6.0];
    let m = ridge_fit(&x, &t, 0.0).unwrap();
    assert!((m.coef[0] - 1.0).abs() < 1e-9 && (m.coef[1] - 1.0).abs() < 1e-9);
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(3..15);
        // integer coordinates create distance ties
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0..3) as f64);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64).collect();
        let q = DMatrix::from_fn(4, 2, |_, _| rng.random_range(0..3) as f64);
        let k = rng.random_range(1..=n);
        let got = knn_predict(&x, &t, &q, k).unwrap();
        for (qi, g) in got.iter().enumerate() {
            let mut idx: Vec<usize> = (0..n).collect();
            let dist = |i: usize| {
                let dx = x[(i, 0)] - q[(qi, 0)];
                let dy = x[(i, 1)] - q[(qi, 1)];
                dx * dx + dy * dy
            };
            // insertion sort: stable in index order
            for i in 1..n {
                let mut j = i;
                while j > 0 && dist(idx[j - 1]) > dist(idx[j]) {
                    idx.swap(j - 1, j);
                    j -= 1;
                }
            }
            let expect = idx[..k].iter().map(|&i| t[i]).sum::<f64>() / k as f64;
            assert_eq!(*g, expect);
        }
    }
}

#[test]
fn knn_cases() {
    let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 5.0]);
    let t = [10.0, 20.0, 60.0];
    let q = DMatrix::from_row_slice(1, 1, &[1.0]);
    assert_eq!(knn_predict(&x, &t, &q, 1).unwrap(), [20.0]);
    assert_eq!(knn_predict(&x, &t, &q, 3).unwrap(), [30.0]);
    // 0 and 2 are equidistant from 1: the lower index wins
    let x2 = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
    assert_eq!(knn_predict(&x2, &[7.0, 9.0], &q, 1).unwrap(), [7.0]);
    assert!(knn_predict(&x, &t, &q, 0).is_err());
    assert!(knn_predict(&x, &t, &q, 4).is_err());
}

fn linear_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_matrix(&mut rng, n, 3);
    let t = (0..n).map(|r| 2.0 * x[(r, 0)] - x[(r, 1)] + 0.5).collect();
    (x, t)
}

#[test]
fn mlp_fits_linear_data() {
    let (x, t) = linear_data(60, 8);
    let cfg = MlpConfig {
        lr: 1e-2,
        max_iter: 5000,
        ..Default::default()
    };
    let m = mlp_fit(&x, &t, &cfg).unwrap();
    let r2 = r2_score(&m.predict(&x).unwrap(), &t).unwrap();
    assert!(r2 > 0.9, "train R² {r2}");
    assert!(!m.diverged);
}

#[test]
fn mlp_is_seed_deterministic_and_shrinks_with_alpha() {
    let (x, t) = linear_data(30, 9);
    let cfg = MlpConfig {
        max_iter: 300,
        ..Default::default()
    };
    assert_eq!(mlp_fit(&x, &t, &cfg).unwrap(), mlp_fit(&x, &t, &cfg).unwrap());
    let flat = mlp_fit(
        &x,
        &t,
        &MlpConfig {
            alpha: 1e9,
            lr: 1e-2,
            max_iter: 3000,
            ..Default::default()
        },
    )
    .unwrap();
    let p = flat.predict(&x).unwrap();
    let spread = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - p.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.05, "spread {spread}");
}

#[test]
fn scoring_cases() {
    let t = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
    assert_eq!(mae(&t, &t).unwrap(), 0.0);
    assert_eq!(r2_score(&[2.5; 4], &t).unwrap(), 0.0);
    assert_eq!(mae(&[3.0, 4.0, 5.0, 6.0], &t).unwrap(), 2.0);
    assert!(r2_score(&t, &[1.0; 4]).is_err());
    assert!(r2_score(&[1.0], &[1.0]).is_err());
}

proptest! {
    #[test]
    fn scores_match_scalar_loops(pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)) {
        let p: Vec<f64> = pairs.iter().map(|a| a.0).collect();
        let t: Vec<f64> = pairs.iter().map(|a| a.1).collect();
        let n = t.len() as f64;
        let mut mean = 0.0;
        for v in &t { mean += v / n; }
        let (mut res, mut tot, mut abs) = (0.0, 0.0, 0.0);
        for i in 0..t.len() {
            res += (t[i] - p[i]) * (t[i] - p[i]);
            tot += (t[i] - mean) * (t[i] - mean);
            abs += (t[i] - p[i]).abs();
        }
        prop_assume!(tot > 1e-6);
        prop_assert!((r2_score(&p, &t).unwrap() - (1.0 - res / tot)).abs() <= 1e-12 * (1.0 + (res / tot).abs()));
        prop_assert!((mae(&p, &t).unwrap() - abs / n).abs() <= 1e-12 * (1.0 + abs / n));
    }
}

#[test]
fn standardize_cases() {
    let train = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 3.0, 5.0]);
    let test = DMatrix::from_row_slice(1, 2, &[5.0, 6.0]);
    let (a, b, s) = standardize(&train, &test).unwrap();
    assert_eq!(s.mean, [2.0, 5.0]);
    assert_eq!(s.scale, [1.0, 1.0]);
    assert_eq!(a.column(0).as_slice(), [-1.0, 1.0]);
    assert_eq!(a.column(1).as_slice(), [0.0, 0.0]);
    assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), [3.0, 1.0]);
    assert!(Scaler::fit(&DMatrix::zeros(0, 2)).is_err());
}

#[test]
fn grids_are_fixed() {
    let g = ridge_grid();
    assert_eq!(g.len(), 44);
    assert_eq!(g[0], 1e-5);
    assert!((g[1] / g[0] - 10f64.powf(0.25)).abs() < 1e-12);
    assert!(*g.last().unwrap() < 1e6);
    assert!((g.last().unwrap() / 10f64.powf(5.75) - 1.0).abs() < 1e-12);
    assert_eq!(
        knn_grid(),
        [1, 2, 3, 4, 5, 6, 8, 9, 11, 13, 16, 19, 22, 26, 32, 38, 45, 53, 64, 76, 90, 107, 128, 152, 181, 215]
    );
}

#[test]
fn grid_search_picks_and_is_deterministic() {
    let (x, mut t) = linear_data(30, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in &mut t {
        *v += 0.1 * rng.random_range(-1.0..1.0);
    }
    let opts = CvOptions::default();
    let one = grid_search_cv(RegressorKind::Ridge, &[0.3], &x, &t, &opts).unwrap();
    assert_eq!(one.best, 0.3);

    let a = grid_search_cv(RegressorKind::Ridge, &ridge_grid(), &x, &t, &opts).unwrap();
    let b = grid_search_cv(
        RegressorKind::Ridge,
        &ridge_grid(),
        &x,
        &t,
        &CvOptions {
            mode: Mode::Sequential,
            ..opts
        },
    )
    .unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.scores, b.scores);
    // clean linear signal prefers little shrinkage
    assert!(a.best < 1.0);

    // k beyond the fold size is skipped rather than failing
    let k = grid_search_cv(RegressorKind::Knn, &RegressorKind::Knn.default_grid(), &x, &t, &opts).unwrap();
    assert!(k.best <= 20.0);
    assert!(k.scores.last().unwrap().is_infinite());
}

#[test]
fn grid_search_ties_keep_smaller_value() {
    // rows come in identical pairs, so k = 1 and k = 2 always average the
    // same pair and score identically
    let x = DMatrix::from_fn(12, 1, |r, _| (r / 2) as f64);
    let t: Vec<f64> = (0..12).map(|r| ((r / 2) * (r / 2)) as f64).collect();
    let r = grid_search_cv(RegressorKind::Knn, &[2.0, 1.0], &x, &t, &CvOptions::default()).unwrap();
    assert_eq!(r.scores[0], r.scores[1]);
    assert_eq!(r.best, 1.0);
}

#[test]
fn permutation_importance_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200;
    let x = rand_matrix(&mut rng, n, 2);
    let t: Vec<f64> = (0..n).map(|r| 3.0 * x[(r, 0)] + 0.1 * rng.random_range(-1.0..1.0)).collect();
    let m = ridge_fit(&x, &t, 1e-6).unwrap();

    let ident: Vec<usize> = (0..n).collect();
    assert_eq!(permuted_mae_increase(&m, &x, &t, 0..1, &ident).unwrap(), 0.0);

    let informative = permutation_importance(&m, &x, &t, 0..1, 10, 1).unwrap();
    assert!(informative.mean > 100.0);
    assert_eq!(informative.reps.len(), 10);

    let ignored = RidgeModel {
        coef: vec![m.coef[0], 0.0],
        ..m.clone()
    };
    let none = permutation_importance(&ignored, &x, &t, 1..2, 10, 1).unwrap();
    assert!(none.mean.abs() < 0.5);

    // a noise block the model does use still averages out near zero
    let noisy = permutation_importance(&m, &x, &t, 1..2, 10, 2).unwrap();
    assert!(noisy.mean.abs() < 3.0 * noisy.std_err.max(1e-9) || noisy.mean.abs() < 0.5);
}

#[test]
fn feature_blocks() {
    let x = DMatrix::from_fn(3, 6, |r, c| (r * 6 + c) as f64);
    let mut targets = BTreeMap::new();
    targets.insert("a".to_string(), vec![1.0, 2.0, 3.0]);
    let f = FeatureMatrix::new(vec!["s0".into(), "s1".into(), "s2".into()], x, 2, targets).unwrap();
    assert_eq!(f.blocks(), 3);
    assert_eq!(f.block_cols(1), 2..4);
    let g = f.with_noise_block(1);
    assert_eq!(g.blocks(), 4);
    assert_eq!(g.x.columns(0, 6), f.x.columns(0, 6));
    assert_eq!(g, f.with_noise_block(1));
    assert!(f.target("b").is_err());
    assert!(FeatureMatrix::new(vec![], DMatrix::zeros(0, 5), 2, BTreeMap::new()).is_err());
}

#[test]
fn csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scores.csv");
    write_scores_csv(
        &p,
        &[ScoreRow {
            regressor: "ridge".into(),
            target: "strength".into(),
            r2: 0.5,
            mae: 1.25,
        }],
    )
    .unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "regressor,target,r2,mae\nridge,strength,0.5,1.25\n");
    let q = dir.path().join("importance.csv");
    write_importance_csv(
        &q,
        &[ImportanceRow {
            regressor: "ridge".into(),
            partition: "AA_0".into(),
            score: 12.0,
            std_err: 1.0,
        }],
    )
    .unwrap();
    assert!(std::fs::read_to_string(&q).unwrap().starts_with("regressor,partition,score,std_err\n"));
}
