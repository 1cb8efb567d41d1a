use std::collections::BTreeSet;

use proptest::prelude::*;

use super::render::{encode, slice_rgb};
use super::*;

fn field(labels: usize, extent: [usize; 3], f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
    let sp = extent.iter().product::<usize>();
    Tensor::from_fn([labels, extent[0], extent[1], extent[2]], |k| f(k / sp, k % sp))
}

fn one_hot(labels: &[usize], l: usize) -> Tensor<f64> {
    field(l, [1, 1, labels.len()], |i, j| (labels[j] == i) as u8 as f64)
}

#[test]
fn argmax_cases() {
    let w = Mask::new([1, 1, 4], vec![1, 1, 1, 0]).unwrap();
    let y = one_hot(&[2, 0, 1, 1], 3);
    assert_eq!(argmax_labels(&y, &w).unwrap().data(), [2, 0, 1, -1]);
    let uniform = field(3, [1, 1, 4], |_, _| 1.0 / 3.0);
    assert_eq!(argmax_labels(&uniform, &w).unwrap().data(), [0, 0, 0, -1]);
}

proptest! {
    #[test]
    fn argmax_matches_scan(vals in proptest::collection::vec(0u8..4, 3 * 12)) {
        let w = Mask::from_fn([2, 2, 3], |j| j % 5 != 0);
        let y = Tensor::new([3, 2, 2, 3], vals.iter().map(|&v| v as f64).collect()).unwrap();
        let got = argmax_labels(&y, &w).unwrap();
        for j in 0..12 {
            let expect = if !w.get(j) {
                -1
            } else {
                let col: Vec<u8> = (0..3).map(|i| vals[i * 12 + j]).collect();
                let m = *col.iter().max().unwrap();
                col.iter().position(|&v| v == m).unwrap() as i32
            };
            prop_assert_eq!(got.data()[j], expect);
        }
    }

    #[test]
    fn regions_used_ignores_label_names(labels in proptest::collection::vec(0i32..5, 40), perm in Just([3, 0, 4, 1, 2])) {
        let w = Mask::full([2, 4, 5]);
        let a = LabelVolume::new([2, 4, 5], labels.clone()).unwrap();
        let b = LabelVolume::new([2, 4, 5], labels.iter().map(|&l| perm[l as usize]).collect()).unwrap();
        prop_assert_eq!(regions_used(&a, &w, 0.0), regions_used(&b, &w, 0.0));
        let distinct: BTreeSet<_> = labels.iter().collect();
        prop_assert_eq!(regions_used(&a, &w, 0.0), distinct.len());
    }

    #[test]
    fn overlap_cells_sum_to_100(parts in proptest::collection::vec(0i32..3, 30), tissue in proptest::collection::vec(0i32..4, 30)) {
        let w = Mask::from_fn([2, 3, 5], |j| j % 7 != 3);
        let bg = |v: Vec<i32>| LabelVolume::new([2, 3, 5], v.iter().enumerate().map(|(j, &l)| if w.get(j) { l } else { -1 }).collect()).unwrap();
        let cells = overlap_cells(&bg(parts), &bg(tissue), &w, 3, 4).unwrap();
        let total: f64 = cells.iter().flatten().sum();
        prop_assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_mass_sums_to_one(vals in proptest::collection::vec(0.0f64..=1.0, 2 * 8)) {
        let y = Tensor::new([2, 2, 2, 2], vals).unwrap();
        let h = prob_histogram(&[(&y, &Mask::full([2, 2, 2]))], HIST_BINS).unwrap();
        prop_assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overlay_matches_lookup(labels in proptest::collection::vec(-1i32..4, 27), scores in proptest::collection::vec(-5.0f64..5.0, 4)) {
        let l = LabelVolume::new([3, 3, 3], labels.clone()).unwrap();
        let o = importance_overlay(&l, &scores).unwrap();
        for (j, &lab) in labels.iter().enumerate() {
            let expect = if lab < 0 { 0.0 } else { scores[lab as usize] as f32 };
            prop_assert_eq!(o.data()[j], expect);
        }
    }
}

#[test]
fn overlap_hand_cases() {
    let w = Mask::full([1, 1, 4]);
    let same = LabelVolume::new([1, 1, 4], vec![0; 4]).unwrap();
    let t = overlap_table(std::slice::from_ref(&same), std::slice::from_ref(&same), std::slice::from_ref(&w), 1, 1).unwrap();
    assert_eq!((t.mean[0][0], t.std[0][0]), (100.0, 0.0));

    let halves = LabelVolume::new([1, 1, 4], vec![0, 0, 1, 1]).unwrap();
    let t = overlap_table(&[halves.clone(), halves.clone()], &[halves.clone(), halves.clone()], &[w.clone(), w.clone()], 2, 2)
        .unwrap();
    assert_eq!(t.mean, vec![vec![50.0, 0.0], vec![0.0, 50.0]]);
    assert!(t.std.iter().flatten().all(|&s| s == 0.0));
    assert_eq!(t.subjects, 2);

    // population std: cells 100 and 0 → std 50
    let other = LabelVolume::new([1, 1, 4], vec![1; 4]).unwrap();
    let t = overlap_table(&[same.clone(), other], &[same.clone(), same], &[w.clone(), w], 2, 1).unwrap();
    assert_eq!((t.mean[0][0], t.std[0][0]), (50.0, 50.0));
}

#[test]
fn overlap_skips_empty_masks() {
    let empty = Mask::from_fn([1, 1, 2], |_| false);
    let full = Mask::full([1, 1, 2]);
    let l = LabelVolume::new([1, 1, 2], vec![0, 0]).unwrap();
    let bg = LabelVolume::new([1, 1, 2], vec![-1, -1]).unwrap();
    let t = overlap_table(&[bg.clone(), l.clone()], &[bg, l], &[empty, full], 1, 1).unwrap();
    assert_eq!(t.subjects, 1);
    assert_eq!(t.mean[0][0], 100.0);
}

#[test]
fn rmse_cases() {
    let w = Mask::full([1, 1, 2]);
    let x = Volume::new([1, 1, 2], vec![1.0, 3.0]).unwrap();
    let xh = Volume::new([1, 1, 2], vec![2.0, 2.0]).unwrap();
    assert_eq!(recon_rmse(&xh, &x, &w).unwrap(), 1.0);
    assert_eq!(recon_rmse(&x, &x, &w).unwrap(), 0.0);
    let shifted = Volume::new([1, 1, 2], vec![1.25, 3.25]).unwrap();
    assert_eq!(recon_rmse(&shifted, &x, &w).unwrap(), 0.25);
    assert!(recon_rmse(&x, &x, &Mask::from_fn([1, 1, 2], |_| false)).is_err());
}

#[test]
fn regions_used_cases() {
    let w = Mask::full([10, 10, 10]);
    assert_eq!(regions_used(&LabelVolume::new([10, 10, 10], vec![3; 1000]).unwrap(), &w, MIN_REGION_FRACTION), 1);
    let all16 = LabelVolume::new([2, 4, 2], (0..16).collect()).unwrap();
    assert_eq!(regions_used(&all16, &Mask::full([2, 4, 2]), MIN_REGION_FRACTION), 16);
    // one voxel of 1000 is exactly min_frac and does not count
    let mut v = vec![0; 1000];
    v[0] = 1;
    assert_eq!(regions_used(&LabelVolume::new([10, 10, 10], v).unwrap(), &w, 0.001), 1);
}

#[test]
fn neighbor_agreement_cases() {
    let w = Mask::full([1, 2, 2]);
    let uni = LabelVolume::new([1, 2, 2], vec![0; 4]).unwrap();
    assert_eq!(neighbor_agreement(&uni, &w), 1.0);
    let checker = LabelVolume::new([1, 2, 2], vec![0, 1, 1, 0]).unwrap();
    assert_eq!(neighbor_agreement(&checker, &w), 0.0);
    let stripes = LabelVolume::new([1, 2, 2], vec![0, 0, 1, 1]).unwrap();
    assert_eq!(neighbor_agreement(&stripes, &w), 0.5);
}

#[test]
fn histogram_cases() {
    let w = Mask::full([1, 1, 3]);
    let y = one_hot(&[0, 2, 1], 4);
    let h = prob_histogram(&[(&y, &w)], HIST_BINS).unwrap();
    let m = h.mass();
    assert_eq!(m[0], 0.75);
    assert_eq!(m[HIST_BINS - 1], 0.25);
    assert!((m[0] / m[HIST_BINS - 1] - 3.0).abs() < 1e-12);

    let u = field(4, [1, 1, 3], |_, _| 0.25);
    let h = prob_histogram(&[(&u, &w)], HIST_BINS).unwrap();
    let nz: Vec<usize> = (0..HIST_BINS).filter(|&b| h.counts[b] > 0).collect();
    assert_eq!(nz, [12]);
    let (lo, hi) = h.edges()[12];
    assert!(lo <= 0.25 && 0.25 < hi);

    let saturated = saturation(&y, &w, 0.05).unwrap();
    assert_eq!(saturated, 1.0);
    assert_eq!(saturation(&u, &w, 0.05).unwrap(), 0.0);
}

#[test]
fn palette_is_distinct() {
    let p = Palette::default();
    let set: BTreeSet<_> = p.colors().iter().collect();
    assert_eq!(set.len(), 16);
    assert_eq!(p.color(17), p.color(1));
}

#[test]
fn label_slices_use_palette_colors() {
    let l = LabelVolume::new([2, 2, 3], vec![0, 1, 2, -1, 3, 4, 5, 6, 7, 8, 9, 10]).unwrap();
    let p = Palette::default();
    let (w, h, rgb) = slice_rgb(&SliceSource::Labels(&l, &p), Axis::Axial, 0).unwrap();
    assert_eq!((w, h), (3, 2));
    assert_eq!(&rgb[0..3], &p.color(0));
    assert_eq!(&rgb[9..12], &[0, 0, 0]);
    for px in rgb.chunks(3) {
        assert!(px == [0, 0, 0] || p.colors().iter().any(|c| c == px));
    }
    let (w, h, _) = slice_rgb(&SliceSource::Labels(&l, &p), Axis::Sagittal, 2).unwrap();
    assert_eq!((w, h), (2, 2));
    assert!(slice_rgb(&SliceSource::Labels(&l, &p), Axis::Coronal, 2).is_err());
}

#[test]
fn constant_overlay_is_one_color() {
    let m = Mask::from_fn([1, 3, 3], |j| j != 4);
    let v = Volume::new([1, 3, 3], vec![0.7; 9]).unwrap();
    let (_, _, rgb) = slice_rgb(&SliceSource::Overlay(&v, &m), Axis::Axial, 0).unwrap();
    let colors: BTreeSet<_> = rgb.chunks(3).enumerate().filter(|(j, _)| *j != 4).map(|(_, c)| c.to_vec()).collect();
    assert_eq!(colors.len(), 1);
    assert_eq!(&rgb[12..15], &[0, 0, 0]);
}

#[test]
fn renders_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::new([2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap();
    for name in ["a.png", "b.png", "a.ppm", "b.ppm"] {
        render_slice(&SliceSource::Intensity(&v), Axis::Coronal, 1, &dir.path().join(name)).unwrap();
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.png"), read("b.png"));
    assert_eq!(read("a.ppm"), read("b.ppm"));
    assert!(read("a.ppm").starts_with(b"P6\n4 2\n255\n"));
    assert!(read("a.png").starts_with(&[0x89, b'P', b'N', b'G']));
    assert!(render_slice(&SliceSource::Intensity(&v), Axis::Axial, 0, &dir.path().join("x.bmp")).is_err());
    let ppm = encode(1, 1, &[1, 2, 3], ImageFormat::Ppm).unwrap();
    assert_eq!(&ppm[ppm.len() - 3..], &[1, 2, 3]);
}

#[test]
fn csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let t = OverlapTable {
        mean: vec![vec![60.0, 40.0]],
        std: vec![vec![1.5, 0.0]],
        subjects: 3,
    };
    write_overlap_csv(&dir.path().join("o.csv"), &t).unwrap();
    let s = std::fs::read_to_string(dir.path().join("o.csv")).unwrap();
    let mut lines = s.lines();
    assert_eq!(lines.next().unwrap(), "partition,TT_0,TT_1,TT_0_mean,TT_0_pop_std,TT_1_mean,TT_1_pop_std");
    assert_eq!(lines.next().unwrap(), "AA_0,60.00 (1.50),40.00 (0.00),60,1.5,40,0");

    let mut h = ProbHistogram::new(2);
    h.counts = vec![1, 3];
    write_hist_csv(&dir.path().join("h.csv"), &h).unwrap();
    assert_eq!(
        std::fs::read_to_string(dir.path().join("h.csv")).unwrap(),
        "bin_low,bin_high,mass\n0,0.5,0.25\n0.5,1,0.75\n"
    );

    let rows = [AblationRow {
        name: "full".into(),
        rmse: 0.04,
        regions: 8,
        neighbor_agreement: 0.9,
    }];
    write_ablation_csv(&dir.path().join("a.csv"), &rows).unwrap();
    assert!(std::fs::read_to_string(dir.path().join("a.csv")).unwrap().ends_with("full,0.04,8,0.9\n"));
}
