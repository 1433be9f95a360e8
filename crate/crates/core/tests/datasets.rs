use masksup_core::data::{synth_binary_shapes, synth_multiclass_scenes, DatasetSplit};

fn measured_frequencies(d: &DatasetSplit) -> Vec<f64> {
    let mut counts = vec![0u64; d.num_classes];
    for s in d.all() {
        for &v in s.label.data() {
            counts[usize::from(v)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Mean RGB distance across 4-neighbour pairs whose labels differ.
fn boundary_contrast(d: &DatasetSplit) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in d.all() {
        let (h, w) = (s.label.height(), s.label.width());
        for y in 0..h {
            for x in 0..w {
                for (ny, nx) in [(y + 1, x), (y, x + 1)] {
                    if ny >= h || nx >= w || s.label.get(y, x) == s.label.get(ny, nx) {
                        continue;
                    }
                    let (a, b) = (s.image.pixel(y, x), s.image.pixel(ny, nx));
                    sum += a.iter().zip(b).map(|(p, q)| f64::from(p - q).powi(2)).sum::<f64>().sqrt();
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

#[test]
fn spearman_oracle_sanity() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
}

#[test]
fn reported_frequencies_match_labels() {
    let d = synth_multiclass_scenes(20, 32, 5, 2.0, 3).unwrap();
    for (a, b) in measured_frequencies(&d).iter().zip(&d.class_frequencies) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn imbalanced_frequencies_decay_with_class_index() {
    let d = synth_multiclass_scenes(100, 64, 6, 3.0, 0).unwrap();
    let f = measured_frequencies(&d);
    let index: Vec<f64> = (0..6).map(f64::from).collect();
    let rho = spearman(&f, &index);
    assert!(rho <= -0.9, "spearman {rho}, frequencies {f:?}");
}

#[test]
fn balanced_frequencies_stay_within_ratio() {
    let d = synth_multiclass_scenes(100, 64, 6, 1.0, 0).unwrap();
    let f = measured_frequencies(&d);
    let max = f.iter().cloned().fold(f64::MIN, f64::max);
    let min = f.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min < 3.0, "ratio {} from {f:?}", max / min);
}

#[test]
fn multiclass_labels_in_range_and_layout_renders() {
    let d = synth_multiclass_scenes(30, 32, 6, 3.0, 9).unwrap();
    for s in d.all() {
        assert!(s.label.data().iter().all(|&v| v < 6));
        assert_eq!(s.layout.as_ref().unwrap().render(), s.label);
    }
}

#[test]
fn ambiguity_lowers_boundary_contrast() {
    let sharp = boundary_contrast(&synth_binary_shapes(100, 64, 0.0, 0).unwrap());
    let blurred = boundary_contrast(&synth_binary_shapes(100, 64, 0.8, 0).unwrap());
    assert!(sharp > blurred, "{sharp} vs {blurred}");
}
