use lxl_core::dataset::{generate_synthetic, split, NUM_CLASSES};

fn class_means(per_class: usize, seed: u64) -> Vec<Vec<f64>> {
    let ds = generate_synthetic(per_class, 28, seed).unwrap();
    let len = 28 * 28 * 3;
    let mut sums = vec![vec![0.0f64; len]; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for it in ds.items() {
        counts[it.label] += 1;
        for (s, &p) in sums[it.label].iter_mut().zip(it.image.data()) {
            *s += p as f64;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    sums
}

// L2 between mean images, normalised per pixel so it lives on the [0,1] pixel scale.
fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn class_means_separate_with_mel_bkl_closest() {
    let means = class_means(60, 11);
    let mut pairs = Vec::new();
    for i in 0..NUM_CLASSES {
        for j in i + 1..NUM_CLASSES {
            pairs.push(((i, j), rms(&means[i], &means[j])));
        }
    }
    for &((i, j), d) in &pairs {
        eprintln!("{i}-{j}: {d:.4}");
    }
    let min = pairs.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(min.0, (0, 4), "closest pair {:?}", min);
    for &((i, j), d) in &pairs {
        if (i, j) != (0, 4) {
            assert!(d > 0.05, "classes {i},{j} mean distance {d}");
        }
    }
}

#[test]
fn split_eighty_items() {
    let ds = generate_synthetic(10, 28, 7).unwrap();
    assert_eq!(ds.len(), 80);
    let (tr, va) = split(&ds, 0.8, 3).unwrap();
    assert_eq!((tr.len(), va.len()), (64, 16));
    assert!(tr.class_counts().iter().all(|&c| c == 8));
    assert!(va.class_counts().iter().all(|&c| c == 2));
}
