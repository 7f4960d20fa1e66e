use std::collections::BTreeMap;

use lxl_core::dataset::{generate_synthetic, Dataset, LabeledImage, CLASS_NAMES};
use lxl_core::image::Image;
use lxl_core::models::{
    balanced_accuracy, diversity_score, minibatch_discrimination, one_vs_rest_bce, per_class_rmse, sample_prior,
    train_classifier, train_pgaae, Aae, AaeConfig, BlackBox, ClassifierConfig, GrowthSchedule, TrainReport,
};
use lxl_core::{LxlError, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_aae_config() -> AaeConfig {
    AaeConfig {
        latent_dim: 32,
        channels: vec![8, 6, 4],
        batch_size: 8,
        ..AaeConfig::default()
    }
}

fn tiny_classifier_config(epochs: usize) -> ClassifierConfig {
    ClassifierConfig {
        epochs,
        width: 4,
        batch_size: 8,
        ..ClassifierConfig::default()
    }
}

fn random_image(rng: &mut ChaCha8Rng, extent: usize) -> Image {
    Image::new(extent, extent, (0..extent * extent * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

// Balanced accuracy

#[test]
fn balanced_accuracy_fixtures() {
    assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);

    // Recalls 0.9, 0.7, 0.8 and 1.0 with ten items per class.
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for (class, hits) in [(0usize, 9), (1, 7), (2, 8), (3, 10)] {
        for i in 0..10 {
            labels.push(class);
            preds.push(if i < hits { class } else { (class + 1) % 4 });
        }
    }
    assert!((balanced_accuracy(&preds, &labels).unwrap() - 0.85).abs() < 1e-12);
}

#[test]
fn balanced_accuracy_errors_and_absent_classes() {
    assert!(matches!(balanced_accuracy(&[], &[]), Err(LxlError::Empty(_))));
    assert!(balanced_accuracy(&[0], &[0, 1]).is_err());
    // Class 5 is predicted but never labelled, so it does not enter the mean.
    assert_eq!(balanced_accuracy(&[5, 1], &[0, 1]).unwrap(), 0.5);
}

proptest! {
    #[test]
    fn balanced_accuracy_matches_oracle(pairs in prop::collection::vec((0usize..8, 0usize..8), 1..60)) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut per: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for (p, l) in &pairs {
            let e = per.entry(*l).or_default();
            e.1 += 1.0;
            if p == l {
                e.0 += 1.0;
            }
        }
        let oracle = per.values().map(|(h, t)| h / t).sum::<f64>() / per.len() as f64;
        let got = balanced_accuracy(&preds, &labels).unwrap();
        prop_assert!((got - oracle).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }
}

// Classifier

#[test]
fn one_vs_rest_bce_matches_direct_formula() {
    let logits = Tensor::new(vec![2, 3], vec![0.5f32, -1.0, 2.0, 0.0, 3.0, -0.5]).unwrap();
    let labels = [2, 1];
    let (loss, grad) = one_vs_rest_bce(&logits, &labels);
    let sig = |l: f64| 1.0 / (1.0 + (-l).exp());
    let mut expected = 0.0;
    for i in 0..2 {
        for j in 0..3 {
            let l = logits.data()[i * 3 + j] as f64;
            let y = if j == labels[i] { 1.0 } else { 0.0 };
            expected -= y * sig(l).ln() + (1.0 - y) * (1.0 - sig(l)).ln();
            let g = (sig(l) - y) / 2.0;
            assert!((grad.data()[i * 3 + j] as f64 - g).abs() < 1e-6);
        }
    }
    assert!((loss - expected / 2.0).abs() < 1e-9);
}

#[test]
fn classify_contract_and_wrong_extent() {
    let b = BlackBox::new(28, tiny_classifier_config(1), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..4 {
        let scores = b.classify(&random_image(&mut rng, 28)).unwrap();
        assert_eq!(scores.len(), 8);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }
    assert!(matches!(b.classify(&Image::filled(14, 14, 0.5)), Err(LxlError::Shape { .. })));
}

#[test]
fn classifier_smoke_run_on_one_image_per_class() {
    let data = generate_synthetic(1, 28, 5).unwrap();
    assert_eq!(data.len(), 8);
    let (_, report) = train_classifier(&data, None, &tiny_classifier_config(1), 0).unwrap();
    assert_eq!(report.epochs.len(), 1);
    report.validate().unwrap();
}

#[test]
fn classifier_rejects_missing_class() {
    let data = generate_synthetic(2, 28, 5).unwrap().filter(|it| it.label != 3);
    let err = train_classifier(&data, None, &tiny_classifier_config(1), 0).unwrap_err();
    assert!(matches!(err, LxlError::Config(_)), "{err}");
}

#[test]
fn classifier_training_is_deterministic() {
    let data = generate_synthetic(2, 28, 6).unwrap();
    let (a, ra) = train_classifier(&data, None, &tiny_classifier_config(2), 11).unwrap();
    let (b, rb) = train_classifier(&data, None, &tiny_classifier_config(2), 11).unwrap();
    assert_eq!(ra, rb);
    for (name, t) in a.params().iter() {
        let u = b.params().get(name).unwrap();
        assert!(t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
    }
}

#[test]
fn classifier_checkpoint_round_trip() {
    let b = BlackBox::new(28, tiny_classifier_config(1), 9).unwrap();
    let mut buf = Vec::new();
    b.save(&mut buf).unwrap();
    let back = BlackBox::load(buf.as_slice()).unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(2), 28);
    assert_eq!(b.classify(&img).unwrap(), back.classify(&img).unwrap());
    assert!(BlackBox::load(&buf[..buf.len() / 2]).is_err());
}

// Minibatch discrimination

fn mbd_oracle(f: &[Vec<f64>], t: &[Vec<f64>], kernels: usize, kd: usize) -> Vec<Vec<f64>> {
    let m: Vec<Vec<f64>> = f
        .iter()
        .map(|row| (0..kernels * kd).map(|c| row.iter().zip(t).map(|(x, tr)| x * tr[c]).sum()).collect())
        .collect();
    (0..f.len())
        .map(|i| {
            let mut out = f[i].clone();
            for b in 0..kernels {
                let mut s = 0.0;
                for j in 0..f.len() {
                    if j != i {
                        let l1: f64 = (0..kd).map(|d| (m[i][b * kd + d] - m[j][b * kd + d]).abs()).sum();
                        s += (-l1).exp();
                    }
                }
                out.push(s);
            }
            out
        })
        .collect()
}

fn to_tensor(rows: &[Vec<f64>]) -> Tensor<f32> {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.iter().flatten().map(|&v| v as f32).collect()).unwrap()
}

#[test]
fn mbd_two_rows_match_hand_formula() {
    let f = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
    let t = vec![vec![1.0, 0.5], vec![-1.0, 0.25]];
    // Projections: row0 -> (1, 0.5), row1 -> (-2, 0.5); one kernel of dim 2.
    let expected = (-(3.0f64 + 0.0)).exp();
    let out = minibatch_discrimination(&to_tensor(&f), &to_tensor(&t), 1, 2).unwrap();
    assert_eq!(out.shape(), &[2, 3]);
    assert!((out.data()[2] as f64 - expected).abs() < 1e-6);
    assert!((out.data()[5] as f64 - expected).abs() < 1e-6);
}

#[test]
fn mbd_identical_rows_get_identical_statistics() {
    let f = vec![vec![0.3, -0.7, 1.1]; 4];
    let t = vec![vec![0.2, 0.4, -0.1, 0.9]; 3];
    let out = minibatch_discrimination(&to_tensor(&f), &to_tensor(&t), 2, 2).unwrap();
    for i in 0..4 {
        assert_eq!(&out.data()[i * 5 + 3..i * 5 + 5], &[3.0, 3.0]);
    }
}

#[test]
fn mbd_rejects_single_row() {
    let f = vec![vec![1.0, 2.0]];
    let t = vec![vec![1.0], vec![1.0]];
    assert!(minibatch_discrimination(&to_tensor(&f), &to_tensor(&t), 1, 1).is_err());
}

proptest! {
    #[test]
    fn mbd_matches_oracle_and_is_permutation_equivariant(
        seed in 0u64..1000,
        n in 2usize..7,
        shift in 0usize..7,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, kernels, kd) = (3, 2, 3);
        let f: Vec<Vec<f64>> = (0..n).map(|_| (0..a).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let t: Vec<Vec<f64>> = (0..a).map(|_| (0..kernels * kd).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let out = minibatch_discrimination(&to_tensor(&f), &to_tensor(&t), kernels, kd).unwrap();
        let oracle = mbd_oracle(&f, &t, kernels, kd);
        let w = a + kernels;
        for i in 0..n {
            for c in 0..w {
                prop_assert!((out.data()[i * w + c] as f64 - oracle[i][c]).abs() < 1e-4);
            }
        }
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let pf: Vec<Vec<f64>> = perm.iter().map(|&i| f[i].clone()).collect();
        let pout = minibatch_discrimination(&to_tensor(&pf), &to_tensor(&t), kernels, kd).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for c in 0..w {
                prop_assert!((pout.data()[r * w + c] - out.data()[i * w + c]).abs() < 1e-5);
            }
        }
    }
}

// Autoencoder

fn untrained_final_stage(seed: u64) -> Aae {
    let mut aae = Aae::new(tiny_aae_config(), GrowthSchedule::desk([1, 1, 1]), seed).unwrap();
    aae.grow(seed + 1).unwrap();
    aae.grow(seed + 2).unwrap();
    aae.set_alpha(1.0);
    aae
}

#[test]
fn encode_decode_contract() {
    let aae = untrained_final_stage(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = aae.encode(&random_image(&mut rng, 28)).unwrap();
    assert_eq!(z.len(), 32);
    assert!(z.iter().all(|v| v.is_finite()));
    let img = aae.decode(&[0.0; 32]).unwrap();
    assert_eq!(img.extent(), (28, 28));
    assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(matches!(aae.encode(&Image::filled(14, 14, 0.2)), Err(LxlError::Shape { .. })));
    assert!(matches!(aae.decode(&[0.0; 31]), Err(LxlError::Shape { .. })));
}

fn upsample_nearest(img: &Image) -> Image {
    let (h, w) = img.extent();
    let mut data = Vec::with_capacity(4 * h * w * 3);
    for y in 0..2 * h {
        for x in 0..2 * w {
            for c in 0..3 {
                data.push(img.get(y / 2, x / 2, c));
            }
        }
    }
    Image::new(2 * h, 2 * w, data).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn fade_in_is_continuous_at_both_ends() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut aae = Aae::new(tiny_aae_config(), GrowthSchedule::desk([1, 1, 1]), 5).unwrap();
    for stage in 1..3 {
        let zs = sample_prior(3, 32, &mut rng);
        let before: Vec<Image> = zs.iter().map(|z| aae.decode(z).unwrap()).collect();
        let small = random_image(&mut rng, aae.extent() * 2);
        let code_before = aae.encode(&small.downsample2().unwrap()).unwrap();

        aae.grow(stage as u64 * 17).unwrap();
        assert_eq!(aae.stage(), stage);
        assert_eq!(aae.latent_dim(), 32);
        assert_eq!(aae.alpha(), 0.0);
        for (z, old) in zs.iter().zip(&before) {
            let new = aae.decode(z).unwrap();
            assert!(max_abs_diff(new.data(), upsample_nearest(old).data()) <= 1e-5);
        }
        let code_after = aae.encode(&small).unwrap();
        assert!(max_abs_diff(&code_before, &code_after) <= 1e-5);

        aae.set_alpha(1.0);
        let plain = aae.without_fade().unwrap();
        for z in &zs {
            let a = aae.decode(z).unwrap();
            let b = plain.decode(z).unwrap();
            assert!(max_abs_diff(a.data(), b.data()) <= 1e-5);
        }
        assert!(max_abs_diff(&aae.encode(&small).unwrap(), &plain.encode(&small).unwrap()) <= 1e-5);
    }
    assert!(aae.is_final_stage());
    assert!(matches!(aae.grow(0), Err(LxlError::State(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn decoder_and_discriminator_outputs_stay_in_unit_interval(
        z in prop::collection::vec(-50.0f32..50.0, 32),
        stage in 0usize..3,
    ) {
        let mut aae = Aae::new(tiny_aae_config(), GrowthSchedule::desk([1, 1, 1]), 2).unwrap();
        for s in 0..stage {
            aae.grow(s as u64).unwrap();
        }
        let img = aae.decode(&z).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let d = aae.discriminate(&z).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }
}

#[test]
fn aae_checkpoint_round_trip() {
    let aae = untrained_final_stage(4);
    let mut buf = Vec::new();
    aae.save(&mut buf).unwrap();
    let back = Aae::load(buf.as_slice()).unwrap();
    let z = sample_prior(1, 32, &mut ChaCha8Rng::seed_from_u64(0)).remove(0);
    assert_eq!(aae.decode(&z).unwrap(), back.decode(&z).unwrap());
    assert_eq!(aae.discriminate(&z).unwrap(), back.discriminate(&z).unwrap());
    assert_eq!(back.stage(), 2);
}

#[test]
fn pgaae_runs_all_stages_deterministically() {
    let data = generate_synthetic(2, 28, 13).unwrap();
    let schedule = GrowthSchedule::desk([1, 1, 1]);
    let (a, ra) = train_pgaae(&data, None, &schedule, &tiny_aae_config(), 21).unwrap();
    let (b, rb) = train_pgaae(&data, None, &schedule, &tiny_aae_config(), 21).unwrap();
    assert_eq!(ra.stages.len(), 3);
    assert!(ra.stages.iter().all(|s| s.latent_dim == 32));
    let widths: Vec<usize> = ra.stages.iter().map(|s| s.discriminator_width).collect();
    assert_eq!(widths, [64, 128, 256]);
    assert_eq!(ra.stages.iter().map(|s| s.extent).collect::<Vec<_>>(), [7, 14, 28]);
    assert_eq!(ra, rb);
    assert_eq!(a.stage(), 2);
    let z = sample_prior(1, 32, &mut ChaCha8Rng::seed_from_u64(0)).remove(0);
    let (da, db) = (a.decode(&z).unwrap(), b.decode(&z).unwrap());
    assert!(da.data().iter().zip(db.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let back = TrainReport::read_jsonl(ra.to_jsonl().as_bytes()).unwrap();
    assert_eq!(back, ra);
}

#[test]
fn pgaae_rejects_schedule_dataset_mismatch() {
    let data = generate_synthetic(1, 28, 13).unwrap();
    let schedule = GrowthSchedule::doubling(7, 14, &[1, 1]).unwrap();
    let err = train_pgaae(&data, None, &schedule, &tiny_aae_config(), 0).unwrap_err();
    assert!(matches!(err, LxlError::Config(_)), "{err}");
}

#[test]
fn schedule_validation() {
    assert!(GrowthSchedule::doubling(7, 28, &[1, 1, 1]).is_ok());
    assert!(GrowthSchedule::doubling(7, 30, &[1, 1, 1]).is_err());
    assert!(GrowthSchedule::doubling(7, 28, &[1, 1]).is_err());
    let mut s = GrowthSchedule::desk([1, 1, 1]);
    s.stages[1].extent = 15;
    assert!(s.validate().is_err());
    let mut s = GrowthSchedule::desk([1, 1, 1]);
    s.stages[2].epochs = 0;
    assert!(s.validate().is_err());
}

// Reconstruction and diversity metrics

fn labeled(id: &str, image: Image, label: usize) -> LabeledImage {
    LabeledImage {
        id: id.into(),
        image,
        label,
    }
}

#[test]
fn rmse_of_identity_is_zero_and_black_vs_white_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let items: Vec<LabeledImage> = (0..4).map(|i| labeled(&format!("a{i}"), random_image(&mut rng, 4), i % 2)).collect();
    let refs: Vec<&LabeledImage> = items.iter().collect();
    let r = per_class_rmse(&refs, |imgs| Ok(imgs.iter().map(|i| (*i).clone()).collect())).unwrap();
    assert!(r.rmse.values().all(|&v| v == 0.0));

    let white = [labeled("w", Image::filled(4, 4, 1.0), 0)];
    let refs: Vec<&LabeledImage> = white.iter().collect();
    let r = per_class_rmse(&refs, |imgs| Ok(imgs.iter().map(|_| Image::filled(4, 4, 0.0)).collect())).unwrap();
    assert_eq!(r.rmse[CLASS_NAMES[0]], 1.0);
    assert_eq!(r.rmse.len(), 1);
    assert_eq!(r.warnings.len(), 7);
}

#[test]
fn rmse_matches_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let items: Vec<LabeledImage> = (0..4).map(|i| labeled(&format!("r{i}"), random_image(&mut rng, 5), [0, 0, 3, 3][i])).collect();
    let recs: Vec<Image> = (0..4).map(|_| random_image(&mut rng, 5)).collect();
    let refs: Vec<&LabeledImage> = items.iter().collect();
    let report = per_class_rmse(&refs, |imgs| {
        Ok(imgs.iter().map(|img| recs[items.iter().position(|it| &it.image == *img).unwrap()].clone()).collect())
    })
    .unwrap();
    for (class, members) in [(0usize, [0usize, 1]), (3, [2, 3])] {
        let mut sq = 0.0f64;
        let mut count = 0usize;
        for &m in &members {
            for (a, b) in items[m].image.data().iter().zip(recs[m].data()) {
                sq += ((a - b) as f64).powi(2);
                count += 1;
            }
        }
        let direct = (sq / count as f64).sqrt();
        assert!((report.rmse[CLASS_NAMES[class]] - direct).abs() < 1e-6);
    }
}

#[test]
fn diversity_of_collapsed_decoder_is_zero() {
    let same: Vec<Image> = (0..64).map(|_| Image::filled(4, 4, 0.3)).collect();
    assert_eq!(diversity_score(&same).unwrap(), 0.0);
    let pair = [Image::filled(1, 1, 0.0), Image::filled(1, 1, 1.0)];
    assert!((diversity_score(&pair).unwrap() - 3f64.sqrt()).abs() < 1e-9);
    assert_eq!(diversity_score(&pair[..1]).unwrap(), 0.0);
}

#[test]
fn report_validation_rejects_non_finite() {
    let data: Dataset = generate_synthetic(1, 28, 5).unwrap();
    let (_, mut report) = train_classifier(&data, None, &tiny_classifier_config(1), 0).unwrap();
    report.epochs[0].classifier_loss = Some(f64::NAN);
    assert!(matches!(report.validate(), Err(LxlError::NonFinite(_))));
}

