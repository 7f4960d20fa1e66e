mod common;

use common::{toy_image, ToyBlackBox, ToyLatent, TOY_EXTENT};
use lxl_core::explain::*;
use lxl_core::tree::{Cmp, Condition, DecisionTree, Node};
use lxl_core::{Image, LxlError, Stage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_genetic() -> GeneticParams {
    GeneticParams {
        population: 40,
        generations: 6,
        max_generations: 20,
        ..GeneticParams::default()
    }
}

fn toy_neighborhood(z: [f32; 2], seed: u64) -> Neighborhood {
    let b = ToyBlackBox;
    let label = b.label(&toy_image(z)).unwrap();
    neighgen_genetic(&z, label, &b, &ToyLatent::default(), &small_genetic(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn disde_applies_threshold_and_still_decodes() {
    let b = ToyBlackBox;
    let high = ToyLatent {
        constant_score: Some(0.9),
        ..ToyLatent::default()
    };
    let low = ToyLatent {
        constant_score: Some(0.1),
        ..ToyLatent::default()
    };
    let h = [1.0f32, -1.0];
    let ok = disde(&high, &h, &b, 0.35).unwrap();
    assert!(ok.valid);
    assert_eq!(ok.label, 0);
    let bad = disde(&low, &h, &b, 0.35).unwrap();
    assert!(!bad.valid);
    assert_eq!(bad.decoded, ok.decoded);
    assert_eq!(bad.decoded.extent(), (TOY_EXTENT, TOY_EXTENT));
}

#[test]
fn neighborhood_returns_requested_valid_candidates() {
    let h = toy_neighborhood([0.3, 0.2], 1);
    let p = small_genetic();
    assert_eq!(h.candidates.len(), 2 * p.population);
    assert!(h.candidates.iter().all(|c| c.discriminator >= p.tau));
    assert!(h.candidates.iter().enumerate().all(|(i, c)| c.id == i));
    assert!(h.different_label().count() > 0);
    assert!(h.warnings.is_empty(), "{:?}", h.warnings);
}

#[test]
fn best_fitness_never_decreases() {
    for seed in 0..10 {
        let h = toy_neighborhood([0.5 - seed as f32 * 0.1, 0.0], seed);
        for log in [&h.same_log, &h.different_log] {
            assert!(log.len() >= small_genetic().generations);
            assert!(log.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {log:?}");
        }
    }
}

#[test]
fn no_valid_latent_is_infeasible() {
    let aae = ToyLatent {
        constant_score: Some(0.0),
        ..ToyLatent::default()
    };
    let err = neighgen_genetic(&[0.0, 0.0], 0, &ToyBlackBox, &aae, &small_genetic(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(err.is_infeasible());
    assert_eq!(err.stage(), Some(Stage::Neighborhood));
}

#[test]
fn genetic_beats_random_search_with_same_budget() {
    let z = [0.4f32, -0.3];
    let h = toy_neighborhood(z, 3);
    let best_ga = h.same_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let budget = small_genetic().population;
    let best_rs = random_search_best(&z, 0, &ToyBlackBox, &ToyLatent::default(), budget, 2.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!(best_ga >= best_rs, "{best_ga} < {best_rs}");
}

#[test]
fn fitness_terms() {
    assert_eq!(fitness(SubPopulation::Same, true, 0.0, 2.0, true), 1.0);
    assert_eq!(fitness(SubPopulation::Same, true, 1.0, 2.0, false), 1.5);
    assert_eq!(fitness(SubPopulation::Different, true, 1.0, 2.0, false), 0.5);
    assert_eq!(fitness(SubPopulation::Different, false, 2.0, 2.0, false), 1.0);
}

fn candidate(id: usize, z: Vec<f32>, label: usize, confidence: f32) -> LatentCandidate {
    LatentCandidate {
        id,
        z,
        decoded: Image::filled(2, 2, 0.0),
        label,
        confidence,
        discriminator: 1.0,
        fitness: 0.0,
        origin: SubPopulation::Different,
    }
}

fn hood(candidates: Vec<LatentCandidate>) -> Neighborhood {
    Neighborhood {
        anchor: vec![0.0, 0.0],
        anchor_label: 0,
        candidates,
        same_log: vec![],
        different_log: vec![],
        warnings: vec![],
    }
}

#[test]
fn single_label_neighborhood_gives_one_leaf() {
    let h = hood((0..20).map(|i| candidate(i, vec![i as f32, 0.0], 3, 0.9)).collect());
    let s = fit_surrogate(&h).unwrap();
    assert_eq!(s.tree.nodes().len(), 1);
    assert_eq!(s.fidelity, 1.0);
    assert!(s.single_label);
    let (r, phi) = extract_rules(&s.tree, &[0.0, 0.0]).unwrap();
    assert!(r.premise.is_empty());
    assert_eq!(r.consequence, 3);
    assert!(phi.is_empty());
}

#[test]
fn separable_toy_neighborhood_is_fitted_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cands = (0..100)
        .map(|i| {
            // Axis-aligned boundary at z0 = 0.2 with a margin on both sides.
            let side = i % 2;
            let z0 = if side == 1 { rng.gen_range(0.3..3.0f32) } else { rng.gen_range(-3.0..0.1f32) };
            let z = vec![z0, rng.gen_range(-3.0..3.0f32)];
            let label = side;
            candidate(i, z, label, 0.9)
        })
        .collect();
    let s = fit_surrogate(&hood(cands)).unwrap();
    assert_eq!(s.fidelity, 1.0);
    assert!(!s.single_label);
    for p in s.tree.paths() {
        assert!(p.conditions.len() <= 8 && p.support >= 5);
    }
}

#[test]
fn fitted_tree_paths_are_consistent_rules() {
    let h = toy_neighborhood([0.1, -0.2], 9);
    let s = fit_surrogate(&h).unwrap();
    assert!(s.fidelity > 0.0 && s.fidelity <= 1.0);
    for p in s.tree.paths() {
        let r = Rule {
            premise: p.conditions,
            consequence: p.label,
            support: p.support,
        };
        assert!(r.is_consistent());
        assert!(r.premise.iter().all(|c| c.feature < 2));
    }
}

fn random_tree(rng: &mut ChaCha8Rng, features: usize, max_depth: usize) -> DecisionTree {
    fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>, features: usize, depth: usize) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf {
            label: rng.gen_range(0..4),
            support: rng.gen_range(1..50),
        });
        if depth > 0 && rng.gen_bool(0.75) {
            let feature = rng.gen_range(0..features);
            let threshold = rng.gen_range(-2.0..2.0);
            let left = grow(rng, nodes, features, depth - 1);
            let right = grow(rng, nodes, features, depth - 1);
            nodes[id] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        id
    }
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, features, max_depth);
    DecisionTree::from_nodes(nodes, features).unwrap()
}

/// Every leaf's (conditions, label, support), enumerated independently, left branch first.
fn enumerate_paths(nodes: &[Node], at: usize, prefix: Vec<Condition>, out: &mut Vec<(Vec<Condition>, usize, usize)>) {
    match nodes[at] {
        Node::Leaf { label, support } => out.push((prefix, label, support)),
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let mut l = prefix.clone();
            l.push(Condition {
                feature,
                op: Cmp::Le,
                threshold,
            });
            enumerate_paths(nodes, left, l, out);
            let mut r = prefix;
            r.push(Condition {
                feature,
                op: Cmp::Gt,
                threshold,
            });
            enumerate_paths(nodes, right, r, out);
        }
    }
}

#[test]
fn rule_extraction_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let tree = random_tree(&mut rng, 5, 4);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.5..2.5)).collect();
        let mut paths = Vec::new();
        enumerate_paths(tree.nodes(), 0, Vec::new(), &mut paths);
        let holds = |c: &Condition| match c.op {
            Cmp::Le => z[c.feature] <= c.threshold,
            Cmp::Gt => z[c.feature] > c.threshold,
        };
        let own: Vec<_> = paths.iter().filter(|p| p.0.iter().all(holds)).collect();
        assert_eq!(own.len(), 1, "case {case}: z must satisfy exactly one path");
        let (r_conds, r_label, _) = own[0];
        let mut expected: Vec<(usize, usize, &Vec<Condition>, usize)> = paths
            .iter()
            .filter(|p| p.1 != *r_label)
            .map(|p| (p.0.iter().filter(|c| !holds(c)).count(), p.2, &p.0, p.1))
            .collect();
        expected.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));

        let (r, phi) = extract_rules(&tree, &z).unwrap();
        assert_eq!(&r.premise, r_conds, "case {case}");
        assert_eq!(r.consequence, *r_label, "case {case}");
        assert!(r.holds(&z) && r.is_consistent());
        assert_eq!(phi.len(), expected.len(), "case {case}");
        for (got, want) in phi.iter().zip(&expected) {
            assert_eq!(&got.premise, want.2, "case {case}");
            assert_eq!(got.consequence, want.3);
            assert_eq!(got.violations(&z), want.0);
        }
    }
}

#[test]
fn exemplars_satisfy_rule_and_label() {
    let z = [0.8f32, 0.1];
    let h = toy_neighborhood(z, 4);
    let s = fit_surrogate(&h).unwrap();
    let zf: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
    let (r, _) = extract_rules(&s.tree, &zf).unwrap();
    let ex = generate_exemplars(&r, &z, 0, &ToyBlackBox, &ToyLatent::default(), &ExemplarParams::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(ex.images.len(), 4);
    assert!(ex.labels.iter().all(|&l| l == 0));
    for (h, img) in ex.latents.iter().zip(&ex.images) {
        let hf: Vec<f64> = h.iter().map(|&v| f64::from(v)).collect();
        assert!(r.holds(&hf));
        assert_eq!(ToyBlackBox.label(img).unwrap(), 0);
    }
}

#[test]
fn empty_premise_samples_prior_and_filters_labels() {
    let r = Rule {
        premise: vec![],
        consequence: 1,
        support: 0,
    };
    let ex = generate_exemplars(&r, &[5.0, 5.0], 1, &ToyBlackBox, &ToyLatent::default(), &ExemplarParams::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(ex.images.len(), 4);
    // Prior draws, not jitter around the far-away anchor.
    assert!(ex.latents.iter().all(|h| h[0] < 0.0 && h[0] > -5.0));
}

#[test]
fn exhausted_budget_returns_partial_list_with_warning() {
    let r = Rule {
        premise: vec![Condition {
            feature: 0,
            op: Cmp::Gt,
            threshold: 100.0,
        }],
        consequence: 0,
        support: 0,
    };
    let params = ExemplarParams {
        budget: 256,
        ..ExemplarParams::default()
    };
    let ex = generate_exemplars(&r, &[0.0, 0.0], 0, &ToyBlackBox, &ToyLatent::default(), &params, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(ex.images.is_empty());
    assert_eq!(ex.warnings.len(), 1);
}

#[test]
fn counterexemplar_selection() {
    let one = hood(vec![candidate(0, vec![0.1, 0.0], 0, 0.9), candidate(1, vec![3.0, 0.0], 2, 0.5)]);
    assert_eq!(select_counterexemplar(&[0.0, 0.0], &one, 0.5).unwrap().id, 1);

    let two = hood(vec![candidate(0, vec![2.0, 0.0], 1, 0.6), candidate(1, vec![1.0, 0.0], 1, 0.6)]);
    assert_eq!(select_counterexemplar(&[0.0, 0.0], &two, 0.5).unwrap().id, 1);

    let tie = hood(vec![candidate(0, vec![0.0, 1.0], 1, 0.6), candidate(1, vec![1.0, 0.0], 1, 0.6)]);
    assert_eq!(select_counterexemplar(&[0.0, 0.0], &tie, 0.5).unwrap().id, 0);

    let none = hood(vec![candidate(0, vec![1.0, 0.0], 0, 0.6)]);
    let err = select_counterexemplar(&[0.0, 0.0], &none, 0.5).unwrap_err();
    assert!(err.is_infeasible());
    assert_eq!(err.stage(), Some(Stage::Counterexemplar));
}

#[test]
fn counterexemplar_matches_brute_force_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let z: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cands: Vec<LatentCandidate> = (0..30)
            .map(|i| {
                let h = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                candidate(i, h, rng.gen_range(0..3), rng.gen_range(0.3..1.0))
            })
            .collect();
        let mut h = hood(cands);
        h.anchor = z.clone();
        let score = |c: &LatentCandidate| {
            let d: f64 = c.z.iter().zip(&z).map(|(a, b)| f64::from(a - b).powi(2)).sum::<f64>().sqrt();
            d - 0.5 * f64::from(c.confidence)
        };
        let mut ranked: Vec<&LatentCandidate> = h.candidates.iter().filter(|c| c.label != 0).collect();
        ranked.sort_by(|a, b| score(a).total_cmp(&score(b)).then(a.id.cmp(&b.id)));
        assert_eq!(select_counterexemplar(&z, &h, 0.5).unwrap().id, ranked[0].id);
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::new(h, w, (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn saliency_of_identical_exemplars_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_image(&mut rng, 5, 6);
    let s = saliency_map(&x, &[x.clone(), x.clone()]).unwrap();
    assert_eq!((s.height, s.width), (5, 6));
    assert!(s.values.iter().all(|&v| v == 0.0));
}

#[test]
fn saliency_of_one_changed_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_image(&mut rng, 5, 5);
    let mut e = x.clone();
    e.set(2, 3, 1, if x.get(2, 3, 1) > 0.5 { 0.0 } else { 1.0 });
    let s = saliency_map(&x, &[e]).unwrap();
    for y in 0..5 {
        for c in 0..5 {
            let v = s.get(y, c);
            if (y, c) == (2, 3) {
                assert_eq!(v.abs(), 1.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}

#[test]
fn saliency_rejects_extent_mismatch() {
    let x = Image::filled(4, 4, 0.5);
    assert!(matches!(saliency_map(&x, &[Image::filled(4, 5, 0.5)]), Err(LxlError::Shape { .. })));
    assert!(saliency_map(&x, &[]).is_err());
}

fn sort_median(v: &[f32]) -> f32 {
    let mut s = v.to_vec();
    s.sort_by(f32::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

#[test]
fn saliency_matches_sort_median_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..=6 {
        let x = random_image(&mut rng, 3, 4);
        let ex: Vec<Image> = (0..n).map(|_| random_image(&mut rng, 3, 4)).collect();
        let s = saliency_map(&x, &ex).unwrap();
        let mut raw = Vec::new();
        for p in 0..12 {
            let mut acc = 0.0;
            for c in 0..3 {
                let diffs: Vec<f32> = ex.iter().map(|e| e.data()[p * 3 + c] - x.data()[p * 3 + c]).collect();
                acc += sort_median(&diffs);
            }
            raw.push(acc / 3.0);
        }
        let peak = raw.iter().fold(0f32, |m, v| m.max(v.abs()));
        for (got, want) in s.values.iter().zip(&raw) {
            assert!((got - want / peak).abs() < 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn median_matches_sorting(v in proptest::collection::vec(-10.0f32..10.0, 1..40)) {
        let mut w = v.clone();
        prop_assert_eq!(median(&mut w), sort_median(&v));
    }

    #[test]
    fn saliency_ignores_exemplar_order(seed in 0u64..1000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_image(&mut rng, 3, 3);
        let mut ex: Vec<Image> = (0..n).map(|_| random_image(&mut rng, 3, 3)).collect();
        let a = saliency_map(&x, &ex).unwrap();
        ex.reverse();
        ex.rotate_left(n / 2);
        prop_assert_eq!(a, saliency_map(&x, &ex).unwrap());
    }

    #[test]
    fn anchor_satisfies_its_rule(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, 3, 4);
        let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (r, phi) = extract_rules(&tree, &z).unwrap();
        prop_assert!(r.holds(&z));
        prop_assert!(r.is_consistent());
        prop_assert!(phi.iter().all(|p| p.consequence != r.consequence));
        prop_assert!(phi.windows(2).all(|w| w[0].violations(&z) <= w[1].violations(&z)));
    }
}

fn toy_params() -> ExplainParams {
    ExplainParams {
        genetic: small_genetic(),
        ..ExplainParams::default()
    }
}

#[test]
fn explanation_contract_on_toy_models() {
    for (i, z) in [[0.6f32, 0.2], [-0.7, 0.4], [0.2, -1.0]].into_iter().enumerate() {
        let x = toy_image(z);
        let e = explain(&x, &ToyBlackBox, &ToyLatent::default(), &toy_params(), i as u64).unwrap();
        assert_eq!(e.exemplars.len(), 4);
        assert!(e.exemplars.iter().all(|img| ToyBlackBox.label(img).unwrap() == e.anchor_label));
        assert_ne!(ToyBlackBox.label(&e.counter_exemplar.image).unwrap(), e.anchor_label);
        assert!(!e.rule.premise.is_empty());
        let zf: Vec<f64> = e.latent.iter().map(|&v| f64::from(v)).collect();
        assert!(e.rule.holds(&zf));
        assert_eq!((e.saliency.height, e.saliency.width), x.extent());
        assert!(e.neighbors.len() <= 8 && !e.neighbors.is_empty());
        assert!(e.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert!(e.neighbors.iter().all(|n| n.label != e.anchor_label));
        assert!(e.fidelity >= 0.95, "fidelity {}", e.fidelity);
    }
}

#[test]
fn explanation_json_is_deterministic_per_seed() {
    let x = toy_image([0.5, 0.5]);
    let a = explain(&x, &ToyBlackBox, &ToyLatent::default(), &toy_params(), 11).unwrap().to_json().unwrap();
    let b = explain(&x, &ToyBlackBox, &ToyLatent::default(), &toy_params(), 11).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let doc: ExplanationDoc = serde_json::from_str(&a).unwrap();
    assert_eq!(doc.schema, EXPLANATION_SCHEMA);
    assert_eq!(doc.exemplars.len(), 4);
    let c = explain(&x, &ToyBlackBox, &ToyLatent::default(), &toy_params(), 12).unwrap().to_json().unwrap();
    assert_ne!(a, c);
}

#[test]
fn usefulness_with_reference_double_is_one_nearest_neighbour() {
    use lxl_core::dataset::LabeledImage;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let items: Vec<LabeledImage> = (0..12)
        .map(|i| {
            let label = i % 2;
            let base = if label == 0 { 0.2 } else { 0.8 };
            let data = (0..48).map(|_| base + rng.gen_range(-0.05..0.05f32)).collect();
            LabeledImage {
                id: format!("i{i:02}"),
                image: Image::new(4, 4, data).unwrap(),
                label,
            }
        })
        .collect();
    let refs: Vec<&LabeledImage> = items.iter().collect();
    let r = usefulness_with(&refs, 20, 1, |r| Ok(vec![r.image.clone()])).unwrap();
    // Well-separated classes: 1-NN on the references is always right.
    assert_eq!(r.accuracy, 1.0);
    assert!((r.threshold - (0.5 + 2.0 * (0.25f64 / 20.0).sqrt())).abs() < 1e-12);

    let one: Vec<&LabeledImage> = items.iter().filter(|i| i.label == 0).collect();
    assert!(usefulness_with(&one, 20, 1, |r| Ok(vec![r.image.clone()])).is_err());
    assert!(usefulness_with(&[], 20, 1, |r| Ok(vec![r.image.clone()])).is_err());
}

#[test]
fn instance_seed_is_stable() {
    assert_eq!(instance_seed("ISIC_0001"), instance_seed("ISIC_0001"));
    assert_ne!(instance_seed("ISIC_0001"), instance_seed("ISIC_0002"));
}
