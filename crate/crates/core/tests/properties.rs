use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mmlink_core::dataset::{split_by_class, validate_dataset, GroundTruth, Record};
use mmlink_core::linalg::Matrix;
use mmlink_core::linkage::{evaluate, link, EvalMode, LinkMode, LinkOptions, LinkPrediction};
use mmlink_core::metricspace::{clip_loss, pool, supcon_loss_embeddings, ContrastiveConfig};
use mmlink_core::mining::{build_hard_negative_sets, partition_batches, BatchShape, HardNegativeSet};
use mmlink_core::optim::{adamw_step, AdamWState, ModelConfig, ToyModel};
use mmlink_core::strmetrics::{levenshtein, ngram_cosine, ngram_profile, stringmatch_link, StringMetric, Unit};
use mmlink_core::synth::{ocr_noise, visual_proxy, NoiseChannel};
use mmlink_core::vecindex::FlatIndex;

fn small_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop::sample::select(vec!['a', 'b', 'c', '永', '水', '菓', '薬', '😀']), 0..12)
        .prop_map(|v| v.into_iter().collect())
}

fn unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn len(s: &str) -> usize {
    s.chars().count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn levenshtein_is_a_metric(a in small_text(), b in small_text(), c in small_text()) {
        let ab = levenshtein(&a, &b);
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(ab >= len(&a).abs_diff(len(&b)));
        prop_assert!(ab <= len(&a).max(len(&b)));
        prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
    }

    #[test]
    fn ngram_cosine_is_bounded_and_symmetric(a in small_text(), b in small_text(), n in 1usize..4) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        let ab = ngram_cosine(&a, &b, n, Unit::Character, None).unwrap();
        prop_assert_eq!(ab, ngram_cosine(&b, &a, n, Unit::Character, None).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        let equal = ngram_profile(&a, n, Unit::Character, None).unwrap() == ngram_profile(&b, n, Unit::Character, None).unwrap();
        prop_assert_eq!(ab == 1.0, equal);
    }

    #[test]
    fn zero_channel_is_identity(s in small_text(), seed in any::<u64>()) {
        prop_assert_eq!(ocr_noise(&s, &NoiseChannel::default(), seed).unwrap(), s);
    }

    #[test]
    fn pool_endpoints_are_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = unit_rows(&mut rng, 2, 5);
        prop_assert_eq!(pool(m.row(0), m.row(1), 1.0).unwrap(), m.row(0).to_vec());
        prop_assert_eq!(pool(m.row(0), m.row(1), 0.0).unwrap(), m.row(1).to_vec());
    }

    #[test]
    fn split_partitions_exactly(n in 3usize..200, seed in any::<u64>()) {
        let labels: Vec<String> = (0..n).map(|i| format!("c{}", i % (n / 2 + 2))).collect();
        let s = split_by_class(&labels, (0.6, 0.2, 0.2), seed).unwrap();
        let all: BTreeSet<String> = labels.iter().cloned().collect();
        prop_assert!(s.train.is_disjoint(&s.val) && s.train.is_disjoint(&s.test) && s.val.is_disjoint(&s.test));
        let union: BTreeSet<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        prop_assert_eq!(union, all);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn supcon_invariant_to_reordering_and_rotation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, d) = (9, 4);
        let z = unit_rows(&mut rng, b, d);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..3)).collect();
        let cfg = ContrastiveConfig::new(0.1);
        let base = supcon_loss_embeddings(&z, &labels, &cfg).unwrap();

        let mut perm: Vec<usize> = (0..b).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let zp = Matrix::from_rows(&perm.iter().map(|&i| z.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let shuffled = supcon_loss_embeddings(&zp, &lp, &cfg).unwrap();
        prop_assert!((shuffled.value - base.value).abs() <= 1e-12 * base.value.max(1.0));
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((shuffled.per_anchor[j] - base.per_anchor[i]).abs() <= 1e-12);
        }

        // A rotation in the plane of the first two coordinates.
        let t: f64 = rng.gen_range(0.0..6.0);
        let rotated: Vec<Vec<f64>> = (0..b)
            .map(|i| {
                let r = z.row(i);
                let mut v = r.to_vec();
                v[0] = t.cos() * r[0] - t.sin() * r[1];
                v[1] = t.sin() * r[0] + t.cos() * r[1];
                v
            })
            .collect();
        let rot = supcon_loss_embeddings(&Matrix::from_rows(&rotated).unwrap(), &labels, &cfg).unwrap();
        prop_assert!((rot.value - base.value).abs() <= 1e-9);
    }

    #[test]
    fn clip_is_positive_and_permutation_invariant(seed in any::<u64>(), b in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = unit_rows(&mut rng, b, 6);
        let g = unit_rows(&mut rng, b, 6);
        let cfg = ContrastiveConfig::new(0.5);
        let l = clip_loss(&f, &g, &cfg).unwrap();
        prop_assert!(l > 0.0);
        let perm: Vec<usize> = (0..b).rev().collect();
        let pf = Matrix::from_rows(&perm.iter().map(|&i| f.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pg = Matrix::from_rows(&perm.iter().map(|&i| g.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        prop_assert!((clip_loss(&pf, &pg, &cfg).unwrap() - l).abs() <= 1e-12);
    }

    #[test]
    fn search_scores_are_sorted_and_exact(seed in any::<u64>(), k in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = unit_rows(&mut rng, 30, 8);
        let index = FlatIndex::build(rows.iter_rows().enumerate().map(|(i, r)| (i.to_string(), r.to_vec()))).unwrap();
        let q: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let hits = index.search(&q, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(30));
        prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        for h in &hits {
            let direct: f64 = q.iter().zip(rows.row(h.row)).map(|(a, b)| a / qn * b).sum();
            prop_assert!((h.score - direct).abs() <= 1e-6);
        }
        prop_assert_eq!(index.search_batch(&[q.clone()], k).unwrap().remove(0), hits);
    }

    #[test]
    fn plans_keep_structure_for_any_seed(seed in any::<u64>(), n in 6usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per_label: Vec<(String, Vec<f64>)> =
            (0..n).map(|i| (format!("l{i}"), (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())).collect();
        let sets: Vec<HardNegativeSet> = build_hard_negative_sets(&per_label, 3).unwrap();
        let counts: HashMap<String, usize> = per_label.iter().map(|(l, _)| (l.clone(), 2)).collect();
        let shape = BatchShape { batch_size: 12, k: 3, m: 2 };
        let plan = partition_batches(&sets, shape, &counts, seed).unwrap();
        prop_assert_eq!(&plan, &partition_batches(&sets, shape, &counts, seed).unwrap());
        prop_assert_eq!(plan.batches.len(), n / 2);
        for b in &plan.batches {
            prop_assert_eq!(b.slots.len(), 12);
            for (j, &si) in b.sets.iter().enumerate() {
                let members: Vec<&String> = sets[si].members().collect();
                for (mi, label) in members.iter().enumerate() {
                    let start = j * 6 + mi * 2;
                    prop_assert!(b.slots[start..start + 2].iter().all(|s| &&s.label == label));
                }
            }
        }
    }

    #[test]
    fn evaluation_paths_agree(outcomes in proptest::collection::vec((0u8..3, any::<bool>()), 1..40)) {
        let mut truth = GroundTruth::new();
        let mut preds = Vec::new();
        for (i, &(kind, hit)) in outcomes.iter().enumerate() {
            let q = format!("q{i}");
            let targets: Vec<String> = match kind {
                0 => vec![],
                1 => vec![format!("t{i}")],
                _ => vec![format!("t{i}"), format!("u{i}")],
            };
            let predicted = match (hit, targets.last()) {
                (true, Some(t)) => Some(t.clone()),
                (true, None) => None,
                (false, _) => Some("elsewhere".to_string()),
            };
            truth.insert(q.clone(), targets);
            preds.push(LinkPrediction { query_id: q, predicted, score: 0.5 });
        }
        let matched = truth.without_unmatched();
        let kept: Vec<LinkPrediction> = preds.iter().filter(|p| matched.get(&p.query_id).is_some()).cloned().collect();
        let a = evaluate(&preds, &truth, false, EvalMode::Multimodal);
        let b = evaluate(&kept, &matched, true, EvalMode::Multimodal);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.n_correct, b.n_correct);
                prop_assert_eq!(a.accuracy, b.accuracy);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "paths disagree: {:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn validation_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<Record> = (0..12)
            .map(|_| {
                let id = format!("r{}", rng.gen_range(0..8));
                let dim = rng.gen_range(1..4);
                Record::new(id, if rng.gen_bool(0.8) { "x" } else { "" }).with_vec(vec![0.5; dim])
            })
            .collect();
        let once = validate_dataset(&records, 2);
        prop_assert_eq!(&once, &validate_dataset(&records, 2));
        let mut reversed = records.clone();
        reversed.reverse();
        prop_assert_eq!(&once, &validate_dataset(&reversed, 2));
    }
}

fn random_records(rng: &mut ChaCha8Rng, n: usize, prefix: &str) -> Vec<Record> {
    let alphabet: Vec<char> = "日曰目大太犬永水菓薬".chars().collect();
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..5);
            let text: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
            let v: Vec<f32> = (0..6).map(|_| rng.gen_range(-1i8..=1).into()).map(|x: f32| x + 0.01).collect();
            Record::new(format!("{prefix}{i:03}"), text).with_vec(v).with_block(["a", "b", "c"][rng.gen_range(0..3)])
        })
        .collect()
}

#[test]
fn linkage_is_order_independent_and_respects_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = ToyModel::init(&ModelConfig::new(6, 8), 3).unwrap();
    let targets = random_records(&mut rng, 80, "t");
    let queries = random_records(&mut rng, 40, "q");
    let mut reversed = targets.clone();
    reversed.reverse();
    for mode in [LinkMode::Visual, LinkMode::Language, LinkMode::Multimodal] {
        for block in [false, true] {
            let opts = LinkOptions { block, ..LinkOptions::new(mode, 0.5) };
            let a = link(&queries, &targets, &model, &opts).unwrap();
            assert_eq!(a, link(&queries, &reversed, &model, &opts).unwrap());
            if block {
                let key: HashMap<&str, &Option<String>> = targets.iter().map(|t| (t.id.as_str(), &t.block_key)).collect();
                for (p, q) in a.iter().zip(&queries) {
                    if let Some(t) = &p.predicted {
                        assert_eq!(key[t.as_str()], &q.block_key);
                    }
                }
            }
        }
    }
}

#[test]
fn stringmatch_is_order_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let targets = random_records(&mut rng, 60, "t");
    let queries = random_records(&mut rng, 30, "q");
    let mut reversed = targets.clone();
    reversed.reverse();
    for metric in [StringMetric::Levenshtein, StringMetric::NGramCosine { n: 2, unit: Unit::Character }] {
        assert_eq!(
            stringmatch_link(&queries, &targets, metric, None).unwrap(),
            stringmatch_link(&queries, &reversed, metric, None).unwrap()
        );
    }
}

#[test]
fn adamw_without_decay_is_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut p: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut reference = p.clone();
    let (mut m, mut v) = (vec![0.0; 5], vec![0.0; 5]);
    let mut state = AdamWState::new(5);
    for t in 1..=20 {
        let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        adamw_step(&mut p, &g, &mut state, 0.01, 0.0).unwrap();
        for i in 0..5 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            reference[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(state.second_moment.iter().all(|&x| x >= 0.0));
    }
    for (a, b) in p.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn channel_error_rate_is_calibrated() {
    let alphabet: Vec<char> = "日曰目大太犬永水菓薬".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let clean: String = (0..100_000).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
    let mut ch = NoiseChannel { insertion_alphabet: alphabet.clone(), ..NoiseChannel::default() }.with_rates(0.1, 0.03, 0.02);
    for group in ["日曰目", "大太犬"] {
        for a in group.chars() {
            for b in group.chars().filter(|&b| b != a) {
                ch.add_confusable(a, b, 1.0).unwrap();
            }
        }
    }
    let noisy = ocr_noise(&clean, &ch, 7).unwrap();
    let cer = levenshtein(&clean, &noisy) as f64 / 100_000.0;
    let expected = 0.1 + 0.03 + 0.02;
    assert!((cer - expected).abs() / expected < 0.1, "cer {cer}");
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn visual_proxy_geometry() {
    // Disjoint bigram sets: the mean |cosine| over 100 pairs stays small.
    let mut total = 0.0;
    for i in 0..100u32 {
        let a: String = [char::from_u32(0x4e00 + 2 * i).unwrap(), char::from_u32(0x4e01 + 2 * i).unwrap()].iter().collect();
        let b: String = [char::from_u32(0x5000 + 2 * i).unwrap(), char::from_u32(0x5001 + 2 * i).unwrap()].iter().collect();
        total += cosine(&visual_proxy(&a, 256, 0.0, 1, 0).unwrap(), &visual_proxy(&b, 256, 0.0, 1, 0).unwrap()).abs();
    }
    assert!(total / 100.0 < 0.2);

    let clean = visual_proxy("明治製菓", 256, 0.0, 1, 0).unwrap();
    assert!(cosine(&clean, &visual_proxy("明治製菓", 256, 0.1, 1, 5).unwrap()) > 0.9);

    // View-to-view distance never shrinks as augmentation grows.
    let mut last = 0.0;
    for step in 0..10 {
        let s = f64::from(step) * 0.25;
        let mut dist = 0.0;
        for v in 0..20u64 {
            let a = visual_proxy("明治製菓", 256, s, 1, 2 * v).unwrap();
            let b = visual_proxy("明治製菓", 256, s, 1, 2 * v + 1).unwrap();
            dist += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
        assert!(dist >= last);
        last = dist;
    }
}

#[test]
fn placename_scale_dataset_counts() {
    use mmlink_core::synth::{generate_synthetic_dataset, SynthConfig, SynthSeeds};
    let words: Vec<String> = (0..19_793u32)
        .map(|i| [char::from_u32(0x4e00 + i / 150).unwrap(), char::from_u32(0x4e00 + i % 150).unwrap()].iter().collect())
        .collect();
    let cfg = SynthConfig {
        views_per_label: 3,
        visual_dim: 4,
        aug_strength: 0.1,
        channel: NoiseChannel::default().with_rates(0.1, 0.0, 0.0),
        seeds: SynthSeeds { projection: 1, noise: 2 },
    };
    let data = generate_synthetic_dataset(&words, &cfg).unwrap();
    assert_eq!(data.len(), 19_793);
    assert_eq!(data.iter().map(|r| r.views.len()).sum::<usize>(), 59_379);
}
