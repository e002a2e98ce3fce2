use muse_ooc::data::{load_dataset, save_dataset, split_dataset, Dataset, EmbeddingVector, Label, Sample, SplitTag};
use muse_ooc::eval::{evaluate, stratified_folds, stratified_subsample, Task};
use muse_ooc::features::{cosine_slices, featurize_sample, rerank_evidence};
use muse_ooc::tabular::{BinaryClassifier, FitConfig, ModelKind, TabularModel};
use proptest::prelude::*;

fn vec_f32(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-10.0f32..10.0, dim).prop_filter("non-degenerate", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn emb(v: Vec<f32>) -> EmbeddingVector {
    EmbeddingVector::new(v).unwrap()
}

fn naive_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn sample_strategy(dim: usize, max_img: usize, max_txt: usize) -> impl Strategy<Value = Sample> {
    (
        vec_f32(dim),
        vec_f32(dim),
        prop::collection::vec(vec_f32(dim), 0..=max_img),
        prop::collection::vec(vec_f32(dim), 0..=max_txt),
        0usize..3,
    )
        .prop_map(|(i, t, ie, te, l)| Sample {
            id: "s".into(),
            image: emb(i),
            text: emb(t),
            image_evidence: ie.into_iter().map(emb).collect(),
            text_evidence: te.into_iter().map(emb).collect(),
            label: Label::from_index(l).unwrap(),
        })
}

fn brute_argmax(anchor: &[f32], cands: &[EmbeddingVector]) -> Option<usize> {
    let scores: Vec<f64> = cands.iter().map(|c| naive_cosine(anchor, c.values())).collect();
    (0..scores.len()).fold(None, |best: Option<usize>, i| match best {
        Some(b) if scores[b] >= scores[i] => Some(b),
        _ => Some(i),
    })
}

fn labelled(n: usize) -> impl Strategy<Value = Vec<Label>> {
    prop::collection::vec(0usize..3, n).prop_map(|v| v.into_iter().map(|i| Label::from_index(i).unwrap()).collect())
}

fn tiny_dataset(labels: &[Label], dim: usize, seed: u64) -> Dataset {
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let v = |k: u64| -> Vec<f32> {
                (0..dim)
                    .map(|j| ((seed + 7 * i as u64 + 13 * k + j as u64) % 11) as f32 - 5.0 + 0.25)
                    .collect()
            };
            Sample {
                id: format!("id{i}"),
                image: emb(v(0)),
                text: emb(v(1)),
                image_evidence: (0..i % 3).map(|k| emb(v(2 + k as u64))).collect(),
                text_evidence: (0..(i + 1) % 3).map(|k| emb(v(5 + k as u64))).collect(),
                label,
            }
        })
        .collect();
    Dataset::new(samples, SplitTag::Train, "toy").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cosine_matches_oracle_and_is_bounded(a in vec_f32(24), b in vec_f32(24)) {
        let c = cosine_slices(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((c - naive_cosine(&a, &b)).abs() < 1e-6);
        prop_assert!((c - cosine_slices(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_scale_invariant(a in vec_f32(16), b in vec_f32(16), s in 0.01f32..100.0, t in 0.01f32..100.0) {
        let sa: Vec<f32> = a.iter().map(|x| x * s).collect();
        let tb: Vec<f32> = b.iter().map(|x| x * t).collect();
        prop_assert!((cosine_slices(&a, &b).unwrap() - cosine_slices(&sa, &tb).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn rerank_equals_brute_force(s in sample_strategy(8, 19, 10)) {
        let r = rerank_evidence(&s);
        prop_assert_eq!(r.image_index, brute_argmax(s.image.values(), &s.image_evidence));
        prop_assert_eq!(r.text_index, brute_argmax(s.text.values(), &s.text_evidence));
    }

    #[test]
    fn features_ignore_candidate_order(s in sample_strategy(6, 6, 6), rot_i in 0usize..6, rot_t in 0usize..6) {
        let mut p = s.clone();
        if !p.image_evidence.is_empty() {
            let k = rot_i % p.image_evidence.len();
            p.image_evidence.rotate_left(k);
        }
        p.text_evidence.reverse();
        if !p.text_evidence.is_empty() {
            let k = rot_t % p.text_evidence.len();
            p.text_evidence.rotate_left(k);
        }
        prop_assert_eq!(featurize_sample(&s).unwrap(), featurize_sample(&p).unwrap());
    }

    #[test]
    fn tree_is_invariant_to_row_order(
        rows in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 3), 0u8..2), 4..40),
        shift in 0usize..40,
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let y: Vec<u8> = rows.iter().map(|r| r.1).collect();
        let k = shift % x.len();
        let (mut xp, mut yp) = (x.clone(), y.clone());
        xp.rotate_left(k);
        yp.rotate_left(k);
        let c = FitConfig::default();
        let a = TabularModel::fit(ModelKind::Dt, &x, &y, &c).unwrap();
        let b = TabularModel::fit(ModelKind::Dt, &xp, &yp, &c).unwrap();
        prop_assert_eq!(a.predict_batch(&x).unwrap(), b.predict_batch(&x).unwrap());
    }

    #[test]
    fn split_is_a_stratified_partition(labels in labelled(30), seed in any::<u64>()) {
        let ds = tiny_dataset(&labels, 4, seed);
        let (tr, va, te) = match split_dataset(&ds, [0.6, 0.2, 0.2], seed) {
            Ok(parts) => parts,
            Err(_) => return Ok(()),
        };
        let mut ids: Vec<&str> = tr.samples().iter().chain(va.samples()).chain(te.samples()).map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids.len(), ds.len());
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), ds.len());
        let counts = ds.class_counts();
        for c in 0..3 {
            let got = tr.class_counts()[c];
            prop_assert!((got as f64 - 0.6 * counts[c] as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn dataset_round_trips_through_disk(labels in labelled(12), seed in any::<u64>()) {
        let ds = tiny_dataset(&labels, 5, seed);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path(), None).unwrap(), ds);
    }

    #[test]
    fn folds_partition_every_index(labels in labelled(40), k in 2usize..5, seed in any::<u64>()) {
        let Ok(folds) = stratified_folds(&labels, k, seed) else { return Ok(()) };
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for l in Label::ALL {
            let per: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == l).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn subsample_keeps_class_proportions(labels in labelled(60), fraction in 0.2f64..1.0, seed in any::<u64>()) {
        let Ok(idx) = stratified_subsample(&labels, fraction, seed) else { return Ok(()) };
        for l in Label::ALL {
            let n = labels.iter().filter(|&&x| x == l).count();
            let got = idx.iter().filter(|&&i| labels[i] == l).count();
            prop_assert_eq!(got, (n as f64 * fraction).round() as usize);
        }
    }

    #[test]
    fn overall_accuracy_is_count_weighted_recall(labels in labelled(25), preds in prop::collection::vec(0u8..2, 25)) {
        let Ok(r) = evaluate(&preds, &labels, Task::All) else { return Ok(()) };
        let weighted: f64 = r.per_class_accuracy.iter()
            .map(|(l, a)| a * labels.iter().filter(|x| *x == l).count() as f64)
            .sum::<f64>() / labels.len() as f64;
        prop_assert!((r.overall_accuracy - weighted).abs() < 1e-12);
    }
}
