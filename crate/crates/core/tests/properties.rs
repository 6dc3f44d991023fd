use std::collections::HashMap;
use std::path::Path;

use proptest::prelude::*;

use ars_core::ars::{ars_forward, ars_score_many, ArsParameters};
use ars_core::datasets::{generate_planted, PlantedModelSpec};
use ars_core::encoder::{encode, EmbeddingVector, TowerAdapter};
use ars_core::eval::{topk_accuracy, EvalQuery, EvalSet};
use ars_core::numerics::{l2_normalize, Rng, Vector};
use ars_core::retrieval::{build_index, top_k, Corpus, EmbeddingIndex, Passage, Retriever};
use ars_core::trainer::{
    gradcheck, init_model, make_batches, train, Checkpoint, GradcheckOptions, GradientFault, ModelDims,
    ParamGroup, RunConfig,
};

fn small_run(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        dims: ModelDims {
            feature_dim: 128,
            embed_dim: 8,
            hidden_dim: 6,
        },
        ..RunConfig::default()
    }
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(0u32..200, 1..12)
        .prop_map(|ws| ws.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "))
}

fn corpus_of(texts: &[String]) -> Corpus {
    let mut c = Corpus::new();
    for (i, t) in texts.iter().enumerate() {
        c.insert(i as u64 + 1, Passage { title: String::new(), text: t.clone() }).unwrap();
    }
    c
}

fn unit(xs: &[f64]) -> Option<EmbeddingVector> {
    l2_normalize(&Vector::new(xs.to_vec()).ok()?).ok().map(EmbeddingVector::from_unit)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn encodings_are_unit_and_scale_invariant(text in words(), seed in 0u64..1000, c in 0.01f64..100.0) {
        let model = init_model(&small_run(seed)).unwrap();
        let e = model.encode_query(&text).unwrap();
        let n = e.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-9);

        let mut w = model.question.weights.clone();
        w.scale(c);
        let scaled = TowerAdapter::new(model.question.tower, w).unwrap();
        let e2 = encode(&text, &scaled, &model.featurizer, &model.tokenizer).unwrap();
        for (a, b) in e.as_slice().iter().zip(e2.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn relevance_is_open_unit_interval_and_rank_equivalent(
        seed in 0u64..1000,
        q in prop::collection::vec(-1.0f64..1.0, 8),
        ps in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 2..30),
    ) {
        let q = match unit(&q) { Some(q) => q, None => return Ok(()) };
        let ps: Vec<EmbeddingVector> = ps.iter().filter_map(|p| unit(p)).collect();
        let params = ArsParameters::init(8, 6, &mut Rng::new(seed)).unwrap();
        let scores = ars_score_many(&q, &ps, &params).unwrap();
        for (sc, p) in scores.iter().zip(&ps) {
            prop_assert!(sc.r > 0.0 && sc.r < 1.0);
            let seq = ars_forward(&q, p, &params).unwrap();
            prop_assert!((seq.s - sc.s).abs() <= 1e-12);
        }
        let ids = 1..=scores.len() as u64;
        let by_s = top_k(scores.iter().map(|x| x.s).zip(ids.clone()).collect(), scores.len());
        let by_r = top_k(scores.iter().map(|x| x.r).zip(ids).collect(), scores.len());
        prop_assert_eq!(by_s.iter().map(|x| x.1).collect::<Vec<_>>(), by_r.iter().map(|x| x.1).collect::<Vec<_>>());
    }

    #[test]
    fn retrieval_is_order_invariant_and_prefix_consistent(
        texts in prop::collection::vec(words(), 3..40),
        query in words(),
        seed in 0u64..1000,
        k in 1usize..10,
    ) {
        let model = init_model(&small_run(seed)).unwrap();
        let index = build_index(&corpus_of(&texts), &model).unwrap().index;
        let retriever = Retriever::new(&model, &index).unwrap();
        let all = retriever.retrieve(&query, index.len()).unwrap();
        let short = retriever.retrieve(&query, k).unwrap();
        prop_assert_eq!(&short.hits[..], &all.hits[..k.min(index.len())]);
        prop_assert!(all.hits.windows(2).all(|w| w[0].s > w[1].s || (w[0].s == w[1].s && w[0].pid < w[1].pid)));

        let mut rows: Vec<(u64, EmbeddingVector)> = (0..index.len()).map(|j| (index.ids()[j], index.embedding(j))).collect();
        Rng::new(seed).shuffle(&mut rows);
        let shuffled = EmbeddingIndex::from_rows(index.dim(), rows).unwrap();
        let again = Retriever::new(&model, &shuffled).unwrap().retrieve(&query, index.len()).unwrap();
        prop_assert_eq!(again, all);
    }

    #[test]
    fn checkpoints_and_indexes_round_trip(seed in 0u64..1000, texts in prop::collection::vec(words(), 1..10)) {
        let model = init_model(&small_run(seed)).unwrap();
        let ckpt = Checkpoint { model: model.clone(), optimizer: None };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back.model, &model);
        prop_assert_eq!(back.to_bytes(), bytes);

        let index = build_index(&corpus_of(&texts), &model).unwrap().index;
        let bytes = index.to_bytes();
        prop_assert_eq!(EmbeddingIndex::from_bytes(&bytes, Path::new("mem")).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn accuracy_is_monotone_in_k(
        ranks in prop::collection::vec((prop::collection::vec(1u64..50, 0..20), 1u64..50), 1..20),
    ) {
        let eval = EvalSet {
            queries: ranks.iter().enumerate().map(|(i, (_, rel))| EvalQuery {
                qid: i as u64,
                question: String::new(),
                relevant: vec![*rel],
            }).collect(),
        };
        let ranked: HashMap<u64, Vec<u64>> = ranks.iter().enumerate().map(|(i, (ids, _))| (i as u64, ids.clone())).collect();
        let ks: Vec<usize> = (1..=25).collect();
        let report = topk_accuracy(&ranked, &eval, &ks, "x").unwrap();
        prop_assert!(report.accuracies.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(report.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradients_match_finite_differences(seed in 0u64..10_000) {
        // the absolute bound covers difference roundoff, about eps·|L|/step
        let opts = GradcheckOptions { trials: 2, abs_tolerance: 1e-9, ..GradcheckOptions::default() };
        let report = gradcheck(&small_run(seed), &opts).unwrap();
        prop_assert!(report.passed(), "{}", report);
        let faulty = GradcheckOptions { fault: Some(GradientFault::TransposeWq), ..opts };
        let report = gradcheck(&small_run(seed), &faulty).unwrap();
        prop_assert_eq!(report.failing_groups(), vec![ParamGroup::Wq]);
    }
}

fn small_planted() -> ars_core::datasets::GeneratedDataset {
    generate_planted(&PlantedModelSpec {
        corpus_size: 300,
        train_queries: 96,
        test_queries: 20,
        pool_size: 5,
        ..PlantedModelSpec::default()
    })
    .unwrap()
}

#[test]
fn batches_cover_every_example_once_per_epoch() {
    let data = small_planted();
    let batches = make_batches(&data.train, 32, &mut Rng::new(3)).unwrap();
    let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.groups.iter().map(|g| g.example)).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..data.train.len()).collect::<Vec<_>>());
}

#[test]
fn training_is_deterministic_and_lowers_relevance_loss() {
    let data = small_planted();
    let run = RunConfig {
        epochs: 10,
        dims: ModelDims {
            hidden_dim: 256,
            ..ModelDims::default()
        },
        ..RunConfig::default()
    };
    let a = train(&run, &data.train, &data.corpus).unwrap();
    let b = train(&run, &data.train, &data.corpus).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.metrics, b.metrics);
    let l_dyn = a.epoch_means(|m| m.l_dyn);
    assert!(l_dyn[l_dyn.len() - 1] < l_dyn[0], "{l_dyn:?}");
    assert!(a.metrics.iter().all(|m| m.l_total.is_finite() && m.lr > 0.0));
}
