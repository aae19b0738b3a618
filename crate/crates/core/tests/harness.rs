mod common;

use contcap::checkpoint::Checkpoint;
use contcap::harness::{expand_model, run_sequence, run_sequence_with, ContinualLearner, Event, Method, TrainConfig};
use contcap::metrics::report_csv;
use contcap::model::{ModelConfig, ModelDims, ModelParams, ParamKind};
use contcap::linalg::Rng;
use contcap::ratt::RattConfig;
use contcap::vocab::Vocabulary;

use common::{synthetic_tasks, tiny_config};

fn bits(p: &ModelParams) -> Vec<u64> {
    ParamKind::ALL.iter().flat_map(|&k| p.tensor(k).iter().map(|v| v.to_bits())).collect()
}

#[test]
fn same_seed_gives_identical_reports() {
    let tasks = synthetic_tasks(60, 2, 0.15);
    for method in [Method::Ft, Method::Ewc, Method::Lwf, Method::Ratt] {
        let cfg = TrainConfig { method, ..tiny_config() };
        let a = run_sequence(&tasks, &cfg).unwrap();
        let b = run_sequence(&tasks, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap(), "{method:?}");
        assert_eq!(bits(&a.checkpoints[1].params), bits(&b.checkpoints[1].params));
    }
}

#[test]
fn ratt_with_every_mask_disabled_equals_fine_tuning() {
    let tasks = synthetic_tasks(60, 2, 0.15);
    let ft = run_sequence(&tasks, &tiny_config()).unwrap();
    let off = RattConfig { mask_embed: false, mask_hidden: false, mask_vocab: false, ..Default::default() };
    let ratt = run_sequence(&tasks, &TrainConfig { method: Method::Ratt, ratt: off, ..tiny_config() }).unwrap();
    assert_eq!(report_csv(&ft.report), report_csv(&ratt.report));
    for (a, b) in ft.checkpoints.iter().zip(&ratt.checkpoints) {
        assert_eq!(bits(&a.params), bits(&b.params));
    }
}

#[test]
fn checkpoints_round_trip_and_evaluate_identically() {
    let tasks = synthetic_tasks(60, 2, 0.15);
    let dir = tempfile::tempdir().unwrap();
    for method in [Method::Ft, Method::Ratt] {
        let out = run_sequence(&tasks, &TrainConfig { method, ..tiny_config() }).unwrap();
        for (i, ck) in out.checkpoints.iter().enumerate() {
            let path = dir.path().join(format!("{}_{i}.json", method.name()));
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(&back, ck);
            assert_eq!(bits(&back.params), bits(&ck.params));
            for (j, task) in tasks.iter().enumerate().take(i + 1) {
                let score = back.evaluate(j, &task.test).unwrap();
                assert_eq!(Some(score.to_bits()), out.report.bleu[i][j].map(f64::to_bits));
            }
        }
    }
}

#[test]
fn expansion_keeps_existing_entries() {
    let dims = ModelDims { d_feat: 3, d_emb: 4, d_hidden: 5, vocab_size: 4 };
    let mut model = ModelParams::init(dims, &ModelConfig::default(), &mut Rng::new(1)).unwrap();
    let mut vocab = Vocabulary::new();
    vocab.add_words(&["a".to_string(), "b".to_string()]).unwrap();
    let before = model.clone();
    let ids = expand_model(&mut model, &mut vocab, &["c".into(), "d".into(), "e".into()], 0.1, &mut Rng::new(2)).unwrap();
    assert_eq!(ids, vec![4, 5, 6]);
    assert_eq!(model.dims.vocab_size, 7);
    for w in 0..4 {
        for u in 0..4 {
            assert_eq!(model.s.get(u, w).to_bits(), before.s.get(u, w).to_bits());
        }
        for u in 0..5 {
            assert_eq!(model.c.get(w, u).to_bits(), before.c.get(w, u).to_bits());
        }
    }
    assert_eq!(bits(&ModelParams { s: before.s.clone(), c: before.c.clone(), ..model.clone() }), bits(&before));
    assert!(expand_model(&mut model, &mut vocab, &["a".into()], 0.1, &mut Rng::new(3)).is_err());
}

#[test]
fn inference_stays_inside_the_task_vocabulary() {
    let tasks = synthetic_tasks(60, 2, 0.15);
    for method in [Method::Ft, Method::Ratt] {
        let mut learner = ContinualLearner::new(TrainConfig { method, ..tiny_config() }, 64, 2).unwrap();
        for (t, task) in tasks.iter().enumerate() {
            learner.train_task(t, task, &mut |_| {}).unwrap();
        }
        for (t, task) in tasks.iter().enumerate() {
            let support = learner.vocab().task_support(t).unwrap();
            for im in &task.test {
                let ids = learner.infer(t, &im.features.0).unwrap();
                assert!(ids.iter().all(|&w| support.contains(w)));
                assert_eq!(ids, learner.infer(t, &im.features.0).unwrap());
            }
        }
        assert!(learner.infer(2, &tasks[0].test[0].features.0).is_err());
    }
}

#[test]
fn diagonal_is_scored_before_later_columns() {
    let tasks = synthetic_tasks(40, 3, 0.15);
    let mut order = Vec::new();
    run_sequence_with(&tasks, &TrainConfig { epochs: 1, ..tiny_config() }, &mut |e| {
        if let Event::Evaluated { session, task, .. } = e {
            order.push((*session, *task));
        }
    })
    .unwrap();
    for (pos, &(s, t)) in order.iter().enumerate() {
        if s > t {
            assert!(order[..pos].contains(&(t, t)), "({s}, {t}) scored before ({t}, {t})");
        }
    }
    assert_eq!(order.len(), 6);
}

#[test]
fn sgd_ewc_with_zero_lambda_equals_fine_tuning() {
    let tasks = synthetic_tasks(60, 2, 0.15);
    let base = TrainConfig { optimizer: contcap::optim::OptimizerConfig::sgd(0.1), ..tiny_config() };
    let ft = run_sequence(&tasks, &base).unwrap();
    let ewc_cfg = contcap::ewc::EwcConfig { lambda: 0.0, fisher_samples: 50 };
    let ewc = run_sequence(&tasks, &TrainConfig { method: Method::Ewc, ewc: ewc_cfg, ..base }).unwrap();
    assert_eq!(report_csv(&ft.report), report_csv(&ewc.report));
    assert_eq!(ewc.report.fisher.len(), 2);
}
