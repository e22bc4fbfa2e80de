use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{check_gradients, GradCheck, Tensor};
use crate::corpus::{generate_corpus, CorpusConfig};
use crate::data::DatasetFile;
use crate::grammar::parse_sql;
use crate::model::SearchMode;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        d_ff: 16,
        gat_layers: 1,
        batch_size: 3,
        max_steps: 3,
        warmup_steps: 2,
        learning_rate: 1e-2,
        beam_width: 1,
        eval_interval: 2,
        checkpoint_interval: 0,
        val_examples: 4,
        ..TrainConfig::default()
    }
}

fn corpus() -> (DatasetFile, DatasetFile) {
    let c =
        generate_corpus(&CorpusConfig { seed: 4, train_examples: 10, dev_examples: 4, ..Default::default() }).unwrap();
    (c.train, c.dev)
}

fn params_of(t: &Trainer) -> Vec<Vec<f64>> {
    t.model.params.iter().map(|(_, v)| v.data().to_vec()).collect()
}

#[test]
fn schedule() {
    let cfg = TrainConfig { learning_rate: 1.0, warmup_steps: 4, ..TrainConfig::default() };
    assert_eq!(cfg.rate_at(1), 0.25);
    assert_eq!(cfg.rate_at(4), 1.0);
    assert_eq!(cfg.rate_at(100), 1.0);
    let flat = TrainConfig { warmup_steps: 0, ..cfg };
    assert_eq!(flat.rate_at(1), 1.0);
}

#[test]
fn config_toml() {
    let cfg = tiny_config();
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(TrainConfig::from_toml("").unwrap(), TrainConfig::default());
    assert!(matches!(TrainConfig::from_toml("learning_rat = 0.1"), Err(TrainError::Config(_))));
    assert!(matches!(TrainConfig::from_toml("heads = 3"), Err(TrainError::Config(_))));
    assert!(matches!(TrainConfig::from_toml("beta2 = 1.0"), Err(TrainError::Config(_))));
}

#[test]
fn uniform_actions_cost_n_log_a() {
    let (train, _) = corpus();
    let mut t = Trainer::new(tiny_config(), &train).unwrap();
    let head = t.model.decoder().head_out.clone();
    for id in [head.w, head.b] {
        t.model.params.value_mut(id).data_mut().fill(0.0);
    }
    let e = &train.examples[0];
    let schema = train.schema(&e.db_id).unwrap();
    let gold = parse_sql(t.model.grammar(), &e.sql, schema).unwrap();
    let prepared = t.model.prepare(&e.question, schema, &gold).unwrap();
    let mut g = Graph::new();
    let loss = example_loss(&t.model, &mut g, &prepared, schema, 0.2).unwrap();
    let n = prepared.actions.len() as f64;
    let a = t.model.space().len() as f64;
    assert!((loss.main - n * a.ln()).abs() < 1e-9, "{} vs {}", loss.main, n * a.ln());
    let total = g.value(loss.total).item();
    assert!((total - (loss.main + 0.2 * loss.aux)).abs() < 1e-9);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let (train, _) = corpus();
    let t = Trainer::new(tiny_config(), &train).unwrap();
    let grammar = t.model.grammar();
    for e in train.examples.iter().take(5) {
        let schema = train.schema(&e.db_id).unwrap();
        let gold = parse_sql(grammar, &e.sql, schema).unwrap();
        let prepared = t.model.prepare(&e.question, schema, &gold).unwrap();
        let frozen = t.model.clone();
        let mut store = t.model.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = check_gradients(
            &mut store,
            |g, s| {
                let mut m = frozen.clone();
                m.params = s.clone();
                example_loss(&m, g, &prepared, schema, 0.2).unwrap().total
            },
            GradCheck { entries_per_param: 3, ..GradCheck::default() },
            &mut rng,
        );
        assert!(report.max_rel_error < 1e-4, "{}: {report:?}", e.id);
    }
}

#[test]
fn zero_rate_leaves_parameters_unchanged() {
    let (train, _) = corpus();
    let cfg = TrainConfig { learning_rate: 0.0, ..tiny_config() };
    let mut t = Trainer::new(cfg, &train).unwrap();
    let before = params_of(&t);
    t.step().unwrap();
    t.step().unwrap();
    assert_eq!(params_of(&t), before);
}

#[test]
fn training_reduces_loss_on_a_fixed_batch() {
    let (train, _) = corpus();
    let cfg = TrainConfig { batch_size: 10, warmup_steps: 0, ..tiny_config() };
    let mut t = Trainer::new(cfg, &train).unwrap();
    let first = t.step().unwrap().loss;
    let mut last = first;
    for _ in 0..10 {
        last = t.step().unwrap().loss;
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn same_seed_same_curve() {
    let (train, dev) = corpus();
    let curve = || {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny_config(), &train).unwrap();
        let rows = t.run(dir.path(), Some(&dev)).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        (rows, csv)
    };
    let (rows, csv) = curve();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].val_em.is_none() && rows[1].val_em.is_some() && rows[2].val_em.is_some());
    assert!(csv.starts_with("step,loss,aux_loss,val_em,table_recall,column_recall\n"));
    assert_eq!(curve(), (rows, csv));
}

#[test]
fn batches_follow_seeded_epoch_permutations() {
    let (train, _) = corpus();
    let mut t = Trainer::new(TrainConfig { batch_size: 4, ..tiny_config() }, &train).unwrap();
    let n = t.len();
    let mut seen = Vec::new();
    for _ in 0..n {
        seen.extend(t.next_batch());
    }
    let mut first: Vec<usize> = seen[..n].to_vec();
    first.sort_unstable();
    assert_eq!(first, (0..n).collect::<Vec<_>>());
    assert_eq!(t.cursor.epoch, 3);
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let (train, _) = corpus();
    let dir = tempfile::tempdir().unwrap();
    let mut a = Trainer::new(tiny_config(), &train).unwrap();
    a.step().unwrap();
    a.step().unwrap();
    a.save(dir.path()).unwrap();
    let sa = a.step().unwrap();
    let mut b = Trainer::resume(load_checkpoint(dir.path()).unwrap(), &train).unwrap();
    assert_eq!(b.step, 2);
    let sb = b.step().unwrap();
    assert_eq!(sa, sb);
    assert_eq!(params_of(&a), params_of(&b));
    assert_eq!(a.optimizer, b.optimizer);
    assert_eq!(a.cursor, b.cursor);
}

#[test]
fn checkpoint_rejects_foreign_archives() {
    let dir = tempfile::tempdir().unwrap();
    crate::autodiff::write_archive(dir.path(), serde_json::json!({}), [("x", &Tensor::scalar(1.0))]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(TrainError::Checkpoint(_))));
}

#[test]
fn non_finite_loss_aborts_with_a_dump() {
    let (train, _) = corpus();
    let mut t = Trainer::new(tiny_config(), &train).unwrap();
    let head = t.model.decoder().head_out.b;
    t.model.params.value_mut(head).data_mut()[0] = f64::NAN;
    match t.step() {
        Err(TrainError::NonFinite { step: 1, dump }) => {
            let text = std::fs::read_to_string(&dump).unwrap();
            assert!(text.contains("param_norms"));
            std::fs::remove_file(dump).unwrap();
        }
        other => panic!("expected a non-finite abort, got {:?}", other.map(|s| s.loss)),
    }
}

#[test]
fn gold_predictions_score_full_marks() {
    let (train, dev) = corpus();
    let gold: Vec<Prediction> = dev.examples.iter().map(Prediction::gold).collect();
    let m = score(crate::grammar::Grammar::builtin(), &dev, &gold).unwrap();
    assert_eq!(m.exact_match, 1.0);
    assert_eq!(m.buckets.iter().map(|b| b.total).sum::<usize>(), dev.examples.len());
    assert_eq!(m.table_recall, None);
    let round = Prediction::from_jsonl(&Prediction::to_jsonl(&gold)).unwrap();
    assert_eq!(round, gold);
    let empty = DatasetFile { examples: vec![], schemas: train.schemas.clone() };
    assert!(matches!(score(crate::grammar::Grammar::builtin(), &empty, &gold), Err(TrainError::EmptyDataset)));
}

#[test]
fn evaluation_reports_recall_and_buckets() {
    let (train, dev) = corpus();
    let t = Trainer::new(tiny_config(), &train).unwrap();
    let preds = predict(&t.model, &dev, SearchMode::Greedy).unwrap();
    assert_eq!(preds.len(), dev.examples.len());
    let m = score(t.model.grammar(), &dev, &preds).unwrap();
    let tr = m.table_recall.unwrap();
    assert!((0.0..=1.0).contains(&tr));
    // Every schema in the corpus has at most 4 tables, and k_tables is 4.
    assert_eq!(tr, 1.0);
    assert_eq!(evaluate(&t.model, &dev, SearchMode::Greedy).unwrap(), m);
}

#[test]
fn baseline_predicts_the_most_frequent_query_per_database() {
    let (train, dev) = corpus();
    let preds = baseline_predictions(&train, &dev);
    for (p, e) in preds.iter().zip(&dev.examples) {
        let sql = p.sql.as_ref().unwrap();
        let count = |s: &str| train.examples.iter().filter(|x| x.db_id == e.db_id && x.sql == s).count();
        let best = train.examples.iter().filter(|x| x.db_id == e.db_id).map(|x| count(&x.sql)).max().unwrap();
        assert_eq!(count(sql), best);
    }
}
