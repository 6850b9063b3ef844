use nestembed_core::data::*;
use nestembed_core::encoder::{init_params, Encoder, Tokenizer};
use nestembed_core::losses::{cosent_loss, softmax_head_cls_loss, TaskTag};
use nestembed_core::numerics::SimilarityKind;
use nestembed_core::trainer::*;

fn corpus() -> SynthCorpus {
    synth_corpus(4, 8, 120, 11).unwrap()
}

fn encoder(c: &SynthCorpus, seed: u64) -> Encoder {
    let tok = Tokenizer::new(&c.vocabulary, 512);
    let p = init_params(tok.vocab_size(), 16, 16, seed).unwrap();
    Encoder::new(tok, p).unwrap()
}

fn run(regime: Regime, epochs: usize, batch: usize, lr: f64) -> RunConfig {
    let mut r = RunConfig::default();
    r.train = TrainConfig { epochs, batch_size: batch, learning_rate: lr, seed: 5, ..TrainConfig::for_regime(regime) };
    r.encoder.hidden = 16;
    r.encoder.out_dim = 16;
    r
}

#[test]
fn four_batches_four_records() {
    let c = corpus();
    let r = run(Regime::MatryoshkaTriplet, 1, 2, 0.01);
    let data = TrainData::Triplets(&c.triplets[..8]);
    let mut st = TrainState::new(encoder(&c, 1), &r);
    let log = train(&mut st, &data, &r, None, &mut ()).unwrap();
    assert_eq!(log.steps.len(), 4);
    assert_eq!(log.steps.iter().map(|s| s.step).collect::<Vec<_>>(), [1, 2, 3, 4]);
    assert!(log.steps.iter().all(|s| s.task == TaskTag::Triplet));
    assert_eq!(st.step(), 4);
    assert_eq!(total_steps(&data, &r).unwrap(), 4);
}

#[test]
fn hybrid_tags_alternate_strictly() {
    let c = corpus();
    let r = run(Regime::HybridMultitask, 2, 4, 0.01);
    let data = TrainData::Hybrid { labeled: &c.labeled[..32], scored: &c.scored[..32] };
    let mut st = TrainState::new(encoder(&c, 1), &r);
    let log = train(&mut st, &data, &r, None, &mut ()).unwrap();
    assert_eq!(log.steps.len(), 32);
    for (i, s) in log.steps.iter().enumerate() {
        let want = if i % 2 == 0 { TaskTag::Classification } else { TaskTag::Sts };
        assert_eq!(s.task, want, "step {}", s.step);
    }
}

#[test]
fn empty_or_mismatched_data_is_config_error() {
    let c = corpus();
    let r = run(Regime::MatryoshkaTriplet, 1, 2, 0.01);
    let mut st = TrainState::new(encoder(&c, 1), &r);
    assert!(matches!(train(&mut st, &TrainData::Triplets(&[]), &r, None, &mut ()), Err(TrainError::Config(_))));
    let hybrid = TrainData::Hybrid { labeled: &c.labeled, scored: &c.scored };
    assert!(matches!(train(&mut st, &hybrid, &r, None, &mut ()), Err(TrainError::Config(_))));
}

struct Snapshot {
    at: usize,
    state: Option<TrainState>,
}

impl TrainObserver for Snapshot {
    fn on_checkpoint(&mut self, s: &TrainState) -> std::result::Result<(), String> {
        if s.step() == self.at {
            self.state = Some(s.clone());
        }
        Ok(())
    }
}

#[test]
fn runs_are_deterministic_and_resume_exactly() {
    let c = corpus();
    let mut r = run(Regime::HybridMultitask, 3, 8, 0.05);
    r.train.checkpoint_every = 5;
    let data = TrainData::Hybrid { labeled: &c.labeled, scored: &c.scored };
    let plan = EvalPlan {
        dataset: "train".into(),
        pairs: &c.scored,
        dims: vec![16, 8],
        kinds: SimilarityKind::ALL.to_vec(),
        renormalize: true,
        labeled: Some(&c.labeled),
    };

    let mut a = TrainState::new(encoder(&c, 2), &r);
    let mut snap = Snapshot { at: 10, state: None };
    let log_a = train(&mut a, &data, &r, Some(&plan), &mut snap).unwrap();
    let mut b = TrainState::new(encoder(&c, 2), &r);
    let log_b = train(&mut b, &data, &r, Some(&plan), &mut ()).unwrap();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.evals.last().unwrap().report.meta.checkpoint, checkpoint_id(log_a.steps.len()));

    let mut resumed = snap.state.expect("snapshot at step 10");
    let tail = train(&mut resumed, &data, &r, Some(&plan), &mut ()).unwrap();
    assert_eq!(resumed, a);
    assert_eq!(tail.steps[..], log_a.steps[10..]);
    assert_eq!(tail.evals.last(), log_a.evals.last());
}

#[test]
fn loss_trends_down_on_desk_run() {
    let c = synth_corpus(8, 50, 400, 1).unwrap();
    let tok = Tokenizer::new(&c.vocabulary, 512);
    let enc = Encoder::new(tok, init_params(c.vocabulary.len() + 1, 64, 64, 1).unwrap()).unwrap();
    let mut r = RunConfig::default();
    r.train = TrainConfig { batch_size: 32, learning_rate: 0.1, seed: 1, ..TrainConfig::for_regime(Regime::MatryoshkaTriplet) };
    let mut st = TrainState::new(enc, &r);
    let log = train(&mut st, &TrainData::Triplets(&c.triplets), &r, None, &mut ()).unwrap();
    let median = |xs: &[StepRecord]| {
        let mut v: Vec<f64> = xs.iter().map(|s| s.loss).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let tenth = (log.steps.len() / 10).max(1);
    let first = median(&log.steps[..tenth]);
    let last = median(&log.steps[log.steps.len() - tenth..]);
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn hybrid_steps_replay_in_isolation() {
    // lr 0 freezes parameters, so each logged loss must equal its task loss
    // recomputed from the batch composition rule alone.
    let c = corpus();
    let mut r = run(Regime::HybridMultitask, 2, 5, 0.0);
    r.train.warmup_ratio = 0.0;
    let labeled = &c.labeled[..23];
    let scored = &c.scored[..12];
    let data = TrainData::Hybrid { labeled, scored };
    let mut st = TrainState::new(encoder(&c, 3), &r);
    let frozen = st.clone();
    let log = train(&mut st, &data, &r, None, &mut ()).unwrap();
    assert_eq!(st.encoder, frozen.encoder);
    assert_eq!(st.head, frozen.head);

    let enc = &frozen.encoder;
    let head = frozen.head.as_ref().unwrap();
    let (nc, ns) = (num_batches(23, 5), num_batches(12, 5));
    let mut expected = Vec::new();
    for epoch in 0..2 {
        let oc = epoch_permutation(23, derive_seed(5, STREAM_CLS), epoch);
        let os = epoch_permutation(12, derive_seed(5, STREAM_STS), epoch);
        let (mut ic, mut is) = (0, 0);
        for p in 0..nc + ns {
            let cls_turn = (p % 2 == 0 && ic < nc) || is >= ns;
            if cls_turn {
                let idx = &oc[ic * 5..((ic + 1) * 5).min(23)];
                let u: Vec<_> = idx.iter().map(|&j| enc.embed(&labeled[j].premise)).collect();
                let v: Vec<_> = idx.iter().map(|&j| enc.embed(&labeled[j].hypothesis)).collect();
                let y: Vec<usize> = idx.iter().map(|&j| labeled[j].label.code()).collect();
                expected.push((TaskTag::Classification, softmax_head_cls_loss(&u, &v, &y, head).unwrap().value));
                ic += 1;
            } else {
                let idx = &os[is * 5..((is + 1) * 5).min(12)];
                let a: Vec<_> = idx.iter().map(|&j| enc.embed(&scored[j].text_a)).collect();
                let b: Vec<_> = idx.iter().map(|&j| enc.embed(&scored[j].text_b)).collect();
                let g: Vec<f64> = idx.iter().map(|&j| scored[j].gold_score).collect();
                expected.push((TaskTag::Sts, cosent_loss(&a, &b, &g, r.loss.tau_sts).unwrap().value));
                is += 1;
            }
        }
    }
    let got: Vec<(TaskTag, f64)> = log.steps.iter().map(|s| (s.task, s.loss)).collect();
    assert_eq!(got, expected);
}

#[test]
fn lr_schedule_shape() {
    let cfg = TrainConfig { learning_rate: 0.1, warmup_ratio: 0.1, ..TrainConfig::default() };
    assert_eq!(lr_at(0, 95, &cfg), 0.0);
    assert_eq!(lr_at(10, 95, &cfg), 0.1);
    assert_eq!(lr_at(95, 95, &cfg), 0.0);
    for k in 0..95 {
        assert!(lr_at(k, 95, &cfg) <= 0.1);
    }
}
