use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pstr_core::encoder::checkpoint_bytes;
use pstr_core::learning::{
    corpus_lines, evaluate_batch, grad_total, gradcheck, l_cms, Batch, GradcheckOptions, Labeled,
};
use pstr_core::mil::{construct_bag, mil_loss, rankmil_loss};
use pstr_core::{
    encode_query, encode_scene_span, generate_corpus, train, CorpusConfig, ModelConfig, ModelParams, Scene,
    SequenceFeature, Strategy, TrainConfig,
};

fn small_corpus(seed: u64, scenes: usize) -> Vec<Scene> {
    let cfg = CorpusConfig {
        seed,
        n_scenes: scenes,
        lines_per_scene: (1, 2),
        word_length: (3, 6),
        alphabet: "abcdefgh".into(),
        n_tir: 2,
        n_cpp: 2,
        n_ncpp: 2,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg).unwrap().0
}

fn small_model() -> ModelConfig {
    ModelConfig { t: 5, c: 6, alphabet: "abcdefgh".into(), ..ModelConfig::default() }
}

/// Batch loss rebuilt from the public encoders and loss functions.
fn reference_loss(params: &ModelParams, batch: &Batch<'_>, strategy: Strategy) -> f64 {
    let seed = batch.noise_seed;
    let mut q: Vec<(String, SequenceFeature)> = Vec::new();
    let mut p: Vec<(String, SequenceFeature)> = Vec::new();
    for line in &batch.lines {
        q.push((line.transcription.clone(), encode_query(&line.transcription, params).unwrap()));
        p.push((line.transcription.clone(), encode_scene_span(line, 0.0, 1.0, params, seed).unwrap()));
    }
    let pooled = match strategy {
        Strategy::CmslA => false,
        Strategy::CmslB | Strategy::CmslC => true,
        Strategy::Mil | Strategy::RankMil => !batch.bag_pairs.is_empty(),
    };
    if pooled {
        for s in &batch.samples {
            q.push((s.label.clone(), encode_query(&s.label, params).unwrap()));
        }
    }
    if strategy == Strategy::CmslC {
        for s in &batch.samples {
            let line = batch.lines[s.line];
            let f = encode_scene_span(line, s.window.start_frac, s.window.end_frac, params, seed).unwrap();
            p.push((s.label.clone(), f));
        }
    }
    let ql: Vec<Labeled<'_>> = q.iter().map(|(t, f)| (t.as_str(), f)).collect();
    let pl: Vec<Labeled<'_>> = p.iter().map(|(t, f)| (t.as_str(), f)).collect();
    let mut total = l_cms(&ql, &pl).unwrap();

    if strategy.uses_bags() {
        let mut per_sample = vec![0usize; batch.samples.len()];
        for &(s, _) in &batch.bag_pairs {
            per_sample[s] += 1;
        }
        for &(s, j) in &batch.bag_pairs {
            let line = batch.lines[j];
            let n_max = batch.n_max.map_or(line.len(), |m| m.min(line.len()));
            let bag = construct_bag(line, batch.n_min, n_max).unwrap();
            let feats: Vec<SequenceFeature> = bag
                .proposals
                .iter()
                .map(|pr| encode_scene_span(line, pr.window.start_frac, pr.window.end_frac, params, seed).unwrap())
                .collect();
            let label = &batch.samples[s].label;
            let qf = encode_query(label, params).unwrap();
            let l = if strategy == Strategy::Mil {
                mil_loss(label, &qf, &bag, &feats).unwrap().loss
            } else {
                rankmil_loss(label, &qf, &p[j].1, &bag, &feats, params.config.margin).unwrap().loss
            };
            total += l / per_sample[s] as f64;
        }
    }
    total
}

fn sample_batch<'a>(scenes: &'a [Scene], cfg: &TrainConfig, seed: u64) -> Batch<'a> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch::sample(corpus_lines(scenes), cfg, &mut rng, seed).unwrap()
}

#[test]
fn batch_loss_matches_reference_forward_pass() {
    let scenes = small_corpus(3, 4);
    let cfg = TrainConfig { model: small_model(), ..TrainConfig::default() };
    for seed in 0..4 {
        let params = ModelParams::init(small_model(), 50 + seed).unwrap();
        let batch = sample_batch(&scenes, &cfg, seed);
        for strategy in Strategy::ALL {
            let ev = evaluate_batch(&params, &batch, strategy, false).unwrap();
            let reference = reference_loss(&params, &batch, strategy);
            assert!((ev.loss.total() - reference).abs() < 1e-10, "{strategy}: {} vs {reference}", ev.loss.total());
        }
    }
}

#[test]
fn gradients_match_finite_differences_of_reference() {
    let scenes = small_corpus(4, 3);
    let cfg = TrainConfig { model: small_model(), ..TrainConfig::default() };
    let params = ModelParams::init(small_model(), 9).unwrap();
    let batch = sample_batch(&scenes, &cfg, 1);
    let h = 1e-5;
    for strategy in Strategy::ALL {
        let (_, grads) = grad_total(&params, &batch, strategy).unwrap();
        let named = grads.named_tensors();
        for (ti, (name, g)) in named.iter().enumerate() {
            // the largest entries, where a wrong gradient shows most clearly
            let mut idx: Vec<usize> = (0..g.as_slice().len()).collect();
            idx.sort_by(|&a, &b| g.as_slice()[b].abs().total_cmp(&g.as_slice()[a].abs()));
            for &k in idx.iter().take(2) {
                let mut plus = params.clone();
                plus.named_tensors_mut()[ti].1.as_mut_slice()[k] += h;
                let mut minus = params.clone();
                minus.named_tensors_mut()[ti].1.as_mut_slice()[k] -= h;
                let numeric =
                    (reference_loss(&plus, &batch, strategy) - reference_loss(&minus, &batch, strategy)) / (2.0 * h);
                let analytic = g.as_slice()[k];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
                assert!(rel < 1e-4, "{strategy} {name}[{k}]: analytic {analytic} numeric {numeric}");
            }
        }
    }
}

#[test]
fn gradcheck_reports_corrupted_gradients() {
    let scenes = small_corpus(5, 3);
    let cfg = TrainConfig { model: small_model(), ..TrainConfig::default() };
    let params = ModelParams::init(small_model(), 2).unwrap();
    let batch = sample_batch(&scenes, &cfg, 2);
    let opts = GradcheckOptions::default();
    let clean = gradcheck(&params, &batch, Strategy::RankMil, &opts, None).unwrap();
    assert!(clean.passed(), "{:?}", clean.worst());
    let corrupt = |g: &mut pstr_core::encoder::Gradients| g.scale(1.01);
    let bad = gradcheck(&params, &batch, Strategy::RankMil, &opts, Some(&corrupt)).unwrap();
    assert!(!bad.passed());
}

#[test]
fn training_is_deterministic() {
    let scenes = small_corpus(6, 12);
    let cfg = TrainConfig { model: small_model(), epochs: 2, ..TrainConfig::default() };
    let (a, ra) = train(&scenes, &cfg).unwrap();
    let (b, rb) = train(&scenes, &cfg).unwrap();
    assert_eq!(checkpoint_bytes(&a).unwrap(), checkpoint_bytes(&b).unwrap());
    assert_eq!(ra, rb);
    let (c, _) = train(&scenes, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(checkpoint_bytes(&a).unwrap(), checkpoint_bytes(&c).unwrap());
}

#[test]
fn fifty_epochs_reduce_cross_modal_loss() {
    let scenes = small_corpus(7, 20);
    for strategy in [Strategy::CmslA, Strategy::RankMil] {
        let cfg = TrainConfig {
            strategy,
            epochs: 50,
            model: ModelConfig { c: 8, t: 8, ..small_model() },
            ..TrainConfig::default()
        };
        let (params, report) = train(&scenes, &cfg).unwrap();
        assert!(params.is_finite());
        let first = report.epochs[0].mean_l_cms();
        let last = report.epochs[49].mean_l_cms();
        assert!(last < first, "{strategy}: {first} -> {last}");
    }
}

#[test]
fn empty_corpus_and_bad_config_are_rejected() {
    assert!(train(&[], &TrainConfig::default()).is_err());
    let scenes = small_corpus(8, 2);
    let bad = TrainConfig { learning_rate: f64::NAN, model: small_model(), ..TrainConfig::default() };
    assert!(matches!(train(&scenes, &bad), Err(pstr_core::Error::Config(_))));
}
