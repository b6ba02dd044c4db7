use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pstr_core::corpus::load_scenes;
use pstr_core::learning::{corpus_lines, gradcheck, Batch, GradcheckOptions};
use pstr_core::retrieval::{rank, Gallery};
use pstr_core::{
    encode_query, generate_corpus, load_checkpoint, load_corpus, queries_path_for, save_checkpoint, save_corpus, train,
    BagPolicy, CorpusConfig, EvalOptions, Matcher, ModelConfig, ModelParams, QuerySet, Scene, Strategy, Task,
    TrainConfig,
};

use crate::cli::{Cli, Command, EvalArgs, GenArgs, GradcheckArgs, QueryArgs, TrainArgs};
use crate::format::{opt6, sig6};
use crate::manifest::{write_manifests, FileDigest, RunManifest};
use crate::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    match &cli.command {
        Command::Gen(a) => gen(a, cli.threads),
        Command::Train(a) => train_cmd(a, cli.threads),
        Command::Eval(a) => eval(a, cli.threads),
        Command::Query(a) => query(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>, CliError> {
    paths.iter().map(|p| FileDigest::of(p)).collect()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{}: no such file", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

fn gen(a: &GenArgs, threads: usize) -> Result<(), CliError> {
    let cfg = CorpusConfig {
        seed: a.seed,
        n_scenes: a.scenes,
        lines_per_scene: (a.lines.0, a.lines.1),
        alphabet: a.alphabet.clone(),
        word_length: (a.word_len.0, a.word_len.1),
        width_jitter: a.jitter,
        k: a.k,
        n_tir: a.tir,
        n_cpp: a.cpp,
        n_ncpp: a.ncpp,
        ..CorpusConfig::default()
    };
    let (scenes, queries) = generate_corpus(&cfg)?;
    ensure_parent(&a.out)?;
    save_corpus(&scenes, &queries, &a.out)?;
    let qpath = queries_path_for(&a.out);
    let lines: usize = scenes.iter().map(|s| s.lines.len()).sum();
    println!(
        "scenes {} lines {} queries tir {} cpp {} ncpp {}",
        scenes.len(),
        lines,
        queries.tir_queries.len(),
        queries.ppr_cpp_queries.len(),
        queries.ppr_ncpp_queries.len()
    );
    println!("wrote {} and {}", a.out.display(), qpath.display());
    write_manifests(&RunManifest {
        command: "gen",
        arguments: a,
        seeds: vec![("corpus", a.seed)],
        threads,
        inputs: Vec::new(),
        outputs: digests(&[&a.out, &qpath])?,
        version: env!("CARGO_PKG_VERSION"),
    })
}

/// Sorted distinct characters of every line.
fn corpus_alphabet(scenes: &[Scene]) -> String {
    let chars: BTreeSet<char> =
        scenes.iter().flat_map(|s| s.lines.iter().flat_map(|l| l.transcription.chars())).collect();
    chars.into_iter().collect()
}

fn train_cmd(a: &TrainArgs, threads: usize) -> Result<(), CliError> {
    let strategy: Strategy = a.strategy.parse()?;
    require_file(&a.corpus)?;
    let scenes = load_scenes(&a.corpus)?;
    let cfg = TrainConfig {
        strategy,
        epochs: a.epochs,
        learning_rate: a.lr,
        batch: a.batch,
        seed: a.seed,
        n_max: a.n_max,
        samples_per_line: a.samples_per_line,
        model: ModelConfig {
            t: a.model.t,
            c: a.model.dim,
            alphabet: corpus_alphabet(&scenes),
            margin: a.margin,
            noise_sigma: a.model.noise,
        },
        ..TrainConfig::default()
    };
    cfg.validate()?;
    info!("training {strategy} on {} scenes", scenes.len());
    let (params, report) = train(&scenes, &cfg)?;
    if !params.is_finite() {
        return Err(CliError::numerical("training produced non-finite parameters"));
    }
    for e in &report.epochs {
        println!(
            "epoch {} l_cms {} l_mil {} active {} filtered {} satisfied {}",
            e.epoch + 1,
            sig6(e.mean_l_cms()),
            sig6(e.loss.l_mil / e.batches.max(1) as f64),
            e.counters.active,
            e.counters.filtered,
            e.counters.satisfied
        );
    }
    ensure_parent(&a.out)?;
    save_checkpoint(&params, &a.out)?;
    let loss_path = with_suffix(&a.out, ".loss.json");
    let json = serde_json::to_vec_pretty(&report).expect("loss report serializes");
    fs::write(&loss_path, json).map_err(|e| CliError::io(&loss_path, e))?;
    println!("wrote {} and {}", a.out.display(), loss_path.display());
    write_manifests(&RunManifest {
        command: "train",
        arguments: a,
        seeds: vec![("train", a.seed)],
        threads,
        inputs: digests(&[&a.corpus])?,
        outputs: digests(&[&a.out, &loss_path])?,
        version: env!("CARGO_PKG_VERSION"),
    })
}

/// Rejects corpora whose characters the checkpoint cannot embed.
fn check_alphabet(scenes: &[Scene], queries: Option<&QuerySet>, params: &ModelParams) -> Result<(), CliError> {
    let known: BTreeSet<char> = params.config.alphabet.chars().collect();
    let lines = scenes.iter().flat_map(|s| s.lines.iter().map(|l| l.transcription.as_str()));
    let qs = queries.into_iter().flat_map(|q| q.all().map(|(t, _)| t));
    for text in lines.chain(qs) {
        if let Some(ch) = text.chars().find(|c| !known.contains(c)) {
            return Err(CliError::data(format!(
                "{text:?} contains {ch:?}, which is outside the checkpoint alphabet {:?}",
                params.config.alphabet
            )));
        }
    }
    Ok(())
}

fn eval(a: &EvalArgs, threads: usize) -> Result<(), CliError> {
    let matcher: Matcher = a.matcher.parse()?;
    let task: Task = a.task.parse()?;
    require_file(&a.corpus)?;
    require_file(&queries_path_for(&a.corpus))?;
    require_file(&a.checkpoint)?;
    let (scenes, queries) = load_corpus(&a.corpus)?;
    let params = load_checkpoint(&a.checkpoint)?;
    check_alphabet(&scenes, Some(&queries), &params)?;
    let opts = EvalOptions { task, seed: a.noise_seed, policy: BagPolicy::from_corpus(&scenes)?, threads };
    let report = pstr_core::evaluate(&scenes, &queries, &params, matcher, &opts)?;
    println!("matcher {matcher} queries {}", report.queries.len());
    println!("map_tir {}", opt6(report.map_tir));
    println!("map_ppr {}", opt6(report.map_ppr));
    println!("map_cpp {}", opt6(report.map_cpp));
    println!("map_ncpp {}", opt6(report.map_ncpp));
    println!("median_query_seconds {}", sig6(report.median_query_seconds));
    ensure_parent(&a.out)?;
    report.save(&a.out)?;
    let qpath = queries_path_for(&a.corpus);
    write_manifests(&RunManifest {
        command: "eval",
        arguments: a,
        seeds: vec![("noise", a.noise_seed)],
        threads,
        inputs: digests(&[&a.corpus, &qpath, &a.checkpoint])?,
        outputs: digests(&[&a.out])?,
        version: env!("CARGO_PKG_VERSION"),
    })
}

fn query(a: &QueryArgs) -> Result<(), CliError> {
    if a.topk == 0 {
        return Err(CliError::usage("--topk must be at least 1"));
    }
    if a.text.is_empty() {
        return Err(CliError::usage("--text must not be empty"));
    }
    let matcher: Matcher = a.matcher.parse()?;
    require_file(&a.corpus)?;
    require_file(&a.checkpoint)?;
    let scenes = load_scenes(&a.corpus)?;
    let params = load_checkpoint(&a.checkpoint)?;
    check_alphabet(&scenes, None, &params)?;
    if let Some(ch) = a.text.chars().find(|c| !params.config.alphabet.contains(*c)) {
        log::warn!("query character {ch:?} is outside the alphabet and maps to the unknown row");
    }
    let gallery = Gallery::build(&scenes, &params, matcher, &BagPolicy::from_corpus(&scenes)?, a.noise_seed)?;
    let scores = gallery.score(&encode_query(&a.text, &params)?);
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    for (r, &i) in rank(&values, gallery.scene_ids()).iter().take(a.topk).enumerate() {
        let best = &scores[i];
        let line = &scenes[i].lines[best.line].transcription;
        let mut row = format!("{:>3} {} {} {line}", r + 1, scenes[i].scene_id, sig6(best.score));
        if let Some(path) = &best.path {
            let p: Vec<String> = path.iter().map(usize::to_string).collect();
            row.push_str(&format!(" path [{}]", p.join(",")));
        }
        println!("{row}");
    }
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<(), CliError> {
    let strategies: Vec<Strategy> =
        if a.strategy.eq_ignore_ascii_case("all") { Strategy::ALL.to_vec() } else { vec![a.strategy.parse()?] };
    if a.points == 0 {
        return Err(CliError::usage("--points must be at least 1"));
    }
    let alphabet = "abcdefgh";
    let corpus_cfg = CorpusConfig {
        seed: a.seed,
        n_scenes: 3,
        lines_per_scene: (1, 2),
        word_length: (3, 6),
        alphabet: alphabet.into(),
        ..CorpusConfig::default()
    };
    let (scenes, _) = generate_corpus(&corpus_cfg)?;
    let model = ModelConfig { t: a.t, c: a.dim, alphabet: alphabet.into(), ..ModelConfig::default() };
    let tc = TrainConfig { model: model.clone(), ..TrainConfig::default() };
    tc.validate()?;
    if let Some(name) = &a.corrupt {
        let known = ModelParams::init(model.clone(), 0)?;
        if !known.named_tensors().iter().any(|(n, _)| n == name) {
            return Err(CliError::usage(format!("unknown tensor {name:?}")));
        }
    }
    let corrupt = |g: &mut pstr_core::encoder::Gradients| {
        if let Some(name) = &a.corrupt {
            for (n, m) in g.named_tensors_mut() {
                if &n == name {
                    m.as_mut_slice().iter_mut().for_each(|v| *v += 1.0);
                }
            }
        }
    };
    let mut failed = Vec::new();
    for strategy in strategies {
        let mut worst = (0.0f64, String::new());
        let (mut checked, mut skipped) = (0, 0);
        for p in 0..a.points as u64 {
            let seed = a.seed.wrapping_add(p);
            let params = ModelParams::init(model.clone(), seed.wrapping_add(100))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = Batch::sample(corpus_lines(&scenes), &tc, &mut rng, seed)?;
            let opts = GradcheckOptions { step: a.step, tolerance: a.tolerance, seed, ..GradcheckOptions::default() };
            let report = gradcheck(&params, &batch, strategy, &opts, Some(&corrupt))?;
            for t in &report.tensors {
                checked += t.checked;
                skipped += t.skipped_kinks;
                if t.max_rel_error > worst.0 || worst.1.is_empty() {
                    worst = (t.max_rel_error, t.tensor.clone());
                }
            }
            if !report.passed() {
                failed.push(strategy);
            }
        }
        let ok = !failed.contains(&strategy);
        println!(
            "{strategy} {} worst {} ({}) checked {checked} skipped_kinks {skipped}",
            if ok { "PASS" } else { "FAIL" },
            sig6(worst.0),
            worst.1
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        failed.dedup();
        let names: Vec<&str> = failed.iter().map(|s| s.name()).collect();
        Err(CliError::numerical(format!("gradient check failed for {}", names.join(", "))))
    }
}
