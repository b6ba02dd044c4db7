use std::fs;

use tempfile::TempDir;

use pstr_core::corpus::load_scenes;
use pstr_core::encoder::{checkpoint_bytes, checkpoint_from_bytes};
use pstr_core::{
    generate_corpus, load_checkpoint, load_corpus, queries_path_for, save_checkpoint, save_corpus, CorpusConfig, Error,
    ModelConfig, ModelParams,
};

fn small() -> CorpusConfig {
    CorpusConfig { n_scenes: 15, n_tir: 3, n_cpp: 3, n_ncpp: 3, ..CorpusConfig::default() }
}

#[test]
fn corpus_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("c.jsonl");
    let (scenes, queries) = generate_corpus(&small()).unwrap();
    save_corpus(&scenes, &queries, &path).unwrap();
    assert!(queries_path_for(&path).ends_with("c.queries.json"));
    let (s2, q2) = load_corpus(&path).unwrap();
    assert_eq!(scenes, s2);
    assert_eq!(queries, q2);
    // saving what was loaded reproduces the bytes
    let again = dir.path().join("d.jsonl");
    save_corpus(&s2, &q2, &again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn generation_is_seeded() {
    let a = generate_corpus(&small()).unwrap();
    let b = generate_corpus(&small()).unwrap();
    assert_eq!(a, b);
    let c = generate_corpus(&CorpusConfig { seed: 12, ..small() }).unwrap();
    assert_ne!(a.0, c.0);
}

fn write_lines(dir: &TempDir, lines: &[String]) -> std::path::PathBuf {
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn saved_lines(dir: &TempDir) -> Vec<String> {
    let path = dir.path().join("ok.jsonl");
    let (scenes, queries) = generate_corpus(&small()).unwrap();
    save_corpus(&scenes, &queries, &path).unwrap();
    fs::read_to_string(&path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn truncated_line_names_its_line_number() {
    let dir = TempDir::new().unwrap();
    let mut lines = saved_lines(&dir);
    let cut = lines[2].len() / 2;
    lines[2].truncate(cut);
    let err = load_scenes(&write_lines(&dir, &lines)).unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn negative_width_names_its_field() {
    let dir = TempDir::new().unwrap();
    let mut lines = saved_lines(&dir);
    let mut v: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    v["lines"][0]["char_widths"][2] = serde_json::json!(-0.5);
    lines[1] = v.to_string();
    let err = load_scenes(&write_lines(&dir, &lines)).unwrap_err();
    match &err {
        Error::Parse { line, field, .. } => {
            assert_eq!(*line, 2);
            assert!(field.contains("char_widths[2]"), "{field}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("positive"));
}

#[test]
fn width_count_must_match_transcription() {
    let dir = TempDir::new().unwrap();
    let mut lines = saved_lines(&dir);
    let mut v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    v["lines"][0]["char_widths"].as_array_mut().unwrap().pop();
    lines[0] = v.to_string();
    assert!(matches!(load_scenes(&write_lines(&dir, &lines)), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn duplicate_scene_ids_are_rejected() {
    let dir = TempDir::new().unwrap();
    let mut lines = saved_lines(&dir);
    lines[1] = lines[0].clone();
    assert!(matches!(load_scenes(&write_lines(&dir, &lines)), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn checkpoint_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("m.ckpt");
    let params = ModelParams::init(ModelConfig { c: 7, ..ModelConfig::default() }, 3).unwrap();
    save_checkpoint(&params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, params.config);
    for ((na, a), (nb, b)) in params.named_tensors().iter().zip(loaded.named_tensors()) {
        assert_eq!(na, &nb);
        assert_eq!(a.as_slice(), b.as_slice());
    }
    assert_eq!(checkpoint_bytes(&loaded).unwrap(), fs::read(&path).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let params = ModelParams::init(ModelConfig { c: 3, t: 4, ..ModelConfig::default() }, 1).unwrap();
    let bytes = checkpoint_bytes(&params).unwrap();
    let check = |b: &[u8]| assert!(matches!(checkpoint_from_bytes(b), Err(Error::Checkpoint(_))));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    check(&magic);
    let mut version = bytes.clone();
    version[8] = 2;
    check(&version);
    check(&bytes[..bytes.len() - 3]);
    let mut trailing = bytes.clone();
    trailing.push(0);
    check(&trailing);
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    check(&nan);
}
