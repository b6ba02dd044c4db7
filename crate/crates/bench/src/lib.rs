//! Shared fixtures for the benchmarks.

use pstr_core::{generate_corpus, CorpusConfig, ModelConfig, ModelParams, QuerySet, Scene};

pub struct Fixture {
    pub scenes: Vec<Scene>,
    pub queries: QuerySet,
    pub params: ModelParams,
}

/// Default-sized corpus with freshly initialised `c`-wide encoders.
pub fn fixture(c: usize) -> Fixture {
    let (scenes, queries) = generate_corpus(&CorpusConfig::default()).expect("default corpus");
    let params = ModelParams::init(ModelConfig { c, ..ModelConfig::default() }, 0).expect("valid model");
    Fixture { scenes, queries, params }
}
