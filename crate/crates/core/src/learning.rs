//! Similarity losses, their gradients, finite-difference checks and SGD.
//!
//! A batch is a handful of text lines. Every string and span in a batch is
//! encoded once ("node"); losses read node features and push gradients back
//! into per-node accumulators, and each node is then back-propagated through
//! its encoder once. Max selections (hard mining, bag aggregation) and hinge
//! branches are treated as fixed, and every such decision is recorded in a
//! signature so finite-difference checks can tell when a step crossed one.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Scene, TextLine};
use crate::encoder::{
    backward, encode_scene_traced, encode_traced, EncodeTrace, Gradients, ModelConfig, ModelParams, SequenceFeature,
    Side,
};
use crate::error::{Error, Result};
use crate::featsim::{sim_f, sim_f_grad};
use crate::mil::{rank_loss, windows, RankStatus, Window, DEFAULT_N_MIN};
use crate::tensor::{dot, Matrix};
use crate::textsim::sim_t;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Cross-modal similarity on whole lines only.
    CmslA,
    /// Adds sampled pseudo-labels to the query pool.
    CmslB,
    /// Also treats the sampled proposals as lines labelled by their
    /// pseudo-labels.
    CmslC,
    /// Pseudo-label queries plus the binary bag loss.
    Mil,
    /// Pseudo-label queries plus the ranking bag loss.
    RankMil,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::CmslA, Strategy::CmslB, Strategy::CmslC, Strategy::Mil, Strategy::RankMil];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CmslA => "cmsl_a",
            Strategy::CmslB => "cmsl_b",
            Strategy::CmslC => "cmsl_c",
            Strategy::Mil => "mil",
            Strategy::RankMil => "rankmil",
        }
    }

    pub fn uses_bags(self) -> bool {
        matches!(self, Strategy::Mil | Strategy::RankMil)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `cmsl_a` and `cmsl-a` spellings.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Lines per minibatch.
    pub batch: usize,
    pub seed: u64,
    pub n_min: usize,
    /// Largest window in characters; `None` means the whole line.
    pub n_max: Option<usize>,
    /// Pseudo-labels drawn from each line's bag per batch.
    pub samples_per_line: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::RankMil,
            epochs: 20,
            learning_rate: 0.05,
            batch: 16,
            seed: 0,
            n_min: DEFAULT_N_MIN,
            n_max: None,
            samples_per_line: 2,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.n_min < 2 || self.n_max.is_some_and(|m| m < self.n_min) {
            return Err(Error::Config(format!(
                "window sizes must satisfy 2 <= n_min <= n_max, got n_min={} n_max={:?}",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }

    fn n_max_for(&self, len: usize) -> usize {
        self.n_max.map_or(len, |m| m.min(len))
    }
}

/// Loss values of one labelled collection against another, by name.
pub type Labeled<'a> = (&'a str, &'a SequenceFeature);

/// `sum_i max_j |sim_f(a_i, b_j) - sim_t(a_i, b_j)|`.
pub fn l_sim(a: &[Labeled<'_>], b: &[Labeled<'_>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("l_sim needs two non-empty collections".into()));
    }
    let mut total = 0.0;
    for (ta, fa) in a {
        let mut worst: f64 = 0.0;
        for (tb, fb) in b {
            worst = worst.max((sim_f(fa, fb) - sim_t(ta, tb)?).abs());
        }
        total += worst;
    }
    Ok(total)
}

/// `l_sim(Q, P) + l_sim(P, P) + l_sim(Q, Q)`.
pub fn l_cms(queries: &[Labeled<'_>], lines: &[Labeled<'_>]) -> Result<f64> {
    Ok(l_sim(queries, lines)? + l_sim(lines, lines)? + l_sim(queries, queries)?)
}

/// A pseudo-label drawn from a line's bag.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    pub line: usize,
    pub window: Window,
    pub label: String,
}

/// Training data for one gradient step.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub lines: Vec<&'a TextLine>,
    pub samples: Vec<PseudoSample>,
    /// `(sample, line)`: score the sample's label against that line's bag.
    pub bag_pairs: Vec<(usize, usize)>,
    pub n_min: usize,
    pub n_max: Option<usize>,
    pub noise_seed: u64,
}

impl<'a> Batch<'a> {
    /// Samples pseudo-labels from every line long enough for a window and
    /// pairs each with every bag of the batch.
    pub fn sample(lines: Vec<&'a TextLine>, cfg: &TrainConfig, rng: &mut impl Rng, noise_seed: u64) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            let len = line.len();
            if len < 2 || len < cfg.n_min {
                continue;
            }
            let wins = windows(len, cfg.n_min, cfg.n_max_for(len))?;
            let chars: Vec<char> = line.transcription.chars().collect();
            for _ in 0..cfg.samples_per_line {
                let w = *wins.choose(rng).expect("windows are non-empty");
                let label = chars[w.start..w.start + w.n].iter().collect();
                samples.push(PseudoSample { line: i, window: w, label });
            }
        }
        let bag_lines: Vec<usize> = (0..lines.len()).filter(|&j| lines[j].len() >= cfg.n_min).collect();
        let bag_pairs = (0..samples.len()).flat_map(|s| bag_lines.iter().map(move |&j| (s, j))).collect();
        Ok(Batch { lines, samples, bag_pairs, n_min: cfg.n_min, n_max: cfg.n_max, noise_seed })
    }

    fn bag_windows(&self, line: usize) -> Result<Vec<Window>> {
        let len = self.lines[line].len();
        windows(len, self.n_min, self.n_max.map_or(len, |m| m.min(len)))
    }
}

/// Counts of how ranking samples were treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCounters {
    pub active: usize,
    pub filtered: usize,
    pub satisfied: usize,
    pub not_contained: usize,
}

impl RankCounters {
    fn record(&mut self, s: RankStatus) {
        match s {
            RankStatus::Active => self.active += 1,
            RankStatus::Filtered => self.filtered += 1,
            RankStatus::Satisfied => self.satisfied += 1,
            RankStatus::NotContained => self.not_contained += 1,
        }
    }

    fn add(&mut self, o: &RankCounters) {
        self.active += o.active;
        self.filtered += o.filtered;
        self.satisfied += o.satisfied;
        self.not_contained += o.not_contained;
    }
}

/// Loss terms of one batch at fixed parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_sim_qp: f64,
    pub l_sim_pp: f64,
    pub l_sim_qq: f64,
    pub l_mil: f64,
}

impl LossParts {
    pub fn l_cms(&self) -> f64 {
        self.l_sim_qp + self.l_sim_pp + self.l_sim_qq
    }

    pub fn total(&self) -> f64 {
        self.l_cms() + self.l_mil
    }

    fn add(&mut self, o: &LossParts) {
        self.l_sim_qp += o.l_sim_qp;
        self.l_sim_pp += o.l_sim_pp;
        self.l_sim_qq += o.l_sim_qq;
        self.l_mil += o.l_mil;
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: LossParts,
    pub counters: RankCounters,
    /// Every discrete choice made while evaluating the loss.
    pub signature: Vec<i64>,
    pub grads: Option<Gradients>,
}

struct Node {
    text: String,
    feature: SequenceFeature,
    trace: EncodeTrace,
    tanh: Vec<f64>,
    norm: f64,
    grad: Option<Matrix>,
}

impl Node {
    fn new(text: String, (feature, trace): (SequenceFeature, EncodeTrace)) -> Self {
        let tanh: Vec<f64> = feature.as_slice().iter().map(|v| v.tanh()).collect();
        let norm = dot(&tanh, &tanh).sqrt();
        Node { text, feature, trace, tanh, norm, grad: None }
    }
}

struct Graph {
    nodes: Vec<Node>,
    want_grad: bool,
    signature: Vec<i64>,
}

impl Graph {
    fn push(&mut self, n: Node) -> usize {
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn cos(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.nodes[i], &self.nodes[j]);
        if a.norm == 0.0 || b.norm == 0.0 {
            return 0.0;
        }
        dot(&a.tanh, &b.tanh) / (a.norm * b.norm)
    }

    /// Adds `coef * d cos(i, j)` to both nodes' gradients.
    fn push_cos_grad(&mut self, i: usize, j: usize, coef: f64) {
        if !self.want_grad || coef == 0.0 {
            return;
        }
        let (_, ga, gb) = sim_f_grad(&self.nodes[i].feature, &self.nodes[j].feature);
        for (k, g) in [(i, ga), (j, gb)] {
            let slot = &mut self.nodes[k].grad;
            match slot {
                Some(acc) => acc.axpy(coef, &g),
                None => {
                    let mut g = g;
                    g.as_mut_slice().iter_mut().for_each(|v| *v *= coef);
                    *slot = Some(g);
                }
            }
        }
    }

    fn l_sim(&mut self, a: &[usize], b: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &i in a {
            let mut best = (0usize, -1.0f64, 0.0f64);
            for &j in b {
                let e = self.cos(i, j) - sim_t(&self.nodes[i].text, &self.nodes[j].text)?;
                if e.abs() > best.1 {
                    best = (j, e.abs(), e);
                }
            }
            let (j, abs, e) = best;
            total += abs;
            self.signature.extend([j as i64, sign_code(e)]);
            self.push_cos_grad(i, j, if e == 0.0 { 0.0 } else { e.signum() });
        }
        Ok(total)
    }

    fn argmax(&self, q: usize, candidates: &[usize]) -> (usize, f64) {
        let mut best = (candidates[0], self.cos(q, candidates[0]));
        for &c in &candidates[1..] {
            let s = self.cos(q, c);
            if s > best.1 {
                best = (c, s);
            }
        }
        best
    }
}

fn sign_code(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn status_code(s: RankStatus) -> i64 {
    match s {
        RankStatus::NotContained => 0,
        RankStatus::Filtered => 1,
        RankStatus::Active => 2,
        RankStatus::Satisfied => 3,
    }
}

/// Loss (and optionally gradients) of one batch under a strategy.
pub fn evaluate_batch(
    params: &ModelParams,
    batch: &Batch<'_>,
    strategy: Strategy,
    want_grad: bool,
) -> Result<Evaluation> {
    if batch.lines.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let seed = batch.noise_seed;
    let mut g = Graph { nodes: Vec::new(), want_grad, signature: Vec::new() };

    let mut queries = Vec::new();
    let mut lines = Vec::new();
    for line in &batch.lines {
        let text = line.transcription.clone();
        queries.push(g.push(Node::new(text.clone(), encode_traced(Side::Query, &text, params)?)));
        lines.push(g.push(Node::new(text, encode_scene_traced(line, 0.0, 1.0, params, seed)?)));
    }
    let mut sample_nodes: Vec<Option<usize>> = vec![None; batch.samples.len()];
    // bag strategies score their pseudo-label queries against bags, so those
    // queries join the pool as well
    let pool = match strategy {
        Strategy::CmslA => false,
        Strategy::CmslB | Strategy::CmslC => true,
        Strategy::Mil | Strategy::RankMil => !batch.bag_pairs.is_empty(),
    };
    if pool {
        for (i, s) in batch.samples.iter().enumerate() {
            let id = g.push(Node::new(s.label.clone(), encode_traced(Side::Query, &s.label, params)?));
            queries.push(id);
            sample_nodes[i] = Some(id);
        }
    }
    if strategy == Strategy::CmslC {
        for s in &batch.samples {
            let line = batch.lines[s.line];
            let enc = encode_scene_traced(line, s.window.start_frac, s.window.end_frac, params, seed)?;
            lines.push(g.push(Node::new(s.label.clone(), enc)));
        }
    }

    let mut loss = LossParts {
        l_sim_qp: g.l_sim(&queries, &lines)?,
        l_sim_pp: g.l_sim(&lines, &lines)?,
        l_sim_qq: g.l_sim(&queries, &queries)?,
        l_mil: 0.0,
    };
    let mut counters = RankCounters::default();

    if strategy.uses_bags() && !batch.bag_pairs.is_empty() {
        let margin = params.config.margin;
        // bag features per line, encoded on first use
        let mut bags: Vec<Option<(Vec<usize>, Vec<String>)>> = vec![None; batch.lines.len()];
        // each query's bag losses are averaged over the bags it meets
        let mut per_sample = vec![0usize; batch.samples.len()];
        for &(s, _) in &batch.bag_pairs {
            per_sample[s] += 1;
        }
        for &(s, j) in &batch.bag_pairs {
            let w = 1.0 / per_sample[s] as f64;
            if bags[j].is_none() {
                let line = batch.lines[j];
                let chars: Vec<char> = line.transcription.chars().collect();
                let mut ids = Vec::new();
                let mut labels = Vec::new();
                for w in batch.bag_windows(j)? {
                    let label: String = chars[w.start..w.start + w.n].iter().collect();
                    let enc = encode_scene_traced(line, w.start_frac, w.end_frac, params, seed)?;
                    ids.push(g.push(Node::new(label.clone(), enc)));
                    labels.push(label);
                }
                bags[j] = Some((ids, labels));
            }
            let q = match sample_nodes[s] {
                Some(q) => q,
                None => {
                    let label = &batch.samples[s].label;
                    let q = g.push(Node::new(label.clone(), encode_traced(Side::Query, label, params)?));
                    sample_nodes[s] = Some(q);
                    q
                }
            };
            let (ids, labels) = bags[j].as_ref().expect("bag was just built");
            let contained = labels.iter().any(|l| l.contains(g.nodes[q].text.as_str()));
            let (theta, best) = g.argmax(q, ids);
            g.signature.push(theta as i64);
            match strategy {
                Strategy::Mil => {
                    let e = best - if contained { 1.0 } else { 0.0 };
                    loss.l_mil += w * e.abs();
                    g.signature.push(sign_code(e));
                    g.push_cos_grad(q, theta, if e == 0.0 { 0.0 } else { w * e.signum() });
                }
                Strategy::RankMil => {
                    let delta = best - g.cos(q, lines[j]);
                    let (l, status) = rank_loss(delta, contained, margin);
                    loss.l_mil += w * l;
                    counters.record(status);
                    g.signature.push(status_code(status));
                    if status == RankStatus::Active {
                        g.push_cos_grad(q, theta, -w);
                        g.push_cos_grad(q, lines[j], w);
                    }
                }
                _ => unreachable!("only bag strategies reach here"),
            }
        }
    }

    for (name, v) in [
        ("l_sim(Q,P)", loss.l_sim_qp),
        ("l_sim(P,P)", loss.l_sim_pp),
        ("l_sim(Q,Q)", loss.l_sim_qq),
        ("bag loss", loss.l_mil),
    ] {
        if !v.is_finite() {
            let first = batch.lines.first().map_or("", |l| l.transcription.as_str());
            return Err(Error::Numerical(format!("{name} is not finite for the batch starting with line {first:?}")));
        }
    }

    let grads = if want_grad {
        let mut grads = Gradients::zeros(&params.config);
        for node in &g.nodes {
            if let Some(d) = &node.grad {
                backward(params, &node.trace, d, &mut grads);
            }
        }
        Some(grads)
    } else {
        None
    };
    Ok(Evaluation { loss, counters, signature: g.signature, grads })
}

/// Analytic gradient of the batch loss with respect to every tensor.
pub fn grad_total(params: &ModelParams, batch: &Batch<'_>, strategy: Strategy) -> Result<(LossParts, Gradients)> {
    let ev = evaluate_batch(params, batch, strategy, true)?;
    Ok((ev.loss, ev.grads.expect("gradients were requested")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub tensor: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries skipped because a perturbation flipped a discrete choice.
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub strategy: Strategy,
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.checked > 0 && t.max_rel_error <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Entries compared per tensor.
    pub entries_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { step: 1e-5, tolerance: 1e-4, entries_per_tensor: 6, floor: 1e-5, seed: 0 }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients with central differences on sampled entries
/// of every tensor. `corrupt` alters the analytic gradients before the
/// comparison; it exists to test that failures are reported.
pub fn gradcheck(
    params: &ModelParams,
    batch: &Batch<'_>,
    strategy: Strategy,
    opts: &GradcheckOptions,
    corrupt: Option<&dyn Fn(&mut Gradients)>,
) -> Result<GradcheckReport> {
    let base = evaluate_batch(params, batch, strategy, true)?;
    let mut grads = base.grads.expect("gradients were requested");
    if let Some(f) = corrupt {
        f(&mut grads);
    }
    let analytic: Vec<(String, Matrix)> = grads.named_tensors().into_iter().map(|(n, m)| (n, m.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut tensors = Vec::new();
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let len = g.as_slice().len();
        // entries with a non-zero analytic gradient first, so sparse tables
        // are exercised where the batch actually touches them
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        order.sort_by_key(|&k| g.as_slice()[k] == 0.0);
        let mut check = TensorCheck { tensor: name.clone(), max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };
        for k in order {
            if check.checked >= opts.entries_per_tensor {
                break;
            }
            let orig = work.named_tensors()[ti].1.as_slice()[k];
            let eval_at = |work: &mut ModelParams, v: f64| -> Result<Evaluation> {
                work.named_tensors_mut()[ti].1.as_mut_slice()[k] = v;
                evaluate_batch(work, batch, strategy, false)
            };
            let plus = eval_at(&mut work, orig + opts.step)?;
            let minus = eval_at(&mut work, orig - opts.step)?;
            work.named_tensors_mut()[ti].1.as_mut_slice()[k] = orig;
            if plus.signature != base.signature || minus.signature != base.signature {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss.total() - minus.loss.total()) / (2.0 * opts.step);
            let err = relative_error(g.as_slice()[k], numeric, opts.floor);
            check.max_rel_error = check.max_rel_error.max(err);
            check.checked += 1;
        }
        tensors.push(check);
    }
    Ok(GradcheckReport { strategy, step: opts.step, tolerance: opts.tolerance, tensors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub batches: usize,
    pub loss: LossParts,
    pub counters: RankCounters,
}

impl EpochLoss {
    pub fn mean_l_cms(&self) -> f64 {
        self.loss.l_cms() / self.batches.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub strategy: Strategy,
    pub epochs: Vec<EpochLoss>,
    pub final_param_norm: f64,
}

/// Every text line of a corpus, scene by scene.
pub fn corpus_lines(scenes: &[Scene]) -> Vec<&TextLine> {
    scenes.iter().flat_map(|s| s.lines.iter()).collect()
}

/// Seed of the scene-feature noise for batch `b` of `epoch`.
fn batch_noise_seed(seed: u64, epoch: usize, b: usize) -> u64 {
    seed ^ ((epoch as u64) << 32 | b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Minibatch SGD at a fixed learning rate. Each step divides the summed
/// batch gradient by the number of lines in the batch.
pub fn train(scenes: &[Scene], cfg: &TrainConfig) -> Result<(ModelParams, LossReport)> {
    train_from(ModelParams::init(cfg.model.clone(), cfg.seed)?, scenes, cfg)
}

pub fn train_from(mut params: ModelParams, scenes: &[Scene], cfg: &TrainConfig) -> Result<(ModelParams, LossReport)> {
    cfg.validate()?;
    let all = corpus_lines(scenes);
    if all.is_empty() {
        return Err(Error::Argument("cannot train on an empty corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..all.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut report = EpochLoss { epoch, batches: 0, loss: LossParts::default(), counters: RankCounters::default() };
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let lines = chunk.iter().map(|&i| all[i]).collect();
            let batch = Batch::sample(lines, cfg, &mut rng, batch_noise_seed(cfg.seed, epoch, b))?;
            let ev = evaluate_batch(&params, &batch, cfg.strategy, true)?;
            let grads = ev.grads.expect("gradients were requested");
            let step = cfg.learning_rate / chunk.len() as f64;
            for ((_, p), (_, d)) in params.named_tensors_mut().into_iter().zip(grads.named_tensors()) {
                p.axpy(-step, d);
            }
            report.loss.add(&ev.loss);
            report.counters.add(&ev.counters);
            report.batches += 1;
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!("parameters diverged in epoch {epoch}")));
        }
        debug!("epoch {epoch}: l_cms {:.6} l_mil {:.6} {:?}", report.loss.l_cms(), report.loss.l_mil, report.counters);
        epochs.push(report);
    }
    if let Some(last) = epochs.last() {
        info!("trained {} for {} epochs, final mean l_cms {:.6}", cfg.strategy, cfg.epochs, last.mean_l_cms());
    }
    let final_param_norm = params.norm();
    Ok((params, LossReport { strategy: cfg.strategy, epochs, final_param_norm }))
}
