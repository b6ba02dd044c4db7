//! Query and scene encoders.
//!
//! Both sides share one architecture with separate parameters: a character
//! embedding table (row 0 is the unknown-character row), linear
//! interpolation of the `|word| x C` embedding to a fixed `T x C`, and a
//! bidirectional single-layer tanh recurrence
//! `h_t = tanh(W x_t + U h_{t-1} + b)` whose two directions are summed.
//!
//! The scene side stands in for region features: it encodes the characters
//! whose width-centres fall inside a span of a text line and adds seeded
//! Gaussian noise.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TextLine;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_T: usize = 15;
pub const DEFAULT_C: usize = 128;
pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;
pub const LOWERCASE: &str = "abcdefghijklmnopqrstuvwxyz";

/// A `T x C` sequence feature with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFeature(Matrix);

impl SequenceFeature {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::Argument("sequence feature must be non-empty".into()));
        }
        if !m.is_finite() {
            return Err(Error::Numerical("sequence feature has non-finite entries".into()));
        }
        Ok(SequenceFeature(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        SequenceFeature(m)
    }

    pub fn t(&self) -> usize {
        self.0.rows()
    }

    pub fn c(&self) -> usize {
        self.0.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub t: usize,
    pub c: usize,
    pub alphabet: String,
    pub margin: f64,
    pub noise_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t: DEFAULT_T,
            c: DEFAULT_C,
            alphabet: LOWERCASE.to_string(),
            margin: DEFAULT_MARGIN,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 || self.c < 1 {
            return Err(Error::Config(format!("need T >= 2 and C >= 1, got T={} C={}", self.t, self.c)));
        }
        if self.alphabet.is_empty() {
            return Err(Error::Config("alphabet must not be empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.alphabet.chars().find(|ch| !seen.insert(*ch)) {
            return Err(Error::Config(format!("alphabet repeats {dup:?}")));
        }
        if !(self.margin.is_finite() && (0.0..1.0).contains(&self.margin)) {
            return Err(Error::Config(format!("margin must lie in [0, 1), got {}", self.margin)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Rows in each embedding table: the alphabet plus the unknown row.
    pub fn vocab_size(&self) -> usize {
        self.alphabet.chars().count() + 1
    }
}

/// One direction of the recurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recurrence {
    pub w: Matrix,
    pub u: Matrix,
    /// `1 x C`
    pub b: Matrix,
}

impl Recurrence {
    fn zeros(c: usize) -> Self {
        Recurrence { w: Matrix::zeros(c, c), u: Matrix::zeros(c, c), b: Matrix::zeros(1, c) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embed: Matrix,
    pub fwd: Recurrence,
    pub bwd: Recurrence,
}

impl EncoderParams {
    pub fn zeros(vocab: usize, c: usize) -> Self {
        EncoderParams { embed: Matrix::zeros(vocab, c), fwd: Recurrence::zeros(c), bwd: Recurrence::zeros(c) }
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 7] {
        [
            ("embed", &self.embed),
            ("fwd.w", &self.fwd.w),
            ("fwd.u", &self.fwd.u),
            ("fwd.b", &self.fwd.b),
            ("bwd.w", &self.bwd.w),
            ("bwd.u", &self.bwd.u),
            ("bwd.b", &self.bwd.b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 7] {
        [
            ("embed", &mut self.embed),
            ("fwd.w", &mut self.fwd.w),
            ("fwd.u", &mut self.fwd.u),
            ("fwd.b", &mut self.fwd.b),
            ("bwd.w", &mut self.bwd.w),
            ("bwd.u", &mut self.bwd.u),
            ("bwd.b", &mut self.bwd.b),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Query,
    Scene,
}

impl Side {
    pub fn prefix(self) -> &'static str {
        match self {
            Side::Query => "query",
            Side::Scene => "scene",
        }
    }
}

/// Query and scene encoder parameters. The two sides share nothing.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub query: EncoderParams,
    pub scene: EncoderParams,
    index: HashMap<char, usize>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.query == other.query && self.scene == other.scene
    }
}

fn char_index(alphabet: &str) -> HashMap<char, usize> {
    alphabet.chars().enumerate().map(|(i, ch)| (ch, i + 1)).collect()
}

impl ModelParams {
    /// Seeded initialisation, every entry uniform in `(-0.5, 0.5) / sqrt(C)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (v, c) = (config.vocab_size(), config.c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (c as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| (rng.random::<f64>() - 0.5) * scale).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let mut side = || EncoderParams {
            embed: draw(v, c),
            fwd: Recurrence { w: draw(c, c), u: draw(c, c), b: draw(1, c) },
            bwd: Recurrence { w: draw(c, c), u: draw(c, c), b: draw(1, c) },
        };
        let query = side();
        let scene = side();
        Ok(ModelParams::from_parts(config, query, scene))
    }

    pub fn from_parts(config: ModelConfig, query: EncoderParams, scene: EncoderParams) -> Self {
        let index = char_index(&config.alphabet);
        ModelParams { config, query, scene, index }
    }

    pub fn encoder(&self, side: Side) -> &EncoderParams {
        match side {
            Side::Query => &self.query,
            Side::Scene => &self.scene,
        }
    }

    pub fn encoder_mut(&mut self, side: Side) -> &mut EncoderParams {
        match side {
            Side::Query => &mut self.query,
            Side::Scene => &mut self.scene,
        }
    }

    /// Table row for a character; unknown characters map to row 0.
    pub fn char_id(&self, ch: char) -> usize {
        self.index.get(&ch).copied().unwrap_or(0)
    }

    pub fn char_ids(&self, word: &str) -> Vec<usize> {
        word.chars().map(|ch| self.char_id(ch)).collect()
    }

    /// All tensors with qualified names such as `query.fwd.w`.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        named(&self.query, &self.scene)
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::with_capacity(14);
        for (side, enc) in [(Side::Query, &mut self.query), (Side::Scene, &mut self.scene)] {
            for (name, m) in enc.tensors_mut() {
                out.push((format!("{}.{name}", side.prefix()), m));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.named_tensors().iter().map(|(_, m)| m.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}

fn named<'a>(query: &'a EncoderParams, scene: &'a EncoderParams) -> Vec<(String, &'a Matrix)> {
    let mut out = Vec::with_capacity(14);
    for (side, enc) in [(Side::Query, query), (Side::Scene, scene)] {
        for (name, m) in enc.tensors() {
            out.push((format!("{}.{name}", side.prefix()), m));
        }
    }
    out
}

/// Gradient buffers shaped like the model tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub query: EncoderParams,
    pub scene: EncoderParams,
}

impl Gradients {
    pub fn zeros(config: &ModelConfig) -> Self {
        Gradients {
            query: EncoderParams::zeros(config.vocab_size(), config.c),
            scene: EncoderParams::zeros(config.vocab_size(), config.c),
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut EncoderParams {
        match side {
            Side::Query => &mut self.query,
            Side::Scene => &mut self.scene,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        named(&self.query, &self.scene)
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::with_capacity(14);
        for (side, enc) in [(Side::Query, &mut self.query), (Side::Scene, &mut self.scene)] {
            for (name, m) in enc.tensors_mut() {
                out.push((format!("{}.{name}", side.prefix()), m));
            }
        }
        out
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, m) in self.named_tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn norm(&self) -> f64 {
        self.named_tensors().iter().map(|(_, m)| m.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.as_slice().iter().all(|v| *v == 0.0))
    }
}

/// Rows of `table` for each character of `word`.
pub fn embed_chars(word: &str, table: &Matrix, params: &ModelParams) -> Result<Matrix> {
    if word.is_empty() {
        return Err(Error::Argument("cannot embed an empty word".into()));
    }
    Ok(gather(table, &params.char_ids(word)))
}

fn gather(table: &Matrix, ids: &[usize]) -> Matrix {
    let c = table.cols();
    let mut data = Vec::with_capacity(ids.len() * c);
    for &id in ids {
        data.extend_from_slice(table.row(id));
    }
    Matrix::from_vec(ids.len(), c, data)
}

/// For output row `t`: `(i0, i1, alpha)` meaning `(1 - alpha) * in[i0] + alpha * in[i1]`.
fn interp_plan(l: usize, t: usize) -> Vec<(usize, usize, f64)> {
    if l == 1 {
        return vec![(0, 0, 0.0); t];
    }
    if t == 1 {
        return vec![(0, 0, 0.0)];
    }
    (0..t)
        .map(|row| {
            if row + 1 == t {
                return (l - 1, l - 1, 0.0);
            }
            let pos = row as f64 * (l - 1) as f64 / (t - 1) as f64;
            let i0 = (pos.floor() as usize).min(l - 2);
            let alpha = pos - i0 as f64;
            (i0, i0 + 1, alpha)
        })
        .collect()
}

/// Linear interpolation along the length axis with aligned endpoints.
pub fn interpolate_to_t(m: &Matrix, t: usize) -> Result<Matrix> {
    if m.rows() == 0 {
        return Err(Error::Argument("cannot interpolate an empty matrix".into()));
    }
    if t == 0 {
        return Err(Error::Argument("target length must be positive".into()));
    }
    Ok(interpolate(m, &interp_plan(m.rows(), t)))
}

fn interpolate(m: &Matrix, plan: &[(usize, usize, f64)]) -> Matrix {
    let c = m.cols();
    let mut out = Matrix::zeros(plan.len(), c);
    for (row, &(i0, i1, a)) in plan.iter().enumerate() {
        let (r0, r1) = (m.row(i0), m.row(i1));
        for (o, (x0, x1)) in out.row_mut(row).iter_mut().zip(r0.iter().zip(r1)) {
            *o = (1.0 - a) * x0 + a * x1;
        }
    }
    out
}

/// Intermediate values of one encoder pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncodeTrace {
    side: Side,
    ids: Vec<usize>,
    plan: Vec<(usize, usize, f64)>,
    x: Matrix,
    hf: Matrix,
    hb: Matrix,
}

fn run_encoder(enc: &EncoderParams, side: Side, ids: Vec<usize>, t: usize) -> (Matrix, EncodeTrace) {
    let c = enc.embed.cols();
    let plan = interp_plan(ids.len(), t);
    let x = interpolate(&gather(&enc.embed, &ids), &plan);
    let mut hf = Matrix::zeros(t, c);
    let mut hb = Matrix::zeros(t, c);
    let mut z = vec![0.0; c];
    let mut tmp = vec![0.0; c];
    for step in 0..t {
        enc.fwd.w.matvec_into(x.row(step), &mut z);
        if step > 0 {
            enc.fwd.u.matvec_into(hf.row(step - 1), &mut tmp);
            z.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        }
        for ((h, zi), bi) in hf.row_mut(step).iter_mut().zip(&z).zip(enc.fwd.b.row(0)) {
            *h = (zi + bi).tanh();
        }
    }
    for step in (0..t).rev() {
        enc.bwd.w.matvec_into(x.row(step), &mut z);
        if step + 1 < t {
            enc.bwd.u.matvec_into(hb.row(step + 1), &mut tmp);
            z.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        }
        for ((h, zi), bi) in hb.row_mut(step).iter_mut().zip(&z).zip(enc.bwd.b.row(0)) {
            *h = (zi + bi).tanh();
        }
    }
    let mut out = hf.clone();
    out.axpy(1.0, &hb);
    (out, EncodeTrace { side, ids, plan, x, hf, hb })
}

/// Accumulates parameter gradients given `d_out = dL/d(encoder output)`.
pub(crate) fn backward(params: &ModelParams, trace: &EncodeTrace, d_out: &Matrix, grads: &mut Gradients) {
    let enc = params.encoder(trace.side);
    let g = grads.side_mut(trace.side);
    let (t, c) = trace.x.shape();
    let mut dx = Matrix::zeros(t, c);
    let mut carry = vec![0.0; c];
    let mut dz = vec![0.0; c];

    // forward direction: gradients flow from the last step back to the first
    for step in (0..t).rev() {
        for (((d, h), o), cr) in dz.iter_mut().zip(trace.hf.row(step)).zip(d_out.row(step)).zip(&carry) {
            *d = (o + cr) * (1.0 - h * h);
        }
        g.fwd.w.add_outer(&dz, trace.x.row(step));
        if step > 0 {
            g.fwd.u.add_outer(&dz, trace.hf.row(step - 1));
        }
        g.fwd.b.row_mut(0).iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
        enc.fwd.w.matvec_t_add(&dz, dx.row_mut(step));
        carry.iter_mut().for_each(|v| *v = 0.0);
        enc.fwd.u.matvec_t_add(&dz, &mut carry);
    }

    carry.iter_mut().for_each(|v| *v = 0.0);
    for step in 0..t {
        for (((d, h), o), cr) in dz.iter_mut().zip(trace.hb.row(step)).zip(d_out.row(step)).zip(&carry) {
            *d = (o + cr) * (1.0 - h * h);
        }
        g.bwd.w.add_outer(&dz, trace.x.row(step));
        if step + 1 < t {
            g.bwd.u.add_outer(&dz, trace.hb.row(step + 1));
        }
        g.bwd.b.row_mut(0).iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
        enc.bwd.w.matvec_t_add(&dz, dx.row_mut(step));
        carry.iter_mut().for_each(|v| *v = 0.0);
        enc.bwd.u.matvec_t_add(&dz, &mut carry);
    }

    // interpolation and lookup
    for (step, &(i0, i1, a)) in trace.plan.iter().enumerate() {
        let d = dx.row(step).to_vec();
        let r0 = g.embed.row_mut(trace.ids[i0]);
        r0.iter_mut().zip(&d).for_each(|(e, v)| *e += (1.0 - a) * v);
        if a != 0.0 {
            let r1 = g.embed.row_mut(trace.ids[i1]);
            r1.iter_mut().zip(&d).for_each(|(e, v)| *e += a * v);
        }
    }
}

/// Encodes a word with either side's parameters, without noise.
pub fn encode_with(side: Side, word: &str, params: &ModelParams) -> Result<SequenceFeature> {
    Ok(encode_traced(side, word, params)?.0)
}

pub(crate) fn encode_traced(side: Side, word: &str, params: &ModelParams) -> Result<(SequenceFeature, EncodeTrace)> {
    if word.is_empty() {
        return Err(Error::Argument("cannot encode an empty word".into()));
    }
    let ids = params.char_ids(word);
    let (out, trace) = run_encoder(params.encoder(side), side, ids, params.config.t);
    if !out.is_finite() {
        return Err(Error::Numerical(format!("encoding {word:?} produced non-finite values")));
    }
    Ok((SequenceFeature::from_matrix_unchecked(out), trace))
}

pub fn encode_query(word: &str, params: &ModelParams) -> Result<SequenceFeature> {
    encode_with(Side::Query, word, params)
}

/// Indices of the characters whose width-centre lies in
/// `[start_frac, end_frac)` of the line's total width. If none does, the
/// character whose cell contains the span midpoint.
pub fn covered_chars(char_widths: &[f64], start_frac: f64, end_frac: f64) -> Vec<usize> {
    let total: f64 = char_widths.iter().sum();
    let (lo, hi) = (start_frac * total, end_frac * total);
    let mut out = Vec::new();
    let mut left = 0.0;
    for (i, w) in char_widths.iter().enumerate() {
        let centre = left + w / 2.0;
        if centre >= lo && centre < hi {
            out.push(i);
        }
        left += w;
    }
    if out.is_empty() && !char_widths.is_empty() {
        let mid = (lo + hi) / 2.0;
        let mut left = 0.0;
        let mut pick = char_widths.len() - 1;
        for (i, w) in char_widths.iter().enumerate() {
            if mid < left + w {
                pick = i;
                break;
            }
            left += w;
        }
        out.push(pick);
    }
    out
}

/// The string a span of a line actually shows under the centre rule.
pub fn covered_text(line: &TextLine, start_frac: f64, end_frac: f64) -> String {
    let chars: Vec<char> = line.transcription.chars().collect();
    covered_chars(&line.char_widths, start_frac, end_frac).into_iter().map(|i| chars[i]).collect()
}

fn span_seed(seed: u64, line: &TextLine, start_frac: f64, end_frac: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(line.transcription.as_bytes());
    h.update(start_frac.to_bits().to_le_bytes());
    h.update(end_frac.to_bits().to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

fn check_span(start_frac: f64, end_frac: f64) -> Result<()> {
    if !(0.0..1.0).contains(&start_frac) || !(end_frac > start_frac && end_frac <= 1.0) {
        return Err(Error::Argument(format!(
            "span must satisfy 0 <= start < end <= 1, got ({start_frac}, {end_frac})"
        )));
    }
    Ok(())
}

pub(crate) fn encode_scene_traced(
    line: &TextLine,
    start_frac: f64,
    end_frac: f64,
    params: &ModelParams,
    seed: u64,
) -> Result<(SequenceFeature, EncodeTrace)> {
    check_span(start_frac, end_frac)?;
    let chars: Vec<char> = line.transcription.chars().collect();
    let ids =
        covered_chars(&line.char_widths, start_frac, end_frac).into_iter().map(|i| params.char_id(chars[i])).collect();
    let (mut out, trace) = run_encoder(&params.scene, Side::Scene, ids, params.config.t);
    let sigma = params.config.noise_sigma;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(span_seed(seed, line, start_frac, end_frac));
        for v in out.as_mut_slice() {
            let n: f64 = rng.sample(StandardNormal);
            *v += sigma * n;
        }
    }
    if !out.is_finite() {
        return Err(Error::Numerical(format!("scene encoding of {:?} produced non-finite values", line.transcription)));
    }
    Ok((SequenceFeature::from_matrix_unchecked(out), trace))
}

/// Scene-side feature of the span `[start_frac, end_frac)` of a line.
pub fn encode_scene_span(
    line: &TextLine,
    start_frac: f64,
    end_frac: f64,
    params: &ModelParams,
    seed: u64,
) -> Result<SequenceFeature> {
    Ok(encode_scene_traced(line, start_frac, end_frac, params, seed)?.0)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PSTRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `{magic, version, config (JSON), named f64 LE arrays}`.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(params)?)?;
    Ok(())
}

pub fn checkpoint_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&params.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    let tensors = params.named_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            buf.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(buf)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_len = cur.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(config_len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("bad config record: {e}")))?;
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;

    let (v, c) = (config.vocab_size(), config.c);
    let mut query = EncoderParams::zeros(v, c);
    let mut scene = EncoderParams::zeros(v, c);
    let count = cur.u32("tensor count")? as usize;
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = cur.u32("tensor rows")? as usize;
        let cols = cur.u32("tensor cols")? as usize;
        let (side, local) =
            name.split_once('.').ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name:?}")))?;
        let enc = match side {
            "query" => &mut query,
            "scene" => &mut scene,
            _ => return Err(Error::Checkpoint(format!("unknown tensor {name:?}"))),
        };
        let slot = enc
            .tensors_mut()
            .into_iter()
            .find(|(n, _)| *n == local)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name:?}")))?;
        if slot.shape() != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {rows}x{cols} but the config implies {}x{}",
                slot.rows(),
                slot.cols()
            )));
        }
        let raw = cur.take(rows * cols * 8, &name)?;
        for (dst, chunk) in slot.as_mut_slice().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("tensor {name} appears twice")));
        }
    }
    if seen.len() != 14 {
        return Err(Error::Checkpoint(format!("expected 14 tensors, found {}", seen.len())));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
    }
    let params = ModelParams::from_parts(config, query, scene);
    if !params.is_finite() {
        return Err(Error::Checkpoint("checkpoint holds non-finite parameters".into()));
    }
    Ok(params)
}
