//! Planted-signal activation generator.
//!
//! For a record with signal coefficient `y` (±1 for a binary label) the
//! tensor at layer `l`, token `t` is
//!
//! ```text
//! x[l][t] = noise + y · alpha0 · decay^l · u(l)   if t ∈ signal_tokens
//! x[l][t] = noise                                 otherwise
//! ```
//!
//! with `noise ~ N(0, sigma²)` per element. Everything is derived from
//! [`crate::rng`]:
//!
//! - `u(l, concept, variant)` is the normalized vector of `D` normals from
//!   `NormalStream(mix_seed(seed, [DIRECTION, l, concept_code, v]))` where
//!   `v` is 1 for Chess960 records when `variant_shift` is on, else 0.
//! - A record's noise is the first `L·T·D` normals, in file layout order,
//!   from `NormalStream(mix_seed(seed, [NOISE, fnv1a64(fen)]))`.
//!
//! Values are computed in `f64` and rounded to `f32` once.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{ConceptId, RULE_VERSION};
use crate::cpaf::{ActivationMeta, ActivationRecord, CpafError};
use crate::dataset::{LabeledPosition, Variant};
use crate::position::{chess960_start, CHESS960_COUNT};
use crate::rng::{fnv1a64, mix_seed, NormalStream};

const DIRECTION: u64 = 0x4449_5245; // "DIRE"
const NOISE: u64 = 0x4e4f_4953; // "NOIS"
const CORPUS: u64 = 0x434f_5250; // "CORP"

pub const PRODUCER: &str = "chess-probe synth";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad plant config: {0}")]
    BadConfig(String),
    #[error("no labels to generate")]
    EmptyLabels,
    #[error(transparent)]
    Cpaf(#[from] CpafError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub layers: usize,
    pub tokens: usize,
    pub dim: usize,
    pub alpha0: f64,
    pub decay: f64,
    pub sigma: f64,
    /// Tokens carrying the signal; `None` means the move token only.
    #[serde(default)]
    pub signal_tokens: Option<Vec<usize>>,
    pub seed: u64,
    /// Use different planted directions for Chess960 records.
    #[serde(default)]
    pub variant_shift: bool,
}

impl PlantConfig {
    pub fn new(layers: usize, tokens: usize, dim: usize, seed: u64) -> PlantConfig {
        PlantConfig {
            layers,
            tokens,
            dim,
            alpha0: 4.0,
            decay: 0.6,
            sigma: 1.0,
            signal_tokens: None,
            seed,
            variant_shift: false,
        }
    }

    pub fn signal_tokens(&self) -> Vec<usize> {
        self.signal_tokens
            .clone()
            .unwrap_or_else(|| vec![self.tokens.saturating_sub(1)])
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if self.layers == 0 || self.tokens == 0 || self.dim == 0 {
            return bad("layers, tokens and dim must be at least 1".into());
        }
        if !(self.alpha0.is_finite() && self.alpha0 >= 0.0) {
            return bad(format!("alpha0 {} must be finite and non-negative", self.alpha0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay {} outside (0, 1]", self.decay));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma {} must be finite and non-negative", self.sigma));
        }
        let st = self.signal_tokens();
        if let Some(t) = st.iter().find(|&&t| t >= self.tokens) {
            return bad(format!("signal token {t} out of range for T={}", self.tokens));
        }
        if !st.contains(&(self.tokens - 1)) {
            return bad("signal_tokens must include the move token T-1".into());
        }
        Ok(())
    }

    pub fn meta(&self) -> ActivationMeta {
        let mut m = ActivationMeta::new(self.layers, self.tokens, self.dim, PRODUCER);
        m.rule_version = Some(RULE_VERSION.to_string());
        m
    }

    /// The planted unit vector for `layer`.
    pub fn direction(&self, layer: usize, concept: ConceptId, variant: Variant) -> Vec<f64> {
        let v = u64::from(self.variant_shift && variant == Variant::Chess960);
        let mut s = NormalStream::new(mix_seed(self.seed, &[DIRECTION, layer as u64, concept.code() as u64, v]));
        let mut u: Vec<f64> = (0..self.dim).map(|_| s.next_normal()).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        u
    }
}

/// What to generate for one record.
struct Spec<'a> {
    fen: String,
    chosen_move: String,
    concept_mask: u32,
    /// `(concept, coefficient)` signal terms.
    terms: &'a [(ConceptId, f64)],
    variant: Variant,
}

fn render(config: &PlantConfig, spec: &Spec, dirs: &DirCache) -> ActivationRecord {
    let (l_n, t_n, d_n) = (config.layers, config.tokens, config.dim);
    let mut noise = NormalStream::new(mix_seed(config.seed, &[NOISE, fnv1a64(spec.fen.as_bytes())]));
    let signal = config.signal_tokens();
    let mut tensor = Vec::with_capacity(l_n * t_n * d_n);
    let mut row = vec![0.0f64; d_n];
    for l in 0..l_n {
        let strength = config.alpha0 * config.decay.powi(l as i32);
        for t in 0..t_n {
            for x in row.iter_mut() {
                *x = config.sigma * noise.next_normal();
            }
            if signal.contains(&t) {
                for &(c, y) in spec.terms {
                    let u = dirs.get(l, c, spec.variant);
                    for (x, ui) in row.iter_mut().zip(u) {
                        *x += y * strength * ui;
                    }
                }
            }
            tensor.extend(row.iter().map(|&x| x as f32));
        }
    }
    ActivationRecord {
        fen: spec.fen.clone(),
        chosen_move: spec.chosen_move.clone(),
        concept_mask: spec.concept_mask,
        shape: config.meta().shape(),
        tensor,
    }
}

/// Directions for every (layer, concept, variant), computed once.
struct DirCache {
    dirs: Vec<Vec<f64>>,
}

impl DirCache {
    fn new(config: &PlantConfig) -> DirCache {
        let mut dirs = Vec::with_capacity(config.layers * 12);
        for l in 0..config.layers {
            for c in ConceptId::ALL {
                for v in [Variant::Standard, Variant::Chess960] {
                    dirs.push(config.direction(l, c, v));
                }
            }
        }
        DirCache { dirs }
    }

    fn get(&self, layer: usize, concept: ConceptId, variant: Variant) -> &[f64] {
        &self.dirs[(layer * 6 + concept.code() as usize) * 2 + variant as usize]
    }
}

fn render_all(config: &PlantConfig, specs: &[Spec]) -> Vec<ActivationRecord> {
    let dirs = DirCache::new(config);
    specs.par_iter().map(|s| render(config, s, &dirs)).collect()
}

/// One record per label; `+1` plants `+u`, `-1` plants `-u`. Record `i`
/// gets the FEN of a seeded Chess960 start with fullmove number `i + 1`
/// and a concept mask of `concept` for positive labels, 0 otherwise.
pub fn generate(
    config: &PlantConfig,
    labels: &[i8],
    concept: ConceptId,
) -> Result<(ActivationMeta, Vec<ActivationRecord>), SynthError> {
    config.validate()?;
    if labels.is_empty() {
        return Err(SynthError::EmptyLabels);
    }
    if let Some(y) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(SynthError::BadConfig(format!("label {y} is not +1 or -1")));
    }
    let plus = [(concept, 1.0)];
    let minus = [(concept, -1.0)];
    let specs: Vec<Spec> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let idx = (mix_seed(config.seed, &[CORPUS, i as u64]) % CHESS960_COUNT as u64) as u32;
            let pos = chess960_start(idx).expect("index in range").with_counters(0, i as u32 + 1)
                .expect("counters are valid");
            Spec {
                fen: pos.to_fen(),
                chosen_move: String::new(),
                concept_mask: if y > 0 { concept.mask_bit() } else { 0 },
                terms: if y > 0 { &plus } else { &minus },
                variant: Variant::Standard,
            }
        })
        .collect();
    Ok((config.meta(), render_all(config, &specs)))
}

/// Activations for dataset records. Each record plants `+u` for its own
/// concept only, so a one-vs-rest probe for concept `c` separates along
/// `u(l, c)`. FENs are the canonical join keys.
pub fn generate_for_dataset(
    config: &PlantConfig,
    records: &[LabeledPosition],
) -> Result<(ActivationMeta, Vec<ActivationRecord>), SynthError> {
    config.validate()?;
    if records.is_empty() {
        return Err(SynthError::EmptyLabels);
    }
    let terms: Vec<[(ConceptId, f64); 1]> = records.iter().map(|r| [(r.concept, 1.0)]).collect();
    let specs: Vec<Spec> = records
        .iter()
        .zip(&terms)
        .map(|(r, t)| Spec {
            fen: r.canonical_fen(),
            chosen_move: r.chosen_move.map(|m| m.to_string()).unwrap_or_default(),
            concept_mask: r.concept.mask_bit(),
            terms: t,
            variant: r.variant,
        })
        .collect();
    Ok((config.meta(), render_all(config, &specs)))
}

/// `n` labels, half `+1` and half `-1` (the extra one positive when `n` is
/// odd), in seeded order.
pub fn balanced_labels(n: usize, seed: u64) -> Vec<i8> {
    let mut labels: Vec<i8> = (0..n).map(|i| if i < n.div_ceil(2) { 1 } else { -1 }).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    labels
}

/// A labeled corpus of `per_concept` records for each of the six concepts,
/// on distinct Chess960 start boards. Source ids embed the concept title
/// so the EPD form resolves through the default theme map.
pub fn synthetic_corpus(variant: Variant, per_concept: usize, seed: u64) -> Result<Vec<LabeledPosition>, SynthError> {
    let n = per_concept * ConceptId::ALL.len();
    if per_concept == 0 || n > CHESS960_COUNT as usize {
        return Err(SynthError::BadConfig(format!(
            "per_concept must be in 1..={}",
            CHESS960_COUNT as usize / 6
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[CORPUS, variant as u64]));
    let boards = rand::seq::index::sample(&mut rng, CHESS960_COUNT as usize, n).into_vec();
    let fullmove_base = match variant {
        Variant::Standard => 1,
        Variant::Chess960 => 1 + CHESS960_COUNT,
    };
    let mut out = Vec::with_capacity(n);
    for (i, &b) in boards.iter().enumerate() {
        let concept = ConceptId::ALL[i % 6];
        let position = chess960_start(b as u32)
            .expect("index in range")
            .with_counters(0, fullmove_base + i as u32)
            .expect("counters are valid");
        let source_id = match variant {
            Variant::Standard => format!("{} synth.{i:04}", concept.title()),
            Variant::Chess960 => format!("c960-synth-{i:04}"),
        };
        out.push(LabeledPosition {
            position,
            concept,
            chosen_move: None,
            variant,
            source_id,
        });
    }
    Ok(out)
}
