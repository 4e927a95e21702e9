//! Labeled position datasets: STS-style EPD ingestion, the Chess960 concept
//! file format, stratified folds, pair sampling and scenario composition.
//!
//! Chess960 dataset format (UTF-8, LF line endings, no trailing whitespace):
//!
//! ```text
//! c960-concepts v1
//! <X-FEN>\t<concept code 0-5>\t<UCI move or ->\t<source id>
//! ```
//!
//! Fold plans serialize as `<source id>\t<fold>` lines sorted by source id.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::ConceptId;
use crate::position::{FenError, Position, UciMove};
use crate::rng::mix_seed;

pub const C960_HEADER: &str = "c960-concepts v1";
/// Positions per concept in the reference Chess960 dataset.
pub const C960_PER_CONCEPT: usize = 40;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed EPD at line {line}: {reason}")]
    MalformedEpd { line: usize, reason: String },
    #[error("no records left after theme filtering ({skipped} skipped)")]
    EmptyAfterFiltering { skipped: usize },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("unknown concept code {code:?} at line {line}")]
    UnknownConceptCode { line: usize, code: String },
    #[error("bad theme map line {line}: {reason}")]
    BadThemeMap { line: usize, reason: String },
    #[error("fold count k={0} must be at least 2")]
    BadFoldCount(usize),
    #[error("class {concept}/{variant} has {count} instances, fewer than k={k}")]
    TooFewInstances {
        concept: ConceptId,
        variant: Variant,
        count: usize,
        k: usize,
    },
    #[error("duplicate source id {0:?}")]
    DuplicateSourceId(String),
    #[error("bad fold plan line {line}: {reason}")]
    BadFoldPlan { line: usize, reason: String },
    #[error("cannot sample pairs: one side is empty")]
    EmptySide,
    #[error("requested {requested} pairs but only {available} distinct pairs exist")]
    ExhaustedPairs { requested: usize, available: usize },
    #[error("scenario {scenario} needs the {variant} dataset")]
    MissingDataset { scenario: Scenario, variant: Variant },
    #[error("test fold {fold} out of range for k={k}")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("source id {0:?} has no fold assignment")]
    Unassigned(String),
    #[error("source id {0:?} appears in both train and test")]
    Leakage(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    Chess960,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::Chess960 => "chess960",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPosition {
    pub position: Position,
    pub concept: ConceptId,
    pub chosen_move: Option<UciMove>,
    pub variant: Variant,
    pub source_id: String,
}

impl LabeledPosition {
    /// Join key against activation records.
    pub fn canonical_fen(&self) -> String {
        self.position.to_fen()
    }
}

/// Maps STS theme strings to concepts. An EPD `id` matches a theme when it
/// contains the theme text, ignoring ASCII case; the longest matching theme
/// wins.
///
/// Text form, one entry per line, `#` starts a comment:
///
/// ```text
/// 1 Knight Outposts
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ThemeMap {
    entries: Vec<(String, ConceptId)>,
}

impl Default for ThemeMap {
    fn default() -> Self {
        ThemeMap {
            entries: ConceptId::ALL
                .iter()
                .map(|c| (c.title().to_string(), *c))
                .collect(),
        }
    }
}

impl ThemeMap {
    pub fn new(entries: Vec<(String, ConceptId)>) -> ThemeMap {
        ThemeMap { entries }
    }

    pub fn parse(text: &str) -> Result<ThemeMap, DatasetError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| DatasetError::BadThemeMap {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (code, theme) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected `<code> <theme>`"))?;
            let code: u32 = code.parse().map_err(|_| bad("concept code is not an integer"))?;
            let concept = ConceptId::from_code(code).ok_or_else(|| bad("concept code out of range"))?;
            entries.push((theme.trim().to_string(), concept));
        }
        Ok(ThemeMap { entries })
    }

    pub fn load(path: &Path) -> Result<ThemeMap, DatasetError> {
        ThemeMap::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(t, c)| format!("{} {}\n", c.code(), t))
            .collect()
    }

    pub fn lookup(&self, id: &str) -> Option<ConceptId> {
        let id = id.to_ascii_lowercase();
        self.entries
            .iter()
            .filter(|(theme, _)| id.contains(&theme.to_ascii_lowercase()))
            .max_by_key(|(theme, _)| theme.len())
            .map(|(_, c)| *c)
    }
}

#[derive(Debug, Clone)]
pub struct EpdLoad {
    pub records: Vec<LabeledPosition>,
    /// Records whose theme is not in the map.
    pub skipped: usize,
}

/// Splits `s` after `n` whitespace-separated tokens.
fn take_tokens(s: &str, n: usize) -> Option<(Vec<&str>, &str)> {
    let mut tokens = Vec::with_capacity(n);
    let mut rest = s;
    for _ in 0..n {
        rest = rest.trim_start();
        if rest.is_empty() {
            return None;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        tokens.push(&rest[..end]);
        rest = &rest[end..];
    }
    Some((tokens, rest))
}

/// `op operand...;` pairs, honoring double-quoted operands.
fn split_opcodes(s: &str) -> Result<Vec<(String, String)>, String> {
    let mut ops = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in s.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            ';' if !quoted => {
                let op = cur.trim();
                if !op.is_empty() {
                    let (name, operand) = op.split_once(char::is_whitespace).unwrap_or((op, ""));
                    ops.push((name.to_string(), unquote(operand.trim())));
                }
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if quoted {
        return Err("unterminated quoted operand".into());
    }
    if !cur.trim().is_empty() {
        return Err(format!("opcode {:?} is missing its terminating ';'", cur.trim()));
    }
    Ok(ops)
}

fn unquote(s: &str) -> String {
    s.strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .unwrap_or(s)
        .to_string()
}

/// Parses EPD text. `hmvc`/`fmvn` set the counters, `id` is required and
/// carries the theme, a UCI-form `bm` (or the first move of `c9`) becomes
/// the chosen move.
pub fn parse_epd(text: &str, themes: &ThemeMap) -> Result<EpdLoad, DatasetError> {
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| DatasetError::MalformedEpd { line: line_no, reason };
        let (fields, rest) = take_tokens(line, 4).ok_or_else(|| bad("fewer than four position fields".into()))?;
        let ops = split_opcodes(rest).map_err(bad)?;
        let op = |name: &str| ops.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str());

        let counter = |name: &str, default: u32| -> Result<u32, DatasetError> {
            match op(name) {
                None => Ok(default),
                Some(v) => v.parse().map_err(|_| bad(format!("bad {name} operand {v:?}"))),
            }
        };
        let halfmove = counter("hmvc", 0)?;
        let fullmove = counter("fmvn", 1)?;
        let position = Position::from_fen_fields(fields[0], fields[1], fields[2], fields[3], halfmove, fullmove)
            .map_err(|e: FenError| bad(e.to_string()))?;
        let id = op("id").ok_or_else(|| bad("missing id opcode".into()))?;

        let Some(concept) = themes.lookup(id) else {
            skipped += 1;
            continue;
        };
        if !seen.insert(id.to_string()) {
            return Err(DatasetError::DuplicateSourceId(id.to_string()));
        }
        let chosen_move = op("bm")
            .and_then(|m| m.split_whitespace().next())
            .and_then(|m| m.parse::<UciMove>().ok())
            .or_else(|| {
                op("c9")
                    .and_then(|m| m.split_whitespace().next())
                    .and_then(|m| m.parse::<UciMove>().ok())
            });
        records.push(LabeledPosition {
            position,
            concept,
            chosen_move,
            variant: Variant::Standard,
            source_id: id.to_string(),
        });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyAfterFiltering { skipped });
    }
    Ok(EpdLoad { records, skipped })
}

pub fn load_epd(path: &Path, themes: &ThemeMap) -> Result<EpdLoad, DatasetError> {
    parse_epd(&fs::read_to_string(path).map_err(io_err(path))?, themes)
}

/// EPD text for `records`, using each source id as the `id` operand.
pub fn to_epd_string(records: &[LabeledPosition]) -> String {
    let mut out = String::new();
    for r in records {
        let fen = r.position.to_fen();
        let board: Vec<&str> = fen.split(' ').take(4).collect();
        out.push_str(&board.join(" "));
        out.push_str(&format!(
            " hmvc {}; fmvn {};",
            r.position.halfmove_clock(),
            r.position.fullmove_number()
        ));
        if let Some(m) = r.chosen_move {
            out.push_str(&format!(" bm {m};"));
        }
        out.push_str(&format!(" id \"{}\";\n", r.source_id));
    }
    out
}

#[derive(Debug, Clone)]
pub struct C960Load {
    pub records: Vec<LabeledPosition>,
    /// Records per concept code.
    pub counts: [usize; 6],
    /// Imbalance notes; empty when every concept has exactly
    /// [`C960_PER_CONCEPT`] records.
    pub warnings: Vec<String>,
}

impl C960Load {
    pub fn balanced(&self) -> bool {
        self.warnings.is_empty()
    }
}

pub fn parse_c960(text: &str) -> Result<C960Load, DatasetError> {
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h == C960_HEADER => {}
        _ => {
            return Err(DatasetError::MalformedRecord {
                line: 1,
                reason: format!("expected header {C960_HEADER:?}"),
            })
        }
    }
    let mut records = Vec::new();
    let mut counts = [0usize; 6];
    let mut seen = HashSet::new();
    let body: Vec<(usize, &str)> = lines.collect();
    let n = body.len();
    for (idx, (i, line)) in body.into_iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() && idx + 1 == n {
            break; // final LF
        }
        let bad = |reason: String| DatasetError::MalformedRecord { line: line_no, reason };
        if line.trim_end() != line || line.is_empty() {
            return Err(bad("empty line or trailing whitespace".into()));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let position = Position::parse_fen(fields[0]).map_err(|e| bad(e.to_string()))?;
        let code: u32 = fields[1].parse().map_err(|_| bad(format!("concept code {:?} is not an integer", fields[1])))?;
        let concept = ConceptId::from_code(code).ok_or_else(|| DatasetError::UnknownConceptCode {
            line: line_no,
            code: fields[1].to_string(),
        })?;
        let chosen_move = match fields[2] {
            "-" => None,
            m => Some(m.parse::<UciMove>().map_err(|e| bad(e.to_string()))?),
        };
        let source_id = fields[3];
        if source_id.is_empty() || source_id.contains(char::is_whitespace) {
            return Err(bad("source id must be non-empty without whitespace".into()));
        }
        if !seen.insert(source_id.to_string()) {
            return Err(DatasetError::DuplicateSourceId(source_id.to_string()));
        }
        counts[concept.code() as usize] += 1;
        records.push(LabeledPosition {
            position,
            concept,
            chosen_move,
            variant: Variant::Chess960,
            source_id: source_id.to_string(),
        });
    }
    let warnings = ConceptId::ALL
        .iter()
        .filter(|c| counts[c.code() as usize] != C960_PER_CONCEPT)
        .map(|c| {
            format!(
                "concept {} has {} positions, expected {}",
                c,
                counts[c.code() as usize],
                C960_PER_CONCEPT
            )
        })
        .collect();
    Ok(C960Load {
        records,
        counts,
        warnings,
    })
}

pub fn load_c960(path: &Path) -> Result<C960Load, DatasetError> {
    parse_c960(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn to_c960_string(records: &[LabeledPosition]) -> String {
    let mut out = String::from(C960_HEADER);
    out.push('\n');
    for r in records {
        let mv = r.chosen_move.map_or_else(|| "-".to_string(), |m| m.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.position.to_fen(),
            r.concept.code(),
            mv,
            r.source_id
        ));
    }
    out
}

pub fn write_c960(path: &Path, records: &[LabeledPosition]) -> Result<(), DatasetError> {
    fs::write(path, to_c960_string(records)).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, source_id: &str) -> Option<usize> {
        self.assignments.get(source_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn to_tsv(&self) -> String {
        self.assignments
            .iter()
            .map(|(id, f)| format!("{id}\t{f}\n"))
            .collect()
    }

    /// Reads `to_tsv` output; `k` is taken as one more than the largest fold
    /// index and the seed is not recoverable (set to 0).
    pub fn from_tsv(text: &str) -> Result<FoldPlan, DatasetError> {
        let mut assignments = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| DatasetError::BadFoldPlan {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (id, fold) = line.split_once('\t').ok_or_else(|| bad("expected `<id>\\t<fold>`"))?;
            let fold: usize = fold.parse().map_err(|_| bad("fold is not an integer"))?;
            if assignments.insert(id.to_string(), fold).is_some() {
                return Err(DatasetError::DuplicateSourceId(id.to_string()));
            }
        }
        let k = assignments.values().max().map_or(0, |m| m + 1);
        Ok(FoldPlan { k, seed: 0, assignments })
    }
}

/// Stratified k-fold assignment. Each (concept, variant) class is sorted by
/// source id, shuffled with a seed derived from `seed` and the class, then
/// dealt round-robin; the dealing offset carries over between classes so
/// fold sizes stay within one of each other.
pub fn make_folds(data: &[LabeledPosition], k: usize, seed: u64) -> Result<FoldPlan, DatasetError> {
    if k < 2 {
        return Err(DatasetError::BadFoldCount(k));
    }
    let mut classes: BTreeMap<(Variant, ConceptId), Vec<&str>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in data {
        if !seen.insert(r.source_id.as_str()) {
            return Err(DatasetError::DuplicateSourceId(r.source_id.clone()));
        }
        classes.entry((r.variant, r.concept)).or_default().push(&r.source_id);
    }
    let mut assignments = BTreeMap::new();
    let mut offset = 0;
    for ((variant, concept), mut ids) in classes {
        if ids.len() < k {
            return Err(DatasetError::TooFewInstances {
                concept,
                variant,
                count: ids.len(),
                k,
            });
        }
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[variant as u64, concept.code() as u64]));
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            assignments.insert(id.to_string(), (offset + i) % k);
        }
        offset = (offset + ids.len()) % k;
    }
    Ok(FoldPlan { k, seed, assignments })
}

/// Samples `n_pairs` distinct (positive, negative) pairs uniformly from the
/// full cross product.
pub fn make_pairs<T: Clone>(
    positives: &[T],
    negatives: &[T],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(T, T)>, DatasetError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(DatasetError::EmptySide);
    }
    let available = positives.len() * negatives.len();
    if n_pairs > available {
        return Err(DatasetError::ExhaustedPairs {
            requested: n_pairs,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, available, n_pairs);
    Ok(picks
        .into_iter()
        .map(|i| {
            (
                positives[i / negatives.len()].clone(),
                negatives[i % negatives.len()].clone(),
            )
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct BinarySplit<'a> {
    pub positives: Vec<&'a LabeledPosition>,
    pub negatives: Vec<&'a LabeledPosition>,
}

/// One-vs-rest split for `concept`. Negatives come from positions labeled
/// with another concept in the same variant, never sharing a board with a
/// positive, sampled down to the positive count per variant.
pub fn concept_split<'a>(items: &[&'a LabeledPosition], concept: ConceptId, seed: u64) -> BinarySplit<'a> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for variant in [Variant::Standard, Variant::Chess960] {
        let mut pos: Vec<&LabeledPosition> = items
            .iter()
            .copied()
            .filter(|r| r.variant == variant && r.concept == concept)
            .collect();
        pos.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        let boards: HashSet<&Position> = pos.iter().map(|r| &r.position).collect();
        let mut pool: Vec<&LabeledPosition> = items
            .iter()
            .copied()
            .filter(|r| r.variant == variant && r.concept != concept && !boards.contains(&r.position))
            .collect();
        pool.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[variant as u64, concept.code() as u64]));
        pool.shuffle(&mut rng);
        pool.truncate(pos.len());
        pool.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        positives.extend(pos);
        negatives.extend(pool);
    }
    BinarySplit { positives, negatives }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
    III,
    IV,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::I, Scenario::II, Scenario::III, Scenario::IV];

    pub fn spec(self) -> ScenarioSpec {
        use Variant::*;
        let (train, test, folded): (&[Variant], &[Variant], bool) = match self {
            Scenario::I => (&[Standard], &[Standard], true),
            Scenario::II => (&[Standard], &[Chess960], false),
            Scenario::III => (&[Standard, Chess960], &[Standard, Chess960], true),
            Scenario::IV => (&[Chess960], &[Chess960], true),
        };
        ScenarioSpec {
            id: self,
            train_variants: train.iter().copied().collect(),
            test_variants: test.iter().copied().collect(),
            folded,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            "IV" | "4" => Ok(Scenario::IV),
            _ => Err(format!("unknown scenario {s:?}")),
        }
    }
}

/// Which variants each side draws from. When `folded`, train takes every
/// fold but the test fold and test takes the test fold; otherwise both
/// sides take their variants whole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub id: Scenario,
    pub train_variants: BTreeSet<Variant>,
    pub test_variants: BTreeSet<Variant>,
    pub folded: bool,
}

impl ScenarioSpec {
    pub fn selects_train(&self, variant: Variant, in_test_fold: bool) -> bool {
        self.train_variants.contains(&variant) && !(self.folded && in_test_fold)
    }

    pub fn selects_test(&self, variant: Variant, in_test_fold: bool) -> bool {
        self.test_variants.contains(&variant) && (!self.folded || in_test_fold)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSplit<'a> {
    pub train: Vec<&'a LabeledPosition>,
    pub test: Vec<&'a LabeledPosition>,
}

pub fn compose_scenario<'a>(
    scenario: Scenario,
    standard: Option<&'a [LabeledPosition]>,
    chess960: Option<&'a [LabeledPosition]>,
    plan: &FoldPlan,
    test_fold: usize,
) -> Result<ScenarioSplit<'a>, DatasetError> {
    if test_fold >= plan.k {
        return Err(DatasetError::FoldOutOfRange {
            fold: test_fold,
            k: plan.k,
        });
    }
    let spec = scenario.spec();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for variant in spec.train_variants.union(&spec.test_variants) {
        let data = match variant {
            Variant::Standard => standard,
            Variant::Chess960 => chess960,
        }
        .ok_or(DatasetError::MissingDataset {
            scenario,
            variant: *variant,
        })?;
        for r in data {
            let in_test_fold = if spec.folded {
                plan.fold_of(&r.source_id)
                    .ok_or_else(|| DatasetError::Unassigned(r.source_id.clone()))?
                    == test_fold
            } else {
                false
            };
            if spec.selects_train(r.variant, in_test_fold) {
                train.push(r);
            }
            if spec.selects_test(r.variant, in_test_fold) {
                test.push(r);
            }
        }
    }
    let train_ids: HashSet<&str> = train.iter().map(|r| r.source_id.as_str()).collect();
    if let Some(r) = test.iter().find(|r| train_ids.contains(r.source_id.as_str())) {
        return Err(DatasetError::Leakage(r.source_id.clone()));
    }
    Ok(ScenarioSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::position::chess960_start;

    const FIXTURE_EPD: &str = "\
rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - bm e2e4; id \"STS: Knight Outposts.001\";
r1bqkbnr/pppppppp/2n5/8/8/5N2/PPPPPPPP/RNBQKB1R w KQkq - hmvc 2; fmvn 2; bm Nc3; id \"STS(v13.0) Pawn Play in the Center.002\";
4k3/8/8/8/8/8/4P3/4K3 w - - id \"STS(v11.0) Activity of the King.003\";
";

    #[test]
    fn epd_fixture_field_by_field() {
        let load = parse_epd(FIXTURE_EPD, &ThemeMap::default()).unwrap();
        assert_eq!(load.skipped, 1);
        assert_eq!(load.records.len(), 2);
        let a = &load.records[0];
        assert_eq!(a.concept, ConceptId::KnightOutposts);
        assert_eq!(a.source_id, "STS: Knight Outposts.001");
        assert_eq!(a.variant, Variant::Standard);
        assert_eq!(a.chosen_move.unwrap().to_string(), "e2e4");
        assert_eq!(a.position, Position::start());
        let b = &load.records[1];
        assert_eq!(b.concept, ConceptId::CenterPawnPlay);
        // SAN best move is not UCI
        assert!(b.chosen_move.is_none());
        assert_eq!(
            b.canonical_fen(),
            "r1bqkbnr/pppppppp/2n5/8/8/5N2/PPPPPPPP/RNBQKB1R w KQkq - 2 2"
        );
    }

    #[test]
    fn epd_errors() {
        let themes = ThemeMap::default();
        assert!(matches!(parse_epd("", &themes), Err(DatasetError::EmptyAfterFiltering { skipped: 0 })));
        assert!(matches!(
            parse_epd("8/8/8/8/8/8/8/8 w - - id \"x\";", &themes),
            Err(DatasetError::MalformedEpd { line: 1, .. })
        ));
        assert!(matches!(
            parse_epd("4k3/8/8/8/8/8/8/4K3 w - - bm e1e2;", &themes),
            Err(DatasetError::MalformedEpd { line: 1, .. })
        ));
        assert!(matches!(
            parse_epd("4k3/8/8/8/8/8/8/4K3 w - - id \"Center Control", &themes),
            Err(DatasetError::MalformedEpd { .. })
        ));
    }

    #[test]
    fn theme_map_text_round_trip() {
        let m = ThemeMap::default();
        assert_eq!(ThemeMap::parse(&m.to_text()).unwrap(), m);
        assert_eq!(m.lookup("STS(v12.0) Center Control.014"), Some(ConceptId::CenterControl));
        assert_eq!(m.lookup("sts: ADVANCEMENT OF A/B/C PAWNS"), Some(ConceptId::AdvanceQueensidePawns));
        assert!(ThemeMap::parse("9 Nothing").is_err());
    }

    fn c960_records(per_concept: usize) -> Vec<LabeledPosition> {
        let mut out = Vec::new();
        for c in ConceptId::ALL {
            for j in 0..per_concept {
                let idx = (c.code() as usize * per_concept + j) as u32;
                out.push(LabeledPosition {
                    position: chess960_start(idx % 960).unwrap(),
                    concept: c,
                    chosen_move: None,
                    variant: Variant::Chess960,
                    source_id: format!("c960-{}-{j:03}", c.code()),
                });
            }
        }
        out
    }

    #[test]
    fn c960_text_round_trip() {
        let recs = c960_records(40);
        let text = to_c960_string(&recs);
        let load = parse_c960(&text).unwrap();
        assert!(load.balanced());
        assert_eq!(load.records, recs);
        assert_eq!(to_c960_string(&load.records), text);
    }

    #[test]
    fn c960_rejects() {
        let fen = chess960_start(0).unwrap().to_fen();
        let bad_code = format!("{C960_HEADER}\n{fen}\t6\t-\tx1\n");
        assert!(matches!(parse_c960(&bad_code), Err(DatasetError::UnknownConceptCode { line: 2, .. })));
        let trailing = format!("{C960_HEADER}\n{fen}\t1\t-\tx1 \n");
        assert!(matches!(parse_c960(&trailing), Err(DatasetError::MalformedRecord { line: 2, .. })));
        let crlf = format!("{C960_HEADER}\r\n{fen}\t1\t-\tx1\n");
        assert!(parse_c960(&crlf).is_err());
        let bad_move = format!("{C960_HEADER}\n{fen}\t1\tNf3\tx1\n");
        assert!(matches!(parse_c960(&bad_move), Err(DatasetError::MalformedRecord { .. })));
    }

    #[test]
    fn c960_imbalance_warns() {
        let mut recs = c960_records(40);
        // move one knight-outpost record to center control: 39 / 41
        let r = recs.iter_mut().find(|r| r.concept == ConceptId::KnightOutposts).unwrap();
        r.concept = ConceptId::CenterControl;
        let load = parse_c960(&to_c960_string(&recs)).unwrap();
        assert_eq!(load.records.len(), 240);
        assert_eq!(load.warnings.len(), 2);
        assert!(!load.balanced());
    }

    #[test]
    fn folds_are_stratified() {
        let recs = c960_records(40);
        let plan = make_folds(&recs, 5, 11).unwrap();
        assert_eq!(plan.fold_sizes(), vec![48; 5]);
        for c in ConceptId::ALL {
            let mut per_fold = [0; 5];
            for r in recs.iter().filter(|r| r.concept == c) {
                per_fold[plan.fold_of(&r.source_id).unwrap()] += 1;
            }
            assert_eq!(per_fold, [8; 5]);
        }
        assert_eq!(make_folds(&recs, 5, 11).unwrap(), plan);
        assert_ne!(make_folds(&recs, 5, 12).unwrap().assignments, plan.assignments);
        assert_eq!(FoldPlan::from_tsv(&plan.to_tsv()).unwrap().assignments, plan.assignments);
    }

    #[test]
    fn folds_need_enough_instances() {
        let recs = c960_records(3);
        assert!(matches!(make_folds(&recs, 5, 0), Err(DatasetError::TooFewInstances { count: 3, k: 5, .. })));
        assert!(matches!(make_folds(&recs, 1, 0), Err(DatasetError::BadFoldCount(1))));
    }

    #[test]
    fn pairs() {
        let p = [1, 2, 3];
        let n = [10, 20, 30];
        let all = make_pairs(&p, &n, 9, 5).unwrap();
        let set: BTreeSet<_> = all.iter().copied().collect();
        assert_eq!(set.len(), 9);
        assert!(matches!(
            make_pairs(&p, &n, 10, 5),
            Err(DatasetError::ExhaustedPairs { requested: 10, available: 9 })
        ));
        assert_eq!(make_pairs(&p, &n, 4, 5).unwrap(), make_pairs(&p, &n, 4, 5).unwrap());
        assert!(matches!(make_pairs::<i32>(&[], &n, 1, 5), Err(DatasetError::EmptySide)));
    }

    #[test]
    fn concept_split_balances_negatives() {
        let recs = c960_records(10);
        let refs: Vec<&LabeledPosition> = recs.iter().collect();
        let split = concept_split(&refs, ConceptId::CenterControl, 3);
        assert_eq!(split.positives.len(), 10);
        assert_eq!(split.negatives.len(), 10);
        assert!(split.negatives.iter().all(|r| r.concept != ConceptId::CenterControl));
    }

    #[test]
    fn scenarios() {
        let c960 = c960_records(40);
        let mut std: Vec<LabeledPosition> = c960_records(10);
        for r in &mut std {
            r.variant = Variant::Standard;
            r.source_id = format!("std-{}", r.source_id);
        }
        let mut all = std.clone();
        all.extend(c960.iter().cloned());
        let plan = make_folds(&all, 5, 1).unwrap();

        let s2 = compose_scenario(Scenario::II, Some(&std), Some(&c960), &plan, 0).unwrap();
        assert_eq!(s2.train.len(), std.len());
        assert_eq!(s2.test.len(), 240);

        let s1 = compose_scenario(Scenario::I, Some(&std), Some(&c960), &plan, 2).unwrap();
        assert_eq!(s1.test.len(), std.len() / 5);
        assert_eq!(s1.train.len() + s1.test.len(), std.len());

        let s3 = compose_scenario(Scenario::III, Some(&std), Some(&c960), &plan, 4).unwrap();
        assert_eq!(s3.train.len() + s3.test.len(), 300);

        assert!(matches!(
            compose_scenario(Scenario::IV, Some(&std), None, &plan, 0),
            Err(DatasetError::MissingDataset { scenario: Scenario::IV, variant: Variant::Chess960 })
        ));
        assert!(matches!(
            compose_scenario(Scenario::I, Some(&std), None, &plan, 5),
            Err(DatasetError::FoldOutOfRange { .. })
        ));
    }
}
