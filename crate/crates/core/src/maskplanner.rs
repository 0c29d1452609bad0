//! Mask eligibility and seeded mask plans.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{Pos, TokenRecord};
use crate::hashing::stable_hash;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilitySet {
    pub eligible: BTreeSet<usize>,
    /// Privacy tokens that every plan masks.
    pub forced: BTreeSet<usize>,
    pub frozen: BTreeSet<usize>,
}

/// Partition token indices into frozen, forced and eligible.
///
/// Frozen: entities, structure, special patterns, punctuation, PHI
/// placeholders and numbers that are not privacy information. Forced:
/// privacy tokens that are not entities. Eligible: everything else.
pub fn compute_eligibility(tokens: &[TokenRecord]) -> EligibilitySet {
    let mut set = EligibilitySet::default();
    for (i, t) in tokens.iter().enumerate() {
        let f = &t.flags;
        let frozen = f.is_entity
            || f.is_structure
            || f.is_special
            || f.is_punct
            || f.is_phi_placeholder
            || (f.is_number && !f.is_privacy);
        if frozen {
            set.frozen.insert(i);
        } else if f.is_privacy {
            set.forced.insert(i);
        } else {
            set.eligible.insert(i);
        }
    }
    set
}

/// Which eligible tokens a strategy may draw from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Pos { tags: Vec<PosClass> },
    Stopwords,
}

/// Named POS groups used in strategy strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosClass {
    /// NOUN and PROPN.
    Noun,
    /// VERB and AUX.
    Verb,
    Adj,
    Adv,
}

impl PosClass {
    pub fn matches(&self, pos: Pos) -> bool {
        match self {
            PosClass::Noun => matches!(pos, Pos::Noun | Pos::Propn),
            PosClass::Verb => matches!(pos, Pos::Verb | Pos::Aux),
            PosClass::Adj => pos == Pos::Adj,
            PosClass::Adv => pos == Pos::Adv,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PosClass::Noun => "noun",
            PosClass::Verb => "verb",
            PosClass::Adj => "adj",
            PosClass::Adv => "adv",
        }
    }
}

impl FromStr for PosClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noun" | "nouns" => Ok(PosClass::Noun),
            "verb" | "verbs" => Ok(PosClass::Verb),
            "adj" => Ok(PosClass::Adj),
            "adv" => Ok(PosClass::Adv),
            other => Err(Error::InvalidArgument(format!("unknown POS class `{other}`"))),
        }
    }
}

impl Strategy {
    fn admits(&self, token: &TokenRecord) -> bool {
        match self {
            Strategy::Random => true,
            Strategy::Pos { tags } => tags.iter().any(|c| c.matches(token.pos)),
            Strategy::Stopwords => token.flags.is_stopword,
        }
    }

    fn pool(&self, tokens: &[TokenRecord], eligibility: &EligibilitySet) -> Vec<usize> {
        eligibility
            .eligible
            .iter()
            .copied()
            .filter(|&i| self.admits(&tokens[i]))
            .collect()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Random => f.write_str("random"),
            Strategy::Stopwords => f.write_str("stopwords"),
            Strategy::Pos { tags } => {
                let names: Vec<_> = tags.iter().map(PosClass::name).collect();
                write!(f, "pos:{}", names.join("+"))
            }
        }
    }
}

/// A parsed strategy string: one component, or a hybrid of several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub components: Vec<(Strategy, f64)>,
    pub hybrid: bool,
}

fn parse_ratio(s: &str) -> Result<f64> {
    let r: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("ratio `{s}` is not a number")))?;
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("ratio {r} outside [0, 1]")));
    }
    Ok(r)
}

fn parse_strategy_head(head: &str) -> Result<Strategy> {
    let head = head.trim();
    match head {
        "random" => Ok(Strategy::Random),
        "stopwords" => Ok(Strategy::Stopwords),
        _ => {
            let Some(tags) = head.strip_prefix("pos:") else {
                return Err(Error::InvalidArgument(format!("unknown strategy `{head}`")));
            };
            let mut classes = tags
                .split('+')
                .map(str::parse)
                .collect::<Result<Vec<PosClass>>>()?;
            classes.sort();
            classes.dedup();
            Ok(Strategy::Pos { tags: classes })
        }
    }
}

fn parse_component(s: &str) -> Result<(Strategy, f64)> {
    let (head, ratio) = s
        .trim()
        .rsplit_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("strategy `{s}` needs a `:ratio` suffix")))?;
    Ok((parse_strategy_head(head)?, parse_ratio(ratio)?))
}

/// Top-level commas only; commas inside parentheses stay.
fn split_components(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// `random:0.4`, `pos:noun:0.8`, `pos:noun+verb:0.5`, `stopwords:0.6`,
    /// `hybrid:(pos:noun:0.5,stopwords:0.5)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("hybrid:") {
            let inner = rest
                .trim()
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| Error::InvalidArgument(format!("hybrid spec `{s}` needs parentheses")))?;
            let components = split_components(inner)
                .into_iter()
                .filter(|p| !p.trim().is_empty())
                .map(parse_component)
                .collect::<Result<Vec<_>>>()?;
            if components.is_empty() {
                return Err(Error::InvalidArgument("hybrid spec has no components".into()));
            }
            return Ok(MaskSpec {
                components,
                hybrid: true,
            });
        }
        Ok(MaskSpec {
            components: vec![parse_component(s)?],
            hybrid: false,
        })
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|(s, r)| format!("{s}:{r}"))
            .collect();
        if self.hybrid {
            write!(f, "hybrid:({})", parts.join(","))
        } else {
            f.write_str(&parts[0])
        }
    }
}

/// Expand `random:0.0..1.0:0.1` into specs at each ratio. A plain spec
/// yields itself.
pub fn parse_sweep(s: &str) -> Result<Vec<MaskSpec>> {
    let s = s.trim();
    let parts: Vec<&str> = s.split(':').collect();
    let Some(k) = parts.iter().position(|p| p.contains("..")) else {
        return Ok(vec![s.parse()?]);
    };
    if k == 0 || k + 2 != parts.len() {
        return Err(Error::InvalidArgument(format!("sweep `{s}` must look like `strategy:lo..hi:step`")));
    }
    let head = parts[..k].join(":");
    let step = parts[k + 1];
    let (lo, hi) = parts[k]
        .split_once("..")
        .expect("segment contains `..`");
    let (lo, hi) = (parse_ratio(lo)?, parse_ratio(hi)?);
    let step: f64 = step
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("sweep step `{step}` is not a number")))?;
    if !(step > 0.0) || hi < lo {
        return Err(Error::InvalidArgument(format!("sweep `{s}` has an empty or invalid range")));
    }
    let strategy = parse_strategy_head(&head)?;
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| {
            // Round to 10 decimals so 0.1 steps print as 0.3, not 0.30000000000000004.
            let r = ((lo + i as f64 * step) * 1e10).round() / 1e10;
            MaskSpec {
                components: vec![(strategy.clone(), r.min(1.0))],
                hybrid: false,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub spec: MaskSpec,
    pub seed: u64,
    /// Sorted token indices to mask, forced ones included.
    pub masked: BTreeSet<usize>,
    pub forced: BTreeSet<usize>,
    pub eligible_ratio: f64,
    pub actual_ratio: f64,
    /// Set when a requested ratio was positive but the pool was empty.
    pub note: Option<String>,
}

/// `floor(ratio·pool + 0.5)`.
pub fn mask_count(ratio: f64, pool: usize) -> usize {
    ((ratio * pool as f64) + 0.5).floor() as usize
}

fn draw(pool: &[usize], ratio: f64, seed: u64) -> Vec<usize> {
    let mut order = pool.to_vec();
    order.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(mask_count(ratio, pool.len()));
    order
}

fn finish(
    spec: MaskSpec,
    seed: u64,
    mut masked: BTreeSet<usize>,
    eligibility: &EligibilitySet,
    tokens: &[TokenRecord],
    note: Option<String>,
) -> MaskPlan {
    masked.extend(eligibility.forced.iter().copied());
    let (eligible_ratio, actual_ratio) = ratios(&masked, eligibility, tokens.len());
    MaskPlan {
        spec,
        seed,
        masked,
        forced: eligibility.forced.clone(),
        eligible_ratio,
        actual_ratio,
        note,
    }
}

fn ratios(masked: &BTreeSet<usize>, eligibility: &EligibilitySet, total: usize) -> (f64, f64) {
    let hit = masked.intersection(&eligibility.eligible).count();
    let eligible_ratio = if eligibility.eligible.is_empty() {
        0.0
    } else {
        hit as f64 / eligibility.eligible.len() as f64
    };
    let actual_ratio = if total == 0 {
        0.0
    } else {
        masked.len() as f64 / total as f64
    };
    (eligible_ratio, actual_ratio)
}

/// One-strategy plan. The pool is drawn as a single seeded permutation and
/// the first `k` indices are taken, so with a fixed seed a larger ratio
/// always masks a superset of a smaller one.
pub fn plan_mask(
    tokens: &[TokenRecord],
    eligibility: &EligibilitySet,
    strategy: &Strategy,
    ratio: f64,
    seed: u64,
) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} outside [0, 1]")));
    }
    let pool = strategy.pool(tokens, eligibility);
    let note = (pool.is_empty() && ratio > 0.0).then(|| format!("degenerate pool for {strategy}"));
    let masked = draw(&pool, ratio, seed).into_iter().collect();
    let spec = MaskSpec {
        components: vec![(strategy.clone(), ratio)],
        hybrid: false,
    };
    Ok(finish(spec, seed, masked, eligibility, tokens, note))
}

/// Union of per-component draws, component `i` seeded with `seed ^ i`.
pub fn plan_hybrid(
    tokens: &[TokenRecord],
    eligibility: &EligibilitySet,
    components: &[(Strategy, f64)],
    seed: u64,
) -> Result<MaskPlan> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("hybrid plan needs at least one component".into()));
    }
    let mut masked = BTreeSet::new();
    let mut notes = Vec::new();
    for (i, (strategy, ratio)) in components.iter().enumerate() {
        let part = plan_mask(tokens, eligibility, strategy, *ratio, seed ^ i as u64)?;
        masked.extend(part.masked);
        notes.extend(part.note);
    }
    let spec = MaskSpec {
        components: components.to_vec(),
        hybrid: true,
    };
    let note = (!notes.is_empty()).then(|| notes.join("; "));
    Ok(finish(spec, seed, masked, eligibility, tokens, note))
}

/// Dispatch on the spec shape.
pub fn plan(tokens: &[TokenRecord], eligibility: &EligibilitySet, spec: &MaskSpec, seed: u64) -> Result<MaskPlan> {
    if spec.hybrid {
        plan_hybrid(tokens, eligibility, &spec.components, seed)
    } else {
        let (strategy, ratio) = spec
            .components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mask spec has no component".into()))?;
        plan_mask(tokens, eligibility, strategy, *ratio, seed)
    }
}

/// Recompute (eligible_ratio, actual_ratio) from the plan's sets.
pub fn measure_ratios(plan: &MaskPlan, tokens: &[TokenRecord]) -> Result<(f64, f64)> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("cannot measure ratios over zero tokens".into()));
    }
    if let Some(&bad) = plan.masked.iter().find(|&&i| i >= tokens.len()) {
        return Err(Error::InvalidArgument(format!(
            "masked index {bad} out of range for {} tokens",
            tokens.len()
        )));
    }
    let eligibility = compute_eligibility(tokens);
    Ok(ratios(&plan.masked, &eligibility, tokens.len()))
}

/// Per-chunk seed: `corpus_seed` XOR a stable hash of (note_id, chunk_index).
pub fn chunk_seed(corpus_seed: u64, note_id: &str, chunk_index: usize) -> u64 {
    corpus_seed ^ stable_hash(&[note_id.as_bytes(), &(chunk_index as u64).to_be_bytes()])
}
