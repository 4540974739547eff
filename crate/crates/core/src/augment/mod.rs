//! Word-replacement augmentation: pick content-word spans in a comment, ask a
//! client for substitutes, and splice the chosen ones back in.

mod lexicon;
mod remote;

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommentRecord, Provenance, Topic};
use crate::error::{Error, Result};
use crate::rng;

pub use lexicon::{Lexicon, MockClient};
pub use remote::{RemoteClient, RemoteConfig, PROMPT_TEMPLATE, PROMPT_VERSION};

pub const MAX_CANDIDATES: usize = 5;

/// High-frequency function characters never chosen as replacement targets.
const STOP_CHARS: &str = "的了是在我你他她它们这那就都也还又很太吗呢吧啊呀哦嘛么不没有和与及或而被把给让对从向到个一着过得地之其所以为但却才再已要会能可";

/// A target in character offsets, `end` exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    pub original: String,
    pub targets: Vec<Span>,
    pub proposals: Vec<Vec<Candidate>>,
    pub chosen: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capability {
    pub max_text_chars: usize,
    pub max_candidates: usize,
    pub deterministic: bool,
}

pub trait ReplacementClient: Send + Sync {
    fn capability(&self) -> Capability;

    /// Raw candidates for `target`. Filtering happens in [`propose`].
    fn propose(&self, text: &str, target: &Span, topic: Option<Topic>, seed: u64) -> Result<Vec<Candidate>>;
}

pub fn is_stop_char(c: char) -> bool {
    STOP_CHARS.contains(c)
}

fn eligible(c: char) -> bool {
    c.is_alphabetic() && !is_stop_char(c)
}

/// All candidate spans of `text`: lexicon words by maximal munch, otherwise
/// runs of ASCII letters or single eligible characters. Word spans come
/// first in the returned pair.
pub fn segment(text: &str, lexicon: &Lexicon) -> (Vec<Span>, Vec<Span>) {
    let chars: Vec<char> = text.chars().collect();
    let span = |start: usize, end: usize| Span {
        start,
        end,
        surface: chars[start..end].iter().collect(),
    };
    let (mut words, mut singles) = (Vec::new(), Vec::new());
    let mut i = 0;
    while i < chars.len() {
        if let Some(len) = lexicon.longest_match(&chars, i) {
            if chars[i..i + len].iter().any(|&c| eligible(c)) {
                words.push(span(i, i + len));
            }
            i += len;
        } else if chars[i].is_ascii_alphabetic() {
            let end = (i..chars.len()).find(|&j| !chars[j].is_ascii_alphabetic()).unwrap_or(chars.len());
            singles.push(span(i, end));
            i = end;
        } else {
            if eligible(chars[i]) {
                singles.push(span(i, i + 1));
            }
            i += 1;
        }
    }
    (words, singles)
}

/// Up to `k` non-overlapping content spans, lexicon words preferred, sorted
/// by position.
pub fn select_targets(text: &str, k: usize, seed: u64, lexicon: &Lexicon) -> Result<Vec<Span>> {
    if k == 0 {
        return Err(Error::config("augment.k", "must be at least 1"));
    }
    let (mut words, mut singles) = segment(text, lexicon);
    let mut r = rng::named_rng(seed, &format!("targets|{text}"));
    words.shuffle(&mut r);
    singles.shuffle(&mut r);
    let mut picked: Vec<Span> = words.into_iter().chain(singles).take(k).collect();
    picked.sort_by_key(|s| s.start);
    Ok(picked)
}

/// Asks `client` for substitutes and keeps at most five distinct non-empty
/// candidates that differ from the target.
pub fn propose(
    client: &dyn ReplacementClient,
    text: &str,
    target: &Span,
    topic: Option<Topic>,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let n = text.chars().count();
    if target.start >= target.end || target.end > n {
        return Err(Error::data(format!(
            "span {}..{} out of bounds for text of {n} characters",
            target.start, target.end
        )));
    }
    let actual: String = text.chars().skip(target.start).take(target.end - target.start).collect();
    if actual != target.surface {
        return Err(Error::data(format!("span surface `{}` does not match text `{actual}`", target.surface)));
    }
    let mut seen = HashSet::new();
    let out: Vec<Candidate> = client
        .propose(text, target, topic, seed)?
        .into_iter()
        .map(|c| Candidate {
            text: c.text.trim().to_string(),
            score: c.score,
        })
        .filter(|c| !c.text.is_empty() && c.text != target.surface && seen.insert(c.text.clone()))
        .take(MAX_CANDIDATES)
        .collect();
    if out.is_empty() {
        return Err(Error::NoProposal(target.surface.clone()));
    }
    Ok(out)
}

/// Checks the plan's structural invariants and returns targets sorted by start.
fn checked_targets(plan: &ReplacementPlan) -> Result<Vec<(usize, &Span, &str)>> {
    if plan.targets.len() != plan.chosen.len() || plan.targets.len() != plan.proposals.len() {
        return Err(Error::data("plan targets, proposals and choices differ in length"));
    }
    let n = plan.original.chars().count();
    let mut order: Vec<(usize, &Span, &str)> = plan
        .targets
        .iter()
        .zip(&plan.chosen)
        .enumerate()
        .map(|(i, (s, c))| (i, s, c.as_str()))
        .collect();
    order.sort_by_key(|&(_, s, _)| (s.start, s.end));
    for &(i, s, c) in &order {
        if s.start >= s.end || s.end > n {
            return Err(Error::data(format!("span {}..{} out of bounds", s.start, s.end)));
        }
        if c == s.surface {
            return Err(Error::data(format!("replacement for `{}` is unchanged", s.surface)));
        }
        if !plan.proposals[i].iter().any(|p| p.text == c) {
            return Err(Error::data(format!("`{c}` is not among the proposals for `{}`", s.surface)));
        }
    }
    if order.windows(2).any(|w| w[1].1.start < w[0].1.end) {
        return Err(Error::data("overlapping replacement"));
    }
    Ok(order)
}

/// Splices every chosen replacement into the original, right to left so
/// earlier offsets stay valid.
pub fn apply_plan(plan: &ReplacementPlan) -> Result<String> {
    let order = checked_targets(plan)?;
    let mut chars: Vec<char> = plan.original.chars().collect();
    for &(_, s, c) in order.iter().rev() {
        chars.splice(s.start..s.end, c.chars());
    }
    Ok(chars.into_iter().collect())
}

/// Builds one plan for `text`: selects targets, gathers proposals and picks
/// one candidate per target. Targets without proposals are dropped; if none
/// survive the result is `NoProposal`.
pub fn plan_replacement(
    client: &dyn ReplacementClient,
    lexicon: &Lexicon,
    text: &str,
    topic: Option<Topic>,
    k: usize,
    seed: u64,
) -> Result<ReplacementPlan> {
    let mut plan = ReplacementPlan {
        original: text.to_string(),
        targets: Vec::new(),
        proposals: Vec::new(),
        chosen: Vec::new(),
    };
    let mut r = rng::named_rng(seed, "choose");
    let mut last_err = None;
    for span in select_targets(text, k, seed, lexicon)? {
        match propose(client, text, &span, topic, seed) {
            Ok(cands) => {
                let pick = cands.choose(&mut r).expect("non-empty").text.clone();
                plan.targets.push(span);
                plan.proposals.push(cands);
                plan.chosen.push(pick);
            }
            Err(e @ Error::NoProposal(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    if plan.targets.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::NoProposal(text.to_string())));
    }
    Ok(plan)
}

/// Which replacement service `build_client` returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    /// Deterministic lexicon lookup.
    Mock,
    /// OpenAI-style chat endpoint configured through `AUG_API_*`.
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub client: ClientKind,
    /// Replacement lexicon (tab-separated); the bundled one when unset.
    pub lexicon: Option<std::path::PathBuf>,
    /// New records requested per input record.
    pub factor: usize,
    /// Replacements per new record.
    pub k: usize,
    /// When set, the output (originals plus children) is grown to this size.
    pub target_total: Option<usize>,
    /// Upper bound on client calls in flight.
    pub concurrency: usize,
    /// Plans tried per requested child before giving up on it.
    pub attempts_per_child: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            client: ClientKind::Mock,
            lexicon: None,
            factor: 1,
            k: 2,
            target_total: None,
            concurrency: 4,
            attempts_per_child: 4,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::config("augment.factor", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("augment.k", "must be at least 1"));
        }
        if self.concurrency == 0 {
            return Err(Error::config("augment.concurrency", "must be at least 1"));
        }
        if self.attempts_per_child == 0 {
            return Err(Error::config("augment.attempts_per_child", "must be at least 1"));
        }
        Ok(())
    }

    /// The lexicon used for target selection.
    pub fn load_lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::bundled()),
        }
    }

    /// The configured client and the lexicon that goes with it.
    pub fn build_client(&self) -> Result<(Box<dyn ReplacementClient>, Lexicon)> {
        let lexicon = self.load_lexicon()?;
        let client: Box<dyn ReplacementClient> = match self.client {
            ClientKind::Mock => Box::new(MockClient::new(lexicon.clone())),
            ClientKind::Remote => Box::new(RemoteClient::new(RemoteConfig::from_env()?)?),
        };
        Ok((client, lexicon))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub id: String,
    pub requested: usize,
    pub produced: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    pub entries: Vec<SkipEntry>,
    /// Records missing from `target_total`, if one was requested.
    pub shortfall: usize,
}

impl SkipReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.shortfall == 0
    }
}

#[derive(Clone, Debug)]
pub struct AugmentOutput {
    /// Originals in input order, followed by the new records.
    pub records: Vec<CommentRecord>,
    pub added: usize,
    pub skipped: SkipReport,
}

fn augment_one(
    rec: &CommentRecord,
    client: &dyn ReplacementClient,
    lexicon: &Lexicon,
    cfg: &AugmentConfig,
    factor: usize,
) -> Result<(Vec<CommentRecord>, Option<SkipEntry>)> {
    let mut texts: HashSet<String> = HashSet::from([rec.text.clone()]);
    let mut children = Vec::new();
    let mut reason = String::new();
    for attempt in 0..factor * cfg.attempts_per_child {
        if children.len() == factor {
            break;
        }
        let seed = rng::substream(cfg.seed, &format!("{}#{attempt}", rec.id));
        let plan = match plan_replacement(client, lexicon, &rec.text, Some(rec.topic), cfg.k, seed) {
            Ok(p) => p,
            Err(Error::NoProposal(w)) => {
                reason = format!("no proposal for `{w}`");
                continue;
            }
            Err(e) => return Err(e),
        };
        let text = apply_plan(&plan)?;
        if !texts.insert(text.clone()) {
            reason = "duplicate variants".to_string();
            continue;
        }
        let mut child = rec.clone();
        child.id = format!("{}.aug{}", rec.id, children.len() + 1);
        child.text = text;
        child.provenance = Some(Provenance::Augmented);
        children.push(child);
    }
    let skip = (children.len() < factor).then(|| SkipEntry {
        id: rec.id.clone(),
        requested: factor,
        produced: children.len(),
        reason,
    });
    Ok((children, skip))
}

/// Augments every record up to `factor` times (or enough times to reach
/// `target_total`). Children keep the parent's label, topic, hierarchy and
/// behavior; ids are `<parent>.aug<j>`. Records that could not be fully
/// augmented are listed in the skip report.
pub fn augment_dataset(
    records: &[CommentRecord],
    client: &dyn ReplacementClient,
    lexicon: &Lexicon,
    cfg: &AugmentConfig,
) -> Result<AugmentOutput> {
    cfg.validate()?;
    let need = cfg.target_total.map(|t| t.saturating_sub(records.len()));
    let factor = match need {
        Some(0) => 0,
        Some(need) if !records.is_empty() => need.div_ceil(records.len()) + 1,
        _ => cfg.factor,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency)
        .build()
        .map_err(|e| Error::data(format!("thread pool: {e}")))?;
    let per_record: Vec<(Vec<CommentRecord>, Option<SkipEntry>)> = pool.install(|| {
        records
            .par_iter()
            .map(|r| augment_one(r, client, lexicon, cfg, factor))
            .collect::<Result<_>>()
    })?;

    // Round-robin by child index, so truncation spreads over parents.
    let mut added = Vec::new();
    for j in 0..factor {
        for (children, _) in &per_record {
            if let Some(c) = children.get(j) {
                added.push(c.clone());
            }
        }
    }
    let mut skipped = SkipReport::default();
    match need {
        Some(need) => {
            added.truncate(need);
            skipped.shortfall = need - added.len();
            if skipped.shortfall > 0 {
                skipped.entries = per_record.into_iter().filter_map(|(_, s)| s).collect();
            }
        }
        None => skipped.entries = per_record.into_iter().filter_map(|(_, s)| s).collect(),
    }
    if !skipped.is_empty() {
        log::warn!(
            "augmentation incomplete for {} records (shortfall {})",
            skipped.entries.len(),
            skipped.shortfall
        );
    }
    let n_added = added.len();
    let mut out = records.to_vec();
    out.extend(added);
    Ok(AugmentOutput {
        records: out,
        added: n_added,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(text: &str, spans: &[(usize, usize, &str)]) -> ReplacementPlan {
        let chars: Vec<char> = text.chars().collect();
        let targets: Vec<Span> = spans
            .iter()
            .map(|&(s, e, _)| Span {
                start: s,
                end: e,
                surface: chars[s..e].iter().collect(),
            })
            .collect();
        ReplacementPlan {
            original: text.into(),
            proposals: spans
                .iter()
                .map(|&(_, _, c)| {
                    vec![Candidate {
                        text: c.into(),
                        score: 1.0,
                    }]
                })
                .collect(),
            chosen: spans.iter().map(|&(_, _, c)| c.to_string()).collect(),
            targets,
        }
    }

    #[test]
    fn splice_arithmetic() {
        assert_eq!(apply_plan(&plan("abcd", &[(1, 2, "XY")])).unwrap(), "aXYcd");
        assert_eq!(apply_plan(&plan("abcd", &[])).unwrap(), "abcd");
        assert_eq!(apply_plan(&plan("abcd", &[(3, 4, "Z"), (0, 2, "Q")])).unwrap(), "QcZ");
    }

    #[test]
    fn overlap_is_rejected() {
        let err = apply_plan(&plan("abcdef", &[(1, 3, "X"), (2, 4, "Y")])).unwrap_err();
        assert!(err.to_string().contains("overlapping replacement"), "{err}");
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let mut p = plan("abc", &[(1, 2, "X")]);
        p.targets[0].end = 9;
        assert!(apply_plan(&p).is_err());
    }

    #[test]
    fn segmentation_skips_stop_chars_and_punctuation() {
        let lex = Lexicon::parse("电影\t戏剧\n").unwrap();
        let (words, singles) = segment("这电影的票，abc 123", &lex);
        assert_eq!(words.len(), 1);
        assert_eq!(words[0].surface, "电影");
        let surfaces: Vec<&str> = singles.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, ["票", "abc"]);
    }
}
