use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{Candidate, Capability, ReplacementClient, Span};
use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::rng;

const BUNDLED: &str = include_str!("../../assets/lexicon.tsv");

/// Replacement lexicon: `word<TAB>candidate1,candidate2,...` per line.
///
/// A key of the form `word@topic` holds candidates specific to one topic and
/// takes precedence over the plain entry when that topic is given.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
    longest: usize,
}

impl Lexicon {
    pub fn bundled() -> Lexicon {
        Lexicon::parse(BUNDLED).expect("bundled lexicon is well-formed")
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        Lexicon::parse(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut lex = Lexicon::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, cands) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("line {}: expected word<TAB>candidates", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::data(format!("line {}: empty word", i + 1)));
            }
            let list: Vec<String> = cands
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect();
            let word = key.split('@').next().expect("split yields one part");
            lex.longest = lex.longest.max(word.chars().count());
            lex.entries.entry(key.to_string()).or_default().extend(list);
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    /// Length in characters of the longest entry starting at `chars[i]`.
    pub fn longest_match(&self, chars: &[char], i: usize) -> Option<usize> {
        let max = self.longest.min(chars.len() - i);
        (1..=max).rev().find(|&len| {
            let w: String = chars[i..i + len].iter().collect();
            self.entries.contains_key(&w)
        })
    }

    pub fn candidates(&self, word: &str, topic: Option<Topic>) -> &[String] {
        topic
            .and_then(|t| self.entries.get(&format!("{word}@{}", t.name())))
            .or_else(|| self.entries.get(word))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Offline client answering from a [`Lexicon`]. Candidate order is a seeded
/// shuffle keyed on the text, span and seed, so identical requests always get
/// identical answers.
#[derive(Clone, Debug)]
pub struct MockClient {
    lexicon: Lexicon,
    max_candidates: usize,
}

impl MockClient {
    pub fn new(lexicon: Lexicon) -> MockClient {
        MockClient {
            lexicon,
            max_candidates: 5,
        }
    }

    pub fn bundled() -> MockClient {
        MockClient::new(Lexicon::bundled())
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl ReplacementClient for MockClient {
    fn capability(&self) -> Capability {
        Capability {
            max_text_chars: usize::MAX,
            max_candidates: self.max_candidates,
            deterministic: true,
        }
    }

    fn propose(&self, text: &str, target: &Span, topic: Option<Topic>, seed: u64) -> Result<Vec<Candidate>> {
        let mut list: Vec<String> = self.lexicon.candidates(&target.surface, topic).to_vec();
        let key = format!("{}|{}|{}|{text}", target.start, target.end, target.surface);
        list.shuffle(&mut rng::named_rng(seed, &key));
        Ok(list
            .into_iter()
            .take(self.max_candidates)
            .enumerate()
            .map(|(rank, text)| Candidate {
                text,
                score: 1.0 / (rank + 1) as f64,
            })
            .collect())
    }
}
