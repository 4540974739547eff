use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::corpus::CommentRecord;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Character vocabulary with four reserved indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<char>,
    index: HashMap<char, u32>,
}

impl Vocab {
    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, (i + NUM_RESERVED) as u32))
            .collect();
        Vocab { tokens: chars, index }
    }

    /// Total size including reserved tokens.
    pub fn len(&self) -> usize {
        self.tokens.len() + NUM_RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// The character for a non-reserved id.
    pub fn char_of(&self, id: u32) -> Option<char> {
        (id as usize)
            .checked_sub(NUM_RESERVED)
            .and_then(|i| self.tokens.get(i).copied())
    }

    pub fn chars(&self) -> &[char] {
        &self.tokens
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for r in RESERVED {
            writeln!(w, "{r}")?;
        }
        for &c in &self.tokens {
            writeln!(w, "{}", escape(c))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from(r: impl BufRead) -> Result<Vocab> {
        let mut chars = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if n < NUM_RESERVED {
                if line != RESERVED[n] {
                    return Err(Error::data(format!(
                        "vocabulary line {}: expected reserved token {}",
                        n + 1,
                        RESERVED[n]
                    )));
                }
                continue;
            }
            let c = unescape(&line)
                .ok_or_else(|| Error::data(format!("vocabulary line {}: not a single character", n + 1)))?;
            chars.push(c);
        }
        let v = Vocab::from_chars(chars);
        if v.index.len() != v.tokens.len() {
            return Err(Error::data("vocabulary contains duplicate tokens"));
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let f = std::fs::File::open(path)?;
        Vocab::read_from(std::io::BufReader::new(f))
    }
}

fn escape(c: char) -> String {
    match c {
        '\n' => "\\n".into(),
        '\r' => "\\r".into(),
        '\t' => "\\t".into(),
        '\\' => "\\\\".into(),
        c => c.to_string(),
    }
}

fn unescape(s: &str) -> Option<char> {
    match s {
        "\\n" => Some('\n'),
        "\\r" => Some('\r'),
        "\\t" => Some('\t'),
        "\\\\" => Some('\\'),
        _ => {
            let mut it = s.chars();
            let c = it.next()?;
            it.next().is_none().then_some(c)
        }
    }
}

/// Builds a character vocabulary from record texts and contexts.
///
/// Characters seen at least `min_freq` times get an index; ordering is by
/// descending frequency, ties broken by code point.
pub fn build_vocab(records: &[CommentRecord], min_freq: usize) -> Result<Vocab> {
    if records.is_empty() {
        return Err(Error::data("empty corpus"));
    }
    if min_freq < 1 {
        return Err(Error::config("corpus.min_freq", "must be at least 1"));
    }
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    for r in records {
        let ctx = r.context.as_deref().unwrap_or("");
        for c in r.text.chars().chain(ctx.chars()) {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut kept: Vec<(char, usize)> = counts.into_iter().filter(|&(_, n)| n >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Vocab::from_chars(kept.into_iter().map(|(c, _)| c).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Hierarchy, Label, Topic};
    use std::collections::HashSet;

    fn rec(text: &str) -> CommentRecord {
        CommentRecord::new("r", text, Label::Sarcastic, Topic::Lifestyle, Hierarchy::TopLevel)
    }

    #[test]
    fn min_freq_one_keeps_everything() {
        let v = build_vocab(&[rec("aab")], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.contains('a') && v.contains('b'));
        assert_eq!(v.id('a'), 4, "most frequent first");
    }

    #[test]
    fn min_freq_two_drops_rare() {
        let v = build_vocab(&[rec("aab")], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id('b'), UNK);
    }

    #[test]
    fn size_matches_distinct_character_count() {
        let records = [rec("今天天气真好"), rec("好个屁呀"), rec("abc今")];
        let distinct: HashSet<char> = records.iter().flat_map(|r| r.text.chars()).collect();
        assert_eq!(distinct.len(), 11);
        assert_eq!(build_vocab(&records, 1).unwrap().len(), distinct.len() + NUM_RESERVED);
        assert_eq!(build_vocab(&records, 1).unwrap().len(), 15);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = build_vocab(&[], 1).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn file_round_trip_with_escapes() {
        let v = build_vocab(&[rec("a\n\\好\tb")], 1).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("<pad>\n<sos>\n<eos>\n<unk>\n"));
        let back = Vocab::read_from(&buf[..]).unwrap();
        assert_eq!(back, v);
    }
}
