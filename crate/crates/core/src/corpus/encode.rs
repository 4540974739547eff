use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{Vocab, EOS, PAD, SOS, UNK};
use crate::corpus::{Hierarchy, Label, Topic};
use crate::error::{Error, Result};

/// Fixed-length encoded comment: `[SOS, tokens.., EOS, PAD..]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub length: usize,
}

impl TokenSequence {
    /// Builds a sequence from the non-padding prefix, padding to `t_max`.
    pub fn from_prefix(prefix: &[u32], t_max: usize) -> Self {
        assert!(prefix.len() <= t_max, "prefix longer than t_max");
        let mut ids = prefix.to_vec();
        ids.resize(t_max, PAD);
        let mask = (0..t_max).map(|i| i < prefix.len()).collect();
        TokenSequence {
            ids,
            mask,
            length: prefix.len(),
        }
    }

    pub fn t_max(&self) -> usize {
        self.ids.len()
    }

    pub fn valid(&self) -> &[u32] {
        &self.ids[..self.length]
    }

    /// Checks the structural invariants; returns the first problem found.
    pub fn check(&self, vocab_size: usize) -> std::result::Result<(), String> {
        if self.ids.len() != self.mask.len() {
            return Err("ids and mask differ in length".into());
        }
        if self.length == 0 || self.ids[0] != SOS {
            return Err("sequence does not start with SOS".into());
        }
        for (i, (&id, &m)) in self.ids.iter().zip(&self.mask).enumerate() {
            if id as usize >= vocab_size {
                return Err(format!("id {id} at {i} outside vocabulary"));
            }
            if m != (i < self.length) {
                return Err(format!("mask wrong at {i}"));
            }
            if i >= self.length && id != PAD {
                return Err(format!("non-PAD id after length at {i}"));
            }
            if i < self.length && id == PAD {
                return Err(format!("PAD inside valid region at {i}"));
            }
        }
        if self.valid().iter().filter(|&&t| t == EOS).count() > 1 {
            return Err("more than one EOS".into());
        }
        Ok(())
    }
}

/// Encodes `text` character by character. Content beyond `t_max - 2`
/// characters is dropped so that EOS always fits.
pub fn encode_text(text: &str, vocab: &Vocab, t_max: usize) -> TokenSequence {
    assert!(t_max >= 3, "t_max must be at least 3");
    let mut prefix = Vec::with_capacity(t_max);
    prefix.push(SOS);
    prefix.extend(text.chars().take(t_max - 2).map(|c| vocab.id(c)));
    prefix.push(EOS);
    TokenSequence::from_prefix(&prefix, t_max)
}

/// Encoder input for a comment with optional context:
/// `[SOS, text.., EOS, context.., EOS]`, truncating the context first and then
/// the text so both separators survive.
pub fn encode_with_context(text: &str, context: Option<&str>, vocab: &Vocab, t_max: usize) -> TokenSequence {
    let Some(ctx) = context.filter(|c| !c.is_empty()) else {
        return encode_text(text, vocab, t_max);
    };
    assert!(t_max >= 4, "t_max must be at least 4 with context");
    let budget = t_max - 3;
    let text_ids: Vec<u32> = text.chars().take(budget).map(|c| vocab.id(c)).collect();
    let ctx_ids: Vec<u32> = ctx.chars().take(budget - text_ids.len()).map(|c| vocab.id(c)).collect();
    let mut prefix = Vec::with_capacity(t_max);
    prefix.push(SOS);
    prefix.extend(text_ids);
    prefix.push(EOS);
    prefix.extend(ctx_ids);
    prefix.push(EOS);
    TokenSequence::from_prefix(&prefix, t_max)
}

/// Text between SOS and the first EOS. Unknown ids decode to U+FFFD.
pub fn decode(seq: &TokenSequence, vocab: &Vocab) -> String {
    decode_ids(&seq.ids, vocab)
}

pub fn decode_ids(ids: &[u32], vocab: &Vocab) -> String {
    ids.iter()
        .skip_while(|&&t| t == SOS)
        .take_while(|&&t| t != EOS && t != PAD)
        .map(|&t| match t {
            UNK => '\u{FFFD}',
            t => vocab.char_of(t).unwrap_or('\u{FFFD}'),
        })
        .collect()
}

pub const COND_DIM: usize = 9;

/// Condition vector: `[label one-hot (2) | topic one-hot (5) | hierarchy one-hot (2)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFeature {
    pub values: [f64; COND_DIM],
}

impl ConditionalFeature {
    /// The same condition with the label block zeroed.
    pub fn without_label(&self) -> ConditionalFeature {
        let mut values = self.values;
        values[0] = 0.0;
        values[1] = 0.0;
        ConditionalFeature { values }
    }

    pub fn label(&self) -> Label {
        if self.values[0] >= self.values[1] {
            Label::Sarcastic
        } else {
            Label::NonSarcastic
        }
    }
}

pub fn encode_condition(label: Label, topic: Topic, hierarchy: Hierarchy) -> Result<ConditionalFeature> {
    let label_slot = match label {
        Label::Sarcastic => 0,
        Label::NonSarcastic => 1,
        Label::Ambiguous => return Err(Error::data("condition requires binary label")),
    };
    let mut values = [0.0; COND_DIM];
    values[label_slot] = 1.0;
    values[2 + topic.index()] = 1.0;
    values[7 + hierarchy.index()] = 1.0;
    Ok(ConditionalFeature { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, CommentRecord};
    use proptest::prelude::*;

    fn vocab_ab() -> Vocab {
        let r = CommentRecord::new("x", "ab", Label::Sarcastic, Topic::Lifestyle, Hierarchy::TopLevel);
        build_vocab(&[r], 1).unwrap()
    }

    #[test]
    fn empty_text() {
        let s = encode_text("", &vocab_ab(), 4);
        assert_eq!(s.ids, vec![SOS, EOS, PAD, PAD]);
        assert_eq!(s.length, 2);
        assert_eq!(s.mask, vec![true, true, false, false]);
    }

    #[test]
    fn direct_mapping() {
        let v = vocab_ab();
        assert_eq!((v.id('a'), v.id('b')), (4, 5));
        let s = encode_text("ab", &v, 8);
        assert_eq!(s.ids, vec![SOS, 4, 5, EOS, PAD, PAD, PAD, PAD]);
        s.check(v.len()).unwrap();
    }

    #[test]
    fn truncation_keeps_sos_and_eos() {
        let s = encode_text("abababab", &vocab_ab(), 5);
        assert_eq!(s.ids, vec![SOS, 4, 5, 4, EOS]);
        assert_eq!(s.length, 5);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let s = encode_text("az", &vocab_ab(), 6);
        assert_eq!(s.ids[2], UNK);
    }

    #[test]
    fn context_encoding_keeps_both_separators() {
        let v = vocab_ab();
        let s = encode_with_context("ab", Some("ba"), &v, 7);
        assert_eq!(s.ids, vec![SOS, 4, 5, EOS, 5, 4, EOS]);
        let s = encode_with_context("abababab", Some("ba"), &v, 6);
        assert_eq!(s.ids[s.length - 1], EOS);
        assert_eq!(s.length, 6);
    }

    #[test]
    fn condition_layouts() {
        let c = encode_condition(Label::Sarcastic, Topic::Lifestyle, Hierarchy::TopLevel).unwrap();
        assert_eq!(c.values, [1., 0., 1., 0., 0., 0., 0., 1., 0.]);
        let c = encode_condition(Label::NonSarcastic, Topic::Politics, Hierarchy::Nested).unwrap();
        assert_eq!(c.values, [0., 1., 0., 1., 0., 0., 0., 0., 1.]);
    }

    #[test]
    fn every_combination_has_three_ones() {
        let mut n = 0;
        for l in [Label::Sarcastic, Label::NonSarcastic] {
            for t in Topic::ALL {
                for h in Hierarchy::ALL {
                    let c = encode_condition(l, t, h).unwrap();
                    assert_eq!(c.values.iter().sum::<f64>(), 3.0);
                    assert_eq!(c.values.iter().filter(|&&x| x == 0.0).count(), 6);
                    n += 1;
                }
            }
        }
        assert_eq!(n, 20);
    }

    #[test]
    fn ambiguous_condition_rejected() {
        let err = encode_condition(Label::Ambiguous, Topic::Politics, Hierarchy::Nested).unwrap_err();
        assert_eq!(err.to_string(), "condition requires binary label");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn decode_inverts_encode(chars in proptest::collection::vec(
            proptest::sample::select(vec!['今', '天', '气', '真', '好', 'a', ' ', '，', '？']), 0..=14)) {
            let text: String = chars.into_iter().collect();
            let corpus = CommentRecord::new("v", "今天气真好a ，？", Label::Sarcastic, Topic::Lifestyle, Hierarchy::TopLevel);
            let v = build_vocab(&[corpus], 1).unwrap();
            let s = encode_text(&text, &v, 16);
            prop_assert!(s.check(v.len()).is_ok());
            prop_assert_eq!(decode(&s, &v), text);
        }
    }
}
