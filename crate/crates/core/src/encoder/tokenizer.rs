//! Prompt tokenizers: a byte-level scheme and CLIP's byte-pair encoding.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokenizer section of an interchange `config.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerSpec {
    /// `[sot] + utf-8 bytes + [eot]`, padded with `pad`.
    Byte {
        context_length: usize,
        sot: i64,
        eot: i64,
        #[serde(default)]
        pad: i64,
    },
    /// CLIP BPE; `vocab` names the merges file (`bpe_simple_vocab_16e6.txt`)
    /// relative to the model directory.
    ClipBpe {
        vocab: String,
        #[serde(default = "default_context")]
        context_length: usize,
    },
}

fn default_context() -> usize {
    77
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Tokenizer {
    Byte {
        context_length: usize,
        sot: i64,
        eot: i64,
        pad: i64,
    },
    ClipBpe(ClipBpe),
}

impl Tokenizer {
    pub fn byte(context_length: usize) -> Self {
        Tokenizer::Byte {
            context_length,
            sot: 256,
            eot: 257,
            pad: 0,
        }
    }

    pub fn from_spec(spec: &TokenizerSpec, model_dir: &Path) -> Result<Self> {
        Ok(match spec {
            TokenizerSpec::Byte {
                context_length,
                sot,
                eot,
                pad,
            } => Tokenizer::Byte {
                context_length: *context_length,
                sot: *sot,
                eot: *eot,
                pad: *pad,
            },
            TokenizerSpec::ClipBpe { vocab, context_length } => {
                let path = model_dir.join(vocab);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Tokenizer::ClipBpe(ClipBpe::from_merges(&text, *context_length)?)
            }
        })
    }

    pub fn context_length(&self) -> usize {
        match self {
            Tokenizer::Byte { context_length, .. } => *context_length,
            Tokenizer::ClipBpe(bpe) => bpe.context_length,
        }
    }

    /// Token ids from start to end marker, without padding.
    pub fn encode(&self, prompt: &str) -> Result<Vec<i64>> {
        let ids = match self {
            Tokenizer::Byte { sot, eot, .. } => {
                let mut ids = Vec::with_capacity(prompt.len() + 2);
                ids.push(*sot);
                ids.extend(prompt.bytes().map(i64::from));
                ids.push(*eot);
                ids
            }
            Tokenizer::ClipBpe(bpe) => bpe.encode(prompt),
        };
        let limit = self.context_length();
        if ids.len() > limit {
            return Err(Error::TokenOverflow {
                prompt: prompt.to_string(),
                tokens: ids.len(),
                limit,
            });
        }
        Ok(ids)
    }

    pub fn encode_padded(&self, prompt: &str) -> Result<Vec<i64>> {
        let mut ids = self.encode(prompt)?;
        let pad = match self {
            Tokenizer::Byte { pad, .. } => *pad,
            Tokenizer::ClipBpe(_) => 0,
        };
        ids.resize(self.context_length(), pad);
        Ok(ids)
    }
}

/// CLIP's lower-cased byte-level BPE.
#[derive(Debug, Clone)]
pub struct ClipBpe {
    vocab: HashMap<String, i64>,
    ranks: HashMap<(String, String), usize>,
    byte_chars: [char; 256],
    pattern: Regex,
    sot: i64,
    eot: i64,
    context_length: usize,
}

/// Printable stand-ins for every byte, in CLIP's vocabulary order.
fn byte_alphabet() -> Vec<(u8, char)> {
    let mut printable: Vec<u32> = (u32::from(b'!')..=u32::from(b'~'))
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars = printable.clone();
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + extra);
            extra += 1;
        }
    }
    printable
        .into_iter()
        .zip(chars)
        .map(|(b, c)| (b as u8, char::from_u32(c).expect("valid code point")))
        .collect()
}

const MAX_MERGES: usize = 49152 - 256 - 2;

impl ClipBpe {
    /// Builds the tokenizer from the text of a merges file (first line is a
    /// header).
    pub fn from_merges(text: &str, context_length: usize) -> Result<Self> {
        let alphabet = byte_alphabet();
        let mut byte_chars = ['\0'; 256];
        for &(b, c) in &alphabet {
            byte_chars[b as usize] = c;
        }
        let mut tokens: Vec<String> = alphabet.iter().map(|(_, c)| c.to_string()).collect();
        tokens.extend(alphabet.iter().map(|(_, c)| format!("{c}</w>")));
        let mut ranks = HashMap::new();
        for (rank, line) in text.lines().skip(1).take(MAX_MERGES).enumerate() {
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config(format!("malformed BPE merge line {:?}", line)));
            };
            tokens.push(format!("{a}{b}"));
            ranks.insert((a.to_string(), b.to_string()), rank);
        }
        tokens.push("<|startoftext|>".into());
        tokens.push("<|endoftext|>".into());
        let vocab: HashMap<String, i64> = tokens.into_iter().enumerate().map(|(i, t)| (t, i as i64)).collect();
        let pattern =
            Regex::new(r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|\p{L}+|\p{N}|[^\s\p{L}\p{N}]+")
                .expect("static pattern");
        Ok(Self {
            sot: vocab["<|startoftext|>"],
            eot: vocab["<|endoftext|>"],
            vocab,
            ranks,
            byte_chars,
            pattern,
            context_length,
        })
    }

    fn bpe(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = token.chars().collect();
        let mut word: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = word.last_mut() {
            last.push_str("</w>");
        }
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, p)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, p)| (p[0].clone(), p[1].clone()));
            let Some((first, second)) = best else { break };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(word[i].clone());
                    i += 1;
                }
            }
            word = merged;
        }
        word
    }

    pub fn encode(&self, prompt: &str) -> Vec<i64> {
        let cleaned = prompt.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut ids = vec![self.sot];
        for m in self.pattern.find_iter(&cleaned) {
            let mapped: String = m.as_str().bytes().map(|b| self.byte_chars[b as usize]).collect();
            for piece in self.bpe(&mapped) {
                // every merge result is in the vocabulary by construction
                ids.push(self.vocab[&piece]);
            }
        }
        ids.push(self.eot);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_tokens() {
        let t = Tokenizer::byte(8);
        assert_eq!(t.encode("ab").unwrap(), vec![256, 97, 98, 257]);
        assert_eq!(t.encode_padded("ab").unwrap(), vec![256, 97, 98, 257, 0, 0, 0, 0]);
        match t.encode("abcdefg") {
            Err(Error::TokenOverflow { tokens, limit, .. }) => assert_eq!((tokens, limit), (9, 8)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alphabet_order_matches_clip() {
        let a = byte_alphabet();
        assert_eq!(a.len(), 256);
        assert_eq!(a[0], (b'!', '!'));
        // the first non-printable byte (0) maps to U+0100
        assert_eq!(a[188], (0, '\u{100}'));
        // space is byte 32 -> U+0120 ('Ġ')
        assert!(a.contains(&(b' ', '\u{120}')));
    }

    #[test]
    fn bpe_merges_apply_by_rank() {
        let merges = "#version: 0.2\nh e\nl l\nhe ll\no</w> x\nhell o</w>\n";
        let bpe = ClipBpe::from_merges(merges, 77).unwrap();
        let ids = bpe.encode("  Hello   hel");
        let base = 512;
        // "hello" -> he, ll, hell, hello</w> : a single token
        assert_eq!(ids[1], base + 4);
        // "hel" -> he + l</w>
        assert_eq!(ids[2], base);
        let l_w = byte_alphabet().iter().position(|&(b, _)| b == b'l').unwrap() as i64 + 256;
        assert_eq!(ids[3], l_w);
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[0], base + 5);
        assert_eq!(ids[4], base + 6);
    }
}
