//! Deterministic synthetic text: a Zipf-weighted soup of pseudo-words.
//!
//! The byte model only needs text with learnable low-level structure —
//! a modest vocabulary, Zipfian word frequencies, spaces, sentence
//! punctuation — not meaning. Generating it from a seed keeps the whole
//! pipeline reproducible with no external data dependency.

use rand::Rng as _;

use cgc::rng::rng_from;
use cgc::{Error, Result};

/// Knobs of the corpus generator.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct CorpusParams {
    pub seed: u64,
    /// Minimum output size; generation stops at the first sentence
    /// boundary past it.
    pub bytes: usize,
    pub vocab_words: usize,
    /// Word-frequency decay: weight of rank-i word is (i+1)^-z.
    pub zipf_exponent: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            seed: 1234,
            bytes: 1_200_000,
            vocab_words: 150,
            zipf_exponent: 1.1,
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if self.bytes < 4096 {
            return Err(Error::InvalidConfig(format!(
                "corpus must be at least 4096 bytes, got {}",
                self.bytes
            )));
        }
        if !(2..=5000).contains(&self.vocab_words) {
            return Err(Error::InvalidConfig(format!(
                "vocabulary must have 2..=5000 words, got {}",
                self.vocab_words
            )));
        }
        // `!(x >= 0.0)` rather than `x < 0.0`: NaN must fail too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.zipf_exponent >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "zipf exponent must be nonnegative, got {}",
                self.zipf_exponent
            )));
        }
        Ok(())
    }
}

const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable pseudo-word: alternating consonants and vowels.
fn make_word(rng: &mut cgc::rng::Rng) -> String {
    let len = rng.gen_range(3..=8usize);
    let start_consonant: bool = rng.gen_range(0..2u8) == 0;
    let mut w = String::with_capacity(len);
    for i in 0..len {
        let set = if (i % 2 == 0) == start_consonant {
            CONSONANTS
        } else {
            VOWELS
        };
        w.push(set[rng.gen_range(0..set.len())] as char);
    }
    w
}

/// The deterministic vocabulary for a seed: unique pseudo-words, most
/// frequent first.
pub fn vocabulary(params: &CorpusParams) -> Vec<String> {
    let mut rng = rng_from(params.seed);
    let mut seen = std::collections::HashSet::new();
    let mut vocab = Vec::with_capacity(params.vocab_words);
    while vocab.len() < params.vocab_words {
        let w = make_word(&mut rng);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }
    vocab
}

/// Generate the corpus: ASCII sentences of Zipf-sampled words, a newline
/// every few sentences, at least `params.bytes` long.
pub fn generate(params: &CorpusParams) -> Result<Vec<u8>> {
    params.validate()?;
    let vocab = vocabulary(params);
    // Cumulative Zipf weights for binary-search sampling.
    let mut cum = Vec::with_capacity(vocab.len());
    let mut total = 0.0f64;
    for i in 0..vocab.len() {
        total += ((i + 1) as f64).powf(-params.zipf_exponent);
        cum.push(total);
    }

    // Word draws come from a separate stream so vocabulary construction
    // and text length don't interact.
    let mut rng = rng_from(cgc::rng::component_seed(params.seed, 1));
    let mut out = Vec::with_capacity(params.bytes + 256);
    let mut sentence_in_line = 0usize;
    while out.len() < params.bytes {
        let n_words = rng.gen_range(6..=14usize);
        for w in 0..n_words {
            let r: f64 = rng.gen_range(0.0..total);
            let idx = cum.partition_point(|&c| c <= r);
            let word = vocab[idx.min(vocab.len() - 1)].as_bytes();
            if w == 0 {
                out.push(word[0].to_ascii_uppercase());
                out.extend_from_slice(&word[1..]);
            } else {
                out.push(b' ');
                out.extend_from_slice(word);
            }
        }
        out.push(b'.');
        sentence_in_line += 1;
        if sentence_in_line == 5 {
            out.push(b'\n');
            sentence_in_line = 0;
        } else {
            out.push(b' ');
        }
    }
    // End cleanly regardless of where the size threshold landed.
    while matches!(out.last(), Some(b' ')) {
        out.pop();
    }
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_ascii_deterministic_and_long_enough() {
        let params = CorpusParams {
            bytes: 8192,
            ..CorpusParams::default()
        };
        let a = generate(&params).unwrap();
        let b = generate(&params).unwrap();
        assert_eq!(a, b);
        assert!(a.len() >= 8192);
        assert!(a.iter().all(u8::is_ascii));
        assert!(a.contains(&b'.') && a.contains(&b'\n'));
        let other = generate(&CorpusParams {
            seed: 99,
            bytes: 8192,
            ..CorpusParams::default()
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn vocabulary_is_unique_and_sized() {
        let params = CorpusParams::default();
        let v = vocabulary(&params);
        assert_eq!(v.len(), 150);
        let set: std::collections::HashSet<_> = v.iter().collect();
        assert_eq!(set.len(), 150);
        for w in &v {
            assert!(w.chars().all(|c| c.is_ascii_lowercase()));
            assert!((3..=8).contains(&w.len()));
        }
    }

    #[test]
    fn zipf_weighting_prefers_early_words() {
        let params = CorpusParams {
            bytes: 65536,
            ..CorpusParams::default()
        };
        let text = String::from_utf8(generate(&params).unwrap()).unwrap();
        let vocab = vocabulary(&params);
        let count = |w: &str| text.matches(w).count();
        // The most frequent word appears far more often than a tail word.
        assert!(count(&vocab[0]) > 5 * count(&vocab[149]).max(1) / 2);
        assert!(generate(&CorpusParams {
            bytes: 100,
            ..params
        })
        .is_err());
    }
}
