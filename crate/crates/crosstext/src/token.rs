//! Deterministic word tokenization shared by the reference model, category
//! handling, and the frequency analysis.
//!
//! The rule is fixed: lowercase, split on whitespace and punctuation,
//! punctuation dropped. A token is a maximal run of alphanumeric characters.

use sha2::{Digest, Sha256};

/// End-of-answer marker. Also encodes "start of answer" when used as the
/// previous-token input at step 0, the same convention GPT-2 uses for its
/// single endoftext token. Angle brackets never survive tokenization, so the
/// marker cannot collide with a real token.
pub const END_TOKEN: &str = "<end>";

/// Tokenize `text`: lowercase, keep alphanumeric runs, drop everything else.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Version fingerprint of the tokenization rule, embedded in checkpoints so a
/// checkpoint is rejected if the rule ever changes underneath it.
pub fn tokenizer_spec_hash() -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(
        b"tokenizer-v1: lowercase; split on whitespace+punctuation; punctuation dropped; end=",
    );
    hasher.update(END_TOKEN.as_bytes());
    hasher.finalize().into()
}
