//! cl100k_base byte-pair encoding.
//!
//! The same vocabulary is used to budget prompts for every provider; it is
//! exact for OpenAI models and an approximation elsewhere.

use std::sync::OnceLock;

use tiktoken_rs::CoreBPE;

pub type TokenId = u32;

pub struct Tokenizer {
    bpe: CoreBPE,
}

impl Tokenizer {
    /// The shared cl100k_base tokenizer. The vocabulary is loaded once.
    pub fn cl100k() -> &'static Tokenizer {
        static INSTANCE: OnceLock<Tokenizer> = OnceLock::new();
        INSTANCE.get_or_init(|| Tokenizer {
            bpe: tiktoken_rs::cl100k_base().expect("bundled cl100k_base vocabulary loads"),
        })
    }

    /// Special-token markers such as `<|endoftext|>` are encoded as plain text.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.bpe.encode_ordinary(text)
    }

    pub fn count(&self, text: &str) -> usize {
        if text.is_empty() {
            return 0;
        }
        self.encode(text).len()
    }

    /// Raw bytes of a token run. A run may end inside a multi-byte character.
    pub fn decode_bytes(&self, tokens: &[TokenId]) -> Vec<u8> {
        self.bpe.decode_bytes(tokens).expect("token ids come from this vocabulary")
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(tokens)).into_owned()
    }
}

/// Number of cl100k_base tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    Tokenizer::cl100k().count(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_zero() {
        assert_eq!(count_tokens(""), 0);
    }

    #[test]
    fn count_is_encode_length() {
        let tok = Tokenizer::cl100k();
        for text in ["hello world", "CHI, ETRA, UbiComp", "<|endoftext|>", "日本語のテキスト"] {
            assert_eq!(tok.count(text), tok.encode(text).len());
            assert_eq!(tok.decode(&tok.encode(text)), text);
        }
    }

    #[test]
    fn known_encoding() {
        // "hello world" is two tokens in cl100k_base
        assert_eq!(Tokenizer::cl100k().encode("hello world"), vec![15339, 1917]);
    }
}
