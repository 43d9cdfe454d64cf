//! Description preprocessing: lowercase, strip non-textual items, drop
//! stop-words, lemmatize by table lookup.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

const BUNDLED_STOPWORDS: &str = include_str!("../resources/stopwords_en.txt");
const BUNDLED_LEMMAS: &str = include_str!("../resources/lemmas_en.tsv");

/// Identifies the bundled resource revision in run reports.
pub const RESOURCE_VERSION: &str = "en-1";

/// Parses a one-word-per-line list. `#` lines and blanks are skipped.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Parses `surface<TAB>lemma` lines.
pub fn parse_lemma_table(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let (surface, lemma) = l.split_once('\t')?;
            Some((surface.trim().to_lowercase(), lemma.trim().to_lowercase()))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PrepConfig {
    pub min_token_len: usize,
    pub stopwords: Arc<HashSet<String>>,
    pub lemmas: Arc<HashMap<String, String>>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            min_token_len: 2,
            stopwords: Arc::new(parse_word_list(BUNDLED_STOPWORDS)),
            lemmas: Arc::new(parse_lemma_table(BUNDLED_LEMMAS)),
        }
    }
}

/// Ordered lowercase lemmas.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn joined_text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_url_like(chunk: &str) -> bool {
    chunk.contains("://") || chunk.starts_with("www.") || (chunk.contains('@') && chunk.contains('.'))
}

impl PrepConfig {
    fn keep(&self, token: &str) -> bool {
        token.len() >= self.min_token_len && !self.stopwords.contains(token)
    }

    pub fn preprocess(&self, description: &str) -> TokenStream {
        let lowered = description.to_lowercase();
        let mut tokens = Vec::new();
        for chunk in lowered.split_whitespace().filter(|c| !is_url_like(c)) {
            for raw in chunk.split(|c: char| !c.is_ascii_lowercase()) {
                if raw.is_empty() || !self.keep(raw) {
                    continue;
                }
                let lemma = self.lemmas.get(raw).map(String::as_str).unwrap_or(raw);
                if self.keep(lemma) {
                    tokens.push(lemma.to_string());
                }
            }
        }
        TokenStream { tokens }
    }
}

/// [`PrepConfig::preprocess`] with the bundled resources.
pub fn preprocess(description: &str) -> TokenStream {
    PrepConfig::default().preprocess(description)
}

/// Lossy decode for byte input; invalid sequences become U+FFFD, which is
/// then discarded as non-alphabetic.
pub fn preprocess_bytes(config: &PrepConfig, bytes: &[u8]) -> TokenStream {
    config.preprocess(&String::from_utf8_lossy(bytes))
}
