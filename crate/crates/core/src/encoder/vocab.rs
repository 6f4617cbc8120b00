use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const CLS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[CLS]", "[EOS]", "[UNK]"];

/// Continuation marker for word pieces after the first.
pub const CONTINUATION: &str = "##";

/// Token strings with dense ids; ids 0..4 are PAD, CLS, EOS, UNK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from the specials followed by `words` in order,
    /// skipping duplicates.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for w in words {
            let w = w.as_ref();
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len() as TokenId);
                tokens.push(w.to_string());
            }
        }
        Self { tokens, index }
    }

    /// Vocabulary of every surface word in `texts`, most frequent first,
    /// ties broken alphabetically.
    pub fn build<'t>(texts: impl IntoIterator<Item = &'t str>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(words.into_iter().map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map_or(SPECIALS[UNK as usize], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Splits `text` into words and looks each one up, CLS/EOS framed.
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let mut ids = vec![CLS];
        let mut word_spans = Vec::new();
        for word in split_words(text) {
            let start = ids.len();
            ids.extend(self.lookup_word(&word));
            word_spans.push((start, ids.len()));
        }
        ids.push(EOS);
        TokenSeq { ids, word_spans }
    }

    /// Whole-word match first, then greedy longest-prefix pieces; a word that
    /// cannot be fully covered becomes a single UNK.
    fn lookup_word(&self, word: &str) -> Vec<TokenId> {
        if let Some(id) = self.id(word) {
            return vec![id];
        }
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let piece: String = chars[start..end].iter().collect();
                let key = if start == 0 {
                    piece
                } else {
                    format!("{CONTINUATION}{piece}")
                };
                if let Some(id) = self.id(&key) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![UNK],
            }
        }
        pieces
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err("vocabulary must start with [PAD], [CLS], [EOS], [UNK]".into());
        }
        let vocab = Self::from_words(tokens[SPECIALS.len()..].iter());
        if vocab.len() != tokens.len() {
            return Err("vocabulary contains duplicate tokens".into());
        }
        Ok(vocab)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Lowercases, splits on whitespace, and separates every punctuation
/// character into its own word.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Token ids plus the token ranges that make up each surface word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    /// Half-open `[start, end)` token ranges, one per surface word.
    pub word_spans: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn surface(&self, vocab: &Vocab) -> Vec<String> {
        self.ids
            .iter()
            .map(|&i| vocab.token(i).to_string())
            .collect()
    }

    /// Surface strings of the word-level units: each word span joined from
    /// its pieces, special tokens kept as their own units.
    pub fn word_units(&self, vocab: &Vocab) -> Vec<String> {
        word_units(self.ids.len(), &self.word_spans)
            .into_iter()
            .map(|(s, e)| {
                self.ids[s..e]
                    .iter()
                    .map(|&i| vocab.token(i).trim_start_matches(CONTINUATION))
                    .collect::<String>()
            })
            .collect()
    }
}

pub fn is_special(id: TokenId) -> bool {
    matches!(id, PAD | CLS | EOS)
}

/// Reference input: same length and special-token positions, every content
/// token replaced by PAD.
pub fn make_reference(tokens: &TokenSeq) -> TokenSeq {
    TokenSeq {
        ids: tokens
            .ids
            .iter()
            .map(|&id| if is_special(id) { id } else { PAD })
            .collect(),
        word_spans: tokens.word_spans.clone(),
    }
}

/// The unit partition used for word-level matrices: every word span, plus a
/// singleton for each token not covered by a span, in token order. Spans are
/// assumed sorted and non-overlapping.
pub fn word_units(len: usize, spans: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut units = Vec::new();
    let mut covered = vec![false; len];
    for &(s, e) in spans {
        for c in covered.iter_mut().take(e.min(len)).skip(s) {
            *c = true;
        }
    }
    let mut spans_iter = spans.iter().peekable();
    let mut pos = 0;
    while pos < len {
        if let Some(&&(s, e)) = spans_iter.peek() {
            if s == pos {
                units.push((s, e));
                spans_iter.next();
                pos = e;
                continue;
            }
        }
        if !covered[pos] {
            units.push((pos, pos + 1));
        }
        pos += 1;
    }
    units
}
