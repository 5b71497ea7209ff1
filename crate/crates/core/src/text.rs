//! Tokenization, token-level edit distance, and sentence splitting.
//!
//! The tokenizer is model independent: text is split on Unicode whitespace and
//! punctuation marks become their own tokens. A hyphen, period, apostrophe or
//! underscore sitting between two alphanumeric characters stays inside the
//! token, so `GPT-3.5` and `don't` survive intact.

use serde::{Deserialize, Serialize};

/// A tokenized view of a piece of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub source_text: String,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }

    /// Builds a sequence from already-split tokens. `source_text` is the
    /// detokenized form.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let source_text = detokenize(&tokens);
        Self { tokens, source_text }
    }
}

fn is_connector(c: char) -> bool {
    matches!(c, '-' | '.' | '\'' | '\u{2019}' | '_')
}

// Tokens that attach to the previous token when detokenizing.
fn is_closing(tok: &str) -> bool {
    let mut chars = tok.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => matches!(
            c,
            '.' | ',' | ';' | ':' | '!' | '?' | ')' | ']' | '}' | '%' | '\'' | '"' | '\u{2019}' | '\u{201D}' | '\u{2026}'
        ),
        _ => false,
    }
}

// Tokens after which no space is inserted.
fn is_opening(tok: &str) -> bool {
    matches!(tok, "(" | "[" | "{" | "\u{201C}" | "\u{2018}")
}

/// Splits `text` into tokens. Deterministic, allocation per token.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq {
        tokens: split_tokens(text),
        source_text: text.to_owned(),
    }
}

/// Token strings only; the hot path for edit distance and chunking.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let joins = c.is_alphanumeric()
                || (is_connector(c)
                    && !current.is_empty()
                    && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
            if joins {
                current.push(c);
            } else {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Number of tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    split_tokens(text).len()
}

/// Joins tokens back into text. Closing punctuation attaches to the previous
/// token and nothing is inserted after an opening bracket.
/// `split_tokens(&detokenize(t)) == t` for any token list produced by the tokenizer.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for tok in tokens {
        let tok = tok.as_ref();
        if let Some(p) = prev {
            if !is_closing(tok) && !is_opening(p) {
                out.push(' ');
            }
        }
        out.push_str(tok);
        prev = Some(tok);
    }
    out
}

/// Keeps at most `max_tokens` tokens of `text`. Text already within the cap
/// is returned trimmed but otherwise untouched.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let tokens = split_tokens(text);
    if tokens.len() <= max_tokens {
        return text.trim().to_owned();
    }
    detokenize(&tokens[..max_tokens])
}

/// Unit-cost Levenshtein distance over arbitrary token slices.
///
/// Two-row dynamic program, `O(|a|·|b|)` time and `O(min(|a|,|b|))` space.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (i, x) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Token-level edit distance between two texts.
pub fn text_distance(a: &str, b: &str) -> usize {
    levenshtein(&split_tokens(a), &split_tokens(b))
}

/// Splits text into sentences. A sentence ends at `.`, `!` or `?` followed by
/// whitespace or the end of input. Returned slices are trimmed and non-empty.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match iter.peek() {
                None => true,
                Some(&(_, n)) => n.is_whitespace(),
            };
            if at_boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Truncates `s` to at most `max_words` whitespace-separated words.
/// Returns the input unchanged (modulo trimming) when it is short enough.
pub fn truncate_words(s: &str, max_words: usize) -> String {
    let words: Vec<&str> = s.split_whitespace().collect();
    if words.len() <= max_words {
        return s.trim().to_owned();
    }
    words[..max_words].join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("the cat sat.").tokens, toks(&["the", "cat", "sat", "."]));
        assert_eq!(tokenize("GPT-3.5, yes").tokens, toks(&["GPT-3.5", ",", "yes"]));
    }

    #[test]
    fn tokenize_punctuation_runs() {
        assert_eq!(split_tokens("wait..."), toks(&["wait", ".", ".", "."]));
        assert_eq!(split_tokens("(1869)"), toks(&["(", "1869", ")"]));
        assert_eq!(split_tokens("don't -x"), toks(&["don't", "-", "x"]));
        assert_eq!(split_tokens("  \t\n "), Vec::<String>::new());
    }

    #[test]
    fn detokenize_attaches_punctuation() {
        assert_eq!(detokenize(&toks(&["the", "cat", "sat", "."])), "the cat sat.");
        assert_eq!(detokenize(&toks(&["(", "1869", ")", ",", "ok"])), "(1869), ok");
    }

    #[test]
    fn truncate_tokens_caps() {
        assert_eq!(truncate_tokens("a b c, d", 3), "a b c");
        assert_eq!(truncate_tokens(" a  b ", 3), "a  b");
        assert_eq!(truncate_tokens("a b", 0), "");
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(&toks(&["a", "b", "c"]), &toks(&["a", "b", "c"])), 0);
        assert_eq!(levenshtein(&toks(&["a"]), &toks(&[])), 1);
        assert_eq!(
            levenshtein(&toks(&["the", "cat", "sat"]), &toks(&["the", "dog", "sat", "down"])),
            2
        );
    }

    #[test]
    fn sentences_split_on_terminal_punctuation() {
        assert_eq!(
            split_sentences("It rained. Did it? Yes! v1.2 shipped"),
            vec!["It rained.", "Did it?", "Yes!", "v1.2 shipped"]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn truncate_words_caps_length() {
        let long = (0..80).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(truncate_words(&long, 64).split_whitespace().count(), 64);
        assert_eq!(truncate_words(" short one ", 64), "short one");
    }

    fn arb_tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..max)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in arb_tokens(30), b in arb_tokens(30), c in arb_tokens(30)) {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn symmetric_and_zero_iff_equal(a in arb_tokens(12), b in arb_tokens(12)) {
            let d = levenshtein(&a, &b);
            prop_assert_eq!(d, levenshtein(&b, &a));
            prop_assert_eq!(d == 0, a == b);
        }

        #[test]
        fn appending_n_tokens_costs_n(a in arb_tokens(20), extra in arb_tokens(10)) {
            let mut longer = a.clone();
            longer.extend(extra.iter().cloned());
            prop_assert_eq!(levenshtein(&a, &longer), extra.len());
        }

        #[test]
        fn detokenize_round_trips(text in "[a-zA-Z0-9 .,;:!?()'\"_\\-\\n]{0,60}") {
            let t = split_tokens(&text);
            prop_assert_eq!(split_tokens(&detokenize(&t)), t);
        }
    }
}
