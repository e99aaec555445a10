//! Tokenization, sentence splitting, syllable counting and lexicons.

mod lexicon;

use std::collections::HashSet;

pub use lexicon::{Lexicon, LexiconEntries, LexiconKind, LexiconSet, REGISTERS};

/// Hesitation markers flagged as fillers unless configured otherwise.
pub const DEFAULT_FILLERS: [&str; 5] = ["uh", "um", "er", "hm", "mm"];

/// Words whose trailing period never ends a sentence.
const ABBREVIATIONS: [&str; 22] = [
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "approx", "no",
    "fig", "inc", "ltd", "co", "mt", "gen", "gov", "sen",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub lower: String,
    pub is_word: bool,
    pub is_filler: bool,
}

impl Token {
    fn punct(c: char) -> Self {
        Token {
            surface: c.to_string(),
            lower: c.to_string(),
            is_word: false,
            is_filler: false,
        }
    }
}

/// Tokenizer with a configurable set of filler markers.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    fillers: HashSet<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::with_fillers(DEFAULT_FILLERS.iter().copied())
    }
}

impl Tokenizer {
    pub fn with_fillers<'a>(fillers: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            fillers: fillers.into_iter().map(str::to_lowercase).collect(),
        }
    }

    pub fn is_filler(&self, word: &str) -> bool {
        self.fillers.contains(&word.to_lowercase())
    }

    /// Splits on whitespace, then peels leading and trailing
    /// non-alphanumeric characters off each chunk as single-character
    /// punctuation tokens. Inner punctuation (`don't`, `e-mail`) stays.
    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let chars: Vec<char> = chunk.chars().collect();
            let start = chars.iter().position(|c| c.is_alphanumeric());
            let Some(start) = start else {
                out.extend(chars.iter().map(|&c| Token::punct(c)));
                continue;
            };
            let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap() + 1;
            out.extend(chars[..start].iter().map(|&c| Token::punct(c)));
            let surface: String = chars[start..end].iter().collect();
            let lower = surface.to_lowercase();
            let is_filler = self.fillers.contains(&lower);
            out.push(Token {
                surface,
                lower,
                is_word: true,
                is_filler,
            });
            out.extend(chars[end..].iter().map(|&c| Token::punct(c)));
        }
        out
    }
}

/// [`Tokenizer::tokenize`] with the default filler set.
pub fn tokenize(text: &str) -> Vec<Token> {
    Tokenizer::default().tokenize(text)
}

/// Splits after `.`, `!` or `?` (plus any closing quotes/brackets) when the
/// next non-space character is uppercase or the text ends. A period closing a
/// known abbreviation does not split.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len()
                && matches!(
                    chars[end],
                    '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '\u{201d}'
                )
            {
                end += 1;
            }
            let mut next = end;
            while next < chars.len() && chars[next].is_whitespace() {
                next += 1;
            }
            let at_end = next == chars.len();
            let boundary = at_end
                || (next > end
                    && chars[next].is_uppercase()
                    && !(c == '.' && ends_with_abbreviation(&chars[start..i])));
            if boundary {
                push_trimmed(&mut sentences, &chars[start..end]);
                start = end;
                i = end;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(&mut sentences, &chars[start.min(chars.len())..]);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

fn ends_with_abbreviation(before_period: &[char]) -> bool {
    let word: String = before_period
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if word.is_empty() {
        return false;
    }
    // single initials such as "J. Smith"
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Syllables in `word`: table lookup when present, otherwise the number of
/// maximal vowel groups (a, e, i, o, u, y) less a silent final `e`, at least 1.
pub fn count_syllables(word: &str, table: Option<&Lexicon>) -> u32 {
    if let Some(n) = table.and_then(|t| t.value(word)) {
        return (n.round() as u32).max(1);
    }
    fallback_syllables(word)
}

pub fn fallback_syllables(word: &str) -> u32 {
    let letters: Vec<char> = word
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphabetic())
        .collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0u32;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = letters.len();
    // silent final e: "image", "make"; but not "-le" after a consonant ("table")
    if n >= 3 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) && groups > 1 {
        let consonant_le = letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lowers(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.lower.as_str()).collect()
    }

    #[test]
    fn tokenize_examples() {
        let t = tokenize("Hello, world!");
        assert_eq!(lowers(&t), vec!["hello", ",", "world", "!"]);
        assert_eq!(
            t.iter().map(|t| t.is_word).collect::<Vec<_>>(),
            vec![true, false, true, false]
        );
        assert_eq!(t[0].surface, "Hello");

        let t = tokenize("um I think");
        assert_eq!(lowers(&t), vec!["um", "i", "think"]);
        assert!(t[0].is_filler && !t[1].is_filler);

        assert!(tokenize("").is_empty());
        assert_eq!(
            lowers(&tokenize("don't \"stop\"")),
            vec!["don't", "\"", "stop", "\""]
        );
    }

    #[test]
    fn custom_fillers() {
        let t = Tokenizer::with_fillers(["erm"]).tokenize("erm um");
        assert!(t[0].is_filler && !t[1].is_filler);
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(
            split_sentences("I agree. You do not."),
            vec!["I agree.", "You do not."]
        );
        assert_eq!(
            split_sentences("Dr. Smith spoke."),
            vec!["Dr. Smith spoke."]
        );
        assert_eq!(
            split_sentences("no terminal punctuation here"),
            vec!["no terminal punctuation here"]
        );
        assert_eq!(
            split_sentences("Really?! Yes. it is."),
            vec!["Really?!", "Yes. it is."]
        );
        assert_eq!(
            split_sentences("He said \"stop.\" Then left."),
            vec!["He said \"stop.\"", "Then left."]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn fallback_syllable_examples() {
        assert_eq!(fallback_syllables("strength"), 1);
        assert_eq!(fallback_syllables("image"), 2);
        assert_eq!(fallback_syllables("table"), 2);
        assert_eq!(fallback_syllables("the"), 1);
        assert_eq!(fallback_syllables("rhythm"), 1);
        assert_eq!(fallback_syllables("42"), 1);
    }
}
