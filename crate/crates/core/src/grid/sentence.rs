//! The fixed six-slot GRID sentence grammar:
//! `command color preposition letter digit adverb`, e.g. "bin blue at a 9 again".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! word_enum {
    ($name:ident, $field:literal, [$($variant:ident => $word:literal),+ $(,)?]) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            const FIELD: &'static str = $field;

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            fn parse_at(token: &str, position: usize) -> Result<Self> {
                match token.to_ascii_lowercase().as_str() {
                    $($word => Ok($name::$variant),)+
                    _ => Err(Error::Grammar {
                        position,
                        field: Self::FIELD,
                        token: token.to_string(),
                        reason: format!("is not one of {}", [$($word),+].join("/")),
                    }),
                }
            }
        }
    };
}

word_enum!(Command, "command", [Bin => "bin", Lay => "lay", Place => "place", Set => "set"]);
word_enum!(Color, "color", [Blue => "blue", Green => "green", Red => "red", White => "white"]);
word_enum!(Preposition, "preposition", [At => "at", By => "by", In => "in", With => "with"]);
word_enum!(Adverb, "adverb", [Again => "again", Now => "now", Please => "please", Soon => "soon"]);

/// One GRID utterance. The letter is stored upper-case and is never `W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSentence {
    pub command: Command,
    pub color: Color,
    pub preposition: Preposition,
    pub letter: char,
    pub digit: u8,
    pub adverb: Adverb,
}

/// Letters allowed in slot four.
pub const LETTERS: &[char] = &[
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S', 'T', 'U',
    'V', 'X', 'Y', 'Z',
];

fn parse_letter(token: &str) -> Result<char> {
    let err = |reason: &str| Error::Grammar {
        position: 3,
        field: "letter",
        token: token.to_string(),
        reason: reason.to_string(),
    };
    let mut chars = token.chars();
    let (Some(c), None) = (chars.next(), chars.next()) else {
        return Err(err("must be a single letter"));
    };
    let c = c.to_ascii_uppercase();
    if !c.is_ascii_uppercase() {
        return Err(err("must be a letter A-Z"));
    }
    if c == 'W' {
        return Err(err("is excluded ('W' is not part of the grammar)"));
    }
    Ok(c)
}

fn parse_digit(token: &str) -> Result<u8> {
    match token {
        d if d.len() == 1 && d.as_bytes()[0].is_ascii_digit() => Ok(d.as_bytes()[0] - b'0'),
        _ => Err(Error::Grammar {
            position: 4,
            field: "digit",
            token: token.to_string(),
            reason: "must be a single digit 0-9".into(),
        }),
    }
}

impl GridSentence {
    /// Parses exactly six tokens, validating each against its slot.
    pub fn parse_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        if tokens.len() != 6 {
            return Err(Error::InvalidInput(format!("a GRID sentence has 6 tokens, got {}", tokens.len())));
        }
        let t = |i: usize| tokens[i].as_ref();
        Ok(Self {
            command: Command::parse_at(t(0), 0)?,
            color: Color::parse_at(t(1), 1)?,
            preposition: Preposition::parse_at(t(2), 2)?,
            letter: parse_letter(t(3))?,
            digit: parse_digit(t(4))?,
            adverb: Adverb::parse_at(t(5), 5)?,
        })
    }

    /// The six words in lower case, as a recognizer would emit them.
    pub fn words(&self) -> Vec<String> {
        vec![
            self.command.as_str().to_string(),
            self.color.as_str().to_string(),
            self.preposition.as_str().to_string(),
            self.letter.to_ascii_lowercase().to_string(),
            self.digit.to_string(),
            self.adverb.as_str().to_string(),
        ]
    }
}

impl FromStr for GridSentence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<&str> = s.split_whitespace().collect();
        Self::parse_tokens(&tokens)
    }
}

impl fmt::Display for GridSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.words().join(" "))
    }
}

/// Parse entry point taking a token list.
pub fn parse_grid_sentence<S: AsRef<str>>(tokens: &[S]) -> Result<GridSentence> {
    GridSentence::parse_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_typical_and_boundary_sentences() {
        let s = parse_grid_sentence(&["bin", "blue", "at", "a", "9", "again"]).unwrap();
        assert_eq!(s.command, Command::Bin);
        assert_eq!(s.letter, 'A');
        assert_eq!(s.digit, 9);
        let s = parse_grid_sentence(&["set", "white", "with", "z", "0", "soon"]).unwrap();
        assert_eq!((s.command, s.color, s.preposition, s.letter, s.digit, s.adverb),
            (Command::Set, Color::White, Preposition::With, 'Z', 0, Adverb::Soon));
    }

    #[test]
    fn letter_w_is_rejected_at_position_three() {
        let err = parse_grid_sentence(&["bin", "blue", "at", "w", "9", "again"]).unwrap_err();
        match err {
            Error::Grammar { position, field, .. } => {
                assert_eq!(position, 3);
                assert_eq!(field, "letter");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn wrong_token_count_and_bad_slots_are_rejected() {
        assert!(parse_grid_sentence(&["bin", "blue", "at", "a", "9"]).is_err());
        assert!(matches!(
            parse_grid_sentence(&["put", "blue", "at", "a", "9", "again"]),
            Err(Error::Grammar { position: 0, .. })
        ));
        assert!(matches!(
            parse_grid_sentence(&["bin", "blue", "at", "a", "10", "again"]),
            Err(Error::Grammar { position: 4, .. })
        ));
        assert!(matches!(
            parse_grid_sentence(&["bin", "blue", "on", "a", "1", "again"]),
            Err(Error::Grammar { position: 2, .. })
        ));
    }

    fn any_sentence() -> impl Strategy<Value = GridSentence> {
        (0..4usize, 0..4usize, 0..4usize, 0..LETTERS.len(), 0..10u8, 0..4usize).prop_map(|(c, o, p, l, d, a)| {
            GridSentence {
                command: Command::ALL[c],
                color: Color::ALL[o],
                preposition: Preposition::ALL[p],
                letter: LETTERS[l],
                digit: d,
                adverb: Adverb::ALL[a],
            }
        })
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(s in any_sentence()) {
            prop_assert_eq!(s.to_string().parse::<GridSentence>().unwrap(), s);
            prop_assert_eq!(s.words().len(), 6);
        }
    }
}
