use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The fourteen TED-style affective rating categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Category {
    Beautiful,
    Confusing,
    Courageous,
    Fascinating,
    Funny,
    Informative,
    Ingenious,
    Inspiring,
    JawDropping,
    Longwinded,
    Obnoxious,
    Ok,
    Persuasive,
    Unconvincing,
}

impl Category {
    pub const ALL: [Category; 14] = [
        Category::Beautiful,
        Category::Confusing,
        Category::Courageous,
        Category::Fascinating,
        Category::Funny,
        Category::Informative,
        Category::Ingenious,
        Category::Inspiring,
        Category::JawDropping,
        Category::Longwinded,
        Category::Obnoxious,
        Category::Ok,
        Category::Persuasive,
        Category::Unconvincing,
    ];

    /// Positive categories, in the order used by the label-frequency table.
    pub const POSITIVE: [Category; 9] = [
        Category::Beautiful,
        Category::Courageous,
        Category::Fascinating,
        Category::Funny,
        Category::Ingenious,
        Category::Informative,
        Category::Inspiring,
        Category::JawDropping,
        Category::Persuasive,
    ];

    pub const NEUTRAL_NEGATIVE: [Category; 5] = [
        Category::Confusing,
        Category::Longwinded,
        Category::Obnoxious,
        Category::Ok,
        Category::Unconvincing,
    ];

    /// Canonical lowercase name used in every input and output file.
    pub fn name(self) -> &'static str {
        match self {
            Category::Beautiful => "beautiful",
            Category::Confusing => "confusing",
            Category::Courageous => "courageous",
            Category::Fascinating => "fascinating",
            Category::Funny => "funny",
            Category::Informative => "informative",
            Category::Ingenious => "ingenious",
            Category::Inspiring => "inspiring",
            Category::JawDropping => "jaw-dropping",
            Category::Longwinded => "longwinded",
            Category::Obnoxious => "obnoxious",
            Category::Ok => "ok",
            Category::Persuasive => "persuasive",
            Category::Unconvincing => "unconvincing",
        }
    }

    /// Capitalized label for rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::Beautiful => "Beautiful",
            Category::Confusing => "Confusing",
            Category::Courageous => "Courageous",
            Category::Fascinating => "Fascinating",
            Category::Funny => "Funny",
            Category::Informative => "Informative",
            Category::Ingenious => "Ingenious",
            Category::Inspiring => "Inspiring",
            Category::JawDropping => "Jaw-dropping",
            Category::Longwinded => "Longwinded",
            Category::Obnoxious => "Obnoxious",
            Category::Ok => "Okay",
            Category::Persuasive => "Persuasive",
            Category::Unconvincing => "Unconvincing",
        }
    }

    pub fn index(self) -> usize {
        Category::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

impl TryFrom<String> for Category {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Category> for String {
    fn from(c: Category) -> String {
        c.name().to_string()
    }
}

/// Debate topic of a crowdsourced speech.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Topic {
    A,
    B,
    C,
}

impl Topic {
    pub const ALL: [Topic; 3] = [Topic::A, Topic::B, Topic::C];

    /// One-hot encoding in A, B, C order.
    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Topic::A => "A",
            Topic::B => "B",
            Topic::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Topic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "A" => Ok(Topic::A),
            "B" => Ok(Topic::B),
            "C" => Ok(Topic::C),
            other => Err(Error::InvalidRecord(format!("unknown topic `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert_eq!(
            Category::POSITIVE.len() + Category::NEUTRAL_NEGATIVE.len(),
            14
        );
    }

    #[test]
    fn unknown_name_is_rejected_with_name() {
        let err = "amazing".parse::<Category>().unwrap_err();
        assert!(err.to_string().contains("amazing"));
    }

    #[test]
    fn topic_one_hot() {
        assert_eq!(Topic::B.one_hot(), [0.0, 1.0, 0.0]);
    }
}
