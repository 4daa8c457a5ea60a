use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The eight discrete emotions. Indices are frozen: they order the network
/// outputs, the weight file label table, and every API.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Neutral = 0,
    Happy = 1,
    Sad = 2,
    Surprise = 3,
    Fear = 4,
    Disgust = 5,
    Anger = 6,
    Contempt = 7,
}

impl EmotionLabel {
    pub const COUNT: usize = 8;

    pub const ALL: [EmotionLabel; Self::COUNT] = [
        EmotionLabel::Neutral,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprise,
        EmotionLabel::Fear,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
        EmotionLabel::Contempt,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Lowercase name, also the dataset directory name.
    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Contempt => "contempt",
        }
    }

    /// Capitalized name for display.
    pub fn title(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "Neutral",
            EmotionLabel::Happy => "Happy",
            EmotionLabel::Sad => "Sad",
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Anger => "Anger",
            EmotionLabel::Contempt => "Contempt",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown emotion label {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_order_is_frozen() {
        let names: Vec<_> = EmotionLabel::ALL.iter().map(|l| l.name()).collect();
        assert_eq!(
            names,
            ["neutral", "happy", "sad", "surprise", "fear", "disgust", "anger", "contempt"]
        );
        for (i, l) in EmotionLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(EmotionLabel::from_index(i), Some(*l));
        }
        assert_eq!(EmotionLabel::from_index(8), None);
    }

    #[test]
    fn parses_names() {
        assert_eq!("Contempt".parse::<EmotionLabel>().unwrap(), EmotionLabel::Contempt);
        assert!("joy".parse::<EmotionLabel>().is_err());
        assert_eq!(serde_json::to_string(&EmotionLabel::Sad).unwrap(), "\"sad\"");
    }
}
