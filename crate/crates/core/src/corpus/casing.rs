use serde::{Deserialize, Serialize};

use super::Token;

/// Character-makeup class of a token, fed to the network as a one-hot channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasingClass {
    Padding,
    Numeric,
    AllLower,
    AllUpper,
    InitialUpper,
    Other,
    MainlyNumeric,
    ContainsDigit,
}

impl CasingClass {
    pub const COUNT: usize = 8;

    pub const ALL: [CasingClass; Self::COUNT] = [
        CasingClass::Padding,
        CasingClass::Numeric,
        CasingClass::AllLower,
        CasingClass::AllUpper,
        CasingClass::InitialUpper,
        CasingClass::Other,
        CasingClass::MainlyNumeric,
        CasingClass::ContainsDigit,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CasingClass::Padding => "padding",
            CasingClass::Numeric => "numeric",
            CasingClass::AllLower => "allLower",
            CasingClass::AllUpper => "allUpper",
            CasingClass::InitialUpper => "initialUpper",
            CasingClass::Other => "other",
            CasingClass::MainlyNumeric => "mainly_numeric",
            CasingClass::ContainsDigit => "contains_digit",
        }
    }
}

/// First matching rule wins: numeric, mainly_numeric (strictly more than half
/// digits), allLower, allUpper, initialUpper, contains_digit, other.
pub fn casing_of(token: &Token) -> CasingClass {
    classify(token.as_str())
}

pub(crate) fn classify(surface: &str) -> CasingClass {
    let total = surface.chars().count();
    let digits = surface.chars().filter(|c| c.is_numeric()).count();
    let has_letters = surface.chars().any(char::is_alphabetic);

    if total > 0 && digits == total {
        return CasingClass::Numeric;
    }
    if 2 * digits > total {
        return CasingClass::MainlyNumeric;
    }
    if digits == 0 && has_letters {
        if !surface.chars().any(char::is_uppercase) {
            return CasingClass::AllLower;
        }
        if !surface.chars().any(char::is_lowercase) {
            return CasingClass::AllUpper;
        }
        let mut chars = surface.chars();
        let first_upper = chars.next().is_some_and(char::is_uppercase);
        if first_upper && !chars.any(char::is_uppercase) {
            return CasingClass::InitialUpper;
        }
    }
    if digits > 0 {
        return CasingClass::ContainsDigit;
    }
    CasingClass::Other
}
