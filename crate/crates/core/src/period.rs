//! Chronological period taxonomy for bronze Ding vessels.
//!
//! Eleven classes: Shang has Early and Late phases only, each later dynasty
//! has Early, Mid and Late. Declaration order is chronological order and is
//! also the classifier's output index order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dynasty {
    Shang,
    WesternZhou,
    SpringAndAutumn,
    WarringStates,
}

impl Dynasty {
    pub const ALL: [Dynasty; 4] = [
        Dynasty::Shang,
        Dynasty::WesternZhou,
        Dynasty::SpringAndAutumn,
        Dynasty::WarringStates,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dynasty::Shang => "Shang",
            Dynasty::WesternZhou => "WesternZhou",
            Dynasty::SpringAndAutumn => "SpringAndAutumn",
            Dynasty::WarringStates => "WarringStates",
        }
    }

    /// Display name with spaces, as used in report headers.
    pub fn title(self) -> &'static str {
        match self {
            Dynasty::Shang => "Shang",
            Dynasty::WesternZhou => "Western Zhou",
            Dynasty::SpringAndAutumn => "Spring and Autumn",
            Dynasty::WarringStates => "Warring States",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Early,
    Mid,
    Late,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Early, Phase::Mid, Phase::Late];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Early => "Early",
            Phase::Mid => "Mid",
            Phase::Late => "Late",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PeriodError {
    #[error("{0:?} has no {1:?} phase")]
    InvalidPair(Dynasty, Phase),
    #[error("unrecognized period {0:?}")]
    Unrecognized(String),
    #[error("class index {0} out of range")]
    IndexOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Period {
    ShangEarly,
    ShangLate,
    WesternZhouEarly,
    WesternZhouMid,
    WesternZhouLate,
    SpringAndAutumnEarly,
    SpringAndAutumnMid,
    SpringAndAutumnLate,
    WarringStatesEarly,
    WarringStatesMid,
    WarringStatesLate,
}

impl Period {
    pub const COUNT: usize = 11;

    pub const ALL: [Period; Period::COUNT] = [
        Period::ShangEarly,
        Period::ShangLate,
        Period::WesternZhouEarly,
        Period::WesternZhouMid,
        Period::WesternZhouLate,
        Period::SpringAndAutumnEarly,
        Period::SpringAndAutumnMid,
        Period::SpringAndAutumnLate,
        Period::WarringStatesEarly,
        Period::WarringStatesMid,
        Period::WarringStatesLate,
    ];

    pub fn new(dynasty: Dynasty, phase: Phase) -> Result<Self, PeriodError> {
        use Dynasty::*;
        use Phase::*;
        Ok(match (dynasty, phase) {
            (Shang, Early) => Period::ShangEarly,
            (Shang, Late) => Period::ShangLate,
            (WesternZhou, Early) => Period::WesternZhouEarly,
            (WesternZhou, Mid) => Period::WesternZhouMid,
            (WesternZhou, Late) => Period::WesternZhouLate,
            (SpringAndAutumn, Early) => Period::SpringAndAutumnEarly,
            (SpringAndAutumn, Mid) => Period::SpringAndAutumnMid,
            (SpringAndAutumn, Late) => Period::SpringAndAutumnLate,
            (WarringStates, Early) => Period::WarringStatesEarly,
            (WarringStates, Mid) => Period::WarringStatesMid,
            (WarringStates, Late) => Period::WarringStatesLate,
            (Shang, Mid) => return Err(PeriodError::InvalidPair(dynasty, phase)),
        })
    }

    /// Position in chronological order, equal to the classifier class index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self, PeriodError> {
        Self::ALL.get(index).copied().ok_or(PeriodError::IndexOutOfRange(index))
    }

    pub fn dynasty(self) -> Dynasty {
        match self {
            Period::ShangEarly | Period::ShangLate => Dynasty::Shang,
            Period::WesternZhouEarly | Period::WesternZhouMid | Period::WesternZhouLate => Dynasty::WesternZhou,
            Period::SpringAndAutumnEarly | Period::SpringAndAutumnMid | Period::SpringAndAutumnLate => {
                Dynasty::SpringAndAutumn
            }
            Period::WarringStatesEarly | Period::WarringStatesMid | Period::WarringStatesLate => {
                Dynasty::WarringStates
            }
        }
    }

    pub fn phase(self) -> Phase {
        match self {
            Period::ShangEarly
            | Period::WesternZhouEarly
            | Period::SpringAndAutumnEarly
            | Period::WarringStatesEarly => Phase::Early,
            Period::WesternZhouMid | Period::SpringAndAutumnMid | Period::WarringStatesMid => Phase::Mid,
            _ => Phase::Late,
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.dynasty().as_str(), self.phase().as_str())
    }
}

impl FromStr for Period {
    type Err = PeriodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unrecognized = || PeriodError::Unrecognized(s.to_string());
        let (d, p) = s.split_once('.').ok_or_else(unrecognized)?;
        let dynasty = Dynasty::ALL
            .into_iter()
            .find(|x| x.as_str() == d)
            .ok_or_else(unrecognized)?;
        let phase = Phase::ALL
            .into_iter()
            .find(|x| x.as_str() == p)
            .ok_or_else(unrecognized)?;
        Period::new(dynasty, phase)
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
