use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

/// Diagnostic class. `Cn` (cognitively normal) is class 0, `Ad` is class 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "CN")]
    Cn,
    #[serde(rename = "AD")]
    Ad,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Cn, Label::Ad];

    pub fn index(self) -> usize {
        match self {
            Label::Cn => 0,
            Label::Ad => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self, Error> {
        match i {
            0 => Ok(Label::Cn),
            1 => Ok(Label::Ad),
            _ => Err(Error::InvalidLabel(i)),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Cn => Label::Ad,
            Label::Ad => Label::Cn,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Cn => "CN",
            Label::Ad => "AD",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "CN" => Ok(Label::Cn),
            "AD" => Ok(Label::Ad),
            other => Err(invalid(format!("unknown label {other:?}"))),
        }
    }
}
