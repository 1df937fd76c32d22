use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::TilError;

/// The twelve TCGA cohorts covered by the classifier. Uveal melanoma is
/// deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CancerType {
    Blca,
    Brca,
    Cesc,
    Coad,
    Luad,
    Lusc,
    Paad,
    Prad,
    Read,
    Skcm,
    Stad,
    Ucec,
}

impl CancerType {
    pub const ALL: [CancerType; 12] = [
        CancerType::Blca,
        CancerType::Brca,
        CancerType::Cesc,
        CancerType::Coad,
        CancerType::Luad,
        CancerType::Lusc,
        CancerType::Paad,
        CancerType::Prad,
        CancerType::Read,
        CancerType::Skcm,
        CancerType::Stad,
        CancerType::Ucec,
    ];

    pub fn code(self) -> &'static str {
        match self {
            CancerType::Blca => "BLCA",
            CancerType::Brca => "BRCA",
            CancerType::Cesc => "CESC",
            CancerType::Coad => "COAD",
            CancerType::Luad => "LUAD",
            CancerType::Lusc => "LUSC",
            CancerType::Paad => "PAAD",
            CancerType::Prad => "PRAD",
            CancerType::Read => "READ",
            CancerType::Skcm => "SKCM",
            CancerType::Stad => "STAD",
            CancerType::Ucec => "UCEC",
        }
    }
}

impl fmt::Display for CancerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CancerType {
    type Err = TilError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        CancerType::ALL
            .into_iter()
            .find(|t| t.code() == upper)
            .ok_or_else(|| TilError::InvalidArgument(format!("unknown cancer type {s:?}")))
    }
}
