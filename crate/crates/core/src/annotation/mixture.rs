use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{AnnotationManifest, AnnotationSource, PatchRecord, Split};
use crate::cancer::CancerType;
use crate::error::{Result, TilError};

/// Which annotation source each cancer type contributes to the training mix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePolicy {
    pub manual_types: BTreeSet<CancerType>,
    pub semi_types: BTreeSet<CancerType>,
    pub excluded_types: BTreeSet<CancerType>,
    /// Optional per-type cap on kept semi-automatic records (first N in
    /// manifest order).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub semi_caps: BTreeMap<CancerType, usize>,
}

impl Default for MixturePolicy {
    fn default() -> Self {
        use CancerType::*;
        Self {
            manual_types: [Brca, Coad, Luad, Paad, Prad, Skcm, Ucec].into(),
            semi_types: [Cesc, Lusc, Read, Stad].into(),
            excluded_types: [Blca].into(),
            semi_caps: BTreeMap::new(),
        }
    }
}

impl MixturePolicy {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("manual_types", &self.manual_types, "semi_types", &self.semi_types),
            ("manual_types", &self.manual_types, "excluded_types", &self.excluded_types),
            ("semi_types", &self.semi_types, "excluded_types", &self.excluded_types),
        ];
        for (a_name, a, b_name, b) in pairs {
            if let Some(t) = a.intersection(b).next() {
                return Err(TilError::InvalidPolicy(format!(
                    "{t} appears in both {a_name} and {b_name}"
                )));
            }
        }
        Ok(())
    }

    fn covers(&self, t: CancerType) -> bool {
        self.manual_types.contains(&t) || self.semi_types.contains(&t) || self.excluded_types.contains(&t)
    }
}

/// Builds the mixed training set: manual annotations for the manual types,
/// semi-automatic annotations for the semi types, nothing for excluded types.
///
/// If the same patch appears in both inputs and the manual record is kept,
/// the manual record wins.
pub fn assemble_mixture(
    manual: &AnnotationManifest,
    semi: &AnnotationManifest,
    policy: &MixturePolicy,
) -> Result<AnnotationManifest> {
    policy.validate()?;
    for r in manual.records().iter().chain(semi.records()) {
        if !policy.covers(r.cancer_type) {
            return Err(TilError::UncoveredCancerType(r.cancer_type));
        }
    }
    check_source(manual, AnnotationSource::Manual)?;
    check_source(semi, AnnotationSource::SemiAuto)?;

    let mut out: Vec<PatchRecord> = manual
        .records()
        .iter()
        .filter(|r| policy.manual_types.contains(&r.cancer_type))
        .cloned()
        .collect();
    let manual_keys: HashSet<(&str, u32, u32)> = manual
        .records()
        .iter()
        .filter(|r| policy.manual_types.contains(&r.cancer_type))
        .map(|r| (r.slide_id.as_str(), r.grid_x, r.grid_y))
        .collect();

    let mut kept_per_type: BTreeMap<CancerType, usize> = BTreeMap::new();
    for r in semi.records() {
        if !policy.semi_types.contains(&r.cancer_type)
            || manual_keys.contains(&(r.slide_id.as_str(), r.grid_x, r.grid_y))
        {
            continue;
        }
        let kept = kept_per_type.entry(r.cancer_type).or_default();
        if policy.semi_caps.get(&r.cancer_type).is_some_and(|&cap| *kept >= cap) {
            continue;
        }
        *kept += 1;
        out.push(r.clone());
    }

    let name = format!("{}+{}", manual.name, semi.name);
    AnnotationManifest::new(name, Split::Train, out)
}

fn check_source(m: &AnnotationManifest, expected: AnnotationSource) -> Result<()> {
    match m.records().iter().find(|r| r.source != expected) {
        Some(r) => Err(TilError::InvalidRecord(format!(
            "{} ({}, {}) in {} has source {:?}, expected {:?}",
            r.slide_id, r.grid_x, r.grid_y, m.name, r.source, expected
        ))),
        None => Ok(()),
    }
}
