use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotationManifest, PatchRecord, Split};
use crate::error::{Result, TilError};

/// Splits records into train and test so that no patient contributes to both.
///
/// `round(test_fraction * n_patients)` patients go to test, clamped so each
/// side keeps at least one patient. Records keep their input order.
pub fn split_by_patient(
    manifests: &[AnnotationManifest],
    test_fraction: f64,
    seed: u64,
) -> Result<(AnnotationManifest, AnnotationManifest)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TilError::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let patients: Vec<&str> = manifests
        .iter()
        .flat_map(|m| m.records().iter().map(|r| r.patient_id.as_str()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if patients.len() < 2 {
        return Err(TilError::TooFewPatients(patients.len()));
    }

    let mut shuffled = patients.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * patients.len() as f64).round() as usize).clamp(1, patients.len() - 1);
    let test_patients: HashSet<&str> = shuffled[..n_test].iter().copied().collect();

    let mut train: Vec<PatchRecord> = Vec::new();
    let mut test: Vec<PatchRecord> = Vec::new();
    for r in manifests.iter().flat_map(|m| m.records()) {
        if test_patients.contains(r.patient_id.as_str()) {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }

    let base = manifests.first().and_then(|m| m.base_dir.clone());
    let mut train = AnnotationManifest::new("train", Split::Train, train)?;
    let mut test = AnnotationManifest::new("test", Split::Test, test)?;
    train.base_dir = base.clone();
    test.base_dir = base;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::manual;
    use super::*;
    use crate::cancer::CancerType;

    fn ten_by_ten() -> AnnotationManifest {
        let mut recs = Vec::new();
        for p in 0..10 {
            for x in 0..10 {
                recs.push(manual(&format!("slide{p}"), &format!("patient{p}"), CancerType::Luad, x, x % 3 == 0));
            }
        }
        AnnotationManifest::new("all", Split::Train, recs).unwrap()
    }

    #[test]
    fn ten_patients_seventy_thirty() {
        let (train, test) = split_by_patient(&[ten_by_ten()], 0.3, 7).unwrap();
        assert_eq!(train.patient_ids().len(), 7);
        assert_eq!(test.patient_ids().len(), 3);
        assert_eq!(train.len() + test.len(), 100);
        assert!(train.patient_ids().is_disjoint(&test.patient_ids()));
        assert_eq!(test.split, Split::Test);
    }

    #[test]
    fn single_patient_is_error() {
        let recs = (0..100).map(|x| manual("s", "only", CancerType::Luad, x, true)).collect();
        let m = AnnotationManifest::new("m", Split::Train, recs).unwrap();
        assert_eq!(split_by_patient(&[m], 0.5, 1).unwrap_err().code(), "too_few_patients");
    }

    #[test]
    fn invalid_fraction() {
        assert!(split_by_patient(&[ten_by_ten()], 0.0, 1).is_err());
        assert!(split_by_patient(&[ten_by_ten()], 1.0, 1).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = split_by_patient(&[ten_by_ten()], 0.5, 3).unwrap();
        let b = split_by_patient(&[ten_by_ten()], 0.5, 3).unwrap();
        assert_eq!(a.0.to_jsonl().unwrap(), b.0.to_jsonl().unwrap());
        assert_eq!(a.1.to_jsonl().unwrap(), b.1.to_jsonl().unwrap());
    }

    #[test]
    fn merges_multiple_manifests() {
        let a = AnnotationManifest::new("a", Split::Train, vec![manual("s1", "p1", CancerType::Luad, 0, true)]).unwrap();
        let b = AnnotationManifest::new("b", Split::Train, vec![manual("s2", "p2", CancerType::Luad, 0, false)]).unwrap();
        let (train, test) = split_by_patient(&[a, b], 0.5, 0).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));
    }
}
