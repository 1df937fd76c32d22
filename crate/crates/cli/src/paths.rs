//! Keeps relative `patch_uri`s valid when a manifest is written somewhere
//! other than where its inputs live.

use std::path::{Path, PathBuf};

use til_core::annotation::{AnnotationManifest, PatchRecord};

fn dir_of(path: &Path) -> PathBuf {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::path::absolute(parent).unwrap_or_else(|_| parent.to_path_buf())
}

/// Records of `m` with every relative patch URI rewritten so that it resolves
/// from `out_path`'s directory.
pub fn rebased_records(m: &AnnotationManifest, out_path: &Path) -> Vec<PatchRecord> {
    let out_dir = dir_of(out_path);
    let base = m
        .base_dir
        .as_deref()
        .map(|d| std::path::absolute(if d.as_os_str().is_empty() { Path::new(".") } else { d }))
        .transpose()
        .ok()
        .flatten();
    m.records()
        .iter()
        .map(|r| {
            let uri = Path::new(&r.patch_uri);
            let mut r = r.clone();
            if let (true, Some(base)) = (uri.is_relative(), &base) {
                let abs = base.join(uri);
                r.patch_uri = match abs.strip_prefix(&out_dir) {
                    Ok(rel) => rel.to_string_lossy().into_owned(),
                    Err(_) => abs.to_string_lossy().into_owned(),
                };
            }
            r
        })
        .collect()
}

pub fn rebased(m: &AnnotationManifest, out_path: &Path) -> anyhow::Result<AnnotationManifest> {
    Ok(AnnotationManifest::new(m.name.clone(), m.split, rebased_records(m, out_path))?)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use til_core::annotation::Split;

    #[test]
    fn relative_uris_follow_the_output() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in").join("m.jsonl");
        std::fs::create_dir_all(input.parent().unwrap()).unwrap();
        std::fs::write(
            &input,
            r#"{"slide_id":"s","patient_id":"p","cancer_type":"BRCA","grid_x":0,"grid_y":0,"label":"TIL_POSITIVE","source":"MANUAL","patch_uri":"tiles/s_0_0.png"}
"#,
        )
        .unwrap();
        let m = AnnotationManifest::read_jsonl(&input, Split::Train).unwrap();
        let same = rebased_records(&m, &input);
        assert_eq!(same[0].patch_uri, "tiles/s_0_0.png");
        let up = rebased_records(&m, &dir.path().join("out.jsonl"));
        assert_eq!(Path::new(&up[0].patch_uri), Path::new("in/tiles/s_0_0.png"));
        let elsewhere = rebased_records(&m, Path::new("/nonexistent/x.jsonl"));
        assert!(Path::new(&elsewhere[0].patch_uri).is_absolute());
    }
}
