use std::fs;
use std::path::{Path, PathBuf};

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn regenerated_corpus_matches_fixture() {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus");
    let tmp = tempfile::tempdir().unwrap();
    redact_cli::corpus::write_corpus(tmp.path()).unwrap();
    let expected = files(&fixture);
    assert_eq!(files(tmp.path()), expected);
    for rel in &expected {
        assert!(
            fs::read(fixture.join(rel)).unwrap() == fs::read(tmp.path().join(rel)).unwrap(),
            "{}",
            rel.display()
        );
    }
}
