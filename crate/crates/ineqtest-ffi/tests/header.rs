//! The committed header must stay in sync with the sources and be valid C.

use std::path::Path;
use std::process::Command;

#[test]
fn committed_header_matches_the_sources() {
    let crate_dir = env!("CARGO_MANIFEST_DIR");
    let mut buf = Vec::new();
    cbindgen::generate(crate_dir)
        .expect("header generation failed")
        .write(&mut buf);
    let generated = String::from_utf8(buf).unwrap();
    let committed =
        std::fs::read_to_string(Path::new(crate_dir).join("include/ineqtest.h")).unwrap();
    assert_eq!(
        committed, generated,
        "include/ineqtest.h is stale; rebuild the crate to regenerate it"
    );
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ineqtest.h");
    let compiler = ["cc", "gcc", "clang"]
        .iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok());
    let Some(compiler) = compiler else {
        eprintln!("no C compiler found; skipping the syntax check");
        return;
    };
    let out = Command::new(compiler)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "header does not compile as C:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
