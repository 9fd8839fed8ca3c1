use std::path::Path;

// Generates include/ineqtest.h from the annotated sources. The header is
// committed so C consumers can use it without running cargo; the build
// script only rewrites it when the generated text actually changes, which
// keeps timestamps stable and repeated builds quiet.
fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let mut buf = Vec::new();
    cbindgen::generate(&crate_dir)
        .expect("header generation failed")
        .write(&mut buf);
    let header = String::from_utf8(buf).expect("header is UTF-8");

    let out = Path::new(&crate_dir).join("include/ineqtest.h");
    let current = std::fs::read_to_string(&out).unwrap_or_default();
    if current != header {
        std::fs::write(&out, header).expect("cannot write include/ineqtest.h");
    }
}
