use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;

fn root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn exported() -> BTreeSet<String> {
    let src = fs::read_to_string(root().join("src/lib.rs")).unwrap();
    let mut names = BTreeSet::new();
    let mut marked = false;
    for line in src.lines() {
        if line.trim() == "#[no_mangle]" {
            marked = true;
        } else if marked && line.contains("extern \"C\" fn ") {
            let rest = line.split("extern \"C\" fn ").nth(1).unwrap();
            names.insert(rest.split('(').next().unwrap().to_string());
            marked = false;
        }
    }
    names
}

#[test]
fn header_declares_every_export() {
    let header = fs::read_to_string(root().join("include/dais.h")).unwrap();
    let names = exported();
    assert!(names.len() >= 15, "{names:?}");
    for n in &names {
        assert!(header.contains(&format!(" {n}(")), "{n} missing from dais.h");
    }
    for ty in ["DaisStatus", "DaisMethod", "DaisTrainOptions", "DaisTarget", "DaisModel"] {
        assert!(header.contains(&format!("typedef struct {ty}")) || header.contains(&format!("typedef enum {ty}")));
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(cc.status.success());
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(root().join("include/dais.h"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
