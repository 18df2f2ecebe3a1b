use std::path::Path;
use std::process::Command;

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let mut names = Vec::new();
    let mut exported = false;
    for line in src.lines() {
        let line = line.trim();
        if line == "#[no_mangle]" {
            exported = true;
        } else if exported && line.contains("fn ") {
            let rest = line.split("fn ").nth(1).unwrap();
            names.push(rest.split('(').next().unwrap().to_string());
            exported = false;
        }
    }
    names
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/frea.h")).unwrap();
    let names = exported_functions();
    assert!(names.len() >= 12, "{names:?}");
    for n in names {
        assert!(header.contains(&format!("{n}(")), "{n} missing from frea.h");
    }
    for ty in ["FreaStatus", "FreaModel", "FreaMetrics"] {
        assert!(header.contains(ty));
    }
}

fn cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok())
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // Test binaries live in target/<profile>/deps; the static lib sits one level up.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libfrea_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).arg(dir.path().join("m.ckpt")).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("smoke ok"), "{stdout}");
}
