//! Compiles a C program against the generated header and the built
//! libraries, then runs it.

use std::path::PathBuf;
use std::process::Command;

fn deps_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_owned()
}

fn compile_and_run(link: &[&str]) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg("-o")
        .arg(&exe)
        .args(link)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    String::from_utf8(run.stdout).unwrap()
}

#[test]
fn c_program_links_against_shared_library() {
    let deps = deps_dir();
    let so = deps.join("libqsynth_ffi.so");
    assert!(so.is_file(), "{} missing", so.display());
    let d = deps.to_str().unwrap();
    let stdout = compile_and_run(&["-L", d, "-lqsynth_ffi", &format!("-Wl,-rpath,{d}")]);
    assert_eq!(stdout.trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn c_program_links_against_static_library() {
    let a = deps_dir().join("libqsynth_ffi.a");
    assert!(a.is_file(), "{} missing", a.display());
    let stdout = compile_and_run(&[a.to_str().unwrap(), "-lpthread", "-ldl", "-lm"]);
    assert!(stdout.starts_with("ok "));
}
