//! Compiles and runs a small C program against the generated header and the static library.
//! Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "ivp.h"

int main(void) {
    const double a[4] = {0.0, 1.0, 0.0, -1.0};
    const double c[2] = {1.0, 1.0};
    IvpSystem *sys = NULL;
    if (ivp_system_from_matrices(2, 1, a, c, 1.0, 0.0, &sys) != IVP_STATUS_OK) return 10;
    bool private_ = false;
    if (ivp_whole_vector_private(sys, &private_) != IVP_STATUS_OK || !private_) return 11;
    int64_t index = -7;
    if (ivp_privacy_index(sys, &index) != IVP_STATUS_OK || index != 0) return 12;
    double kappa = 0.0;
    if (ivp_kappa(1.0, 0.7, &kappa) != IVP_STATUS_INVALID) return 13;
    if (ivp_last_error_message() == NULL) return 14;
    IvpBudget budget = {1.0, 0.05, 1.0, 1, 1};
    double floor_ = 0.0;
    if (ivp_calibrate(sys, &budget, &floor_) != IVP_STATUS_OK || !(floor_ > 0.0)) return 15;
    ivp_system_free(sys);
    printf("ok\n");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // The test binary lives in target/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let lib = target_dir().join("libivp.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile_dir();
    let src = dir.join("main.c");
    let bin = dir.join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new(cc)
        .args(["-std=c11", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ivp-c-abi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
