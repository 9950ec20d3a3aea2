//! Compiles a small C program against the generated header and the shared
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include "rppg.h"

int main(void) {
    size_t n = 600;
    double *x = malloc(n * sizeof(double));
    for (size_t i = 0; i < n; i++) x[i] = sin(2.0 * M_PI * 1.5 * (double)i / 30.0);
    rppg_psd *psd = NULL;
    if (rppg_psd_compute(x, n, 30.0, 1.0 / 600.0, &psd) != RPPG_STATUS_OK) return 1;
    double hr = 0.0;
    if (rppg_psd_hr(psd, &hr) != RPPG_STATUS_OK) return 2;
    rppg_psd_free(psd);
    if (fabs(hr - 90.0) > 0.1) return 4;
    for (size_t i = 0; i < n; i++) x[i] = 1.0;
    rppg_status s = rppg_estimate_hr(x, n, 30.0, &hr);
    printf("status=%d err=%s\n", (int)s, rppg_last_error());
    free(x);
    return s == RPPG_STATUS_CONSTANT_SIGNAL ? 0 : 3;
}
"#;

fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipped: no C compiler");
        return;
    }
    let libs = lib_dir();
    if !libs.join("librppg_ffi.so").exists() && !libs.join("librppg_ffi.dylib").exists() {
        eprintln!("skipped: shared library not built in {}", libs.display());
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(&cc)
        .args(["-std=c99", "-D_DEFAULT_SOURCE", "-Wall", "-Werror"])
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg(format!("-L{}", libs.display()))
        .arg(format!("-Wl,-rpath,{}", libs.display()))
        .args(["-lrppg_ffi", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "exit {:?}: {text}", out.status);
    assert!(text.contains("err=ConstantSignal"), "{text}");
}
