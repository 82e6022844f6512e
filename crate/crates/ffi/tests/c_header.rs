//! Compiles and runs a small C client against the generated header and the
//! static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const CLIENT: &str = r#"
#include <stdio.h>
#include <string.h>
#include "fedhypevae.h"

int main(void) {
    double sigma = 0.0, eps = 0.0;
    FhveAccountant *acc = NULL;
    FhveConfig *cfg = NULL;
    char *json = NULL;

    if (fhve_calibrate_sigma(1.0, 1e-4, 0.1, 250, &sigma) != FHVE_STATUS_OK) return 1;
    if (fhve_accountant_new(&acc) != FHVE_STATUS_OK) return 2;
    if (fhve_accountant_add_steps(acc, 0.1, sigma, 250) != FHVE_STATUS_OK) return 3;
    if (fhve_accountant_epsilon(acc, 1e-4, &eps) != FHVE_STATUS_OK) return 4;
    fhve_accountant_free(acc);
    if (!(eps <= 1.0)) return 5;

    if (fhve_config_from_json("{\"federation\": {\"clip\": 1}}", &cfg) != FHVE_STATUS_CONFIG) return 6;
    if (strstr(fhve_last_error_message(), "federation.clip") == NULL) return 7;

    if (fhve_config_profile(FHVE_PROFILE_DESK, &cfg) != FHVE_STATUS_OK) return 8;
    if (fhve_config_to_json(cfg, &json) != FHVE_STATUS_OK) return 9;
    if (strstr(json, "\"rounds\": 30") == NULL) return 10;
    fhve_string_free(json);
    fhve_config_free(cfg);

    printf("ok %s %.4f %.4f\n", fhve_version(), sigma, eps);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_client_compiles_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libfedhypevae_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(&src, CLIENT).unwrap();
    let exe = dir.path().join("client");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

#[test]
fn header_declares_every_exported_function() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(manifest.join("include/fedhypevae.h")).unwrap();
    let mut sources = String::new();
    for f in ["src/lib.rs", "src/error.rs"] {
        sources.push_str(&std::fs::read_to_string(manifest.join(f)).unwrap());
    }
    let names: Vec<&str> = sources
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(names.len() > 20);
    for n in names {
        assert!(header.contains(&format!("{n}(")), "{n} missing from header");
    }
}
