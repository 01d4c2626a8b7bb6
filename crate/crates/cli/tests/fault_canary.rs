//! Built only with `--features fault-injection`, which corrupts the bucket
//! norm used by the brute-force oracles. `verify` must notice.
#![cfg(feature = "fault-injection")]

use std::process::Command;

use serde_json::Value;

#[test]
fn verify_catches_injected_fault() {
    let out = Command::new(env!("CARGO_BIN_EXE_hashtrick"))
        .arg("verify")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
    let cross = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "cross_oracle")
        .unwrap();
    assert_eq!(cross["status"], "fail");
}
