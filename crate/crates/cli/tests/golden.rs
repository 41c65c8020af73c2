//! Artifacts of the smoke configuration compared byte for byte with the
//! files under `tests/golden`. Set `KFP_BLESS=1` to rewrite them.

use std::fs;
use std::path::Path;
use std::process::Command;

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/smoke.toml");
const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

const FILES: [&str; 10] = [
    "assumptions.json",
    "sweep.csv",
    "fit.json",
    "kappa.json",
    "drift.json",
    "propagator_summary.json",
    "cf.json",
    "mc_summary.json",
    "report.json",
    "report.txt",
];

#[test]
fn smoke_artifacts_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for verb in ["check", "eigensweep", "limit-kappa", "drift", "propagate", "montecarlo", "report"] {
        let o = Command::new(env!("CARGO_BIN_EXE_kfp")).args(["--config", SMOKE, "--out"]).arg(out).arg(verb).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{verb}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let bless = std::env::var_os("KFP_BLESS").is_some();
    for name in FILES {
        let produced = fs::read_to_string(out.join(name)).unwrap();
        let golden = Path::new(GOLDEN).join(name);
        if bless {
            fs::create_dir_all(GOLDEN).unwrap();
            fs::write(&golden, &produced).unwrap();
            continue;
        }
        let expected = fs::read_to_string(&golden).unwrap_or_else(|e| panic!("{}: {e}", golden.display()));
        if produced != expected {
            let line = produced.lines().zip(expected.lines()).position(|(a, b)| a != b).map_or(0, |k| k + 1);
            panic!("{name} differs from the golden file at line {line}");
        }
    }
}
