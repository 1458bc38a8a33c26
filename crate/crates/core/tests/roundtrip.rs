use std::process::Command;

use proptest::prelude::*;

use r1complex::classify::{self, decomposition_equal};
use r1complex::cli::{self, Overrides};
use r1complex::random;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn print_then_parse_is_identity(n in 1usize..8, p in prop::sample::select(vec![2u32, 3, 5]), seed in any::<u64>()) {
        let c = random::random_complex(n, p, seed, true);
        let back = cli::parse(&cli::print(&c), Overrides::default()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn bar_is_an_involution(n in 1usize..8, seed in any::<u64>()) {
        let c = random::random_complex(n, 2, seed, true);
        prop_assert_eq!(c.bar().bar(), c);
    }

    #[test]
    fn decomposition_realizes_back(n in 1usize..7, p in prop::sample::select(vec![2u32, 3]), seed in any::<u64>()) {
        let c = random::random_complex(n, p, seed, true);
        let d = classify::decompose(&c);
        prop_assert!(d.basis_change.is_some());
        let s = classify::realize_decomposition(&d).unwrap();
        prop_assert!(decomposition_equal(&classify::decompose_unverified(&s), &d));
    }
}

fn r1cx(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_r1cx")).args(args).output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn cli_decomposes_corpus_entries() {
    let (ok, out) = r1cx(&["decompose", "trefoil_f2"]);
    assert!(ok);
    assert!(out.contains("C(-1,1)"), "{out}");
    let (ok, out) = r1cx(&["--char", "3", "decompose", "example_E"]);
    assert!(ok);
    assert!(out.contains('Z'), "{out}");
}

#[test]
fn cli_realize_then_decompose() {
    let dir = std::env::temp_dir().join(format!("r1cx-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (ok, text) = r1cx(&["realize", "C(1,-2) @ (0,0)", "Z @ (1,1)"]);
    assert!(ok);
    let file = dir.join("sum.txt");
    std::fs::write(&file, text).unwrap();
    let (ok, out) = r1cx(&["--json", "decompose", file.to_str().unwrap()]);
    assert!(ok);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["decomposition"]["zeros"], 1);
    assert_eq!(v["decomposition"]["snakes"][0]["sequence"], serde_json::json!([1, -2]));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn cli_reports_missing_input() {
    let (ok, _) = r1cx(&["decompose", "no/such/file"]);
    assert!(!ok);
}
