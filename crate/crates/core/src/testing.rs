//! Shared fixtures for unit and integration tests.
#![doc(hidden)]

use std::path::PathBuf;

/// Minimal slack + PQ system: one lossless line, x = 0.1 pu.
pub const TWO_BUS: &str = "\
function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t345\t1\t1.5\t0.5;
\t2\t1\t0\t0\t0\t0\t1\t1\t0\t345\t1\t1.5\t0.5;
];
mpc.gen = [
\t1\t0\t0\t999\t-999\t1\t100\t1\t999\t-999;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t0\t0;
];
";

/// Path to a bundled case file under the workspace `cases/` directory.
pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(name)
}

pub fn load_case(name: &str) -> crate::matpower::NetworkCase {
    crate::matpower::parse_case_path(&case_path(name))
        .unwrap_or_else(|e| panic!("loading {name}: {e}"))
}
