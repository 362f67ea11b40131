//! Built-in synthetic workload fixtures.
//!
//! Twelve named applications spanning the (parallel fraction, memory
//! intensity, big affinity) corners, shipped as TOML files under
//! `workloads/` and embedded here so library users need no file paths.

use crate::error::{Error, Result};
use crate::socsim::WorkloadSpec;

macro_rules! builtin_table {
    ($(($name:literal, $file:literal)),+ $(,)?) => {
        const BUILTIN: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../workloads/", $file)))),+
        ];
    };
}

builtin_table![
    ("serial_compute", "serial_compute.toml"),
    ("serial_little", "serial_little.toml"),
    ("serial_memory", "serial_memory.toml"),
    ("serial_phases", "serial_phases.toml"),
    ("parallel_compute", "parallel_compute.toml"),
    ("parallel_memory", "parallel_memory.toml"),
    ("balanced_mix", "balanced_mix.toml"),
    ("little_stream", "little_stream.toml"),
    ("big_burst", "big_burst.toml"),
    ("alternating_load", "alternating_load.toml"),
    ("ramp_phases", "ramp_phases.toml"),
    ("mixed_sparse", "mixed_sparse.toml"),
];

/// The four workloads the convergence and governor-comparison experiments
/// run on: the single-threaded applications, where governors leave the most
/// room on the table.
pub const DESIGNATED: [&str; 4] =
    ["serial_compute", "serial_little", "serial_memory", "serial_phases"];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin(name: &str) -> Option<WorkloadSpec> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, text)| {
        WorkloadSpec::from_toml_str(text).expect("embedded workload fixtures are valid")
    })
}

/// All twelve built-in applications.
pub fn default_suite() -> Vec<WorkloadSpec> {
    BUILTIN
        .iter()
        .map(|(_, text)| WorkloadSpec::from_toml_str(text).expect("embedded fixtures are valid"))
        .collect()
}

/// Resolves a workload reference: a built-in name, or a path to a TOML spec.
pub fn resolve(name_or_path: &str) -> Result<WorkloadSpec> {
    if let Some(spec) = builtin(name_or_path) {
        return Ok(spec);
    }
    let path = std::path::Path::new(name_or_path);
    if path.exists() {
        return WorkloadSpec::load(path);
    }
    Err(Error::input(format!(
        "unknown workload '{name_or_path}' (not a built-in name and no such file)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_fixtures_parse_and_validate() {
        let suite = default_suite();
        assert_eq!(suite.len(), 12);
        for w in &suite {
            assert!(w.validate().is_ok(), "{} invalid", w.name);
            assert!(w.epochs.len() >= 6);
        }
    }

    #[test]
    fn designated_workloads_exist_and_are_serial() {
        for name in DESIGNATED {
            let w = builtin(name).expect("designated workload must be built in");
            assert!(w.epochs.iter().all(|e| e.parallel_fraction == 0.0), "{name}");
        }
    }

    #[test]
    fn resolve_prefers_builtin_then_path() {
        assert!(resolve("balanced_mix").is_ok());
        assert!(resolve("no_such_workload").is_err());
    }
}
