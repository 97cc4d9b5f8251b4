//! Bundled MATPOWER cases, small fixtures and reference objectives.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::netmodel::{parse_matpower_str, CaseError, NetworkCase};

/// The seven benchmark cases shipped with the crate.
pub const BUNDLED: [&str; 7] = ["case9", "case14", "case22", "case33bw", "case39", "case69", "case141"];

pub fn bundled_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "case9" => include_str!("../data/cases/case9.m"),
        "case14" => include_str!("../data/cases/case14.m"),
        "case22" => include_str!("../data/cases/case22.m"),
        "case33bw" => include_str!("../data/cases/case33bw.m"),
        "case39" => include_str!("../data/cases/case39.m"),
        "case69" => include_str!("../data/cases/case69.m"),
        "case141" => include_str!("../data/cases/case141.m"),
        "twobus" => include_str!("../data/fixtures/twobus.m"),
        "triangle" => include_str!("../data/fixtures/triangle.m"),
        _ => return None,
    })
}

/// Parses a bundled case or fixture by name.
pub fn bundled(name: &str) -> Result<NetworkCase, CaseError> {
    let text = bundled_source(name).ok_or_else(|| CaseError::invalid("case", format!("no bundled case named '{name}'")))?;
    parse_matpower_str(text)
}

/// Two buses, one lossy line, a generator at each end.
pub fn two_bus() -> NetworkCase {
    bundled("twobus").expect("bundled fixture parses")
}

/// Three-bus loop with fixed voltage magnitudes and a generator per bus.
pub fn triangle() -> NetworkCase {
    bundled("triangle").expect("bundled fixture parses")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceObjective {
    pub objective: f64,
    pub source: String,
}

/// Known AC-feasible objectives keyed by case name.
pub type ReferenceTable = BTreeMap<String, ReferenceObjective>;

pub fn parse_reference_objectives(text: &str) -> Result<ReferenceTable, toml::de::Error> {
    toml::from_str(text)
}

/// Objectives of locally optimal AC-OPF solutions for the bundled cases.
pub fn reference_objectives() -> ReferenceTable {
    parse_reference_objectives(include_str!("../data/reference_objectives.toml")).expect("bundled reference table parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_cases_parse() {
        let expect = [
            ("case9", 9, 9, 3),
            ("case14", 14, 20, 5),
            ("case22", 22, 21, 1),
            ("case33bw", 33, 32, 1),
            ("case39", 39, 46, 10),
            ("case69", 69, 68, 1),
            ("case141", 141, 140, 1),
        ];
        for (name, nb, nl, ng) in expect {
            let c = bundled(name).unwrap();
            assert_eq!(c.name, name);
            assert_eq!((c.n_buses(), c.branches.len(), c.generators.len()), (nb, nl, ng), "{name}");
        }
    }

    #[test]
    fn reference_table_covers_bundled_cases() {
        let t = reference_objectives();
        for name in BUNDLED {
            assert!(t[name].objective > 0.0);
        }
    }

    #[test]
    fn fixtures_parse() {
        assert_eq!(two_bus().n_buses(), 2);
        assert_eq!(triangle().branches.len(), 3);
    }
}
