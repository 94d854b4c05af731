//! Packaged scenarios and the contract library they draw on.

pub mod contracts;

use crate::sim::ScenarioConfig;

const CATALOG: &[(&str, &str)] = &[
    (
        "nested_four_chain",
        include_str!("../../scenarios/nested_four_chain.json"),
    ),
    ("crash_point_1", include_str!("../../scenarios/crash_point_1.json")),
    ("crash_point_2", include_str!("../../scenarios/crash_point_2.json")),
    ("crash_point_3", include_str!("../../scenarios/crash_point_3.json")),
    ("crash_point_4", include_str!("../../scenarios/crash_point_4.json")),
    (
        "travel_agent_single",
        include_str!("../../scenarios/travel_agent_single.json"),
    ),
    (
        "travel_agent_two_agents",
        include_str!("../../scenarios/travel_agent_two_agents.json"),
    ),
    (
        "erc20_router_two_agents",
        include_str!("../../scenarios/erc20_router_two_agents.json"),
    ),
    (
        "repeated_contract_abort",
        include_str!("../../scenarios/repeated_contract_abort.json"),
    ),
    ("auth_checks", include_str!("../../scenarios/auth_checks.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|(n, _)| *n)
}

/// Packaged scenario by name.
pub fn load(name: &str) -> Option<ScenarioConfig> {
    let (_, text) = CATALOG.iter().find(|(n, _)| *n == name)?;
    Some(ScenarioConfig::from_json(text).expect("packaged scenario is valid"))
}

/// `(name, description)` for every packaged scenario, in catalog order.
pub fn list() -> Vec<(&'static str, String)> {
    CATALOG
        .iter()
        .map(|(n, _)| (*n, load(n).map(|c| c.description).unwrap_or_default()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_packaged_scenario_parses_under_its_own_name() {
        for name in names() {
            let cfg = load(name).unwrap();
            assert_eq!(cfg.name, name);
        }
        assert!(load("nope").is_none());
    }
}
