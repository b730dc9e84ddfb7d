use std::path::PathBuf;

use adaptctl_core::knowledge::{load_formula, load_goals, load_scenario};
use adaptctl_core::sysmodel::DEFAULT_FORMULA;
use adaptctl_core::{parse_formula, Goals, ScenarioConfig};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn shipped_configs_match_defaults() {
    assert_eq!(
        load_scenario(&config("scenario.toml")).unwrap(),
        ScenarioConfig::bsn_default()
    );
    assert_eq!(load_goals(&config("goals.toml")).unwrap(), Goals::default());
    assert_eq!(
        load_formula(&config("formula.txt")).unwrap().to_string(),
        parse_formula(DEFAULT_FORMULA).unwrap().to_string()
    );
}
