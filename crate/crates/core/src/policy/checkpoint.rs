use std::path::Path;

use serde_json::json;

use super::{PolicyConfig, PolicyDims, PolicyError, PolicyState};
use crate::checkpoint::{self, restore_into, CheckpointError};

pub const POLICY_KIND: &str = "policy";

const GROUPS: [&str; 5] = ["actor", "critic1", "critic2", "target1", "target2"];

pub fn save_policy(
    path: &Path,
    state: &PolicyState,
    extra: serde_json::Value,
) -> Result<(), PolicyError> {
    let meta = json!({
        "config": state.config,
        "dims": state.dims,
        "extra": extra,
    });
    let sets = [
        &state.actor_params,
        &state.critics[0],
        &state.critics[1],
        &state.targets[0],
        &state.targets[1],
    ];
    let groups: Vec<(&str, &crate::nn::ParamSet)> = GROUPS.iter().copied().zip(sets).collect();
    checkpoint::save(path, POLICY_KIND, meta, &groups)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyState, PolicyError> {
    let ck = checkpoint::load(path, POLICY_KIND)?;
    let field = |k: &str| {
        ck.metadata
            .get(k)
            .cloned()
            .ok_or_else(|| CheckpointError::Layout(format!("metadata lacks `{k}`")))
    };
    let config: PolicyConfig = serde_json::from_value(field("config")?)
        .map_err(|e| CheckpointError::Layout(format!("bad policy config: {e}")))?;
    let dims: PolicyDims = serde_json::from_value(field("dims")?)
        .map_err(|e| CheckpointError::Layout(format!("bad policy dims: {e}")))?;
    let mut state = PolicyState::new(&config, dims, 0);
    restore_into(&mut state.actor_params, ck.group("actor")?)?;
    let [c1, c2] = &mut state.critics;
    restore_into(c1, ck.group("critic1")?)?;
    restore_into(c2, ck.group("critic2")?)?;
    let [t1, t2] = &mut state.targets;
    restore_into(t1, ck.group("target1")?)?;
    restore_into(t2, ck.group("target2")?)?;
    Ok(state)
}
