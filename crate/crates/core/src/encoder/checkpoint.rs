use std::path::Path;

use ndarray::Array2;
use serde_json::json;

use super::{EncoderConfig, EncoderError, EncoderState, MovingAverageBank};
use crate::checkpoint::{self, restore_into, CheckpointError};
use crate::nn::ParamSet;

pub const ENCODER_KIND: &str = "encoder";

pub fn save_encoder(
    path: &Path,
    state: &EncoderState,
    extra: serde_json::Value,
) -> Result<(), EncoderError> {
    let bank = state.bank.matrix()?;
    let mut bank_set = ParamSet::new();
    bank_set.push("bank", bank);
    let meta = json!({
        "config": state.config,
        "input_dim": state.net.input_dim,
        "n_tasks": state.bank.len(),
        "env_id": state.env_id.map(|e| e.name()),
        "extra": extra,
    });
    checkpoint::save(
        path,
        ENCODER_KIND,
        meta,
        &[("encoder", &state.params), ("bank", &bank_set)],
    )?;
    Ok(())
}

pub fn load_encoder(path: &Path) -> Result<EncoderState, EncoderError> {
    let ck = checkpoint::load(path, ENCODER_KIND)?;
    let field = |k: &str| {
        ck.metadata
            .get(k)
            .cloned()
            .ok_or_else(|| CheckpointError::Layout(format!("metadata lacks `{k}`")))
    };
    let config: EncoderConfig = serde_json::from_value(field("config")?)
        .map_err(|e| CheckpointError::Layout(format!("bad encoder config: {e}")))?;
    let input_dim = field("input_dim")?.as_u64().unwrap_or(0) as usize;
    let n_tasks = field("n_tasks")?.as_u64().unwrap_or(0) as usize;
    let mut state = EncoderState::new(&config, input_dim, n_tasks, 0);
    state.env_id = match ck.metadata.get("env_id").and_then(|v| v.as_str()) {
        Some(name) => Some(
            name.parse()
                .map_err(|_| CheckpointError::Layout(format!("unknown env_id `{name}`")))?,
        ),
        None => None,
    };
    restore_into(&mut state.params, ck.group("encoder")?)?;
    let bank: &Array2<f64> = ck.group("bank")?.tensor(0);
    if bank.dim() != (n_tasks, config.latent_dim) {
        return Err(CheckpointError::Layout(format!("bank has shape {:?}", bank.dim())).into());
    }
    state.bank = MovingAverageBank::from_entries(
        bank.rows().into_iter().map(|r| r.to_vec()).collect(),
        config.momentum,
    );
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = EncoderConfig {
            input_embed_width: 4,
            gru_width: 3,
            head_width: 3,
            ..EncoderConfig::default()
        };
        let mut st = EncoderState::new(&cfg, 3, 2, 4);
        st.bank.update(0, &[0.1, 0.2]);
        st.bank.update(1, &[-0.3, 0.4]);
        st.params.round_to_f32();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        save_encoder(&path, &st, json!({"step": 0})).unwrap();
        let back = load_encoder(&path).unwrap();
        assert_eq!(back.params, st.params);
        assert_eq!(back.config, st.config);
        assert_eq!(
            back.bank.matrix().unwrap(),
            st.bank.matrix().unwrap().mapv(|v| v as f32 as f64)
        );
    }
}
