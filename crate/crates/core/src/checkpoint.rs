//! Checkpoint directories: a `checkpoint.txt` manifest with the layer
//! widths and one line per parameter, each parameter tensor as an MVDS
//! matrix under `params/`, and the Adam moments under `optimizer/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::format::parse_key_values;
use crate::dataset::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::model::{Architecture, GcfaggModel};
use crate::trainer::AdamState;

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.txt";
const FORMAT_TAG: &str = "gcfagg-checkpoint-1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: GcfaggModel,
    pub optimizer: Option<AdamState>,
    pub config_hash: Option<String>,
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn param_file(i: usize) -> String {
    format!("params/{i:04}.mvds")
}

fn moment_file(kind: &str, i: usize) -> String {
    format!("optimizer/{kind}{i:04}.mvds")
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &GcfaggModel,
    optimizer: Option<&AdamState>,
    config_hash: Option<&str>,
) -> Result<()> {
    let dir = dir.as_ref();
    let arch = &model.arch;
    for sub in ["params", "optimizer"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut text = String::new();
    let mut line = |k: &str, v: String| writeln!(text, "{k}={v}").unwrap();
    line("format", FORMAT_TAG.into());
    if let Some(h) = config_hash {
        line("config_hash", h.into());
    }
    line("view_dims", join(&arch.view_dims));
    line("encoder_hidden", join(&arch.encoder_hidden));
    line("latent_dim", arch.latent_dim.to_string());
    line("projector_hidden", arch.projector_hidden.to_string());
    line("consensus_dim", arch.consensus_dim.to_string());
    line("ffn_dim", arch.ffn_dim.to_string());
    line("ablation", arch.ablation.to_string());
    line("params", model.store.len().to_string());
    for (i, (name, value)) in model.store.names().iter().zip(model.store.values()).enumerate() {
        line(
            &format!("param.{i:04}"),
            format!("{name} {}x{}", value.rows(), value.cols()),
        );
        write_matrix(dir.join(param_file(i)), value)?;
    }
    match optimizer {
        Some(state) => {
            if state.m.len() != model.store.len() {
                return Err(Error::Precondition(format!(
                    "optimizer tracks {} tensors but the model has {}",
                    state.m.len(),
                    model.store.len()
                )));
            }
            line("adam_step", state.step.to_string());
            for (i, (m, v)) in state.m.iter().zip(&state.v).enumerate() {
                write_matrix(dir.join(moment_file("m", i)), m)?;
                write_matrix(dir.join(moment_file("v", i)), v)?;
            }
        }
        None => line("adam_step", "none".into()),
    }
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path: PathBuf = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv = parse_key_values(&text, &path)?;
    let bad = |detail: String| Error::Consistency {
        path: path.clone(),
        detail,
    };
    let get = |key: &str| kv.get(key).ok_or_else(|| bad(format!("missing key {key:?}")));
    let count = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| bad(format!("{key} is not a count")))
    };
    let list = |key: &str| -> Result<Vec<usize>> {
        let v = get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| x.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("{key} must be comma-separated counts")))
    };
    if get("format")? != FORMAT_TAG {
        return Err(bad(format!("unsupported checkpoint format {:?}", get("format")?)));
    }
    let arch = Architecture {
        view_dims: list("view_dims")?,
        encoder_hidden: list("encoder_hidden")?,
        latent_dim: count("latent_dim")?,
        projector_hidden: count("projector_hidden")?,
        consensus_dim: count("consensus_dim")?,
        ffn_dim: count("ffn_dim")?,
        ablation: get("ablation")?.parse()?,
    };
    let mut model = GcfaggModel::new(arch, 0)?;
    let n_params = count("params")?;
    if n_params != model.store.len() {
        return Err(bad(format!(
            "lists {n_params} parameters but the architecture has {}",
            model.store.len()
        )));
    }
    for i in 0..n_params {
        let entry = get(&format!("param.{i:04}"))?;
        let name = entry.split(' ').next().unwrap_or_default();
        if name != model.store.names()[i] {
            return Err(bad(format!(
                "parameter {i} is {name:?}, expected {:?}",
                model.store.names()[i]
            )));
        }
        let value = read_matrix(dir.join(param_file(i)))?;
        let slot = &mut model.store.values_mut()[i];
        if value.shape() != slot.shape() {
            return Err(bad(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
    }
    let optimizer = match get("adam_step")?.as_str() {
        "none" => None,
        step => {
            let step = step.parse().map_err(|_| bad("adam_step is not a count".into()))?;
            let mut m = Vec::with_capacity(n_params);
            let mut v = Vec::with_capacity(n_params);
            for i in 0..n_params {
                m.push(read_matrix(dir.join(moment_file("m", i)))?);
                v.push(read_matrix(dir.join(moment_file("v", i)))?);
            }
            Some(AdamState { step, m, v })
        }
    };
    Ok(Checkpoint {
        model,
        optimizer,
        config_hash: kv.get("config_hash").cloned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;

    fn arch() -> Architecture {
        Architecture {
            view_dims: vec![3, 4],
            encoder_hidden: vec![5],
            latent_dim: 2,
            projector_hidden: 3,
            consensus_dim: 2,
            ffn_dim: 6,
            ablation: Ablation::NoGcfagg,
        }
    }

    #[test]
    fn round_trip_with_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let model = GcfaggModel::new(arch(), 9).unwrap();
        let mut state = AdamState::new(model.store.values());
        state.step = 4;
        state.m[1].data_mut()[0] = 0.25;
        save_checkpoint(dir.path(), &model, Some(&state), Some("feed")).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.optimizer.unwrap(), state);
        assert_eq!(ck.config_hash.as_deref(), Some("feed"));
    }

    #[test]
    fn resave_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let model = GcfaggModel::new(arch(), 1).unwrap();
        save_checkpoint(a.path(), &model, None, None).unwrap();
        let ck = load_checkpoint(a.path()).unwrap();
        assert!(ck.optimizer.is_none());
        save_checkpoint(b.path(), &ck.model, None, None).unwrap();
        for f in [CHECKPOINT_MANIFEST, "params/0000.mvds"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn tampered_shape_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = GcfaggModel::new(arch(), 1).unwrap();
        save_checkpoint(dir.path(), &model, None, None).unwrap();
        write_matrix(dir.path().join(param_file(0)), &crate::Tensor::zeros(1, 1)).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
    }
}
