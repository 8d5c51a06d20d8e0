//! Network checkpoints: an ETNS file with one entry per tensor plus a text
//! sidecar (`<file>.meta`) holding the step counter and layer list.

use std::path::{Path, PathBuf};

use super::network::Network;
use super::spec::NetworkSpec;
use super::NnError;
use crate::dataset::etns::{read_tensors, write_tensors, NamedTensor, TensorData};

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn save_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let st = &net.state;
    let mut tensors = Vec::new();
    for e in &st.entries {
        let key = format!("layer{}.{}", e.layer, e.name);
        for (suffix, src) in [("", &st.params), (".adam_m", &st.m), (".adam_v", &st.v)] {
            tensors.push(NamedTensor::f32(format!("{key}{suffix}"), e.shape.clone(), src[e.range()].to_vec()));
        }
    }
    for (i, rs) in st.running.iter().enumerate() {
        if let Some(rs) = rs {
            let c = rs.mean.len();
            tensors.push(NamedTensor::f32(format!("layer{i}.running_mean"), vec![c], rs.mean.clone()));
            tensors.push(NamedTensor::f32(format!("layer{i}.running_var"), vec![c], rs.var.clone()));
        }
    }
    write_tensors(path, &tensors)?;
    let meta = format!("step {}\n{}", st.step, net.spec().to_text());
    std::fs::write(meta_path(path), meta)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>, NnError> {
    let path = path.as_ref();
    let meta = std::fs::read_to_string(meta_path(path))?;
    let mut lines = meta.lines();
    let step = lines
        .next()
        .and_then(|l| l.strip_prefix("step "))
        .and_then(|v| v.trim().parse::<u64>().ok())
        .ok_or_else(|| NnError::Checkpoint("metadata lacks a step line".into()))?;
    let spec = NetworkSpec::parse(&lines.collect::<Vec<_>>().join("\n"))?;
    let mut net: Network<f32> = Network::new(spec, 0)?;
    net.state.step = step;
    let tensors = read_tensors(path)?;
    let find = |name: &str, len: usize| -> Result<Vec<f32>, NnError> {
        let t = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
        match &t.data {
            TensorData::F32(v) if v.len() == len => Ok(v.clone()),
            _ => Err(NnError::Checkpoint(format!("tensor {name} has the wrong type or size"))),
        }
    };
    let entries = net.state.entries.clone();
    for e in &entries {
        let key = format!("layer{}.{}", e.layer, e.name);
        net.state.params[e.range()].copy_from_slice(&find(&key, e.len())?);
        net.state.m[e.range()].copy_from_slice(&find(&format!("{key}.adam_m"), e.len())?);
        net.state.v[e.range()].copy_from_slice(&find(&format!("{key}.adam_v"), e.len())?);
    }
    for i in 0..net.state.running.len() {
        if let Some(rs) = net.state.running[i].as_mut() {
            let c = rs.mean.len();
            rs.mean = find(&format!("layer{i}.running_mean"), c)?;
            rs.var = find(&format!("layer{i}.running_var"), c)?;
            if rs.var.iter().any(|&v| v < 0.0) {
                return Err(NnError::Checkpoint(format!("layer {i}: negative running variance")));
            }
        }
    }
    Ok(net)
}
