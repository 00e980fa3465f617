//! Checkpoint bundles and the training log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{NetConfig, Params};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MANIFEST: &str = "manifest.txt";
const NET_FILE: &str = "net.txt";

/// Writes one DTEN file per parameter, `manifest.txt` mapping names to files
/// and `net.txt` holding the architecture.
pub fn save_checkpoint<T: Real>(dir: &Path, cfg: &NetConfig, params: &Params<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (name, t) in params.iter() {
        let file = format!("{name}.dten");
        t.save(dir.join(&file))?;
        writeln!(manifest, "{name} {file}").unwrap();
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    let net: String = cfg.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(dir.join(NET_FILE), net)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(NetConfig, Params<T>)> {
    let mut cfg = NetConfig::tiny();
    for line in fs::read_to_string(dir.join(NET_FILE))?.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad line in {NET_FILE}: {line:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let mut params = Params::default();
    for line in fs::read_to_string(dir.join(MANIFEST))?.lines().filter(|l| !l.trim().is_empty()) {
        let (name, file) = line
            .split_once(' ')
            .ok_or_else(|| Error::Format(format!("bad line in {MANIFEST}: {line:?}")))?;
        params.insert(name, Tensor::load(dir.join(file.trim()))?);
    }
    let expected = super::init_params::<T>(&cfg, 0)?;
    for (name, t) in expected.iter() {
        if params.get(name)?.shape() != t.shape() {
            return Err(Error::Format(format!("checkpoint tensor {name} has the wrong shape")));
        }
    }
    Ok((cfg, params))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_trainlog(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut s = String::from("step,loss,lr\n");
    for r in rows {
        writeln!(s, "{},{:.8},{:.8e}", r.step, r.loss, r.lr).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_trainlog(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("step,loss,lr") {
        return Err(Error::Format("training log must start with step,loss,lr".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("bad training log row {l:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LogRow {
                step: f[0].parse().map_err(|_| bad())?,
                loss: f[1].parse().map_err(|_| bad())?,
                lr: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
