//! Model bundle: one parameter file per network plus `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CnnLc, Model, TmnConfig, TmnModel};
use crate::binio;
use crate::error::{Error, Result};
use crate::neural::{load_params, save_params, Architecture, Network, NetworkParams};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub kind: String,
    pub tmn: Option<TmnConfig>,
    pub cnn_layers: Option<usize>,
    pub architectures: Vec<Architecture>,
    pub param_count: usize,
    pub seed: u64,
    pub code_version: String,
    pub files: Vec<String>,
}

fn file_name(arch: &Architecture) -> String {
    format!("{}.tmnp", arch.name)
}

pub fn save_bundle(model: &Model, dir: &Path, seed: u64, code_version: &str) -> Result<BundleManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nets: Vec<&Network> = match model {
        Model::Tmn(m) => m.networks().collect(),
        Model::CnnLc(c) => vec![&c.network],
    };
    let mut files = Vec::new();
    for n in &nets {
        let name = file_name(&n.arch);
        save_params(&n.params, &dir.join(&name))?;
        files.push(name);
    }
    if let Model::Tmn(TmnModel { xi_sqrt: Some(xi), .. }) = model {
        let p = NetworkParams::new(vec![("transport.xi_sqrt".into(), xi.clone())])?;
        save_params(&p, &dir.join("transport.tmnp"))?;
        files.push("transport.tmnp".into());
    }
    let manifest = BundleManifest {
        kind: model.kind().into(),
        tmn: match model {
            Model::Tmn(m) => Some(m.config.clone()),
            Model::CnnLc(_) => None,
        },
        cnn_layers: match model {
            Model::CnnLc(c) => Some(c.layers),
            Model::Tmn(_) => None,
        },
        architectures: nets.iter().map(|n| n.arch.clone()).collect(),
        param_count: model.param_count(),
        seed,
        code_version: code_version.into(),
        files,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    binio::write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn load_bundle(dir: &Path) -> Result<(Model, BundleManifest)> {
    let path = dir.join(MANIFEST);
    let raw = binio::read(&path)?;
    let manifest: BundleManifest = serde_json::from_slice(&raw).map_err(|e| Error::format(&path, e.to_string()))?;
    let load = |arch: &Architecture| -> Result<Network> {
        Network::new(arch.clone(), load_params(&dir.join(file_name(arch)))?)
    };
    let model = match manifest.kind.as_str() {
        "tmn" => {
            let cfg = manifest
                .tmn
                .clone()
                .ok_or_else(|| Error::format(&path, "tmn bundle without config"))?;
            cfg.validate()?;
            let mut expected = vec![cfg.encoder_arch(), cfg.corrector_arch(), cfg.updater_arch()];
            expected.extend(cfg.gate_arch());
            if expected != manifest.architectures {
                return Err(Error::format(&path, "architectures do not match the config"));
            }
            let mut nets = expected.iter().map(load).collect::<Result<Vec<_>>>()?.into_iter();
            let xi_sqrt = if manifest.files.iter().any(|f| f == "transport.tmnp") {
                let p = load_params(&dir.join("transport.tmnp"))?;
                let t: Tensor = p
                    .get("transport.xi_sqrt")
                    .cloned()
                    .ok_or_else(|| Error::format(&path, "missing transport.xi_sqrt"))?;
                Some(t)
            } else {
                None
            };
            Model::Tmn(TmnModel {
                config: cfg,
                encoder: nets.next().unwrap(),
                corrector: nets.next().unwrap(),
                updater: nets.next().unwrap(),
                gate: nets.next(),
                xi_sqrt,
            })
        }
        "cnn_lc" => {
            let layers = manifest
                .cnn_layers
                .ok_or_else(|| Error::format(&path, "cnn_lc bundle without layer count"))?;
            let arch = manifest
                .architectures
                .first()
                .ok_or_else(|| Error::format(&path, "no architecture"))?;
            Model::CnnLc(CnnLc {
                layers,
                network: load(arch)?,
            })
        }
        k => return Err(Error::format(&path, format!("unknown model kind `{k}`"))),
    };
    Ok((model, manifest))
}
