//! Plain-text `key = value` run configuration. Blank lines and `#` comments
//! are ignored.

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;

use super::{HarnessError, TrainConfig};

pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(HarnessError::Config(format!("line {}: empty key or value", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 18] = [
        "image_side",
        "patch_side",
        "channels",
        "layers",
        "heads",
        "mlp_hidden",
        "boundary_gates",
        "token_residual",
        "lr",
        "batch",
        "max_epochs",
        "max_steps",
        "plateau_patience",
        "lr_decay",
        "seed",
        "augment",
        "radius",
        "nms_neighbors",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "image_side" => m.image_side = parse(key, value)?,
            "patch_side" => {
                m.patch_side = parse(key, value)?;
                t.generator.patch_side = m.patch_side;
            }
            "channels" => m.channels = parse(key, value)?,
            "layers" => m.layers = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "mlp_hidden" => m.mlp_hidden = parse(key, value)?,
            "boundary_gates" => m.boundary_gates = parse(key, value)?,
            "token_residual" => m.token_residual = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "max_steps" => t.max_steps = Some(parse(key, value)?),
            "plateau_patience" => t.plateau_patience = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "augment" => t.augment = parse(key, value)?,
            "radius" => t.generator.radius = parse(key, value)?,
            "nms_neighbors" => t.generator.nms_neighbors = parse(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let text = "# run\nlr = 0.01\nbatch=2 # small\n\nboundary_gates = false\nmax_steps = 7\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.batch, 2);
        assert_eq!(cfg.train.max_steps, Some(7));
        assert!(!cfg.model.boundary_gates);
        assert_eq!(cfg.model.channels, 32);
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let mut cfg = RunConfig::default();
        for k in RunConfig::KEYS {
            let v = match k {
                "boundary_gates" | "token_residual" | "augment" => "true",
                "lr" | "lr_decay" => "0.5",
                _ => "16",
            };
            cfg.set(k, v).unwrap();
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(RunConfig::from_text("lr 0.1").is_err());
        assert!(RunConfig::from_text("lr = fast").is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("lr =").is_err());
    }
}
