//! Run configuration: a `key = value` file merged with command-line
//! overrides. Every problem is collected and reported together.

use std::fs;
use std::path::Path;

use swinlstm::kv::{self, Reader};
use swinlstm::train::TrainConfig;
use swinlstm::{Error, ModelConfig, Result};

/// Keys accepted in a run configuration file, with their meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "b (single cell) or d (four cells with merge/expand)"),
    ("input_channels", "frame channels"),
    ("height", "frame height in pixels"),
    ("width", "frame width in pixels"),
    ("patch_size", "patch side P"),
    ("embed_dim", "token dimension D"),
    ("window_size", "attention window side w"),
    ("heads", "attention heads"),
    (
        "depths",
        "Swin blocks per cell, comma separated (one entry for b, four for d)",
    ),
    ("reconstruction", "transposed, bilinear or linear"),
    ("loss", "l2 or l1+l2"),
    ("relative_position_bias", "true or false"),
    ("mlp_ratio", "MLP hidden width as a multiple of D"),
    ("dropout", "dropout probability"),
    ("learning_rate", "Adam step size"),
    ("batch_size", "sequences per batch"),
    ("epochs", "total training epochs"),
    ("frames_per_phase", "S: input frames (and target frames) per sequence"),
    ("seed", "root seed for initialisation, shuffling and dropout"),
    ("checkpoint_interval", "epochs between checkpoints (0: final only)"),
    ("val_limit", "validation sequences scored per epoch (0: all)"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Builds the configuration from optional file text and `key = value`
    /// overrides (applied after the file).
    pub fn build(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let (mut map, mut errors) = file.map(kv::parse_lenient).unwrap_or_default();
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        let mut cfg = RunConfig::default();
        let mut r = Reader::new(&mut map);
        cfg.model.apply(&mut r);
        cfg.train.apply(&mut r);
        errors.append(&mut r.errors);
        for key in map.keys() {
            errors.push(format!("unknown key `{key}`"));
        }
        for res in [cfg.model.validate(), cfg.train.validate()] {
            match res {
                Ok(()) => {}
                Err(Error::Config(e)) => errors.extend(e),
                Err(e) => errors.push(e.to_string()),
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(
                fs::read_to_string(p).map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", p.display())]))?,
            ),
            None => None,
        };
        Self::build(text.as_deref(), overrides)
    }

    pub fn to_text(&self) -> String {
        format!("{}{}", self.model.to_text(), self.train.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let cfg = RunConfig::build(Some("seed = 3\nepochs = 4\n"), &[("seed".into(), "9".into())]).unwrap();
        assert_eq!((cfg.train.seed, cfg.train.epochs), (9, 4));
    }

    #[test]
    fn every_problem_is_reported() {
        let Err(Error::Config(errs)) =
            RunConfig::build(Some("bogus = 1\nembed_dim = x\nlearning_rate = -1\nline\n"), &[])
        else {
            panic!("expected config error");
        };
        assert!(errs.len() >= 4, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("bogus")));
    }

    #[test]
    fn documented_keys_roundtrip() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        for line in text.lines() {
            let key = line.split('=').next().unwrap().trim();
            assert!(KEYS.iter().any(|(k, _)| *k == key), "{key} undocumented");
        }
        assert_eq!(RunConfig::build(Some(&text), &[]).unwrap(), cfg);
    }
}
