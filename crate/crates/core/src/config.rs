//! Flat `key = value` run configuration.
//!
//! Every key of [`TrainConfig`] must appear exactly once. Blank lines and
//! lines starting with `#` are skipped. Lists are comma separated.

use std::fs;
use std::path::Path;

use crate::autodiff::UpsampleMode;
use crate::error::{Error, Result};
use crate::losses::UscsNorm;
use crate::model::Fusion;
use crate::trainer::{Mode, Precision, TrainConfig};

trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse(text: &str) -> Result<Self, String>;
}

macro_rules! via_from_str {
    ($($t:ty),*) => {
        $(impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }

            fn parse(text: &str) -> Result<Self, String> {
                text.parse::<$t>().map_err(|e| e.to_string())
            }
        })*
    };
}

via_from_str!(f64, usize, u64, bool, Mode, Precision, Fusion, UpsampleMode, UscsNorm);

impl ConfigValue for Vec<usize> {
    fn render(&self) -> String {
        self.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }

    fn parse(text: &str) -> Result<Self, String> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| e.to_string())).collect()
    }
}

macro_rules! config_keys {
    ($($field:ident),* $(,)?) => {
        /// Every key, in serialization order.
        pub const KEYS: &[&str] = &[$(stringify!($field)),*];

        fn entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
            vec![$((stringify!($field), cfg.$field.render())),*]
        }

        fn assign(cfg: &mut TrainConfig, key: &str, value: &str) -> Option<Result<(), String>> {
            match key {
                $(stringify!($field) => Some(ConfigValue::parse(value).map(|v| cfg.$field = v)),)*
                _ => None,
            }
        }
    };
}

config_keys!(
    mode,
    lambda,
    lambda_rampup,
    gamma,
    uncertainty,
    uscs_norm,
    rho,
    grid_size,
    fusion,
    upsample,
    encoder_widths,
    decoder_widths,
    base_lr,
    lr_mult,
    momentum,
    weight_decay,
    max_iters,
    batch_size,
    labeled_ratio,
    num_scenes,
    val_scenes,
    image_size,
    num_classes,
    min_shapes,
    max_shapes,
    min_radius,
    max_radius,
    scene_noise,
    color_jitter,
    foreground_contrast,
    color_separation,
    cutmix_min_area,
    cutmix_max_area,
    augment,
    data_seed,
    split_seed,
    model_seed,
    sampler_seed,
    precision,
    eval_batch,
    eval_every,
    checkpoint_every,
);

pub fn to_text(cfg: &TrainConfig) -> String {
    entries(cfg).into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Key/value pairs in serialization order.
pub fn to_pairs(cfg: &TrainConfig) -> Vec<(String, String)> {
    entries(cfg).into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn split_line(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

/// Applies `key = value` lines on top of `base`. Unknown, duplicated and
/// unparsable keys are all reported in one error.
pub fn apply_overrides(base: &TrainConfig, text: &str) -> Result<(TrainConfig, Vec<String>)> {
    let mut cfg = base.clone();
    let mut bad = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = split_line(line) else {
            bad.push(format!("line {} (expected key = value)", n + 1));
            continue;
        };
        if seen.iter().any(|k| k == key) {
            bad.push(format!("{key} (duplicate)"));
            continue;
        }
        seen.push(key.to_string());
        match assign(&mut cfg, key, value) {
            None => bad.push(format!("{key} (unknown key)")),
            Some(Err(e)) => bad.push(format!("{key} ({e})")),
            Some(Ok(())) => {}
        }
    }
    if bad.is_empty() {
        Ok((cfg, seen))
    } else {
        Err(Error::InvalidConfig(bad))
    }
}

/// Parses a complete configuration and validates it.
pub fn from_text(text: &str) -> Result<TrainConfig> {
    let (cfg, seen) = apply_overrides(&TrainConfig::default(), text)?;
    let missing: Vec<String> = KEYS
        .iter()
        .filter(|k| !seen.iter().any(|s| s == *k))
        .map(|k| format!("{k} (missing)"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidConfig(missing));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<TrainConfig> {
    from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save(cfg: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, to_text(cfg)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = TrainConfig::default();
        assert_eq!(from_text(&to_text(&cfg)).unwrap(), cfg);
        assert_eq!(KEYS.len(), to_pairs(&cfg).len());
    }

    #[test]
    fn awkward_floats_round_trip() {
        let cfg = TrainConfig {
            base_lr: 0.1 + 0.2,
            weight_decay: 1e-4 / 3.0,
            ..TrainConfig::default()
        };
        assert_eq!(from_text(&to_text(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn gamma_zero_is_rejected() {
        let text = to_text(&TrainConfig::default()).replace("gamma = 0.5", "gamma = 0");
        match from_text(&text) {
            Err(Error::InvalidConfig(keys)) => assert_eq!(keys, ["gamma"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_offending_keys_are_listed() {
        let mut text = to_text(&TrainConfig::default())
            .replace("rho = 0.4", "rho = lots")
            .replace("fusion = gridmix", "fusion = concat");
        text.push_str("colour = red\n");
        match from_text(&text) {
            Err(Error::InvalidConfig(keys)) => {
                assert_eq!(keys.len(), 3, "{keys:?}");
                assert!(keys[0].starts_with("rho"));
                assert!(keys[1].starts_with("fusion"));
                assert!(keys[2].starts_with("colour"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_keys_are_listed() {
        match from_text("mode = uscs\n") {
            Err(Error::InvalidConfig(keys)) => assert_eq!(keys.len(), KEYS.len() - 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = format!("# run\n\n{}", to_text(&TrainConfig::default()));
        assert!(from_text(&text).is_ok());
    }
}
