//! Line-oriented `key = value` run configuration.
//!
//! Keys are grouped by prefix: `network.*` (stage 1), `stage2.*` (the
//! refinement networks; `num_landmarks` is always 1 there), `train.*`,
//! `stage2_train.*`, `augment.*` and `patch.*`. Missing keys keep their
//! defaults; unknown keys are errors. `#` starts a comment line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::backbone::NetworkConfig;
use crate::error::{Error, Result};
use crate::pipeline::{AugmentConfig, PatchSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub stage2: NetworkConfig,
    pub train: TrainConfig,
    pub stage2_train: TrainConfig,
    pub augment: AugmentConfig,
    pub patch: PatchSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            stage2: NetworkConfig {
                num_landmarks: 1,
                ..NetworkConfig::default()
            },
            train: TrainConfig::default(),
            stage2_train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            patch: PatchSpec::default(),
        }
    }
}

fn size_str((h, w): (usize, usize)) -> String {
    format!("{h}x{w}")
}

fn list_str(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn milestones_str(v: &[(usize, f64)]) -> String {
    v.iter().map(|(e, lr)| format!("{e}:{lr:e}")).collect::<Vec<_>>().join(",")
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse '{v}'"))
}

fn parse_size(v: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = v.split_once('x').ok_or_else(|| format!("expected HxW, got '{v}'"))?;
    Ok((parse_num(h.trim())?, parse_num(w.trim())?))
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

fn parse_milestones(v: &str) -> std::result::Result<Vec<(usize, f64)>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let (e, lr) = item
                .split_once(':')
                .ok_or_else(|| format!("expected epoch:lr, got '{item}'"))?;
            Ok((parse_num(e.trim())?, parse_num(lr.trim())?))
        })
        .collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn network_pairs(prefix: &str, c: &NetworkConfig, with_landmarks: bool) -> Vec<(String, String)> {
    let mut v = vec![
        (format!("{prefix}.base_width"), c.base_width.to_string()),
        (format!("{prefix}.q_order"), c.q_order.to_string()),
        (format!("{prefix}.stage_modules"), list_str(&c.stage_modules)),
        (format!("{prefix}.units_per_branch"), c.units_per_branch.to_string()),
        (format!("{prefix}.bottleneck_width"), c.bottleneck_width.to_string()),
        (format!("{prefix}.bottleneck_units"), c.bottleneck_units.to_string()),
    ];
    if with_landmarks {
        v.push((format!("{prefix}.num_landmarks"), c.num_landmarks.to_string()));
    }
    v.push((format!("{prefix}.input_size"), size_str(c.input_size)));
    v.push((format!("{prefix}.heatmap_size"), size_str(c.heatmap_size)));
    v
}

fn set_network(c: &mut NetworkConfig, field: &str, v: &str, with_landmarks: bool) -> Option<std::result::Result<(), String>> {
    let r = match field {
        "base_width" => parse_num(v).map(|x| c.base_width = x),
        "q_order" => parse_num(v).map(|x| c.q_order = x),
        "stage_modules" => parse_list(v).map(|x| c.stage_modules = x),
        "units_per_branch" => parse_num(v).map(|x| c.units_per_branch = x),
        "bottleneck_width" => parse_num(v).map(|x| c.bottleneck_width = x),
        "bottleneck_units" => parse_num(v).map(|x| c.bottleneck_units = x),
        "num_landmarks" if with_landmarks => parse_num(v).map(|x| c.num_landmarks = x),
        "input_size" => parse_size(v).map(|x| c.input_size = x),
        "heatmap_size" => parse_size(v).map(|x| c.heatmap_size = x),
        _ => return None,
    };
    Some(r)
}

fn train_pairs(prefix: &str, c: &TrainConfig) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}.batch_size"), c.batch_size.to_string()),
        (format!("{prefix}.base_lr"), format!("{:e}", c.base_lr)),
        (format!("{prefix}.lr_milestones"), milestones_str(&c.lr_milestones)),
        (format!("{prefix}.epochs"), c.epochs.to_string()),
        (format!("{prefix}.sigma"), c.sigma.to_string()),
        (format!("{prefix}.seed"), c.seed.to_string()),
    ]
}

fn set_train(c: &mut TrainConfig, field: &str, v: &str) -> Option<std::result::Result<(), String>> {
    let r = match field {
        "batch_size" => parse_num(v).map(|x| c.batch_size = x),
        "base_lr" => parse_num(v).map(|x| c.base_lr = x),
        "lr_milestones" => parse_milestones(v).map(|x| c.lr_milestones = x),
        "epochs" => parse_num(v).map(|x| c.epochs = x),
        "sigma" => parse_num(v).map(|x| c.sigma = x),
        "seed" => parse_num(v).map(|x| c.seed = x),
        _ => return None,
    };
    Some(r)
}

impl RunConfig {
    /// Desk-scale defaults matching [`NetworkConfig::toy`].
    pub fn toy() -> Self {
        let network = NetworkConfig::toy();
        let stage2 = NetworkConfig {
            num_landmarks: 1,
            input_size: (32, 32),
            heatmap_size: (8, 8),
            stage_modules: vec![1],
            ..network.clone()
        };
        Self {
            network,
            stage2,
            train: TrainConfig {
                batch_size: 8,
                base_lr: 1e-3,
                lr_milestones: Vec::new(),
                epochs: 300,
                ..TrainConfig::default()
            },
            stage2_train: TrainConfig {
                batch_size: 16,
                base_lr: 1e-3,
                lr_milestones: Vec::new(),
                epochs: 40,
                ..TrainConfig::default()
            },
            augment: AugmentConfig {
                copies: 0,
                ..AugmentConfig::default()
            },
            patch: PatchSpec {
                patch_size: 32,
                jitter_px_max: 6.0,
                patches_per_image: 4,
            },
        }
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let a = &self.augment;
        let mut v = network_pairs("network", &self.network, true);
        v.extend(network_pairs("stage2", &self.stage2, false));
        v.extend(train_pairs("train", &self.train));
        v.extend(train_pairs("stage2_train", &self.stage2_train));
        v.extend([
            ("augment.rotation_deg_max".into(), a.rotation_deg_max.to_string()),
            ("augment.noise_std".into(), a.noise_std.to_string()),
            ("augment.crop_scale_min".into(), a.crop_scale_min.to_string()),
            ("augment.translate_px_max".into(), a.translate_px_max.to_string()),
            ("augment.rotation".into(), a.rotation.to_string()),
            ("augment.noise".into(), a.noise.to_string()),
            ("augment.crop".into(), a.crop.to_string()),
            ("augment.translate".into(), a.translate.to_string()),
            ("augment.copies".into(), a.copies.to_string()),
            ("augment.seed".into(), a.seed.to_string()),
            ("patch.patch_size".into(), self.patch.patch_size.to_string()),
            ("patch.jitter_px_max".into(), self.patch.jitter_px_max.to_string()),
            ("patch.patches_per_image".into(), self.patch.patches_per_image.to_string()),
        ]);
        v
    }

    fn set(&mut self, key: &str, v: &str) -> Option<std::result::Result<(), String>> {
        let (group, field) = key.split_once('.')?;
        let a = &mut self.augment;
        match group {
            "network" => set_network(&mut self.network, field, v, true),
            "stage2" => set_network(&mut self.stage2, field, v, false),
            "train" => set_train(&mut self.train, field, v),
            "stage2_train" => set_train(&mut self.stage2_train, field, v),
            "augment" => Some(match field {
                "rotation_deg_max" => parse_num(v).map(|x| a.rotation_deg_max = x),
                "noise_std" => parse_num(v).map(|x| a.noise_std = x),
                "crop_scale_min" => parse_num(v).map(|x| a.crop_scale_min = x),
                "translate_px_max" => parse_num(v).map(|x| a.translate_px_max = x),
                "rotation" => parse_bool(v).map(|x| a.rotation = x),
                "noise" => parse_bool(v).map(|x| a.noise = x),
                "crop" => parse_bool(v).map(|x| a.crop = x),
                "translate" => parse_bool(v).map(|x| a.translate = x),
                "copies" => parse_num(v).map(|x| a.copies = x),
                "seed" => parse_num(v).map(|x| a.seed = x),
                _ => return None,
            }),
            "patch" => Some(match field {
                "patch_size" => parse_num(v).map(|x| self.patch.patch_size = x),
                "jitter_px_max" => parse_num(v).map(|x| self.patch.jitter_px_max = x),
                "patches_per_image" => parse_num(v).map(|x| self.patch.patches_per_image = x),
                _ => return None,
            }),
            _ => None,
        }
    }

    /// Parses text on top of `base`. Errors name the key and 1-based line.
    pub fn parse_onto(base: Self, text: &str) -> Result<Self> {
        let mut cfg = base;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match cfg.set(key, value) {
                None => return Err(err(format!("unknown key '{key}'"))),
                Some(Err(m)) => return Err(err(format!("key '{key}': {m}"))),
                Some(Ok(())) => {}
            }
        }
        cfg.stage2.num_landmarks = 1;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(Self::default(), text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.stage2.validate()?;
        self.train.validate()?;
        self.stage2_train.validate()?;
        self.augment.validate()?;
        self.patch.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialize_parse_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::toy()] {
            let text = cfg.serialize();
            let back = RunConfig::parse(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.serialize(), text);
        }
    }

    #[test]
    fn default_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.base_lr, 1e-4);
        assert_eq!(c.network.heatmap_size, (64, 64));
        assert_eq!(c.network.input_size, (256, 256));
        c.validate().unwrap();
        RunConfig::toy().validate().unwrap();
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = RunConfig::parse("# c\ntrain.epochs = 3\ntrain.epoch = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train.epoch'"), "{msg}");
        assert!(matches!(err, Error::Config { line: 3, .. }));
    }

    #[test]
    fn bad_value_names_key() {
        let msg = RunConfig::parse("network.input_size = 256\n").unwrap_err().to_string();
        assert!(msg.contains("network.input_size"), "{msg}");
        assert!(RunConfig::parse("stage2.num_landmarks = 3").is_err());
    }
}
