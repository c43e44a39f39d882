//! Flat key=value run configuration with command-line overrides.
//!
//! Arrays are comma lists (surrounding brackets tolerated). Unknown keys are
//! rejected by name, and every run echoes the fully resolved configuration to
//! its output directory.

use eagle_core::loss::LossWeights;
use eagle_core::model::EagleConfig;
use eagle_core::train::OptimConfig;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: EagleConfig,
    pub optim: OptimConfig,
    pub loss: LossWeights,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub augment: bool,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: EagleConfig::default(),
            optim: OptimConfig::default(),
            loss: LossWeights::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            augment: false,
            threshold: 0.5,
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| format!("key '{key}': cannot parse '{value}'"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    let trimmed = value.trim().trim_start_matches('[').trim_end_matches(']');
    trimmed
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_scalar::<usize>(key, s))
        .collect()
}

fn parse_fixed<const N: usize>(key: &str, value: &str) -> Result<[usize; N], String> {
    let list = parse_list(key, value)?;
    list.try_into()
        .map_err(|v: Vec<usize>| format!("key '{key}': expected {N} entries, got {}", v.len()))
}

impl RunConfig {
    /// Apply one `key=value` assignment; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "in_ch" => self.model.in_ch = parse_scalar(key, value)?,
            "out_ch" => self.model.out_ch = parse_scalar(key, value)?,
            "patch" => self.model.patch = parse_scalar(key, value)?,
            "channels" => self.model.channels = parse_fixed::<5>(key, value)?,
            "depths" => self.model.depths = parse_fixed::<4>(key, value)?,
            "decoder_depths" => self.model.decoder_depths = parse_fixed::<4>(key, value)?,
            "cbam_stages" => self.model.cbam_stages = parse_list(key, value)?,
            "cbam_reduction" => self.model.cbam_reduction = parse_scalar(key, value)?,
            "ssm_state_dim" => self.model.ssm_state_dim = parse_scalar(key, value)?,
            "ssm_expand" => self.model.ssm_expand = parse_scalar(key, value)?,
            "ssm_dwconv_kernel" => self.model.ssm_dwconv_kernel = parse_scalar(key, value)?,
            "lr0" => self.optim.lr0 = parse_scalar(key, value)?,
            "beta1" => self.optim.beta1 = parse_scalar(key, value)?,
            "beta2" => self.optim.beta2 = parse_scalar(key, value)?,
            "eps" => self.optim.eps = parse_scalar(key, value)?,
            "weight_decay" => self.optim.weight_decay = parse_scalar(key, value)?,
            "batch" => self.optim.batch = parse_scalar(key, value)?,
            "max_epochs" => self.optim.max_epochs = parse_scalar(key, value)?,
            "plateau_patience" => self.optim.plateau_patience = parse_scalar(key, value)?,
            "plateau_factor" => self.optim.plateau_factor = parse_scalar(key, value)?,
            "early_stop_patience" => self.optim.early_stop_patience = parse_scalar(key, value)?,
            "lambda_dice" => self.loss.dice = parse_scalar(key, value)?,
            "lambda_bce" => self.loss.bce = parse_scalar(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value.trim()),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "seed" => self.seed = parse_scalar(key, value)?,
            "augment" => self.augment = parse_scalar(key, value)?,
            "threshold" => self.threshold = parse_scalar(key, value)?,
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Parse a config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, content: &str) -> Result<(), String> {
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got '{line}'", lineno + 1))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), String> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| format!("override '{item}': expected key=value"))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn list(values: &[usize]) -> String {
        values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Fully resolved key=value lines (sorted), the config echo format.
    pub fn resolved(&self) -> String {
        let mut lines = vec![
            format!("augment={}", self.augment),
            format!("batch={}", self.optim.batch),
            format!("beta1={}", self.optim.beta1),
            format!("beta2={}", self.optim.beta2),
            format!("cbam_reduction={}", self.model.cbam_reduction),
            format!("cbam_stages={}", Self::list(&self.model.cbam_stages)),
            format!("channels={}", Self::list(&self.model.channels)),
            format!("data_dir={}", self.data_dir.display()),
            format!("decoder_depths={}", Self::list(&self.model.decoder_depths)),
            format!("depths={}", Self::list(&self.model.depths)),
            format!("early_stop_patience={}", self.optim.early_stop_patience),
            format!("eps={}", self.optim.eps),
            format!("in_ch={}", self.model.in_ch),
            format!("lambda_bce={}", self.loss.bce),
            format!("lambda_dice={}", self.loss.dice),
            format!("lr0={}", self.optim.lr0),
            format!("max_epochs={}", self.optim.max_epochs),
            format!("out_ch={}", self.model.out_ch),
            format!("out_dir={}", self.out_dir.display()),
            format!("patch={}", self.model.patch),
            format!("plateau_factor={}", self.optim.plateau_factor),
            format!("plateau_patience={}", self.optim.plateau_patience),
            format!("seed={}", self.seed),
            format!("ssm_dwconv_kernel={}", self.model.ssm_dwconv_kernel),
            format!("ssm_expand={}", self.model.ssm_expand),
            format!("ssm_state_dim={}", self.model.ssm_state_dim),
            format!("threshold={}", self.threshold),
            format!("weight_decay={}", self.optim.weight_decay),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("learning_rate", "0.1").unwrap_err();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn bracketed_and_bare_lists_parse() {
        let mut cfg = RunConfig::default();
        cfg.set("depths", "[2,2,4,2]").unwrap();
        assert_eq!(cfg.model.depths, [2, 2, 4, 2]);
        cfg.set("depths", "3, 3, 3, 3").unwrap();
        assert_eq!(cfg.model.depths, [3, 3, 3, 3]);
        assert!(cfg.set("depths", "1,2,3").is_err());
    }

    #[test]
    fn file_with_comments_parses() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("# run setup\nlr0 = 0.002\nchannels = 8,16,32,64,128 # tiny\n\nseed=9\n")
            .unwrap();
        assert_eq!(cfg.optim.lr0, 0.002);
        assert_eq!(cfg.model.channels, [8, 16, 32, 64, 128]);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn resolved_echo_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.set("lr0", "0.0005").unwrap();
        cfg.set("depths", "2,2,5,2").unwrap();
        let echo = cfg.resolved();
        let mut back = RunConfig::default();
        back.apply_file(&echo).unwrap();
        assert_eq!(back.optim.lr0, 0.0005);
        assert_eq!(back.model.depths, [2, 2, 5, 2]);
        assert_eq!(back.resolved(), echo);
    }
}
