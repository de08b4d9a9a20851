//! Flat `key = value` configuration files covering the hardware model and the
//! analysis defaults (initial sp, search budgets). Unknown keys are errors.

use thiserror::Error;

use crate::hw::{HwConfig, Replacement, WritePolicy};

/// Everything configurable from one file. All analysis defaults live here so
/// the analysis modules never hard-code them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolConfig {
    pub hw: HwConfig,
    /// Initial stack-pointer value for the symbolic simulations.
    pub init_sp: u32,
    /// Maximum explorer configurations before giving up.
    pub state_budget: u64,
    /// Maximum symbolic-simulation steps per slice simulation.
    pub sim_step_budget: u64,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            hw: HwConfig::default(),
            init_sp: 0x1000,
            state_budget: 50_000_000,
            sim_step_budget: 10_000_000,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {0}: expected `key = value`")]
    Malformed(usize),
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for `{key}`")]
    BadValue { line: usize, key: String },
}

fn parse_num(v: &str) -> Option<u64> {
    let v = v.trim();
    if let Some(hex) = v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        v.parse().ok()
    }
}

fn parse_range(v: &str) -> Option<(u32, u32)> {
    let (lo, hi) = v.split_once(',')?;
    Some((parse_num(lo)? as u32, parse_num(hi)? as u32))
}

impl ToolConfig {
    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<ToolConfig, ConfigError> {
        let mut cfg = ToolConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed(line_no))?;
            let key = key.trim();
            let value = value.trim();
            let bad = || ConfigError::BadValue { line: line_no, key: key.to_string() };
            let num = || parse_num(value).ok_or_else(bad);
            match key {
                "mainmem_trans" => cfg.hw.mainmem_trans = num()? as u32,
                "cache_speed" => cfg.hw.cache_speed = num()? as u32,
                "sets" => cfg.hw.sets = num()? as u32,
                "ways" => cfg.hw.ways = num()? as u32,
                "line_bytes" => cfg.hw.line_bytes = num()? as u32,
                "wb_entries" => cfg.hw.wb_entries = num()? as u32,
                "wb_drain_cycles" => cfg.hw.wb_drain_cycles = num()? as u32,
                "init_sp" => cfg.init_sp = num()? as u32,
                "state_budget" => cfg.state_budget = num()?,
                "sim_step_budget" => cfg.sim_step_budget = num()?,
                "replacement" => {
                    cfg.hw.replacement = match value {
                        "fifo" | "round-robin" => Replacement::Fifo,
                        _ => return Err(bad()),
                    }
                }
                "write_policy" => {
                    cfg.hw.write_policy = match value {
                        "write-through" => WritePolicy::WriteThrough,
                        "write-back" => WritePolicy::WriteBack,
                        _ => return Err(bad()),
                    }
                }
                "dur_mul" => cfg.hw.dur_mul = parse_range(value).ok_or_else(bad)?,
                "dur_mla" => cfg.hw.dur_mla = parse_range(value).ok_or_else(bad)?,
                "dur_smull" => cfg.hw.dur_smull = parse_range(value).ok_or_else(bad)?,
                _ => return Err(ConfigError::UnknownKey { line: line_no, key: key.to_string() }),
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(ToolConfig::default().hw.validate().is_ok());
    }

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = ToolConfig::parse(
            "# timing\nmainmem_trans = 6\nwrite_policy = write-back\ndur_mul = 3,6\ninit_sp = 0x2000\n",
        )
        .unwrap();
        assert_eq!(cfg.hw.mainmem_trans, 6);
        assert_eq!(cfg.hw.write_policy, WritePolicy::WriteBack);
        assert_eq!(cfg.init_sp, 0x2000);
    }

    #[test]
    fn unknown_key_is_an_error() {
        assert_eq!(
            ToolConfig::parse("frobnicate = 1\n"),
            Err(ConfigError::UnknownKey { line: 1, key: "frobnicate".into() })
        );
    }
}
