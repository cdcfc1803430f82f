//! Model and training configuration in `key=value` text form.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors so a
//! typo never silently falls back to a default.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{GenError, Result};

/// Hyperparameters of a stack of GEN layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    /// Propagation rounds per layer.
    pub k: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub heads: usize,
    /// Query/key width; `None` means `hidden_dim`.
    pub d_key: Option<usize>,
    pub leaky_slope: f64,
    pub ffn_expansion: usize,
    pub dropout: f64,
    pub eliminate: bool,
    pub edge_attn: bool,
    pub decompose_inputs: bool,
    pub static_alpha: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dim: 64,
            k: 4,
            gamma: 0.5,
            epsilon: 1e-6,
            heads: 1,
            d_key: None,
            leaky_slope: 0.2,
            ffn_expansion: 2,
            dropout: 0.0,
            eliminate: true,
            edge_attn: true,
            decompose_inputs: false,
            static_alpha: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn d_key(&self) -> usize {
        self.d_key.unwrap_or(self.hidden_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GenError::Input(msg));
        if self.layers == 0 || self.hidden_dim == 0 || self.k == 0 {
            return bad("layers, hidden_dim and K must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.heads == 0 || self.d_key() == 0 || self.d_key() % self.heads != 0 {
            return bad(format!("d_key {} not divisible by heads {}", self.d_key(), self.heads));
        }
        if self.ffn_expansion == 0 {
            return bad("ffn_expansion must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.leaky_slope.is_finite()) {
            return bad("leaky_slope must be finite".into());
        }
        Ok(())
    }
}

/// Training hyperparameters plus the model they train.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 200,
            learning_rate: 5e-3,
            weight_decay: 5e-4,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Some(true),
        "false" | "off" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(GenError::Input("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(GenError::Input(format!("learning_rate {} is invalid", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(GenError::Input(format!("weight_decay {} is invalid", self.weight_decay)));
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        let boolean = |v: &str| parse_bool(v).ok_or_else(|| format!("expected on/off, got {v:?}"));
        let m = &mut self.model;
        match key {
            "layers" => m.layers = num(value)?,
            "hidden_dim" => m.hidden_dim = num(value)?,
            "K" | "k" => m.k = num(value)?,
            "gamma" => m.gamma = num(value)?,
            "epsilon" => m.epsilon = num(value)?,
            "heads" => m.heads = num(value)?,
            "d_key" => m.d_key = Some(num(value)?),
            "leaky_slope" => m.leaky_slope = num(value)?,
            "ffn_expansion" => m.ffn_expansion = num(value)?,
            "dropout" => m.dropout = num(value)?,
            "eliminate" => m.eliminate = boolean(value)?,
            "edge_attn" => m.edge_attn = boolean(value)?,
            "decompose_inputs" => m.decompose_inputs = boolean(value)?,
            "static_alpha" => m.static_alpha = boolean(value)?,
            "seed" => m.seed = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "learning_rate" | "lr" => self.learning_rate = num(value)?,
            "weight_decay" => self.weight_decay = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| GenError::InputLine {
                line: n + 1,
                msg: "expected key=value".into(),
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|msg| GenError::InputLine { line: n + 1, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GenError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            GenError::InputLine { line, msg } => GenError::file(path, format!("line {line}: {msg}")),
            other => other,
        })
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let onoff = |b: bool| if b { "on" } else { "off" };
        let mut s = String::new();
        let _ = writeln!(s, "layers={}", m.layers);
        let _ = writeln!(s, "hidden_dim={}", m.hidden_dim);
        let _ = writeln!(s, "K={}", m.k);
        let _ = writeln!(s, "gamma={}", m.gamma);
        let _ = writeln!(s, "epsilon={}", m.epsilon);
        let _ = writeln!(s, "heads={}", m.heads);
        if let Some(d) = m.d_key {
            let _ = writeln!(s, "d_key={d}");
        }
        let _ = writeln!(s, "leaky_slope={}", m.leaky_slope);
        let _ = writeln!(s, "ffn_expansion={}", m.ffn_expansion);
        let _ = writeln!(s, "dropout={}", m.dropout);
        let _ = writeln!(s, "eliminate={}", onoff(m.eliminate));
        let _ = writeln!(s, "edge_attn={}", onoff(m.edge_attn));
        let _ = writeln!(s, "decompose_inputs={}", onoff(m.decompose_inputs));
        let _ = writeln!(s, "static_alpha={}", onoff(m.static_alpha));
        let _ = writeln!(s, "seed={}", m.seed);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let cfg = TrainConfig::parse("# comment\nK=3\nhidden_dim = 16\neliminate=off\nlr=0.01\n").unwrap();
        assert_eq!(cfg.model.k, 3);
        assert_eq!(cfg.model.hidden_dim, 16);
        assert!(!cfg.model.eliminate);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(TrainConfig::parse("K=3\nfoo=1"), Err(GenError::InputLine { line: 2, .. })));
        assert!(matches!(TrainConfig::parse("K"), Err(GenError::InputLine { line: 1, .. })));
        assert!(matches!(TrainConfig::parse("gamma=1.5"), Err(GenError::Input(_))));
        assert!(matches!(TrainConfig::parse("heads=3\nd_key=8"), Err(GenError::Input(_))));
        assert!(matches!(TrainConfig::parse("epochs=0"), Err(GenError::Input(_))));
    }
}
