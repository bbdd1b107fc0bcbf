//! Model/training configuration and its key=value text form (the config
//! block embedded in model files).

use std::str::FromStr;

use crate::embeddings::UnkPolicy;
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, ModalitySet};
use crate::lstm::GateMode;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Shared width of the projected modality vectors.
    pub p: usize,
    /// Entity LSTM hidden size per direction.
    pub hidden: usize,
    pub char_embed: usize,
    pub char_hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub modalities: ModalitySet,
    pub fusion: FusionMode,
    pub gate_mode: GateMode,
    pub unk_policy: UnkPolicy,
    pub bio_constrain: bool,
    /// Word-vector width; 0 when the word channel is unused.
    pub d_w: usize,
    /// Visual feature width; 0 when the visual channel is unused.
    pub d_v: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            p: 150,
            hidden: 100,
            char_embed: 25,
            char_hidden: 75,
            batch_size: 10,
            learning_rate: 0.02,
            epsilon: 1e-8,
            weight_decay: 0.0,
            max_epochs: 50,
            patience: 5,
            clip_norm: 5.0,
            seed: 1,
            modalities: ModalitySet {
                word: true,
                chars: true,
                visual: false,
            },
            fusion: FusionMode::Attention,
            gate_mode: GateMode::Literal,
            unk_policy: UnkPolicy::Zero,
            bio_constrain: false,
            d_w: 0,
            d_v: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::InvalidArgument("empty modality set".into()));
        }
        if self.fusion == FusionMode::Attention && self.modalities.len() < 2 {
            return Err(Error::InvalidArgument(
                "attention fusion needs at least two modalities".into(),
            ));
        }
        if self.p == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "p and hidden must be positive".into(),
            ));
        }
        if self.modalities.chars && (self.char_embed == 0 || self.char_hidden == 0) {
            return Err(Error::InvalidArgument(
                "character widths must be positive when the char channel is enabled".into(),
            ));
        }
        if self.modalities.word && self.d_w == 0 {
            return Err(Error::InvalidArgument(
                "word channel enabled but d_w is unset".into(),
            ));
        }
        if self.modalities.visual && self.d_v == 0 {
            return Err(Error::InvalidArgument(
                "visual channel enabled but d_v is unset".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::InvalidArgument(
                "clip norm must be nonnegative (0 disables)".into(),
            ));
        }
        Ok(())
    }

    /// Entity LSTM input width: p after attention, K*p after concatenation.
    pub fn fused_width(&self) -> usize {
        match self.fusion {
            FusionMode::Attention => self.p,
            FusionMode::Concat => self.modalities.len() * self.p,
        }
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("batch_size={}\n", self.batch_size));
        out.push_str(&format!("bio_constrain={}\n", self.bio_constrain));
        out.push_str(&format!("char_embed={}\n", self.char_embed));
        out.push_str(&format!("char_hidden={}\n", self.char_hidden));
        out.push_str(&format!("clip_norm={}\n", self.clip_norm));
        out.push_str(&format!("d_v={}\n", self.d_v));
        out.push_str(&format!("d_w={}\n", self.d_w));
        out.push_str(&format!("epsilon={}\n", self.epsilon));
        out.push_str(&format!("fusion={}\n", self.fusion.as_str()));
        out.push_str(&format!("gate_mode={}\n", self.gate_mode.as_str()));
        out.push_str(&format!("hidden={}\n", self.hidden));
        out.push_str(&format!("learning_rate={}\n", self.learning_rate));
        out.push_str(&format!("max_epochs={}\n", self.max_epochs));
        out.push_str(&format!("modalities={}\n", self.modalities.as_config_str()));
        out.push_str(&format!("p={}\n", self.p));
        out.push_str(&format!("patience={}\n", self.patience));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("unk_policy={}\n", self.unk_policy.as_config_str()));
        out.push_str(&format!("weight_decay={}\n", self.weight_decay));
        out
    }

    /// Apply one key=value pair; shared by the config-text parser and the
    /// experiment grid files.
    pub fn apply_kv(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("bad {what}: {value:?}"),
        };
        match key {
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "bio_constrain" => {
                self.bio_constrain = value.parse().map_err(|_| bad("bio_constrain"))?
            }
            "char_embed" => self.char_embed = value.parse().map_err(|_| bad("char_embed"))?,
            "char_hidden" => self.char_hidden = value.parse().map_err(|_| bad("char_hidden"))?,
            "clip_norm" => self.clip_norm = value.parse().map_err(|_| bad("clip_norm"))?,
            "d_v" => self.d_v = value.parse().map_err(|_| bad("d_v"))?,
            "d_w" => self.d_w = value.parse().map_err(|_| bad("d_w"))?,
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad("epsilon"))?,
            "fusion" => self.fusion = FusionMode::from_str(value)?,
            "gate_mode" => self.gate_mode = GateMode::from_str(value)?,
            "hidden" => self.hidden = value.parse().map_err(|_| bad("hidden"))?,
            "learning_rate" => {
                self.learning_rate = value.parse().map_err(|_| bad("learning_rate"))?
            }
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad("max_epochs"))?,
            "modalities" => self.modalities = ModalitySet::from_str(value)?,
            "p" => self.p = value.parse().map_err(|_| bad("p"))?,
            "patience" => self.patience = value.parse().map_err(|_| bad("patience"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "unk_policy" => self.unk_policy = UnkPolicy::from_str(value)?,
            "weight_decay" => {
                self.weight_decay = value.parse().map_err(|_| bad("weight_decay"))?
            }
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown config key {other:?}"),
                })
            }
        }
        Ok(())
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            cfg.apply_kv(key, value, lineno + 1)?;
        }
        Ok(cfg)
    }
}
