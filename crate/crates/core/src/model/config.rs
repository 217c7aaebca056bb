use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{self, Reader};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// One cell.
    Base,
    /// Four cells with patch merging and expanding between them.
    Deep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconstructionMode {
    /// Per-token linear map to a `P x P` patch, equivalent to a stride-P
    /// transposed convolution.
    Transposed,
    /// Per-token linear map to the channel count, then bilinear upsampling.
    Bilinear,
    /// One linear map from the whole token grid to the whole frame.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    L2,
    L1L2,
}

macro_rules! text_enum {
    ($ty:ident, $what:literal, $($variant:ident => $text:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!(concat!("unknown ", $what, " `{}`"), other)),
                }
            }
        }
    };
}

text_enum!(Variant, "variant", Base => "b", Deep => "d");
text_enum!(ReconstructionMode, "reconstruction mode", Transposed => "transposed", Bilinear => "bilinear", Linear => "linear");
text_enum!(LossMode, "loss mode", L2 => "l2", L1L2 => "l1+l2");

/// Full architecture record.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub window_size: usize,
    pub heads: usize,
    /// STB depth per cell: one entry for B, four for D.
    pub depths: Vec<usize>,
    pub reconstruction: ReconstructionMode,
    pub loss: LossMode,
    pub relative_position_bias: bool,
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    /// Moving MNIST setting: 64x64x1 frames, patch 2, four cells with
    /// depths (2, 6, 6, 2), L2 loss.
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Deep,
            input_channels: 1,
            height: 64,
            width: 64,
            patch_size: 2,
            embed_dim: 128,
            window_size: 4,
            heads: 4,
            depths: vec![2, 6, 6, 2],
            reconstruction: ReconstructionMode::Transposed,
            loss: LossMode::L2,
            relative_position_bias: true,
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }
}

/// Resolution and width of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub grid: (usize, usize),
    pub dim: usize,
    pub depth: usize,
}

impl ModelConfig {
    /// Small single-cell config, handy for tests.
    pub fn base(height: usize, width: usize, patch_size: usize, embed_dim: usize, depth: usize) -> Self {
        ModelConfig {
            variant: Variant::Base,
            height,
            width,
            patch_size,
            embed_dim,
            depths: vec![depth],
            ..Self::default()
        }
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (
            self.height / self.patch_size.max(1),
            self.width / self.patch_size.max(1),
        )
    }

    /// Cell stages in forward order: B = [G]; D = [G, G/2, G/2, G].
    pub fn stages(&self) -> Vec<Stage> {
        let (gh, gw) = self.token_grid();
        let d = self.embed_dim;
        let depth = |i: usize| self.depths.get(i).copied().unwrap_or(0);
        match self.variant {
            Variant::Base => vec![Stage {
                grid: (gh, gw),
                dim: d,
                depth: depth(0),
            }],
            Variant::Deep => vec![
                Stage {
                    grid: (gh, gw),
                    dim: d,
                    depth: depth(0),
                },
                Stage {
                    grid: (gh / 2, gw / 2),
                    dim: 2 * d,
                    depth: depth(1),
                },
                Stage {
                    grid: (gh / 2, gw / 2),
                    dim: 2 * d,
                    depth: depth(2),
                },
                Stage {
                    grid: (gh, gw),
                    dim: d,
                    depth: depth(3),
                },
            ],
        }
    }

    /// Lists every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let positive = [
            ("input_channels", self.input_channels),
            ("height", self.height),
            ("width", self.width),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("window_size", self.window_size),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let expected = match self.variant {
            Variant::Base => 1,
            Variant::Deep => 4,
        };
        if self.depths.len() != expected {
            errs.push(format!(
                "variant {} needs {expected} depth entries, got {:?}",
                self.variant, self.depths
            ));
        }
        if let Some(d) = self.depths.iter().find(|&&d| d == 0 || d % 2 != 0) {
            errs.push(format!("STB depth {d} must be a positive even number"));
        }
        if !self.height.is_multiple_of(self.patch_size) || !self.width.is_multiple_of(self.patch_size) {
            errs.push(format!(
                "frame {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch_size
            ));
        }
        if self.variant == Variant::Deep && !self.embed_dim.is_multiple_of(2) {
            errs.push(format!("embed_dim {} must be even for variant d", self.embed_dim));
        }
        for stage in self.stages() {
            let (gh, gw) = stage.grid;
            if gh == 0 || gw == 0 || gh % self.window_size != 0 || gw % self.window_size != 0 {
                errs.push(format!(
                    "token grid {gh}x{gw} is not divisible by window size {}",
                    self.window_size
                ));
            }
            if stage.dim % self.heads != 0 {
                errs.push(format!("dim {} is not divisible by {} heads", stage.dim, self.heads));
            }
        }
        if self.variant == Variant::Deep {
            let (gh, gw) = self.token_grid();
            if gh % 2 != 0 || gw % 2 != 0 {
                errs.push(format!("token grid {gh}x{gw} must be even for patch merging"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let mut seen = std::collections::HashSet::new();
        errs.retain(|e| seen.insert(e.clone()));
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Number of scalar parameters, derived from the config alone.
    pub fn param_count(&self) -> usize {
        let linear = |i: usize, o: usize, bias: bool| i * o + if bias { o } else { 0 };
        let ln = |d: usize| 2 * d;
        let span = 2 * self.window_size - 1;
        let block = |d: usize| {
            let attn = linear(d, 3 * d, true)
                + linear(d, d, true)
                + if self.relative_position_bias {
                    span * span * self.heads
                } else {
                    0
                };
            let hidden = d * self.mlp_ratio;
            ln(d) + attn + ln(d) + linear(d, hidden, true) + linear(hidden, d, true)
        };
        let cell = |s: &Stage| linear(2 * s.dim, s.dim, true) + s.depth * block(s.dim);
        let c = self.input_channels;
        let p = self.patch_size;
        let d = self.embed_dim;
        let (gh, gw) = self.token_grid();
        let mut n = linear(c * p * p, d, true);
        n += self.stages().iter().map(cell).sum::<usize>();
        if self.variant == Variant::Deep {
            n += ln(4 * d) + linear(4 * d, 2 * d, false);
            n += linear(2 * d, 2 * (2 * d), false) + ln(d);
        }
        n += match self.reconstruction {
            ReconstructionMode::Transposed => linear(d, c * p * p, true),
            ReconstructionMode::Bilinear => linear(d, c, true),
            ReconstructionMode::Linear => linear(gh * gw * d, self.height * self.width * c, true),
        };
        n
    }

    pub fn to_text(&self) -> String {
        let depths: Vec<String> = self.depths.iter().map(ToString::to_string).collect();
        format!(
            "variant = {}\ninput_channels = {}\nheight = {}\nwidth = {}\npatch_size = {}\n\
             embed_dim = {}\nwindow_size = {}\nheads = {}\ndepths = {}\nreconstruction = {}\n\
             loss = {}\nrelative_position_bias = {}\nmlp_ratio = {}\ndropout = {}\n",
            self.variant,
            self.input_channels,
            self.height,
            self.width,
            self.patch_size,
            self.embed_dim,
            self.window_size,
            self.heads,
            depths.join(","),
            self.reconstruction,
            self.loss,
            self.relative_position_bias,
            self.mlp_ratio,
            self.dropout,
        )
    }

    /// Overrides fields from the model keys present in `map`, removing them.
    pub fn apply(&mut self, r: &mut Reader<'_>) {
        self.variant = r.take("variant", self.variant);
        self.input_channels = r.take("input_channels", self.input_channels);
        self.height = r.take("height", self.height);
        self.width = r.take("width", self.width);
        self.patch_size = r.take("patch_size", self.patch_size);
        self.embed_dim = r.take("embed_dim", self.embed_dim);
        self.window_size = r.take("window_size", self.window_size);
        self.heads = r.take("heads", self.heads);
        self.depths = r.take_list("depths", std::mem::take(&mut self.depths));
        self.reconstruction = r.take("reconstruction", self.reconstruction);
        self.loss = r.take("loss", self.loss);
        self.relative_position_bias = r.take("relative_position_bias", self.relative_position_bias);
        self.mlp_ratio = r.take("mlp_ratio", self.mlp_ratio);
        self.dropout = r.take("dropout", self.dropout);
    }

    pub fn from_map(map: &mut BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut r = Reader::new(map);
        cfg.apply(&mut r);
        if !r.errors.is_empty() {
            return Err(Error::Config(r.errors));
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = kv::parse(text)?;
        let cfg = Self::from_map(&mut map)?;
        if let Some(k) = map.keys().next() {
            return Err(Error::Config(vec![format!("unknown model key `{k}`")]));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_the_moving_mnist_setting() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.token_grid(), (32, 32));
        let grids: Vec<_> = cfg.stages().iter().map(|s| s.grid.0).collect();
        assert_eq!(grids, vec![32, 16, 16, 32]);
        assert_eq!(cfg.loss, LossMode::L2);
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = ModelConfig::base(32, 32, 4, 48, 6);
        cfg.input_channels = 2;
        cfg.reconstruction = ReconstructionMode::Bilinear;
        cfg.loss = LossMode::L1L2;
        cfg.dropout = 0.1;
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = ModelConfig::base(30, 32, 4, 10, 3);
        cfg.heads = 4;
        let Err(Error::Config(errs)) = cfg.validate() else {
            panic!("expected errors")
        };
        assert!(errs.len() >= 3, "{errs:?}");
        let deep = ModelConfig {
            depths: vec![2, 2],
            ..ModelConfig::default()
        };
        assert!(deep.validate().is_err());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(ModelConfig::from_text("embed_dim = 8\nembed_dims = 9\n").is_err());
    }
}
