use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Full,
    OnlySa,
    OnlyHa,
    LateFusion,
    HaMeanpool,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Full, Mode::OnlySa, Mode::OnlyHa, Mode::LateFusion, Mode::HaMeanpool];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::OnlySa => "only-sa",
            Mode::OnlyHa => "only-ha",
            Mode::LateFusion => "late-fusion",
            Mode::HaMeanpool => "ha-meanpool",
        }
    }

    pub fn uses_sa(self) -> bool {
        self != Mode::OnlyHa
    }

    pub fn uses_ha(self) -> bool {
        self != Mode::OnlySa
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown mode {s:?}")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    DualClass { n_speed: usize, n_dir: usize },
    Binary,
}

impl Head {
    pub fn dual() -> Self {
        Head::DualClass { n_speed: 4, n_dir: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub d_in: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "H_s")]
    pub sa_heads: usize,
    #[serde(rename = "K_s")]
    pub sa_sublayers: usize,
    #[serde(rename = "H_t")]
    pub ha_heads: usize,
    #[serde(rename = "B")]
    pub window: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub mode: Mode,
    pub head: Head,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            d_in: 14,
            layers: 3,
            sa_heads: 4,
            sa_sublayers: 2,
            ha_heads: 2,
            window: 8,
            dropout: 0.1,
            leaky_slope: 0.2,
            mode: Mode::Full,
            head: Head::dual(),
        }
    }
}

impl ModelConfig {
    /// Per-head SA width d'.
    pub fn sa_width(&self) -> usize {
        self.d / self.sa_heads
    }

    /// Per-head HA width d''.
    pub fn ha_width(&self) -> usize {
        self.d / self.ha_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("d_in", self.d_in),
            ("H_s", self.sa_heads),
            ("K_s", self.sa_sublayers),
            ("H_t", self.ha_heads),
            ("B", self.window),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.d % self.sa_heads != 0 {
            return Err(Error::config("H_s", format!("d={} is not divisible by H_s={}", self.d, self.sa_heads)));
        }
        if self.d % self.ha_heads != 0 {
            return Err(Error::config("H_t", format!("d={} is not divisible by H_t={}", self.d, self.ha_heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::config("leaky_slope", "must be finite"));
        }
        if let Head::DualClass { n_speed, n_dir } = self.head {
            if n_speed < 2 || n_dir < 2 {
                return Err(Error::config("head", "each task needs at least two classes"));
            }
        }
        Ok(())
    }
}
