//! The captioning network and its autoregressive baseline.

pub mod config;
pub mod io;
pub mod network;

use serde::{Deserialize, Serialize};

pub use config::{ModalityConfig, ModelConfig};
pub use io::{load_model, save_model, Sidecar};
pub use network::{Network, Session, VideoFeatures};

/// Training/decoding variant of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Nacf,
    NaB,
    ArB,
    ArBVis,
}

impl Variant {
    pub fn causal(self) -> bool {
        matches!(self, Variant::ArB | Variant::ArBVis)
    }

    /// Whether the visual-word loss is trained.
    pub fn uses_visual(self) -> bool {
        matches!(self, Variant::Nacf | Variant::ArBVis)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nacf => "nacf",
            Variant::NaB => "na-b",
            Variant::ArB => "ar-b",
            Variant::ArBVis => "ar-b-vis",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "nacf" => Ok(Variant::Nacf),
            "na-b" => Ok(Variant::NaB),
            "ar-b" => Ok(Variant::ArB),
            "ar-b-vis" => Ok(Variant::ArBVis),
            _ => Err(crate::Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
