use std::path::{Path, PathBuf};

use grcl_core::encoder::Variant;
use grcl_core::training::{LossKind, NegativeRefresh, NormalizeMode};

use crate::{LossArg, NormalizeArg, RefreshArg, VariantArg};

pub mod audit;
pub mod eval;
pub mod gradcheck;
pub mod influence;
pub mod synth;
pub mod train;

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bpr => Self::Bpr,
            LossArg::Coles => Self::Coles,
            LossArg::GrColes => Self::GrColes,
        }
    }
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::LayerAverage => Self::LayerAverage,
            VariantArg::SelfloopLast => Self::SelfLoopLast,
        }
    }
}

impl From<NormalizeArg> for NormalizeMode {
    fn from(n: NormalizeArg) -> Self {
        match n {
            NormalizeArg::On => Self::On,
            NormalizeArg::Off => Self::Off,
            NormalizeArg::Auto => Self::Auto,
        }
    }
}

impl From<RefreshArg> for NegativeRefresh {
    fn from(r: RefreshArg) -> Self {
        match r {
            RefreshArg::Once => Self::Once,
            RefreshArg::PerEpoch => Self::PerEpoch,
        }
    }
}

/// `<file>.meta.json` next to an output file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// A file that lives next to `path`.
pub fn sibling(path: &Path, name: &str) -> PathBuf {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(name),
        _ => PathBuf::from(name),
    }
}
