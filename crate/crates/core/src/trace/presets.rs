//! Synthetic stand-ins for the four characterized CNNs.
//!
//! Layer counts, model sizes and compute totals follow the published model
//! characterization. How mass is spread over the layers, and the module
//! templates, are placeholders.

use super::{ParamSpec, ProfileSpec, Remainder};

pub const PRESET_NAMES: [&str; 4] = ["vgg16", "inception_v3", "resnet200", "resnet101"];

fn spec(name: &str, layers: usize, gbits: f64, fwd: f64, bp: f64, first_bp: f64, last_size: f64) -> ProfileSpec {
    ProfileSpec {
        name: name.to_string(),
        layer_count: layers,
        total_size: (gbits * 1e9).round(),
        fwd_total: fwd,
        bp_total: bp,
        first_bp_fraction: first_bp,
        last_layer_size_fraction: last_size,
        remainder_distribution: Remainder::Uniform,
        jitter: 0.0,
    }
}

/// Dominated by a 5.44 Gb fully connected output layer whose gradient takes
/// most of the backprop compute.
pub fn vgg16_like() -> ProfileSpec {
    spec("vgg16", 22, 6.58, 0.169, 0.193, 0.169 / 0.193, 5.44 / 6.58)
}

pub fn inception_v3_like() -> ProfileSpec {
    spec("inception_v3", 21, 0.715, 0.176, 0.296, 0.05, 0.451)
}

pub fn resnet200_like() -> ProfileSpec {
    spec("resnet200", 202, 2.06, 0.357, 0.34, 1.0 / 202.0, 1.0 / 202.0)
}

pub fn resnet101_like() -> ProfileSpec {
    spec("resnet101", 103, 1.42, 0.176, 0.180, 1.0 / 103.0, 1.0 / 103.0)
}

pub fn preset(name: &str) -> Option<ProfileSpec> {
    match name {
        "vgg16" => Some(vgg16_like()),
        "inception_v3" => Some(inception_v3_like()),
        "resnet200" => Some(resnet200_like()),
        "resnet101" => Some(resnet101_like()),
        _ => None,
    }
}

/// Small, compute-bound module (35x35x288 class). Placeholder costs.
pub fn compute_heavy_module() -> ParamSpec {
    ParamSpec { name: "mod35x35x288".into(), size: 2e6, bp_compute: 0.010, fp_compute: 0.005 }
}

/// Large, network-bound module (17x17x768 class). Placeholder costs.
pub fn network_heavy_module() -> ParamSpec {
    ParamSpec { name: "mod17x17x768".into(), size: 42e6, bp_compute: 0.002, fp_compute: 0.001 }
}
