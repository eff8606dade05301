use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelProfile, ParamSpec, TraceError};

/// How mass not owned by the last layer is spread over the other layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remainder {
    #[default]
    Uniform,
    /// Layer `i` gets weight `ratio^i`; ratios above 1 grow towards the output.
    Geometric { ratio: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default)]
    pub name: String,
    pub layer_count: usize,
    /// Bits; must be a whole number of bits.
    pub total_size: f64,
    pub fwd_total: f64,
    pub bp_total: f64,
    pub first_bp_fraction: f64,
    pub last_layer_size_fraction: f64,
    #[serde(default)]
    pub remainder_distribution: Remainder,
    /// Relative perturbation of the remainder weights, drawn from the seed.
    #[serde(default)]
    pub jitter: f64,
}

impl ProfileSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let err = |m: String| Err(TraceError::Spec(m));
        if self.layer_count < 1 {
            return err("layer_count must be at least 1".into());
        }
        let m = self.total_size;
        if !(m >= self.layer_count as f64 && m.fract() == 0.0 && m < 2f64.powi(53)) {
            return err(format!(
                "total_size must be a whole number of bits, at least one per layer, got {m}"
            ));
        }
        for (what, v) in [("fwd_total", self.fwd_total), ("bp_total", self.bp_total)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{what} must be >= 0, got {v}"));
            }
        }
        for (what, v) in [
            ("first_bp_fraction", self.first_bp_fraction),
            ("last_layer_size_fraction", self.last_layer_size_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{what} must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return err(format!("jitter must be in [0, 1), got {}", self.jitter));
        }
        if let Remainder::Geometric { ratio } = self.remainder_distribution {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return err(format!("geometric ratio must be positive, got {ratio}"));
            }
        }
        Ok(())
    }
}

/// Splits `total` whole units over `weights`, each slot getting at least one.
fn whole_units(total: u64, weights: &[f64]) -> Vec<u64> {
    let n = weights.len() as u64;
    let spare = total - n;
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| spare as f64 * w / wsum).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut left = spare - out.iter().sum::<u64>().min(spare);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out.iter().map(|u| u + 1).collect()
}

/// Deterministic synthetic profile for `(spec, seed)`.
pub fn synthesize_profile(spec: &ProfileSpec, seed: u64) -> Result<ModelProfile, TraceError> {
    spec.validate()?;
    let n = spec.layer_count;
    let m = spec.total_size as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest: Vec<f64> = (0..n - 1)
        .map(|i| {
            let base = match spec.remainder_distribution {
                Remainder::Uniform => 1.0,
                Remainder::Geometric { ratio } => ratio.powi(i as i32),
            };
            if spec.jitter > 0.0 {
                base * rng.random_range(1.0 - spec.jitter..=1.0 + spec.jitter)
            } else {
                base
            }
        })
        .collect();
    let rest_sum: f64 = rest.iter().sum();

    let sizes = if n == 1 {
        vec![m]
    } else {
        let last = ((spec.last_layer_size_fraction * spec.total_size).round() as u64).clamp(1, m - (n as u64 - 1));
        let mut sizes = whole_units(m - last, &rest);
        sizes.push(last);
        sizes
    };

    let bp_rest = spec.bp_total * (1.0 - spec.first_bp_fraction);
    let params = (0..n)
        .map(|i| {
            let size = sizes[i] as f64;
            let bp_compute = if i == n - 1 {
                if n == 1 { spec.bp_total } else { spec.bp_total * spec.first_bp_fraction }
            } else {
                bp_rest * rest[i] / rest_sum
            };
            ParamSpec {
                name: format!("layer{i:03}"),
                size,
                bp_compute,
                fp_compute: spec.fwd_total * size / spec.total_size,
            }
        })
        .collect();
    ModelProfile::new(spec.name.clone(), params)
}
