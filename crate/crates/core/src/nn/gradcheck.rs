use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled from each named tensor (all when smaller).
    pub per_tensor: usize,
    /// Gradients below this magnitude are compared on an absolute scale.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-4, per_tensor: 12, abs_floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, abs_floor)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} coords, max rel err {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
            self.checked, self.max_rel_error, self.worst_param, self.worst_index, self.worst_analytic, self.worst_numeric
        )
    }
}

/// Compares `analytic` against central differences of `loss` on a random
/// sample of coordinates from every parameter tensor.
pub fn grad_check(
    params: &ParamSet,
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    assert_eq!(analytic.len(), params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = params.values.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for spec in &params.specs {
        let n = spec.slot.len;
        let mut picks: Vec<usize> = if n <= cfg.per_tensor { (0..n).collect() } else { sample(&mut rng, n, cfg.per_tensor).into_vec() };
        picks.sort_unstable();
        for local in picks {
            let i = spec.slot.offset + local;
            let orig = values[i];
            values[i] = orig + cfg.step;
            let up = loss(&values);
            values[i] = orig - cfg.step;
            let down = loss(&values);
            values[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = spec.name.clone();
                report.worst_index = local;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}
