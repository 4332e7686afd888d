//! Finite-difference verification of the analytic gradients.

use super::model::PlannerModel;
use super::train::Sample;
use super::PlannerError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

const PER_TENSOR: usize = 48;

fn coordinates(g: &[f64]) -> Vec<usize> {
    let mut by_mag: Vec<usize> = (0..g.len()).collect();
    by_mag.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()).then(a.cmp(b)));
    let mut picked: Vec<usize> = by_mag.into_iter().take(PER_TENSOR).collect();
    let stride = (g.len() / 16).max(1);
    picked.extend((0..g.len()).step_by(stride).take(16));
    picked.sort_unstable();
    picked.dedup();
    picked
}

fn check(model: &PlannerModel<f64>, sample: &Sample, eps: f64, corrupt: bool) -> Result<GradCheckReport, PlannerError> {
    let (_, mut grads) = model.loss_and_grad(sample, None)?;
    if corrupt {
        grads.iter_mut().flatten().for_each(|g| *g *= 1.1);
    }
    let mut probe = model.clone();
    let mut loss_at = |ti: usize, k: usize, delta: f64| -> Result<f64, PlannerError> {
        let orig = probe.params[ti].data[k];
        probe.params[ti].data[k] = orig + delta;
        let l = probe.loss_only(sample);
        probe.params[ti].data[k] = orig;
        l
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, per_tensor: Vec::new(), checked: 0 };
    for ti in 0..model.params.len() {
        let mut worst = 0.0f64;
        for k in coordinates(&grads[ti]) {
            let d1 = (loss_at(ti, k, eps)? - loss_at(ti, k, -eps)?) / (2.0 * eps);
            let h = eps / 2.0;
            let d2 = (loss_at(ti, k, h)? - loss_at(ti, k, -h)?) / (2.0 * h);
            // Richardson extrapolation of the two central differences.
            let numeric = (4.0 * d2 - d1) / 3.0;
            let analytic = grads[ti][k];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.push((model.params[ti].name.clone(), worst));
    }
    Ok(report)
}

/// Compares analytic gradients of the masked loss with central finite
/// differences on a sample of coordinates from every parameter tensor.
/// Dropout is disabled for both sides.
pub fn grad_check(model: &PlannerModel<f64>, sample: &Sample, eps: f64) -> Result<GradCheckReport, PlannerError> {
    check(model, sample, eps, false)
}

/// The same check against deliberately scaled analytic gradients.
pub fn grad_check_corrupted(model: &PlannerModel<f64>, sample: &Sample, eps: f64) -> Result<GradCheckReport, PlannerError> {
    check(model, sample, eps, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{build_samples, PlannerConfig, TrainData};
    use crate::song::StyleVector;
    use crate::testutil::random_song;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(cfg: &PlannerConfig, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let song = random_song(&mut rng, 8);
        let all: Vec<StyleVector> = StyleVector::all().collect();
        let styles = song.measures.iter().map(|_| all[rng.gen_range(0..all.len())]).collect();
        let data = TrainData { songs: vec![song], styles: vec![styles] };
        let mut s = build_samples(&data, &[0], cfg, Some(seed)).unwrap();
        let n = s.len();
        s.swap_remove(n / 2)
    }

    fn cfg(layers: usize) -> PlannerConfig {
        PlannerConfig { d_model: 16, layers, heads: 4, d_ff: 32, dropout: 0.0, past_window: 2, ..PlannerConfig::tiny() }
    }

    #[test]
    fn linear_only_exact() {
        let c = cfg(0);
        let m = PlannerModel::<f64>::init(&c, &mut ChaCha8Rng::seed_from_u64(1));
        let r = grad_check(&m, &sample(&c, 3), 1e-4).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }

    #[test]
    fn tiny_encoder_matches() {
        let c = cfg(2);
        let m = PlannerModel::<f64>::init(&c, &mut ChaCha8Rng::seed_from_u64(2));
        let s = sample(&c, 4);
        let r = grad_check(&m, &s, 1e-4).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{:?}", r.per_tensor);
        assert!(grad_check_corrupted(&m, &s, 1e-4).unwrap().max_rel_error > 1e-2);
    }
}
