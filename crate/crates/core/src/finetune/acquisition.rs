use super::gp::GpModel;
use crate::numkit::{std_normal_cdf, std_normal_pdf, Matrix, SeededRng};

/// Closed-form expected improvement of `N(mean, stddev²)` over `best`.
pub fn expected_improvement(mean: f64, stddev: f64, best: f64) -> f64 {
    ei_with_partials(mean, stddev, best).0
}

/// EI together with `∂EI/∂mean = Φ(z)` and `∂EI/∂stddev = φ(z)`.
pub(crate) fn ei_with_partials(mean: f64, stddev: f64, best: f64) -> (f64, f64, f64) {
    let gap = mean - best;
    if stddev <= 0.0 {
        return if gap > 0.0 { (gap, 1.0, 0.0) } else { (0.0, 0.0, 0.0) };
    }
    let z = gap / stddev;
    let (cdf, pdf) = (std_normal_cdf(z), std_normal_pdf(z));
    ((gap * cdf + stddev * pdf).max(0.0), cdf, pdf)
}

/// Fixed standard-normal base samples for NEI, one row per draw, so the
/// estimate is a deterministic smooth-ish function of the query point.
#[derive(Debug, Clone)]
pub struct NeiSamples {
    draws: Vec<Vec<f64>>,
}

impl NeiSamples {
    /// `count` draws over `observed + 1` jointly sampled points.
    pub fn new(count: usize, observed: usize, rng: &mut SeededRng) -> Self {
        Self {
            draws: (0..count).map(|_| rng.normal_vec(observed + 1)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Cholesky with escalating diagonal jitter; posterior covariances at
/// observed inputs are close to singular when the noise is small.
fn jittered_cholesky(cov: &Matrix) -> Option<Matrix> {
    let scale = (0..cov.rows()).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 1e-12 * scale;
    for _ in 0..10 {
        let mut c = cov.clone();
        for i in 0..c.rows() {
            c[(i, i)] += jitter;
        }
        if let Ok(l) = c.cholesky() {
            return Some(l);
        }
        jitter *= 10.0;
    }
    None
}

/// Monte Carlo NEI: the mean over joint posterior draws at `baseline ∪ {x}`
/// of `max(f(x) − max_i f(baseline_i), 0)`, in outcome units.
pub fn noisy_expected_improvement(gp: &GpModel, baseline: &[Vec<f64>], x: &[f64], samples: &NeiSamples) -> f64 {
    let mut points: Vec<&[f64]> = baseline.iter().map(Vec::as_slice).collect();
    points.push(x);
    let m = points.len();
    let (mean, cov) = gp.joint_standardized(&points);
    let Some(l) = jittered_cholesky(&cov) else {
        return 0.0;
    };
    let mut total = 0.0;
    for z in &samples.draws {
        let mut best = f64::NEG_INFINITY;
        let mut fx = 0.0;
        for i in 0..m {
            let f = mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
            if i + 1 == m {
                fx = f;
            } else {
                best = best.max(f);
            }
        }
        total += (fx - best).max(0.0);
    }
    gp.outcome_scale() * total / samples.len() as f64
}

/// Objective for [`maximize_in_unit_box`]: value and gradient.
pub type ValueAndGrad<'a> = &'a dyn Fn(&[f64]) -> (f64, Vec<f64>);

/// Multi-start projected ascent over `[0,1]^d` with a diagonal secant
/// scaling per coordinate. `f` returns the value and its gradient.
/// Returns the best point and value found.
pub fn maximize_in_unit_box(
    f: ValueAndGrad<'_>,
    starts: &[Vec<f64>],
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let mut best_x = starts[0].clone();
    let mut best_v = f64::NEG_INFINITY;
    for start in starts {
        let (x, v) = ascend(f, start.clone(), max_iters);
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }
    (best_x, best_v)
}

fn ascend(f: ValueAndGrad<'_>, mut x: Vec<f64>, max_iters: usize) -> (Vec<f64>, f64) {
    let d = x.len();
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return (x, f64::NEG_INFINITY);
    }
    let mut scale = vec![1.0; d];
    let mut step = 0.1;
    for _ in 0..max_iters {
        let dir: Vec<f64> = (0..d)
            .map(|i| {
                let v = g[i] * scale[i];
                // a coordinate pinned at a bound and pushing outward is inactive
                if (x[i] <= 0.0 && v < 0.0) || (x[i] >= 1.0 && v > 0.0) {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        let mut accepted = false;
        while step >= 1e-7 {
            let t = step / norm;
            let trial: Vec<f64> = (0..d).map(|i| (x[i] + t * dir[i]).clamp(0.0, 1.0)).collect();
            let (ft, gt) = f(&trial);
            let gain: f64 = (0..d).map(|i| g[i] * (trial[i] - x[i])).sum();
            if ft.is_finite() && ft >= fx + 1e-4 * gain && ft > fx {
                for i in 0..d {
                    let s = trial[i] - x[i];
                    let y = gt[i] - g[i];
                    // concave secant pair: curvature estimate −s/y
                    if s.abs() > 1e-12 && s * y < 0.0 {
                        scale[i] = (-s / y).clamp(1e-4, 1e4);
                    }
                }
                let mean_scale = scale.iter().sum::<f64>() / d as f64;
                scale.iter_mut().for_each(|v| *v /= mean_scale);
                x = trial;
                fx = ft;
                g = gt;
                step = (step * 2.0).min(0.5);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_reference_values() {
        assert!((expected_improvement(1.0, 1.0, 0.0) - 1.083_315_9).abs() < 1e-6);
        assert_eq!(expected_improvement(0.5, 0.0, 0.0), 0.5);
        assert_eq!(expected_improvement(-0.5, 0.0, 0.0), 0.0);
        assert!(expected_improvement(0.0, 1e-12, 0.0) < 1e-11);
        let mut prev = 0.0;
        for i in 0..50 {
            let v = expected_improvement(-3.0 + 0.12 * f64::from(i), 0.7, 0.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ascent_finds_interior_and_boundary_maxima() {
        let f = |x: &[f64]| {
            let t = [0.3, 0.8, 1.4];
            let w = [1.0, 10.0, 0.1];
            let v = -(0..3).map(|i| w[i] * (x[i] - t[i]).powi(2)).sum::<f64>();
            let g = (0..3).map(|i| -2.0 * w[i] * (x[i] - t[i])).collect();
            (v, g)
        };
        let (x, _) = maximize_in_unit_box(&f, &[vec![0.9, 0.1, 0.2]], 200);
        assert!((x[0] - 0.3).abs() < 1e-3);
        assert!((x[1] - 0.8).abs() < 1e-3);
        assert_eq!(x[2], 1.0);
    }
}
