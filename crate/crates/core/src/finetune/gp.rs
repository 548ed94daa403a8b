//! Gaussian-process surrogate with an ARD Matérn-5/2 kernel over the unit
//! box. Outcomes are standardized internally.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nnet::AdamState;
use crate::numkit::{Matrix, SeededRng};

const SQRT5: f64 = 2.236_067_977_499_79;
const LENGTHSCALE_BOUNDS: (f64, f64) = (0.05, 20.0);
const SIGNAL_BOUNDS: (f64, f64) = (0.05, 20.0);
const NOISE_UPPER: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    /// Observation noise in standardized units.
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpFitConfig {
    pub noise_floor: f64,
    pub learn_noise: bool,
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            noise_floor: 1e-6,
            learn_noise: true,
            restarts: 5,
            steps: 100,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    chol: Matrix,
    alpha: Vec<f64>,
    log_marginal: f64,
}

/// Posterior summary at one input, in outcome units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub stddev: f64,
    pub d_mean: Vec<f64>,
    pub d_stddev: Vec<f64>,
}

fn sq_scaled_dist(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum()
}

/// Matérn-5/2 correlation at scaled distance `r`.
fn matern(r: f64) -> f64 {
    (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
}

/// `−(1/r) d matern / dr`, finite at `r = 0`.
fn matern_slope(r: f64) -> f64 {
    5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
}

impl GpHyper {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_var * matern(sq_scaled_dist(a, b, &self.lengthscales).sqrt())
    }

    #[cfg(test)]
    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_var: v[d].exp(),
            noise_var: v[d + 1].exp(),
        }
    }
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, scale, y.iter().map(|v| (v - mean) / scale).collect())
}

/// Cholesky of `K + noise·I`, adding extra diagonal jitter if needed.
fn factor(x: &[Vec<f64>], hyper: &GpHyper) -> Result<Matrix> {
    let n = x.len();
    let base = Matrix::from_fn(n, n, |i, j| hyper.kernel(&x[i], &x[j]));
    let mut extra = 0.0;
    for _ in 0..6 {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += hyper.noise_var + extra;
        }
        if let Ok(l) = k.cholesky() {
            return Ok(l);
        }
        extra = if extra == 0.0 { 1e-9 * hyper.signal_var } else { extra * 10.0 };
    }
    Err(CoreError::Conditioning(format!(
        "kernel matrix of {n} points is singular after jitter"
    )))
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(CoreError::Dimension(format!("{} inputs, {} outcomes", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(CoreError::EmptyInput("a GP needs at least two observations".into()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|p| p.len() != d) {
        return Err(CoreError::Dimension("inputs differ in length".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CoreError::Domain("GP data must be finite".into()));
    }
    Ok(d)
}

/// Log marginal likelihood of standardized data and its gradient with
/// respect to the log hyperparameters.
fn log_marginal(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let d = hyper.lengthscales.len();
    let l = factor(x, hyper)?;
    let alpha = l.cholesky_solve(y);
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let value = -0.5 * y.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()
        - log_det
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        for (i, v) in l.cholesky_solve(&e).into_iter().enumerate() {
            inv[(i, j)] = v;
        }
    }
    let mut grad = vec![0.0; d + 2];
    for a in 0..n {
        for b in 0..n {
            let w = alpha[a] * alpha[b] - inv[(a, b)];
            if a == b {
                grad[d + 1] += 0.5 * w * hyper.noise_var;
            }
            let r = sq_scaled_dist(&x[a], &x[b], &hyper.lengthscales).sqrt();
            let k = hyper.signal_var * matern(r);
            grad[d] += 0.5 * w * k;
            if a == b {
                continue;
            }
            let c = 0.5 * w * hyper.signal_var * matern_slope(r);
            for (dim, g) in grad[..d].iter_mut().enumerate() {
                let t = (x[a][dim] - x[b][dim]) / hyper.lengthscales[dim];
                *g += c * t * t;
            }
        }
    }
    Ok((value, grad))
}

fn clamp_log(v: &mut [f64], cfg: &GpFitConfig) {
    let d = v.len() - 2;
    for x in &mut v[..d] {
        *x = x.clamp(LENGTHSCALE_BOUNDS.0.ln(), LENGTHSCALE_BOUNDS.1.ln());
    }
    v[d] = v[d].clamp(SIGNAL_BOUNDS.0.ln(), SIGNAL_BOUNDS.1.ln());
    let floor = cfg.noise_floor.ln();
    v[d + 1] = if cfg.learn_noise {
        v[d + 1].clamp(floor, NOISE_UPPER.ln().max(floor))
    } else {
        floor
    };
}

/// Fits hyperparameters by projected gradient ascent on the log marginal
/// likelihood from `cfg.restarts` starts; the first start is fixed, the
/// others are drawn from `rng`.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], cfg: &GpFitConfig, rng: &mut SeededRng) -> Result<GpModel> {
    let d = check_data(x, y)?;
    if !(cfg.noise_floor > 0.0) {
        return Err(CoreError::Config("noise floor must be positive".into()));
    }
    let (y_mean, y_scale, ys) = standardize(y);
    let typical = 0.5 * (d as f64).sqrt();
    let mut best: Option<(f64, GpHyper)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut v = if restart == 0 {
            let mut v = vec![typical.ln(); d];
            v.push(0.0);
            v.push((1e-2f64).ln());
            v
        } else {
            let mut v: Vec<f64> = (0..d)
                .map(|_| (typical * (0.2 + 1.8 * rng.uniform())).ln())
                .collect();
            v.push((0.5 + 1.5 * rng.uniform()).ln());
            v.push((1e-4f64).ln() + rng.uniform() * (1e-4f64).ln().abs());
            v
        };
        clamp_log(&mut v, cfg);
        let mut adam = AdamState::new(v.len(), cfg.learning_rate);
        let mut current = log_marginal(x, &ys, &GpHyper::from_log(&v)).ok();
        let mut local_best = current.as_ref().map(|(val, _)| (*val, v.clone()));
        for _ in 0..cfg.steps {
            let Some((_, grad)) = current.as_ref() else { break };
            let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
            adam.step(&mut v, &ascent)?;
            clamp_log(&mut v, cfg);
            current = log_marginal(x, &ys, &GpHyper::from_log(&v)).ok();
            if let Some((val, _)) = &current {
                if local_best.as_ref().is_none_or(|(b, _)| val > b) {
                    local_best = Some((*val, v.clone()));
                }
            }
        }
        if let Some((val, v)) = local_best {
            if best.as_ref().is_none_or(|(b, _)| val > *b) {
                best = Some((val, GpHyper::from_log(&v)));
            }
        }
    }
    let (_, hyper) = best.ok_or_else(|| {
        CoreError::Conditioning("no hyperparameter start gave a usable kernel".into())
    })?;
    build(x, y_mean, y_scale, &ys, hyper)
}

/// GP with fixed hyperparameters (noise in standardized units).
pub fn gp_fit_fixed(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<GpModel> {
    let d = check_data(x, y)?;
    if hyper.lengthscales.len() != d {
        return Err(CoreError::Dimension("one lengthscale per input dimension".into()));
    }
    let (y_mean, y_scale, ys) = standardize(y);
    build(x, y_mean, y_scale, &ys, hyper)
}

fn build(x: &[Vec<f64>], y_mean: f64, y_scale: f64, ys: &[f64], hyper: GpHyper) -> Result<GpModel> {
    let chol = factor(x, &hyper)?;
    let alpha = chol.cholesky_solve(ys);
    let (log_marginal, _) = log_marginal(x, ys, &hyper)?;
    Ok(GpModel {
        x: x.to_vec(),
        y_mean,
        y_scale,
        hyper,
        chol,
        alpha,
        log_marginal,
    })
}

impl GpModel {
    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn outcome_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn outcome_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks: Vec<f64> = self.x.iter().map(|xi| self.hyper.kernel(x, xi)).collect();
        let mean: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let w = self.chol.solve_lower(&ks);
        let var = (self.hyper.signal_var - w.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }

    /// [`Self::predict`] plus gradients with respect to `x`.
    pub fn predict_with_grad(&self, x: &[f64]) -> Prediction {
        let d = x.len();
        let n = self.x.len();
        let mut ks = Vec::with_capacity(n);
        // dk_i/dx = −s²·slope(r)·(x − x_i)/ℓ²
        let mut dks = Vec::with_capacity(n);
        for xi in &self.x {
            let r = sq_scaled_dist(x, xi, &self.hyper.lengthscales).sqrt();
            ks.push(self.hyper.signal_var * matern(r));
            let c = -self.hyper.signal_var * matern_slope(r);
            dks.push(
                (0..d)
                    .map(|j| {
                        let l = self.hyper.lengthscales[j];
                        c * (x[j] - xi[j]) / (l * l)
                    })
                    .collect::<Vec<f64>>(),
            );
        }
        let mean_s: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.chol.cholesky_solve(&ks);
        let var_s = self.hyper.signal_var - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        let mut d_mean = vec![0.0; d];
        let mut d_var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                d_mean[j] += self.alpha[i] * dks[i][j];
                d_var[j] -= 2.0 * v[i] * dks[i][j];
            }
        }
        let sd_s = var_s.max(0.0).sqrt();
        let d_stddev = if sd_s > 1e-12 {
            d_var.iter().map(|g| self.y_scale * g / (2.0 * sd_s)).collect()
        } else {
            vec![0.0; d]
        };
        Prediction {
            mean: self.y_mean + self.y_scale * mean_s,
            stddev: self.y_scale * sd_s,
            d_mean: d_mean.iter().map(|g| self.y_scale * g).collect(),
            d_stddev,
        }
    }

    /// Joint posterior over `points`, in standardized units.
    pub(crate) fn joint_standardized(&self, points: &[&[f64]]) -> (Vec<f64>, Matrix) {
        let m = points.len();
        let cross: Vec<Vec<f64>> = points
            .iter()
            .map(|p| self.x.iter().map(|xi| self.hyper.kernel(p, xi)).collect())
            .collect();
        let mean = cross
            .iter()
            .map(|k| k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum())
            .collect();
        let w: Vec<Vec<f64>> = cross.iter().map(|k| self.chol.solve_lower(k)).collect();
        let cov = Matrix::from_fn(m, m, |a, b| {
            self.hyper.kernel(points[a], points[b])
                - w[a].iter().zip(&w[b]).map(|(p, q)| p * q).sum::<f64>()
        });
        (mean, cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_slope_matches_derivative() {
        for &r in &[0.1, 0.7, 2.0] {
            let h = 1e-6;
            let fd = (matern(r + h) - matern(r - h)) / (2.0 * h);
            assert!((fd + r * matern_slope(r)).abs() < 1e-8);
        }
        assert_eq!(matern(0.0), 1.0);
    }

    #[test]
    fn marginal_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3, 0);
        let x: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.uniform()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[2]).collect();
        let (_, _, ys) = standardize(&y);
        let hyper = GpHyper {
            lengthscales: vec![0.4, 0.9, 1.3],
            signal_var: 1.2,
            noise_var: 0.05,
        };
        let v = hyper.to_log();
        let (_, grad) = log_marginal(&x, &ys, &hyper).unwrap();
        for i in 0..v.len() {
            let h = 1e-6;
            let mut up = v.clone();
            let mut dn = v.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (log_marginal(&x, &ys, &GpHyper::from_log(&up)).unwrap().0
                - log_marginal(&x, &ys, &GpHyper::from_log(&dn)).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn prediction_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(4, 0);
        let x: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.uniform()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|p| p[0] - 2.0 * p[1] * p[1]).collect();
        let gp = gp_fit_fixed(
            &x,
            &y,
            GpHyper {
                lengthscales: vec![0.3, 0.5],
                signal_var: 1.0,
                noise_var: 1e-3,
            },
        )
        .unwrap();
        let at = [0.37, 0.61];
        let p = gp.predict_with_grad(&at);
        let (m, s) = gp.predict(&at);
        assert!((p.mean - m).abs() < 1e-12 && (p.stddev - s).abs() < 1e-10);
        for j in 0..2 {
            let h = 1e-6;
            let mut up = at;
            let mut dn = at;
            up[j] += h;
            dn[j] -= h;
            let (mu, su) = gp.predict(&up);
            let (md, sd) = gp.predict(&dn);
            assert!(((mu - md) / (2.0 * h) - p.d_mean[j]).abs() < 1e-6);
            assert!(((su - sd) / (2.0 * h) - p.d_stddev[j]).abs() < 1e-6);
        }
    }
}
