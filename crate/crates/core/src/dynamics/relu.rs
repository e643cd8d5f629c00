//! Two-layer ReLU network without biases, trained by full-batch gradient
//! descent. Used as a nonlinear reference for the gated linear XoR solution.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::datasets::GatedDataset;
use crate::error::{Error, Result};
use crate::linalg::gaussian_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReluConfig {
    pub hidden: usize,
    /// Std of the Gaussian initial entries.
    pub sigma0: f64,
    pub tau: f64,
    pub step: f64,
    pub steps: usize,
    pub record_every: usize,
    pub seed: u64,
}

impl Default for ReluConfig {
    fn default() -> Self {
        ReluConfig {
            hidden: 128,
            sigma0: 2e-4,
            tau: 2.5,
            step: 0.05,
            steps: 2000,
            record_every: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNet {
    /// hidden × input
    pub w1: DMatrix<f64>,
    /// output × hidden
    pub w2: DMatrix<f64>,
}

impl ReluNet {
    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        let h = (&self.w1 * x).map(|z| z.max(0.0));
        &self.w2 * h
    }

    /// Initial strength of the pathway each example would use in a gated
    /// linear network: for example k with unit input direction v_k and the
    /// hidden units A_k it activates, c = W1_{A_k} v_k and w = W2_{A_k}ᵀ y_k
    /// (scalar output), and the growing mode has strength ‖(c + w)/2‖².
    /// Returns the mean over examples.
    pub fn effective_a0(&self, xs: &[DVector<f64>], ys: &[f64]) -> f64 {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let v = x / x.norm();
            let z = &self.w1 * x;
            let c = &self.w1 * &v;
            let mut s = 0.0;
            for i in 0..self.w1.nrows() {
                if z[i] > 0.0 {
                    let half = 0.5 * (c[i] + self.w2[(0, i)] * y.signum());
                    s += half * half;
                }
            }
            total += s;
        }
        total / xs.len() as f64
    }

    /// Fraction of the input-weight mass ‖w1_i‖² carried by hidden units
    /// whose weight vector lies within `max_angle` radians of one of the
    /// four diagonal directions (±1, ±1)/√2.
    pub fn diagonal_alignment(&self, max_angle: f64) -> f64 {
        let (mut near, mut total) = (0.0, 0.0);
        for i in 0..self.w1.nrows() {
            let r = self.w1.row(i);
            let n2 = r.norm_squared();
            total += n2;
            if n2 == 0.0 {
                continue;
            }
            let cos = (r[0].abs() + r[1].abs()) / (2.0 * n2).sqrt();
            if cos.min(1.0).acos() <= max_angle {
                near += n2;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            near / total
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReluOutcome {
    pub trajectory: Trajectory,
    pub initial: ReluNet,
    pub net: ReluNet,
}

/// Inputs and scalar targets of a single-output dataset, reading the first
/// clamped input node of each example.
pub fn scalar_task(dataset: &GatedDataset) -> Result<(Vec<DVector<f64>>, Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for ex in &dataset.examples {
        let x = ex
            .inputs
            .values()
            .next()
            .ok_or_else(|| Error::InvalidDataset("example without input".into()))?;
        let y = match ex.targets.values().next() {
            Some(y) if y.len() == 1 => y[0],
            _ => return Err(Error::InvalidDataset("reference network needs one scalar target".into())),
        };
        xs.push(x.clone());
        ys.push(y);
        ws.push(ex.weight);
    }
    Ok((xs, ys, ws))
}

pub fn relu_reference_train(dataset: &GatedDataset, config: &ReluConfig) -> Result<ReluOutcome> {
    if config.hidden < 4 {
        return Err(Error::InvalidConfig(format!("hidden width must be at least 4, got {}", config.hidden)));
    }
    if !(config.tau > 0.0 && config.step > 0.0) || config.record_every == 0 {
        return Err(Error::InvalidConfig("tau, step and record_every must be positive".into()));
    }
    let (xs, ys, ws) = scalar_task(dataset)?;
    let dim = xs[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = ReluNet {
        w1: gaussian_matrix(&mut rng, config.hidden, dim) * config.sigma0,
        w2: gaussian_matrix(&mut rng, 1, config.hidden) * config.sigma0,
    };
    let initial = net.clone();
    let h = config.step / config.tau;
    let mut traj = Trajectory {
        edge_labels: vec!["in->hidden".into(), "hidden->out".into()],
        ..Trajectory::default()
    };
    let mut first = f64::NAN;
    for step in 0..=config.steps {
        let mut loss = 0.0;
        let mut g1 = DMatrix::zeros(config.hidden, dim);
        let mut g2 = DMatrix::zeros(1, config.hidden);
        for ((x, &y), &w) in xs.iter().zip(&ys).zip(&ws) {
            let z = &net.w1 * x;
            let a = z.map(|v| v.max(0.0));
            let r = y - (&net.w2 * &a)[0];
            loss += 0.5 * w * r * r;
            g2 += a.transpose() * (w * r);
            for i in 0..config.hidden {
                if z[i] > 0.0 {
                    let c = w * r * net.w2[(0, i)];
                    for j in 0..dim {
                        g1[(i, j)] += c * x[j];
                    }
                }
            }
        }
        if step == 0 {
            first = loss;
        }
        if !loss.is_finite() || loss > 10.0 * first {
            return Err(Error::Diverged { step, loss, initial: first });
        }
        if step % config.record_every == 0 || step == config.steps {
            traj.times.push(step as f64 * config.step);
            traj.losses.push(loss);
        }
        if step == config.steps {
            break;
        }
        net.w1 += g1 * h;
        net.w2 += g2 * h;
    }
    Ok(ReluOutcome { trajectory: traj, initial, net })
}
