//! Reduced dynamics of the routing family, where symmetry leaves only an
//! input (B1), hidden (B2) and output (B3) strength per mode.

use crate::datasets::HierarchyData;
use crate::dynamics::{integrate_step, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::svd;

/// Mode strengths of the base task: S and D per mode and ⟨‖y‖²⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingSpectrum {
    pub s: Vec<f64>,
    pub d: Vec<f64>,
    pub energy: f64,
}

impl RoutingSpectrum {
    pub fn modes(&self) -> usize {
        self.s.len()
    }

    /// Loss of a routing-family network whose every trained route has
    /// mode strengths `b`.
    pub fn loss(&self, b: &[f64]) -> f64 {
        0.5 * self.energy
            - self
                .s
                .iter()
                .zip(&self.d)
                .zip(b)
                .map(|((s, d), b)| s * b - 0.5 * d * b * b)
                .sum::<f64>()
    }

    fn check(&self, init: &[&Vec<f64>]) -> Result<()> {
        if self.s.len() != self.d.len() || init.iter().any(|b| b.len() != self.s.len()) {
            return Err(Error::DimensionMismatch(format!("expected {} modes", self.s.len())));
        }
        Ok(())
    }
}

pub fn routing_spectrum(base: &HierarchyData) -> RoutingSpectrum {
    let dec = svd(&base.sigma_yx());
    let sx = base.sigma_x();
    let d = (0..dec.s.len())
        .map(|i| (dec.v.column(i).transpose() * &sx * dec.v.column(i))[0])
        .collect();
    RoutingSpectrum { s: dec.s, d, energy: base.target_energy() }
}

fn new_trajectory(labels: &[&str], conserved: usize, prefix: &str) -> Trajectory {
    Trajectory {
        edge_labels: labels.iter().map(|s| s.to_string()).collect(),
        conserved_labels: (0..conserved).map(|i| format!("{prefix}:mode{i}")).collect(),
        ..Trajectory::default()
    }
}

fn run<F, R>(config: &SimConfig, init: Vec<Vec<f64>>, traj: &mut Trajectory, mut velocity: F, mut report: R) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&Vec<Vec<f64>>) -> Vec<Vec<f64>>,
    R: FnMut(&Vec<Vec<f64>>) -> (f64, Vec<Vec<f64>>, Vec<f64>),
{
    config.validate()?;
    let h = config.step_ratio();
    let mut state = init;
    for step in 0..=config.steps {
        if step % config.record_every == 0 || step == config.steps {
            let (loss, series, conserved) = report(&state);
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss, initial: traj.losses.first().copied().unwrap_or(f64::NAN) });
            }
            traj.times.push(step as f64 * config.step);
            traj.losses.push(loss);
            traj.singular_values.push(series);
            traj.conserved.push(conserved);
        }
        if step == config.steps {
            break;
        }
        state = integrate_step(config.integrator, &state, h, &mut velocity);
    }
    Ok(state)
}

fn transpose(series: &[&Vec<f64>]) -> Vec<Vec<f64>> {
    series.iter().map(|v| v.to_vec()).collect()
}

/// `τḂ1 = (1/M)B3B2[S − B3B2B1D]`, `τḂ2 = B3B1[…]`, `τḂ3 = (1/M)B2B1[…]`
/// per mode, for M domains with K trained outputs each. The series are
/// recorded as edges `B1`, `B2`, `B3`; the conserved columns hold
/// `M·B1² − B2²`.
pub fn routing_reduced_train(
    spec: &RoutingSpectrum,
    m: usize,
    k: usize,
    init: [Vec<f64>; 3],
    config: &SimConfig,
    balanced: bool,
) -> Result<Trajectory> {
    if k == 0 || k > m {
        return Err(Error::InvalidK { m, k });
    }
    spec.check(&[&init[0], &init[1], &init[2]])?;
    if balanced && init[0] != init[2] {
        return Err(Error::InvalidConfig("balanced mode needs B1(0) = B3(0)".into()));
    }
    let mf = m as f64;
    let r = spec.modes();
    let mut traj = new_trajectory(&["B1", "B2", "B3"], r, "C");
    run(
        config,
        init.to_vec(),
        &mut traj,
        |b| {
            let mut v = vec![vec![0.0; r]; 3];
            for i in 0..r {
                let (b1, b2, b3) = (b[0][i], b[1][i], b[2][i]);
                let err = spec.s[i] - b3 * b2 * b1 * spec.d[i];
                v[0][i] = b3 * b2 * err / mf;
                v[1][i] = b3 * b1 * err;
                v[2][i] = b2 * b1 * err / mf;
            }
            v
        },
        |b| {
            let prod: Vec<f64> = (0..r).map(|i| b[0][i] * b[1][i] * b[2][i]).collect();
            let c = (0..r).map(|i| mf * b[0][i] * b[0][i] - b[1][i] * b[1][i]).collect();
            (spec.loss(&prod), transpose(&[&b[0], &b[1], &b[2]]), c)
        },
    )?;
    Ok(traj)
}

/// One scalar per mode: `τḂ2 = (1/M)(B2²+C)[S − (1/M)B2(B2²+C)D]`, with
/// `C = M·B1(0)² − B2(0)²` and balanced outer layers. Records `B1`
/// (recovered as `√((B2²+C)/M)`) and `B2`.
pub fn scalar_routing_ode(
    spec: &RoutingSpectrum,
    m: usize,
    c: &[f64],
    b2_init: &[f64],
    config: &SimConfig,
) -> Result<Trajectory> {
    let c = c.to_vec();
    let b2 = b2_init.to_vec();
    spec.check(&[&c, &b2])?;
    let mf = m as f64;
    let r = spec.modes();
    let mut traj = new_trajectory(&["B1", "B2"], r, "C");
    run(
        config,
        vec![b2],
        &mut traj,
        |b| {
            vec![(0..r)
                .map(|i| {
                    let g = b[0][i] * b[0][i] + c[i];
                    g / mf * (spec.s[i] - b[0][i] * g * spec.d[i] / mf)
                })
                .collect()]
        },
        |b| {
            let b2 = &b[0];
            let b1: Vec<f64> = (0..r).map(|i| ((b2[i] * b2[i] + c[i]) / mf).max(0.0).sqrt()).collect();
            let prod: Vec<f64> = (0..r).map(|i| b2[i] * (b2[i] * b2[i] + c[i]) / mf).collect();
            (spec.loss(&prod), vec![b1, b2.clone()], c.clone())
        },
    )?;
    Ok(traj)
}

/// Pathway race with P routes per hidden block out of M² routes:
/// `τḂ1 = (√P/M²)B2B1[S − B2B1²D]`, `τḂ2 = (P/M²)B1²[S − B2B1²D]`.
/// Conserved columns hold `√P·B1² − B2²`.
pub fn race_reduced_train(
    spec: &RoutingSpectrum,
    m: usize,
    p: usize,
    init: [Vec<f64>; 2],
    config: &SimConfig,
) -> Result<Trajectory> {
    if p == 0 || p > m * m {
        return Err(Error::InvalidP { m, p });
    }
    spec.check(&[&init[0], &init[1]])?;
    let m2 = (m * m) as f64;
    let pf = p as f64;
    let sp = pf.sqrt();
    let r = spec.modes();
    let mut traj = new_trajectory(&["B1", "B2"], r, "C");
    run(
        config,
        init.to_vec(),
        &mut traj,
        |b| {
            let mut v = vec![vec![0.0; r]; 2];
            for i in 0..r {
                let (b1, b2) = (b[0][i], b[1][i]);
                let err = spec.s[i] - b2 * b1 * b1 * spec.d[i];
                v[0][i] = sp / m2 * b2 * b1 * err;
                v[1][i] = pf / m2 * b1 * b1 * err;
            }
            v
        },
        |b| {
            let prod: Vec<f64> = (0..r).map(|i| b[0][i] * b[0][i] * b[1][i]).collect();
            let c = (0..r).map(|i| sp * b[0][i] * b[0][i] - b[1][i] * b[1][i]).collect();
            (spec.loss(&prod), transpose(&[&b[0], &b[1]]), c)
        },
    )?;
    Ok(traj)
}

/// Late-time ratio B2/B1 of the race with P routes per block: `P^{1/4}`;
/// the fully shared routing network (P = M²) gives √M.
pub fn steady_state_ratio(_m: usize, p: usize) -> f64 {
    (p as f64).powf(0.25)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservedReport {
    /// `[record][mode]` values of `M·B1² − B2²`.
    pub series: Vec<Vec<f64>>,
    /// Largest `|C(t) − C(0)| / |C(0)|` over records and modes.
    pub max_relative_drift: f64,
}

/// `M·B1² − B2²` along a routing-family trajectory whose first two edge
/// series are B1 and B2.
pub fn conserved_quantity(traj: &Trajectory, m: usize) -> ConservedReport {
    let mf = m as f64;
    let series: Vec<Vec<f64>> = traj
        .singular_values
        .iter()
        .map(|rec| rec[0].iter().zip(&rec[1]).map(|(b1, b2)| mf * b1 * b1 - b2 * b2).collect())
        .collect();
    let mut drift: f64 = 0.0;
    if let Some(first) = series.first() {
        for rec in &series {
            for (c, c0) in rec.iter().zip(first) {
                drift = drift.max((c - c0).abs() / c0.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    ConservedReport { series, max_relative_drift: drift }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_hierarchy_dataset;
    use crate::dynamics::Integrator;

    fn spectrum() -> RoutingSpectrum {
        routing_spectrum(&make_hierarchy_dataset())
    }

    #[test]
    fn spectrum_of_hierarchy() {
        let sp = spectrum();
        assert!((sp.s[0] - 7f64.sqrt() / 4.0).abs() < 1e-12);
        assert!(sp.d.iter().all(|d| (d - 0.25).abs() < 1e-12));
        assert!((sp.energy - 3.0).abs() < 1e-12);
        // zero strengths leave the loss at half the energy; the optimum
        // b = S/D leaves the part of the energy the inputs cannot explain
        assert_eq!(sp.loss(&[0.0; 4]), 1.5);
        let opt: Vec<f64> = sp.s.iter().zip(&sp.d).map(|(s, d)| s / d).collect();
        assert!(sp.loss(&opt).abs() < 1e-12);
    }

    #[test]
    fn balanced_start_stays_balanced_and_conserves() {
        let sp = spectrum();
        let b = vec![0.2; 4];
        let cfg = SimConfig { step: 1e-3, steps: 10_000, record_every: 100, integrator: Integrator::Rk4, ..SimConfig::default() };
        let t = routing_reduced_train(&sp, 7, 4, [b.clone(), b.clone(), b.clone()], &cfg, true).unwrap();
        for rec in &t.singular_values {
            for i in 0..4 {
                assert!((rec[0][i] - rec[2][i]).abs() <= 1e-12);
            }
        }
        let c = conserved_quantity(&t, 7);
        assert!((c.series[0][0] - 0.24).abs() < 1e-15);
        assert!(c.max_relative_drift <= 1e-6, "{}", c.max_relative_drift);
        assert!(matches!(
            routing_reduced_train(&sp, 7, 4, [b.clone(), b.clone(), vec![0.3; 4]], &cfg, true),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(routing_reduced_train(&sp, 7, 8, [b.clone(), b.clone(), b], &cfg, false), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn euler_drift_is_first_order() {
        let sp = spectrum();
        let b = vec![0.2; 4];
        let drift = |h: f64| {
            let cfg = SimConfig { step: h, steps: (10.0 / h) as usize, record_every: 100, ..SimConfig::default() };
            let t = routing_reduced_train(&sp, 7, 4, [b.clone(), b.clone(), b.clone()], &cfg, true).unwrap();
            conserved_quantity(&t, 7).max_relative_drift
        };
        let (d1, d2) = (drift(2e-3), drift(1e-3));
        assert!((d1 / d2 - 2.0).abs() < 0.1, "{d1} {d2}");
    }

    #[test]
    fn fixed_point_has_zero_velocity() {
        let sp = spectrum();
        // B1 = B3 = 1, B2 = S/D
        let b2: Vec<f64> = sp.s.iter().zip(&sp.d).map(|(s, d)| s / d).collect();
        let cfg = SimConfig { step: 0.1, steps: 10, record_every: 1, ..SimConfig::default() };
        let t = routing_reduced_train(&sp, 5, 2, [vec![1.0; 4], b2.clone(), vec![1.0; 4]], &cfg, true).unwrap();
        for rec in &t.singular_values {
            assert_eq!(rec[1], b2);
        }
    }

    #[test]
    fn scalar_ode_matches_three_variable_system() {
        let sp = spectrum();
        let m = 7;
        let b0 = 0.2;
        let cfg = SimConfig { step: 1e-2, steps: 3000, record_every: 50, integrator: Integrator::Rk4, ..SimConfig::default() };
        let full = routing_reduced_train(&sp, m, 4, [vec![b0; 4], vec![b0; 4], vec![b0; 4]], &cfg, true).unwrap();
        let c = vec![m as f64 * b0 * b0 - b0 * b0; 4];
        let scalar = scalar_routing_ode(&sp, m, &c, &[b0; 4], &cfg).unwrap();
        let mut dev: f64 = 0.0;
        for (a, b) in full.singular_values.iter().zip(&scalar.singular_values) {
            for i in 0..4 {
                dev = dev.max((a[1][i] - b[1][i]).abs()).max((a[0][i] - b[0][i]).abs());
            }
        }
        assert!(dev <= 1e-8, "{dev}");
        assert!(full.max_loss_gap(&scalar) <= 1e-8);
    }

    #[test]
    fn race_with_full_sharing_is_the_routing_system() {
        let sp = spectrum();
        let m = 5;
        let cfg = SimConfig { step: 1e-2, steps: 500, record_every: 50, ..SimConfig::default() };
        let b = vec![0.2; 4];
        let race = race_reduced_train(&sp, m, m * m, [b.clone(), b.clone()], &cfg).unwrap();
        let routing = routing_reduced_train(&sp, m, m, [b.clone(), b.clone(), b], &cfg, true).unwrap();
        for (a, c) in race.singular_values.iter().zip(&routing.singular_values) {
            for i in 0..4 {
                assert!((a[0][i] - c[0][i]).abs() < 1e-13 && (a[1][i] - c[1][i]).abs() < 1e-13);
            }
        }
        assert!(matches!(race_reduced_train(&sp, 3, 0, [vec![0.2; 4], vec![0.2; 4]], &cfg), Err(Error::InvalidP { .. })));
    }

    #[test]
    fn ratio_values() {
        assert_eq!(steady_state_ratio(10, 1), 1.0);
        assert!((steady_state_ratio(7, 49) - 7f64.sqrt()).abs() < 1e-15);
        assert!((steady_state_ratio(10, 16) - 2.0).abs() < 1e-15);
    }
}
