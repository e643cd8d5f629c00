use serde::{Deserialize, Serialize};

/// State of a gradient flow that can be combined linearly.
pub trait FlowState: Clone {
    /// `self += a·other`.
    fn axpy(&mut self, a: f64, other: &Self);
}

impl FlowState for Vec<f64> {
    fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.iter_mut().zip(other) {
            *x += a * y;
        }
    }
}

impl FlowState for Vec<Vec<f64>> {
    fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.iter_mut().zip(other) {
            x.axpy(a, y);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

/// Advance `state` by one step of size `h` in units of τ, given `f` returning
/// the velocity `τ·dS/dt`.
pub fn integrate_step<S, F>(integrator: Integrator, state: &S, h: f64, mut f: F) -> S
where
    S: FlowState,
    F: FnMut(&S) -> S,
{
    match integrator {
        Integrator::Euler => {
            let k1 = f(state);
            let mut next = state.clone();
            next.axpy(h, &k1);
            next
        }
        Integrator::Rk4 => {
            let k1 = f(state);
            let mut s = state.clone();
            s.axpy(h / 2.0, &k1);
            let k2 = f(&s);
            let mut s = state.clone();
            s.axpy(h / 2.0, &k2);
            let k3 = f(&s);
            let mut s = state.clone();
            s.axpy(h, &k3);
            let k4 = f(&s);
            let mut next = state.clone();
            next.axpy(h / 6.0, &k1);
            next.axpy(h / 3.0, &k2);
            next.axpy(h / 3.0, &k3);
            next.axpy(h / 6.0, &k4);
            next
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        // τ ẋ = −x, exact x(1) = e^{-1}
        let exact = (-1.0f64).exp();
        for (integ, tol) in [(Integrator::Euler, 2e-3), (Integrator::Rk4, 1e-12)] {
            let mut x = vec![1.0];
            for _ in 0..1000 {
                x = integrate_step(integ, &x, 1e-3, |s| vec![-s[0]]);
            }
            assert!((x[0] - exact).abs() < tol, "{integ:?}: {}", x[0]);
        }
    }
}
