//! Fixed-step classic fourth-order Runge-Kutta integration.

use super::DataError;

/// A simulated trajectory: `states[i]` is the system state at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integrate `deriv` from `(t0, state0)` over `n_steps` steps of size `step`.
///
/// The trajectory includes the initial state, so it has `n_steps + 1` points.
/// A non-finite state component aborts with the time of failure.
pub fn rk4<F>(deriv: F, t0: f64, state0: &[f64], step: f64, n_steps: usize) -> Result<Trajectory, DataError>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    assert!(step > 0.0, "step must be positive");
    let dim = state0.len();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut t = t0;
    let mut s = state0.to_vec();
    times.push(t);
    states.push(s.clone());

    let mut probe = vec![0.0; dim];
    for i in 0..n_steps {
        let k1 = deriv(t, &s);
        for j in 0..dim {
            probe[j] = s[j] + 0.5 * step * k1[j];
        }
        let k2 = deriv(t + 0.5 * step, &probe);
        for j in 0..dim {
            probe[j] = s[j] + 0.5 * step * k2[j];
        }
        let k3 = deriv(t + 0.5 * step, &probe);
        for j in 0..dim {
            probe[j] = s[j] + step * k3[j];
        }
        let k4 = deriv(t + step, &probe);
        for j in 0..dim {
            s[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        t = t0 + (i + 1) as f64 * step;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Generation {
                time: t,
                message: "state became non-finite".to_string(),
            });
        }
        times.push(t);
        states.push(s.clone());
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_exponential_decay() {
        // dy/dt = -y, y(0) = 1 → y(t) = exp(-t)
        let traj = rk4(|_, s| vec![-s[0]], 0.0, &[1.0], 0.01, 500).unwrap();
        let y_end = traj.states.last().unwrap()[0];
        assert!((y_end - (-5.0f64).exp()).abs() < 1e-9);
        assert_eq!(traj.len(), 501);
    }

    #[test]
    fn fourth_order_convergence() {
        // halving the step should shrink the endpoint error by ~16x
        let exact = (-2.0f64).exp();
        let err = |h: f64| {
            let n = (2.0 / h).round() as usize;
            let t = rk4(|_, s| vec![-s[0]], 0.0, &[1.0], h, n).unwrap();
            (t.states.last().unwrap()[0] - exact).abs()
        };
        let e1 = err(0.1);
        let e2 = err(0.05);
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn blow_up_reports_time() {
        // dy/dt = y^2, y(0)=1 blows up at t=1
        let err = rk4(|_, s| vec![s[0] * s[0]], 0.0, &[1.0], 0.01, 200).unwrap_err();
        match err {
            DataError::Generation { time, .. } => assert!(time > 0.9 && time <= 2.0),
            other => panic!("expected generation error, got {other:?}"),
        }
    }
}
