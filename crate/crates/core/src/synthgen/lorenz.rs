use crate::error::{Error, Result};

/// Lorenz-96 ring `dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F`,
/// integrated with classical RK4 at a fixed internal step and recorded
/// every `substeps` internal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Lorenz96 {
    pub forcing: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for Lorenz96 {
    fn default() -> Self {
        Self {
            forcing: 10.0,
            dt: 0.01,
            substeps: 5,
        }
    }
}

impl Lorenz96 {
    pub fn new(forcing: f64) -> Self {
        Self {
            forcing,
            ..Self::default()
        }
    }

    /// Time between recorded samples.
    pub fn sample_interval(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    /// Derivative with `frozen[i]` variables held fixed (zero derivative).
    pub fn derivative(&self, x: &[f64], frozen: Option<usize>, out: &mut [f64]) {
        let k = x.len();
        for i in 0..k {
            let ip1 = x[(i + 1) % k];
            let im1 = x[(i + k - 1) % k];
            let im2 = x[(i + k - 2) % k];
            out[i] = (ip1 - im2) * im1 - x[i] + self.forcing;
        }
        if let Some(f) = frozen {
            out[f] = 0.0;
        }
    }

    /// One RK4 step of length `self.dt`, in place.
    pub fn rk4_step(&self, x: &mut [f64], frozen: Option<usize>) {
        let k = x.len();
        let h = self.dt;
        let mut k1 = vec![0.0; k];
        let mut k2 = vec![0.0; k];
        let mut k3 = vec![0.0; k];
        let mut k4 = vec![0.0; k];
        let mut tmp = vec![0.0; k];
        self.derivative(x, frozen, &mut k1);
        for i in 0..k {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.derivative(&tmp, frozen, &mut k2);
        for i in 0..k {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.derivative(&tmp, frozen, &mut k3);
        for i in 0..k {
            tmp[i] = x[i] + h * k3[i];
        }
        self.derivative(&tmp, frozen, &mut k4);
        for i in 0..k {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// Advance `n` internal steps. `step_offset` is only used to report the
    /// global internal-step index on blowup.
    pub fn advance(
        &self,
        x: &mut [f64],
        n: usize,
        frozen: Option<usize>,
        step_offset: usize,
    ) -> Result<()> {
        for s in 0..n {
            self.rk4_step(x, frozen);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationBlowup {
                    step: step_offset + s + 1,
                });
            }
        }
        Ok(())
    }

    /// Record `n` samples starting from `x0` (the first record is taken
    /// after one sampling interval).
    pub fn trajectory(&self, x0: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
        let mut x = x0.to_vec();
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            self.advance(&mut x, self.substeps, None, r * self.substeps)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}
