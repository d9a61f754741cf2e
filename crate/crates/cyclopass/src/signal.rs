//! Input signals: truncated Fourier series per channel, plus constant and
//! custom forms. The Fourier family is the search space of the cycle
//! optimizers, so its coefficient layout is part of the public contract.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::DVector;

/// One scalar channel, `u(t) = c₀ + Σₖ aₖ cos(2πkt/T) + bₖ sin(2πkt/T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSignal {
    pub period: f64,
    pub offset: f64,
    pub cos_coeffs: Vec<f64>,
    pub sin_coeffs: Vec<f64>,
}

impl FourierSignal {
    pub fn constant(value: f64) -> Self {
        Self {
            period: 1.0,
            offset: value,
            cos_coeffs: Vec::new(),
            sin_coeffs: Vec::new(),
        }
    }

    /// Coefficient layout used by the optimizers: `[offset, a1, b1, a2, b2, …]`.
    pub fn from_flat(period: f64, coeffs: &[f64]) -> Self {
        let offset = coeffs.first().copied().unwrap_or(0.0);
        let harmonics = coeffs.len().saturating_sub(1) / 2;
        let mut cos_coeffs = Vec::with_capacity(harmonics);
        let mut sin_coeffs = Vec::with_capacity(harmonics);
        for k in 0..harmonics {
            cos_coeffs.push(coeffs[1 + 2 * k]);
            sin_coeffs.push(coeffs[2 + 2 * k]);
        }
        Self {
            period,
            offset,
            cos_coeffs,
            sin_coeffs,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut v = self.offset;
        let w = TAU / self.period;
        for (k, (&a, &b)) in self.cos_coeffs.iter().zip(&self.sin_coeffs).enumerate() {
            let phase = w * (k + 1) as f64 * t;
            v += a * phase.cos() + b * phase.sin();
        }
        v
    }
}

/// A vector-valued input signal of fixed width.
#[derive(Clone)]
pub enum Signal {
    Zero(usize),
    Constant(DVector<f64>),
    Fourier(Vec<FourierSignal>),
    Custom(usize, Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl Signal {
    pub fn dim(&self) -> usize {
        match self {
            Signal::Zero(m) => *m,
            Signal::Constant(v) => v.len(),
            Signal::Fourier(chs) => chs.len(),
            Signal::Custom(m, _) => *m,
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            Signal::Zero(m) => DVector::zeros(*m),
            Signal::Constant(v) => v.clone(),
            Signal::Fourier(chs) => {
                DVector::from_iterator(chs.len(), chs.iter().map(|c| c.eval(t)))
            }
            Signal::Custom(_, f) => f(t),
        }
    }

    pub fn custom(m: usize, f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Signal::Custom(m, Arc::new(f))
    }
}

impl std::fmt::Debug for Signal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Signal::Zero(m) => write!(f, "Signal::Zero({m})"),
            Signal::Constant(v) => write!(f, "Signal::Constant({v:?})"),
            Signal::Fourier(c) => write!(f, "Signal::Fourier({} channels)", c.len()),
            Signal::Custom(m, _) => write!(f, "Signal::Custom(dim {m})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flat_layout_roundtrip() {
        let s = FourierSignal::from_flat(2.0, &[0.5, 1.0, -1.0, 0.25, 0.0]);
        assert_eq!(s.offset, 0.5);
        assert_eq!(s.cos_coeffs, vec![1.0, 0.25]);
        assert_eq!(s.sin_coeffs, vec![-1.0, 0.0]);
        // value at t = 0: offset + sum of cosine coefficients
        assert_relative_eq!(s.eval(0.0), 0.5 + 1.0 + 0.25);
        // periodicity
        assert_relative_eq!(s.eval(0.3), s.eval(0.3 + 2.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_mean_harmonics_integrate_to_offset() {
        let s = FourierSignal::from_flat(1.0, &[0.2, 0.7, -0.3]);
        let n = 20_000;
        let dt = 1.0 / n as f64;
        let integral: f64 = (0..n).map(|i| s.eval((i as f64 + 0.5) * dt) * dt).sum();
        assert_relative_eq!(integral, 0.2, epsilon = 1e-10);
    }
}
