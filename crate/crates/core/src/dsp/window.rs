use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    None,
}

impl WindowKind {
    /// Periodic (DFT-even) coefficients of length `n`.
    pub fn coefficients<T: Scalar>(self, n: usize) -> Vec<T> {
        match self {
            WindowKind::None => vec![T::one(); n],
            WindowKind::Hann => (0..n)
                .map(|i| {
                    T::of(0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                })
                .collect(),
        }
    }

    pub fn parse(s: &str) -> Option<WindowKind> {
        match s {
            "hann" => Some(WindowKind::Hann),
            "none" => Some(WindowKind::None),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_shape() {
        let w: Vec<f64> = WindowKind::Hann.coefficients(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!((w[1] - w[7]).abs() < 1e-15);
        let ones: Vec<f32> = WindowKind::None.coefficients(4);
        assert_eq!(ones, vec![1.0; 4]);
    }
}
