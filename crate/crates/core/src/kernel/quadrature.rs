use super::{KernelError, Result};
use std::f64::consts::PI;

/// Nodes and weights for integrals over `[0, 1/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub const DEFAULT_NODES: usize = 64;
    pub const LENGTH: f64 = 0.5;

    /// Gauss-Legendre rule with `n` nodes mapped onto `[0, 1/2]`.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(KernelError::InvalidQuadrature("zero nodes".into()));
        }
        let (x, w) = legendre_nodes(n);
        let half = Self::LENGTH / 2.0;
        let nodes = x.iter().map(|&xi| half * (xi + 1.0)).collect();
        let weights = w.iter().map(|&wi| half * wi).collect();
        Ok(Self { nodes, weights })
    }

    /// Build from explicit nodes and weights, checking the rule invariants.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(KernelError::InvalidQuadrature(
                "nodes and weights must be non-empty and of equal length".into(),
            ));
        }
        if nodes.iter().any(|&u| !(0.0..=Self::LENGTH).contains(&u)) {
            return Err(KernelError::InvalidQuadrature("node outside [0, 1/2]".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(KernelError::InvalidQuadrature("non-positive weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - Self::LENGTH).abs() > 1e-12 {
            return Err(KernelError::InvalidQuadrature(format!(
                "weights sum to {total}, expected 1/2"
            )));
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(u, w)| w * f(u)).sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre(Self::DEFAULT_NODES).expect("default rule")
    }
}

/// Roots of P_n on [-1, 1] via Newton from the Chebyshev-like initial guess.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_half() {
        for n in [1, 2, 5, 16, 64, 128] {
            let r = QuadratureRule::gauss_legendre(n).unwrap();
            assert_abs_diff_eq!(r.weights().iter().sum::<f64>(), 0.5, epsilon = 1e-14);
            assert!(r.nodes().iter().all(|&u| (0.0..=0.5).contains(&u)));
            assert!(r.nodes().windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn exact_for_polynomials() {
        // n nodes integrate degree 2n-1 exactly: int_0^{1/2} u^k du = 2^{-(k+1)}/(k+1)
        let r = QuadratureRule::gauss_legendre(4).unwrap();
        for k in 0..8 {
            let exact = 0.5f64.powi(k + 1) / (k + 1) as f64;
            assert_abs_diff_eq!(r.integrate(|u| u.powi(k)), exact, epsilon = 1e-15);
        }
    }

    #[test]
    fn exponential_integrand() {
        let r = QuadratureRule::default();
        let exact = ((3.0f64 * 0.5).exp() - 1.0) / 3.0;
        assert_abs_diff_eq!(r.integrate(|u| (3.0 * u).exp()), exact, epsilon = 1e-13);
    }

    #[test]
    fn explicit_rule_validation() {
        assert!(QuadratureRule::new(vec![0.25], vec![0.5]).is_ok());
        assert!(QuadratureRule::new(vec![0.25], vec![0.4]).is_err());
        assert!(QuadratureRule::new(vec![0.75], vec![0.5]).is_err());
        assert!(QuadratureRule::new(vec![], vec![]).is_err());
        assert!(QuadratureRule::gauss_legendre(0).is_err());
    }
}
