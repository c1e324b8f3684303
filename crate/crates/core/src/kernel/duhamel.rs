//! Operator Duhamel factorisation of `exp(A + B)` around `exp(A)`.
//!
//! `exp(A + B) = L exp(A) R` with
//! `L = 1 + int_0^{1/2} exp(u(A+B)) B exp(-uA) du` and
//! `R = 1 + int_0^{1/2} exp(-uA) B exp(u(A+B)) du`.
//! Dropping the `B` inside the exponentials gives the first-order factors.

use super::{c, hermitian_eig, identity, validate, CMatrix, KernelError, QuadratureRule, Result};

#[derive(Debug, Clone)]
pub struct DuhamelFactors {
    pub left: CMatrix,
    pub right: CMatrix,
}

impl DuhamelFactors {
    /// `L exp(A) R`.
    pub fn recombine(&self, a: &CMatrix) -> Result<CMatrix> {
        let ea = super::hermitian_exp(a)?;
        Ok(&self.left * ea * &self.right)
    }
}

fn check_pair(a: &CMatrix, b: &CMatrix) -> Result<()> {
    validate(a)?;
    validate(b)?;
    if a.nrows() != b.nrows() {
        return Err(KernelError::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.nrows(),
            b.nrows(),
            b.nrows()
        )));
    }
    Ok(())
}

pub fn duhamel_factors(a: &CMatrix, b: &CMatrix, rule: &QuadratureRule) -> Result<DuhamelFactors> {
    check_pair(a, b)?;
    let n = a.nrows();
    let spec_a = hermitian_eig(a)?;
    let spec_ab = hermitian_eig(&(a + b))?;
    let mut left = identity(n);
    let mut right = identity(n);
    for (u, w) in rule.iter() {
        let e_ab = spec_ab.apply(|l| c((u * l).exp()));
        let e_a_neg = spec_a.apply(|l| c((-u * l).exp()));
        left += &e_ab * b * &e_a_neg * c(w);
        right += &e_a_neg * b * &e_ab * c(w);
    }
    Ok(DuhamelFactors { left, right })
}

pub fn first_order_duhamel(a: &CMatrix, b: &CMatrix, rule: &QuadratureRule) -> Result<DuhamelFactors> {
    check_pair(a, b)?;
    let n = a.nrows();
    let spec = hermitian_eig(a)?;
    let v = &spec.eigenvectors;
    let b_eig = v.adjoint() * b * v;
    let lambdas = &spec.eigenvalues;
    // in the eigenbasis of A: (e^{uA} B e^{-uA})_{mn} = B_{mn} e^{u(l_m - l_n)}
    let mut l_eig = CMatrix::zeros(n, n);
    let mut r_eig = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let gap = lambdas[i] - lambdas[j];
            let fwd = rule.integrate(|u| (u * gap).exp());
            let bwd = rule.integrate(|u| (-u * gap).exp());
            l_eig[(i, j)] = b_eig[(i, j)] * fwd;
            r_eig[(i, j)] = b_eig[(i, j)] * bwd;
        }
    }
    Ok(DuhamelFactors {
        left: identity(n) + v * l_eig * v.adjoint(),
        right: identity(n) + v * r_eig * v.adjoint(),
    })
}
