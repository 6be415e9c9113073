//! Sparse multivariate polynomials used as frame coefficient tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One monomial `coef * prod_k q_k^exps[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub exps: Vec<u32>,
}

/// A polynomial in a fixed number of variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Term>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.push(c, vec![0; nvars]);
        p
    }

    /// `c * q_k`.
    pub fn linear(nvars: usize, k: usize, c: f64) -> Self {
        let mut exps = vec![0; nvars];
        exps[k] = 1;
        let mut p = Polynomial::zero(nvars);
        p.push(c, exps);
        p
    }

    /// Builds a polynomial from `(coef, exponents)` pairs, merging repeated
    /// monomials.
    pub fn from_terms(nvars: usize, terms: &[(f64, Vec<u32>)]) -> Result<Self> {
        let mut p = Polynomial::zero(nvars);
        for (c, e) in terms {
            if e.len() != nvars {
                return Err(Error::input(format!(
                    "monomial has {} exponents, expected {nvars}",
                    e.len()
                )));
            }
            if !c.is_finite() {
                return Err(Error::input("non-finite polynomial coefficient"));
            }
            p.push(*c, e.clone());
        }
        Ok(p)
    }

    fn push(&mut self, coef: f64, exps: Vec<u32>) {
        if coef == 0.0 {
            return;
        }
        if let Some(t) = self.terms.iter_mut().find(|t| t.exps == exps) {
            t.coef += coef;
        } else {
            self.terms.push(Term { coef, exps });
        }
        self.terms.retain(|t| t.coef != 0.0);
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut p = self.clone();
        for t in &other.terms {
            p.push(t.coef, t.exps.clone());
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.exps.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.exps
                    .iter()
                    .zip(q)
                    .fold(t.coef, |acc, (&e, &x)| if e == 0 { acc } else { acc * x.powi(e as i32) })
            })
            .sum()
    }

    /// Partial derivative with respect to variable `k`.
    pub fn derivative(&self, k: usize) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for t in &self.terms {
            let e = t.exps[k];
            if e == 0 {
                continue;
            }
            let mut exps = t.exps.clone();
            exps[k] = e - 1;
            p.push(t.coef * e as f64, exps);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivative() {
        // p = 2 x^2 y - 3 z + 1
        let p = Polynomial::from_terms(
            3,
            &[(2.0, vec![2, 1, 0]), (-3.0, vec![0, 0, 1]), (1.0, vec![0, 0, 0])],
        )
        .unwrap();
        assert_eq!(p.eval(&[1.5, 2.0, 4.0]), 2.0 * 2.25 * 2.0 - 12.0 + 1.0);
        assert_eq!(p.degree(), 3);
        let px = p.derivative(0);
        assert_eq!(px.eval(&[1.5, 2.0, 4.0]), 4.0 * 1.5 * 2.0);
        let pz = p.derivative(2);
        assert_eq!(pz.eval(&[0.0, 0.0, 0.0]), -3.0);
        assert!(p.derivative(0).derivative(0).derivative(0).is_zero());
    }

    #[test]
    fn repeated_monomials_merge() {
        let p = Polynomial::from_terms(1, &[(1.0, vec![1]), (-1.0, vec![1])]).unwrap();
        assert!(p.is_zero());
        assert!(Polynomial::from_terms(2, &[(1.0, vec![1])]).is_err());
    }
}
