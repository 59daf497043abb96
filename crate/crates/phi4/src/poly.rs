//! Dense real polynomials in one variable.

use std::fmt;

/// Coefficients in ascending order: `c[i]` multiplies `x^i`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Poly {
    c: Vec<f64>,
}

impl Poly {
    pub fn new(mut c: Vec<f64>) -> Self {
        while c.last() == Some(&0.0) {
            c.pop();
        }
        Self { c }
    }

    pub fn zero() -> Self {
        Self { c: Vec::new() }
    }

    pub fn monomial(n: usize, a: f64) -> Self {
        let mut c = vec![0.0; n + 1];
        c[n] = a;
        Self::new(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Coefficient of `x^i` (zero past the degree).
    pub fn coeff(&self, i: usize) -> f64 {
        self.c.get(i).copied().unwrap_or(0.0)
    }

    /// Degree, with the zero polynomial reported as 0.
    pub fn degree(&self) -> usize {
        self.c.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.c.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    pub fn derivative(&self) -> Self {
        Self::new(self.c.iter().enumerate().skip(1).map(|(i, &a)| a * i as f64).collect())
    }

    pub fn nth_derivative(&self, k: usize) -> Self {
        (0..k).fold(self.clone(), |p, _| p.derivative())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.c.iter().map(|a| a * s).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.c.len().max(other.c.len());
        Self::new((0..n).map(|i| self.coeff(i) + other.coeff(i)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut c = vec![0.0; self.c.len() + other.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in other.c.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Self::new(c)
    }

    /// `x -> p(s x)`.
    pub fn rescale_arg(&self, s: f64) -> Self {
        Self::new(self.c.iter().enumerate().map(|(i, a)| a * s.powi(i as i32)).collect())
    }

    /// True when all odd coefficients vanish.
    pub fn is_even(&self) -> bool {
        self.c.iter().skip(1).step_by(2).all(|&a| a == 0.0)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.c.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, a) in self.c.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match i {
                0 => write!(f, "{a}")?,
                1 => write!(f, "{a} x")?,
                _ => write!(f, "{a} x^{i}")?,
            }
        }
        Ok(())
    }
}

/// `(2m - 1)!!` with `(-1)!! = 1`.
pub fn double_factorial_odd(m: usize) -> f64 {
    (1..=m).map(|i| (2 * i - 1) as f64).product()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `E X^p` for `X ~ N(0, nu)`.
pub fn gaussian_moment(p: usize, nu: f64) -> f64 {
    if p % 2 == 1 {
        0.0
    } else {
        double_factorial_odd(p / 2) * nu.powi((p / 2) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_and_eval() {
        let p = Poly::new(vec![1.0, 2.0, 0.0, 4.0]);
        assert_eq!(p.eval(2.0), 1.0 + 4.0 + 32.0);
        assert_eq!(p.derivative(), Poly::new(vec![2.0, 0.0, 12.0]));
        assert_eq!(p.nth_derivative(4), Poly::zero());
    }

    #[test]
    fn moments() {
        assert_eq!(gaussian_moment(4, 2.0), 12.0);
        assert_eq!(gaussian_moment(6, 1.0), 15.0);
        assert_eq!(gaussian_moment(3, 1.0), 0.0);
    }
}
