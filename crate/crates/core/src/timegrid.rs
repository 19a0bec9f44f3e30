//! Geometric time grid `I_0 = [0, 1]`, `I_ℓ = ((1+η)^(ℓ-1), (1+η)^ℓ]`.
//!
//! Discrete decisions (the interval count, eligibility) are made on exact
//! rationals. The `_f64` accessors are views for the LP and the estimators.

use std::ops::Range;

use num::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{self, Rational};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("eta must be positive (got {0})")]
    NonPositiveEta(String),
    #[error("time horizon must be nonnegative (got {0})")]
    NegativeHorizon(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalGrid {
    eta: Rational,
    horizon: Rational,
    /// `(1+η)^ℓ` for `ℓ = 0..=L`.
    powers: Vec<Rational>,
    powers_f64: Vec<f64>,
}

/// Smallest `L` with `(1+η)^L ≥ T + 1`, and the grid on `0..=L`.
pub fn build_grid(horizon: &Rational, eta: &Rational) -> Result<IntervalGrid, GridError> {
    if !eta.is_positive() {
        return Err(GridError::NonPositiveEta(rational::format_rational(eta)));
    }
    if horizon.is_negative() {
        return Err(GridError::NegativeHorizon(rational::format_rational(
            horizon,
        )));
    }
    let target = horizon + Rational::one();
    let base = Rational::one() + eta;
    let mut powers = vec![Rational::one()];
    while powers.last().unwrap() < &target {
        let next = powers.last().unwrap() * &base;
        powers.push(next);
    }
    Ok(IntervalGrid::from_powers(
        eta.clone(),
        horizon.clone(),
        powers,
    ))
}

impl IntervalGrid {
    fn from_powers(eta: Rational, horizon: Rational, powers: Vec<Rational>) -> Self {
        let powers_f64 = powers.iter().map(rational::to_f64).collect();
        IntervalGrid {
            eta,
            horizon,
            powers,
            powers_f64,
        }
    }

    /// The same grid continued for `extra` more intervals.
    pub fn extended(&self, extra: usize) -> IntervalGrid {
        let base = Rational::one() + &self.eta;
        let mut powers = self.powers.clone();
        for _ in 0..extra {
            let next = powers.last().unwrap() * &base;
            powers.push(next);
        }
        IntervalGrid::from_powers(self.eta.clone(), self.horizon.clone(), powers)
    }

    pub fn eta(&self) -> &Rational {
        &self.eta
    }

    pub fn horizon(&self) -> &Rational {
        &self.horizon
    }

    /// `L`; intervals are indexed `0..=L`.
    pub fn count(&self) -> usize {
        self.powers.len() - 1
    }

    pub fn intervals(&self) -> usize {
        self.powers.len()
    }

    pub fn left(&self, l: usize) -> Rational {
        if l == 0 {
            Rational::zero()
        } else {
            self.powers[l - 1].clone()
        }
    }

    pub fn right(&self, l: usize) -> Rational {
        self.powers[l].clone()
    }

    pub fn length(&self, l: usize) -> Rational {
        if l == 0 {
            Rational::one()
        } else {
            &self.powers[l] - &self.powers[l - 1]
        }
    }

    /// The value written `(1+η)^(ℓ-1)` in formulas, which is `1/2` at `ℓ = 0`.
    pub fn notational_left(&self, l: usize) -> Rational {
        if l == 0 {
            rational::half()
        } else {
            self.powers[l - 1].clone()
        }
    }

    /// True left endpoint; the list-scheduling priority of a flow placed in `I_ℓ`.
    pub fn priority_stamp(&self, l: usize) -> Rational {
        self.left(l)
    }

    pub fn left_f64(&self, l: usize) -> f64 {
        if l == 0 {
            0.0
        } else {
            self.powers_f64[l - 1]
        }
    }

    pub fn right_f64(&self, l: usize) -> f64 {
        self.powers_f64[l]
    }

    pub fn length_f64(&self, l: usize) -> f64 {
        if l == 0 {
            1.0
        } else {
            self.powers_f64[l] - self.powers_f64[l - 1]
        }
    }

    pub fn notational_left_f64(&self, l: usize) -> f64 {
        if l == 0 {
            0.5
        } else {
            self.powers_f64[l - 1]
        }
    }

    /// `{ℓ : notational_left(ℓ) ≥ r}`. Notational lefts increase with `ℓ`, so
    /// this is always a suffix `first..L+1` (possibly empty).
    pub fn eligible_intervals(&self, release: &Rational) -> Range<usize> {
        let end = self.intervals();
        let first = (0..end)
            .find(|&l| &self.notational_left(l) >= release)
            .unwrap_or(end);
        first..end
    }

    pub fn is_eligible(&self, l: usize, release: &Rational) -> bool {
        l < self.intervals() && &self.notational_left(l) >= release
    }
}
