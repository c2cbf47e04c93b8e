//! Gamma and Dirichlet sampling for the non-IID partitioner.

use crate::error::{Error, Result};
use crate::numcore::rng::Rng;

/// A probability vector: entries are non-negative and sum to 1 within
/// 1e-9. Constructed only through [`SimplexVector::new`], so any value
/// of this type is already validated.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(values: Vec<f64>) -> Result<SimplexVector> {
        if values.is_empty() {
            return Err(Error::Domain("simplex vector cannot be empty".to_string()));
        }
        let mut sum = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "simplex entry {i} is {v}; entries must be finite and non-negative"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "simplex entries sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(SimplexVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One draw from Gamma(shape, 1) by the Marsaglia-Tsang squeeze method.
/// Shapes below 1 are boosted via Gamma(shape+1) * U^(1/shape).
pub fn gamma_sample(shape: f64, rng: &mut Rng) -> Result<f64> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(Error::Domain(format!(
            "gamma_sample requires shape > 0, got {shape}"
        )));
    }
    if shape < 1.0 {
        let boosted = gamma_sample(shape + 1.0, rng)?;
        let u = rng.next_f64_open();
        return Ok(boosted * u.powf(1.0 / shape));
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.next_f64_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return Ok(d * v);
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return Ok(d * v);
        }
    }
}

/// One draw from Dirichlet(concentrations) as normalized gamma variates.
pub fn dirichlet_sample(concentrations: &[f64], rng: &mut Rng) -> Result<SimplexVector> {
    if concentrations.is_empty() {
        return Err(Error::Domain(
            "dirichlet_sample requires at least one concentration".to_string(),
        ));
    }
    for (i, &a) in concentrations.iter().enumerate() {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Domain(format!(
                "dirichlet concentration {i} is {a}; must be finite and positive"
            )));
        }
    }
    // With tiny concentrations every gamma draw can underflow to zero;
    // retry rather than emit a non-simplex vector.
    for _ in 0..100 {
        let draws: Vec<f64> = concentrations
            .iter()
            .map(|&a| gamma_sample(a, rng))
            .collect::<Result<_>>()?;
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            let values: Vec<f64> = draws.iter().map(|&g| g / total).collect();
            return SimplexVector::new(values);
        }
    }
    Err(Error::Domain(format!(
        "dirichlet_sample: gamma draws underflowed repeatedly for concentrations {concentrations:?}"
    )))
}
