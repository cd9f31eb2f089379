//! Tolerance policy shared across the crate.
//!
//! Structural checks (POVM completeness, SIC overlaps, CPTP, unbiasedness)
//! use `structural`; comparisons between probabilities use `probability`.
//! Negative table entries above `-probability` are treated as floating-point
//! dust and clamped; anything below is a hard error.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub structural: f64,
    pub probability: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            structural: 1e-10,
            probability: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn with_probability(mut self, probability: f64) -> Self {
        self.probability = probability;
        self
    }
}
