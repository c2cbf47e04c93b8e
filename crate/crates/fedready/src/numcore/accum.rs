//! Compensated summation.

/// Compensated summation accumulator (Kahan-Babuska/Neumaier variant,
/// which stays exact even when a term exceeds the running sum). Used
/// wherever a sum must not depend on accumulation noise, e.g. weighted
/// model averaging.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> KahanSum {
        KahanSum::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
