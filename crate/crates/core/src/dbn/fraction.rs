use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DbnError;

/// Reduced fraction `num/den` with `0 < num < den`, the probability carried
/// by a `Choice` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fraction {
    num: u32,
    den: u32,
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn digits(mut n: u32) -> u32 {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}

impl Fraction {
    /// Builds and reduces `num/den`. Fails unless the value lies strictly
    /// inside (0, 1).
    pub fn new(num: u32, den: u32) -> Result<Self, DbnError> {
        if num == 0 || den == 0 || num >= den {
            return Err(DbnError::InvalidProgram(format!(
                "choice probability {num}/{den} must lie strictly between 0 and 1"
            )));
        }
        let g = gcd(num, den);
        Ok(Fraction { num: num / g, den: den / g })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn value(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// `1 - self`.
    pub fn complement(self) -> Self {
        Fraction { num: self.den - self.num, den: self.den }
    }

    /// Decimal digits needed to write numerator and denominator.
    pub fn digit_cost(self) -> u32 {
        digits(self.num) + digits(self.den)
    }

    /// The grid `{k/den : 1 <= k < den}`, reduced and deduplicated, in
    /// increasing order of value.
    pub fn grid(den: u32) -> Vec<Fraction> {
        (1..den).filter_map(|k| Fraction::new(k, den).ok()).collect()
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = DbnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DbnError::InvalidProgram(format!("malformed fraction `{s}`"));
        let (n, d) = s.split_once('/').ok_or_else(bad)?;
        let n: u32 = n.trim().parse().map_err(|_| bad())?;
        let d: u32 = d.trim().parse().map_err(|_| bad())?;
        Fraction::new(n, d)
    }
}
