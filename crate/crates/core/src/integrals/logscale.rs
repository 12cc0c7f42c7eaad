/// A real number stored as `mantissa · exp(log_scale)`.
///
/// Products of `d` Gram entries leave the f64 range long before `d` reaches
/// the dimensions we train at; keeping the exponent separately lets ratios be
/// formed without ever materializing the raw value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogScaled {
    pub mantissa: f64,
    pub log_scale: f64,
}

const RENORM_HI: f64 = 1e100;
const RENORM_LO: f64 = 1e-100;

impl LogScaled {
    pub const ZERO: LogScaled = LogScaled {
        mantissa: 0.0,
        log_scale: 0.0,
    };
    pub const ONE: LogScaled = LogScaled {
        mantissa: 1.0,
        log_scale: 0.0,
    };

    pub fn new(mantissa: f64, log_scale: f64) -> Self {
        LogScaled { mantissa, log_scale }
    }

    pub fn from_value(v: f64) -> Self {
        LogScaled::new(v, 0.0)
    }

    /// The plain value; may overflow or underflow.
    pub fn value(&self) -> f64 {
        if self.mantissa == 0.0 {
            0.0
        } else {
            self.mantissa * self.log_scale.exp()
        }
    }

    /// `ln |value|`.
    pub fn ln_abs(&self) -> f64 {
        self.mantissa.abs().ln() + self.log_scale
    }

    pub fn is_finite(&self) -> bool {
        self.mantissa.is_finite() && self.log_scale.is_finite()
    }

    fn renormalize(mut self) -> Self {
        let a = self.mantissa.abs();
        if a != 0.0 && a.is_finite() && !(RENORM_LO..=RENORM_HI).contains(&a) {
            self.log_scale += a.ln();
            self.mantissa = self.mantissa.signum();
        }
        self
    }

    /// Multiplies by a plain factor.
    pub fn scale(self, c: f64) -> Self {
        LogScaled::new(self.mantissa * c, self.log_scale).renormalize()
    }

    /// `self / other` as a plain number.
    pub fn ratio(self, other: LogScaled) -> f64 {
        (self.mantissa / other.mantissa) * (self.log_scale - other.log_scale).exp()
    }

    /// Product of plain factors without intermediate overflow.
    pub fn product<I: IntoIterator<Item = f64>>(factors: I) -> Self {
        factors.into_iter().fold(LogScaled::ONE, |acc, v| acc.scale(v))
    }
}

impl std::ops::Mul for LogScaled {
    type Output = LogScaled;

    fn mul(self, other: LogScaled) -> Self {
        LogScaled::new(self.mantissa * other.mantissa, self.log_scale + other.log_scale).renormalize()
    }
}

impl std::ops::Add for LogScaled {
    type Output = LogScaled;

    fn add(self, other: LogScaled) -> Self {
        if other.mantissa == 0.0 {
            return self;
        }
        if self.mantissa == 0.0 {
            return other;
        }
        let (big, small) = if self.log_scale >= other.log_scale {
            (self, other)
        } else {
            (other, self)
        };
        let m = big.mantissa + small.mantissa * (small.log_scale - big.log_scale).exp();
        LogScaled::new(m, big.log_scale).renormalize()
    }
}

impl std::ops::Neg for LogScaled {
    type Output = LogScaled;

    fn neg(self) -> Self {
        LogScaled::new(-self.mantissa, self.log_scale)
    }
}

impl std::ops::Sub for LogScaled {
    type Output = LogScaled;

    fn sub(self, other: LogScaled) -> Self {
        self + -other
    }
}

impl std::iter::Sum for LogScaled {
    fn sum<I: Iterator<Item = LogScaled>>(iter: I) -> Self {
        iter.fold(LogScaled::ZERO, |a, b| a + b)
    }
}
