use serde::{Deserialize, Serialize};

/// Scalar nonlinearity applied componentwise inside reservoirs and generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `1 / (1 + e^{-z}) - 1/2`
    ShiftedSigmoid,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::ShiftedSigmoid => logistic(z) - 0.5,
            Activation::Sigmoid => logistic(z),
        }
    }

    /// Derivative expressed through the activation value `y = eval(z)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::ShiftedSigmoid => {
                let s = y + 0.5;
                s * (1.0 - s)
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        self.derivative_from_output(self.eval(z))
    }

    /// Continuous, bounded, non-polynomial, injective and zero at the origin.
    pub fn satisfies_assumption1(self) -> bool {
        !matches!(self, Activation::Sigmoid)
    }

    /// Supremum of `|σ|`.
    pub fn bound(self) -> f64 {
        match self {
            Activation::Tanh | Activation::Sigmoid => 1.0,
            Activation::ShiftedSigmoid => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::ShiftedSigmoid => "shifted_sigmoid",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::RsigError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tanh" => Ok(Activation::Tanh),
            "shifted_sigmoid" => Ok(Activation::ShiftedSigmoid),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(crate::RsigError::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 3] = [Activation::Tanh, Activation::ShiftedSigmoid, Activation::Sigmoid];

    #[test]
    fn zero_at_origin_matches_compliance_flag() {
        for act in ALL {
            assert_eq!(act.eval(0.0) == 0.0, act.satisfies_assumption1(), "{act:?}");
        }
    }

    #[test]
    fn bounded_and_strictly_increasing() {
        for act in ALL {
            let mut prev = act.eval(-30.0);
            let mut z = -30.0;
            while z < 30.0 {
                z += 0.01;
                let y = act.eval(z);
                assert!(y.abs() <= act.bound());
                // saturates to machine precision far out, so only require non-decreasing there
                if z.abs() < 15.0 {
                    assert!(y > prev, "{act:?} not strictly increasing at {z}");
                } else {
                    assert!(y >= prev);
                }
                prev = y;
            }
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-6;
        for act in ALL {
            for &z in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
                let fd = (act.eval(z + h) - act.eval(z - h)) / (2.0 * h);
                assert!((fd - act.derivative(z)).abs() < 1e-8, "{act:?} at {z}");
            }
        }
    }

    #[test]
    fn parses_names() {
        for act in ALL {
            assert_eq!(act.name().parse::<Activation>().unwrap(), act);
        }
        assert!("relu".parse::<Activation>().is_err());
    }
}
