//! Truncated raised-cosine composite pulse.
//!
//! The transmit pulse-shaping filter and the receive matched filter combine
//! into a single raised-cosine response `g(t)`, truncated to `|t| <= L_p T`.
//! Every dictionary column and every simulated channel tap is a sample of
//! this one function.

use crate::error::{Error, Result};
use crate::scalar::RealScalar;
use num_traits::Float;

/// Parameters of the composite pulse `g(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseConfig<T> {
    /// Sampling period `T` in nanoseconds.
    pub sampling_period_ns: T,
    /// Roll-off factor, in `(0, 1]`.
    pub rolloff: T,
    /// Truncation half-length `L_p`: the pulse is nonzero on `|t| <= L_p T`.
    pub half_length_taps: u32,
}

impl<T: RealScalar> PulseConfig<T> {
    pub fn new(sampling_period_ns: T, rolloff: T, half_length_taps: u32) -> Result<Self> {
        if !(sampling_period_ns > T::zero()) {
            return Err(Error::InvalidConfig(
                "pulse sampling period must be positive".into(),
            ));
        }
        if !(rolloff > T::zero() && rolloff <= T::one()) {
            return Err(Error::InvalidConfig(
                "pulse roll-off must lie in (0, 1]".into(),
            ));
        }
        if half_length_taps == 0 {
            return Err(Error::InvalidConfig(
                "pulse half length must be at least one tap".into(),
            ));
        }
        Ok(Self {
            sampling_period_ns,
            rolloff,
            half_length_taps,
        })
    }

    /// Width of the nonzero support, `L_p T`, in nanoseconds.
    pub fn support_ns(&self) -> T {
        self.sampling_period_ns * T::from_u32(self.half_length_taps).unwrap()
    }
}

/// `sinc(x) = sin(pi x) / (pi x)`, with `sinc(0) = 1`.
pub fn sinc<T: RealScalar>(x: T) -> T {
    if x == T::zero() {
        T::one()
    } else {
        let px = T::PI() * x;
        Float::sin(px) / px
    }
}

/// Evaluates the truncated raised-cosine pulse at `t_ns`.
///
/// `g(t) = sinc(t/T) cos(pi beta t/T) / (1 - (2 beta t/T)^2)` inside the
/// window `|t| <= L_p T`, and exactly zero outside. The removable
/// singularity at `|t| = T/(2 beta)` is evaluated through its analytic
/// limit `(pi/4) sinc(1/(2 beta))` whenever `|2 beta |t|/T - 1| < 1e-9`.
pub fn eval_pulse<T: RealScalar>(t_ns: T, cfg: &PulseConfig<T>) -> T {
    let t = Float::abs(t_ns);
    if t > cfg.support_ns() {
        return T::zero();
    }
    let u = t / cfg.sampling_period_ns;
    let beta = cfg.rolloff;
    let two_beta_u = (T::one() + T::one()) * beta * u;
    if Float::abs(two_beta_u - T::one()) < T::from_f64_c(1e-9) {
        let quarter_pi = T::PI() / T::from_f64_c(4.0);
        return quarter_pi * sinc(T::one() / ((T::one() + T::one()) * beta));
    }
    let denom = T::one() - two_beta_u * two_beta_u;
    sinc(u) * Float::cos(T::PI() * beta * u) / denom
}
