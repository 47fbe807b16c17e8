//! Ground-truth multipath channels and noisy partial-band CSI measurements.
//!
//! Pure functions over explicit RNG streams: a trial hands one independent
//! stream to `sample_channel` and `add_noise`, which makes every simulated
//! measurement reproducible from (seed, trial index) alone.

use nalgebra::DVector;
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pulse::{eval_pulse, PulseConfig};
use crate::scalar::RealScalar;
use crate::sensing::{DelayGrid, SubcarrierMask};
use crate::Cplx;

/// One realization of the physical channel: `L` paths with delays `tau_l`
/// and complex amplitudes `alpha_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthChannel<T> {
    pub delays_ns: Vec<T>,
    pub amplitudes: Vec<Cplx<T>>,
}

impl<T: RealScalar> GroundTruthChannel<T> {
    pub fn new(delays_ns: Vec<T>, amplitudes: Vec<Cplx<T>>) -> Result<Self> {
        if delays_ns.is_empty() {
            return Err(Error::InvalidConfig("channel needs at least one path".into()));
        }
        if delays_ns.len() != amplitudes.len() {
            return Err(Error::DimensionMismatch {
                context: "ground-truth channel",
                expected: delays_ns.len(),
                actual: amplitudes.len(),
            });
        }
        if delays_ns[0] < T::zero() {
            return Err(Error::InvalidConfig("path delays must be nonnegative".into()));
        }
        if !delays_ns.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "path delays must be strictly increasing".into(),
            ));
        }
        if amplitudes.iter().any(|a| a.norm_sqr() == T::zero()) {
            return Err(Error::InvalidConfig("path amplitudes must be nonzero".into()));
        }
        Ok(Self {
            delays_ns,
            amplitudes,
        })
    }

    pub fn num_paths(&self) -> usize {
        self.delays_ns.len()
    }

    /// Checks that every delay is representable on the companion grid.
    pub fn check_within_grid(&self, grid: &DelayGrid<T>) -> Result<()> {
        let max = grid.max_delay_ns();
        if self.delays_ns.iter().any(|&d| d > max) {
            return Err(Error::InvalidConfig(format!(
                "path delay exceeds grid maximum {max}"
            )));
        }
        Ok(())
    }
}

/// Statistical description the Monte-Carlo trials draw channels from.
///
/// Path magnitudes are deterministic: the first path carries
/// `snr_db` of power over the noise variance and each subsequent path is
/// `per_path_decay_db` weaker. Only the phases are random, i.i.d. uniform
/// on `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProfile<T> {
    pub delays_ns: Vec<T>,
    pub snr_db: T,
    pub per_path_decay_db: T,
}

/// A simulated measurement: noisy CSI on the used subcarriers plus the
/// noise-free side channel only the simulator can provide.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMeasurement<T: RealScalar> {
    pub y: DVector<Cplx<T>>,
    pub y_clean: DVector<Cplx<T>>,
    pub mask: SubcarrierMask,
    pub noise_variance: T,
}

/// Draws one channel realization from the profile.
///
/// `|alpha_0|^2 = 10^(snr_db/10) * noise_variance` and each later path is
/// `per_path_decay_db` weaker; phases are sampled uniformly, one draw per
/// path in delay order. Phase draws happen in `f64` so that all scalar
/// instantiations see the same realizations.
pub fn sample_channel<T: RealScalar, R: Rng + ?Sized>(
    profile: &ChannelProfile<T>,
    noise_variance: T,
    rng: &mut R,
) -> Result<GroundTruthChannel<T>> {
    if profile.delays_ns.is_empty() {
        return Err(Error::InvalidConfig("channel profile has no paths".into()));
    }
    if !(noise_variance > T::zero()) {
        return Err(Error::InvalidConfig(
            "noise variance must be positive to define SNR".into(),
        ));
    }
    let ten = T::from_f64_c(10.0);
    let first_power = Float::powf(ten, profile.snr_db / ten) * noise_variance;
    let amplitudes = profile
        .delays_ns
        .iter()
        .enumerate()
        .map(|(l, _)| {
            let drop_db = profile.per_path_decay_db * T::from_usize(l).unwrap();
            let power = first_power * Float::powf(ten, -drop_db / ten);
            let magnitude = Float::sqrt(power);
            let phase = T::from_f64_c(rng.gen::<f64>() * 2.0 * std::f64::consts::PI);
            Cplx::from_polar(magnitude, phase)
        })
        .collect();
    GroundTruthChannel::new(profile.delays_ns.clone(), amplitudes)
}

/// Samples the pulse-shaped composite channel: `h_n = sum_l alpha_l g(nT - tau_l)`.
pub fn synthesize_cir<T: RealScalar>(
    gt: &GroundTruthChannel<T>,
    pulse: &PulseConfig<T>,
    cir_length: usize,
) -> DVector<Cplx<T>> {
    let t = pulse.sampling_period_ns;
    DVector::from_fn(cir_length, |n, _| {
        let tn = T::from_usize(n).unwrap() * t;
        let mut acc = Cplx::new(T::zero(), T::zero());
        for (tau, alpha) in gt.delays_ns.iter().zip(&gt.amplitudes) {
            acc += alpha * eval_pulse(tn - *tau, pulse);
        }
        acc
    })
}

/// Maps a CIR to CSI on the used subcarriers:
/// `y[r] = sum_n h_n exp(-j 2 pi I[r] n / K)`.
pub fn synthesize_csi<T: RealScalar>(
    cir: &DVector<Cplx<T>>,
    mask: &SubcarrierMask,
) -> Result<DVector<Cplx<T>>> {
    if cir.len() > mask.fft_size {
        return Err(Error::DimensionMismatch {
            context: "CSI synthesis (CIR longer than FFT)",
            expected: mask.fft_size,
            actual: cir.len(),
        });
    }
    let k = mask.fft_size;
    let two_pi = T::PI() + T::PI();
    Ok(DVector::from_fn(mask.len(), |r, _| {
        let mut acc = Cplx::new(T::zero(), T::zero());
        for (n, h) in cir.iter().enumerate() {
            let kn = (mask.used_indices[r] * n) % k;
            let angle = two_pi * T::from_usize(kn).unwrap() / T::from_usize(k).unwrap();
            acc += h * Cplx::new(Float::cos(angle), -Float::sin(angle));
        }
        acc
    }))
}

/// Adds circularly-symmetric complex Gaussian noise with per-element
/// variance `noise_variance` (each real component gets half of it).
pub fn add_noise<T: RealScalar, R: Rng + ?Sized>(
    y_clean: &DVector<Cplx<T>>,
    noise_variance: T,
    rng: &mut R,
) -> Result<DVector<Cplx<T>>> {
    if noise_variance < T::zero() {
        return Err(Error::InvalidConfig("noise variance must be nonnegative".into()));
    }
    let scale = Float::sqrt(noise_variance / (T::one() + T::one()));
    Ok(DVector::from_fn(y_clean.len(), |r, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        y_clean[r] + Cplx::new(scale * T::from_f64_c(re), scale * T::from_f64_c(im))
    }))
}
