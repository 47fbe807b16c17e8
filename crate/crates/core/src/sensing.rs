//! Delay-grid dictionary and partial-DFT sensing matrix.
//!
//! The measured CSI is modeled as `y = F_I A alpha + n`: `A` holds sampled
//! pulses shifted to every candidate grid delay, `F_I` is the partial DFT
//! restricted to the used subcarriers, and `B = F_I A` is the combined
//! sensing matrix every estimator works against.

use nalgebra::DMatrix;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::pulse::{eval_pulse, PulseConfig};
use crate::scalar::RealScalar;
use crate::Cplx;

/// Uniform delay grid `tau_m = m * T_g`, `m = 0..M-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayGrid<T> {
    /// Grid resolution `T_g` in nanoseconds.
    pub resolution_ns: T,
    /// Number of grid points `M`.
    pub num_points: usize,
}

impl<T: RealScalar> DelayGrid<T> {
    pub fn new(resolution_ns: T, num_points: usize) -> Result<Self> {
        if !(resolution_ns > T::zero()) {
            return Err(Error::InvalidConfig(
                "delay grid resolution must be positive".into(),
            ));
        }
        if num_points == 0 {
            return Err(Error::InvalidConfig(
                "delay grid needs at least one point".into(),
            ));
        }
        Ok(Self {
            resolution_ns,
            num_points,
        })
    }

    /// Delay of grid point `m` in nanoseconds.
    pub fn delay_at(&self, m: usize) -> T {
        T::from_usize(m).unwrap() * self.resolution_ns
    }

    /// Largest candidate delay `(M-1) * T_g`.
    pub fn max_delay_ns(&self) -> T {
        self.delay_at(self.num_points - 1)
    }

    pub fn delays(&self) -> Vec<T> {
        (0..self.num_points).map(|m| self.delay_at(m)).collect()
    }
}

/// Index set `I` of subcarriers carrying data/pilot symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierMask {
    /// DFT size `K`.
    pub fft_size: usize,
    /// Strictly increasing indices in `[0, K-1]`.
    pub used_indices: Vec<usize>,
}

impl SubcarrierMask {
    pub fn new(fft_size: usize, used_indices: Vec<usize>) -> Result<Self> {
        if fft_size == 0 {
            return Err(Error::InvalidConfig("FFT size must be positive".into()));
        }
        if used_indices.is_empty() {
            return Err(Error::InvalidConfig(
                "subcarrier mask must select at least one index".into(),
            ));
        }
        if !used_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "subcarrier indices must be strictly increasing".into(),
            ));
        }
        if *used_indices.last().unwrap() >= fft_size {
            return Err(Error::InvalidConfig(format!(
                "subcarrier index {} out of range for FFT size {}",
                used_indices.last().unwrap(),
                fft_size
            )));
        }
        Ok(Self {
            fft_size,
            used_indices,
        })
    }

    /// Mask selecting every subcarrier of a size-`k` DFT.
    pub fn full(k: usize) -> Result<Self> {
        Self::new(k, (0..k).collect())
    }

    /// Number of used subcarriers `|I|`.
    pub fn len(&self) -> usize {
        self.used_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used_indices.is_empty()
    }
}

/// Everything the simulator and the estimators share: the pulse, the grid,
/// the mask, and the derived matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingModel<T: RealScalar> {
    pub pulse: PulseConfig<T>,
    pub grid: DelayGrid<T>,
    pub mask: SubcarrierMask,
    /// Modeled CIR length `N` in taps.
    pub cir_length: usize,
    /// `N x M` real dictionary, `A[n][m] = g(n T - m T_g)`.
    pub time_dictionary: DMatrix<T>,
    /// `|I| x M` complex sensing matrix `B = F_I A`.
    pub sensing_matrix: DMatrix<Cplx<T>>,
    /// Grid delay labels for the dictionary columns.
    pub column_delays_ns: Vec<T>,
}

/// Builds the `N x M` time-domain dictionary `A[n][m] = g(n T - m T_g)`.
pub fn build_time_dictionary<T: RealScalar>(
    pulse: &PulseConfig<T>,
    grid: &DelayGrid<T>,
    cir_length: usize,
) -> Result<DMatrix<T>> {
    if cir_length == 0 {
        return Err(Error::InvalidConfig("CIR length must be positive".into()));
    }
    let t = pulse.sampling_period_ns;
    Ok(DMatrix::from_fn(cir_length, grid.num_points, |n, m| {
        eval_pulse(T::from_usize(n).unwrap() * t - grid.delay_at(m), pulse)
    }))
}

/// Builds the `|I| x N` partial DFT matrix with entries
/// `exp(-j 2 pi I[r] n / K)`.
///
/// The angle is reduced modulo `K` before evaluating sin/cos so that
/// integer-periodic entries (e.g. the trivial row for subcarrier 0) come out
/// exact.
pub fn build_partial_dft<T: RealScalar>(
    mask: &SubcarrierMask,
    cir_length: usize,
) -> Result<DMatrix<Cplx<T>>> {
    if cir_length == 0 {
        return Err(Error::InvalidConfig("CIR length must be positive".into()));
    }
    if cir_length > mask.fft_size {
        return Err(Error::DimensionMismatch {
            context: "partial DFT (CIR length exceeds FFT size)",
            expected: mask.fft_size,
            actual: cir_length,
        });
    }
    let k = mask.fft_size;
    let two_pi = T::PI() + T::PI();
    Ok(DMatrix::from_fn(mask.len(), cir_length, |r, n| {
        let kn = (mask.used_indices[r] * n) % k;
        let angle = two_pi * T::from_usize(kn).unwrap() / T::from_usize(k).unwrap();
        Cplx::new(Float::cos(angle), -Float::sin(angle))
    }))
}

/// Assembles the combined sensing model with `B = F_I A`.
pub fn build_sensing_model<T: RealScalar>(
    pulse: PulseConfig<T>,
    grid: DelayGrid<T>,
    mask: SubcarrierMask,
    cir_length: usize,
) -> Result<SensingModel<T>> {
    let time_dictionary = build_time_dictionary(&pulse, &grid, cir_length)?;
    let partial_dft = build_partial_dft::<T>(&mask, cir_length)?;
    let a_complex = time_dictionary.map(|v| Cplx::new(v, T::zero()));
    let sensing_matrix = &partial_dft * a_complex;
    let column_delays_ns = grid.delays();
    Ok(SensingModel {
        pulse,
        grid,
        mask,
        cir_length,
        time_dictionary,
        sensing_matrix,
        column_delays_ns,
    })
}

impl<T: RealScalar> SensingModel<T> {
    /// Number of used subcarriers `|I|`.
    pub fn num_measurements(&self) -> usize {
        self.mask.len()
    }

    /// Number of grid columns `M`.
    pub fn num_columns(&self) -> usize {
        self.grid.num_points
    }

    /// Half-open tap range `[start, end)` outside which dictionary column
    /// `m` is exactly zero (`|n T - m T_g| <= L_p T` window).
    pub fn column_tap_range(&self, m: usize) -> (usize, usize) {
        let t = self.pulse.sampling_period_ns;
        let tau = self.grid.delay_at(m);
        let lo = (tau - self.pulse.support_ns()) / t;
        let hi = (tau + self.pulse.support_ns()) / t;
        let start = Float::ceil(lo).to_usize().unwrap_or(0);
        let end = (Float::floor(hi).to_isize().unwrap_or(-1) + 1).max(0) as usize;
        (start.min(self.cir_length), end.min(self.cir_length))
    }

    /// The partial DFT factor `F_I` (recomputed; cheap).
    pub fn partial_dft(&self) -> DMatrix<Cplx<T>> {
        build_partial_dft(&self.mask, self.cir_length).expect("model was validated")
    }
}
