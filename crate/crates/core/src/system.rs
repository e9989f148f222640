//! Channel realizations, steering vectors and beamforming containers.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Half-wavelength uniform linear array response, `a_k = exp(j pi k sin(theta))`.
pub fn steering_vector(theta: f64, n: usize) -> Result<Vec<Complex64>> {
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "steering angle must be finite, got {theta}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("antenna count must be >= 1".into()));
    }
    let phase = PI * theta.sin();
    Ok((0..n)
        .map(|k| Complex64::from_polar(1.0, phase * k as f64))
        .collect())
}

/// `[Re(x), Im(x)]`.
pub fn stack_complex(x: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.len());
    out.extend(x.iter().map(|z| z.re));
    out.extend(x.iter().map(|z| z.im));
    out
}

pub fn unstack_complex(x: &[f64]) -> Result<Vec<Complex64>> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "cannot unstack odd-length vector (len {})",
            x.len()
        )));
    }
    let n = x.len() / 2;
    Ok((0..n).map(|k| Complex64::new(x[k], x[n + k])).collect())
}

/// One random realization of the network.
///
/// Values are stored in `f64` but always hold `f32`-representable numbers so
/// the on-disk dataset format round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    ap_count: usize,
    ue_count: usize,
    tx_antennas: usize,
    /// `h[m][u][k]`, flattened m-major.
    h: Vec<Complex64>,
    theta: Vec<f64>,
    /// `zeta2[mt][mr]`, transmit index as the row.
    zeta2: Vec<f64>,
}

impl ChannelSample {
    pub fn new(
        ap_count: usize,
        ue_count: usize,
        tx_antennas: usize,
        h: Vec<Complex64>,
        theta: Vec<f64>,
        zeta2: Vec<f64>,
    ) -> Result<Self> {
        if h.len() != ap_count * ue_count * tx_antennas {
            return Err(Error::DimensionMismatch(format!(
                "h has {} entries, expected {}",
                h.len(),
                ap_count * ue_count * tx_antennas
            )));
        }
        if theta.len() != ap_count {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, expected {ap_count}",
                theta.len()
            )));
        }
        if zeta2.len() != ap_count * ap_count {
            return Err(Error::DimensionMismatch(format!(
                "zeta2 has {} entries, expected {}",
                zeta2.len(),
                ap_count * ap_count
            )));
        }
        if let Some(t) = theta.iter().find(|t| !(**t >= 0.0 && **t < FRAC_PI_2)) {
            return Err(Error::InvalidArgument(format!(
                "target angle {t} outside [0, pi/2)"
            )));
        }
        if let Some(z) = zeta2.iter().find(|z| !(**z >= 0.0 && z.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "sensing gain variance {z} is negative or not finite"
            )));
        }
        Ok(ChannelSample {
            ap_count,
            ue_count,
            tx_antennas,
            h,
            theta,
            zeta2,
        })
    }

    pub fn ap_count(&self) -> usize {
        self.ap_count
    }

    pub fn ue_count(&self) -> usize {
        self.ue_count
    }

    pub fn tx_antennas(&self) -> usize {
        self.tx_antennas
    }

    /// Channel between AP `m` and user `u`.
    pub fn h(&self, m: usize, u: usize) -> &[Complex64] {
        let n = self.tx_antennas;
        let start = (m * self.ue_count + u) * n;
        &self.h[start..start + n]
    }

    pub fn h_flat(&self) -> &[Complex64] {
        &self.h
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn zeta2(&self, mt: usize, mr: usize) -> f64 {
        self.zeta2[mt * self.ap_count + mr]
    }

    pub fn zeta2_flat(&self) -> &[f64] {
        &self.zeta2
    }

    /// Checks that this sample was drawn for a scenario shaped like `config`.
    pub fn check_dims(&self, config: &SystemConfig) -> Result<()> {
        if self.ap_count != config.ap_count
            || self.ue_count != config.ue_count
            || self.tx_antennas != config.tx_antennas
        {
            return Err(Error::DimensionMismatch(format!(
                "sample is (M={}, U={}, N_t={}), config is (M={}, U={}, N_t={})",
                self.ap_count,
                self.ue_count,
                self.tx_antennas,
                config.ap_count,
                config.ue_count,
                config.tx_antennas
            )));
        }
        Ok(())
    }

    /// Same sample with users reordered: user `i` of the result is user
    /// `perm[i]` of `self`.
    pub fn permute_ues(&self, perm: &[usize]) -> ChannelSample {
        let mut h = Vec::with_capacity(self.h.len());
        for m in 0..self.ap_count {
            for &u in perm {
                h.extend_from_slice(self.h(m, u));
            }
        }
        ChannelSample { h, ..self.clone() }
    }

    /// Same sample with APs reordered: AP `i` of the result is AP `perm[i]`.
    pub fn permute_aps(&self, perm: &[usize]) -> ChannelSample {
        let mut h = Vec::with_capacity(self.h.len());
        for &m in perm {
            for u in 0..self.ue_count {
                h.extend_from_slice(self.h(m, u));
            }
        }
        let theta = perm.iter().map(|&m| self.theta[m]).collect();
        let mut zeta2 = Vec::with_capacity(self.zeta2.len());
        for &mt in perm {
            for &mr in perm {
                zeta2.push(self.zeta2(mt, mr));
            }
        }
        ChannelSample {
            h,
            theta,
            zeta2,
            ..self.clone()
        }
    }
}

/// Complex beamforming vectors `f[m][s]` for every AP and stream.
///
/// Streams are ordered users first, then sensing streams.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    ap_count: usize,
    streams: usize,
    tx_antennas: usize,
    f: Vec<Complex64>,
}

impl BeamformingSolution {
    pub fn zeros(config: &SystemConfig) -> Self {
        Self::zeros_with(config.ap_count, config.streams(), config.tx_antennas)
    }

    pub fn zeros_with(ap_count: usize, streams: usize, tx_antennas: usize) -> Self {
        BeamformingSolution {
            ap_count,
            streams,
            tx_antennas,
            f: vec![Complex64::new(0.0, 0.0); ap_count * streams * tx_antennas],
        }
    }

    pub fn from_flat(
        ap_count: usize,
        streams: usize,
        tx_antennas: usize,
        f: Vec<Complex64>,
    ) -> Result<Self> {
        if f.len() != ap_count * streams * tx_antennas {
            return Err(Error::DimensionMismatch(format!(
                "beam buffer has {} entries, expected {}",
                f.len(),
                ap_count * streams * tx_antennas
            )));
        }
        Ok(BeamformingSolution {
            ap_count,
            streams,
            tx_antennas,
            f,
        })
    }

    pub fn ap_count(&self) -> usize {
        self.ap_count
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn tx_antennas(&self) -> usize {
        self.tx_antennas
    }

    pub fn beam(&self, m: usize, s: usize) -> &[Complex64] {
        let n = self.tx_antennas;
        let start = (m * self.streams + s) * n;
        &self.f[start..start + n]
    }

    pub fn beam_mut(&mut self, m: usize, s: usize) -> &mut [Complex64] {
        let n = self.tx_antennas;
        let start = (m * self.streams + s) * n;
        &mut self.f[start..start + n]
    }

    pub fn as_flat(&self) -> &[Complex64] {
        &self.f
    }

    /// `sum_s ||f_ms||^2`.
    pub fn per_ap_power(&self, m: usize) -> Result<f64> {
        if m >= self.ap_count {
            return Err(Error::IndexOutOfRange {
                what: "AP",
                index: m,
                len: self.ap_count,
            });
        }
        let n = self.streams * self.tx_antennas;
        Ok(self.f[m * n..(m + 1) * n]
            .iter()
            .map(|z| z.norm_sqr())
            .sum())
    }

    /// Multiplies every beam of stream `s` by `c`.
    pub fn scale_stream(&mut self, s: usize, c: Complex64) {
        for m in 0..self.ap_count {
            for z in self.beam_mut(m, s) {
                *z *= c;
            }
        }
    }

    /// True when every AP is within its budget up to `rel_tol`.
    pub fn is_feasible(&self, ap_power: f64, rel_tol: f64) -> bool {
        (0..self.ap_count).all(|m| {
            self.per_ap_power(m)
                .map(|p| p <= ap_power * (1.0 + rel_tol))
                .unwrap_or(false)
        })
    }

    pub(crate) fn check_dims(&self, config: &SystemConfig) -> Result<()> {
        if self.ap_count != config.ap_count
            || self.streams != config.streams()
            || self.tx_antennas != config.tx_antennas
        {
            return Err(Error::DimensionMismatch(format!(
                "solution is (M={}, S={}, N_t={}), config is (M={}, S={}, N_t={})",
                self.ap_count,
                self.streams,
                self.tx_antennas,
                config.ap_count,
                config.streams(),
                config.tx_antennas
            )));
        }
        Ok(())
    }
}

fn to_f32_precision(x: f64) -> f64 {
    x as f32 as f64
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws one realization: Rayleigh channels, uniform target angles on
/// `[0, pi/2)` and `zeta^2 = |g|^2` with `g ~ CN(0, 1)`.
pub fn sample_channel<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelSample> {
    config.validate()?;
    let (m_count, u_count, n) = (config.ap_count, config.ue_count, config.tx_antennas);
    let h = (0..m_count * u_count * n)
        .map(|_| {
            let z = complex_normal(rng);
            Complex64::new(to_f32_precision(z.re), to_f32_precision(z.im))
        })
        .collect();
    let theta = (0..m_count)
        .map(|_| {
            let t = (rng.random::<f64>() * FRAC_PI_2) as f32;
            // rounding to f32 may land exactly on (or above) pi/2
            let t = if t as f64 >= FRAC_PI_2 {
                f32::from_bits(t.to_bits() - 1)
            } else {
                t
            };
            t as f64
        })
        .collect();
    let zeta2 = (0..m_count * m_count)
        .map(|_| to_f32_precision(complex_normal(rng).norm_sqr()))
        .collect();
    ChannelSample::new(m_count, u_count, n, h, theta, zeta2)
}

/// Mixes a tag into a seed (splitmix64 finalizer), for deriving independent
/// seeds for train/test sets, epochs and so on.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for sample `index` under `seed`. Each index owns its own
/// ChaCha stream, so sample `i` never depends on how many others were drawn.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_indexed(config: &SystemConfig, seed: u64, index: u64) -> Result<ChannelSample> {
    sample_channel(config, &mut sample_rng(seed, index))
}

/// Samples `0..count` under `seed`, generated in parallel.
pub fn generate_samples(
    config: &SystemConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<ChannelSample>> {
    config.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_indexed(config, seed, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn steering_examples() {
        let a = steering_vector(0.0, 4).unwrap();
        assert!(a.iter().all(|z| close(*z, Complex64::new(1.0, 0.0))));

        let a = steering_vector(FRAC_PI_2, 2).unwrap();
        assert!(close(a[0], Complex64::new(1.0, 0.0)));
        assert!(close(a[1], Complex64::new(-1.0, 0.0)));

        let a = steering_vector(PI / 6.0, 3).unwrap();
        assert!(close(a[1], Complex64::new(0.0, 1.0)));
        assert!(close(a[2], Complex64::new(-1.0, 0.0)));
    }

    #[test]
    fn steering_rejects_bad_input() {
        assert!(matches!(
            steering_vector(f64::NAN, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(steering_vector(f64::INFINITY, 4).is_err());
        assert!(steering_vector(0.3, 0).is_err());
    }

    #[test]
    fn stacking_examples() {
        assert_eq!(stack_complex(&[Complex64::new(1.0, 2.0)]), vec![1.0, 2.0]);
        assert_eq!(stack_complex(&[Complex64::default(); 2]), vec![0.0; 4]);
        let x = vec![Complex64::new(3.0, -1.0), Complex64::new(2.0, 0.0)];
        assert_eq!(unstack_complex(&stack_complex(&x)).unwrap(), x);
        assert!(unstack_complex(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn per_ap_power_examples() {
        let cfg = SystemConfig {
            ap_count: 2,
            ue_count: 1,
            sensing_streams: 0,
            tx_antennas: 2,
            ..SystemConfig::default()
        };
        let mut sol = BeamformingSolution::zeros(&cfg);
        assert_eq!(sol.per_ap_power(0).unwrap(), 0.0);
        sol.beam_mut(1, 0)
            .copy_from_slice(&[Complex64::new(1.0, 0.0); 2]);
        assert_eq!(sol.per_ap_power(1).unwrap(), 2.0);
        assert!(matches!(
            sol.per_ap_power(2),
            Err(Error::IndexOutOfRange {
                index: 2,
                len: 2,
                ..
            })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_order_free() {
        let cfg = SystemConfig::default();
        let a = sample_indexed(&cfg, 42, 7).unwrap();
        let b = sample_indexed(&cfg, 42, 7).unwrap();
        assert_eq!(a, b);
        let all = generate_samples(&cfg, 42, 10).unwrap();
        assert_eq!(all[7], a);
        assert_ne!(all[6], a);
        assert_ne!(sample_indexed(&cfg, 43, 7).unwrap(), a);
    }

    #[test]
    fn sample_invariants() {
        let cfg = SystemConfig::default();
        for s in generate_samples(&cfg, 1, 200).unwrap() {
            s.check_dims(&cfg).unwrap();
            assert!(s.theta().iter().all(|t| (0.0..FRAC_PI_2).contains(t)));
            assert!(s.zeta2_flat().iter().all(|z| *z >= 0.0));
            assert!(s.h_flat().iter().all(|z| z.re as f32 as f64 == z.re));
        }
    }

    #[test]
    fn sample_moments_match_unit_variance() {
        // 1e5 draws each of |h|^2 and zeta^2
        let cfg = SystemConfig {
            ap_count: 10,
            ue_count: 1,
            sensing_streams: 1,
            tx_antennas: 10,
            ..SystemConfig::default()
        };
        let samples = generate_samples(&cfg, 9, 1000).unwrap();
        let h_mean: f64 = samples
            .iter()
            .flat_map(|s| s.h_flat().iter().map(|z| z.norm_sqr()))
            .sum::<f64>()
            / 1e5;
        let z_mean: f64 = samples
            .iter()
            .flat_map(|s| s.zeta2_flat().iter().copied())
            .sum::<f64>()
            / 1e5;
        assert!((0.98..=1.02).contains(&h_mean), "E|h|^2 = {h_mean}");
        assert!((0.98..=1.02).contains(&z_mean), "E zeta^2 = {z_mean}");
    }

    #[test]
    fn permutations_reindex_consistently() {
        let cfg = SystemConfig::default();
        let s = sample_indexed(&cfg, 3, 0).unwrap();
        let p = s.permute_ues(&[1, 0]);
        assert_eq!(p.h(2, 0), s.h(2, 1));
        let q = s.permute_aps(&[4, 3, 2, 1, 0]);
        assert_eq!(q.h(0, 1), s.h(4, 1));
        assert_eq!(q.theta()[1], s.theta()[3]);
        assert_eq!(q.zeta2(0, 1), s.zeta2(4, 3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn steering_norm_equals_antenna_count(theta in -10.0f64..10.0, n in 1usize..64) {
                let a = steering_vector(theta, n).unwrap();
                let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
                prop_assert!((norm - n as f64).abs() <= 1e-12 * n as f64);
            }

            #[test]
            fn unstack_inverts_stack(v in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 0..32)) {
                let x: Vec<Complex64> = v.iter().map(|(a, b)| Complex64::new(*a, *b)).collect();
                prop_assert_eq!(unstack_complex(&stack_complex(&x)).unwrap(), x);
            }
        }
    }

    #[test]
    fn steering_norm_many_angles() {
        let mut rng = sample_rng(5, 0);
        for _ in 0..10_000 {
            let theta = rng.random::<f64>() * 2.0 * PI - PI;
            let a = steering_vector(theta, 8).unwrap();
            let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 8.0).abs() <= 8e-12);
        }
    }
}
