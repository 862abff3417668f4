//! Point-scatterer FMCW MIMO baseband synthesis.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::container::{Container, DType, Kind};
use crate::error::{Error, Result};
use crate::pose::norm;
use crate::scalar::Scalar;
use crate::scene::{RadarConfig, Scene, SPEED_OF_LIGHT};

/// Largest cube we agree to allocate, in complex samples.
const MAX_SAMPLES: usize = 1 << 28;

/// Raw complex baseband samples of one frame, row-major (chirp, antenna, sample).
#[derive(Debug, Clone, PartialEq)]
pub struct AdcCube<T> {
    pub data: Vec<Complex<T>>,
    pub chirps: usize,
    pub antennas: usize,
    pub samples: usize,
    pub frame_index: usize,
}

impl<T: Scalar> AdcCube<T> {
    pub fn zeros(chirps: usize, antennas: usize, samples: usize, frame_index: usize) -> Self {
        AdcCube {
            data: vec![Complex::new(T::zero(), T::zero()); chirps * antennas * samples],
            chirps,
            antennas,
            samples,
            frame_index,
        }
    }

    #[inline]
    pub fn index(&self, chirp: usize, antenna: usize, sample: usize) -> usize {
        (chirp * self.antennas + antenna) * self.samples + sample
    }

    pub fn get(&self, chirp: usize, antenna: usize, sample: usize) -> Complex<T> {
        self.data[self.index(chirp, antenna, sample)]
    }

    pub fn chirp(&self, chirp: usize, antenna: usize) -> &[Complex<T>] {
        let s = self.index(chirp, antenna, 0);
        &self.data[s..s + self.samples]
    }

    pub fn validate(&self, config: &RadarConfig) -> Result<()> {
        let want = (
            config.chirps_per_frame,
            config.virtual_count(),
            config.samples_per_chirp,
        );
        if (self.chirps, self.antennas, self.samples) != want {
            return Err(Error::dimension(format!(
                "ADC cube is {:?}, config expects {want:?}",
                (self.chirps, self.antennas, self.samples)
            )));
        }
        if self.data.len() != self.chirps * self.antennas * self.samples {
            return Err(Error::dimension("ADC cube buffer length mismatch"));
        }
        if self.data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::numerical("ADC cube contains non-finite samples"));
        }
        Ok(())
    }

    pub fn scaled(&self, k: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|c| *c = *c * k);
        out
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr().to_f64_lossy()).sum()
    }

    pub fn to_container(&self) -> Container {
        let data = self
            .data
            .iter()
            .flat_map(|c| [c.re.to_f32().unwrap_or(f32::NAN), c.im.to_f32().unwrap_or(f32::NAN)])
            .collect();
        Container::new(
            Kind::AdcCube,
            DType::ComplexF32,
            vec![self.chirps, self.antennas, self.samples],
            json!({ "frame_index": self.frame_index }),
            data,
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect(Kind::AdcCube, DType::ComplexF32, 3)?;
        let frame_index = c
            .meta
            .get("frame_index")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as usize;
        let data = c
            .data
            .chunks_exact(2)
            .map(|p| Complex::new(T::of(p[0] as f64), T::of(p[1] as f64)))
            .collect();
        Ok(AdcCube {
            data,
            chirps: c.dims[0],
            antennas: c.dims[1],
            samples: c.dims[2],
            frame_index,
        })
    }
}

impl<T: Scalar> std::ops::Add for &AdcCube<T> {
    type Output = AdcCube<T>;
    fn add(self, rhs: &AdcCube<T>) -> AdcCube<T> {
        assert_eq!(self.data.len(), rhs.data.len(), "cube shapes differ");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a = *a + *b;
        }
        out
    }
}

/// Synthesize frame `frame_index` of `scene`.
///
/// Sample `n` of chirp `m` at virtual element `a` carries, per scatterer,
/// `amp * exp(j*(4*pi*R/lambda + 2*pi*(f_b*n*T_s + f_d*t_m,a) + pi*(az_a*u + el_a*w)))`
/// with `u = x/R`, `w = z/R` (the direction sines), `f_b = 2*slope*R/c`,
/// `f_d = 2*v_r*f_c/c`, and `t_m,a = m*T_c` plus the TX slot offset when
/// `tdm_mimo` is set. Noise is circular complex Gaussian with total variance
/// `noise_stddev^2`, drawn from a ChaCha stream keyed by `(rng_seed, frame_index)`.
pub fn synthesize_frame<T: Scalar>(
    scene: &Scene,
    config: &RadarConfig,
    frame_index: usize,
    rng_seed: u64,
) -> Result<AdcCube<T>> {
    config.validate()?;
    if scene.duration_frames == 0 || frame_index >= scene.duration_frames {
        return Err(Error::validation(format!(
            "frame {frame_index} outside scene of {} frames",
            scene.duration_frames
        )));
    }
    let (chirps, antennas, samples) = (
        config.chirps_per_frame,
        config.virtual_count(),
        config.samples_per_chirp,
    );
    let total = chirps
        .checked_mul(antennas)
        .and_then(|v| v.checked_mul(samples))
        .filter(|&n| n <= MAX_SAMPLES)
        .ok_or_else(|| Error::config("ADC cube dimensions overflow"))?;

    let mut acc = vec![Complex::<f64>::new(0.0, 0.0); total];
    let two_pi = std::f64::consts::TAU;
    let lambda = config.wavelength();
    let ts = config.sample_interval();
    let tc = config.chirp_repetition_interval;
    let slot = if config.tdm_mimo {
        tc / config.tx_count as f64
    } else {
        0.0
    };
    let mut range_phasor = vec![Complex::new(0.0, 0.0); samples];

    for s in &scene.scatterers {
        let p = s.position_at(frame_index, config.frame_rate);
        let r = norm(p);
        if r == 0.0 {
            continue;
        }
        let (u, w) = (p[0] / r, p[2] / r);
        let v_r = s.radial_velocity_at(p);
        let f_b = 2.0 * config.frequency_slope * r / SPEED_OF_LIGHT;
        let f_d = 2.0 * v_r * config.carrier_frequency() / SPEED_OF_LIGHT;
        let amp = if config.range_falloff {
            s.reflectivity / (r * r)
        } else {
            s.reflectivity
        };
        let carrier = two_pi * 2.0 * r / lambda;
        for (n, ph) in range_phasor.iter_mut().enumerate() {
            *ph = Complex::from_polar(amp, two_pi * f_b * ts * n as f64);
        }
        for m in 0..chirps {
            for (a, pos) in config.antenna_positions.iter().enumerate() {
                let t = m as f64 * tc + config.tx_of(a) as f64 * slot;
                let spatial = std::f64::consts::PI * (pos[0] as f64 * u + pos[1] as f64 * w);
                let rot = Complex::from_polar(1.0, carrier + two_pi * f_d * t + spatial);
                let base = (m * antennas + a) * samples;
                for (dst, ph) in acc[base..base + samples].iter_mut().zip(range_phasor.iter()) {
                    *dst += rot * ph;
                }
            }
        }
    }

    if scene.noise_stddev > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(frame_index as u64);
        let normal = Normal::new(0.0, scene.noise_stddev / std::f64::consts::SQRT_2)
            .map_err(|e| Error::validation(e.to_string()))?;
        for c in acc.iter_mut() {
            c.re += normal.sample(&mut rng);
            c.im += normal.sample(&mut rng);
        }
    }

    Ok(AdcCube {
        data: acc
            .into_iter()
            .map(|c| Complex::new(T::of(c.re), T::of(c.im)))
            .collect(),
        chirps,
        antennas,
        samples,
        frame_index,
    })
}
