//! Radar configuration, Cartesian detection grid, and synthetic scenes of
//! point scatterers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{add, Joint, Person, PoseSet, Vec3, NUM_JOINTS};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const FORMAT_VERSION: u32 = 1;

/// Axis-aligned voxel grid in radar coordinates (x right, y depth, z up).
///
/// Axis order of every array laid out on this grid is (z, y, x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    /// Minimum corner (x, y, z) in meters.
    pub origin: Vec3,
    /// Voxel size (x, y, z) in meters.
    pub voxel_extent: Vec3,
    /// Voxel counts (z, y, x).
    pub dims: [usize; 3],
}

impl Default for CartesianGrid {
    fn default() -> Self {
        CartesianGrid {
            origin: [-3.2, 1.6, -0.8],
            voxel_extent: [0.025, 0.05, 0.05],
            dims: [32, 128, 256],
        }
    }
}

impl CartesianGrid {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Center of voxel (z, y, x) as (x, y, z) meters.
    pub fn voxel_center(&self, z: usize, y: usize, x: usize) -> Vec3 {
        [
            self.origin[0] + (x as f64 + 0.5) * self.voxel_extent[0],
            self.origin[1] + (y as f64 + 0.5) * self.voxel_extent[1],
            self.origin[2] + (z as f64 + 0.5) * self.voxel_extent[2],
        ]
    }

    /// Voxel (z, y, x) containing `p`, or `None` outside the grid.
    pub fn voxel_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        // p is (x,y,z); dims are (z,y,x)
        for axis in 0..3 {
            let mut f = (p[axis] - self.origin[axis]) / self.voxel_extent[axis];
            // points on a voxel face belong to the upper voxel despite rounding
            if (f - f.round()).abs() < 1e-9 {
                f = f.round();
            }
            let n = self.dims[2 - axis];
            if !f.is_finite() || f < 0.0 || f >= n as f64 {
                return None;
            }
            idx[2 - axis] = f.floor() as usize;
        }
        Some(idx)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.voxel_of(p).is_some()
    }

    pub fn max_corner(&self) -> Vec3 {
        [
            self.origin[0] + self.dims[2] as f64 * self.voxel_extent[0],
            self.origin[1] + self.dims[1] as f64 * self.voxel_extent[1],
            self.origin[2] + self.dims[0] as f64 * self.voxel_extent[2],
        ]
    }

    /// Coarser grid covering the same box, `factors` as (z, y, x); counts round up.
    pub fn downsampled(&self, factors: [usize; 3]) -> CartesianGrid {
        let mut out = *self;
        for a in 0..3 {
            out.dims[a] = self.dims[a].div_ceil(factors[a].max(1));
        }
        out.voxel_extent = [
            self.voxel_extent[0] * factors[2] as f64,
            self.voxel_extent[1] * factors[1] as f64,
            self.voxel_extent[2] * factors[0] as f64,
        ];
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::config("grid dims must be positive"));
        }
        if self
            .voxel_extent
            .iter()
            .any(|&v| !(v.is_finite() && v > 0.0))
        {
            return Err(Error::config("grid voxel extents must be positive"));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("grid origin must be finite"));
        }
        Ok(())
    }
}

/// FMCW MIMO radar parameters. Angle positions are in half-wavelength units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    pub format_version: u32,
    /// Hz.
    pub start_frequency: f64,
    /// Sampled sweep bandwidth, Hz.
    pub sweep_bandwidth: f64,
    /// Hz/s.
    pub frequency_slope: f64,
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    pub tx_count: usize,
    pub rx_count: usize,
    /// Time between consecutive chirps of the same transmitter, s.
    pub chirp_repetition_interval: f64,
    pub frame_rate: f64,
    /// Transmitters fire sequentially inside one repetition interval.
    pub tdm_mimo: bool,
    /// Apply 1/R² amplitude falloff in synthesis.
    pub range_falloff: bool,
    /// Zero-padded angle FFT lengths.
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    /// (azimuth index, elevation index) of virtual element `tx * rx_count + rx`.
    pub antenna_positions: Vec<[i32; 2]>,
    /// Output geometry of the Cartesian tensor; doubles as the detection volume.
    pub grid: CartesianGrid,
}

/// TX offsets of the default layout. RX elements sit at azimuth 0..16, elevation 0.
/// Every elevation row is centered on azimuth 39.5 so azimuth mismatch does
/// not couple into the elevation phase.
const DEFAULT_TX_OFFSETS: [[i32; 2]; 12] = [
    [0, 0],
    [16, 0],
    [32, 0],
    [48, 0],
    [64, 0],
    [16, 1],
    [32, 1],
    [48, 1],
    [32, 2],
    [32, 3],
    [32, 4],
    [32, 5],
];

impl Default for RadarConfig {
    fn default() -> Self {
        let rx_count = 16;
        RadarConfig {
            format_version: FORMAT_VERSION,
            start_frequency: 77e9,
            // c / (2 * 4.5 cm)
            sweep_bandwidth: SPEED_OF_LIGHT / (2.0 * 0.045),
            frequency_slope: 65e12,
            samples_per_chirp: 256,
            chirps_per_frame: 64,
            tx_count: DEFAULT_TX_OFFSETS.len(),
            rx_count,
            chirp_repetition_interval: 760e-6,
            frame_rate: 10.0,
            tdm_mimo: true,
            range_falloff: false,
            azimuth_bins: 128,
            elevation_bins: 32,
            antenna_positions: Vec::new(),
            grid: CartesianGrid::default(),
        }
        .with_tx_offsets(&DEFAULT_TX_OFFSETS, rx_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    /// m
    pub range_res: f64,
    /// m/s
    pub velocity_res: f64,
    /// degrees
    pub azimuth_res: f64,
    /// degrees
    pub elevation_res: f64,
}

impl RadarConfig {
    /// Virtual element count.
    pub fn virtual_count(&self) -> usize {
        self.tx_count * self.rx_count
    }

    /// Carrier at the sweep center, Hz.
    pub fn carrier_frequency(&self) -> f64 {
        self.start_frequency + 0.5 * self.sweep_bandwidth
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency()
    }

    /// ADC sample interval such that the sampled ramp spans the sweep bandwidth.
    pub fn sample_interval(&self) -> f64 {
        self.sweep_bandwidth / (self.frequency_slope * self.samples_per_chirp as f64)
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.sweep_bandwidth)
    }

    pub fn velocity_resolution(&self) -> f64 {
        self.wavelength() / (2.0 * self.chirps_per_frame as f64 * self.chirp_repetition_interval)
    }

    /// Replace the array with `tx_offsets.len()` transmitters, each followed
    /// by `rx_count` receivers at azimuth `0..rx_count` from its offset.
    /// Elements are ordered TX-major.
    pub fn with_tx_offsets(mut self, tx_offsets: &[[i32; 2]], rx_count: usize) -> Self {
        self.tx_count = tx_offsets.len();
        self.rx_count = rx_count;
        self.antenna_positions = tx_offsets
            .iter()
            .flat_map(|t| (0..rx_count as i32).map(move |r| [t[0] + r, t[1]]))
            .collect();
        self
    }

    pub fn tx_of(&self, element: usize) -> usize {
        element / self.rx_count
    }

    /// (azimuth, elevation) aperture in elements.
    pub fn aperture(&self) -> (usize, usize) {
        let span = |k: usize| {
            let lo = self.antenna_positions.iter().map(|p| p[k]).min().unwrap_or(0);
            let hi = self.antenna_positions.iter().map(|p| p[k]).max().unwrap_or(0);
            (hi - lo + 1) as usize
        };
        (span(0), span(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported radar config format_version {}",
                self.format_version
            )));
        }
        let positive = [
            ("start_frequency", self.start_frequency),
            ("sweep_bandwidth", self.sweep_bandwidth),
            ("frequency_slope", self.frequency_slope),
            ("chirp_repetition_interval", self.chirp_repetition_interval),
            ("frame_rate", self.frame_rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("samples_per_chirp", self.samples_per_chirp),
            ("chirps_per_frame", self.chirps_per_frame),
            ("tx_count", self.tx_count),
            ("rx_count", self.rx_count),
            ("azimuth_bins", self.azimuth_bins),
            ("elevation_bins", self.elevation_bins),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.antenna_positions.len() != self.virtual_count() {
            return Err(Error::config(format!(
                "expected {} antenna positions, got {}",
                self.virtual_count(),
                self.antenna_positions.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.antenna_positions {
            if p[0] < 0 || p[1] < 0 {
                return Err(Error::config("antenna positions must be non-negative"));
            }
            if !seen.insert(*p) {
                return Err(Error::config(format!("duplicate virtual antenna slot {p:?}")));
            }
        }
        let (az, el) = self.aperture();
        if az > self.azimuth_bins || el > self.elevation_bins {
            return Err(Error::config(format!(
                "angle FFT ({}, {}) shorter than aperture ({az}, {el})",
                self.azimuth_bins, self.elevation_bins
            )));
        }
        self.grid.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("radar config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RadarConfig =
            toml::from_str(text).map_err(|e| Error::format(format!("radar config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Closed-form FMCW resolutions of `config`.
pub fn derive_resolutions(config: &RadarConfig) -> Result<ResolutionReport> {
    config.validate()?;
    let (az, el) = config.aperture();
    // half-wavelength array: ~2/N rad
    let angle = |n: usize| (2.0 / n as f64).to_degrees();
    Ok(ResolutionReport {
        range_res: config.range_resolution(),
        velocity_res: config.velocity_resolution(),
        azimuth_res: angle(az),
        elevation_res: angle(el),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// m, at frame 0.
    pub initial_position: Vec3,
    /// m/s.
    pub velocity: Vec3,
    pub reflectivity: f64,
}

impl Scatterer {
    pub fn fixed(position: Vec3, reflectivity: f64) -> Self {
        Scatterer {
            initial_position: position,
            velocity: [0.0; 3],
            reflectivity,
        }
    }

    pub fn position_at(&self, frame: usize, frame_rate: f64) -> Vec3 {
        let t = frame as f64 / frame_rate;
        [
            self.initial_position[0] + self.velocity[0] * t,
            self.initial_position[1] + self.velocity[1] * t,
            self.initial_position[2] + self.velocity[2] * t,
        ]
    }

    /// Projection of the velocity on the line of sight at `position`.
    pub fn radial_velocity_at(&self, position: Vec3) -> f64 {
        let r = crate::pose::norm(position);
        if r == 0.0 {
            return 0.0;
        }
        (0..3).map(|k| self.velocity[k] * position[k]).sum::<f64>() / r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub format_version: u32,
    pub scatterers: Vec<Scatterer>,
    /// Standard deviation of the circular complex noise per ADC sample.
    pub noise_stddev: f64,
    pub duration_frames: usize,
    /// Ground truth per frame, present when generated from skeletons.
    #[serde(default)]
    pub poses: Vec<PoseSet>,
}

impl Scene {
    pub fn new(scatterers: Vec<Scatterer>, noise_stddev: f64, duration_frames: usize) -> Self {
        Scene {
            format_version: FORMAT_VERSION,
            scatterers,
            noise_stddev,
            duration_frames,
            poses: Vec::new(),
        }
    }

    pub fn validate(&self, grid: &CartesianGrid) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported scene format_version {}",
                self.format_version
            )));
        }
        if self.duration_frames == 0 {
            return Err(Error::validation("scene needs at least one frame"));
        }
        if !(self.noise_stddev.is_finite() && self.noise_stddev >= 0.0) {
            return Err(Error::validation("noise_stddev must be finite and >= 0"));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if !(s.reflectivity.is_finite() && s.reflectivity > 0.0) {
                return Err(Error::validation(format!(
                    "scatterer {i}: reflectivity must be finite and > 0"
                )));
            }
            if s.velocity.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("scatterer {i}: non-finite velocity")));
            }
            if !grid.contains(s.initial_position) {
                return Err(Error::validation(format!(
                    "scatterer {i} at {:?} outside the detection volume",
                    s.initial_position
                )));
            }
        }
        Ok(())
    }

    /// Union of two scenes' scatterers; noise and duration from `self`.
    pub fn merged(&self, other: &Scene) -> Scene {
        let mut out = self.clone();
        out.scatterers.extend_from_slice(&other.scatterers);
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Scene =
            toml::from_str(text).map_err(|e| Error::format(format!("scene: {e}")))?;
        if scene.format_version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported scene format_version {}",
                scene.format_version
            )));
        }
        Ok(scene)
    }
}

/// Reflectivity amplitude per joint, indexed by [`Joint::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointReflectivity(pub [f64; NUM_JOINTS]);

impl Default for JointReflectivity {
    fn default() -> Self {
        let mut r = [0.5; NUM_JOINTS];
        for j in Joint::ALL {
            if j.is_trunk() {
                r[j.index()] = 1.0;
            }
        }
        JointReflectivity(r)
    }
}

/// One static scatterer per joint of every person; ground truth attached.
pub fn skeleton_to_scatterers(
    pose: &PoseSet,
    reflectivity: &JointReflectivity,
    grid: &CartesianGrid,
) -> Result<Scene> {
    if pose.is_empty() {
        return Err(Error::validation("empty pose set"));
    }
    let mut scatterers = Vec::with_capacity(pose.len() * NUM_JOINTS);
    for (pi, person) in pose.persons.iter().enumerate() {
        for j in Joint::ALL {
            let p = person.joints[j.index()];
            if !grid.contains(p) {
                return Err(Error::validation(format!(
                    "person {pi} joint {} at {p:?} outside the detection volume",
                    j.name()
                )));
            }
            scatterers.push(Scatterer::fixed(p, reflectivity.0[j.index()]));
        }
    }
    let mut scene = Scene::new(scatterers, 0.0, 1);
    scene.poses = vec![pose.clone()];
    Ok(scene)
}

/// Joint offsets from the pelvis of an upright, radar-facing template
/// (about 1.35 m from ankle to head).
pub const TEMPLATE_OFFSETS: [Vec3; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [-0.10, 0.0, -0.02],
    [-0.11, 0.0, -0.38],
    [-0.12, 0.02, -0.72],
    [0.10, 0.0, -0.02],
    [0.11, 0.0, -0.38],
    [0.12, 0.02, -0.72],
    [0.0, 0.0, 0.42],
    [0.0, -0.02, 0.62],
    [0.17, 0.0, 0.40],
    [0.22, -0.02, 0.15],
    [0.24, -0.06, -0.08],
    [-0.17, 0.0, 0.40],
    [-0.22, -0.02, 0.15],
    [-0.24, -0.06, -0.08],
];

/// Template skeleton at `pelvis`, rotated by `heading` radians about z, with
/// each non-root joint displaced by `jitter[j]`.
pub fn template_person(pelvis: Vec3, heading: f64, jitter: &[Vec3; NUM_JOINTS]) -> Person {
    let (s, c) = heading.sin_cos();
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    for (j, off) in TEMPLATE_OFFSETS.iter().enumerate() {
        let rot = [c * off[0] - s * off[1], s * off[0] + c * off[1], off[2]];
        let jit = if j == 0 { [0.0; 3] } else { jitter[j] };
        joints[j] = add(add(pelvis, rot), jit);
    }
    Person::from_joints(joints)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_resolutions_match_sensor() {
        let r = derive_resolutions(&RadarConfig::default()).unwrap();
        assert!((r.range_res - 0.045).abs() <= 0.045 * 0.05, "{r:?}");
        assert!((r.velocity_res - 0.039).abs() <= 0.039 * 0.05, "{r:?}");
        assert!(r.azimuth_res <= 1.5, "{r:?}");
        assert!(r.elevation_res <= 20.0, "{r:?}");
    }

    #[test]
    fn doubling_bandwidth_halves_range_res() {
        let mut cfg = RadarConfig::default();
        let a = derive_resolutions(&cfg).unwrap().range_res;
        cfg.sweep_bandwidth *= 2.0;
        let b = derive_resolutions(&cfg).unwrap().range_res;
        assert_eq!(a / 2.0, b);
    }

    #[test]
    fn resolutions_are_pure() {
        let cfg = RadarConfig::default();
        let a = derive_resolutions(&cfg).unwrap();
        let b = derive_resolutions(&cfg.clone()).unwrap();
        assert_eq!(a.range_res.to_bits(), b.range_res.to_bits());
        assert_eq!(a.velocity_res.to_bits(), b.velocity_res.to_bits());
        assert_eq!(a.azimuth_res.to_bits(), b.azimuth_res.to_bits());
    }

    #[test]
    fn non_positive_parameter_is_config_error() {
        let mut cfg = RadarConfig::default();
        cfg.sweep_bandwidth = 0.0;
        assert!(matches!(derive_resolutions(&cfg), Err(Error::Config(_))));
        let mut cfg = RadarConfig::default();
        cfg.chirp_repetition_interval = -1.0;
        assert!(matches!(derive_resolutions(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn default_layout_has_distinct_elements() {
        let cfg = RadarConfig::default();
        assert_eq!(cfg.antenna_positions.len(), 192);
        cfg.validate().unwrap();
        let mut dup = cfg.clone();
        dup.antenna_positions[5] = dup.antenna_positions[4];
        assert!(matches!(dup.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = RadarConfig::default();
        let back = RadarConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn positions_propagate_linearly() {
        let s = Scatterer {
            initial_position: [0.5, 4.0, 0.1],
            velocity: [0.25, -0.5, 0.0],
            reflectivity: 1.0,
        };
        let p = s.position_at(4, 10.0);
        assert_eq!(p, [0.5 + 0.25 * 0.4, 4.0 - 0.5 * 0.4, 0.1]);
    }

    fn one_person(pelvis: Vec3) -> PoseSet {
        PoseSet::new(vec![template_person(pelvis, 0.0, &[[0.0; 3]; NUM_JOINTS])])
    }

    #[test]
    fn skeleton_scatterer_counts() {
        let grid = CartesianGrid::default();
        let refl = JointReflectivity::default();
        let s1 = skeleton_to_scatterers(&one_person([0.0, 4.0, 0.0]), &refl, &grid).unwrap();
        assert_eq!(s1.scatterers.len(), 15);
        let mut two = one_person([0.0, 4.0, 0.0]);
        two.persons.push(one_person([1.0, 6.0, 0.0]).persons[0].clone());
        let s2 = skeleton_to_scatterers(&two, &refl, &grid).unwrap();
        assert_eq!(s2.scatterers.len(), 30);
    }

    #[test]
    fn pelvis_scatterer_is_trunk() {
        let grid = CartesianGrid::default();
        let refl = JointReflectivity::default();
        let s = skeleton_to_scatterers(&one_person([0.0, 4.0, 0.0]), &refl, &grid).unwrap();
        let pelvis = s.scatterers[Joint::Pelvis.index()];
        assert_eq!(pelvis.initial_position, [0.0, 4.0, 0.0]);
        assert_eq!(pelvis.reflectivity, 1.0);
        assert!(s.scatterers[Joint::LeftWrist.index()].reflectivity < pelvis.reflectivity);
    }

    #[test]
    fn empty_pose_rejected() {
        let grid = CartesianGrid::default();
        let r = skeleton_to_scatterers(&PoseSet::default(), &JointReflectivity::default(), &grid);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn scene_toml_round_trip() {
        let grid = CartesianGrid::default();
        let s = skeleton_to_scatterers(
            &one_person([0.3, 5.0, 0.0]),
            &JointReflectivity::default(),
            &grid,
        )
        .unwrap();
        let back = Scene::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back.scatterers, s.scatterers);
        back.validate(&grid).unwrap();
    }

    #[test]
    fn grid_voxel_lookup() {
        let g = CartesianGrid::default();
        let v = g.voxel_of([0.0, 4.0, 0.0]).unwrap();
        assert_eq!(v, [16, 48, 128]);
        let c = g.voxel_center(v[0], v[1], v[2]);
        assert!((c[0] - 0.0125).abs() < 1e-12 && (c[1] - 4.025).abs() < 1e-12);
        assert!(g.voxel_of([0.0, 9.0, 0.0]).is_none());
    }
}
