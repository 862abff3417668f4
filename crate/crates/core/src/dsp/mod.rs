//! Raw ADC cube to 4D Cartesian radar tensor.

mod angle;
mod cartesian;
mod doppler;
mod pipeline;
mod range;
mod remod;
mod window;

pub use angle::{angle_ffts, bin_sine, sine_bin, Detector, PolarTensor};
pub(crate) use angle::AngleTransform;
pub use cartesian::{polar_to_cartesian, RadarTensor4D};
pub use doppler::{doppler_fft, RangeDopplerCube};
pub use pipeline::{process_frame, rd_to_tensor, ProcessOptions};
pub use range::{range_fft, RangeProfiles};
pub use remod::{remodulate_virtual_array, VirtualArrayGrid};
pub(crate) use remod::{layout, tdm_corrections};
pub use window::WindowKind;
