use thiserror::Error;

use crate::tensor::{Array, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("grid needs height and width >= 2, got {height}x{width}")]
    DegenerateSize { height: usize, width: usize },

    #[error("{0}")]
    Shape(String),

    #[error("color operations need 3 channels, got {0}")]
    NotColor(usize),

    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("affine matrix entries must be finite")]
    NonFiniteMatrix,
}

pub type Result<T> = std::result::Result<T, VisionError>;

/// A 2x3 matrix `[[a, b, tx], [c, d, ty]]` acting on normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMatrix([f64; 6]);

impl AffineMatrix {
    pub const IDENTITY: AffineMatrix = AffineMatrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn new(entries: [f64; 6]) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(VisionError::NonFiniteMatrix);
        }
        Ok(AffineMatrix(entries))
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Pure translation in normalized coordinates.
    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineMatrix([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    pub fn entries(&self) -> [f64; 6] {
        self.0
    }

    /// Determinant of the linear part; diagnostic only.
    pub fn determinant(&self) -> f64 {
        let [a, b, _, c, d, _] = self.0;
        a * d - b * c
    }

    /// Row vector of shape (1, 6), usable as a one-image batch.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::constant(Array::new(vec![1, 6], self.0.to_vec()).expect("6 entries"))
    }
}

impl Default for AffineMatrix {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Color amplitudes. All zeros is the identity transformation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ColorParams {
    hue: f64,
    saturation: f64,
    contrast: f64,
    brightness: f64,
}

pub const HUE_RANGE: (f64, f64) = (-0.5, 0.5);
pub const SATURATION_RANGE: (f64, f64) = (0.0, 1.0);
pub const CONTRAST_RANGE: (f64, f64) = (-1.0, 1.0);
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.0, 1.0);

fn check(name: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<f64> {
    if value >= lo && value <= hi {
        Ok(value)
    } else {
        Err(VisionError::OutOfRange {
            name,
            value,
            lo,
            hi,
        })
    }
}

impl ColorParams {
    pub fn new(hue: f64, saturation: f64, contrast: f64, brightness: f64) -> Result<Self> {
        Ok(ColorParams {
            hue: check("hue", hue, HUE_RANGE)?,
            saturation: check("saturation", saturation, SATURATION_RANGE)?,
            contrast: check("contrast", contrast, CONTRAST_RANGE)?,
            brightness: check("brightness", brightness, BRIGHTNESS_RANGE)?,
        })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn hue(&self) -> f64 {
        self.hue
    }

    pub fn saturation(&self) -> f64 {
        self.saturation
    }

    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn brightness(&self) -> f64 {
        self.brightness
    }

    /// `[hue, saturation, contrast, brightness]` as a (1, 4) row.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::constant(
            Array::new(
                vec![1, 4],
                vec![self.hue, self.saturation, self.contrast, self.brightness],
            )
            .expect("4 entries"),
        )
    }
}

/// Images laid out as (batch, channels, height, width) with 1 or 3 channels.
#[derive(Clone, Debug)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || !(s[1] == 1 || s[1] == 3) {
            return Err(VisionError::Shape(format!(
                "image batch must be (N, 1|3, H, W), got {:?}",
                s
            )));
        }
        Ok(ImageBatch(t))
    }

    pub fn from_array(a: Array) -> Result<Self> {
        Self::new(Tensor::constant(a))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn pixels_per_image(&self) -> usize {
        self.channels() * self.height() * self.width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_ranges_enforced() {
        assert!(ColorParams::new(0.5, 1.0, -1.0, 0.0).is_ok());
        assert!(matches!(
            ColorParams::new(0.6, 0.0, 0.0, 0.0),
            Err(VisionError::OutOfRange { name: "hue", .. })
        ));
        assert!(ColorParams::new(0.0, -0.1, 0.0, 0.0).is_err());
        assert!(ColorParams::new(0.0, 0.0, 1.1, 0.0).is_err());
        assert!(ColorParams::new(0.0, 0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn affine_basics() {
        assert_eq!(
            AffineMatrix::identity().entries(),
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(AffineMatrix::identity().determinant(), 1.0);
        assert!(AffineMatrix::new([f64::INFINITY, 0., 0., 0., 1., 0.]).is_err());
        assert_eq!(
            AffineMatrix::new([0., 1., 0., 1., 0., 0.])
                .unwrap()
                .determinant(),
            -1.0
        );
    }

    #[test]
    fn image_batch_validates_channels() {
        assert!(ImageBatch::from_array(Array::zeros(&[2, 3, 4, 4])).is_ok());
        assert!(ImageBatch::from_array(Array::zeros(&[2, 2, 4, 4])).is_err());
        assert!(ImageBatch::from_array(Array::zeros(&[3, 4, 4])).is_err());
    }
}
