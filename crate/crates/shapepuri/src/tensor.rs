//! Raster containers shared by every stage of the pipeline.
//!
//! All data is stored row-major in 64-bit floats: images as H x W x C
//! with the channel index fastest, fields and masks as H x W. Values
//! are immutable after construction except through the explicit
//! builders used inside this crate.

use crate::error::{Error, Result};

/// H x W x C raster, nominally in [0, 1]. Fusion and de-biasing outputs
/// may leave that range; the classifier consumes unbounded reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {height}*{width}*{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image::new(
            height,
            width,
            channels,
            vec![0.0; height * width * channels],
        )
        .expect("zero image is always valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Rebuilds an image of the same shape from raw values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Image::new(self.height, self.width, self.channels, data)
    }
}

/// H x W real-valued field: blur outputs, distance transforms, SDFs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "field dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {height}*{width}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("field data"));
        }
        Ok(ScalarField {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ScalarField::new(height, width, vec![0.0; height * width])
            .expect("zero field is always valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// H x W mask with values restricted to {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {height}*{width}",
                data.len()
            )));
        }
        if !data.iter().all(|&v| v <= 1) {
            return Err(Error::ShapeMismatch("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask::new(height, width, vec![0; height * width]).expect("zero mask is always valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Fraction of pixels set to 1.
    pub fn foreground_fraction(&self) -> f64 {
        let ones: usize = self.data.iter().map(|&v| v as usize).sum();
        ones as f64 / self.data.len() as f64
    }

    pub fn inverted(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}

/// Connected-component labeling: 0 is background, components are
/// numbered 1..=component_count in raster-scan first-touch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub component_count: usize,
}

impl LabelMap {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

/// Square root of the sum of squared entries over all channels.
pub fn frobenius_norm(image: &Image) -> f64 {
    image.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Collapses an image to one channel. Three-channel input uses the
/// BT.601 luma weights (0.299, 0.587, 0.114); one-channel input passes
/// through unchanged.
pub fn to_grayscale(image: &Image) -> Result<ScalarField> {
    match image.channels {
        1 => ScalarField::new(image.height, image.width, image.data.clone()),
        3 => {
            let mut out = Vec::with_capacity(image.height * image.width);
            for px in image.data.chunks_exact(3) {
                out.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
            }
            ScalarField::new(image.height, image.width, out)
        }
        c => Err(Error::UnsupportedChannels(c)),
    }
}

/// Maximum absolute elementwise difference.
pub fn linf_distance(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
