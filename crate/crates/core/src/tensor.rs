//! Image and batch containers plus the fixed [-1, 1] pixel range mapping.

use crate::error::{Error, Result};

/// Channel-major (C, H, W) real image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value at index {pos}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "image dimensions must be positive"
        );
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Crate-internal constructor for buffers whose shape is correct by construction.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane_len();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.plane_len();
        &mut self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Repeats a single-channel image `channels` times.
    pub fn broadcast_channels(&self, channels: usize) -> Result<Image> {
        if self.channels != 1 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                actual: self.channels,
            });
        }
        let mut data = Vec::with_capacity(channels * self.data.len());
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Ok(Image::from_raw(channels, self.height, self.width, data))
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        let mut out = Image::zeros(self.channels, height, width);
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let coord = |o: usize, scale: f32, size: usize| {
            let s = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(size - 1);
            let i1 = (i0 + 1).min(size - 1);
            (i0, i1, s - i0 as f32)
        };
        for y in 0..height {
            let (y0, y1, fy) = coord(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = coord(x, sx, self.width);
                for c in 0..self.channels {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, y, x, top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        out
    }
}

/// Channel-major 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Maps `v` to `v / 127.5 - 1`.
pub fn normalize_u8(pixels: &ImageU8) -> Result<Image> {
    let data = pixels
        .data
        .iter()
        .map(|&v| v as f32 / 127.5 - 1.0)
        .collect();
    Image::new(pixels.channels, pixels.height, pixels.width, data)
}

/// Maps `v` to `round(clamp(v, -1, 1) * 127.5 + 127.5)`, rounding halves up.
pub fn denormalize_u8(img: &Image) -> ImageU8 {
    ImageU8 {
        channels: img.channels,
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| to_u8(v)).collect(),
    }
}

#[inline]
pub(crate) fn to_u8(v: f32) -> u8 {
    let scaled = v.clamp(-1.0, 1.0) as f64 * 127.5 + 127.5;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Shape-homogeneous, nonempty list of images with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    images: Vec<Image>,
    labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(images: Vec<Image>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyBatch)?;
        let shape = first.shape();
        if let Some(bad) = images.iter().position(|im| im.shape() != shape) {
            return Err(Error::Shape(format!(
                "image {bad} has shape {:?}, expected {shape:?}",
                images[bad].shape()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.len() {
                return Err(Error::Shape(format!(
                    "{} labels for {} images",
                    labels.len(),
                    images.len()
                )));
            }
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.images[0].shape()
    }

    pub fn into_parts(self) -> (Vec<Image>, Option<Vec<usize>>) {
        (self.images, self.labels)
    }

    /// New batch holding the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Batch> {
        let images = indices.iter().map(|&i| self.images[i].clone()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Batch::new(images, labels)
    }

    /// Same labels, images replaced by `f(image)`.
    pub fn map_images<F>(&self, mut f: F) -> Result<Batch>
    where
        F: FnMut(usize, &Image) -> Result<Image>,
    {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(i, im)| f(i, im))
            .collect::<Result<Vec<_>>>()?;
        Batch::new(images, self.labels.clone())
    }

    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        let mut images = self.images.clone();
        images.extend(other.images.iter().cloned());
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => {
                return Err(Error::Shape(
                    "cannot concatenate labelled and unlabelled batches".into(),
                ))
            }
        };
        Batch::new(images, labels)
    }
}
