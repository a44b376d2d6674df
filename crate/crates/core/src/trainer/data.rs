use crate::error::{Error, Result};
use crate::tensor::{Batch, Image};

/// Labelled images from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub images: Batch,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, images: Batch) -> Result<Self> {
        let labels = images
            .labels()
            .ok_or_else(|| Error::Shape("dataset images must be labelled".into()))?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Shape(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        self.images.labels().expect("dataset is labelled")
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let indices: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&indices, self.name.clone())
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        Dataset::new(name, self.num_classes, self.images.select(indices)?)
    }

    /// Splits off the last `fraction` of samples, returning `(head, tail)`.
    pub fn split_tail(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let tail = ((n as f64) * fraction).round() as usize;
        if tail == 0 || tail >= n {
            return Err(Error::Shape(format!(
                "cannot hold out {fraction} of {n} samples as a nonempty split"
            )));
        }
        let head: Vec<usize> = (0..n - tail).collect();
        let rest: Vec<usize> = (n - tail..n).collect();
        Ok((
            self.subset(&head, format!("{}-train", self.name))?,
            self.subset(&rest, format!("{}-val", self.name))?,
        ))
    }

    /// Resizes every image and broadcasts grayscale to `channels`.
    pub fn to_network_input(&self, size: usize, channels: usize) -> Result<Dataset> {
        let images = self.images.map_images(|_, img| {
            let resized = if img.height() == size && img.width() == size {
                img.clone()
            } else {
                img.resize_bilinear(size, size)
            };
            match resized.channels() {
                c if c == channels => Ok(resized),
                1 => resized.broadcast_channels(channels),
                c => Err(Error::ChannelMismatch {
                    expected: channels,
                    actual: c,
                }),
            }
        })?;
        Dataset::new(self.name.clone(), self.num_classes, images)
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images.images()[i]
    }
}
