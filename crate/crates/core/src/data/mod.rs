//! Image and mask files, dataset manifests, and the synthetic small-object
//! generator.

mod manifest;
pub mod netpbm;
mod synthetic;

use std::path::Path;

pub use manifest::{split_manifest, Manifest, ManifestEntry, Split};
pub use netpbm::{read_image, read_mask, write_image};
pub use synthetic::{generate_synthetic, render_synthetic, synthesize, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, Tensor};

/// One image (`[3, H, W]`, values in [0, 1]) with its binary mask
/// (`[1, H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        match (image.shape(), mask.shape()) {
            (&[3, h, w], &[1, mh, mw]) if h == mh && w == mw => {}
            (a, b) => {
                return Err(Error::Data(format!(
                    "sample {id}: image {a:?} and mask {b:?} do not pair"
                )))
            }
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("sample {id}: mask is not binary")));
        }
        Ok(Sample { id, image, mask })
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }

    pub fn size_ratio(&self) -> f64 {
        crate::size::size_ratio(&self.mask)
    }
}

pub fn load_sample(id: &str, image: impl AsRef<Path>, mask: impl AsRef<Path>) -> Result<Sample> {
    let img = read_image(image.as_ref())?;
    if img.shape()[0] != 3 {
        return Err(Error::Data(format!("{}: image must be P6", image.as_ref().display())));
    }
    Sample::new(id, img, read_mask(mask)?)
}

/// Resize image (bilinear) and mask (bilinear, then `>= 0.5`).
pub fn resize_sample(sample: &Sample, extent: (usize, usize)) -> Result<Sample> {
    let (h, w) = extent;
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::invalid(format!("resize target {h}x{w} is not a positive multiple of 16")));
    }
    if sample.extent() == extent {
        return Ok(sample.clone());
    }
    let (image, mask) = resize_pair(&sample.image, &sample.mask, extent)?;
    Ok(Sample {
        id: sample.id.clone(),
        image,
        mask,
    })
}

/// Resize image and mask tensors of any leading layout (`[C, H, W]` or
/// `[N, C, H, W]`), re-binarizing the mask at 0.5.
pub fn resize_pair(image: &Tensor<f32>, mask: &Tensor<f32>, extent: (usize, usize)) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let lift = |t: &Tensor<f32>| -> Result<(Tensor<f32>, bool)> {
        match t.rank() {
            3 => {
                let s = t.shape();
                Ok((t.clone().reshape(&[1, s[0], s[1], s[2]])?, true))
            }
            4 => Ok((t.clone(), false)),
            _ => Err(Error::shape(format!("cannot resize tensor of shape {:?}", t.shape()))),
        }
    };
    let drop = |t: Tensor<f32>, squeeze: bool| -> Result<Tensor<f32>> {
        if squeeze {
            let s = t.shape()[1..].to_vec();
            t.reshape(&s)
        } else {
            Ok(t)
        }
    };
    let (img, si) = lift(image)?;
    let (msk, sm) = lift(mask)?;
    let img = resize_bilinear(&img, extent.0, extent.1)?;
    let msk = resize_bilinear(&msk, extent.0, extent.1)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok((drop(img, si)?, drop(msk, sm)?))
}

/// Stack samples into `[N, 3, H, W]` images and `[N, 1, H, W]` masks.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let lift = |t: &Tensor<f32>| {
        let s = t.shape();
        t.clone().reshape(&[1, s[0], s[1], s[2]])
    };
    let images = samples.iter().map(|s| lift(&s.image)).collect::<Result<Vec<_>>>()?;
    let masks = samples.iter().map(|s| lift(&s.mask)).collect::<Result<Vec<_>>>()?;
    Ok((Tensor::stack_batch(&images)?, Tensor::stack_batch(&masks)?))
}
