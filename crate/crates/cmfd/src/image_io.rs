//! PNG codecs for images, tamper maps and label maps.

use std::path::Path;

use cmfd_core::{LabelMap, RgbImage, TamperMap};
use image::{DynamicImage, GrayImage as Luma8Image, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Largest number of regions accepted from an imported label map.
pub const MAX_IMPORTED_REGIONS: usize = 1024;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.into(), source })
}

fn save<P, C>(path: &Path, buf: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image { path: path.into(), source })
}

/// Any format the `image` crate decodes, converted to 8-bit RGB.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = open(path.as_ref())?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbImage::from_vec(w, h, img.into_raw())?)
}

pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| Error::Format("RGB buffer does not match its dimensions".into()))?;
    save(path.as_ref(), &buf)
}

/// Writes set pixels as 255 and the rest as 0.
pub fn save_mask(path: impl AsRef<Path>, mask: &TamperMap) -> Result<()> {
    let data = mask.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf = Luma8Image::from_raw(mask.width as u32, mask.height as u32, data)
        .ok_or_else(|| Error::Format("mask buffer does not match its dimensions".into()))?;
    save(path.as_ref(), &buf)
}

/// Reads a mask; luminance above 127 is set.
pub fn load_mask(path: impl AsRef<Path>) -> Result<TamperMap> {
    let img = open(path.as_ref())?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(TamperMap::from_vec(w, h, img.into_raw().into_iter().map(|v| v > 127).collect())?)
}

/// Writes labels as 16-bit grayscale values.
pub fn save_labelmap(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let data = labels
        .labels
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit 16 bits"))))
        .collect::<Result<Vec<u16>>>()?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(labels.width as u32, labels.height as u32, data)
        .ok_or_else(|| Error::Format("label buffer does not match its dimensions".into()))?;
    save(path.as_ref(), &buf)
}

/// Reads a grayscale label PNG and relabels its values densely, keeping
/// their order.
pub fn load_labelmap(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u32> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Format(format!("{}: label maps must be grayscale, got {:?}", path.display(), other.color())))
        }
    };
    let map = LabelMap::densify(w, h, &raw)?;
    if map.n_labels > MAX_IMPORTED_REGIONS {
        return Err(Error::Format(format!(
            "{}: {} regions exceeds the limit of {MAX_IMPORTED_REGIONS}",
            path.display(),
            map.n_labels
        )));
    }
    Ok(map)
}
