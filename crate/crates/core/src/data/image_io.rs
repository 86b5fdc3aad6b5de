use std::path::Path;

use image::{ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `[0, 1]` to a byte: clamp, scale by 255, round half away from zero.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8-bit RGB PNG as a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader.set_format(ImageFormat::Png);
    let img = reader.decode().map_err(img_err)?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::Data(format!(
                "{}: expected 8-bit RGB, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

/// Writes a `(1, 3, h, w)` tensor as an 8-bit RGB PNG, see [`quantize`].
pub fn save_image(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(
            "save_image",
            format!("expected (1, 3, h, w), got {s}"),
        ));
    }
    let out = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([0, 1, 2].map(|c| quantize(image.at(0, c, y, x))))
    });
    out.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
