//! Image ingestion: decode, crop, resize to the model geometry, normalize.

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::INPUT_SIDE;
use crate::tensor::Tensor;

/// 8-bit RGB raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}×{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive, got {width}×{height}"
            )));
        }
        let expected = 3 * width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{width}×{height} RGB image needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(3 * width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Encode as PNG; used to persist and re-serve images losslessly.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("length checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// A user-chosen face region in source pixel coordinates. Offsets may be
/// negative or run past the image; the box is clamped to the image bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl CropBox {
    pub fn new(x: i64, y: i64, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// The intersection with a `width × height` image as `(x0, y0, x1, y1)`
    /// with exclusive upper bounds.
    pub fn clamp(&self, width: u32, height: u32) -> Result<(u32, u32, u32, u32)> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop box extents must be positive, got {}×{}",
                self.w, self.h
            )));
        }
        let x0 = self.x.clamp(0, width as i64);
        let y0 = self.y.clamp(0, height as i64);
        let x1 = (self.x + self.w as i64).clamp(0, width as i64);
        let y1 = (self.y + self.h as i64).clamp(0, height as i64);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidArgument(format!(
                "crop box {self:?} lies entirely outside the {width}×{height} image"
            )));
        }
        Ok((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
    }
}

/// Decode JPEG or PNG bytes to 8-bit RGB. Alpha is composited over white and
/// grayscale is replicated across the three channels.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let reader = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Decode(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Jpeg) => {}
        Some(other) => {
            return Err(Error::Decode(format!(
                "unsupported image format {other:?}; expected JPEG or PNG"
            )))
        }
        None => return Err(Error::Decode("unrecognized image format; expected JPEG or PNG".into())),
    }
    let decoded = reader.decode().map_err(|e| Error::Decode(e.to_string()))?;
    Ok(flatten_to_rgb(decoded))
}

fn flatten_to_rgb(decoded: DynamicImage) -> RgbImage {
    let (width, height) = (decoded.width(), decoded.height());
    let pixels = if decoded.color().has_alpha() {
        let rgba = decoded.to_rgba8();
        let mut out = Vec::with_capacity(3 * width as usize * height as usize);
        for px in rgba.pixels() {
            let a = px[3] as u32;
            for c in 0..3 {
                let v = (px[c] as u32 * a + 255 * (255 - a) + 127) / 255;
                out.push(v as u8);
            }
        }
        out
    } else {
        decoded.to_rgb8().into_raw()
    };
    RgbImage {
        width,
        height,
        pixels,
    }
}

/// Crop (if a box is given) and bilinearly resample to 224×224.
pub fn crop_and_resize(image: &RgbImage, crop: Option<&CropBox>) -> Result<RgbImage> {
    let (x0, y0, x1, y1) = match crop {
        Some(b) => b.clamp(image.width, image.height)?,
        None => (0, 0, image.width, image.height),
    };
    Ok(resize_region(image, x0, y0, x1 - x0, y1 - y0, INPUT_SIDE as u32, INPUT_SIDE as u32))
}

/// Half-pixel-centered bilinear resampling of the region
/// `[x0, x0+w) × [y0, y0+h)` to `out_w × out_h`, edges clamped.
fn resize_region(image: &RgbImage, x0: u32, y0: u32, w: u32, h: u32, out_w: u32, out_h: u32) -> RgbImage {
    let taps = |out: u32, src: u32| -> Vec<(usize, usize, f32)> {
        let scale = src as f32 / out as f32;
        (0..out)
            .map(|o| {
                let s = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src as usize - 1);
                (lo, hi, s - lo as f32)
            })
            .collect()
    };
    let xs = taps(out_w, w);
    let ys = taps(out_h, h);
    let stride = image.width as usize;
    let at = |x: usize, y: usize, c: usize| {
        image.pixels[3 * ((y0 as usize + y) * stride + x0 as usize + x) + c] as f32
    };
    let mut pixels = Vec::with_capacity(3 * out_w as usize * out_h as usize);
    for &(ya, yb, fy) in &ys {
        for &(xa, xb, fx) in &xs {
            for c in 0..3 {
                let top = at(xa, ya, c) * (1.0 - fx) + at(xb, ya, c) * fx;
                let bottom = at(xa, yb, c) * (1.0 - fx) + at(xb, yb, c) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage {
        width: out_w,
        height: out_h,
        pixels,
    }
}

/// Scale bytes to `[0, 1]` as a `224 × 224 × 3` tensor, channels R, G, B.
pub fn to_input_tensor(image: &RgbImage) -> Result<Tensor> {
    let side = INPUT_SIDE as u32;
    if image.width != side || image.height != side {
        return Err(Error::Shape(format!(
            "model input must be {side}×{side}, got {}×{}",
            image.width, image.height
        )));
    }
    Tensor::new(
        &[INPUT_SIDE, INPUT_SIDE, 3],
        image.pixels.iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

/// The whole pipeline: bytes to model input.
pub fn prepare_input(bytes: &[u8], crop: Option<&CropBox>) -> Result<Tensor> {
    to_input_tensor(&crop_and_resize(&decode_image(bytes)?, crop)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(img: DynamicImage, format: image::ImageFormat) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, format).unwrap();
        out.into_inner()
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [(x % 256) as u8, (y % 256) as u8, ((x + 2 * y) % 256) as u8]).unwrap()
    }

    /// Textbook bilinear in f64 over a crop copied out pixel by pixel.
    fn oracle_resize(src: &RgbImage, out: u32) -> RgbImage {
        let (w, h) = (src.width() as f64, src.height() as f64);
        RgbImage::from_fn(out, out, |ox, oy| {
            let sx = ((ox as f64 + 0.5) * w / out as f64 - 0.5).max(0.0).min(w - 1.0);
            let sy = ((oy as f64 + 0.5) * h / out as f64 - 0.5).max(0.0).min(h - 1.0);
            let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
            let (x1, y1) = ((x0 + 1).min(src.width() - 1), (y0 + 1).min(src.height() - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let mut px = [0u8; 3];
            for (c, slot) in px.iter_mut().enumerate() {
                let p = |x, y| src.pixel(x, y)[c] as f64;
                let v = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + p(x1, y0) * fx * (1.0 - fy)
                    + p(x0, y1) * (1.0 - fx) * fy
                    + p(x1, y1) * fx * fy;
                *slot = v.round() as u8;
            }
            px
        })
        .unwrap()
    }

    #[test]
    fn png_round_trip_is_exact() {
        let px = vec![255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30];
        let img = image::RgbImage::from_raw(2, 2, px.clone()).unwrap();
        let bytes = encode(DynamicImage::ImageRgb8(img), image::ImageFormat::Png);
        let decoded = decode_image(&bytes).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (2, 2));
        assert_eq!(decoded.pixels(), px.as_slice());
    }

    #[test]
    fn jpeg_uniform_color_within_tolerance() {
        let img = image::RgbImage::from_pixel(32, 24, image::Rgb([200, 120, 40]));
        let bytes = encode(DynamicImage::ImageRgb8(img), image::ImageFormat::Jpeg);
        let decoded = decode_image(&bytes).unwrap();
        for px in decoded.pixels().chunks(3) {
            for (got, want) in px.iter().zip([200u8, 120, 40]) {
                assert!(got.abs_diff(want) <= 3, "{px:?}");
            }
        }
    }

    #[test]
    fn alpha_over_white_and_gray_expansion() {
        let rgba = image::RgbaImage::from_raw(2, 1, vec![0, 0, 0, 0, 100, 50, 0, 255]).unwrap();
        let bytes = encode(DynamicImage::ImageRgba8(rgba), image::ImageFormat::Png);
        assert_eq!(decode_image(&bytes).unwrap().pixels(), &[255, 255, 255, 100, 50, 0]);

        let half = image::RgbaImage::from_raw(1, 1, vec![0, 0, 0, 128]).unwrap();
        let bytes = encode(DynamicImage::ImageRgba8(half), image::ImageFormat::Png);
        assert_eq!(decode_image(&bytes).unwrap().pixels(), &[127, 127, 127]);

        let gray = image::GrayImage::from_raw(2, 1, vec![7, 99]).unwrap();
        let bytes = encode(DynamicImage::ImageLuma8(gray), image::ImageFormat::Png);
        assert_eq!(decode_image(&bytes).unwrap().pixels(), &[7, 7, 7, 99, 99, 99]);
    }

    #[test]
    fn garbage_is_a_decode_error() {
        assert!(matches!(decode_image(b"hello, not an image"), Err(Error::Decode(_))));
        assert!(matches!(decode_image(&[]), Err(Error::Decode(_))));
        let mut png = encode(
            DynamicImage::ImageRgb8(image::RgbImage::new(8, 8)),
            image::ImageFormat::Png,
        );
        png.truncate(png.len() / 2);
        assert!(matches!(decode_image(&png), Err(Error::Decode(_))));
        let gif_header = b"GIF89a\x02\x00\x02\x00\x00\x00\x00;";
        assert!(matches!(decode_image(gif_header), Err(Error::Decode(_))));
    }

    #[test]
    fn identity_resize() {
        let img = gradient(224, 224);
        assert_eq!(crop_and_resize(&img, None).unwrap(), img);
    }

    #[test]
    fn uniform_downscale() {
        let img = RgbImage::filled(448, 448, [12, 200, 99]).unwrap();
        let out = crop_and_resize(&img, Some(&CropBox::new(0, 0, 448, 448))).unwrap();
        assert_eq!(out, RgbImage::filled(224, 224, [12, 200, 99]).unwrap());
    }

    #[test]
    fn crop_matches_two_step_oracle() {
        let img = gradient(300, 250);
        let out = crop_and_resize(&img, Some(&CropBox::new(10, 10, 100, 100))).unwrap();
        let cropped = RgbImage::from_fn(100, 100, |x, y| img.pixel(x + 10, y + 10)).unwrap();
        let want = oracle_resize(&cropped, 224);
        for (a, b) in out.pixels().iter().zip(want.pixels()) {
            assert!(a.abs_diff(*b) <= 1, "{a} vs {b}");
        }
    }

    #[test]
    fn crop_box_clamping() {
        let img = gradient(50, 40);
        let clamped = crop_and_resize(&img, Some(&CropBox::new(-10, -10, 40, 30))).unwrap();
        let inner = crop_and_resize(
            &RgbImage::from_fn(30, 20, |x, y| img.pixel(x, y)).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(clamped, inner);
        assert!(crop_and_resize(&img, Some(&CropBox::new(50, 0, 10, 10))).is_err());
        assert!(crop_and_resize(&img, Some(&CropBox::new(-20, 0, 20, 10))).is_err());
        assert!(crop_and_resize(&img, Some(&CropBox::new(0, 0, 0, 10))).is_err());
    }

    #[test]
    fn tensor_normalization() {
        let black = to_input_tensor(&RgbImage::filled(224, 224, [0, 0, 0]).unwrap()).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        let white = to_input_tensor(&RgbImage::filled(224, 224, [255; 3]).unwrap()).unwrap();
        assert!(white.data().iter().all(|&v| v == 1.0));
        let t = to_input_tensor(&RgbImage::filled(224, 224, [128, 64, 255]).unwrap()).unwrap();
        assert_eq!(t.shape(), &[224, 224, 3]);
        for (got, want) in t.data()[..3].iter().zip([0.501_960_8f64, 0.250_980_4, 1.0]) {
            assert!((*got as f64 - want).abs() < 1e-7);
        }
        assert!(to_input_tensor(&gradient(223, 224)).is_err());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let bytes = gradient(97, 61).to_png().unwrap();
        let crop = CropBox::new(5, 3, 40, 50);
        let a = prepare_input(&bytes, Some(&crop)).unwrap();
        let b = prepare_input(&bytes, Some(&crop)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn output_is_always_model_sized(
            w in 1u32..300, h in 1u32..300,
            x in -50i64..300, y in -50i64..300, bw in 1u32..400, bh in 1u32..400,
        ) {
            let img = gradient(w, h);
            let crop = CropBox::new(x, y, bw, bh);
            match crop_and_resize(&img, Some(&crop)) {
                Ok(out) => prop_assert_eq!((out.width(), out.height()), (224, 224)),
                Err(_) => prop_assert!(crop.clamp(w, h).is_err()),
            }
            let t = to_input_tensor(&crop_and_resize(&img, None).unwrap()).unwrap();
            prop_assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn normalization_is_monotone(a in any::<u8>(), b in any::<u8>()) {
            let t = to_input_tensor(&RgbImage::filled(224, 224, [a, b, 0]).unwrap()).unwrap();
            let (ta, tb) = (t.data()[0], t.data()[1]);
            prop_assert_eq!(a.cmp(&b), ta.partial_cmp(&tb).unwrap());
        }
    }
}
