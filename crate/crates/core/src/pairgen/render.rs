//! Red-box visual prompt rendering.
//!
//! The outline is `w = max(2, round(0.003 * max(width, height)))` pixels
//! wide. Its centre line runs `w` pixels outside the box, so the stroke
//! covers distances `ceil(w/2) .. ceil(w/2) + w` from the box edge and never
//! touches the boxed glyphs. Near the image border the outer rectangle is
//! clamped to the image and the stroke drawn along the clamped edge.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};

use crate::corpus::BoundingBox;
use crate::error::{Error, Result};

pub const RED: Rgb<u8> = Rgb([255, 0, 0]);

pub fn stroke_width(width: u32, height: u32) -> u32 {
    let scaled = (0.003 * width.max(height) as f64).round() as u32;
    scaled.max(2)
}

/// Pixel footprint of the outline for one box on one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outline {
    /// Outer rectangle, exclusive on the right and bottom.
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
    pub stroke: u32,
}

impl Outline {
    pub fn for_box(bbox: &BoundingBox, width: u32, height: u32) -> Result<Self> {
        if !bbox.fits_within(width, height) {
            return Err(Error::BoxOutOfBounds {
                box_: bbox.as_array(),
                width,
                height,
            });
        }
        let stroke = stroke_width(width, height);
        let reach = stroke.div_ceil(2) + stroke - 1;
        Ok(Self {
            left: bbox.x_min.saturating_sub(reach),
            top: bbox.y_min.saturating_sub(reach),
            right: (bbox.x_max + reach).min(width),
            bottom: (bbox.y_max + reach).min(height),
            stroke,
        })
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        let inside_outer = x >= self.left && x < self.right && y >= self.top && y < self.bottom;
        if !inside_outer {
            return false;
        }
        let w = self.stroke;
        x < self.left + w || x + w >= self.right || y < self.top + w || y + w >= self.bottom
    }

    /// Middle pixel of the stroke on each side: top, bottom, left, right.
    pub fn midpoints(&self) -> [(u32, u32); 4] {
        let half = self.stroke / 2;
        let cx = (self.left + self.right - 1) / 2;
        let cy = (self.top + self.bottom - 1) / 2;
        [
            (cx, self.top + half),
            (cx, self.bottom - 1 - half),
            (self.left + half, cy),
            (self.right - 1 - half, cy),
        ]
    }

    pub fn pixel_count(&self) -> u64 {
        let w = (self.right - self.left) as u64;
        let h = (self.bottom - self.top) as u64;
        let s = self.stroke as u64;
        let inner_w = w.saturating_sub(2 * s);
        let inner_h = h.saturating_sub(2 * s);
        w * h - inner_w * inner_h
    }
}

/// Draws the outline onto an RGB image in place.
pub fn draw_red_box(image: &mut RgbImage, bbox: &BoundingBox) -> Result<Outline> {
    let outline = Outline::for_box(bbox, image.width(), image.height())?;
    for y in outline.top..outline.bottom {
        for x in outline.left..outline.right {
            if outline.contains(x, y) {
                image.put_pixel(x, y, RED);
            }
        }
    }
    Ok(outline)
}

/// PNG bytes for an RGB image. The encoder settings are fixed, so equal
/// pixels give equal bytes.
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new(&mut buf)
        .write_image(
            image.as_raw(),
            image.width(),
            image.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::ImageDecodeFailure {
            path: PathBuf::from("<png encoder>"),
            reason: e.to_string(),
        })?;
    Ok(buf.into_inner())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::ImageDecodeFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Writes `plain_image` with a red outline around `bbox` to `out` as 8-bit
/// RGB PNG.
pub fn render_visual_prompt(plain_image: &Path, bbox: &BoundingBox, out: &Path) -> Result<PathBuf> {
    let mut img = load_rgb(plain_image)?;
    draw_red_box(&mut img, bbox)?;
    let bytes = encode_png(&img)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stroke_formula() {
        assert_eq!(stroke_width(1000, 800), 3);
        assert_eq!(stroke_width(100, 100), 2);
        assert_eq!(stroke_width(800, 1000), 3);
        assert_eq!(stroke_width(2480, 3508), 11);
        // 0.003 * 500 = 1.5 rounds to 2
        assert_eq!(stroke_width(500, 10), 2);
    }

    #[test]
    fn band_sits_outside_box() {
        let b = BoundingBox::new(100, 100, 200, 150).unwrap();
        let o = Outline::for_box(&b, 1000, 800).unwrap();
        assert_eq!(o.stroke, 3);
        // distances 2..=4 outside each edge
        assert_eq!((o.left, o.top, o.right, o.bottom), (96, 96, 204, 154));
        assert!(!o.contains(99, 120));
        assert!(o.contains(98, 120));
        assert!(o.contains(97, 120));
        assert!(o.contains(96, 120));
        assert!(!o.contains(95, 120));
        assert!(o.contains(200 + 1, 120));
        assert!(o.contains(200 + 3, 120));
        assert!(!o.contains(200, 120));
        for x in b.x_min..b.x_max {
            for y in b.y_min..b.y_max {
                assert!(!o.contains(x, y));
            }
        }
        let counted = (0..1000u32)
            .flat_map(|x| (0..800u32).map(move |y| (x, y)))
            .filter(|&(x, y)| o.contains(x, y))
            .count() as u64;
        assert_eq!(counted, o.pixel_count());
    }

    #[test]
    fn edge_box_is_clamped() {
        let b = BoundingBox::new(0, 0, 10, 10).unwrap();
        let o = Outline::for_box(&b, 100, 100).unwrap();
        assert_eq!((o.left, o.top), (0, 0));
        for (x, y) in o.midpoints() {
            assert!(o.contains(x, y));
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let b = BoundingBox::new(0, 0, 101, 10).unwrap();
        assert!(matches!(
            Outline::for_box(&b, 100, 100),
            Err(Error::BoxOutOfBounds { .. })
        ));
    }

    #[test]
    fn midpoints_are_red() {
        let mut img = RgbImage::from_pixel(120, 90, Rgb([240, 240, 240]));
        let b = BoundingBox::new(30, 20, 70, 40).unwrap();
        let o = draw_red_box(&mut img, &b).unwrap();
        for (x, y) in o.midpoints() {
            assert_eq!(*img.get_pixel(x, y), RED, "({x},{y})");
        }
    }
}
