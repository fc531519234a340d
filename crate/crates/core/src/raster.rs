//! Dense row-major 2D grids.
//!
//! Continuous pixel coordinates: pixel `(u, v)` covers `[u, u+1) × [v, v+1)`,
//! so its center is at `(u + 0.5, v + 0.5)`.

use std::path::Path;

use image::{GrayImage, Luma};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }
}

impl<T> Raster<T> {
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    /// Signed lookup; `None` outside the grid.
    #[inline]
    pub fn try_get(&self, u: i64, v: i64) -> Option<&T> {
        if u < 0 || v < 0 || u >= self.width as i64 || v >= self.height as i64 {
            None
        } else {
            Some(&self.data[v as usize * self.width + u as usize])
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

/// Axis-aligned pixel box in continuous coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    /// Tight box around the `true` pixels.
    pub fn from_mask(mask: &Raster<bool>) -> Option<Self> {
        let (mut umin, mut vmin, mut umax, mut vmax) = (usize::MAX, usize::MAX, 0, 0);
        for v in 0..mask.height() {
            for u in 0..mask.width() {
                if *mask.get(u, v) {
                    umin = umin.min(u);
                    umax = umax.max(u);
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
            }
        }
        (umin != usize::MAX).then(|| PixelBox {
            x: umin as f64,
            y: vmin as f64,
            w: (umax - umin + 1) as f64,
            h: (vmax - vmin + 1) as f64,
        })
    }
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Raster<bool>, image::ImageError> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Raster::from_vec(w as usize, h as usize, img.pixels().map(|p| p.0[0] > 127).collect()))
}

/// 8-bit grayscale PNG with 0 / 255 values.
pub fn write_mask_png(mask: &Raster<bool>, path: impl AsRef<Path>) -> Result<(), image::ImageError> {
    let mut img = GrayImage::new(mask.width() as u32, mask.height() as u32);
    for (i, p) in img.pixels_mut().enumerate() {
        *p = Luma([if mask.data()[i] { 255 } else { 0 }]);
    }
    img.save_with_format(path, image::ImageFormat::Png)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_bbox() {
        let mut m = Raster::filled(10, 8, false);
        *m.get_mut(2, 3) = true;
        *m.get_mut(5, 6) = true;
        assert_eq!(PixelBox::from_mask(&m), Some(PixelBox { x: 2.0, y: 3.0, w: 4.0, h: 4.0 }));
        assert_eq!(PixelBox::from_mask(&Raster::filled(3, 3, false)), None);
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Raster::from_vec(3, 2, vec![true, false, true, false, false, true]);
        write_mask_png(&m, &p).unwrap();
        assert_eq!(read_mask_png(&p).unwrap(), m);
    }
}
