//! Pixel-level compositing core.
//!
//! Everything here is a pure function over 8-bit RGB rasters and binary
//! masks: extracting a bird onto a black background, filling the bird region
//! by diffusion, resizing, and the disjoint-support overlay that pastes a
//! bird onto a habitat background. Overlay arithmetic runs in 16-bit
//! intermediates so the support check, not saturation, is the overflow guard.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("only-bird image has non-black pixels outside the mask (first at {x},{y})")]
    SupportViolation { x: u32, y: u32 },
    #[error("mask covers the entire image, nothing to diffuse from")]
    FullMask,
    #[error("target dimensions must be at least 1x1")]
    ZeroDimension,
    #[error("inpaint iterations must be at least 1")]
    ZeroIterations,
    #[error("raster io for {path}: {source}")]
    Io {
        path: String,
        source: image::ImageError,
    },
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize * 3);
        Self {
            width,
            height,
            data,
        }
    }

    /// Solid-color image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn load(path: &Path) -> Result<Self, CompositeError> {
        let img = image::open(path)
            .map_err(|source| CompositeError::Io {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        Ok(Self::new(img.width(), img.height(), img.into_raw()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CompositeError> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("raster invariant: data length matches dimensions");
        buf.save(path).map_err(|source| CompositeError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Binary mask paired with an image; values are strictly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        assert!(data.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(value <= 1);
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        debug_assert!(value <= 1);
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Decode a single-channel 8-bit raster into a mask.
    ///
    /// Datasets ship 8-bit masks; any source value above 127 maps to 1.
    pub fn load(path: &Path) -> Result<Self, CompositeError> {
        let img = image::open(path)
            .map_err(|source| CompositeError::Io {
                path: path.display().to_string(),
                source,
            })?
            .to_luma8();
        let (w, h) = (img.width(), img.height());
        let data = img.into_raw().iter().map(|&v| (v > 127) as u8).collect();
        Ok(Self::new(w, h, data))
    }

    /// Save as an 8-bit grayscale raster (1 -> 255, 0 -> 0).
    pub fn save(&self, path: &Path) -> Result<(), CompositeError> {
        let raw: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        let buf: image::GrayImage = image::ImageBuffer::from_raw(self.width, self.height, raw)
            .expect("mask invariant: data length matches dimensions");
        buf.save(path).map_err(|source| CompositeError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn check_dims(aw: u32, ah: u32, bw: u32, bh: u32) -> Result<(), CompositeError> {
    if aw != bw || ah != bh {
        return Err(CompositeError::DimensionMismatch(aw, ah, bw, bh));
    }
    Ok(())
}

/// Keep the bird pixels, blacken everything else.
///
/// `out(p) = image(p)` where `mask(p) = 1`, else `(0,0,0)`.
pub fn extract_only_bird(
    image: &RasterImage,
    mask: &BinaryMask,
) -> Result<RasterImage, CompositeError> {
    check_dims(image.width, image.height, mask.width, mask.height)?;
    let mut data = Vec::with_capacity(image.data.len());
    for (px, &m) in image.data.chunks_exact(3).zip(&mask.data) {
        if m == 1 {
            data.extend_from_slice(px);
        } else {
            data.extend_from_slice(&[0, 0, 0]);
        }
    }
    Ok(RasterImage::new(image.width, image.height, data))
}

/// Paste a bird-on-black image onto a habitat background.
///
/// `out(p) = only_bird(p) + round(habitat(p) * (1 - mask(p)))`. The addends
/// have disjoint support, so this is the bird inside the mask and the habitat
/// outside it. A non-black only-bird pixel outside the mask is rejected as
/// [`CompositeError::SupportViolation`] rather than clamped.
pub fn overlay(
    only_bird: &RasterImage,
    habitat: &RasterImage,
    mask: &BinaryMask,
) -> Result<RasterImage, CompositeError> {
    check_dims(
        only_bird.width,
        only_bird.height,
        habitat.width,
        habitat.height,
    )?;
    check_dims(only_bird.width, only_bird.height, mask.width, mask.height)?;

    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) == 0 && only_bird.pixel(x, y) != [0, 0, 0] {
                return Err(CompositeError::SupportViolation { x, y });
            }
        }
    }

    let mut data = Vec::with_capacity(only_bird.data.len());
    for ((bird_px, hab_px), &m) in only_bird
        .data
        .chunks_exact(3)
        .zip(habitat.data.chunks_exact(3))
        .zip(&mask.data)
    {
        let keep = u16::from(1 - m);
        for c in 0..3 {
            let v = u16::from(bird_px[c]) + u16::from(hab_px[c]) * keep;
            debug_assert!(v <= 255);
            data.push(v as u8);
        }
    }
    Ok(RasterImage::new(only_bird.width, only_bird.height, data))
}

/// Fill the masked region by neighbor-averaging diffusion from the boundary.
///
/// Unknown pixels are filled in onion-peel order (each peel sets every
/// unknown pixel that touches a known one to the mean of its known
/// 4-neighbors), then `iterations` Jacobi relaxation sweeps re-average the
/// masked region against its 4-neighbors. Unmasked pixels are never touched.
pub fn inpaint_fallback(
    image: &RasterImage,
    mask: &BinaryMask,
    iterations: usize,
) -> Result<RasterImage, CompositeError> {
    check_dims(image.width, image.height, mask.width, mask.height)?;
    if iterations == 0 {
        return Err(CompositeError::ZeroIterations);
    }
    let n = image.width as usize * image.height as usize;
    if mask.count_ones() == n {
        return Err(CompositeError::FullMask);
    }
    if mask.count_ones() == 0 {
        return Ok(image.clone());
    }

    let w = image.width as usize;
    let h = image.height as usize;
    let mut vals: Vec<[f64; 3]> = image
        .data
        .chunks_exact(3)
        .map(|px| [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])])
        .collect();
    let mut known: Vec<bool> = mask.data.iter().map(|&m| m == 0).collect();

    let neighbors = |idx: usize| {
        let (x, y) = (idx % w, idx / w);
        let mut out = [usize::MAX; 4];
        let mut k = 0;
        if x > 0 {
            out[k] = idx - 1;
            k += 1;
        }
        if x + 1 < w {
            out[k] = idx + 1;
            k += 1;
        }
        if y > 0 {
            out[k] = idx - w;
            k += 1;
        }
        if y + 1 < h {
            out[k] = idx + w;
            k += 1;
        }
        (out, k)
    };

    // Onion-peel fill: every unknown pixel adjacent to a known one takes the
    // mean of its known neighbors, evaluated against the state at peel start.
    let mut remaining: Vec<usize> = (0..n).filter(|&i| !known[i]).collect();
    while !remaining.is_empty() {
        let snapshot = vals.clone();
        let mut filled_now = Vec::new();
        for &idx in &remaining {
            let (nb, k) = neighbors(idx);
            let mut sum = [0.0f64; 3];
            let mut cnt = 0usize;
            for &j in nb.iter().take(k) {
                if known[j] {
                    for c in 0..3 {
                        sum[c] += snapshot[j][c];
                    }
                    cnt += 1;
                }
            }
            if cnt > 0 {
                vals[idx] = [
                    sum[0] / cnt as f64,
                    sum[1] / cnt as f64,
                    sum[2] / cnt as f64,
                ];
                filled_now.push(idx);
            }
        }
        debug_assert!(
            !filled_now.is_empty(),
            "mask is not full, a peel must progress"
        );
        for &idx in &filled_now {
            known[idx] = true;
        }
        remaining.retain(|&idx| !known[idx]);
    }

    // Jacobi relaxation over the masked region.
    let masked: Vec<usize> = mask
        .data
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| (m == 1).then_some(i))
        .collect();
    for _ in 0..iterations {
        let snapshot = vals.clone();
        for &idx in &masked {
            let (nb, k) = neighbors(idx);
            let mut sum = [0.0f64; 3];
            for &j in nb.iter().take(k) {
                for c in 0..3 {
                    sum[c] += snapshot[j][c];
                }
            }
            vals[idx] = [sum[0] / k as f64, sum[1] / k as f64, sum[2] / k as f64];
        }
    }

    let mut data = Vec::with_capacity(image.data.len());
    for (idx, v) in vals.iter().enumerate() {
        if known[idx] && mask.data[idx] == 0 {
            // Unmasked pixels stay bit-identical.
            let i = idx * 3;
            data.extend_from_slice(&image.data[i..i + 3]);
        } else {
            for &channel in v {
                data.push(channel.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(RasterImage::new(image.width, image.height, data))
}

/// Source coordinate for an output sample under the half-pixel-center
/// convention, clamped to the valid range.
#[inline]
fn src_coord(out_idx: u32, scale: f64, src_len: u32) -> f64 {
    let x = (f64::from(out_idx) + 0.5) * scale - 0.5;
    x.clamp(0.0, f64::from(src_len - 1))
}

/// Bilinear resize; idempotent at the source size.
pub fn resize(image: &RasterImage, w: u32, h: u32) -> Result<RasterImage, CompositeError> {
    if w == 0 || h == 0 {
        return Err(CompositeError::ZeroDimension);
    }
    if w == image.width && h == image.height {
        return Ok(image.clone());
    }
    let sx = f64::from(image.width) / f64::from(w);
    let sy = f64::from(image.height) / f64::from(h);
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for oy in 0..h {
        let fy = src_coord(oy, sy, image.height);
        let y0 = fy.floor() as u32;
        let y1 = (y0 + 1).min(image.height - 1);
        let wy = fy - f64::from(y0);
        for ox in 0..w {
            let fx = src_coord(ox, sx, image.width);
            let x0 = fx.floor() as u32;
            let x1 = (x0 + 1).min(image.width - 1);
            let wx = fx - f64::from(x0);
            let p00 = image.pixel(x0, y0);
            let p10 = image.pixel(x1, y0);
            let p01 = image.pixel(x0, y1);
            let p11 = image.pixel(x1, y1);
            for c in 0..3 {
                let top = f64::from(p00[c]) * (1.0 - wx) + f64::from(p10[c]) * wx;
                let bot = f64::from(p01[c]) * (1.0 - wx) + f64::from(p11[c]) * wx;
                let v = top * (1.0 - wy) + bot * wy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(RasterImage::new(w, h, data))
}

/// Nearest-neighbor mask resize; preserves binarity.
pub fn resize_mask(mask: &BinaryMask, w: u32, h: u32) -> Result<BinaryMask, CompositeError> {
    if w == 0 || h == 0 {
        return Err(CompositeError::ZeroDimension);
    }
    if w == mask.width && h == mask.height {
        return Ok(mask.clone());
    }
    let sx = f64::from(mask.width) / f64::from(w);
    let sy = f64::from(mask.height) / f64::from(h);
    let mut data = Vec::with_capacity(w as usize * h as usize);
    for oy in 0..h {
        let y = (((f64::from(oy) + 0.5) * sy).floor() as u32).min(mask.height - 1);
        for ox in 0..w {
            let x = (((f64::from(ox) + 0.5) * sx).floor() as u32).min(mask.width - 1);
            data.push(mask.get(x, y));
        }
    }
    Ok(BinaryMask::new(w, h, data))
}

/// Pluggable hole filler used by the no-bird perturbation and by augmentation
/// when a precomputed habitat image is not supplied.
pub trait Inpainter {
    fn inpaint(
        &self,
        image: &RasterImage,
        mask: &BinaryMask,
    ) -> Result<RasterImage, CompositeError>;
}

/// Built-in diffusion inpainter; see [`inpaint_fallback`].
#[derive(Debug, Clone, Copy)]
pub struct DiffusionInpainter {
    pub iterations: usize,
}

impl Default for DiffusionInpainter {
    fn default() -> Self {
        Self { iterations: 8 }
    }
}

impl Inpainter for DiffusionInpainter {
    fn inpaint(
        &self,
        image: &RasterImage,
        mask: &BinaryMask,
    ) -> Result<RasterImage, CompositeError> {
        inpaint_fallback(image, mask, self.iterations)
    }
}
