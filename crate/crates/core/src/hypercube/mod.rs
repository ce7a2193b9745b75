//! Hyperspectral data cubes: wavelength axis, validity mask, tiling and file I/O.
//!
//! Storage is band-sequential: element `(x, y, b)` lives at
//! `b * height * width + y * width + x`, where `x` runs along the width.
//! Removed (background) pixels hold `NaN` in every band and are flagged in
//! the mask; every reduction in this crate skips them.

mod io;

pub use io::{load_cube, save_cube, CubeFormat};

use crate::error::{Error, Result};

/// Value stored in every band of a removed pixel.
pub const SENTINEL: f64 = f64::NAN;

/// Band-centre wavelengths in nanometres, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct WavelengthAxis {
    values: Vec<f64>,
}

impl WavelengthAxis {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Axis(format!(
                "wavelength {} at index {i} is not finite and positive",
                values[i]
            )));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Axis(format!(
                "wavelengths not strictly increasing at index {}: {} -> {}",
                i + 1,
                values[i],
                values[i + 1]
            )));
        }
        Ok(Self { values })
    }

    /// `count` evenly spaced wavelengths from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Ok(Self { values: Vec::new() });
        }
        if count == 1 {
            return Self::new(vec![start]);
        }
        let step = (end - start) / (count - 1) as f64;
        Self::new((0..count).map(|i| start + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the band whose centre is closest to `nm`; ties go to the lower index.
    pub fn nearest(&self, nm: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &w) in self.values.iter().enumerate() {
            let d = (w - nm).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// A `height x width x bands` reflectance cube.
#[derive(Debug, Clone)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
    axis: WavelengthAxis,
    mask: Vec<bool>,
}

impl PartialEq for HyperCube {
    /// Bitwise comparison, so sentinel pixels compare equal to themselves.
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bands == other.bands
            && self.axis == other.axis
            && self.mask == other.mask
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl HyperCube {
    /// Builds a cube from band-sequential data. Pixels whose every band is
    /// `NaN` are flagged as removed.
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f64>,
        axis: WavelengthAxis,
    ) -> Result<Self> {
        let bands = axis.len();
        if data.len() != height * width * bands {
            return Err(Error::Dimension(format!(
                "data length {} != {height} x {width} x {bands}",
                data.len()
            )));
        }
        let plane = height * width;
        let mask = (0..plane)
            .map(|p| bands == 0 || !(0..bands).all(|b| data[b * plane + p].is_nan()))
            .collect();
        Ok(Self {
            height,
            width,
            bands,
            data,
            axis,
            mask,
        })
    }

    /// Builds a cube by evaluating `f(x, y, b)` for every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        axis: WavelengthAxis,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let bands = axis.len();
        let mut data = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, b));
                }
            }
        }
        Self::new(height, width, data, axis)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    /// Raw band-sequential data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Per-pixel validity, row-major; `true` means foreground.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, b: usize) -> usize {
        b * self.height * self.width + y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, b: usize) -> f64 {
        self.data[self.index(x, y, b)]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Sets every band of pixel `(x, y)` to the sentinel and clears its mask bit.
    pub fn mask_pixel(&mut self, x: usize, y: usize) {
        let plane = self.height * self.width;
        let p = y * self.width + x;
        for b in 0..self.bands {
            self.data[b * plane + p] = SENTINEL;
        }
        self.mask[p] = false;
    }

    /// Spectrum of pixel `(x, y)`; all-sentinel when the pixel is masked.
    pub fn pixel_spectrum(&self, x: usize, y: usize) -> Result<Vec<f64>> {
        if x >= self.width || y >= self.height {
            return Err(Error::Index(format!(
                "pixel ({x}, {y}) outside {}x{} cube",
                self.width, self.height
            )));
        }
        if !self.is_valid(x, y) {
            return Ok(vec![SENTINEL; self.bands]);
        }
        Ok((0..self.bands).map(|b| self.get(x, y, b)).collect())
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean spectrum over foreground pixels, skipping sentinel entries per
    /// band. Bands with no finite value yield the sentinel.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        (0..self.bands)
            .map(|b| {
                let (sum, n) = self.data[b * plane..(b + 1) * plane]
                    .iter()
                    .zip(&self.mask)
                    .filter(|(v, &m)| m && !v.is_nan())
                    .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
                if n == 0 {
                    SENTINEL
                } else {
                    sum / n as f64
                }
            })
            .collect()
    }

    /// Sub-cube with top-left corner `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<HyperCube> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Index(format!(
                "window {w}x{h} at ({x0}, {y0}) exceeds {}x{} cube",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.bands);
        for b in 0..self.bands {
            for y in y0..y0 + h {
                let start = self.index(x0, y, b);
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        let mut mask = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            mask.extend_from_slice(&self.mask[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(HyperCube {
            height: h,
            width: w,
            bands: self.bands,
            data,
            axis: self.axis.clone(),
            mask,
        })
    }

    /// Copy restricted to the given band indices, in the given order.
    pub fn select_bands(&self, indices: &[usize]) -> Result<HyperCube> {
        let plane = self.height * self.width;
        let mut data = Vec::with_capacity(plane * indices.len());
        let mut wl = Vec::with_capacity(indices.len());
        for &b in indices {
            if b >= self.bands {
                return Err(Error::Index(format!("band {b} >= {}", self.bands)));
            }
            data.extend_from_slice(&self.data[b * plane..(b + 1) * plane]);
            wl.push(self.axis.values[b]);
        }
        Ok(HyperCube {
            height: self.height,
            width: self.width,
            bands: indices.len(),
            data,
            axis: WavelengthAxis { values: wl },
            mask: self.mask.clone(),
        })
    }
}

/// One tile cut from a parent cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub cube: HyperCube,
    /// Column of the tile's top-left pixel in the parent.
    pub origin_x: usize,
    /// Row of the tile's top-left pixel in the parent.
    pub origin_y: usize,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TileSet {
    pub tiles: Vec<Tile>,
}

impl TileSet {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Assigns `label` to every tile.
    pub fn with_label(mut self, label: usize) -> Self {
        for t in &mut self.tiles {
            t.label = Some(label);
        }
        self
    }
}

/// Cuts `cube` into `tile_size` squares in row-major order. Tiles that would
/// cross the right or bottom edge are dropped.
pub fn crop_tiles(cube: &HyperCube, tile_size: usize) -> Result<TileSet> {
    if tile_size == 0 || tile_size > cube.height.min(cube.width) {
        return Err(Error::Dimension(format!(
            "tile size {tile_size} invalid for {}x{} cube",
            cube.width, cube.height
        )));
    }
    let mut tiles = Vec::new();
    for ty in 0..cube.height / tile_size {
        for tx in 0..cube.width / tile_size {
            let (x0, y0) = (tx * tile_size, ty * tile_size);
            tiles.push(Tile {
                cube: cube.window(x0, y0, tile_size, tile_size)?,
                origin_x: x0,
                origin_y: y0,
                label: None,
            });
        }
    }
    Ok(TileSet { tiles })
}
