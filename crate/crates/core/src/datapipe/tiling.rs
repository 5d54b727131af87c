use super::{LabelRaster, Raster, ValidityMask};
use crate::error::{Error, Result};
use crate::loss::GroundMask;
use crate::ndtensor::{Scalar, Tensor};

/// Non-overlapping square tiling of a raster; the last row and column of
/// tiles are padded up to full size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TileGrid {
    pub fn new(height: usize, width: usize, tile_size: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!("cannot tile a {height}x{width} raster")));
        }
        if tile_size == 0 {
            return Err(Error::Argument("tile size must be positive".into()));
        }
        Ok(TileGrid {
            tile_size,
            height,
            width,
            rows: height.div_ceil(tile_size),
            cols: width.div_ceil(tile_size),
        })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// Padding rows added below the raster.
    pub fn pad_bottom(&self) -> usize {
        self.rows * self.tile_size - self.height
    }

    pub fn pad_right(&self) -> usize {
        self.cols * self.tile_size - self.width
    }

    /// Pixel origins `(row, col)` of every tile, row-major.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r * self.tile_size, c * self.tile_size)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub year: String,
    /// Pixel row of the tile's top-left corner in the source raster.
    pub row: usize,
    pub col: usize,
}

/// One training or inference tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `(band, time, S, S)`; zero in the padding.
    pub cube: Tensor<f32>,
    /// Class index per pixel (row-major `S × S`); 0 in the padding.
    pub labels: Vec<u8>,
    /// `false` at excluded pixels and in the padding.
    pub mask: Vec<bool>,
    pub provenance: Provenance,
}

impl Example {
    pub fn tile_size(&self) -> usize {
        self.cube.shape()[2]
    }

    /// One-hot reference and validity for this single example.
    pub fn ground_mask<T: Scalar>(&self, classes: usize) -> Result<GroundMask<T>> {
        let s = self.tile_size();
        GroundMask::from_labels(&self.labels, &self.mask, [1, s, s], classes)
    }
}

/// Cuts `(band, time, H, W)` data, labels and mask into non-overlapping
/// `tile_size` squares. Padding is zero and marked invalid.
pub fn tile(
    cube: &Tensor<f32>,
    labels: &LabelRaster,
    mask: &ValidityMask,
    tile_size: usize,
    year: &str,
) -> Result<Vec<Example>> {
    let [bands, steps, h, w] = cube.dims::<4>("cube")?;
    let grid = TileGrid::new(h, w, tile_size)?;
    for (name, r) in [("labels", (labels.height, labels.width)), ("mask", (mask.height, mask.width))] {
        if r != (h, w) {
            return Err(Error::dim(name, format!("{}x{} raster for a {h}x{w} cube", r.0, r.1)));
        }
    }
    let s = tile_size;
    let src = cube.data();
    let mut out = Vec::with_capacity(grid.count());
    for (r0, c0) in grid.origins() {
        let rows = s.min(h - r0);
        let cols = s.min(w - c0);
        let mut data = vec![0.0f32; bands * steps * s * s];
        for bt in 0..bands * steps {
            for y in 0..rows {
                let from = &src[(bt * h + r0 + y) * w + c0..][..cols];
                data[(bt * s + y) * s..][..cols].copy_from_slice(from);
            }
        }
        let mut tile_labels = vec![0u8; s * s];
        let mut tile_mask = vec![false; s * s];
        for y in 0..rows {
            let at = (r0 + y) * w + c0;
            tile_labels[y * s..][..cols].copy_from_slice(&labels.data[at..][..cols]);
            tile_mask[y * s..][..cols].copy_from_slice(&mask.data[at..][..cols]);
        }
        out.push(Example {
            cube: Tensor::new(vec![bands, steps, s, s], data)?,
            labels: tile_labels,
            mask: tile_mask,
            provenance: Provenance {
                year: year.to_string(),
                row: r0,
                col: c0,
            },
        });
    }
    Ok(out)
}

/// Writes per-tile `(channels, S, S)` planes into a `(channels, H, W)`
/// raster, cropping padding. Tiles are `(origin_row, origin_col, data)`.
pub fn stitch<T: Copy + Default>(
    grid: &TileGrid,
    channels: usize,
    tiles: &[(usize, usize, &[T])],
) -> Result<Vec<T>> {
    let (h, w, s) = (grid.height, grid.width, grid.tile_size);
    let mut out = vec![T::default(); channels * h * w];
    for &(r0, c0, data) in tiles {
        if data.len() != channels * s * s {
            return Err(Error::dim("tile", format!("{} values for {channels}x{s}x{s}", data.len())));
        }
        if r0 >= h || c0 >= w {
            return Err(Error::Argument(format!("tile origin ({r0}, {c0}) outside {h}x{w}")));
        }
        let rows = s.min(h - r0);
        let cols = s.min(w - c0);
        for c in 0..channels {
            for y in 0..rows {
                out[(c * h + r0 + y) * w + c0..][..cols]
                    .copy_from_slice(&data[(c * s + y) * s..][..cols]);
            }
        }
    }
    Ok(out)
}

/// Reassembles tiles produced by [`tile`] into the original rasters.
pub fn untile(
    examples: &[Example],
    height: usize,
    width: usize,
) -> Result<(Tensor<f32>, LabelRaster, ValidityMask)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Argument("no tiles to reassemble".into()))?;
    let [bands, steps, s, _] = first.cube.dims::<4>("tile")?;
    let grid = TileGrid::new(height, width, s)?;
    let cubes: Vec<_> = examples
        .iter()
        .map(|e| (e.provenance.row, e.provenance.col, e.cube.data()))
        .collect();
    let labels: Vec<_> = examples
        .iter()
        .map(|e| (e.provenance.row, e.provenance.col, e.labels.as_slice()))
        .collect();
    let masks: Vec<_> = examples
        .iter()
        .map(|e| (e.provenance.row, e.provenance.col, e.mask.as_slice()))
        .collect();
    Ok((
        Tensor::new(vec![bands, steps, height, width], stitch(&grid, bands * steps, &cubes)?)?,
        Raster::new(height, width, stitch(&grid, 1, &labels)?)?,
        Raster::new(height, width, stitch(&grid, 1, &masks)?)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_region_tiling_arithmetic() {
        let grid = TileGrid::new(1700, 1700, 128).unwrap();
        assert_eq!((grid.rows, grid.cols), (14, 14));
        assert_eq!(grid.count(), 196);
        assert_eq!(grid.pad_bottom(), 92);
        assert_eq!(grid.pad_right(), 92);
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let grid = TileGrid::new(128, 128, 128).unwrap();
        assert_eq!(grid.count(), 1);
        assert_eq!(grid.pad_bottom(), 0);
    }

    #[test]
    fn empty_raster_is_argument_error() {
        assert!(matches!(TileGrid::new(0, 5, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn padding_is_zero_and_invalid() {
        let cube = Tensor::filled(&[1, 1, 3, 3], 1.0f32);
        let labels = Raster::filled(3, 3, 2u8);
        let mask = Raster::filled(3, 3, true);
        let tiles = tile(&cube, &labels, &mask, 2, "2018").unwrap();
        assert_eq!(tiles.len(), 4);
        let corner = &tiles[3];
        assert_eq!(corner.provenance, Provenance { year: "2018".into(), row: 2, col: 2 });
        assert_eq!(corner.mask, vec![true, false, false, false]);
        assert_eq!(corner.cube.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(corner.labels, vec![2, 0, 0, 0]);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (h, w) = (13, 9);
        let cube = Tensor::from_fn(&[2, 3, h, w], |i| (i as f32).sin());
        let labels = Raster::new(h, w, (0..h * w).map(|i| (i % 3) as u8).collect()).unwrap();
        let mask = Raster::new(h, w, (0..h * w).map(|i| i % 5 != 0).collect()).unwrap();
        let tiles = tile(&cube, &labels, &mask, 4, "y").unwrap();
        let (c2, l2, m2) = untile(&tiles, h, w).unwrap();
        assert_eq!(c2, cube);
        assert_eq!(l2, labels);
        assert_eq!(m2, mask);
    }
}
