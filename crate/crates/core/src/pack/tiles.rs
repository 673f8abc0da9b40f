//! Token accounting for tiled images and whole samples.

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;

pub const TILE_SIZE: u64 = 448;
pub const TOKENS_PER_TILE: u64 = 256;
pub const DEFAULT_MAX_TILES: u32 = 12;

/// Rows x cols decomposition of an image into 448px tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileGrid {
    pub rows: u32,
    pub cols: u32,
}

impl TileGrid {
    pub const SINGLE: TileGrid = TileGrid { rows: 1, cols: 1 };

    pub fn tiles(self) -> u64 {
        u64::from(self.rows) * u64::from(self.cols)
    }
}

/// All grids with `rows * cols <= max_tiles`, ordered by tile count then rows.
pub fn candidate_grids(max_tiles: u32) -> Vec<TileGrid> {
    let mut grids: Vec<TileGrid> = (1..=max_tiles)
        .flat_map(|rows| (1..=max_tiles / rows).map(move |cols| TileGrid { rows, cols }))
        .collect();
    grids.sort_by_key(|g| (g.tiles(), g.rows));
    grids
}

/// Pick the grid whose aspect ratio (cols/rows) is closest in log space to the
/// image's width/height. Among equally close grids the larger one wins only
/// when the image area exceeds the current choice's tiled area.
pub fn select_tile_grid(width: u32, height: u32, max_tiles: u32) -> TileGrid {
    if width == 0 || height == 0 || max_tiles == 0 {
        return TileGrid::SINGLE;
    }
    let target = (f64::from(width) / f64::from(height)).ln();
    let area = u64::from(width) * u64::from(height);
    let mut best = TileGrid::SINGLE;
    let mut best_err = f64::INFINITY;
    for grid in candidate_grids(max_tiles) {
        let err = (target - (f64::from(grid.cols) / f64::from(grid.rows)).ln()).abs();
        if err < best_err - 1e-12 {
            best = grid;
            best_err = err;
        } else if (err - best_err).abs() <= 1e-12
            && grid.tiles() > best.tiles()
            && area > best.tiles() * TILE_SIZE * TILE_SIZE
        {
            best = grid;
        }
    }
    best
}

/// Tiles plus one thumbnail tile, 256 tokens each.
pub fn estimate_image_tokens(grid: TileGrid) -> u64 {
    (grid.tiles() + 1) * TOKENS_PER_TILE
}

/// Counts text tokens for length estimation.
pub trait TokenCounter: Sync {
    fn count(&self, text: &str) -> u64;
}

/// Approximates one token per four characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl TokenCounter for CharTokenizer {
    fn count(&self, text: &str) -> u64 {
        (text.chars().count() as u64).div_ceil(4)
    }
}

impl<F: Fn(&str) -> u64 + Sync> TokenCounter for F {
    fn count(&self, text: &str) -> u64 {
        self(text)
    }
}

/// Stored `token_length` when present, otherwise text tokens plus tiled image
/// tokens.
pub fn estimate_sample_length(sample: &Sample, tokenizer: &dyn TokenCounter) -> u64 {
    if let Some(n) = sample.token_length {
        return n;
    }
    let text: u64 = sample.turns.iter().map(|t| tokenizer.count(&t.text)).sum();
    let images: u64 = sample
        .images
        .iter()
        .map(|img| {
            let grid = match (img.width, img.height) {
                (Some(w), Some(h)) if w > 0 && h > 0 => select_tile_grid(w, h, DEFAULT_MAX_TILES),
                _ => {
                    log::warn!(
                        "sample {}: image {} has no dimensions, assuming a 1x1 grid",
                        sample.id,
                        img.path
                    );
                    TileGrid::SINGLE
                }
            };
            estimate_image_tokens(grid)
        })
        .sum();
    text + images
}
