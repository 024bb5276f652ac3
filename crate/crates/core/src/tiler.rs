//! Aspect-ratio-aware tiling of a page into a grid of square crops plus a
//! global view.
//!
//! The planner is pure geometry. [`write_crops`] is the optional pixel path.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TileError {
    #[error("page dimensions must be at least 1x1, got {width}x{height}")]
    EmptyPage { width: u32, height: u32 },
    #[error("tile side and tile budget must be at least 1")]
    BadBudget,
    #[error("image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PageGeometry {
    pub width: u32,
    pub height: u32,
}

impl PageGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self, TileError> {
        if width == 0 || height == 0 {
            return Err(TileError::EmptyPage { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Half-open pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub rows: u32,
    pub cols: u32,
    pub tile_side: u32,
    pub resized_width: u32,
    pub resized_height: u32,
    /// Row-major.
    pub crops: Vec<Rect>,
    pub includes_global: bool,
}

impl TileLayout {
    pub fn grid(rows: u32, cols: u32, tile_side: u32, includes_global: bool) -> Self {
        let mut layout = Self {
            rows,
            cols,
            tile_side,
            resized_width: cols * tile_side,
            resized_height: rows * tile_side,
            crops: Vec::new(),
            includes_global,
        };
        layout.crops = crop_coordinates(&layout);
        layout
    }

    pub fn without_global(mut self) -> Self {
        self.includes_global = false;
        self
    }

    pub fn tile_count(&self) -> u32 {
        self.rows * self.cols
    }
}

/// `max(x, 1/x)` for `x = (cols * height) / (rows * width)` as an exact
/// fraction. Its ordering equals the ordering of `|ln(cols/rows) - ln(width/height)|`.
fn aspect_error(rows: u32, cols: u32, page: PageGeometry) -> (u128, u128) {
    let grid = u128::from(cols) * u128::from(page.height);
    let pagew = u128::from(rows) * u128::from(page.width);
    if grid >= pagew {
        (grid, pagew)
    } else {
        (pagew, grid)
    }
}

fn cmp_fraction(a: (u128, u128), b: (u128, u128)) -> Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

/// Pick the grid whose aspect ratio is closest to the page's in log space,
/// preferring more tiles and then fewer rows on ties.
pub fn plan_layout(page: PageGeometry, tile_side: u32, max_tiles: u32) -> Result<TileLayout, TileError> {
    if tile_side == 0 || max_tiles == 0 {
        return Err(TileError::BadBudget);
    }
    if page.width == 0 || page.height == 0 {
        return Err(TileError::EmptyPage {
            width: page.width,
            height: page.height,
        });
    }
    let mut best = (1u32, 1u32);
    for rows in 1..=max_tiles {
        for cols in 1..=max_tiles / rows {
            let by_error = cmp_fraction(aspect_error(rows, cols, page), aspect_error(best.0, best.1, page));
            let better = match by_error {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => match (rows * cols).cmp(&(best.0 * best.1)) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => rows < best.0,
                },
            };
            if better {
                best = (rows, cols);
            }
        }
    }
    Ok(TileLayout::grid(best.0, best.1, tile_side, true))
}

/// Row-major crop rectangles over the resized canvas.
pub fn crop_coordinates(layout: &TileLayout) -> Vec<Rect> {
    let side = layout.tile_side;
    (0..layout.rows)
        .flat_map(|r| {
            (0..layout.cols).map(move |c| Rect {
                x: c * side,
                y: r * side,
                width: side,
                height: side,
            })
        })
        .collect()
}

pub fn visual_token_estimate(layout: &TileLayout, tokens_per_tile: u64) -> u64 {
    (u64::from(layout.tile_count()) + u64::from(layout.includes_global)) * tokens_per_tile
}

/// Page geometry after `quarter_turns` clockwise quarter turns. Turns are
/// taken modulo 4.
pub fn apply_rotation(page: PageGeometry, quarter_turns: i32) -> PageGeometry {
    if quarter_turns.rem_euclid(2) == 1 {
        PageGeometry {
            width: page.height,
            height: page.width,
        }
    } else {
        page
    }
}

/// Rotate, stretch to the layout canvas, and write `{row}_{col}.png` crops
/// plus `global.png` (the whole page at tile resolution) into `out_dir`.
pub fn write_crops(
    image_path: &Path,
    tile_side: u32,
    max_tiles: u32,
    quarter_turns: i32,
    out_dir: &Path,
) -> Result<(TileLayout, Vec<PathBuf>), TileError> {
    use image::imageops::FilterType;

    let img_err = |source| TileError::Image {
        path: image_path.display().to_string(),
        source,
    };
    let mut img = image::open(image_path).map_err(img_err)?;
    img = match quarter_turns.rem_euclid(4) {
        1 => img.rotate90(),
        2 => img.rotate180(),
        3 => img.rotate270(),
        _ => img,
    };
    let page = PageGeometry::new(img.width(), img.height())?;
    let layout = plan_layout(page, tile_side, max_tiles)?;
    std::fs::create_dir_all(out_dir).map_err(|source| TileError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let canvas = img.resize_exact(layout.resized_width, layout.resized_height, FilterType::Triangle);
    let mut written = Vec::new();
    let save = |im: &image::DynamicImage, path: PathBuf, written: &mut Vec<PathBuf>| {
        im.save(&path).map_err(|source| TileError::Image {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
        Ok::<_, TileError>(())
    };
    for (i, rect) in layout.crops.iter().enumerate() {
        let (r, c) = (i as u32 / layout.cols, i as u32 % layout.cols);
        let tile = canvas.crop_imm(rect.x, rect.y, rect.width, rect.height);
        save(&tile, out_dir.join(format!("{r}_{c}.png")), &mut written)?;
    }
    if layout.includes_global {
        let global = img.resize_exact(tile_side, tile_side, FilterType::Triangle);
        save(&global, out_dir.join("global.png"), &mut written)?;
    }
    Ok((layout, written))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn page(w: u32, h: u32) -> PageGeometry {
        PageGeometry::new(w, h).unwrap()
    }

    /// Direct enumeration using the log objective in floating point; ties
    /// within 1e-12 fall through to the tie-breaks.
    fn enumerate(p: PageGeometry, max_tiles: u32) -> (u32, u32) {
        let target = (p.width as f64 / p.height as f64).ln();
        let mut cands = Vec::new();
        for r in 1..=max_tiles {
            for c in 1..=max_tiles {
                if r * c <= max_tiles {
                    let err = ((c as f64 / r as f64).ln() - target).abs();
                    cands.push((err, r, c));
                }
            }
        }
        let min = cands.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
        let mut tied: Vec<_> = cands.into_iter().filter(|x| x.0 - min < 1e-12).collect();
        tied.sort_by(|a, b| (b.1 * b.2).cmp(&(a.1 * a.2)).then(a.1.cmp(&b.1)));
        (tied[0].1, tied[0].2)
    }

    #[test]
    fn square_page_budget_nine() {
        let l = plan_layout(page(1024, 1024), 336, 9).unwrap();
        assert_eq!((l.rows, l.cols), (3, 3));
        assert_eq!((l.resized_width, l.resized_height), (1008, 1008));
        assert!(l.includes_global);
    }

    #[test]
    fn wide_page() {
        let l = plan_layout(page(2048, 1024), 336, 8).unwrap();
        assert_eq!((l.rows, l.cols), (2, 4));
    }

    #[test]
    fn budget_one() {
        let l = plan_layout(page(500, 500), 336, 1).unwrap();
        assert_eq!((l.rows, l.cols), (1, 1));
        assert!(l.includes_global);
        assert_eq!(visual_token_estimate(&l, 576), 2 * 576);
    }

    #[test]
    fn bad_budget() {
        assert!(plan_layout(page(10, 10), 0, 4).is_err());
        assert!(plan_layout(page(10, 10), 336, 0).is_err());
        assert!(PageGeometry::new(0, 10).is_err());
    }

    #[test]
    fn crop_rectangles() {
        let l = TileLayout::grid(1, 1, 336, true);
        assert_eq!(l.crops, vec![Rect { x: 0, y: 0, width: 336, height: 336 }]);
        let l = TileLayout::grid(2, 2, 336, true);
        let xy: Vec<_> = l.crops.iter().map(|r| (r.x, r.y)).collect();
        assert_eq!(xy, vec![(0, 0), (336, 0), (0, 336), (336, 336)]);
        let l = TileLayout::grid(3, 3, 336, true);
        assert_eq!(l.crops.iter().map(Rect::area).sum::<u64>(), 1008 * 1008);
    }

    #[test]
    fn token_estimates() {
        assert_eq!(visual_token_estimate(&TileLayout::grid(3, 3, 336, true), 576), 5760);
        assert_eq!(visual_token_estimate(&TileLayout::grid(2, 2, 336, true).without_global(), 100), 400);
    }

    #[test]
    fn rotation() {
        assert_eq!(apply_rotation(page(1000, 600), 1), page(600, 1000));
        assert_eq!(apply_rotation(page(1000, 600), 2), page(1000, 600));
        assert_eq!(apply_rotation(page(1000, 600), 0), page(1000, 600));
        assert_eq!(apply_rotation(page(1000, 600), 3), page(600, 1000));
    }

    #[test]
    fn writes_crop_files() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("page.png");
        image::RgbImage::from_fn(200, 100, |x, y| image::Rgb([x as u8, y as u8, 0])).save(&src).unwrap();
        let out = dir.path().join("crops");
        let (layout, files) = write_crops(&src, 32, 8, 0, &out).unwrap();
        assert_eq!((layout.rows, layout.cols), (2, 4));
        assert_eq!(files.len(), 9);
        assert!(out.join("1_3.png").exists());
        assert!(out.join("global.png").exists());
        let tile = image::open(out.join("0_0.png")).unwrap();
        assert_eq!((tile.width(), tile.height()), (32, 32));

        let (rotated, _) = write_crops(&src, 32, 8, 1, &dir.path().join("rot")).unwrap();
        assert_eq!((rotated.rows, rotated.cols), (4, 2));
    }

    proptest! {
        #[test]
        fn matches_enumeration(w in 64u32..=8192, h in 64u32..=8192, max in 1u32..=16) {
            let l = plan_layout(page(w, h), 336, max).unwrap();
            prop_assert_eq!((l.rows, l.cols), enumerate(page(w, h), max));
            prop_assert!(l.rows * l.cols <= max);
        }

        #[test]
        fn crops_partition_canvas(rows in 1u32..6, cols in 1u32..6, side in 1u32..400) {
            let l = TileLayout::grid(rows, cols, side, true);
            let total: u64 = l.crops.iter().map(Rect::area).sum();
            prop_assert_eq!(total, u64::from(l.resized_width) * u64::from(l.resized_height));
            for (i, a) in l.crops.iter().enumerate() {
                prop_assert!(a.x + a.width <= l.resized_width && a.y + a.height <= l.resized_height);
                for b in &l.crops[i + 1..] {
                    prop_assert!(!a.intersects(b));
                }
            }
        }

        #[test]
        fn larger_budget_never_worse(w in 1u32..10000, h in 1u32..10000, max in 1u32..30) {
            let p = page(w, h);
            let small = plan_layout(p, 8, max).unwrap();
            let large = plan_layout(p, 8, max + 1).unwrap();
            prop_assert_ne!(
                cmp_fraction(aspect_error(large.rows, large.cols, p), aspect_error(small.rows, small.cols, p)),
                Ordering::Greater
            );
        }
    }
}
