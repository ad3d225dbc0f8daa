//! Grid rasterization and its inverse.
//!
//! Each cell becomes a solid `cell_px` square of its palette color, with
//! white dividers of `line_px` between neighbouring cells. Images are
//! stored as 8-bit RGB PNG so every pixel survives a round trip.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, MAX_DIM};

pub use image::RgbImage as Image;

pub const DIVIDER: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("invalid palette: {0}")]
    Palette(String),
    #[error("invalid render config: {0}")]
    Config(String),
    #[error("image {width}x{height} fits no grid under cell_px={cell_px}, line_px={line_px}")]
    GeometryMismatch {
        width: u32,
        height: u32,
        cell_px: u32,
        line_px: u32,
    },
    #[error("cell ({row}, {col}) color {rgb:?} is {distance:.1} from the nearest palette entry (tolerance {tolerance:.1})")]
    ColorMismatch {
        row: usize,
        col: usize,
        rgb: [u8; 3],
        distance: f64,
        tolerance: f64,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("png codec: {0}")]
    Codec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub name: String,
    pub rgb: [u8; 3],
}

/// Ten colors indexed by cell value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PaletteEntry>", into = "Vec<PaletteEntry>")]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

impl Palette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self, RenderError> {
        if entries.len() != 10 {
            return Err(RenderError::Palette(format!(
                "expected 10 entries, got {}",
                entries.len()
            )));
        }
        for (i, a) in entries.iter().enumerate() {
            if a.rgb == DIVIDER {
                return Err(RenderError::Palette(format!(
                    "entry {i} ({}) equals the divider color",
                    a.name
                )));
            }
            if let Some(j) = entries[i + 1..].iter().position(|b| b.rgb == a.rgb) {
                return Err(RenderError::Palette(format!(
                    "entries {i} and {} share color {:?}",
                    i + 1 + j,
                    a.rgb
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn rgb(&self, value: u8) -> [u8; 3] {
        self.entries[usize::from(value)].rgb
    }

    pub fn name(&self, value: u8) -> &str {
        &self.entries[usize::from(value)].name
    }

    fn min_pairwise_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                min = min.min(distance(a.rgb, b.rgb));
            }
        }
        min
    }

    /// Nearest palette index and its Euclidean RGB distance.
    pub fn nearest(&self, rgb: [u8; 3]) -> (u8, f64) {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i as u8, distance(rgb, e.rgb)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("palette has 10 entries")
    }
}

impl Default for Palette {
    fn default() -> Self {
        const DEFAULT: [(&str, [u8; 3]); 10] = [
            ("black", [0, 0, 0]),
            ("blue", [0, 116, 217]),
            ("red", [255, 65, 54]),
            ("green", [46, 204, 64]),
            ("yellow", [255, 220, 0]),
            ("grey", [170, 170, 170]),
            ("pink", [240, 18, 190]),
            ("orange", [255, 133, 27]),
            ("light blue", [127, 219, 255]),
            ("brown", [135, 77, 42]),
        ];
        Self {
            entries: DEFAULT
                .iter()
                .map(|&(name, rgb)| PaletteEntry {
                    name: name.to_owned(),
                    rgb,
                })
                .collect(),
        }
    }
}

impl TryFrom<Vec<PaletteEntry>> for Palette {
    type Error = RenderError;

    fn try_from(entries: Vec<PaletteEntry>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<Palette> for Vec<PaletteEntry> {
    fn from(p: Palette) -> Self {
        p.entries
    }
}

fn distance(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub cell_px: u32,
    pub line_px: u32,
    /// Draw dividers around the outside of the grid as well.
    #[serde(default)]
    pub border: bool,
    #[serde(default)]
    pub palette: Palette,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            cell_px: 30,
            line_px: 2,
            border: false,
            palette: Palette::default(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.cell_px < 4 {
            return Err(RenderError::Config(format!("cell_px {} < 4", self.cell_px)));
        }
        if self.line_px < 1 {
            return Err(RenderError::Config("line_px must be >= 1".into()));
        }
        if self.cell_px <= 2 * self.line_px {
            return Err(RenderError::Config(format!(
                "cell_px {} must exceed 2 * line_px {}",
                self.cell_px, self.line_px
            )));
        }
        Ok(())
    }

    fn border_px(&self) -> u32 {
        if self.border {
            self.line_px
        } else {
            0
        }
    }

    /// Pixel length of an axis holding `cells` cells.
    pub fn extent(&self, cells: usize) -> u32 {
        let n = cells as u32;
        n * self.cell_px + (n - 1) * self.line_px + 2 * self.border_px()
    }

    /// Inverse of [`extent`](Self::extent).
    fn cells_for(&self, pixels: u32) -> Option<usize> {
        let pitch = self.cell_px + self.line_px;
        let inner = (pixels + self.line_px).checked_sub(2 * self.border_px())?;
        (inner % pitch == 0)
            .then_some((inner / pitch) as usize)
            .filter(|n| (1..=MAX_DIM).contains(n))
    }

    fn cell_origin(&self, index: usize) -> u32 {
        self.border_px() + index as u32 * (self.cell_px + self.line_px)
    }

    /// Largest nearest-palette distance still accepted when decoding.
    pub fn decode_tolerance(&self) -> f64 {
        self.palette.min_pairwise_distance() / 2.0
    }
}

pub fn render_grid(g: &Grid, cfg: &RenderConfig) -> Image {
    let width = cfg.extent(g.cols());
    let height = cfg.extent(g.rows());
    let mut img = RgbImage::from_pixel(width, height, Rgb(DIVIDER));
    for (r, row) in g.iter_rows().enumerate() {
        let y0 = cfg.cell_origin(r);
        for (c, &value) in row.iter().enumerate() {
            let x0 = cfg.cell_origin(c);
            let color = Rgb(cfg.palette.rgb(value));
            for y in y0..y0 + cfg.cell_px {
                for x in x0..x0 + cfg.cell_px {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}

/// Recovers the grid from an image drawn under `cfg`.
pub fn decode_image(img: &Image, cfg: &RenderConfig) -> Result<Grid, RenderError> {
    let (width, height) = img.dimensions();
    let mismatch = || RenderError::GeometryMismatch {
        width,
        height,
        cell_px: cfg.cell_px,
        line_px: cfg.line_px,
    };
    let cols = cfg.cells_for(width).ok_or_else(mismatch)?;
    let rows = cfg.cells_for(height).ok_or_else(mismatch)?;
    let tolerance = cfg.decode_tolerance();
    let half = cfg.cell_px / 2;
    let mut cells = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let y = cfg.cell_origin(row) + half;
        for col in 0..cols {
            let x = cfg.cell_origin(col) + half;
            let rgb = img.get_pixel(x, y).0;
            let (value, distance) = cfg.palette.nearest(rgb);
            if distance >= tolerance {
                return Err(RenderError::ColorMismatch {
                    row,
                    col,
                    rgb,
                    distance,
                    tolerance,
                });
            }
            cells.push(value);
        }
    }
    Grid::new(rows, cols, cells).map_err(|e| RenderError::Codec(e.to_string()))
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, RenderError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| RenderError::Codec(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Decodes PNG bytes; any other container is rejected since lossy formats
/// cannot round-trip palette colors.
pub fn decode_png(bytes: &[u8]) -> Result<Image, RenderError> {
    match image::guess_format(bytes) {
        Ok(ImageFormat::Png) => {}
        Ok(other) => return Err(RenderError::UnsupportedFormat(format!("{other:?}"))),
        Err(e) => return Err(RenderError::UnsupportedFormat(e.to_string())),
    }
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| RenderError::Codec(e.to_string()))
}

pub fn render_png(g: &Grid, cfg: &RenderConfig) -> Result<Vec<u8>, RenderError> {
    encode_png(&render_grid(g, cfg))
}

/// The value-to-color legend embedded in rule-application prompts.
pub fn color_legend_text(p: &Palette) -> String {
    let body: Vec<String> = p
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{i}:{}", e.name))
        .collect();
    format!("[{}]", body.join("; "))
}

/// File name for a rendered grid: `<task_id>_<role>_<index>.png`.
pub fn image_file_name(task_id: &str, role: ImageRole, index: usize) -> String {
    format!("{task_id}_{}_{index}.png", role.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageRole {
    ExampleInput,
    ExampleOutput,
    TestInput,
    Prediction,
}

impl ImageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageRole::ExampleInput => "ex_in",
            ImageRole::ExampleOutput => "ex_out",
            ImageRole::TestInput => "test_in",
            ImageRole::Prediction => "pred",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RenderConfig {
        RenderConfig::default()
    }

    #[test]
    fn single_cell_is_solid() {
        let g = Grid::from_rows(&[[0u8]]).unwrap();
        let img = render_grid(&g, &cfg());
        assert_eq!(img.dimensions(), (30, 30));
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn two_by_two_geometry() {
        let g = Grid::from_rows(&[[1u8, 2], [3, 4]]).unwrap();
        let img = render_grid(&g, &cfg());
        assert_eq!(img.dimensions(), (62, 62));
        // divider column and row are white, no outer border
        assert_eq!(img.get_pixel(30, 5).0, DIVIDER);
        assert_eq!(img.get_pixel(31, 40).0, DIVIDER);
        assert_eq!(img.get_pixel(5, 30).0, DIVIDER);
        assert_eq!(img.get_pixel(0, 0).0, cfg().palette.rgb(1));
        assert_eq!(img.get_pixel(61, 61).0, cfg().palette.rgb(4));
    }

    #[test]
    fn cell_centers_carry_palette_colors() {
        let g = Grid::from_rows(&[[1u8, 2]]).unwrap();
        let img = render_grid(&g, &cfg());
        assert_eq!(img.get_pixel(15, 15).0, [0, 116, 217]);
        assert_eq!(img.get_pixel(32 + 15, 15).0, [255, 65, 54]);
    }

    #[test]
    fn border_geometry_round_trips() {
        let c = RenderConfig {
            border: true,
            ..cfg()
        };
        let g = Grid::from_rows(&[[5u8, 6, 7], [8, 9, 0]]).unwrap();
        let img = render_grid(&g, &c);
        assert_eq!(img.dimensions(), (3 * 30 + 4 * 2, 2 * 30 + 3 * 2));
        assert_eq!(img.get_pixel(0, 0).0, DIVIDER);
        assert_eq!(decode_image(&img, &c).unwrap(), g);
    }

    #[test]
    fn geometry_mismatch() {
        let img = RgbImage::new(61, 62);
        assert!(matches!(
            decode_image(&img, &cfg()),
            Err(RenderError::GeometryMismatch { width: 61, .. })
        ));
        // 31 cells wide is out of range
        let img = RgbImage::new(cfg().extent(31), 30);
        assert!(matches!(
            decode_image(&img, &cfg()),
            Err(RenderError::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn color_mismatch_on_mid_gray() {
        let img = RgbImage::from_pixel(30, 30, Rgb([128, 128, 128]));
        assert!(matches!(
            decode_image(&img, &cfg()),
            Err(RenderError::ColorMismatch { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn slight_noise_still_decodes() {
        let img = RgbImage::from_pixel(30, 30, Rgb([250, 70, 50]));
        assert_eq!(decode_image(&img, &cfg()).unwrap().cells(), &[2]);
    }

    #[test]
    fn legend_text() {
        let legend = color_legend_text(&Palette::default());
        assert_eq!(
            legend,
            "[0:black; 1:blue; 2:red; 3:green; 4:yellow; 5:grey; 6:pink; 7:orange; 8:light blue; 9:brown]"
        );
        assert_eq!(legend.split("; ").count(), 10);
        let p = Palette::default();
        for (i, e) in p.entries().iter().enumerate() {
            assert!(legend.contains(&format!("{i}:{}", e.name)));
        }
    }

    #[test]
    fn palette_validation() {
        let mut entries = Palette::default().entries().to_vec();
        entries[3].rgb = entries[4].rgb;
        assert!(Palette::new(entries).is_err());
        let mut entries = Palette::default().entries().to_vec();
        entries[0].rgb = DIVIDER;
        assert!(Palette::new(entries).is_err());
        assert!(Palette::new(Palette::default().entries()[..9].to_vec()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        for (cell_px, line_px) in [(3, 1), (4, 2), (10, 0)] {
            let c = RenderConfig {
                cell_px,
                line_px,
                ..cfg()
            };
            assert!(c.validate().is_err(), "{cell_px}/{line_px}");
        }
    }

    #[test]
    fn png_round_trip_and_format_check() {
        let g = Grid::from_rows(&[[1u8, 2, 3], [4, 5, 6]]).unwrap();
        let bytes = render_png(&g, &cfg()).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        let img = decode_png(&bytes).unwrap();
        assert_eq!(decode_image(&img, &cfg()).unwrap(), g);
        assert_eq!(render_png(&g, &cfg()).unwrap(), bytes);
        // JPEG magic
        assert!(matches!(
            decode_png(&[0xFF, 0xD8, 0xFF, 0xE0, 0, 0, 0, 0]),
            Err(RenderError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn file_names() {
        assert_eq!(
            image_file_name("abc", ImageRole::ExampleOutput, 2),
            "abc_ex_out_2.png"
        );
    }
}
