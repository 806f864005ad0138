//! Procedural tabletop scenes of colored square blocks.
//!
//! Scenes hold three to six axis-aligned blocks, with at most two of any
//! color. The renderer produces an 8-bit RGB image on a light-gray table,
//! and [`gt_heatmap`] produces the Gaussian training target for one block.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::nn::Tensor;
use crate::scalar::{lit, Scalar};

pub const DEFAULT_IMAGE_SIZE: u32 = 256;
pub const DEFAULT_HEATMAP_SIZE: usize = 64;
pub const DEFAULT_SIDE: u32 = 40;
/// Minimum per-axis lead (pixels) for an extremal predicate to hold.
pub const DOMINANCE_MARGIN: i32 = 10;
pub const MAX_PER_COLOR: usize = 2;

const BACKGROUND: [u8; 3] = [206, 206, 200];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
    Purple,
}

impl Color {
    pub const ALL: [Color; 5] = [Color::Red, Color::Blue, Color::Green, Color::Yellow, Color::Purple];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
        }
    }

    pub fn from_name(s: &str) -> Option<Color> {
        Color::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Palette. Green/blue and red/yellow sit close together on purpose.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [204, 52, 40],
            Color::Blue => [46, 98, 188],
            Color::Green => [52, 146, 92],
            Color::Yellow => [222, 178, 38],
            Color::Purple => [128, 58, 158],
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: u32,
    pub color: Color,
    /// Pixel coordinates `[x, y]`; y grows downward.
    pub center: [i32; 2],
    pub side: u32,
}

impl Block {
    pub fn x(&self) -> i32 {
        self.center[0]
    }

    pub fn y(&self) -> i32 {
        self.center[1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub image_size: u32,
    pub seed: u64,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: u32,
    pub min_blocks: usize,
    pub max_blocks: usize,
    pub side: u32,
    /// Required per-axis gap between centers, as a multiple of the side.
    pub separation: f64,
    /// Extra keep-out band along the image border, in pixels.
    pub border: u32,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: DEFAULT_IMAGE_SIZE,
            min_blocks: 3,
            max_blocks: 6,
            side: DEFAULT_SIDE,
            separation: 1.25,
            border: 4,
            max_attempts: 2000,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(3 <= self.min_blocks && self.min_blocks <= self.max_blocks && self.max_blocks <= 6) {
            return Err(Error::Config(format!(
                "block count bounds must satisfy 3 <= min <= max <= 6, got {}..={}",
                self.min_blocks, self.max_blocks
            )));
        }
        if self.side == 0 || 2 * (self.side / 2 + self.border) >= self.image_size {
            return Err(Error::Config("blocks do not fit in the image".into()));
        }
        Ok(())
    }

    fn min_gap(&self) -> i32 {
        (self.side as f64 * self.separation).ceil() as i32
    }
}

/// Two blocks are far enough apart when their centers differ by at least
/// `gap` pixels along some axis, which keeps a visible strip of table
/// between them.
fn separated(a: [i32; 2], b: [i32; 2], gap: i32) -> bool {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs()) >= gap
}

pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(config.min_blocks..=config.max_blocks);

    let mut pool: Vec<Color> = Color::ALL.iter().flat_map(|&c| [c; MAX_PER_COLOR]).collect();
    pool.shuffle(&mut rng);
    let colors = &pool[..count];

    let lo = (config.side / 2 + config.border) as i32;
    let hi = config.image_size as i32 - lo;
    let gap = config.min_gap();
    let mut attempts = 0;
    'layout: while attempts < config.max_attempts {
        let mut centers: Vec<[i32; 2]> = Vec::with_capacity(count);
        while centers.len() < count {
            attempts += 1;
            if attempts >= config.max_attempts {
                break 'layout;
            }
            let c = [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
            if centers.iter().all(|&o| separated(o, c, gap)) {
                centers.push(c);
            } else if attempts % 200 == 0 {
                continue 'layout;
            }
        }
        let blocks = centers
            .into_iter()
            .zip(colors)
            .enumerate()
            .map(|(i, (center, &color))| Block { id: i as u32, color, center, side: config.side })
            .collect();
        return Ok(Scene { image_size: config.image_size, seed, blocks });
    }
    Err(Error::GenerationExhausted { attempts: config.max_attempts })
}

impl Scene {
    pub fn block(&self, id: u32) -> Result<&Block> {
        self.blocks.iter().find(|b| b.id == id).ok_or(Error::NotFound(id))
    }

    pub fn ids(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.id).collect()
    }

    pub fn blocks_of(&self, color: Color) -> Vec<u32> {
        self.blocks.iter().filter(|b| b.color == color).map(|b| b.id).collect()
    }

    /// Checks the structural invariants of a scene (used when accepting
    /// scenes from files or clients).
    pub fn validate(&self) -> Result<()> {
        if !(3..=6).contains(&self.blocks.len()) {
            return Err(Error::Config(format!("scene has {} blocks, expected 3..=6", self.blocks.len())));
        }
        for c in Color::ALL {
            if self.blocks_of(c).len() > MAX_PER_COLOR {
                return Err(Error::Config(format!("more than {MAX_PER_COLOR} {c} blocks")));
            }
        }
        let mut ids = BTreeSet::new();
        for b in &self.blocks {
            if !ids.insert(b.id) {
                return Err(Error::Config(format!("duplicate block id {}", b.id)));
            }
            let half = (b.side / 2) as i32;
            let n = self.image_size as i32;
            if b.side == 0 || b.x() < half || b.y() < half || b.x() > n - half || b.y() > n - half {
                return Err(Error::Config(format!("block {} is outside the image", b.id)));
            }
        }
        for (i, a) in self.blocks.iter().enumerate() {
            for b in &self.blocks[i + 1..] {
                let gap = a.side.max(b.side) as i32;
                if !separated(a.center, b.center, gap) {
                    return Err(Error::Config(format!("blocks {} and {} overlap", a.id, b.id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }
}

/// 8-bit RGB image; `pixel` exposes intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    size: usize,
    rgb: Vec<u8>,
}

impl Image {
    pub fn from_rgb8(size: usize, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != size * size * 3 {
            return Err(Error::Shape(format!("{} bytes for a {size}x{size} RGB image", rgb.len())));
        }
        Ok(Self { size, rgb })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rgb8(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.size + x) * 3;
        [self.rgb[i] as f64 / 255.0, self.rgb[i + 1] as f64 / 255.0, self.rgb[i + 2] as f64 / 255.0]
    }

    /// Channel-major `[3, size, size]` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let n = self.size * self.size;
        let mut data = vec![T::zero(); 3 * n];
        let scale: T = lit(1.0 / 255.0);
        for (i, px) in self.rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = T::from_u8(px[c]).expect("u8") * scale;
            }
        }
        Tensor::from_vec(&[3, self.size, self.size], data)
    }

    /// Area-averaged downsampling to `side × side`, channel-major.
    pub fn downsample<T: Scalar>(&self, side: usize) -> Result<Tensor<T>> {
        if side == 0 || !self.size.is_multiple_of(side) {
            return Err(Error::Shape(format!("cannot area-average {} down to {side}", self.size)));
        }
        let f = self.size / side;
        let n = side * side;
        let mut acc = vec![0u32; 3 * n];
        for y in 0..self.size {
            for x in 0..self.size {
                let cell = (y / f) * side + x / f;
                let i = (y * self.size + x) * 3;
                for c in 0..3 {
                    acc[c * n + cell] += self.rgb[i + c] as u32;
                }
            }
        }
        let denom = (f * f) as f64 * 255.0;
        let data = acc.into_iter().map(|s| lit(s as f64 / denom)).collect();
        Ok(Tensor::from_vec(&[3, side, side], data))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.rgb, self.size as u32, self.size as u32, image::ColorType::Rgb8)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        if img.width() != img.height() {
            return Err(Error::Shape(format!("image is {}x{}, expected square", img.width(), img.height())));
        }
        Self::from_rgb8(img.width() as usize, img.into_raw())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.rgb,
            self.size as u32,
            self.size as u32,
            image::ColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(out.into_inner())
    }
}

/// Axis-aligned squares on a uniform table. A block centered at `c` covers
/// pixels `[c - side/2, c + side/2)` on each axis.
pub fn render(scene: &Scene) -> Image {
    let n = scene.image_size as usize;
    let mut rgb: Vec<u8> = BACKGROUND.iter().copied().cycle().take(n * n * 3).collect();
    for b in &scene.blocks {
        let half = (b.side / 2) as i32;
        let color = b.color.rgb();
        let (x0, x1) = ((b.x() - half).max(0) as usize, ((b.x() + half) as usize).min(n));
        let (y0, y1) = ((b.y() - half).max(0) as usize, ((b.y() + half) as usize).min(n));
        for y in y0..y1 {
            for x in x0..x1 {
                let i = (y * n + x) * 3;
                rgb[i..i + 3].copy_from_slice(&color);
            }
        }
    }
    Image { size: n, rgb }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthHeatmap<T> {
    pub grid: Heatmap<T>,
    pub target_block_id: u32,
}

/// Grid cell `(x, y)` containing a pixel position.
pub fn pixel_to_cell(center: [i32; 2], image_size: u32, grid: usize) -> (usize, usize) {
    let scale = image_size as f64 / grid as f64;
    let clamp = |v: i32| ((v.max(0) as f64 / scale).floor() as usize).min(grid - 1);
    (clamp(center[0]), clamp(center[1]))
}

/// Isotropic Gaussian with unit variance (in grid cells), centered on the
/// cell that contains the block center, peak exactly 1.
pub fn gt_heatmap<T: Scalar>(scene: &Scene, block_id: u32, grid: usize) -> Result<GroundTruthHeatmap<T>> {
    let block = scene.block(block_id)?;
    let cell = pixel_to_cell(block.center, scene.image_size, grid);
    Ok(GroundTruthHeatmap { grid: gaussian_at(cell, grid), target_block_id: block_id })
}

/// Unit-variance Gaussian bump with peak 1 at `cell`.
pub fn gaussian_at<T: Scalar>(cell: (usize, usize), grid: usize) -> Heatmap<T> {
    let (cx, cy) = cell;
    let mut map = Heatmap::zeros(grid);
    for y in 0..grid {
        for x in 0..grid {
            let dx = x as f64 - cx as f64;
            let dy = y as f64 - cy as f64;
            map.set(x, y, lit((-(dx * dx + dy * dy) / 2.0).exp()));
        }
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predicate {
    Left,
    Right,
    Upper,
    Lower,
    Middle,
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

impl Predicate {
    pub const ALL: [Predicate; 9] = [
        Predicate::Left,
        Predicate::Right,
        Predicate::Upper,
        Predicate::Lower,
        Predicate::Middle,
        Predicate::UpperLeft,
        Predicate::UpperRight,
        Predicate::LowerLeft,
        Predicate::LowerRight,
    ];

    /// Surface words, e.g. `["upper", "left"]`.
    pub fn words(self) -> &'static [&'static str] {
        match self {
            Predicate::Left => &["left"],
            Predicate::Right => &["right"],
            Predicate::Upper => &["upper"],
            Predicate::Lower => &["lower"],
            Predicate::Middle => &["middle"],
            Predicate::UpperLeft => &["upper", "left"],
            Predicate::UpperRight => &["upper", "right"],
            Predicate::LowerLeft => &["lower", "left"],
            Predicate::LowerRight => &["lower", "right"],
        }
    }

    pub fn phrase(self) -> String {
        self.words().join(" ")
    }

    pub fn tag(self) -> &'static str {
        match self {
            Predicate::Left => "leftmost",
            Predicate::Right => "rightmost",
            Predicate::Upper => "uppermost",
            Predicate::Lower => "lowermost",
            Predicate::Middle => "middle",
            Predicate::UpperLeft => "upper-left",
            Predicate::UpperRight => "upper-right",
            Predicate::LowerLeft => "lower-left",
            Predicate::LowerRight => "lower-right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpatialTag {
    Position(Predicate),
    /// The block sits between the only two blocks of this color.
    Between(Color),
}

impl fmt::Display for SpatialTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialTag::Position(p) => f.write_str(p.tag()),
            SpatialTag::Between(c) => write!(f, "between-two-{c}-blocks"),
        }
    }
}

/// Position predicates of `block_id` relative to the blocks in `reference`.
///
/// Extremal predicates need a lead of [`DOMINANCE_MARGIN`] pixels over
/// every other reference block; corners are conjunctions of two extremes;
/// `Middle` needs at least three reference blocks and a unique nearest
/// position to their bounding-box center (by the same margin).
pub fn predicates_within(scene: &Scene, block_id: u32, reference: &[u32]) -> Result<BTreeSet<Predicate>> {
    let b = scene.block(block_id)?;
    let others: Vec<&Block> =
        reference.iter().filter(|&&id| id != block_id).map(|&id| scene.block(id)).collect::<Result<_>>()?;
    let mut out = BTreeSet::new();
    if others.is_empty() {
        return Ok(out);
    }
    let m = DOMINANCE_MARGIN;
    let left = others.iter().all(|o| o.x() - b.x() >= m);
    let right = others.iter().all(|o| b.x() - o.x() >= m);
    let upper = others.iter().all(|o| o.y() - b.y() >= m);
    let lower = others.iter().all(|o| b.y() - o.y() >= m);
    for (flag, p) in [(left, Predicate::Left), (right, Predicate::Right), (upper, Predicate::Upper), (lower, Predicate::Lower)] {
        if flag {
            out.insert(p);
        }
    }
    for (a, c, p) in [
        (upper, left, Predicate::UpperLeft),
        (upper, right, Predicate::UpperRight),
        (lower, left, Predicate::LowerLeft),
        (lower, right, Predicate::LowerRight),
    ] {
        if a && c {
            out.insert(p);
        }
    }
    if others.len() >= 2 {
        let all: Vec<&Block> = std::iter::once(b).chain(others.iter().copied()).collect();
        let (min_x, max_x) = (all.iter().map(|o| o.x()).min().unwrap(), all.iter().map(|o| o.x()).max().unwrap());
        let (min_y, max_y) = (all.iter().map(|o| o.y()).min().unwrap(), all.iter().map(|o| o.y()).max().unwrap());
        let center = ((min_x + max_x) as f64 / 2.0, (min_y + max_y) as f64 / 2.0);
        let dist = |o: &Block| ((o.x() as f64 - center.0).powi(2) + (o.y() as f64 - center.1).powi(2)).sqrt();
        let mine = dist(b);
        if others.iter().all(|o| dist(o) - mine >= m as f64) {
            out.insert(Predicate::Middle);
        }
    }
    Ok(out)
}

/// Whether `block_id` lies between blocks `a` and `b`: its projection falls
/// in the central part of the segment and it stays close to the line.
fn lies_between(block: &Block, a: &Block, b: &Block) -> bool {
    let (ax, ay) = (a.x() as f64, a.y() as f64);
    let (dx, dy) = (b.x() as f64 - ax, b.y() as f64 - ay);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return false;
    }
    let (px, py) = (block.x() as f64 - ax, block.y() as f64 - ay);
    let t = (px * dx + py * dy) / len2;
    let perp = (px * dy - py * dx).abs() / len2.sqrt();
    (0.2..=0.8).contains(&t) && perp <= 0.75 * block.side as f64
}

/// Colors `c` such that the block lies between the only two `c` blocks.
pub fn between_colors(scene: &Scene, block_id: u32) -> Result<Vec<Color>> {
    let b = scene.block(block_id)?;
    let mut out = Vec::new();
    for c in Color::ALL {
        if c == b.color {
            continue;
        }
        let pair = scene.blocks_of(c);
        if pair.len() == 2 && lies_between(b, scene.block(pair[0])?, scene.block(pair[1])?) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Position predicates relative to the whole scene plus relational tags.
pub fn spatial_predicates(scene: &Scene, block_id: u32) -> Result<BTreeSet<SpatialTag>> {
    let mut tags: BTreeSet<SpatialTag> =
        predicates_within(scene, block_id, &scene.ids())?.into_iter().map(SpatialTag::Position).collect();
    tags.extend(between_colors(scene, block_id)?.into_iter().map(SpatialTag::Between));
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scene_of(blocks: &[(Color, i32, i32)]) -> Scene {
        Scene {
            image_size: 256,
            seed: 0,
            blocks: blocks
                .iter()
                .enumerate()
                .map(|(i, &(color, x, y))| Block { id: i as u32, color, center: [x, y], side: 40 })
                .collect(),
        }
    }

    #[test]
    fn default_scene_respects_counts() {
        let s = generate_scene(&SceneConfig::default(), 7).unwrap();
        assert!((3..=6).contains(&s.blocks.len()));
        for c in Color::ALL {
            assert!(s.blocks_of(c).len() <= 2);
        }
        s.validate().unwrap();
    }

    #[test]
    fn fixed_count_bounds() {
        let cfg = SceneConfig { min_blocks: 3, max_blocks: 3, ..Default::default() };
        assert_eq!(generate_scene(&cfg, 0).unwrap().blocks.len(), 3);
    }

    #[test]
    fn invalid_bounds_rejected() {
        let cfg = SceneConfig { min_blocks: 2, ..Default::default() };
        assert!(matches!(generate_scene(&cfg, 0), Err(Error::Config(_))));
        let cfg = SceneConfig { min_blocks: 5, max_blocks: 4, ..Default::default() };
        assert!(generate_scene(&cfg, 0).is_err());
    }

    #[test]
    fn crowded_table_exhausts() {
        let cfg = SceneConfig { image_size: 120, min_blocks: 6, max_blocks: 6, max_attempts: 500, ..Default::default() };
        assert!(matches!(generate_scene(&cfg, 3), Err(Error::GenerationExhausted { .. })));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 11).unwrap().to_json(), generate_scene(&cfg, 11).unwrap().to_json());
    }

    #[test]
    fn render_probes() {
        let s = scene_of(&[(Color::Red, 128, 128), (Color::Blue, 50, 200), (Color::Green, 200, 40)]);
        let img = render(&s);
        let red = Color::Red.rgb().map(|v| v as f64 / 255.0);
        assert_eq!(img.pixel(128, 128), red);
        assert_eq!(img.pixel(0, 0), BACKGROUND.map(|v| v as f64 / 255.0));
        assert_eq!(render(&s), img);
    }

    #[test]
    fn gt_heatmap_peak_and_falloff() {
        let s = scene_of(&[(Color::Red, 130, 130), (Color::Blue, 50, 200), (Color::Green, 200, 40)]);
        let gt = gt_heatmap::<f64>(&s, 0, 64).unwrap();
        assert_eq!(gt.grid.argmax(), (32, 32));
        assert_eq!(gt.grid.get(32, 32), 1.0);
        let oracle = (-(2.0f64 * 2.0) / 2.0).exp();
        assert!((gt.grid.get(34, 32) - oracle).abs() < 1e-15);
        assert!(matches!(gt_heatmap::<f64>(&s, 9, 64), Err(Error::NotFound(9))));
    }

    #[test]
    fn extremal_predicates() {
        let s = scene_of(&[(Color::Red, 40, 40), (Color::Blue, 128, 128), (Color::Green, 200, 200)]);
        let tags = spatial_predicates(&s, 0).unwrap();
        assert!(tags.contains(&SpatialTag::Position(Predicate::Left)));
        assert!(tags.contains(&SpatialTag::Position(Predicate::UpperLeft)));
        assert!(!tags.contains(&SpatialTag::Position(Predicate::Right)));
        let tags = spatial_predicates(&s, 2).unwrap();
        assert!(tags.contains(&SpatialTag::Position(Predicate::LowerRight)));
    }

    #[test]
    fn margin_blocks_near_ties() {
        // x differs by 5 < margin: neither block is leftmost of the pair
        let s = scene_of(&[(Color::Red, 100, 40), (Color::Red, 105, 200), (Color::Blue, 220, 120)]);
        let p = predicates_within(&s, 0, &[0, 1]).unwrap();
        assert!(!p.contains(&Predicate::Left) && p.contains(&Predicate::Upper));
    }

    #[test]
    fn middle_is_nearest_to_bbox_center() {
        let pts = [(30, 30), (220, 40), (125, 120), (40, 215), (210, 220)];
        let colors = [Color::Red, Color::Blue, Color::Green, Color::Yellow, Color::Purple];
        let s = scene_of(&pts.iter().zip(colors).map(|(&(x, y), c)| (c, x, y)).collect::<Vec<_>>());
        // brute force: bbox center and distances
        let (cx, cy) = ((30.0 + 220.0) / 2.0, (30.0 + 220.0) / 2.0);
        let d: Vec<f64> =
            pts.iter().map(|&(x, y)| ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt()).collect();
        let best = (0..5).min_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap()).unwrap();
        assert_eq!(best, 2);
        for id in 0..5u32 {
            let has = spatial_predicates(&s, id).unwrap().contains(&SpatialTag::Position(Predicate::Middle));
            assert_eq!(has, id as usize == best);
        }
    }

    #[test]
    fn between_two_purple() {
        let s = scene_of(&[(Color::Purple, 40, 128), (Color::Purple, 216, 128), (Color::Red, 128, 132), (Color::Blue, 128, 30)]);
        let tags = spatial_predicates(&s, 2).unwrap();
        assert!(tags.contains(&SpatialTag::Between(Color::Purple)));
        assert!(!spatial_predicates(&s, 3).unwrap().contains(&SpatialTag::Between(Color::Purple)));
    }

    #[test]
    fn downsample_constant_image() {
        let img = Image::from_rgb8(8, [10u8, 20, 30].repeat(64)).unwrap();
        let t = img.downsample::<f64>(2).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert!(t.data()[..4].iter().all(|&v| (v - 10.0 / 255.0).abs() < 1e-12));
        assert!(t.data()[8..].iter().all(|&v| (v - 30.0 / 255.0).abs() < 1e-12));
    }
}
