//! Synthetic road scenes with parameterized domain shift.
//!
//! Every frame is a dark road quadrilateral under a flat sky, with bright
//! lane stripes that converge toward a vanishing point. Scene geometry is
//! sampled per frame; a photometric pipeline (contrast, brightness, gamma,
//! blur, noise, clamp, in that order) then produces the domain the camera
//! actually sees. Labels come from the analytic geometry alone, so no
//! photometric setting can ever change them.
//!
//! Determinism contract: a frame is a pure function of `(spec, index)`.
//! The per-frame RNG draws geometry first (offset, curvature, half-width,
//! in that order), then pixel noise; this draw order is part of the format.

mod dataset;

pub use dataset::{generate_to_file, Dataset, DATASET_MAGIC, DATASET_VERSION};

use crate::error::{Error, Result};
use crate::lane::{LaneLabel, RowAnchorGrid};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;

const SKY: [f32; 3] = [0.55, 0.62, 0.70];
const ROAD: [f32; 3] = [0.18, 0.18, 0.20];
const SHOULDER: [f32; 3] = [0.28, 0.33, 0.26];
const STRIPE: [f32; 3] = [0.92, 0.90, 0.82];
/// Road brightens slightly toward the camera.
const ROAD_GRADIENT: f32 = 0.05;
/// Fraction of the image height above the road.
const HORIZON_FRACTION: f32 = 0.35;
/// Lane separation at the horizon relative to the bottom row; keeping this
/// above zero leaves the road a quadrilateral instead of a triangle.
const TOP_CONVERGENCE: f32 = 0.2;

/// Named photometric presets standing in for environment change. `Source`
/// is the identity; the others keep geometry untouched and shift only what
/// the camera sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftProfile {
    Source,
    Night,
    Glare,
    Fog,
    Sensor,
}

impl ShiftProfile {
    pub const ALL: [ShiftProfile; 5] = [
        ShiftProfile::Source,
        ShiftProfile::Night,
        ShiftProfile::Glare,
        ShiftProfile::Fog,
        ShiftProfile::Sensor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftProfile::Source => "source",
            ShiftProfile::Night => "night",
            ShiftProfile::Glare => "glare",
            ShiftProfile::Fog => "fog",
            ShiftProfile::Sensor => "sensor",
        }
    }

    /// Overwrites the photometric fields of `spec` with this preset.
    pub fn apply(self, spec: &mut ScenarioSpec) {
        spec.brightness = 1.0;
        spec.contrast = 1.0;
        spec.gamma = 1.0;
        spec.blur_radius = 0.0;
        spec.noise_std = 0.0;
        match self {
            ShiftProfile::Source => {}
            ShiftProfile::Night => {
                spec.brightness = 0.35;
                spec.noise_std = 0.02;
            }
            ShiftProfile::Glare => {
                spec.brightness = 1.6;
                spec.gamma = 0.6;
            }
            ShiftProfile::Fog => {
                spec.blur_radius = 2.0;
                spec.contrast = 0.5;
            }
            ShiftProfile::Sensor => {
                spec.noise_std = 0.08;
            }
        }
    }
}

impl FromStr for ShiftProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShiftProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ShiftProfile::ALL.iter().map(|p| p.name()).collect();
                Error::validation(format!(
                    "unknown shift profile {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

impl fmt::Display for ShiftProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Full description of a synthetic domain: image size, lane count, the
/// ranges scene geometry is drawn from, the photometric shift, and the
/// seed that makes the whole stream reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub width: usize,
    pub height: usize,
    pub lanes: usize,
    /// Lateral road offset range in pixels, applied to all lanes together.
    pub offset_px: (f32, f32),
    /// Quadratic curvature coefficient range (px per squared row).
    pub curvature: (f32, f32),
    /// Stripe half-width range in pixels.
    pub half_width_px: (f32, f32),
    pub brightness: f32,
    pub contrast: f32,
    pub gamma: f32,
    pub blur_radius: f32,
    pub noise_std: f32,
    pub rng_seed: u64,
}

impl ScenarioSpec {
    /// The clean source domain at the reference render size.
    pub fn source(rng_seed: u64) -> Self {
        Self {
            width: 128,
            height: 64,
            lanes: 2,
            offset_px: (-16.0, 16.0),
            curvature: (-0.010, 0.010),
            half_width_px: (1.0, 2.0),
            brightness: 1.0,
            contrast: 1.0,
            gamma: 1.0,
            blur_radius: 0.0,
            noise_std: 0.0,
            rng_seed,
        }
    }

    /// Source geometry under the named photometric shift.
    pub fn shifted(profile: ShiftProfile, rng_seed: u64) -> Self {
        let mut spec = Self::source(rng_seed);
        profile.apply(&mut spec);
        spec
    }

    /// First image row of the road region.
    pub fn horizon_row(&self) -> usize {
        (HORIZON_FRACTION * self.height as f32).floor() as usize
    }

    /// Row-anchor grid matching this scenario's image and lane count.
    pub fn grid(&self) -> Result<RowAnchorGrid> {
        let reference = RowAnchorGrid::reference();
        RowAnchorGrid::new(
            self.width,
            self.height,
            reference.cells,
            self.lanes,
            reference.anchor_rows,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width != 128 || self.height != 64 {
            return Err(Error::validation(format!(
                "render size is pinned to 128x64, got {}x{}",
                self.width, self.height
            )));
        }
        if self.lanes != 2 && self.lanes != 4 {
            return Err(Error::validation(format!(
                "lane count must be 2 or 4, got {}",
                self.lanes
            )));
        }
        for (name, (lo, hi)) in [
            ("offset_px", self.offset_px),
            ("curvature", self.curvature),
            ("half_width_px", self.half_width_px),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::validation(format!(
                    "{name} range ({lo}, {hi}) is not an ordered finite interval"
                )));
            }
        }
        if self.half_width_px.0 <= 0.0 {
            return Err(Error::validation("stripe half-width must be positive"));
        }
        for (name, v, lo) in [
            ("brightness", self.brightness, f32::MIN_POSITIVE),
            ("contrast", self.contrast, f32::MIN_POSITIVE),
            ("gamma", self.gamma, f32::MIN_POSITIVE),
            ("blur_radius", self.blur_radius, 0.0),
            ("noise_std", self.noise_std, 0.0),
        ] {
            if !v.is_finite() || v < lo {
                return Err(Error::validation(format!("{name} must be finite and >= {lo}, got {v}")));
            }
        }
        if !(0..self.lanes).any(|j| self.lane_always_inside(j)) {
            return Err(Error::validation(
                "geometry ranges allow every lane to leave the image",
            ));
        }
        Ok(())
    }

    /// Whether lane `j` stays fully inside the image for every geometry in
    /// range. Lane x is affine in offset and curvature, so checking the
    /// four range corners at each painted row bounds the whole family.
    fn lane_always_inside(&self, lane: usize) -> bool {
        let hw = self.half_width_px.1;
        let w = self.width as f32;
        for y in self.horizon_row()..self.height {
            for offset in [self.offset_px.0, self.offset_px.1] {
                for curvature in [self.curvature.0, self.curvature.1] {
                    let g = LaneGeometry {
                        offset,
                        curvature,
                        half_width: hw,
                    };
                    let x = g.lane_x(self, lane, y as f32);
                    if x - hw < 0.0 || x + hw > w {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// One frame's scene parameters, drawn from the spec's ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneGeometry {
    pub offset: f32,
    pub curvature: f32,
    pub half_width: f32,
}

impl LaneGeometry {
    /// Draw order offset, curvature, half-width is part of the format.
    pub fn sample(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |(lo, hi): (f32, f32)| lo + (hi - lo) * rng.gen::<f32>();
        Self {
            offset: draw(spec.offset_px),
            curvature: draw(spec.curvature),
            half_width: draw(spec.half_width_px),
        }
    }

    pub fn validate(&self, spec: &ScenarioSpec) -> Result<()> {
        for (name, v, (lo, hi)) in [
            ("offset", self.offset, spec.offset_px),
            ("curvature", self.curvature, spec.curvature),
            ("half_width", self.half_width, spec.half_width_px),
        ] {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::validation(format!(
                    "geometry {name} {v} outside spec range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Horizontal center of lane `lane` at image row `y`:
    /// `x(y) = a + b(y-H) + c(y-H)^2` with the linear term fixed by the
    /// perspective convergence toward the vanishing point at W/2.
    pub fn lane_x(&self, spec: &ScenarioSpec, lane: usize, y: f32) -> f32 {
        let base = spec.width as f32 * (lane as f32 + 1.0) / (spec.lanes as f32 + 1.0);
        self.curve_x(spec, base, y)
    }

    fn curve_x(&self, spec: &ScenarioSpec, base: f32, y: f32) -> f32 {
        let vanish = spec.width as f32 / 2.0;
        let top = spec.horizon_row() as f32;
        let bottom = (spec.height - 1) as f32;
        let scale = TOP_CONVERGENCE + (1.0 - TOP_CONVERGENCE) * (y - top) / (bottom - top);
        vanish
            + (base + self.offset - vanish) * scale
            + self.curvature * (y - spec.height as f32).powi(2)
    }
}

/// A rendered image with its geometric ground truth. The label exists for
/// evaluation only; adaptation never reads it.
#[derive(Debug, Clone)]
pub struct Frame {
    /// `[3, H, W]`, every value in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: LaneLabel,
}

/// Per-frame RNG. SplitMix-style finalizer over (seed, index) so frames are
/// independent of each other and of how many were drawn before.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Renders the frame at `index`: geometry draw, paint, label, photometric.
pub fn frame_at(spec: &ScenarioSpec, index: u64) -> Result<Frame> {
    let mut rng = frame_rng(spec.rng_seed, index);
    let geometry = LaneGeometry::sample(spec, &mut rng);
    render_frame(spec, &geometry, &mut rng)
}

/// Renders one frame from explicit geometry. `rng` feeds pixel noise only;
/// pass the frame RNG after its geometry draws to reproduce `frame_at`.
pub fn render_frame(
    spec: &ScenarioSpec,
    geometry: &LaneGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<Frame> {
    spec.validate()?;
    geometry.validate(spec)?;

    let (w, h) = (spec.width, spec.height);
    let horizon = spec.horizon_row();
    let plane = h * w;
    let mut img = vec![0f32; 3 * plane];

    for y in 0..horizon {
        for x in 0..w {
            for c in 0..3 {
                img[c * plane + y * w + x] = SKY[c];
            }
        }
    }

    // Road edges run half a lane spacing outside the outer stripes and
    // follow the same perspective and curvature.
    let left_base = w as f32 * 0.5 / (spec.lanes as f32 + 1.0);
    let right_base = w as f32 * (spec.lanes as f32 + 0.5) / (spec.lanes as f32 + 1.0);
    for y in horizon..h {
        let yf = y as f32;
        let t = (y - horizon) as f32 / (h - 1 - horizon) as f32;
        let road_l = geometry.curve_x(spec, left_base, yf);
        let road_r = geometry.curve_x(spec, right_base, yf);
        for x in 0..w {
            let xc = x as f32 + 0.5;
            let on_road = xc >= road_l && xc < road_r;
            for c in 0..3 {
                img[c * plane + y * w + x] = if on_road {
                    ROAD[c] + ROAD_GRADIENT * t
                } else {
                    SHOULDER[c]
                };
            }
        }
        for lane in 0..spec.lanes {
            let lx = geometry.lane_x(spec, lane, yf);
            let x0 = (lx - geometry.half_width - 1.0).floor().max(0.0) as usize;
            let x1 = ((lx + geometry.half_width + 1.0).ceil().max(0.0) as usize).min(w);
            for x in x0..x1 {
                // Linear edge coverage, one pixel of feathering.
                let cov = (geometry.half_width + 0.5 - (x as f32 + 0.5 - lx).abs())
                    .clamp(0.0, 1.0);
                if cov > 0.0 {
                    for c in 0..3 {
                        let p = &mut img[c * plane + y * w + x];
                        *p += (STRIPE[c] - *p) * cov;
                    }
                }
            }
        }
    }

    // Labels sample the analytic geometry, never the pixels.
    let grid = spec.grid()?;
    let mut cells = Vec::with_capacity(grid.anchors() * grid.lanes);
    for &row in &grid.anchor_rows {
        for lane in 0..spec.lanes {
            let x = geometry.lane_x(spec, lane, row as f32);
            cells.push(if x >= 0.0 && x < w as f32 {
                grid.cell_of_x(x) as i16
            } else {
                -1
            });
        }
    }
    let label = LaneLabel::new(cells, &grid)?;

    apply_photometric(spec, &mut img, rng);

    Ok(Frame {
        image: Tensor::new([3, h, w], img)?,
        label,
    })
}

fn apply_photometric(spec: &ScenarioSpec, img: &mut [f32], rng: &mut ChaCha8Rng) {
    for p in img.iter_mut() {
        let v = ((*p - 0.5) * spec.contrast + 0.5) * spec.brightness;
        *p = v.max(0.0).powf(spec.gamma);
    }
    let radius = spec.blur_radius.round() as usize;
    if radius > 0 {
        box_blur(img, spec.height, spec.width, radius);
    }
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_std).expect("sigma validated positive");
        for p in img.iter_mut() {
            *p += normal.sample(rng);
        }
    }
    for p in img.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
}

/// Separable box blur with replicated edges, window `2r + 1`.
fn box_blur(img: &mut [f32], h: usize, w: usize, r: usize) {
    let window = (2 * r + 1) as f32;
    let r = r as isize;
    let mut tmp = vec![0f32; h * w];
    for c in 0..3 {
        let plane = &mut img[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for x in 0..w {
                let mut s = 0.0;
                for d in -r..=r {
                    s += row[(x as isize + d).clamp(0, w as isize - 1) as usize];
                }
                tmp[y * w + x] = s / window;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for d in -r..=r {
                    s += tmp[(y as isize + d).clamp(0, h as isize - 1) as usize * w + x];
                }
                plane[y * w + x] = s / window;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_index_is_bit_identical() {
        let spec = ScenarioSpec::shifted(ShiftProfile::Sensor, 7);
        let a = frame_at(&spec, 11).unwrap();
        let b = frame_at(&spec, 11).unwrap();
        assert_eq!(a.image.to_bits(), b.image.to_bits());
        assert_eq!(a.label, b.label);
        let c = frame_at(&spec, 12).unwrap();
        assert_ne!(a.image.to_bits(), c.image.to_bits());
    }

    #[test]
    fn centered_straight_lanes_give_mirror_symmetric_labels() {
        let mut spec = ScenarioSpec::source(3);
        spec.offset_px = (0.0, 0.0);
        spec.curvature = (0.0, 0.0);
        let frame = frame_at(&spec, 0).unwrap();
        let grid = spec.grid().unwrap();
        for a in 0..grid.anchors() {
            let l = frame.label.cells[a * 2];
            let r = frame.label.cells[a * 2 + 1];
            assert_eq!(l + r, grid.cells as i16 - 1, "anchor {a}: {l} + {r}");
        }
    }

    #[test]
    fn labels_match_analytic_geometry() {
        let spec = ScenarioSpec::source(19);
        let grid = spec.grid().unwrap();
        for index in 0..20 {
            let mut rng = frame_rng(spec.rng_seed, index);
            let geom = LaneGeometry::sample(&spec, &mut rng);
            let frame = render_frame(&spec, &geom, &mut rng).unwrap();
            for (i, &row) in grid.anchor_rows.iter().enumerate() {
                for lane in 0..spec.lanes {
                    let x = geom.lane_x(&spec, lane, row as f32);
                    let want = grid.cell_of_x(x) as i16;
                    assert_eq!(frame.label.cells[i * spec.lanes + lane], want);
                }
            }
        }
    }

    #[test]
    fn night_is_strictly_darker_than_source() {
        let source = ScenarioSpec::source(5);
        let night = ScenarioSpec::shifted(ShiftProfile::Night, 5);
        let a = frame_at(&source, 2).unwrap();
        let b = frame_at(&night, 2).unwrap();
        let mean = |t: &Tensor<f32>| t.data().iter().sum::<f32>() / t.len() as f32;
        assert!(mean(&b.image) < mean(&a.image) - 0.1);
        // Same geometry, so the photometric shift leaves the label alone.
        assert_eq!(a.label, b.label);
    }

    #[test]
    fn every_profile_stays_in_unit_range_with_the_same_label() {
        let reference = frame_at(&ScenarioSpec::source(9), 4).unwrap();
        for profile in ShiftProfile::ALL {
            let spec = ScenarioSpec::shifted(profile, 9);
            let frame = frame_at(&spec, 4).unwrap();
            assert!(frame.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(frame.label, reference.label, "profile {profile}");
        }
    }

    #[test]
    fn source_profile_is_the_identity() {
        assert_eq!(ScenarioSpec::shifted(ShiftProfile::Source, 1), ScenarioSpec::source(1));
        let a = frame_at(&ScenarioSpec::source(1), 0).unwrap();
        let b = frame_at(&ScenarioSpec::shifted(ShiftProfile::Source, 1), 0).unwrap();
        assert_eq!(a.image.to_bits(), b.image.to_bits());
    }

    #[test]
    fn out_of_range_geometry_is_rejected() {
        let spec = ScenarioSpec::source(0);
        let bad = LaneGeometry {
            offset: 40.0,
            curvature: 0.0,
            half_width: 2.0,
        };
        let mut rng = frame_rng(0, 0);
        assert!(matches!(
            render_frame(&spec, &bad, &mut rng),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn unknown_profile_name_lists_the_presets() {
        let err = "dusk".parse::<ShiftProfile>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("night") && msg.contains("glare"), "{msg}");
        for p in ShiftProfile::ALL {
            assert_eq!(p.name().parse::<ShiftProfile>().unwrap(), p);
        }
    }

    #[test]
    fn degenerate_ranges_fail_validation() {
        let mut spec = ScenarioSpec::source(0);
        spec.offset_px = (-80.0, 80.0);
        assert!(spec.validate().is_err());
        let mut spec = ScenarioSpec::source(0);
        spec.brightness = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = ScenarioSpec::source(0);
        spec.half_width_px = (2.5, 1.5);
        assert!(spec.validate().is_err());
    }
}
