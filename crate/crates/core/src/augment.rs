//! Seeded augmentation operators and the minority-oversampling epoch planner.
//!
//! Operators are sampled and applied in a fixed order — rotation, shear, zoom,
//! aspect ratio, shift, crop, flips, brightness, contrast, pixel jitter — so a
//! given `(image, spec, seed)` triple always produces the same bytes. Geometric
//! operators are folded into one affine warp with reflection padding and
//! bilinear sampling; out-of-range values are clamped to [0, 1] at the end.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassDistribution, LesionClass, SampleRecord, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::preprocess::ImageBuffer;
use crate::rng::{derive_indexed_seed, seeded_rng};

/// A closed parameter range `[low, high]`, serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRange(pub f64, pub f64);

impl ValueRange {
    pub fn fixed(value: f64) -> ValueRange {
        ValueRange(value, value)
    }

    pub fn low(&self) -> f64 {
        self.0
    }

    pub fn high(&self) -> f64 {
        self.1
    }

    /// One uniform draw; a collapsed range returns `low` exactly while still
    /// consuming one draw, keeping the stream layout independent of values.
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        self.0 + u * (self.1 - self.0)
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite()) || self.0 > self.1 {
            return Err(Error::AugmentationSpec(format!(
                "{name} range [{}, {}] must be finite with low <= high",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

/// Parameter ranges for every augmentation operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub rotation_degrees: ValueRange,
    pub horizontal_flip_prob: f64,
    pub vertical_flip_prob: f64,
    pub crop_fraction: ValueRange,
    pub brightness_delta: ValueRange,
    pub contrast_factor: ValueRange,
    pub jitter_amplitude: f64,
    pub aspect_ratio: ValueRange,
    pub shear_degrees: ValueRange,
    pub zoom_factor: ValueRange,
    pub shift_fraction: ValueRange,
}

impl Default for AugmentationSpec {
    /// Conservative ranges that keep lesions in frame; all overridable.
    fn default() -> AugmentationSpec {
        AugmentationSpec {
            rotation_degrees: ValueRange(-30.0, 30.0),
            horizontal_flip_prob: 0.5,
            vertical_flip_prob: 0.5,
            crop_fraction: ValueRange(0.8, 1.0),
            brightness_delta: ValueRange(-0.1, 0.1),
            contrast_factor: ValueRange(0.9, 1.1),
            jitter_amplitude: 0.02,
            aspect_ratio: ValueRange(0.9, 1.1),
            shear_degrees: ValueRange(-10.0, 10.0),
            zoom_factor: ValueRange(0.9, 1.1),
            shift_fraction: ValueRange(-0.1, 0.1),
        }
    }
}

impl AugmentationSpec {
    /// A spec whose every operator is the identity; a fixed point of
    /// [`apply_augmentation`].
    pub fn identity() -> AugmentationSpec {
        AugmentationSpec {
            rotation_degrees: ValueRange::fixed(0.0),
            horizontal_flip_prob: 0.0,
            vertical_flip_prob: 0.0,
            crop_fraction: ValueRange::fixed(1.0),
            brightness_delta: ValueRange::fixed(0.0),
            contrast_factor: ValueRange::fixed(1.0),
            jitter_amplitude: 0.0,
            aspect_ratio: ValueRange::fixed(1.0),
            shear_degrees: ValueRange::fixed(0.0),
            zoom_factor: ValueRange::fixed(1.0),
            shift_fraction: ValueRange::fixed(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation_degrees.check("rotation_degrees")?;
        self.shear_degrees.check("shear_degrees")?;
        self.brightness_delta.check("brightness_delta")?;
        self.shift_fraction.check("shift_fraction")?;
        self.crop_fraction.check("crop_fraction")?;
        self.contrast_factor.check("contrast_factor")?;
        self.aspect_ratio.check("aspect_ratio")?;
        self.zoom_factor.check("zoom_factor")?;
        for (name, prob) in [
            ("horizontal_flip_prob", self.horizontal_flip_prob),
            ("vertical_flip_prob", self.vertical_flip_prob),
        ] {
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::AugmentationSpec(format!(
                    "{name} is {prob}, must lie in [0, 1]"
                )));
            }
        }
        if !(self.crop_fraction.low() > 0.0 && self.crop_fraction.high() <= 1.0) {
            return Err(Error::AugmentationSpec(format!(
                "crop_fraction range [{}, {}] must lie in (0, 1]",
                self.crop_fraction.low(),
                self.crop_fraction.high()
            )));
        }
        for (name, range) in [
            ("contrast_factor", self.contrast_factor),
            ("aspect_ratio", self.aspect_ratio),
            ("zoom_factor", self.zoom_factor),
        ] {
            if range.low() <= 0.0 {
                return Err(Error::AugmentationSpec(format!(
                    "{name} range must be strictly positive"
                )));
            }
        }
        if self.jitter_amplitude < 0.0 || !self.jitter_amplitude.is_finite() {
            return Err(Error::AugmentationSpec(format!(
                "jitter_amplitude is {}, must be finite and >= 0",
                self.jitter_amplitude
            )));
        }
        Ok(())
    }
}

/// 2D affine map `(x, y) -> (a x + b y + c, d x + e y + f)` in centered pixel
/// coordinates (x along columns, y along rows, y pointing down).
#[derive(Clone, Copy, Debug, PartialEq)]
struct Affine {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
}

impl Affine {
    const IDENTITY: Affine = Affine {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        e: 1.0,
        f: 0.0,
    };

    fn is_identity(&self) -> bool {
        *self == Affine::IDENTITY
    }

    /// `self ∘ other`: apply `other` first.
    fn compose(&self, other: &Affine) -> Affine {
        Affine {
            a: self.a * other.a + self.b * other.d,
            b: self.a * other.b + self.b * other.e,
            c: self.a * other.c + self.b * other.f + self.c,
            d: self.d * other.a + self.e * other.d,
            e: self.d * other.b + self.e * other.e,
            f: self.d * other.c + self.e * other.f + self.f,
        }
    }

    fn invert(&self) -> Result<Affine> {
        let det = self.a * self.e - self.b * self.d;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::AugmentationSpec(
                "geometric parameters produce a singular transform".to_string(),
            ));
        }
        let (a, b, d, e) = (self.e / det, -self.b / det, -self.d / det, self.a / det);
        Affine {
            a,
            b,
            c: -(a * self.c + b * self.f),
            d,
            e,
            f: -(d * self.c + e * self.f),
        }
        .pipe_ok()
    }

    fn pipe_ok(self) -> Result<Affine> {
        Ok(self)
    }

    /// Content rotation; positive angles turn the image clockwise when row 0
    /// is displayed on top. Exact at multiples of 90 degrees so right-angle
    /// rotations sample pixel centers exactly.
    fn rotation_degrees(theta: f64) -> Affine {
        let (sin, cos) = sin_cos_degrees(theta);
        Affine {
            a: cos,
            b: -sin,
            c: 0.0,
            d: sin,
            e: cos,
            f: 0.0,
        }
    }

    /// Horizontal shear by an angle in degrees.
    fn shear_degrees(angle: f64) -> Affine {
        let t = if angle == 0.0 {
            0.0
        } else {
            angle.to_radians().tan()
        };
        Affine {
            a: 1.0,
            b: t,
            c: 0.0,
            d: 0.0,
            e: 1.0,
            f: 0.0,
        }
    }

    fn scale(sx: f64, sy: f64) -> Affine {
        Affine {
            a: sx,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            e: sy,
            f: 0.0,
        }
    }

    fn translate(tx: f64, ty: f64) -> Affine {
        Affine {
            a: 1.0,
            b: 0.0,
            c: tx,
            d: 0.0,
            e: 1.0,
            f: ty,
        }
    }
}

/// Sine and cosine of an angle in degrees, exact at quadrant boundaries.
fn sin_cos_degrees(degrees: f64) -> (f64, f64) {
    let folded = degrees.rem_euclid(360.0);
    if folded == 0.0 {
        (0.0, 1.0)
    } else if folded == 90.0 {
        (1.0, 0.0)
    } else if folded == 180.0 {
        (0.0, -1.0)
    } else if folded == 270.0 {
        (-1.0, 0.0)
    } else {
        degrees.to_radians().sin_cos()
    }
}

/// Reflect an index into `[0, n)` without repeating the border pixel.
fn reflect_index(t: i64, n: usize) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut t = t.rem_euclid(period);
    if t >= n as i64 {
        t = period - t;
    }
    t as usize
}

/// Bilinear sample with reflection padding. Integer coordinates reproduce the
/// underlying pixel exactly.
fn sample_bilinear(image: &ImageBuffer, c: usize, y: f64, x: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (h, w) = (image.height(), image.width());
    let v00 = image.get(c, reflect_index(y0, h), reflect_index(x0, w));
    let v01 = image.get(c, reflect_index(y0, h), reflect_index(x0 + 1, w));
    let v10 = image.get(c, reflect_index(y0 + 1, h), reflect_index(x0, w));
    let v11 = image.get(c, reflect_index(y0 + 1, h), reflect_index(x0 + 1, w));
    let top = (1.0 - fx) * v00 + fx * v01;
    let bottom = (1.0 - fx) * v10 + fx * v11;
    (1.0 - fy) * top + fy * bottom
}

/// Inverse-map the image through `inverse`, sampling around the image center.
fn warp(image: &ImageBuffer, inverse: &Affine) -> ImageBuffer {
    let (h, w) = (image.height(), image.width());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = ImageBuffer::zeros(h, w);
    for y in 0..h {
        let yd = y as f64 - cy;
        for x in 0..w {
            let xd = x as f64 - cx;
            let sx = inverse.a * xd + inverse.b * yd + inverse.c + cx;
            let sy = inverse.d * xd + inverse.e * yd + inverse.f + cy;
            for c in 0..ImageBuffer::CHANNELS {
                out.set(c, y, x, sample_bilinear(image, c, sy, sx));
            }
        }
    }
    out
}

fn crop(image: &ImageBuffer, oy: usize, ox: usize, ch: usize, cw: usize) -> ImageBuffer {
    ImageBuffer::from_fn(ch, cw, |c, y, x| image.get(c, y + oy, x + ox))
}

fn flip_horizontal(image: &ImageBuffer) -> ImageBuffer {
    let w = image.width();
    ImageBuffer::from_fn(image.height(), w, |c, y, x| image.get(c, y, w - 1 - x))
}

fn flip_vertical(image: &ImageBuffer) -> ImageBuffer {
    let h = image.height();
    ImageBuffer::from_fn(h, image.width(), |c, y, x| image.get(c, h - 1 - y, x))
}

/// Map a uniform draw to an integer offset in `[0, max]`.
fn draw_offset(rng: &mut ChaCha8Rng, max: usize) -> usize {
    let u: f64 = rng.random();
    ((u * (max as f64 + 1.0)).floor() as usize).min(max)
}

/// Apply the full operator chain. The output shape is the post-crop shape;
/// identical `(image, spec, rng seed)` triples give bit-identical results.
pub fn apply_augmentation(
    image: &ImageBuffer,
    spec: &AugmentationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ImageBuffer> {
    spec.validate()?;
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::Dimension("cannot augment an empty image".to_string()));
    }

    // Draws happen in the fixed operator order regardless of whether an
    // operator ends up being the identity.
    let rotation = spec.rotation_degrees.sample(rng);
    let shear = spec.shear_degrees.sample(rng);
    let zoom = spec.zoom_factor.sample(rng);
    let aspect = spec.aspect_ratio.sample(rng);
    let shift_x = spec.shift_fraction.sample(rng);
    let shift_y = spec.shift_fraction.sample(rng);
    let crop_fraction = spec.crop_fraction.sample(rng);

    let crop_h = (crop_fraction * h as f64).round();
    let crop_w = (crop_fraction * w as f64).round();
    if crop_h < 1.0 || crop_w < 1.0 {
        return Err(Error::AugmentationSpec(format!(
            "crop fraction {crop_fraction} leaves less than one pixel of a {h}x{w} image"
        )));
    }
    let (crop_h, crop_w) = (crop_h as usize, crop_w as usize);
    let crop_oy = draw_offset(rng, h - crop_h);
    let crop_ox = draw_offset(rng, w - crop_w);

    let flip_h_draw: f64 = rng.random();
    let flip_v_draw: f64 = rng.random();
    let brightness = spec.brightness_delta.sample(rng);
    let contrast = spec.contrast_factor.sample(rng);

    let sqrt_aspect = aspect.sqrt();
    let forward = Affine::translate(shift_x * w as f64, shift_y * h as f64)
        .compose(&Affine::scale(sqrt_aspect, 1.0 / sqrt_aspect))
        .compose(&Affine::scale(zoom, zoom))
        .compose(&Affine::shear_degrees(shear))
        .compose(&Affine::rotation_degrees(rotation));

    let mut current = if forward.is_identity() {
        image.clone()
    } else {
        warp(image, &forward.invert()?)
    };

    if crop_h != h || crop_w != w {
        current = crop(&current, crop_oy, crop_ox, crop_h, crop_w);
    }
    if flip_h_draw < spec.horizontal_flip_prob {
        current = flip_horizontal(&current);
    }
    if flip_v_draw < spec.vertical_flip_prob {
        current = flip_vertical(&current);
    }
    if brightness != 0.0 {
        current = current.map(|v| v + brightness);
    }
    if contrast != 1.0 {
        current = current.map(|v| 0.5 + (v - 0.5) * contrast);
    }
    if spec.jitter_amplitude > 0.0 {
        let amp = spec.jitter_amplitude;
        for value in current.data_mut() {
            let u: f64 = rng.random();
            *value += amp * (2.0 * u - 1.0);
        }
    }
    Ok(current.map(|v| v.clamp(0.0, 1.0)))
}

/// The per-sample generator for position `index` of an epoch. Deriving each
/// stream from the epoch seed and the sample position keeps augmented batches
/// identical no matter how samples are distributed over workers.
pub fn sample_rng(epoch_seed: u64, index: u64) -> ChaCha8Rng {
    seeded_rng(derive_indexed_seed(epoch_seed, "augment", index))
}

/// Per-class draw counts for one oversampled epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OversamplePlan {
    draws: [usize; NUM_CLASSES],
}

impl OversamplePlan {
    pub fn draws(&self, class: LesionClass) -> usize {
        self.draws[class.ordinal()]
    }

    pub fn epoch_size(&self) -> usize {
        self.draws.iter().sum()
    }
}

/// Divide `epoch_size` as evenly as possible across the seven classes: floor
/// for all, remainder to the lowest-count classes first (ties by ordinal).
pub fn build_oversample_plan(
    distribution: &ClassDistribution,
    epoch_size: usize,
) -> Result<OversamplePlan> {
    for class in LesionClass::ALL {
        if distribution.count(class) == 0 {
            return Err(Error::EmptyClass(class));
        }
    }
    if epoch_size < NUM_CLASSES {
        return Err(Error::Plan(format!(
            "epoch size {epoch_size} is below one draw per class"
        )));
    }
    let base = epoch_size / NUM_CLASSES;
    let remainder = epoch_size % NUM_CLASSES;
    let mut draws = [base; NUM_CLASSES];
    let mut by_count: Vec<LesionClass> = LesionClass::ALL.to_vec();
    by_count.sort_by_key(|&class| (distribution.count(class), class.ordinal()));
    for class in by_count.into_iter().take(remainder) {
        draws[class.ordinal()] += 1;
    }
    Ok(OversamplePlan { draws })
}

/// Draw one epoch of record indices according to `plan`: per class, without
/// replacement when the class has enough records, with replacement otherwise.
/// The concatenated draws are shuffled into the final order.
pub fn sample_epoch(
    records: &[SampleRecord],
    plan: &OversamplePlan,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (index, record) in records.iter().enumerate() {
        by_class[record.label.ordinal()].push(index);
    }

    let mut epoch = Vec::with_capacity(plan.epoch_size());
    for class in LesionClass::ALL {
        let sources = &by_class[class.ordinal()];
        let draws = plan.draws(class);
        if draws == 0 {
            continue;
        }
        if sources.is_empty() {
            return Err(Error::Plan(format!(
                "plan draws {draws} samples of class {class} but no records have that class"
            )));
        }
        if draws <= sources.len() {
            let mut pool = sources.clone();
            pool.shuffle(rng);
            epoch.extend(pool.into_iter().take(draws));
        } else {
            for _ in 0..draws {
                let pick = rng.random_range(0..sources.len());
                epoch.push(sources[pick]);
            }
        }
    }
    epoch.shuffle(rng);
    Ok(epoch)
}
