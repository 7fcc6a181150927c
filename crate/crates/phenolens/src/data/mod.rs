//! Synthetic phenotype dataset generation.
//!
//! Samples are grayscale images of a soft-edged elliptical body on a dark
//! background. Each individual gets its own randomized template (position,
//! axes, orientation, intensity); treated classes blend the template toward a
//! fully deformed target image, with blend weight a strictly increasing
//! function of concentration. This keeps two properties exact by
//! construction: a treated individual at concentration zero renders its own
//! untreated template bit-for-bit, and the L2 pixel distance to that
//! untreated image is non-decreasing in concentration.

pub mod augment;

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Square grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pixels: Array2<f32>,
}

impl ImageGrid {
    pub const MIN_SIDE: usize = 8;

    pub fn new(pixels: Array2<f32>) -> Result<Self> {
        let (rows, cols) = pixels.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch(format!(
                "image must be square, got {rows}x{cols}"
            )));
        }
        if rows < Self::MIN_SIDE {
            return Err(Error::InvalidConfig {
                field: "image_size".into(),
                reason: format!("side {rows} is below the minimum {}", Self::MIN_SIDE),
            });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::NonFiniteInput(format!(
                "pixel value {p} outside [0, 1]"
            )));
        }
        Ok(ImageGrid { pixels })
    }

    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    /// Row-major flattened copy, the encoder's input layout.
    pub fn flat(&self) -> Vec<f32> {
        self.pixels.iter().copied().collect()
    }
}

/// One generated specimen.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub id: String,
    pub image: ImageGrid,
    pub label: String,
    /// Dimensionless dose scalar; 0 means untreated.
    pub concentration: f64,
}

/// Generator settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Ordered class list; must contain "Normal" and "Dead".
    pub class_names: Vec<String>,
    pub n_per_class: usize,
    pub image_size: usize,
    /// Dose levels per treated class, strictly increasing. Samples of a
    /// class cycle through its levels in index order.
    pub concentration_levels: BTreeMap<String, Vec<f64>>,
    /// Scale of per-individual variation of the untreated template.
    pub template_jitter: f64,
}

pub const NORMAL_CLASS: &str = "Normal";
pub const DEAD_CLASS: &str = "Dead";

impl Default for SyntheticConfig {
    fn default() -> Self {
        let class_names: Vec<String> = ["Normal", "Dead", "Elongated", "Bent", "Spotted", "Shaded"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut concentration_levels = BTreeMap::new();
        for name in &class_names {
            if name != NORMAL_CLASS {
                concentration_levels.insert(name.clone(), vec![0.25, 1.0, 4.0, 16.0]);
            }
        }
        SyntheticConfig {
            class_names,
            n_per_class: 40,
            image_size: 32,
            concentration_levels,
            template_jitter: 0.10,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::invalid_config("class_names", "need at least 2 classes"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.class_names {
            if !seen.insert(name) {
                return Err(Error::invalid_config(
                    "class_names",
                    format!("duplicate class `{name}`"),
                ));
            }
        }
        for required in [NORMAL_CLASS, DEAD_CLASS] {
            if !self.class_names.iter().any(|c| c == required) {
                return Err(Error::invalid_config(
                    "class_names",
                    format!("missing required class `{required}`"),
                ));
            }
        }
        if self.n_per_class == 0 {
            return Err(Error::invalid_config("n_per_class", "must be at least 1"));
        }
        if self.image_size < ImageGrid::MIN_SIDE {
            return Err(Error::invalid_config(
                "image_size",
                format!("must be at least {}", ImageGrid::MIN_SIDE),
            ));
        }
        if !(self.template_jitter.is_finite() && self.template_jitter >= 0.0) {
            return Err(Error::invalid_config("template_jitter", "must be finite and >= 0"));
        }
        for name in &self.class_names {
            if name == NORMAL_CLASS {
                if self.concentration_levels.contains_key(name) {
                    return Err(Error::invalid_config(
                        "concentration_levels",
                        "the Normal class takes no dose levels",
                    ));
                }
                continue;
            }
            let levels = self.concentration_levels.get(name).ok_or_else(|| {
                Error::invalid_config(
                    "concentration_levels",
                    format!("missing levels for class `{name}`"),
                )
            })?;
            if levels.is_empty() {
                return Err(Error::invalid_config(
                    "concentration_levels",
                    format!("class `{name}` has an empty level list"),
                ));
            }
            let increasing = levels.windows(2).all(|w| w[0] < w[1]);
            if !increasing || levels.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
                return Err(Error::invalid_config(
                    "concentration_levels",
                    format!("levels for `{name}` must be positive and strictly increasing"),
                ));
            }
        }
        Ok(())
    }
}

/// Untreated template of one individual, in normalized [0,1]^2 coordinates.
#[derive(Debug, Clone)]
struct Template {
    cx: f64,
    cy: f64,
    semi_major: f64,
    semi_minor: f64,
    orientation: f64,
    peak: f64,
    softness: f64,
    core_offset: f64,
    core_amp: f64,
    core_sigma: f64,
}

impl Template {
    fn draw(rng: &mut SplitMix64, jitter: f64) -> Template {
        fn sym(rng: &mut SplitMix64, jitter: f64, scale: f64) -> f64 {
            scale * jitter * rng.uniform(-1.0, 1.0)
        }
        let cx = 0.5 + sym(rng, jitter, 0.10);
        let cy = 0.5 + sym(rng, jitter, 0.10);
        let semi_major = 0.30 * (1.0 + sym(rng, jitter, 0.35));
        let semi_minor = 0.17 * (1.0 + sym(rng, jitter, 0.35));
        // Orientation is always fully random: class identity must not be
        // readable from pose.
        let orientation = rng.uniform(0.0, std::f64::consts::TAU);
        let peak = (0.85 + sym(rng, jitter, 0.12)).min(1.0);
        let softness = 0.07 * (1.0 + sym(rng, jitter, 0.4));
        let core_amp = 0.30 * (1.0 + sym(rng, jitter, 0.3));
        Template {
            cx,
            cy,
            semi_major,
            semi_minor,
            orientation,
            peak,
            softness,
            core_offset: 0.45 * semi_major,
            core_amp,
            core_sigma: 0.45 * semi_minor,
        }
    }

    /// Body coordinates of a point: offsets along the major/minor axes.
    fn body_coords(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let (sin, cos) = self.orientation.sin_cos();
        (cos * dx + sin * dy, -sin * dx + cos * dy)
    }
}

/// Full-strength deformation of a treated class.
#[derive(Debug, Clone)]
enum Deformation {
    /// Collapsed, rounder body with a speckled interior.
    Collapse { noise: Vec<f64> },
    /// Stretched along the major axis, thinned along the minor one.
    Elongate,
    /// Body axis bowed; the bow direction is fixed per individual.
    Bend { direction: f64 },
    /// Dark blemishes at fixed in-body positions.
    Spots { spots: Vec<Spot> },
    /// Intensity ramp that darkens one end of the body.
    Shade { direction: f64 },
}

#[derive(Debug, Clone)]
struct Spot {
    u: f64,
    v: f64,
    depth: f64,
    sigma: f64,
}

const DEFORM_KINDS: usize = 4;

impl Deformation {
    /// Deformation for the class at `class_index`. Treated classes other
    /// than Dead cycle through the four parametric kinds in class order.
    fn draw(
        class_name: &str,
        deform_slot: usize,
        rng: &mut SplitMix64,
        image_size: usize,
    ) -> Option<Deformation> {
        if class_name == NORMAL_CLASS {
            return None;
        }
        if class_name == DEAD_CLASS {
            let noise = (0..image_size * image_size)
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect();
            return Some(Deformation::Collapse { noise });
        }
        Some(match deform_slot % DEFORM_KINDS {
            0 => Deformation::Elongate,
            1 => Deformation::Bend {
                direction: if rng.next_f64() < 0.5 { -1.0 } else { 1.0 },
            },
            2 => {
                let spots = (0..4)
                    .map(|_| Spot {
                        u: rng.uniform(-0.6, 0.6),
                        v: rng.uniform(-0.6, 0.6),
                        depth: rng.uniform(0.45, 0.65),
                        sigma: rng.uniform(0.035, 0.055),
                    })
                    .collect();
                Deformation::Spots { spots }
            }
            _ => Deformation::Shade {
                direction: if rng.next_f64() < 0.5 { -1.0 } else { 1.0 },
            },
        })
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft ellipse body plus bright core; the shared primitive of all renders.
fn body_value(tpl: &Template, a: f64, b: f64, u: f64, v: f64) -> f64 {
    let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
    let body = tpl.peak * logistic((1.0 - r) / tpl.softness);
    let du = u - tpl.core_offset;
    let core = tpl.core_amp * (-(du * du + v * v) / (2.0 * tpl.core_sigma * tpl.core_sigma)).exp();
    body + core
}

fn render_base(tpl: &Template, size: usize) -> Array2<f32> {
    let mut px = Array2::zeros((size, size));
    for r in 0..size {
        let y = (r as f64 + 0.5) / size as f64;
        for c in 0..size {
            let x = (c as f64 + 0.5) / size as f64;
            let (u, v) = tpl.body_coords(x, y);
            let val = body_value(tpl, tpl.semi_major, tpl.semi_minor, u, v);
            px[[r, c]] = val.clamp(0.0, 1.0) as f32;
        }
    }
    px
}

fn render_target(tpl: &Template, deform: &Deformation, size: usize) -> Array2<f32> {
    let mut px = Array2::zeros((size, size));
    for r in 0..size {
        let y = (r as f64 + 0.5) / size as f64;
        for c in 0..size {
            let x = (c as f64 + 0.5) / size as f64;
            let (u, v) = tpl.body_coords(x, y);
            let val = match deform {
                Deformation::Collapse { noise } => {
                    let a = 0.50 * tpl.semi_major;
                    let b = 0.80 * tpl.semi_minor;
                    let body = body_value(tpl, a, b, u, v);
                    let weight = (body / (tpl.peak + tpl.core_amp)).clamp(0.0, 1.0);
                    body + 0.45 * noise[r * size + c] * weight
                }
                Deformation::Elongate => {
                    body_value(tpl, 1.7 * tpl.semi_major, 0.62 * tpl.semi_minor, u, v)
                }
                Deformation::Bend { direction } => {
                    let bent_v = v - direction * 1.3 * tpl.semi_minor * (u / tpl.semi_major).powi(2);
                    body_value(tpl, tpl.semi_major, tpl.semi_minor, u, bent_v)
                }
                Deformation::Spots { spots } => {
                    let mut val = body_value(tpl, tpl.semi_major, tpl.semi_minor, u, v);
                    for s in spots {
                        let du = u - s.u * tpl.semi_major;
                        let dv = v - s.v * tpl.semi_minor;
                        val -= s.depth * (-(du * du + dv * dv) / (2.0 * s.sigma * s.sigma)).exp();
                    }
                    val
                }
                Deformation::Shade { direction } => {
                    let t = ((direction * u / tpl.semi_major + 1.0) / 2.0).clamp(0.0, 1.0);
                    body_value(tpl, tpl.semi_major, tpl.semi_minor, u, v) * (1.0 - 0.80 * t)
                }
            };
            px[[r, c]] = val.clamp(0.0, 1.0) as f32;
        }
    }
    px
}

/// Blend weight for a dose; strictly increasing, 0 at dose 0, saturating
/// below 1.
pub fn deformation_magnitude(concentration: f64) -> f64 {
    concentration / (1.0 + concentration)
}

fn blend(base: &Array2<f32>, target: &Array2<f32>, magnitude: f32) -> Array2<f32> {
    let keep = 1.0 - magnitude;
    let mut out = base.clone();
    // The convex combination can exceed 1 by an ulp; clamp keeps the grid
    // valid without touching the magnitude-0 case bit-wise.
    out.zip_mut_with(target, |b, &t| *b = (keep * *b + magnitude * t).clamp(0.0, 1.0));
    out
}

/// Index of `class_name` among the treated non-Dead classes, which selects
/// its deformation kind.
fn deform_slot(cfg: &SyntheticConfig, class_index: usize) -> usize {
    cfg.class_names[..class_index]
        .iter()
        .filter(|c| *c != NORMAL_CLASS && *c != DEAD_CLASS)
        .count()
}

fn individual_rng(seed: u64, class_index: usize, individual: usize) -> SplitMix64 {
    SplitMix64::new(seed).child(&[1, class_index as u64, individual as u64])
}

/// Image of one individual at a given dose. Dose 0 reproduces the
/// individual's untreated template exactly.
pub fn sample_image(
    cfg: &SyntheticConfig,
    seed: u64,
    class_index: usize,
    individual: usize,
    concentration: f64,
) -> Result<ImageGrid> {
    cfg.validate()?;
    let class_name = cfg
        .class_names
        .get(class_index)
        .ok_or_else(|| Error::invalid_config("class_index", "out of range"))?
        .clone();
    if !(concentration.is_finite() && concentration >= 0.0) {
        return Err(Error::invalid_config("concentration", "must be finite and >= 0"));
    }
    let mut rng = individual_rng(seed, class_index, individual);
    let tpl = Template::draw(&mut rng, cfg.template_jitter);
    let deform = Deformation::draw(&class_name, deform_slot(cfg, class_index), &mut rng, cfg.image_size);
    let base = render_base(&tpl, cfg.image_size);
    let px = match deform {
        None => base,
        Some(d) => {
            let target = render_target(&tpl, &d, cfg.image_size);
            blend(&base, &target, deformation_magnitude(concentration) as f32)
        }
    };
    ImageGrid::new(px)
}

/// Untreated template image of one individual, rendered without touching any
/// deformation code path.
pub fn normal_template_image(
    cfg: &SyntheticConfig,
    seed: u64,
    class_index: usize,
    individual: usize,
) -> Result<ImageGrid> {
    cfg.validate()?;
    if class_index >= cfg.class_names.len() {
        return Err(Error::invalid_config("class_index", "out of range"));
    }
    let mut rng = individual_rng(seed, class_index, individual);
    let tpl = Template::draw(&mut rng, cfg.template_jitter);
    ImageGrid::new(render_base(&tpl, cfg.image_size))
}

/// Generate the full dataset: `class_names.len() * n_per_class` samples in
/// (class, index) order. Treated samples cycle through their class's dose
/// levels; the result depends only on `(cfg, seed)`.
pub fn generate_dataset(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.class_names.len() * cfg.n_per_class);
    for (class_index, class_name) in cfg.class_names.iter().enumerate() {
        let levels = cfg.concentration_levels.get(class_name);
        for individual in 0..cfg.n_per_class {
            let concentration = match levels {
                None => 0.0,
                Some(levels) => levels[individual % levels.len()],
            };
            let image = sample_image(cfg, seed, class_index, individual, concentration)?;
            out.push(SyntheticSample {
                id: format!("{class_name}-{individual:04}"),
                image,
                label: class_name.clone(),
                concentration,
            });
        }
    }
    Ok(out)
}
