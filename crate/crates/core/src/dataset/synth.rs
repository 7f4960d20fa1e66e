//! Procedural lesion-like images. Each class draws blob size, border irregularity, a two-tone
//! palette, texture and decorations from its own parameter ranges. MEL and BKL share
//! overlapping ranges on purpose.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LabeledImage, CLASS_NAMES, NUM_CLASSES};
use crate::error::{LxlError, Result};
use crate::image::{Image, CHANNELS};
use crate::parallel;

pub const SUPPORTED_EXTENTS: [usize; 2] = [28, 56];

type Rgb = [f64; 3];

#[derive(Debug, Clone, Copy)]
enum Decoration {
    None,
    /// Red dots scattered inside the lesion.
    RedDots,
    /// Bright central patch of the given colour, as a fraction of the radius.
    Centre(Rgb, f64),
    /// Darker lobules inside the lesion.
    Lobules,
}

#[derive(Debug, Clone, Copy)]
struct ClassStyle {
    radius: (f64, f64),
    irregularity: (f64, f64),
    primary: Rgb,
    secondary: Rgb,
    /// Amplitude of the low-frequency mixing field between the two tones.
    mottling: f64,
    /// Per-pixel noise amplitude inside the lesion.
    texture: f64,
    satellites: (u32, u32),
    decoration: Decoration,
}

const STYLES: [ClassStyle; NUM_CLASSES] = [
    // MEL
    ClassStyle {
        radius: (0.25, 0.35),
        irregularity: (0.10, 0.22),
        primary: [0.30, 0.18, 0.13],
        secondary: [0.33, 0.32, 0.42],
        mottling: 0.8,
        texture: 0.03,
        satellites: (0, 2),
        decoration: Decoration::None,
    },
    // NV
    ClassStyle {
        radius: (0.16, 0.24),
        irregularity: (0.0, 0.04),
        primary: [0.52, 0.34, 0.22],
        secondary: [0.47, 0.30, 0.19],
        mottling: 0.2,
        texture: 0.015,
        satellites: (0, 0),
        decoration: Decoration::None,
    },
    // BCC
    ClassStyle {
        radius: (0.25, 0.33),
        irregularity: (0.04, 0.10),
        primary: [0.90, 0.66, 0.68],
        secondary: [0.82, 0.52, 0.55],
        mottling: 0.5,
        texture: 0.02,
        satellites: (0, 0),
        decoration: Decoration::RedDots,
    },
    // AK
    ClassStyle {
        radius: (0.12, 0.18),
        irregularity: (0.08, 0.18),
        primary: [0.58, 0.20, 0.16],
        secondary: [0.70, 0.34, 0.26],
        mottling: 0.6,
        texture: 0.07,
        satellites: (0, 0),
        decoration: Decoration::None,
    },
    // BKL
    ClassStyle {
        radius: (0.23, 0.33),
        irregularity: (0.07, 0.17),
        primary: [0.40, 0.26, 0.17],
        secondary: [0.33, 0.27, 0.30],
        mottling: 0.6,
        texture: 0.03,
        satellites: (0, 1),
        decoration: Decoration::None,
    },
    // DF
    ClassStyle {
        radius: (0.15, 0.21),
        irregularity: (0.02, 0.06),
        primary: [0.60, 0.42, 0.34],
        secondary: [0.55, 0.36, 0.28],
        mottling: 0.3,
        texture: 0.015,
        satellites: (0, 0),
        decoration: Decoration::Centre([0.95, 0.92, 0.88], 0.45),
    },
    // VASC
    ClassStyle {
        radius: (0.17, 0.26),
        irregularity: (0.02, 0.08),
        primary: [0.68, 0.10, 0.20],
        secondary: [0.36, 0.06, 0.42],
        mottling: 0.7,
        texture: 0.02,
        satellites: (0, 0),
        decoration: Decoration::Lobules,
    },
    // SCC
    ClassStyle {
        radius: (0.22, 0.31),
        irregularity: (0.10, 0.20),
        primary: [0.86, 0.55, 0.52],
        secondary: [0.80, 0.48, 0.44],
        mottling: 0.4,
        texture: 0.03,
        satellites: (0, 0),
        decoration: Decoration::Centre([0.93, 0.88, 0.55], 0.55),
    },
];

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

fn smoothstep(edge: f64, x: f64) -> f64 {
    // 1 inside, 0 outside, one pixel-wide transition.
    (0.5 - x / edge).clamp(-0.5, 0.5) + 0.5
}

fn render(label: usize, extent: usize, rng: &mut ChaCha8Rng) -> Image {
    let st = &STYLES[label];
    let e = extent as f64;
    let px = 28.0 / e; // geometry is authored in 28-pixel units

    let jitter = |rng: &mut ChaCha8Rng, c: Rgb, amt: f64| -> Rgb {
        let b = rng.gen_range(-amt..amt);
        [
            c[0] + b + rng.gen_range(-amt..amt) * 0.5,
            c[1] + b + rng.gen_range(-amt..amt) * 0.5,
            c[2] + b + rng.gen_range(-amt..amt) * 0.5,
        ]
    };
    let skin = jitter(rng, [0.87, 0.70, 0.60], 0.05);
    let primary = jitter(rng, st.primary, 0.04);
    let secondary = jitter(rng, st.secondary, 0.04);

    let cy = e / 2.0 + rng.gen_range(-0.05..0.05) * e;
    let cx = e / 2.0 + rng.gen_range(-0.05..0.05) * e;
    let radius = uniform(rng, st.radius) * e;
    let irr = uniform(rng, st.irregularity);
    let harmonics: Vec<(f64, f64, f64)> = (2..=6)
        .map(|m| {
            let amp = irr * rng.gen_range(0.3..1.0) / (m as f64).sqrt();
            (m as f64, amp, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let boundary = |theta: f64| -> f64 {
        radius * (1.0 + harmonics.iter().map(|(m, a, p)| a * (m * theta + p).cos()).sum::<f64>())
    };

    // Low-frequency field mixing the two tones.
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let ang = rng.gen_range(0.0..PI);
            let freq = rng.gen_range(0.15..0.35) * px;
            (ang, freq, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();

    let satellites: Vec<(f64, f64, f64)> = (0..rng.gen_range(st.satellites.0..=st.satellites.1))
        .map(|_| {
            let th = rng.gen_range(0.0..2.0 * PI);
            let d = radius * rng.gen_range(1.25..1.6);
            (cy + d * th.sin(), cx + d * th.cos(), rng.gen_range(0.9..1.5) / px)
        })
        .collect();

    let inner_spots: Vec<(f64, f64, f64)> = match st.decoration {
        Decoration::RedDots => (0..rng.gen_range(4..8))
            .map(|_| {
                let th = rng.gen_range(0.0..2.0 * PI);
                let d = radius * rng.gen_range(0.0..0.75);
                (cy + d * th.sin(), cx + d * th.cos(), rng.gen_range(0.6..1.0) / px)
            })
            .collect(),
        Decoration::Lobules => (0..rng.gen_range(3..6))
            .map(|_| {
                let th = rng.gen_range(0.0..2.0 * PI);
                let d = radius * rng.gen_range(0.1..0.6);
                (cy + d * th.sin(), cx + d * th.cos(), radius * rng.gen_range(0.2..0.32))
            })
            .collect(),
        _ => Vec::new(),
    };

    let mut data = Vec::with_capacity(extent * extent * CHANNELS);
    for y in 0..extent {
        for x in 0..extent {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let (dy, dx) = (fy - cy, fx - cx);
            let dist = (dy * dy + dx * dx).sqrt();
            let inside = smoothstep(1.0 / px, dist - boundary(dy.atan2(dx)));

            let mix = 0.5
                + 0.5
                    * st.mottling
                    * waves
                        .iter()
                        .map(|(a, f, p)| (f * (fx * a.cos() + fy * a.sin()) + p).sin())
                        .sum::<f64>()
                    / 3.0;
            let mix = mix.clamp(0.0, 1.0);
            let mut lesion: Rgb = [0.0; 3];
            for c in 0..3 {
                lesion[c] = primary[c] * (1.0 - mix) + secondary[c] * mix;
            }
            match st.decoration {
                Decoration::Centre(col, frac) => {
                    let w = smoothstep(1.0 / px, dist - frac * radius);
                    for c in 0..3 {
                        lesion[c] = lesion[c] * (1.0 - w) + col[c] * w;
                    }
                }
                Decoration::RedDots => {
                    for &(sy, sx, r) in &inner_spots {
                        let d = ((fy - sy).powi(2) + (fx - sx).powi(2)).sqrt();
                        let w = smoothstep(1.0 / px, d - r);
                        let red = [0.72, 0.20, 0.22];
                        for c in 0..3 {
                            lesion[c] = lesion[c] * (1.0 - w) + red[c] * w;
                        }
                    }
                }
                Decoration::Lobules => {
                    for &(sy, sx, r) in &inner_spots {
                        let d = ((fy - sy).powi(2) + (fx - sx).powi(2)).sqrt();
                        let w = smoothstep(1.0 / px, d - r) * 0.6;
                        let dark = [0.35, 0.04, 0.15];
                        for c in 0..3 {
                            lesion[c] = lesion[c] * (1.0 - w) + dark[c] * w;
                        }
                    }
                }
                Decoration::None => {}
            }
            let mut sat = 0.0f64;
            for &(sy, sx, r) in &satellites {
                let d = ((fy - sy).powi(2) + (fx - sx).powi(2)).sqrt();
                sat = sat.max(smoothstep(1.0 / px, d - r));
            }
            let grain = rng.gen_range(-1.0..1.0);
            for c in 0..3 {
                let skin_px = skin[c] + 0.01 * grain;
                let lesion_px = lesion[c] + st.texture * grain;
                let mut v = skin_px * (1.0 - inside) + lesion_px * inside;
                v = v * (1.0 - sat) + primary[c] * sat;
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(extent, extent, data).expect("clamped pixels")
}

fn check_extent(extent: usize) -> Result<()> {
    if !SUPPORTED_EXTENTS.contains(&extent) {
        return Err(LxlError::Config(format!(
            "unsupported extent {extent}; expected one of {SUPPORTED_EXTENTS:?}"
        )));
    }
    Ok(())
}

/// Balanced dataset with `n_per_class` images of every class.
pub fn generate_synthetic(n_per_class: usize, extent: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(LxlError::Config("n_per_class must be at least 1".into()));
    }
    generate_with_counts([n_per_class; NUM_CLASSES], extent, seed)
}

/// Dataset with an explicit per-class count. Each image has its own RNG stream derived from
/// `(seed, class, index)`, so generation order does not affect pixels.
pub fn generate_with_counts(counts: [usize; NUM_CLASSES], extent: usize, seed: u64) -> Result<Dataset> {
    check_extent(extent)?;
    let jobs: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(label, &n)| (0..n).map(move |i| (label, i)))
        .collect();
    let items = parallel::map(&jobs, |&(label, i)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((label as u64) << 32) | i as u64);
        LabeledImage {
            id: format!("{}-{:04}", CLASS_NAMES[label], i),
            image: render(label, extent, &mut rng),
            label,
        }
    });
    Dataset::new(items)
}

/// NV-heavy class profile loosely following the ISIC 2019 label distribution.
pub fn isic_like_counts(total: usize) -> [usize; NUM_CLASSES] {
    const WEIGHTS: [f64; NUM_CLASSES] = [0.179, 0.508, 0.131, 0.034, 0.104, 0.009, 0.010, 0.025];
    let mut counts = [0; NUM_CLASSES];
    for (c, w) in counts.iter_mut().zip(WEIGHTS) {
        *c = ((total as f64 * w).round() as usize).max(2);
    }
    counts
}
