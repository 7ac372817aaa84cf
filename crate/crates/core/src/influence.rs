//! Which latent parts can reach each output pixel.
//!
//! The symbolic map starts from the layout (one part per block cell) and
//! pushes per-pixel part bitsets through the generator plan: a SAME conv
//! takes the union over its (edge-truncated) window, nearest upsampling
//! copies the source bitset, and pointwise layers leave bitsets unchanged.
//! The result is the exact support of the functional dependency of each
//! pixel on each `z_i`, independent of weight values.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::latent::{derive_seed, resample_part, PartLatentBundle};
use crate::layout::{PartId, PartLayout};
use crate::model::{Generator, Layer, ModelSpec};

/// Parts are tracked in a `u64`, so at most 64 parts.
pub const MAX_PARTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InfluenceMap {
    height: usize,
    width: usize,
    num_parts: usize,
    /// Row-major; bit `i - 1` set iff part `i` influences the pixel.
    sets: Vec<u64>,
}

impl InfluenceMap {
    /// Singleton sets straight from the layout.
    pub fn from_layout(layout: &PartLayout) -> Result<Self> {
        if layout.num_parts() > MAX_PARTS {
            return Err(Error::InvalidLayout(format!(
                "{} parts exceed the {MAX_PARTS}-part influence limit",
                layout.num_parts()
            )));
        }
        let sets = layout
            .owner_grid()
            .into_iter()
            .map(|o| o.map_or(0, |p| 1u64 << (p - 1)))
            .collect();
        Ok(Self {
            height: layout.grid_height(),
            width: layout.grid_width(),
            num_parts: layout.num_parts(),
            sets,
        })
    }

    pub fn resolution(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn bits(&self) -> &[u64] {
        &self.sets
    }

    pub fn bits_at(&self, row: usize, col: usize) -> u64 {
        self.sets[row * self.width + col]
    }

    /// Sorted part ids influencing `(row, col)`.
    pub fn parts_at(&self, row: usize, col: usize) -> Vec<PartId> {
        let bits = self.bits_at(row, col);
        (1..=self.num_parts).filter(|p| bits & (1 << (p - 1)) != 0).collect()
    }

    pub fn part_count_at(&self, row: usize, col: usize) -> u32 {
        self.bits_at(row, col).count_ones()
    }

    /// Pixels whose set contains `part`.
    pub fn part_mask(&self, part: PartId) -> Vec<bool> {
        let bit = 1u64 << (part - 1);
        self.sets.iter().map(|s| s & bit != 0).collect()
    }

    /// SAME-padded `k × k` window union.
    pub fn apply_conv(&self, kernel: usize) -> Self {
        let r = (kernel / 2) as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = vec![0u64; self.sets.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0u64;
                for sy in (y - r).max(0)..=(y + r).min(h - 1) {
                    for sx in (x - r).max(0)..=(x + r).min(w - 1) {
                        acc |= self.sets[(sy * w + sx) as usize];
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        Self {
            sets: out,
            ..self.clone()
        }
    }

    pub fn apply_upsample2x(&self) -> Self {
        let (h2, w2) = (self.height * 2, self.width * 2);
        let sets = (0..h2 * w2)
            .map(|i| self.sets[(i / w2 / 2) * self.width + (i % w2) / 2])
            .collect();
        Self {
            height: h2,
            width: w2,
            num_parts: self.num_parts,
            sets,
        }
    }

    /// Grayscale rendering: number of influencing parts per pixel.
    pub fn part_count_image(&self) -> Vec<u32> {
        self.sets.iter().map(|s| s.count_ones()).collect()
    }

    /// One line per pixel row; each pixel as its part ids joined by `+`.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# influence map {}x{} parts {}\n",
            self.height, self.width, self.num_parts
        );
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|x| {
                    self.parts_at(y, x)
                        .iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                        .join("+")
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn is_mirror_symmetric(&self) -> bool {
        let w = self.width;
        (0..self.height).all(|y| (0..w).all(|x| self.sets[y * w + x] == self.sets[y * w + w - 1 - x]))
    }
}

/// Propagate layout bitsets through an explicit layer plan.
pub fn propagate(plan: &[Layer], layout: &PartLayout) -> Result<InfluenceMap> {
    let mut map = InfluenceMap::from_layout(layout)?;
    for layer in plan {
        map = match layer {
            Layer::Conv { kernel, .. } => {
                if *kernel == 1 {
                    map
                } else {
                    map.apply_conv(*kernel)
                }
            }
            Layer::Upsample2x => map.apply_upsample2x(),
            Layer::Activation | Layer::PixelNorm | Layer::Tanh => map,
            Layer::Opaque(name) => return Err(Error::UnsupportedLayer(name.clone())),
        };
    }
    Ok(map)
}

/// Exact influence map at the generator's output resolution.
pub fn symbolic_influence(spec: &ModelSpec, layout: &PartLayout) -> Result<InfluenceMap> {
    if layout != &spec.layout {
        return Err(Error::LayoutMismatch(
            "influence layout differs from the model spec's layout".into(),
        ));
    }
    let map = propagate(&spec.generator_plan(), layout)?;
    debug_assert_eq!(map.resolution(), spec.out_resolution);
    Ok(map)
}

/// Resample `z_part` `probes` times and flag pixels whose value moves by more
/// than `threshold` (max over colour channels, then over probes).
pub fn empirical_influence(
    generator: &Generator,
    bundle: &PartLatentBundle,
    part: PartId,
    probes: usize,
    threshold: f32,
) -> Result<Vec<bool>> {
    generator.spec.layout.check_part(part)?;
    if probes == 0 {
        return Err(Error::Config("empirical influence needs at least one probe".into()));
    }
    let base_seed = derive_seed(bundle.seed.unwrap_or(0) ^ 0x1f1e_4c3e, part as u64);
    let mut batch = vec![bundle.clone()];
    for p in 0..probes {
        batch.push(resample_part(
            bundle,
            &generator.prior,
            part,
            derive_seed(base_seed, p as u64),
        )?);
    }
    let images = generator.generate_chunked(&batch, 32)?;
    let r = generator.spec.out_resolution;
    let ch = generator.spec.rgb_channels;
    let plane = r * r;
    let per_image = ch * plane;
    let data = images.data();
    let base = &data[..per_image];
    let mut max_delta = vec![0.0f32; plane];
    for probe in 1..=probes {
        let img = &data[probe * per_image..(probe + 1) * per_image];
        for c in 0..ch {
            for (i, m) in max_delta.iter_mut().enumerate() {
                let d = (img[c * plane + i] - base[c * plane + i]).abs();
                if d > *m {
                    *m = d;
                }
            }
        }
    }
    Ok(max_delta.into_iter().map(|d| d > threshold).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Inside,
    Interlocking,
    Outside,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Inside, Region::Interlocking, Region::Outside];

    pub fn name(self) -> &'static str {
        match self {
            Region::Inside => "inside",
            Region::Interlocking => "interlocking",
            Region::Outside => "outside",
        }
    }
}

/// Inside: influenced by `part` only. Interlocking: by `part` and at least
/// one other. Outside: not by `part`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMasks {
    pub part: PartId,
    pub resolution: usize,
    pub inside: Vec<bool>,
    pub interlocking: Vec<bool>,
    pub outside: Vec<bool>,
}

impl RegionMasks {
    pub fn mask(&self, region: Region) -> &[bool] {
        match region {
            Region::Inside => &self.inside,
            Region::Interlocking => &self.interlocking,
            Region::Outside => &self.outside,
        }
    }

    pub fn count(&self, region: Region) -> usize {
        self.mask(region).iter().filter(|&&b| b).count()
    }
}

pub fn classify_regions(map: &InfluenceMap, part: PartId) -> Result<RegionMasks> {
    if part == 0 || part > map.num_parts {
        return Err(Error::PartOutOfRange {
            part,
            num_parts: map.num_parts,
        });
    }
    let bit = 1u64 << (part - 1);
    let n = map.sets.len();
    let mut masks = RegionMasks {
        part,
        resolution: map.width,
        inside: vec![false; n],
        interlocking: vec![false; n],
        outside: vec![false; n],
    };
    for (i, &s) in map.sets.iter().enumerate() {
        if s & bit == 0 {
            masks.outside[i] = true;
        } else if s == bit {
            masks.inside[i] = true;
        } else {
            masks.interlocking[i] = true;
        }
    }
    Ok(masks)
}

/// Influence after the first block convolution only, nearest-upsampled to
/// the output resolution. This is the block-granularity view in which a
/// single `k × k` window straddling part borders defines the regions; deeper
/// layers only widen the interlocking band.
pub fn block_influence(spec: &ModelSpec) -> Result<InfluenceMap> {
    let mut map = InfluenceMap::from_layout(&spec.layout)?.apply_conv(spec.kernel_size);
    for _ in 0..spec.up_blocks {
        map = map.apply_upsample2x();
    }
    Ok(map)
}
