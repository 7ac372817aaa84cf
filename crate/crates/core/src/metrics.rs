//! Swap-MSE heatmaps, per-region statistics and Fréchet distance.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{Region, RegionMasks};
use crate::latent::{derive_seed, resample_part, sample_bundles, PartLatentBundle};
use crate::layout::PartId;
use crate::model::{Discriminator, Generator};
use crate::tensor::Tensor;

/// Bundles rendered per forward pass.
const RENDER_CHUNK: usize = 32;
/// Eigenvalues below `-NEG_EIGEN_TOL × max(1, largest |λ|)` count as non-PSD.
pub const NEG_EIGEN_TOL: f64 = 1e-8;

/// Per-pixel mean over samples of the squared difference, averaged over
/// colour channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseHeatmap {
    pub part: PartId,
    pub resolution: usize,
    pub values: Vec<f64>,
    pub sample_count: usize,
}

impl MseHeatmap {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Rows of space-separated values, full round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# swap-mse part={} resolution={} samples={} channels=mean\n",
            self.part, self.resolution, self.sample_count
        );
        for row in self.values.chunks(self.resolution) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapMse {
    pub heatmap: MseHeatmap,
    /// One channel-averaged squared-difference map per sample.
    pub per_image: Vec<Vec<f32>>,
}

/// For `n` bundles drawn from `seed`, resample only `part` and measure how
/// much each pixel moves. `zero_swap` keeps the bundle unchanged (control).
pub fn swap_mse(generator: &Generator, part: PartId, n: usize, seed: u64, zero_swap: bool) -> Result<SwapMse> {
    let layout = &generator.spec.layout;
    layout.check_part(part)?;
    if n == 0 {
        return Err(Error::Config("swap_mse needs n >= 1".into()));
    }
    let originals = sample_bundles(&generator.prior, layout, seed, n)?;
    let edit_seed = derive_seed(seed ^ 0x5a5a_0f0f, part as u64);
    let r = generator.spec.out_resolution;
    let plane = r * r;
    let ch = generator.spec.rgb_channels;
    let mut sum = vec![0.0f64; plane];
    let mut per_image = Vec::with_capacity(n);
    for (c, chunk) in originals.chunks(RENDER_CHUNK).enumerate() {
        let edited: Vec<PartLatentBundle> = chunk
            .iter()
            .enumerate()
            .map(|(j, b)| {
                if zero_swap {
                    Ok(b.clone())
                } else {
                    let idx = (c * RENDER_CHUNK + j) as u64;
                    resample_part(b, &generator.prior, part, derive_seed(edit_seed, idx))
                }
            })
            .collect::<Result<_>>()?;
        let a = generator.generate(chunk)?;
        let b = generator.generate(&edited)?;
        for (ia, ib) in a.data().chunks(ch * plane).zip(b.data().chunks(ch * plane)) {
            let mut map = vec![0.0f32; plane];
            for k in 0..ch {
                for (i, m) in map.iter_mut().enumerate() {
                    let d = ia[k * plane + i] - ib[k * plane + i];
                    *m += d * d;
                }
            }
            for (m, s) in map.iter_mut().zip(sum.iter_mut()) {
                *m /= ch as f32;
                *s += *m as f64;
            }
            per_image.push(map);
        }
    }
    Ok(SwapMse {
        heatmap: MseHeatmap {
            part,
            resolution: r,
            values: sum.into_iter().map(|s| s / n as f64).collect(),
            sample_count: n,
        },
        per_image,
    })
}

// ---------------------------------------------------------------------------
// Region statistics

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Summary {
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: quantile(&s, 0.5),
        q1: quantile(&s, 0.25),
        q3: quantile(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: Region,
    pub pixels: usize,
    pub sample_count: usize,
    /// Absent when the region has no pixels.
    pub stats: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub part: PartId,
    pub regions: Vec<RegionSummary>,
}

impl RegionStats {
    pub fn get(&self, region: Region) -> &RegionSummary {
        self.regions
            .iter()
            .find(|r| r.region == region)
            .expect("all regions present")
    }

    /// Strict `inside > interlocking > outside` on medians, over every pair
    /// of regions that are both present.
    pub fn median_ordering_holds(&self) -> bool {
        let present: Vec<f64> = Region::ALL
            .iter()
            .filter_map(|&r| self.get(r).stats.map(|s| s.median))
            .collect();
        present.windows(2).all(|w| w[0] > w[1])
    }
}

impl fmt::Display for RegionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# region-mse part={}", self.part)?;
        writeln!(
            f,
            "{:<13} {:>7} {:>7} {:>12} {:>12} {:>12} {:>12}",
            "region", "pixels", "n", "mean", "q1", "median", "q3"
        )?;
        for r in &self.regions {
            match r.stats {
                Some(s) => writeln!(
                    f,
                    "{:<13} {:>7} {:>7} {:>12.6e} {:>12.6e} {:>12.6e} {:>12.6e}",
                    r.region.name(),
                    r.pixels,
                    r.sample_count,
                    s.mean,
                    s.q1,
                    s.median,
                    s.q3
                )?,
                None => writeln!(
                    f,
                    "{:<13} {:>7} {:>7} {:>12} {:>12} {:>12} {:>12}",
                    r.region.name(),
                    r.pixels,
                    r.sample_count,
                    "-",
                    "-",
                    "-",
                    "-"
                )?,
            }
        }
        Ok(())
    }
}

/// Mean MSE of each image within each region, summarised across images.
pub fn region_stats(per_image: &[Vec<f32>], masks: &RegionMasks) -> Result<RegionStats> {
    let plane = masks.resolution * masks.resolution;
    if let Some(bad) = per_image.iter().find(|m| m.len() != plane) {
        return Err(Error::Shape(format!(
            "map of {} pixels vs {plane}-pixel masks",
            bad.len()
        )));
    }
    let regions = Region::ALL
        .iter()
        .map(|&region| {
            let mask = masks.mask(region);
            let pixels = masks.count(region);
            let means: Vec<f64> = if pixels == 0 {
                Vec::new()
            } else {
                per_image
                    .iter()
                    .map(|m| {
                        m.iter()
                            .zip(mask)
                            .filter(|(_, &k)| k)
                            .map(|(&v, _)| v as f64)
                            .sum::<f64>()
                            / pixels as f64
                    })
                    .collect()
            };
            RegionSummary {
                region,
                pixels,
                sample_count: per_image.len(),
                stats: summarize(&means),
            }
        })
        .collect();
    Ok(RegionStats {
        part: masks.part,
        regions,
    })
}

// ---------------------------------------------------------------------------
// Fréchet distance

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    /// 4×4 average pooling of the raw pixels.
    PixelDownsample,
    /// Penultimate discriminator activations.
    DiscriminatorPenultimate,
    /// Features computed elsewhere; the string names the embedding.
    External(String),
}

impl Extractor {
    pub fn id(&self) -> String {
        match self {
            Extractor::PixelDownsample => "pixel_downsample".into(),
            Extractor::DiscriminatorPenultimate => "discriminator_penultimate".into(),
            Extractor::External(name) => format!("external:{name}"),
        }
    }
}

impl std::str::FromStr for Extractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel_downsample" => Ok(Extractor::PixelDownsample),
            "discriminator_penultimate" => Ok(Extractor::DiscriminatorPenultimate),
            _ => match s.strip_prefix("external:") {
                Some(name) if !name.is_empty() => Ok(Extractor::External(name.into())),
                _ => Err(Error::Config(format!(
                    "unknown extractor `{s}` (pixel_downsample, discriminator_penultimate, external:<name>)"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub extractor: String,
    pub count: usize,
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`, unbiased.
    pub cov: Vec<f64>,
}

impl FeatureSummary {
    /// Mean and covariance of the rows of `features` (`count × dim`).
    pub fn from_rows(extractor: impl Into<String>, features: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!("{} values are not rows of {dim}", features.len())));
        }
        let n = features.len() / dim;
        if n < 2 {
            return Err(Error::Config(format!("feature summary needs >= 2 samples, got {n}")));
        }
        if n <= dim {
            log::warn!("{n} samples for {dim}-dimensional features: covariance is rank deficient");
        }
        let mut mean = vec![0.0; dim];
        for row in features.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered: Vec<f64> = features
            .chunks(dim)
            .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
            .collect();
        let x = DMatrix::from_row_slice(n, dim, &centered);
        let cov = (x.transpose() * &x) / (n - 1) as f64;
        Ok(Self {
            extractor: extractor.into(),
            count: n,
            dim,
            mean,
            cov: cov.transpose().as_slice().to_vec(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(s)?;
        if f.mean.len() != f.dim || f.cov.len() != f.dim * f.dim {
            return Err(Error::Format("feature summary sizes disagree with dim".into()));
        }
        Ok(f)
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.cov)
    }
}

/// Features of `[N, C, R, R]` images under `extractor`. External features
/// cannot be computed here; use [`FeatureSummary::from_rows`].
pub fn extract_features(
    images: &Tensor,
    extractor: &Extractor,
    discriminator: Option<&Discriminator>,
) -> Result<FeatureSummary> {
    let s = images.shape();
    if s.len() != 4 || s[0] < 2 {
        return Err(Error::Config(format!(
            "feature extraction needs >= 2 images, got shape {s:?}"
        )));
    }
    let n = s[0];
    let (rows, dim) = match extractor {
        Extractor::PixelDownsample => {
            let mut x = images.clone();
            while x.shape()[2] > 8 && x.shape()[2].is_multiple_of(2) {
                x = crate::tensor::sum_pool2x2(&x).map(|v| v * 0.25);
            }
            let dim = x.len() / n;
            (x.data().iter().map(|&v| v as f64).collect::<Vec<_>>(), dim)
        }
        Extractor::DiscriminatorPenultimate => {
            let d =
                discriminator.ok_or_else(|| Error::Config("discriminator_penultimate needs a discriminator".into()))?;
            let f = d.features(images)?;
            let dim = f.len() / n;
            (f.data().iter().map(|&v| v as f64).collect(), dim)
        }
        Extractor::External(name) => {
            return Err(Error::Config(format!(
                "external extractor `{name}`: supply precomputed feature rows"
            )))
        }
    };
    FeatureSummary::from_rows(extractor.id(), &rows, dim)
}

fn clip_eigen(values: &mut [f64], what: &str) -> Result<()> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEG_EIGEN_TOL * scale {
                return Err(Error::NotPsd(format!("{what} has eigenvalue {v:e}")));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

fn sym_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let SymmetricEigen {
        eigenvectors,
        mut eigenvalues,
    } = SymmetricEigen::new(sym);
    clip_eigen(eigenvalues.as_mut_slice(), what)?;
    let root = DMatrix::from_diagonal(&eigenvalues.map(f64::sqrt));
    Ok(&eigenvectors * root * eigenvectors.transpose())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^{1/2})`, with the cross term taken
/// as `tr((√Σa Σb √Σa)^{1/2})`, which has the same eigenvalues.
pub fn frechet_distance(a: &FeatureSummary, b: &FeatureSummary) -> Result<f64> {
    if a.extractor != b.extractor {
        return Err(Error::Config(format!(
            "extractor mismatch: {} vs {}",
            a.extractor, b.extractor
        )));
    }
    if a.dim != b.dim {
        return Err(Error::Shape(format!("feature dims {} vs {}", a.dim, b.dim)));
    }
    let (sa, sb) = (a.cov_matrix(), b.cov_matrix());
    let ra = sym_sqrt(&sa, "covariance a")?;
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let mut ev = SymmetricEigen::new(inner).eigenvalues;
    clip_eigen(ev.as_mut_slice(), "cross covariance product")?;
    let cross: f64 = ev.iter().map(|v| v.sqrt()).sum();
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}
