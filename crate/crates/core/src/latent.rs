//! Per-part latent priors: sampling, mixing and the bundle file format.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{PartId, PartLayout};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    #[default]
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub distribution: PriorFamily,
}

impl PriorSpec {
    pub fn check(&self, layout: &PartLayout) -> Result<()> {
        if self.dims.len() != layout.num_parts() {
            return Err(Error::LayoutMismatch(format!(
                "prior has {} parts, layout has {}",
                self.dims.len(),
                layout.num_parts()
            )));
        }
        if let Some(i) = self.dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("latent dimension of part {} is zero", i + 1)));
        }
        Ok(())
    }
}

/// Latent capacity proportional to area: `d_i = scale × |cells_i|`.
pub fn default_prior_spec(layout: &PartLayout, scale: usize) -> PriorSpec {
    assert!(scale >= 1, "latent scale must be at least 1");
    PriorSpec {
        dims: layout.cell_counts().iter().map(|c| c * scale).collect(),
        distribution: PriorFamily::StandardNormal,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartLatentBundle {
    pub vectors: Vec<Vec<f32>>,
    pub layout_id: String,
    pub seed: Option<u64>,
}

impl PartLatentBundle {
    pub fn num_parts(&self) -> usize {
        self.vectors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.vectors.iter().map(Vec::len).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().flatten().all(|v| v.is_finite())
    }

    /// All-zero bundle with the given dims.
    pub fn zeros(spec: &PriorSpec, layout: &PartLayout) -> Self {
        Self {
            vectors: spec.dims.iter().map(|&d| vec![0.0; d]).collect(),
            layout_id: layout.layout_id(),
            seed: None,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = BundleHeader {
            version: BUNDLE_VERSION,
            layout_id: self.layout_id.clone(),
            dims: self.dims(),
            seed: self.seed,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for v in self.vectors.iter().flatten() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Format("not a latent bundle file".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: BundleHeader = serde_json::from_slice(&json)?;
        if header.version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported bundle version {}", header.version)));
        }
        let mut vectors = Vec::with_capacity(header.dims.len());
        let mut buf = [0u8; 4];
        for &d in &header.dims {
            let mut v = Vec::with_capacity(d);
            for _ in 0..d {
                r.read_exact(&mut buf)?;
                v.push(f32::from_le_bytes(buf));
            }
            vectors.push(v);
        }
        Ok(Self {
            vectors,
            layout_id: header.layout_id,
            seed: header.seed,
        })
    }
}

const BUNDLE_MAGIC: &[u8; 8] = b"PZGBNDL\0";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    version: u32,
    layout_id: String,
    dims: Vec<usize>,
    seed: Option<u64>,
}

/// SplitMix64 step; derives independent per-index seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw(spec: &PriorSpec, rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    match spec.distribution {
        PriorFamily::StandardNormal => (0..d).map(|_| StandardNormal.sample(rng)).collect(),
    }
}

/// Draw all K part vectors from the prior; deterministic in `seed`.
pub fn sample_bundle(spec: &PriorSpec, layout: &PartLayout, seed: u64) -> Result<PartLatentBundle> {
    spec.check(layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PartLatentBundle {
        vectors: spec.dims.iter().map(|&d| draw(spec, &mut rng, d)).collect(),
        layout_id: layout.layout_id(),
        seed: Some(seed),
    })
}

/// `n` bundles with seeds `derive_seed(seed, 0..n)`.
pub fn sample_bundles(spec: &PriorSpec, layout: &PartLayout, seed: u64, n: usize) -> Result<Vec<PartLatentBundle>> {
    (0..n)
        .map(|j| sample_bundle(spec, layout, derive_seed(seed, j as u64)))
        .collect()
}

/// Redraw only `part`'s vector, keeping the others.
pub fn resample_part(bundle: &PartLatentBundle, spec: &PriorSpec, part: PartId, seed: u64) -> Result<PartLatentBundle> {
    if part == 0 || part > bundle.num_parts() {
        return Err(Error::PartOutOfRange {
            part,
            num_parts: bundle.num_parts(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = bundle.clone();
    out.vectors[part - 1] = draw(spec, &mut rng, spec.dims[part - 1]);
    out.seed = None;
    Ok(out)
}

/// Take vector `i` from `reference` for `i ∈ parts`, otherwise from `target`.
pub fn mix(
    target: &PartLatentBundle,
    reference: &PartLatentBundle,
    parts: &BTreeSet<PartId>,
) -> Result<PartLatentBundle> {
    if target.layout_id != reference.layout_id {
        return Err(Error::LayoutMismatch(format!(
            "bundles sampled for layouts {} and {}",
            target.layout_id, reference.layout_id
        )));
    }
    if target.dims() != reference.dims() {
        return Err(Error::LayoutMismatch(format!(
            "bundle dims differ: {:?} vs {:?}",
            target.dims(),
            reference.dims()
        )));
    }
    let k = target.num_parts();
    if let Some(&bad) = parts.iter().find(|&&p| p == 0 || p > k) {
        return Err(Error::PartOutOfRange {
            part: bad,
            num_parts: k,
        });
    }
    let vectors = (1..=k)
        .map(|i| {
            if parts.contains(&i) {
                reference.vectors[i - 1].clone()
            } else {
                target.vectors[i - 1].clone()
            }
        })
        .collect();
    let seed = if parts.is_empty() || target.seed == reference.seed {
        target.seed
    } else if parts.len() == k {
        reference.seed
    } else {
        None
    };
    Ok(PartLatentBundle {
        vectors,
        layout_id: target.layout_id.clone(),
        seed,
    })
}

/// Stack part `part`'s vectors of a batch into a `[N, d_part]` tensor.
pub fn stack_part(bundles: &[PartLatentBundle], part: PartId) -> Tensor {
    let d = bundles[0].vectors[part - 1].len();
    let mut data = Vec::with_capacity(bundles.len() * d);
    for b in bundles {
        data.extend_from_slice(&b.vectors[part - 1]);
    }
    Tensor::new(vec![bundles.len(), d], data)
}
