//! Browser demo. Three operations, all returning RGBA buffers for a canvas:
//! influence regions of a part, target/reference/mix swaps, and swap-MSE
//! heatmaps. The generator is randomly initialised (no weights are shipped),
//! which is enough to see where each latent part can reach.

use std::collections::BTreeSet;

use puzzlegan::influence::{block_influence, classify_regions, symbolic_influence, InfluenceMap};
use puzzlegan::latent::{default_prior_spec, mix, sample_bundle};
use puzzlegan::layout::{canonical_layout, LayoutKind};
use puzzlegan::metrics::swap_mse;
use puzzlegan::model::{Generator, ModelSpec};
use wasm_bindgen::prelude::*;

const INSIDE: [u8; 3] = [70, 110, 230];
const INTERLOCKING: [u8; 3] = [160, 160, 160];
const OUTSIDE: [u8; 3] = [240, 160, 190];

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    generator: Generator,
}

#[wasm_bindgen]
impl Demo {
    /// `layout`: `face_swap` or `facial_parts`. `channels` sets the head
    /// width (small values keep the page responsive).
    #[wasm_bindgen(constructor)]
    pub fn new(layout: &str, channels: usize, seed: u64) -> Result<Demo, JsValue> {
        let kind: LayoutKind = layout.parse().map_err(js_err)?;
        let layout = canonical_layout(kind);
        let spec = ModelSpec::new(layout.clone(), channels.max(1), 32).with_channel_halving(4);
        let prior = default_prior_spec(&layout, 1);
        let generator = Generator::new(spec, prior, seed).map_err(js_err)?;
        Ok(Demo { generator })
    }

    pub fn resolution(&self) -> usize {
        self.generator.spec.out_resolution
    }

    pub fn num_parts(&self) -> usize {
        self.generator.num_parts()
    }

    pub fn part_name(&self, part: usize) -> String {
        self.generator
            .spec
            .layout
            .part_name(part)
            .unwrap_or_default()
            .to_string()
    }

    /// Region colouring for `part` (inside blue, interlocking grey, outside
    /// pink). `block` selects the block-granularity map.
    pub fn regions(&self, part: usize, block: bool) -> Result<Vec<u8>, JsValue> {
        let map = self.map(block)?;
        let masks = classify_regions(&map, part).map_err(js_err)?;
        Ok((0..map.width() * map.height())
            .flat_map(|i| {
                let c = if masks.inside[i] {
                    INSIDE
                } else if masks.interlocking[i] {
                    INTERLOCKING
                } else {
                    OUTSIDE
                };
                [c[0], c[1], c[2], 255]
            })
            .collect())
    }

    /// Grayscale: number of parts reaching each pixel, scaled to K.
    pub fn part_counts(&self, block: bool) -> Result<Vec<u8>, JsValue> {
        let map = self.map(block)?;
        let k = map.num_parts() as f32;
        Ok(map
            .part_count_image()
            .into_iter()
            .flat_map(|c| {
                let g = (c as f32 / k * 255.0) as u8;
                [g, g, g, 255]
            })
            .collect())
    }

    /// Three images side by side: target, reference, and the target with
    /// the parts in `parts_mask` (bit i-1 = part i) taken from the reference.
    pub fn swap(&self, target_seed: u64, reference_seed: u64, parts_mask: u32) -> Result<Vec<u8>, JsValue> {
        let g = &self.generator;
        let layout = &g.spec.layout;
        let target = sample_bundle(&g.prior, layout, target_seed).map_err(js_err)?;
        let reference = sample_bundle(&g.prior, layout, reference_seed).map_err(js_err)?;
        let parts: BTreeSet<usize> = (1..=g.num_parts()).filter(|p| parts_mask >> (p - 1) & 1 == 1).collect();
        let mixed = mix(&target, &reference, &parts).map_err(js_err)?;
        let images = g.generate(&[target, reference, mixed]).map_err(js_err)?;
        let r = g.spec.out_resolution;
        let plane = r * r;
        let data = images.data();
        let mut out = Vec::with_capacity(3 * plane * 4);
        for y in 0..r {
            for img in 0..3 {
                for x in 0..r {
                    let base = img * 3 * plane + y * r + x;
                    for c in 0..3 {
                        out.push(((data[base + c * plane].clamp(-1.0, 1.0) + 1.0) * 127.5) as u8);
                    }
                    out.push(255);
                }
            }
        }
        Ok(out)
    }

    /// Swap-MSE heatmap for `part` over `n` samples, normalised to its max.
    pub fn heatmap(&self, part: usize, n: usize, seed: u64) -> Result<Vec<u8>, JsValue> {
        let s = swap_mse(&self.generator, part, n.max(1), seed, false).map_err(js_err)?;
        let max = s.heatmap.max();
        Ok(s.heatmap
            .values
            .iter()
            .flat_map(|&v| {
                let t = if max > 0.0 { (v / max) as f32 } else { 0.0 };
                [(255.0 * t) as u8, (200.0 * t * t) as u8, (60.0 * (1.0 - t)) as u8, 255]
            })
            .collect())
    }
}

impl Demo {
    fn map(&self, block: bool) -> Result<InfluenceMap, JsValue> {
        let spec = &self.generator.spec;
        if block {
            block_influence(spec).map_err(js_err)
        } else {
            symbolic_influence(spec, &spec.layout).map_err(js_err)
        }
    }
}
