//! All parameters of the network, initialized from one seed.

use crate::backbone::Stem;
use crate::decoder::{DecoderConfig, DecoderLayerParams, HeatmapHead};
use crate::interaction::{EncoderConfig, EncoderLayerParams};
use crate::nn::{visit_child, ParamVisitor, Parameterized};
use crate::rng::DetRng;

/// Stream id of the weight initializer, kept apart from scene sampling.
const WEIGHT_STREAM: u64 = 0x5745_4947_4854; // "WEIGHT"

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub bev_stem: Stem,
    pub image_stem: Stem,
    pub encoder: Vec<EncoderLayerParams>,
    pub heatmap: HeatmapHead,
    pub decoder: Vec<DecoderLayerParams>,
}

impl Model {
    /// Draw every tensor in declaration order from the weight stream of `seed`.
    pub fn init(enc: &EncoderConfig, dec: &DecoderConfig, seed: u64) -> Self {
        let mut rng = DetRng::derived(seed, WEIGHT_STREAM);
        let c = enc.channels;
        let bev_stem = Stem::random(crate::backbone::BEV_CHANNELS, c, &mut rng);
        let image_stem = Stem::random(3, c, &mut rng);
        let encoder = (0..enc.num_layers).map(|_| EncoderLayerParams::random(enc, &mut rng)).collect();
        let heatmap = HeatmapHead::random(c, &mut rng);
        let decoder = (0..dec.num_layers).map(|_| DecoderLayerParams::random(c, dec, &mut rng)).collect();
        Self {
            bev_stem,
            image_stem,
            encoder,
            heatmap,
            decoder,
        }
    }
}

impl Parameterized for Model {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        visit_child(&mut self.bev_stem, prefix, "bev_stem", f);
        visit_child(&mut self.image_stem, prefix, "image_stem", f);
        for (i, l) in self.encoder.iter_mut().enumerate() {
            visit_child(l, prefix, &format!("encoder.{i}"), f);
        }
        visit_child(&mut self.heatmap, prefix, "heatmap", f);
        for (i, l) in self.decoder.iter_mut().enumerate() {
            visit_child(l, prefix, &format!("decoder.{i}"), f);
        }
    }
}
