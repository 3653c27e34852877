//! Shared fixtures for integration tests: synthetic datasets with the
//! full preprocessing chain applied.

// Each test binary compiles this module separately and uses a subset of it.
#![allow(dead_code)]

use vesselseg::imgio::{
    green_channel, synth_vessels, Domain, GrayImage, MaskImage, PictureLabel, SampleRecord,
    SynthStyle,
};
use vesselseg::preprocess::{preprocess_chain, ClaheConfig};

pub fn preprocessed(img: &GrayImage) -> GrayImage {
    preprocess_chain(img, &ClaheConfig::default(), 1.2).expect("preprocessing chain")
}

pub struct SynthSpec {
    pub prefix: &'static str,
    pub seed0: u64,
    pub count: usize,
    pub size: usize,
    pub style: SynthStyle,
    pub domain: Domain,
    pub label: Option<PictureLabel>,
}

/// Generates `count` preprocessed samples with ids `<prefix>NN`.
pub fn synth_records(s: &SynthSpec) -> Vec<SampleRecord> {
    (0..s.count)
        .map(|i| {
            let (rgb, mask) = synth_vessels(s.seed0 + i as u64, s.size, s.size, s.style)
                .expect("synthetic generation");
            SampleRecord {
                id: format!("{}{i:02}", s.prefix),
                domain: s.domain,
                dataset_name: s.prefix.trim_end_matches('_').to_string(),
                image: preprocessed(&green_channel(&rgb)),
                mask: Some(mask),
                picture_label: s.label,
            }
        })
        .collect()
}

/// Pooled background fraction: the accuracy of an all-background predictor.
pub fn background_fraction(masks: &[&MaskImage]) -> f64 {
    let total: usize = masks.iter().map(|m| m.pixels().len()).sum();
    let fg: usize = masks
        .iter()
        .map(|m| m.pixels().iter().map(|&v| v as usize).sum::<usize>())
        .sum();
    1.0 - fg as f64 / total as f64
}
