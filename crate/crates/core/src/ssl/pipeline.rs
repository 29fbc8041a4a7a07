//! Iterated finetuning: train, score quality, filter, re-match.

use serde::{Deserialize, Serialize};

use super::pairs::MatchTable;
use super::train::{embed_crops, train_iteration, EpochLog};
use crate::coarse::coarse_matches;
use crate::config::RunConfig;
use crate::data::TrackDataset;
use crate::error::{Error, Result};
use crate::nn::ModelState;
use crate::quality::{estimate_quality, filter_tracks, QualityReport};
use crate::rng::{self, stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub trained_tracks: usize,
    pub filtered: usize,
    pub matched_tracks: usize,
    pub match_links: usize,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub model: ModelState,
    pub matches: MatchTable,
    pub quality: QualityReport,
    pub kept: Vec<u64>,
    pub unknown: Vec<u64>,
    pub logs: Vec<EpochLog>,
    pub iterations: Vec<IterationSummary>,
}

/// Runs `cfg.train.ssl_iterations` rounds of finetuning. Round 1 trains on
/// within-track pairs of every track; each later round trains on the tracks
/// kept by the previous quality filter, pairing crops across coarse matches.
pub fn run_pipeline(ds: &TrackDataset, cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut init_rng = rng::stream(cfg.seed, &[stage::INIT]);
    let mut model = ModelState::new(ds.dim(), &cfg.model, &mut init_rng)?;
    let mut kept = ds.track_ids();
    let mut matches: Option<MatchTable> = None;
    let mut logs = Vec::new();
    let mut iterations = Vec::new();
    let mut last = None;

    for iteration in 1..=cfg.train.ssl_iterations {
        logs.extend(train_iteration(
            &mut model,
            ds,
            &kept,
            matches.as_ref(),
            &cfg.train,
            &cfg.augment,
            cfg.seed,
            iteration,
        )?);
        let trained_tracks = kept.len();
        let quality = estimate_quality(&model.student, ds, &cfg.quality, cfg.seed, iteration)?;
        let (k, unknown) = filter_tracks(&quality);
        if k.is_empty() {
            return Err(Error::AllFiltered);
        }
        kept = k;
        let embedded = kept
            .iter()
            .map(|&id| {
                let t = ds.get(id).expect("quality covers dataset ids");
                Ok((id, embed_crops(&model.student, &t.crops)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let table = coarse_matches(&embedded, &cfg.coarse)?;
        iterations.push(IterationSummary {
            iteration,
            trained_tracks,
            filtered: unknown.len(),
            matched_tracks: table.values().filter(|s| !s.is_empty()).count(),
            match_links: table.values().map(|s| s.len()).sum(),
        });
        matches = Some(table);
        last = Some((quality, unknown));
    }

    let (quality, unknown) = last.expect("at least one iteration");
    Ok(PipelineOutput {
        model,
        matches: matches.expect("at least one iteration"),
        quality,
        kept,
        unknown,
        logs,
        iterations,
    })
}
