//! The two-stage transfer method: image-level embeddings, semi-supervised
//! K-Means with pinned seeds, the per-patch voting rule that accepts or
//! rejects source images, nearest-instance selection, the alternating
//! feature-learning/transfer loop, and a binned mutual-information
//! diagnostic for the learned representation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::drunet::{
    build, extract_latent, sample_training_set, train, LatentVector, Model, NetworkSpec,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::imgio::{Domain, GrayImage, PictureLabel, SampleRecord};
use crate::par;
use crate::patchwork::{extract, plan_grid, PatchGrid};

/// Per-image embedding: the mean of per-patch latents over a prediction
/// grid, with the patch latents retained for voting.
#[derive(Debug, Clone)]
pub struct ImageLatent {
    pub sample_id: String,
    pub domain: Domain,
    /// Mean of `patch_latents`.
    pub z: LatentVector,
    pub patch_latents: Vec<LatentVector>,
}

/// Embeds one image as the mean of its per-patch latents.
pub fn image_latent(
    model: &Model,
    sample_id: &str,
    domain: Domain,
    img: &GrayImage,
    grid: &PatchGrid,
) -> Result<ImageLatent> {
    let patches = extract(img, grid)?;
    if patches.patches.is_empty() {
        return Err(Error::Selection("empty patch grid".into()));
    }
    let patch_latents: Vec<LatentVector> =
        par::map_ordered(&patches.patches, |p| extract_latent(model, p))
            .into_iter()
            .collect::<Result<_>>()?;
    let z = LatentVector::mean_of(&patch_latents)?;
    Ok(ImageLatent {
        sample_id: sample_id.to_string(),
        domain,
        z,
        patch_latents,
    })
}

/// Converged clustering state over a set of image latents.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<LatentVector>,
    pub assignments: BTreeMap<String, usize>,
    /// Labeled samples pinned to their clusters.
    pub seeds: BTreeMap<String, usize>,
    /// Sum of squared distances to assigned centroids.
    pub objective: f64,
    /// Objective after each assign/update iteration; non-increasing.
    pub objective_trace: Vec<f64>,
}

impl ClusterModel {
    /// Recomputes the stored objective from centroids and assignments.
    pub fn recompute_objective(&self, latents: &[ImageLatent]) -> f64 {
        latents
            .iter()
            .map(|l| {
                let c = self.assignments[&l.sample_id];
                let d = l.z.distance(&self.centroids[c]);
                d * d
            })
            .sum()
    }
}

fn nearest_centroid(z: &LatentVector, centroids: &[LatentVector]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = z.distance(centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Constrained K-Means: centroids start at per-label seed means (empty
/// labels fall back to deterministic farthest-point picks) and seeded
/// samples stay pinned to their clusters through every iteration. The
/// objective is non-increasing across iterations.
pub fn seeded_kmeans(
    latents: &[ImageLatent],
    seeds: &BTreeMap<String, usize>,
    k: usize,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if latents.is_empty() || k > latents.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} available latents",
            latents.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for l in latents {
        if !ids.insert(l.sample_id.as_str()) {
            return Err(Error::Config(format!("duplicate sample id `{}`", l.sample_id)));
        }
    }
    for (id, &label) in seeds {
        if label >= k {
            return Err(Error::Config(format!(
                "seed `{id}` labels cluster {label}, but k = {k}"
            )));
        }
        if !ids.contains(id.as_str()) {
            return Err(Error::Config(format!("seed `{id}` is not among the latents")));
        }
    }

    // Per-label seed means.
    let mut centroids: Vec<Option<LatentVector>> = vec![None; k];
    for (c, slot) in centroids.iter_mut().enumerate() {
        let members: Vec<LatentVector> = latents
            .iter()
            .filter(|l| seeds.get(&l.sample_id) == Some(&c))
            .map(|l| l.z.clone())
            .collect();
        if !members.is_empty() {
            *slot = Some(LatentVector::mean_of(&members)?);
        }
    }
    // Farthest-point fill for unlabeled clusters: each empty cluster takes
    // the unchosen non-seed latent maximizing its distance to the existing
    // centroids (to the global mean if none exist yet); ties break on id.
    let mut chosen: BTreeSet<&str> = BTreeSet::new();
    let global_mean = LatentVector::mean_of(&latents.iter().map(|l| l.z.clone()).collect::<Vec<_>>())?;
    for c in 0..k {
        if centroids[c].is_some() {
            continue;
        }
        let existing: Vec<&LatentVector> = centroids.iter().flatten().collect();
        let mut best: Option<(&ImageLatent, f64)> = None;
        for l in latents {
            if seeds.contains_key(&l.sample_id) || chosen.contains(l.sample_id.as_str()) {
                continue;
            }
            let d = if existing.is_empty() {
                l.z.distance(&global_mean)
            } else {
                existing
                    .iter()
                    .map(|e| l.z.distance(e))
                    .fold(f64::INFINITY, f64::min)
            };
            let better = match &best {
                None => true,
                Some((bl, bd)) => d > *bd || (d == *bd && l.sample_id < bl.sample_id),
            };
            if better {
                best = Some((l, d));
            }
        }
        // All free latents exhausted: fall back to any unchosen latent.
        let pick = match best {
            Some((l, _)) => l,
            None => latents
                .iter()
                .find(|l| !chosen.contains(l.sample_id.as_str()))
                .ok_or_else(|| Error::Config("not enough latents to seed clusters".into()))?,
        };
        chosen.insert(pick.sample_id.as_str());
        centroids[c] = Some(pick.z.clone());
    }
    let mut centroids: Vec<LatentVector> = centroids.into_iter().map(|c| c.expect("filled")).collect();

    let mut assignments: BTreeMap<String, usize> = BTreeMap::new();
    let mut objective_trace = Vec::new();
    let mut prev_obj = f64::INFINITY;
    for _ in 0..max_iter {
        // Assign (pinned samples keep their seed cluster).
        for l in latents {
            let c = match seeds.get(&l.sample_id) {
                Some(&pin) => pin,
                None => nearest_centroid(&l.z, &centroids),
            };
            assignments.insert(l.sample_id.clone(), c);
        }
        // Update; empty clusters keep their previous centroid.
        let mut shift = 0.0f64;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<LatentVector> = latents
                .iter()
                .filter(|l| assignments[&l.sample_id] == c)
                .map(|l| l.z.clone())
                .collect();
            if !members.is_empty() {
                let updated = LatentVector::mean_of(&members)?;
                shift = shift.max(updated.distance(centroid));
                *centroid = updated;
            }
        }
        let objective: f64 = latents
            .iter()
            .map(|l| {
                let d = l.z.distance(&centroids[assignments[&l.sample_id]]);
                d * d
            })
            .sum();
        assert!(
            objective <= prev_obj + 1e-9 * prev_obj.max(1.0),
            "k-means objective increased: {prev_obj} -> {objective}"
        );
        prev_obj = objective;
        objective_trace.push(objective);
        if shift < tol {
            break;
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        seeds: seeds.clone(),
        objective: prev_obj,
        objective_trace,
    })
}

/// One source image's transfer verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceVote {
    pub sample_id: String,
    /// Fraction of the image's patches landing in target-friendly clusters.
    pub vote_fraction: f64,
    /// Distance from the image latent to the mean target latent.
    pub distance_to_target: f64,
    pub accepted: bool,
}

/// Per-source votes in ranking order (vote descending, then distance
/// ascending, then id).
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub records: Vec<SourceVote>,
    pub threshold: f64,
}

impl SelectionResult {
    pub fn ranking(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.sample_id.as_str()).collect()
    }

    pub fn accepted_ids(&self) -> Vec<&str> {
        self.records
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.sample_id.as_str())
            .collect()
    }

    /// Tab-separated rendering with a summary header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let accepted = self.records.iter().filter(|r| r.accepted).count();
        let _ = writeln!(
            out,
            "# sources={}\taccepted={}\tthreshold={:.6}",
            self.records.len(),
            accepted,
            self.threshold
        );
        let _ = writeln!(out, "# sample_id\tvote_fraction\tdistance\taccepted");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{}",
                r.sample_id,
                r.vote_fraction,
                r.distance_to_target,
                r.accepted as u8
            );
        }
        out
    }
}

/// The voting rule: a cluster is target-friendly when a strict majority
/// of its seeded members are target-domain or `similar`-labeled (ties are
/// not friendly). Each source patch votes for its nearest centroid; the
/// image is accepted when the friendly fraction reaches the threshold.
pub fn vote_select(
    clusters: &ClusterModel,
    latents: &[ImageLatent],
    labels: &BTreeMap<String, PictureLabel>,
    threshold: f64,
) -> Result<SelectionResult> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "vote threshold must lie in [0,1], got {threshold}"
        )));
    }
    if clusters.seeds.is_empty() {
        return Err(Error::Selection(
            "no seeded members in any cluster; add picture-level labels to anchor the vote".into(),
        ));
    }
    let by_id: BTreeMap<&str, &ImageLatent> =
        latents.iter().map(|l| (l.sample_id.as_str(), l)).collect();

    let mut good = vec![0usize; clusters.k];
    let mut total = vec![0usize; clusters.k];
    for (id, &c) in &clusters.seeds {
        let latent = by_id.get(id.as_str()).ok_or_else(|| {
            Error::Selection(format!("seeded sample `{id}` missing from latents"))
        })?;
        total[c] += 1;
        let is_good = latent.domain == Domain::Target
            || labels.get(id) == Some(&PictureLabel::Similar);
        if is_good {
            good[c] += 1;
        }
    }
    let friendly: Vec<bool> = (0..clusters.k).map(|c| 2 * good[c] > total[c]).collect();

    let target_zs: Vec<LatentVector> = latents
        .iter()
        .filter(|l| l.domain == Domain::Target)
        .map(|l| l.z.clone())
        .collect();
    if target_zs.is_empty() {
        return Err(Error::Selection("no target-domain latents to compare against".into()));
    }
    let target_mean = LatentVector::mean_of(&target_zs)?;

    let mut records: Vec<SourceVote> = latents
        .iter()
        .filter(|l| l.domain == Domain::Source)
        .map(|l| {
            let hits = l
                .patch_latents
                .iter()
                .filter(|p| friendly[nearest_centroid(p, &clusters.centroids)])
                .count();
            let vote_fraction = hits as f64 / l.patch_latents.len() as f64;
            SourceVote {
                sample_id: l.sample_id.clone(),
                vote_fraction,
                distance_to_target: l.z.distance(&target_mean),
                accepted: vote_fraction >= threshold,
            }
        })
        .collect();
    records.sort_by(|a, b| {
        b.vote_fraction
            .total_cmp(&a.vote_fraction)
            .then(a.distance_to_target.total_cmp(&b.distance_to_target))
            .then(a.sample_id.cmp(&b.sample_id))
    });
    Ok(SelectionResult { records, threshold })
}

/// Index of the source latent nearest to the mean target latent; ties
/// break on lexicographic sample id.
pub fn nearest_source(
    target_latents: &[ImageLatent],
    source_latents: &[ImageLatent],
) -> Result<usize> {
    if target_latents.is_empty() || source_latents.is_empty() {
        return Err(Error::Selection("nearest_source requires nonempty inputs".into()));
    }
    let target_mean = LatentVector::mean_of(
        &target_latents.iter().map(|l| l.z.clone()).collect::<Vec<_>>(),
    )?;
    let mut best = 0;
    for (i, s) in source_latents.iter().enumerate() {
        let (d, bd) = (
            s.z.distance(&target_mean),
            source_latents[best].z.distance(&target_mean),
        );
        if d < bd || (d == bd && s.sample_id < source_latents[best].sample_id) {
            best = i;
        }
    }
    Ok(best)
}

/// Selection loop configuration. `latent_stride == 0` means "use the
/// network patch size" (non-overlapping latent grid).
#[derive(Debug, Clone)]
pub struct TransferConfig {
    pub k: usize,
    pub vote_threshold: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub rounds: usize,
    pub latent_stride: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            k: 4,
            vote_threshold: 0.5,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            rounds: 2,
            latent_stride: 0,
        }
    }
}

/// Embeds every record and runs seeded clustering plus the vote, using
/// picture labels as pins (`similar` to cluster 0, `dissimilar` to 1).
pub fn run_selection(
    model: &Model,
    targets: &[SampleRecord],
    sources: &[SampleRecord],
    cfg: &TransferConfig,
) -> Result<SelectionResult> {
    let stride = if cfg.latent_stride == 0 {
        model.spec().patch
    } else {
        cfg.latent_stride
    };
    let mut latents = Vec::with_capacity(targets.len() + sources.len());
    let mut seeds = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for rec in targets.iter().chain(sources) {
        let grid = plan_grid(rec.image.width(), rec.image.height(), model.spec().patch, stride)?;
        latents.push(image_latent(model, &rec.id, rec.domain, &rec.image, &grid)?);
        if let Some(label) = rec.picture_label {
            labels.insert(rec.id.clone(), label);
            let pin = match label {
                PictureLabel::Similar => 0,
                PictureLabel::Dissimilar => 1,
            };
            seeds.insert(rec.id.clone(), pin);
        }
    }
    let clusters = seeded_kmeans(&latents, &seeds, cfg.k, cfg.kmeans_max_iter, cfg.kmeans_tol)?;
    vote_select(&clusters, &latents, &labels, cfg.vote_threshold)
}

fn round_seed(base: u64, round: u64) -> u64 {
    base.wrapping_add(round.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

// Training pool for one round: every target plus the accepted sources
// that carry masks (in ranking order). Accepted sources without masks
// stay in the selection report but cannot supervise training.
fn build_round_pool<'a>(
    targets: &'a [SampleRecord],
    sources: &'a [SampleRecord],
    selection: &SelectionResult,
) -> Vec<&'a SampleRecord> {
    let mut pool: Vec<&SampleRecord> = targets.iter().collect();
    for id in selection.accepted_ids() {
        if let Some(rec) = sources.iter().find(|s| s.id == id) {
            if rec.mask.is_some() {
                pool.push(rec);
            }
        }
    }
    pool
}

/// The alternating feature-learning / transfer loop.
///
/// Round 1 trains on target patches only; every later round re-embeds all
/// images with the current model, re-clusters, re-votes, and continues
/// training on target plus accepted masked sources. Accepted sources
/// without masks are reported in the round's [`SelectionResult`] but
/// cannot join training.
pub fn two_stage_loop(
    targets: &[SampleRecord],
    sources: &[SampleRecord],
    spec: &NetworkSpec,
    train_cfg: &TrainConfig,
    cfg: &TransferConfig,
) -> Result<(Model, Vec<SelectionResult>)> {
    if cfg.rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }
    if targets.is_empty() {
        return Err(Error::Config("no target records".into()));
    }
    let mut model = build(spec)?;
    let target_refs: Vec<&SampleRecord> = targets.iter().collect();
    let data = sample_training_set(
        &target_refs,
        spec.patch,
        train_cfg.patches_per_image,
        round_seed(train_cfg.seed, 0),
    )?;
    train(&mut model, &data, train_cfg)?;

    let mut selections = Vec::with_capacity(cfg.rounds - 1);
    for round in 1..cfg.rounds {
        let selection = if sources.is_empty() {
            SelectionResult {
                records: Vec::new(),
                threshold: cfg.vote_threshold,
            }
        } else {
            run_selection(&model, targets, sources, cfg)?
        };
        let pool = build_round_pool(targets, sources, &selection);
        let data = sample_training_set(
            &pool,
            spec.patch,
            train_cfg.patches_per_image,
            round_seed(train_cfg.seed, round as u64),
        )?;
        train(&mut model, &data, train_cfg)?;
        selections.push(selection);
    }
    Ok((model, selections))
}

/// Equal-width-histogram mutual information estimate, in bits.
pub fn binned_mi(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "mutual information inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if bins < 2 {
        return Err(Error::Config("bins must be at least 2".into()));
    }
    if x.len() < bins {
        return Err(Error::Config(format!(
            "need at least {bins} samples for {bins} bins, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Config("mutual information inputs must be finite".into()));
    }

    let bin_of = |v: f64, lo: f64, hi: f64| -> usize {
        if hi <= lo {
            0
        } else {
            (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
        }
    };
    let (xlo, xhi) = min_max(x);
    let (ylo, yhi) = min_max(y);
    let mut joint = vec![0.0f64; bins * bins];
    for (&a, &b) in x.iter().zip(y) {
        joint[bin_of(a, xlo, xhi) * bins + bin_of(b, ylo, yhi)] += 1.0;
    }
    let n = x.len() as f64;
    let mut px = vec![0.0; bins];
    let mut py = vec![0.0; bins];
    for a in 0..bins {
        for b in 0..bins {
            px[a] += joint[a * bins + b];
            py[b] += joint[a * bins + b];
        }
    }
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let pab = joint[a * bins + b] / n;
            if pab > 0.0 {
                mi += pab * (pab / ((px[a] / n) * (py[b] / n))).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

/// Bottleneck diagnostic for a set of patches: `I(x, z)` against
/// `I(z, y)` with the label entropy standing in for `I(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IbReport {
    /// Mean per-dimension MI between patch mean intensity and the latent.
    pub i_xz: f64,
    /// Mean per-dimension MI between the latent and the vessel fraction.
    pub i_zy: f64,
    /// Binned entropy of the vessel-fraction labels.
    pub h_y: f64,
    pub lambda: f64,
    /// `i_xz + lambda * (h_y - i_zy)`.
    pub lagrangian: f64,
}

/// Computes the bottleneck diagnostic from aligned per-patch samples:
/// mean input intensity, latent vector, and vessel fraction.
pub fn ib_report(
    patch_means: &[f64],
    latents: &[LatentVector],
    vessel_fractions: &[f64],
    lambda: f64,
    bins: usize,
) -> Result<IbReport> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if patch_means.len() != latents.len() || latents.len() != vessel_fractions.len() {
        return Err(Error::Shape("ib_report inputs must be aligned".into()));
    }
    let dim = latents
        .first()
        .ok_or_else(|| Error::Config("ib_report needs at least one sample".into()))?
        .dim();
    let mut i_xz = 0.0;
    let mut i_zy = 0.0;
    for d in 0..dim {
        let z_d: Vec<f64> = latents.iter().map(|l| l.values[d]).collect();
        i_xz += binned_mi(patch_means, &z_d, bins)?;
        i_zy += binned_mi(&z_d, vessel_fractions, bins)?;
    }
    i_xz /= dim as f64;
    i_zy /= dim as f64;
    let h_y = binned_mi(vessel_fractions, vessel_fractions, bins)?;
    Ok(IbReport {
        i_xz,
        i_zy,
        h_y,
        lambda,
        lagrangian: i_xz + lambda * (h_y - i_zy),
    })
}
