use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::codec::load_image;
use crate::cohort::{load_manifest, make_split, FaceRecord, Presence, Split};
use crate::degrade::{self, DegradationFactor, FactorKind};
use crate::error::{Error, Result, ResultExt};
use crate::ident::{probe_counts, ConfusionCounts, Embedding, EmbeddingProvider, PreparedGallery};
use crate::image::Image;
use crate::metrics::{
    align_pose_curve, assemble_curve, rates, restrict_counts, CurvePoint, Estimate, LevelSamples,
    RateKind, Subgroup,
};

use super::ExperimentConfig;

/// Provider key for a record's image at `factor`. Undegraded images share the
/// bare record id with the gallery; everything else is `id@factor=level`.
/// Pose always uses its own key because level 0 is a separate rendering.
pub fn image_key(id: &str, factor: &DegradationFactor) -> String {
    if factor.is_baseline() && factor.kind() != FactorKind::Pose {
        id.to_string()
    } else {
        format!("{id}@{factor}")
    }
}

/// Loads the probe image for `record` at `factor`: the matching pose rendering
/// for pose, otherwise the record's image with the degradation applied.
pub fn probe_image(record: &FaceRecord, factor: &DegradationFactor) -> Result<Image> {
    if factor.kind() == FactorKind::Pose {
        let path = record.pose_variant(factor.raw_level()).ok_or_else(|| {
            Error::Data(format!("'{}' has no rendering for {factor}", record.id))
        })?;
        return load_image(path);
    }
    let img = load_image(&record.image_path)?;
    if factor.is_baseline() {
        return Ok(img);
    }
    degrade::apply(&img, factor)
}

/// Counts for one replication, level and subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationCounts {
    pub factor: DegradationFactor,
    pub replication: usize,
    pub subgroup: Subgroup,
    pub counts: ConfusionCounts,
}

/// The additive shift applied to one aligned pose point.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseAuditRow {
    pub subgroup: Subgroup,
    pub raw_level: f64,
    pub normalized_level: f64,
    pub fpr_shift: Option<f64>,
    pub fnr_shift: Option<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    /// Ordered by factor, then subgroup in config order, then normalized level.
    pub curves: Vec<CurvePoint>,
    pub counts: Vec<ReplicationCounts>,
    pub pose_audit: Vec<PoseAuditRow>,
    /// Factors in the config that could not run, such as pose without renderings.
    pub skipped: Vec<FactorKind>,
}

/// A split with records replaced by population indices.
struct IndexedSplit {
    split: Split,
    gallery: Vec<usize>,
    /// Population index and gallery position of the mate, per probe.
    probes: Vec<(usize, Option<usize>)>,
}

fn index_split(split: Split, pos: &HashMap<&str, usize>) -> IndexedSplit {
    let gallery = split.gallery.iter().map(|r| pos[r.id.as_str()]).collect();
    let probes = split
        .probes
        .iter()
        .map(|p| {
            let mate = match p.presence {
                Presence::TargetPresent => split.mate_index(p),
                Presence::TargetAbsent => None,
            };
            (pos[p.record.id.as_str()], mate)
        })
        .collect();
    IndexedSplit { split, gallery, probes }
}

/// Embeds `records` in parallel, keeping input order.
fn embed_all(
    provider: &dyn EmbeddingProvider,
    pop: &[FaceRecord],
    records: &[usize],
    factor: &DegradationFactor,
) -> Result<Vec<Embedding>> {
    records
        .par_iter()
        .map(|&i| {
            let rec = &pop[i];
            let key = image_key(&rec.id, factor);
            provider
                .embed(&key, &|| probe_image(rec, factor))
                .context_with(|| format!("embedding '{key}'"))
        })
        .collect()
}

/// Shared state for scoring every level against the same splits.
struct Scorer<'a> {
    cfg: &'a ExperimentConfig,
    splits: &'a [IndexedSplit],
    gallery_ids: Vec<usize>,
    probe_ids: Vec<usize>,
    /// Baseline gallery embeddings, aligned with `gallery_ids`.
    gallery: PreparedGallery,
    gallery_col: HashMap<usize, usize>,
    dense: bool,
}

impl Scorer<'_> {
    /// Per-probe counts for every replication, given probe embeddings aligned with `probe_ids`.
    fn score(&self, probe_embs: &[Embedding]) -> Result<Vec<Vec<ConfusionCounts>>> {
        let row_of: HashMap<usize, usize> =
            self.probe_ids.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        let t = self.cfg.threshold;
        let mode = self.cfg.tally;
        if self.dense {
            // Few distinct records: one distance per (probe, gallery) pair covers all replications.
            let rows: Vec<Vec<f64>> = probe_embs
                .par_iter()
                .map(|e| self.gallery.distances(e))
                .collect::<Result<_>>()?;
            Ok(self
                .splits
                .par_iter()
                .map(|s| {
                    let cols: Vec<usize> = s.gallery.iter().map(|g| self.gallery_col[g]).collect();
                    s.probes
                        .iter()
                        .map(|&(p, mate)| {
                            let row = &rows[row_of[&p]];
                            probe_counts(mate, cols.len(), |g| row[cols[g]] <= t, mode)
                        })
                        .collect()
                })
                .collect())
        } else {
            self.splits
                .par_iter()
                .map(|s| {
                    let entries = s
                        .gallery
                        .iter()
                        .map(|g| self.gallery.entries()[self.gallery_col[g]].clone())
                        .collect();
                    let gallery = PreparedGallery::new(entries)?;
                    s.probes
                        .iter()
                        .map(|&(p, mate)| {
                            let d = gallery.distances(&probe_embs[row_of[&p]])?;
                            Ok(probe_counts(mate, d.len(), |g| d[g] <= t, mode))
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Drops pose levels when no record has renderings; errors when only some do.
fn check_pose(pop: &[FaceRecord], levels: &mut Vec<DegradationFactor>) -> Result<bool> {
    let pose_levels: Vec<f64> = levels
        .iter()
        .filter(|l| l.kind() == FactorKind::Pose)
        .map(|l| l.raw_level())
        .collect();
    if pose_levels.is_empty() {
        return Ok(false);
    }
    if pop.iter().all(|r| r.pose_variants.is_none()) {
        log::warn!("manifest has no pose renderings; skipping the pose factor");
        levels.retain(|l| l.kind() != FactorKind::Pose);
        return Ok(true);
    }
    for r in pop {
        for &psi in &pose_levels {
            if r.pose_variant(psi).is_none() {
                return Err(Error::Data(format!(
                    "'{}' has no pose rendering for level {psi}; every record needs one per swept level",
                    r.id
                )));
            }
        }
    }
    Ok(false)
}

/// Runs every configured level over every replication and assembles the curves.
/// Nothing is written; see [`super::write_results`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::usage(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    pool.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    // Provider problems surface before any sampling or embedding work.
    let provider = cfg.provider.open()?;
    let manifest = load_manifest(&cfg.manifest)?;
    let pop = manifest.records;
    log::info!(
        "{} records ({} minors and {} unstudied race labels dropped)",
        pop.len(),
        manifest.dropped_minors,
        manifest.dropped_unknown_race
    );
    let mut levels = cfg.levels()?;
    let pose_skipped = check_pose(&pop, &mut levels)?;

    let pos: HashMap<&str, usize> = pop.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let reps = cfg.plan.replications;
    let splits: Vec<IndexedSplit> = (0..reps)
        .into_par_iter()
        .map(|r| {
            make_split(&pop, &cfg.plan, &cfg.target, r)
                .map(|s| index_split(s, &pos))
                .context_with(|| format!("replication {r}"))
        })
        .collect::<Result<_>>()?;

    let gallery_ids: Vec<usize> = splits
        .iter()
        .flat_map(|s| s.gallery.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let probe_ids: Vec<usize> = splits
        .iter()
        .flat_map(|s| s.probes.iter().map(|p| p.0))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let used: Vec<usize> = gallery_ids.iter().chain(&probe_ids).copied().collect::<BTreeSet<_>>().into_iter().collect();

    let baseline_factor = DegradationFactor::baseline(FactorKind::Contrast);
    log::info!("embedding {} undegraded images", used.len());
    let baseline_embs = embed_all(provider.as_ref(), &pop, &used, &baseline_factor)?;
    let dim = baseline_embs[0].dim();
    if let Some(bad) = baseline_embs.iter().find(|e| e.dim() != dim) {
        return Err(Error::Provider(format!(
            "{} returned dimension {} for '{}' but {dim} elsewhere",
            provider.name(),
            bad.dim(),
            bad.id()
        )));
    }
    let by_index: HashMap<usize, &Embedding> = used.iter().copied().zip(&baseline_embs).collect();

    let comparisons: usize = splits.iter().map(|s| s.gallery.len() * s.probes.len()).sum();
    let scorer = Scorer {
        cfg,
        splits: &splits,
        gallery: PreparedGallery::new(gallery_ids.iter().map(|i| by_index[i].clone()).collect())?,
        gallery_col: gallery_ids.iter().enumerate().map(|(c, &i)| (i, c)).collect(),
        dense: probe_ids.len() * gallery_ids.len() <= comparisons,
        gallery_ids,
        probe_ids,
    };
    log::debug!(
        "{} gallery and {} probe records across replications",
        scorer.gallery_ids.len(),
        scorer.probe_ids.len()
    );

    let baseline_probes: Vec<Embedding> = scorer.probe_ids.iter().map(|i| by_index[i].clone()).collect();
    let baseline_counts = scorer.score(&baseline_probes)?;

    // per level: per replication: per probe counts
    let mut per_level: Vec<(DegradationFactor, Vec<Vec<ConfusionCounts>>)> = Vec::new();
    for factor in &levels {
        let counts = if factor.is_baseline() && factor.kind() != FactorKind::Pose {
            baseline_counts.clone()
        } else {
            log::info!("scoring {factor}");
            let embs = embed_all(provider.as_ref(), &pop, &scorer.probe_ids, factor)
                .context_with(|| factor.to_string())?;
            if let Some(bad) = embs.iter().find(|e| e.dim() != dim) {
                return Err(Error::Provider(format!(
                    "{} returned dimension {} for '{}' but {dim} elsewhere",
                    provider.name(),
                    bad.dim(),
                    bad.id()
                )));
            }
            scorer.score(&embs).context_with(|| factor.to_string())?
        };
        per_level.push((*factor, counts));
    }

    let restrict = |per_rep: &[Vec<ConfusionCounts>], sg: Subgroup| -> Vec<ConfusionCounts> {
        splits
            .iter()
            .zip(per_rep)
            .map(|(s, pp)| restrict_counts(&s.split, pp, sg))
            .collect()
    };

    let mut counts = Vec::new();
    for (factor, per_rep) in &per_level {
        for sg in &cfg.subgroups {
            for (r, c) in restrict(per_rep, *sg).into_iter().enumerate() {
                counts.push(ReplicationCounts {
                    factor: *factor,
                    replication: r,
                    subgroup: *sg,
                    counts: c,
                });
            }
        }
    }

    let mut curves = Vec::new();
    let mut pose_audit = Vec::new();
    let factors: Vec<FactorKind> = levels.iter().map(|l| l.kind()).collect::<BTreeSet<_>>().into_iter().collect();
    for &kind in &factors {
        for &sg in &cfg.subgroups {
            let samples: Vec<LevelSamples> = per_level
                .iter()
                .filter(|(f, _)| f.kind() == kind)
                .map(|(f, per_rep)| LevelSamples {
                    factor: *f,
                    samples: restrict(per_rep, sg).into_iter().map(|c| Some(rates(c))).collect(),
                })
                .collect();
            let mut curve = assemble_curve(&samples, kind, sg, reps, cfg.confidence)
                .context_with(|| format!("{kind} curve for {sg}"))?;
            if kind == FactorKind::Pose && cfg.align_pose {
                let base: Vec<_> = restrict(&baseline_counts, sg).into_iter().map(rates).collect();
                for rk in [RateKind::Fpr, RateKind::Fnr] {
                    let defined: Vec<f64> = base.iter().filter_map(|p| p.get(rk)).collect();
                    let baseline = Estimate::from_samples(&defined, cfg.confidence)?;
                    let zero_defined = curve
                        .iter()
                        .any(|p| p.normalized_level == 0.0 && p.estimate(rk).is_some());
                    match baseline {
                        Some(b) if zero_defined => curve = align_pose_curve(&curve, rk, b.mean)?,
                        _ => log::warn!("{} for {sg} is undefined; pose curve left unaligned", rk.name()),
                    }
                }
                for p in &curve {
                    let shift = p.pose_shift.unwrap_or_default();
                    pose_audit.push(PoseAuditRow {
                        subgroup: sg,
                        raw_level: p.raw_level,
                        normalized_level: p.normalized_level,
                        fpr_shift: shift.fpr,
                        fnr_shift: shift.fnr,
                        clamped: shift.clamped,
                    });
                }
            }
            curves.extend(curve);
        }
    }

    Ok(ExperimentResults {
        config: cfg.clone(),
        curves,
        counts,
        pose_audit,
        skipped: if pose_skipped { vec![FactorKind::Pose] } else { Vec::new() },
    })
}
