//! Error rates, demographic subgroups, replication confidence intervals and
//! curve assembly.
//!
//! Rates with an empty denominator are `None` throughout and are reported as
//! missing, never as zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cohort::{Cell, FaceRecord, Gender, Race, Split};
use crate::degrade::{DegradationFactor, FactorKind};
use crate::error::{Error, Result};
use crate::ident::{tally_per_probe, ConfusionCounts, MatchResult, TallyMode};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RatePoint {
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub counts: ConfusionCounts,
}

impl RatePoint {
    pub fn get(&self, kind: RateKind) -> Option<f64> {
        match kind {
            RateKind::Fpr => self.fpr,
            RateKind::Fnr => self.fnr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateKind {
    Fpr,
    Fnr,
}

impl RateKind {
    pub const ALL: [RateKind; 2] = [RateKind::Fpr, RateKind::Fnr];

    pub fn name(self) -> &'static str {
        match self {
            RateKind::Fpr => "FPR",
            RateKind::Fnr => "FNR",
        }
    }
}

/// `FP / (FP + TN)` and `FN / (FN + TP)`.
pub fn rates(c: ConfusionCounts) -> RatePoint {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    RatePoint {
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
        counts: c,
    }
}

/// Probe population a rate is conditioned on. The gallery is never restricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subgroup {
    All,
    Race(Race),
    Gender(Gender),
    Cell(Cell),
}

impl Subgroup {
    pub fn contains(&self, record: &FaceRecord) -> bool {
        match self {
            Subgroup::All => true,
            Subgroup::Race(r) => record.race == *r,
            Subgroup::Gender(g) => record.gender == *g,
            Subgroup::Cell(c) => record.cell() == *c,
        }
    }

    /// `all`, each race, each gender, then every race x gender cell.
    pub fn standard_set() -> Vec<Subgroup> {
        std::iter::once(Subgroup::All)
            .chain(Race::ALL.into_iter().map(Subgroup::Race))
            .chain(Gender::ALL.into_iter().map(Subgroup::Gender))
            .chain(Cell::all().map(Subgroup::Cell))
            .collect()
    }

    /// The six cells, which partition every probe set.
    pub fn cells() -> Vec<Subgroup> {
        Cell::all().map(Subgroup::Cell).collect()
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subgroup::All => f.write_str("all"),
            Subgroup::Race(r) => write!(f, "{r}"),
            Subgroup::Gender(g) => write!(f, "{g}"),
            Subgroup::Cell(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Subgroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let race = |t: &str| Race::ALL.into_iter().find(|r| r.name() == t);
        let gender = |t: &str| Gender::ALL.into_iter().find(|g| g.name() == t);
        if s == "all" {
            return Ok(Subgroup::All);
        }
        if let Some((r, g)) = s.split_once('/') {
            if let (Some(race), Some(gender)) = (race(r), gender(g)) {
                return Ok(Subgroup::Cell(Cell { race, gender }));
            }
        } else if let Some(r) = race(s) {
            return Ok(Subgroup::Race(r));
        } else if let Some(g) = gender(s) {
            return Ok(Subgroup::Gender(g));
        }
        Err(Error::usage(format!(
            "unknown subgroup '{s}' (use all, a race, a gender, or Race/Gender)"
        )))
    }
}

impl Serialize for Subgroup {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subgroup {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sums per-probe counts over the probes that fall in `subgroup`.
pub fn restrict_counts(
    split: &Split,
    per_probe: &[ConfusionCounts],
    subgroup: Subgroup,
) -> ConfusionCounts {
    split
        .probes
        .iter()
        .zip(per_probe)
        .filter(|(p, _)| subgroup.contains(&p.record))
        .map(|(_, c)| *c)
        .sum()
}

/// Rates over the probes in `subgroup`, searched against the whole gallery.
pub fn subgroup_rates(
    split: &Split,
    results: &[MatchResult],
    subgroup: Subgroup,
    mode: TallyMode,
) -> Result<RatePoint> {
    let per_probe = tally_per_probe(split, results, mode)?;
    Ok(rates(restrict_counts(split, &per_probe, subgroup)))
}

/// Linearly interpolated quantile of already sorted data (`(n - 1) p` positioning).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical percentile interval with equal tails, e.g. the 2.5th and 97.5th
/// percentiles for `level = 0.95`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::usage(format!(
            "a confidence interval needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::usage(format!("confidence level must be in (0, 1), got {level}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("confidence interval over non-finite samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail)))
}

/// Mean of the replication rates with its percentile interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    /// `None` when fewer than two samples are available.
    pub fn from_samples(samples: &[f64], level: f64) -> Result<Option<Estimate>> {
        if samples.len() < 2 {
            return Ok(None);
        }
        let (lo, hi) = confidence_interval(samples, level)?;
        // Summing offsets from the minimum in sorted order keeps the mean
        // independent of replication order and exact for identical samples.
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let min = sorted[0];
        let mean = min + sorted.iter().map(|v| v - min).sum::<f64>() / sorted.len() as f64;
        // A heavily skewed sample can put the mean outside the percentile band.
        Ok(Some(Estimate {
            mean,
            lo: lo.min(mean),
            hi: hi.max(mean),
        }))
    }

    fn shifted(self, delta: f64) -> (Estimate, bool) {
        let shift = |v: f64| {
            let s = v + delta;
            (s.clamp(0.0, 1.0), !(0.0..=1.0).contains(&s))
        };
        let (mean, c1) = shift(self.mean);
        let (lo, c2) = shift(self.lo);
        let (hi, c3) = shift(self.hi);
        (Estimate { mean, lo, hi }, c1 || c2 || c3)
    }
}

/// Record of the additive shift applied to a pose curve point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseShift {
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    /// Some shifted value fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub factor: FactorKind,
    pub raw_level: f64,
    pub normalized_level: f64,
    pub subgroup: Subgroup,
    pub fpr: Option<Estimate>,
    pub fnr: Option<Estimate>,
    /// Counts summed over all replications.
    pub counts: ConfusionCounts,
    /// Per-replication rates, kept for auditing.
    pub samples: Vec<RatePoint>,
    pub pose_shift: Option<PoseShift>,
}

impl CurvePoint {
    pub fn estimate(&self, kind: RateKind) -> Option<Estimate> {
        match kind {
            RateKind::Fpr => self.fpr,
            RateKind::Fnr => self.fnr,
        }
    }

    fn estimate_mut(&mut self, kind: RateKind) -> &mut Option<Estimate> {
        match kind {
            RateKind::Fpr => &mut self.fpr,
            RateKind::Fnr => &mut self.fnr,
        }
    }
}

/// Per-replication rates of one subgroup at one factor level. A `None`
/// sample means that replication never produced a result.
#[derive(Debug, Clone)]
pub struct LevelSamples {
    pub factor: DegradationFactor,
    pub samples: Vec<Option<RatePoint>>,
}

/// Builds one subgroup's curve for one factor: the mean rate over replications
/// with a percentile interval at `level`, sorted by normalized level.
pub fn assemble_curve(
    levels: &[LevelSamples],
    factor: FactorKind,
    subgroup: Subgroup,
    replications: usize,
    level: f64,
) -> Result<Vec<CurvePoint>> {
    if replications < 2 {
        return Err(Error::usage(format!(
            "confidence intervals need at least 2 replications, got {replications}"
        )));
    }
    let mut gaps = Vec::new();
    for l in levels.iter().filter(|l| l.factor.kind() == factor) {
        for r in 0..replications {
            if l.samples.get(r).copied().flatten().is_none() {
                gaps.push(format!("{} replication {r}", l.factor));
            }
        }
    }
    if levels.iter().all(|l| l.factor.kind() != factor) {
        gaps.push(format!("{factor} (no levels)"));
    }
    if !gaps.is_empty() {
        return Err(Error::IncompleteCurve(gaps));
    }

    let mut points = Vec::new();
    for l in levels.iter().filter(|l| l.factor.kind() == factor) {
        let samples: Vec<RatePoint> = l.samples[..replications].iter().map(|s| s.unwrap()).collect();
        let estimate = |kind: RateKind| {
            let defined: Vec<f64> = samples.iter().filter_map(|s| s.get(kind)).collect();
            Estimate::from_samples(&defined, level)
        };
        points.push(CurvePoint {
            factor,
            raw_level: l.factor.raw_level(),
            normalized_level: l.factor.normalized_level(),
            subgroup,
            fpr: estimate(RateKind::Fpr)?,
            fnr: estimate(RateKind::Fnr)?,
            counts: samples.iter().map(|s| s.counts).sum(),
            samples,
            pose_shift: None,
        });
    }
    points.sort_by(|a, b| a.normalized_level.total_cmp(&b.normalized_level));
    Ok(points)
}

/// Shifts one rate of a pose curve so its level-0 point equals `baseline_rate`.
/// The same offset moves every point and both interval bounds; results are
/// clamped to `[0, 1]` and flagged when clamping happens.
pub fn align_pose_curve(
    curve: &[CurvePoint],
    kind: RateKind,
    baseline_rate: f64,
) -> Result<Vec<CurvePoint>> {
    if !(0.0..=1.0).contains(&baseline_rate) {
        return Err(Error::usage(format!("baseline rate {baseline_rate} outside [0, 1]")));
    }
    let zero = curve
        .iter()
        .find(|p| p.normalized_level == 0.0)
        .ok_or_else(|| Error::usage("pose curve has no level-0 point to align"))?;
    if let Some(other) = curve.iter().find(|p| p.subgroup != zero.subgroup) {
        return Err(Error::usage(format!(
            "pose curve mixes subgroups {} and {}",
            zero.subgroup, other.subgroup
        )));
    }
    let zero_rate = zero
        .estimate(kind)
        .ok_or_else(|| Error::usage(format!("pose level-0 {} is undefined", kind.name())))?
        .mean;
    let delta = baseline_rate - zero_rate;

    Ok(curve
        .iter()
        .map(|p| {
            let mut out = p.clone();
            let mut shift = p.pose_shift.unwrap_or_default();
            match kind {
                RateKind::Fpr => shift.fpr = Some(delta),
                RateKind::Fnr => shift.fnr = Some(delta),
            }
            if let Some(est) = p.estimate(kind) {
                let (mut moved, clamped) = est.shifted(delta);
                if p.normalized_level == 0.0 {
                    moved.mean = baseline_rate;
                    moved.lo = moved.lo.min(baseline_rate);
                    moved.hi = moved.hi.max(baseline_rate);
                }
                shift.clamped |= clamped;
                *out.estimate_mut(kind) = Some(moved);
            }
            out.pose_shift = Some(shift);
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        assert_eq!(rates(ConfusionCounts::new(0, 1, 3, 0)).fpr, Some(0.25));
        assert_eq!(rates(ConfusionCounts::new(83, 0, 0, 0)).fnr, Some(0.0));
        assert_eq!(rates(ConfusionCounts::new(0, 0, 0, 0)).fpr, None);
    }

    #[test]
    fn subgroup_names_round_trip() {
        for s in Subgroup::standard_set() {
            assert_eq!(s.to_string().parse::<Subgroup>().unwrap(), s);
        }
        assert_eq!(Subgroup::standard_set().len(), 12);
        assert!("Purple".parse::<Subgroup>().is_err());
        assert!("White/Purple".parse::<Subgroup>().is_err());
    }

    #[test]
    fn interval_of_constant_samples() {
        assert_eq!(confidence_interval(&[0.3; 10], 0.95).unwrap(), (0.3, 0.3));
        assert!(confidence_interval(&[0.3], 0.95).is_err());
        assert!(confidence_interval(&[0.3, 0.4], 1.0).is_err());
    }

    fn factor(kind: FactorKind, raw: f64) -> DegradationFactor {
        DegradationFactor::new(kind, raw).unwrap()
    }

    fn point(fnr: f64) -> Option<RatePoint> {
        Some(RatePoint {
            fpr: Some(0.01),
            fnr: Some(fnr),
            counts: ConfusionCounts::new(1, 1, 99, 1),
        })
    }

    #[test]
    fn curve_assembly_sorts_and_sums() {
        let levels = vec![
            LevelSamples {
                factor: factor(FactorKind::MotionBlur, 40.0),
                samples: vec![point(0.2), point(0.4)],
            },
            LevelSamples {
                factor: factor(FactorKind::MotionBlur, 0.0),
                samples: vec![point(0.1), point(0.1)],
            },
        ];
        let curve = assemble_curve(&levels, FactorKind::MotionBlur, Subgroup::All, 2, 0.95).unwrap();
        assert_eq!(curve[0].raw_level, 0.0);
        assert_eq!(curve[0].fnr.unwrap(), Estimate { mean: 0.1, lo: 0.1, hi: 0.1 });
        assert!((curve[1].fnr.unwrap().mean - 0.3).abs() < 1e-15);
        assert_eq!(curve[1].counts, ConfusionCounts::new(2, 2, 198, 2));
    }

    #[test]
    fn curve_assembly_rejects_gaps_and_single_replications() {
        let levels = vec![LevelSamples {
            factor: factor(FactorKind::Contrast, 2.0),
            samples: vec![point(0.2), None],
        }];
        let err = assemble_curve(&levels, FactorKind::Contrast, Subgroup::All, 2, 0.95).unwrap_err();
        assert!(matches!(err, Error::IncompleteCurve(ref g) if g.len() == 1), "{err}");
        let err = assemble_curve(&levels, FactorKind::Contrast, Subgroup::All, 1, 0.95).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        let err = assemble_curve(&levels, FactorKind::Pose, Subgroup::All, 2, 0.95).unwrap_err();
        assert!(matches!(err, Error::IncompleteCurve(_)));
    }

    #[test]
    fn undefined_samples_leave_the_rate_missing() {
        let missing = Some(RatePoint {
            fpr: Some(0.0),
            fnr: None,
            counts: ConfusionCounts::new(0, 0, 10, 0),
        });
        let levels = vec![LevelSamples {
            factor: factor(FactorKind::Brightness, 0.0),
            samples: vec![missing, missing, point(0.5)],
        }];
        let curve = assemble_curve(&levels, FactorKind::Brightness, Subgroup::All, 3, 0.95).unwrap();
        assert!(curve[0].fnr.is_none());
        assert!(curve[0].fpr.is_some());
    }

    fn pose_point(psi: f64, fnr: f64) -> CurvePoint {
        CurvePoint {
            factor: FactorKind::Pose,
            raw_level: psi,
            normalized_level: psi / 5.0,
            subgroup: Subgroup::All,
            fpr: None,
            fnr: Some(Estimate { mean: fnr, lo: fnr - 0.02, hi: fnr + 0.02 }),
            counts: ConfusionCounts::default(),
            samples: Vec::new(),
            pose_shift: None,
        }
    }

    #[test]
    fn pose_alignment_examples() {
        let curve = vec![pose_point(0.0, 0.10), pose_point(5.0, 0.20)];
        let aligned = align_pose_curve(&curve, RateKind::Fnr, 0.04).unwrap();
        assert_eq!(aligned[0].fnr.unwrap().mean, 0.04);
        assert!((aligned[1].fnr.unwrap().mean - 0.14).abs() < 1e-12);
        assert!((aligned[1].fnr.unwrap().hi - 0.16).abs() < 1e-12);
        assert!(!aligned[1].pose_shift.unwrap().clamped);

        let same = align_pose_curve(&curve, RateKind::Fnr, 0.10).unwrap();
        assert_eq!(same[1].fnr, curve[1].fnr);
    }

    #[test]
    fn pose_alignment_clamps_and_flags() {
        let curve = vec![pose_point(-2.0, 0.05), pose_point(0.0, 0.30)];
        let aligned = align_pose_curve(&curve, RateKind::Fnr, 0.1).unwrap();
        let low = aligned[0].fnr.unwrap();
        assert_eq!((low.mean, low.lo), (0.0, 0.0));
        assert!(aligned[0].pose_shift.unwrap().clamped);
        assert_eq!(aligned[1].fnr.unwrap().mean, 0.1);
    }

    #[test]
    fn pose_alignment_needs_level_zero() {
        let curve = vec![pose_point(1.0, 0.1)];
        assert!(align_pose_curve(&curve, RateKind::Fnr, 0.1).is_err());
        let undefined = vec![pose_point(0.0, 0.1)];
        assert!(align_pose_curve(&undefined, RateKind::Fpr, 0.1).is_err());
    }
}
