use std::collections::HashMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Presence, Split};
use crate::error::{Error, Result};

use super::MatchResult;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn mates(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn nonmates(&self) -> u64 {
        self.fp + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// How outcomes are counted for each probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TallyMode {
    /// One outcome per probe-vs-gallery comparison.
    #[default]
    PerComparison,
    /// One mate outcome and one nonmate outcome per probe: any nonmate match
    /// is a single false positive.
    PerProbe,
}

impl fmt::Display for TallyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TallyMode::PerComparison => "per-comparison",
            TallyMode::PerProbe => "per-probe",
        })
    }
}

impl FromStr for TallyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-comparison" => Ok(TallyMode::PerComparison),
            "per-probe" => Ok(TallyMode::PerProbe),
            other => Err(Error::usage(format!("unknown tally mode '{other}'"))),
        }
    }
}

/// Counts for one probe against a gallery of `gallery_len` entries.
///
/// `mate` is the gallery position of the probe's own identity, if enrolled.
/// A matched mate is a true positive, an unmatched one a false negative;
/// every other matched entry is a false positive and every other unmatched
/// entry a true negative.
pub fn probe_counts(
    mate: Option<usize>,
    gallery_len: usize,
    is_match: impl Fn(usize) -> bool,
    mode: TallyMode,
) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    let mut nonmate_matches = 0u64;
    for g in 0..gallery_len {
        let hit = is_match(g);
        if Some(g) == mate {
            if hit {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        } else if hit {
            nonmate_matches += 1;
        }
    }
    let nonmates = (gallery_len - usize::from(mate.is_some())) as u64;
    match mode {
        TallyMode::PerComparison => {
            c.fp = nonmate_matches;
            c.tn = nonmates - nonmate_matches;
        }
        TallyMode::PerProbe => {
            if nonmate_matches > 0 {
                c.fp = 1;
            } else {
                c.tn = 1;
            }
        }
    }
    c
}

/// Per-probe counts in split order.
pub fn tally_per_probe(
    split: &Split,
    results: &[MatchResult],
    mode: TallyMode,
) -> Result<Vec<ConfusionCounts>> {
    if results.len() != split.probes.len() {
        return Err(Error::usage(format!(
            "{} match results for {} probes",
            results.len(),
            split.probes.len()
        )));
    }
    let mut by_probe: HashMap<&str, &MatchResult> = HashMap::with_capacity(results.len());
    for r in results {
        if by_probe.insert(r.probe_id.as_str(), r).is_some() {
            return Err(Error::usage(format!("two match results for probe '{}'", r.probe_id)));
        }
    }
    let gallery_pos: HashMap<&str, usize> = split
        .gallery
        .iter()
        .enumerate()
        .map(|(i, g)| (g.id.as_str(), i))
        .collect();

    split
        .probes
        .iter()
        .map(|probe| {
            let result = by_probe.get(probe.record.id.as_str()).ok_or_else(|| {
                Error::usage(format!("no match result for probe '{}'", probe.record.id))
            })?;
            let mut matched = vec![false; split.gallery.len()];
            for id in &result.matched_gallery_ids {
                let &pos = gallery_pos.get(id.as_str()).ok_or_else(|| {
                    Error::usage(format!(
                        "probe '{}' matched '{id}', which is not in the gallery",
                        probe.record.id
                    ))
                })?;
                matched[pos] = true;
            }
            let mate = match probe.presence {
                Presence::TargetPresent => Some(split.mate_index(probe).ok_or_else(|| {
                    Error::usage(format!(
                        "target-present probe '{}' has no gallery mate",
                        probe.record.id
                    ))
                })?),
                Presence::TargetAbsent => None,
            };
            Ok(probe_counts(mate, split.gallery.len(), |g| matched[g], mode))
        })
        .collect()
}

/// Sums outcomes over every probe in the split. Results may come in any order
/// but there must be exactly one per probe.
pub fn tally(split: &Split, results: &[MatchResult], mode: TallyMode) -> Result<ConfusionCounts> {
    Ok(tally_per_probe(split, results, mode)?.into_iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_comparison_counts() {
        // gallery of 5, mate at 2, matches at 0 and 2
        let c = probe_counts(Some(2), 5, |g| g == 0 || g == 2, TallyMode::PerComparison);
        assert_eq!(c, ConfusionCounts::new(1, 1, 3, 0));
        let c = probe_counts(None, 5, |g| g == 0 || g == 2, TallyMode::PerComparison);
        assert_eq!(c, ConfusionCounts::new(0, 2, 3, 0));
        let c = probe_counts(Some(4), 5, |_| false, TallyMode::PerComparison);
        assert_eq!(c, ConfusionCounts::new(0, 0, 4, 1));
    }

    #[test]
    fn per_probe_counts_one_nonmate_outcome() {
        let c = probe_counts(Some(2), 5, |g| g != 2, TallyMode::PerProbe);
        assert_eq!(c, ConfusionCounts::new(0, 1, 0, 1));
        let c = probe_counts(None, 5, |_| false, TallyMode::PerProbe);
        assert_eq!(c, ConfusionCounts::new(0, 0, 1, 0));
    }

    #[test]
    fn mode_names() {
        assert_eq!("per-probe".parse::<TallyMode>().unwrap(), TallyMode::PerProbe);
        assert_eq!(TallyMode::PerComparison.to_string(), "per-comparison");
        assert!("both".parse::<TallyMode>().is_err());
    }
}
