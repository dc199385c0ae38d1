use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::degrade::{DegradationFactor, FactorKind};
use crate::error::{Error, Result};
use crate::ident::ConfusionCounts;
use crate::metrics::{CurvePoint, Estimate, Subgroup};

use super::plot::emit_plot;
use super::runner::{ExperimentResults, PoseAuditRow, ReplicationCounts};

pub const CURVES_HEADER: [&str; 14] = [
    "factor",
    "raw_level",
    "normalized_level",
    "subgroup",
    "fpr",
    "fpr_lo",
    "fpr_hi",
    "fnr",
    "fnr_lo",
    "fnr_hi",
    "tp",
    "fp",
    "tn",
    "fn",
];

const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |v| v.to_string())
}

fn estimate_fields(e: Option<Estimate>) -> [String; 3] {
    [opt(e.map(|e| e.mean)), opt(e.map(|e| e.lo)), opt(e.map(|e| e.hi))]
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn curves_csv(curves: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = csv_err(Path::new("curves.csv"));
    w.write_record(CURVES_HEADER).map_err(&err)?;
    for p in curves {
        let [fpr, fpr_lo, fpr_hi] = estimate_fields(p.fpr);
        let [fnr, fnr_lo, fnr_hi] = estimate_fields(p.fnr);
        let c = p.counts;
        w.write_record([
            p.factor.name().to_string(),
            p.raw_level.to_string(),
            p.normalized_level.to_string(),
            p.subgroup.to_string(),
            fpr,
            fpr_lo,
            fpr_hi,
            fnr,
            fnr_lo,
            fnr_hi,
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
        ])
        .map_err(&err)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

pub fn counts_csv(rows: &[ReplicationCounts]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = csv_err(Path::new("counts.csv"));
    w.write_record([
        "factor",
        "raw_level",
        "normalized_level",
        "replication",
        "subgroup",
        "tp",
        "fp",
        "tn",
        "fn",
    ])
    .map_err(&err)?;
    for r in rows {
        let c = r.counts;
        w.write_record([
            r.factor.kind().name().to_string(),
            r.factor.raw_level().to_string(),
            r.factor.normalized_level().to_string(),
            r.replication.to_string(),
            r.subgroup.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
        ])
        .map_err(&err)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

pub fn pose_audit_csv(rows: &[PoseAuditRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = csv_err(Path::new("pose-audit.csv"));
    w.write_record(["subgroup", "raw_level", "normalized_level", "fpr_shift", "fnr_shift", "clamped"])
        .map_err(&err)?;
    for r in rows {
        w.write_record([
            r.subgroup.to_string(),
            r.raw_level.to_string(),
            r.normalized_level.to_string(),
            opt(r.fpr_shift),
            opt(r.fnr_shift),
            r.clamped.to_string(),
        ])
        .map_err(&err)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

/// Parses curves.csv back into points. Replication samples are not stored in
/// the file, so they come back empty.
pub fn read_curves(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers.iter().ne(CURVES_HEADER) {
        return Err(Error::format(0, format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err(path))?;
        let offset = row.position().map_or(0, |p| p.byte());
        let bad = |what: &str| Error::format(offset, format!("{}: invalid {what}", path.display()));
        let num = |i: usize| -> Result<Option<f64>> {
            match &row[i] {
                NA => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(CURVES_HEADER[i])),
            }
        };
        let count = |i: usize| -> Result<u64> { row[i].parse().map_err(|_| bad(CURVES_HEADER[i])) };
        let estimate = |i: usize| -> Result<Option<Estimate>> {
            Ok(match (num(i)?, num(i + 1)?, num(i + 2)?) {
                (Some(mean), Some(lo), Some(hi)) => Some(Estimate { mean, lo, hi }),
                _ => None,
            })
        };
        let kind: FactorKind = row[0].parse().map_err(|_| bad("factor"))?;
        let raw = num(1)?.ok_or_else(|| bad("raw_level"))?;
        let factor = DegradationFactor::new(kind, raw).map_err(|_| bad("raw_level"))?;
        out.push(CurvePoint {
            factor: kind,
            raw_level: raw,
            normalized_level: factor.normalized_level(),
            subgroup: row[3].parse().map_err(|_| bad("subgroup"))?,
            fpr: estimate(4)?,
            fnr: estimate(7)?,
            counts: ConfusionCounts::new(count(10)?, count(11)?, count(12)?, count(13)?),
            samples: Vec::new(),
            pose_shift: None,
        });
    }
    Ok(out)
}

/// Writes one SVG per factor into `dir`, returning the paths written.
pub fn emit_plots(curves: &[CurvePoint], subgroups: &[Subgroup], dir: &Path) -> Result<Vec<PathBuf>> {
    let factors: BTreeSet<FactorKind> = curves.iter().map(|p| p.factor).collect();
    let mut written = Vec::new();
    for kind in factors {
        let points: Vec<CurvePoint> = curves
            .iter()
            .filter(|p| p.factor == kind && (subgroups.is_empty() || subgroups.contains(&p.subgroup)))
            .cloned()
            .collect();
        if points.is_empty() {
            continue;
        }
        let path = dir.join(format!("{}.svg", kind.name()));
        emit_plot(&points, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes every artifact of a run into the configured output directory.
/// On failure, files already written by this call are removed.
pub fn write_results(results: &ExperimentResults) -> Result<Vec<PathBuf>> {
    let dir = &results.config.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let outcome = write_all(results, dir, &mut written);
    if outcome.is_err() {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
    }
    outcome.map(|_| written)
}

fn write_all(results: &ExperimentResults, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put("curves.csv", &curves_csv(&results.curves)?)?;
    put("counts.csv", &counts_csv(&results.counts)?)?;
    put("config-echo.json", results.config.to_json().as_bytes())?;
    if !results.pose_audit.is_empty() {
        put("pose-audit.csv", &pose_audit_csv(&results.pose_audit)?)?;
    }
    if results.config.plots {
        let plots = emit_plots(&results.curves, &results.config.subgroups, dir)?;
        written.extend(plots);
    }
    Ok(())
}
