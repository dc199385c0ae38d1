//! Labeled face manifests, demographic balancing and per-replication
//! gallery/probe splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Asian,
}

impl Race {
    pub const ALL: [Race; 3] = [Race::White, Race::Black, Race::Asian];

    /// Maps an attribute-classifier label onto a studied race. "Indian" folds
    /// into Asian; anything else is outside the study.
    pub fn from_label(label: &str) -> Option<Race> {
        match label.trim().to_ascii_lowercase().as_str() {
            "white" => Some(Race::White),
            "black" => Some(Race::Black),
            "asian" | "indian" => Some(Race::Asian),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::Asian => "Asian",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn name(self) -> &'static str {
        match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            other => Err(Error::Data(format!("unknown gender label '{other}'"))),
        }
    }
}

/// One race x gender stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub race: Race,
    pub gender: Gender,
}

impl Cell {
    /// All six cells in apportionment order.
    pub fn all() -> impl Iterator<Item = Cell> {
        Race::ALL
            .into_iter()
            .flat_map(|race| Gender::ALL.into_iter().map(move |gender| Cell { race, gender }))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.race, self.gender)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub race: Race,
    pub gender: Gender,
    pub age_bucket: String,
    /// Externally pose-edited renderings keyed by pose level, sorted by level.
    /// When present it always holds level 0.
    pub pose_variants: Option<Vec<(f64, PathBuf)>>,
}

impl FaceRecord {
    pub fn cell(&self) -> Cell {
        Cell {
            race: self.race,
            gender: self.gender,
        }
    }

    pub fn pose_variant(&self, psi: f64) -> Option<&Path> {
        self.pose_variants
            .as_ref()?
            .iter()
            .find(|(level, _)| *level == psi)
            .map(|(_, p)| p.as_path())
    }
}

/// True for age buckets whose upper bound is below ten ("0-2", "3-9").
pub fn is_minor(age_bucket: &str) -> bool {
    let bucket = age_bucket.trim();
    let Some((_, upper)) = bucket.split_once('-') else {
        return false;
    };
    upper.trim().parse::<u32>().is_ok_and(|u| u < 10)
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<FaceRecord>,
    /// Rows skipped because the subject is under ten.
    pub dropped_minors: usize,
    /// Rows skipped because the race label is outside the studied set.
    pub dropped_unknown_race: usize,
}

const REQUIRED_COLUMNS: [&str; 5] = ["id", "image_path", "race", "gender", "age_bucket"];

/// Reads a manifest CSV (`id,image_path,race,gender,age_bucket[,pose_psi,pose_path]`).
/// Relative image paths resolve against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(file, base).map_err(|e| e.context(path.display().to_string()))
}

pub fn parse_manifest(reader: impl std::io::Read, base_dir: &Path) -> Result<Manifest> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::format(0, format!("unreadable header: {e}")))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name)
            .ok_or_else(|| Error::format(0, format!("missing required column '{name}'")))?;
    }
    let [c_id, c_path, c_race, c_gender, c_age] = cols;
    let c_psi = column("pose_psi");
    let c_pose_path = column("pose_path");

    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };

    let mut manifest = Manifest::default();
    let mut order: Vec<String> = Vec::new();
    let mut bases: HashMap<String, FaceRecord> = HashMap::new();
    let mut poses: HashMap<String, Vec<(f64, PathBuf, u64)>> = HashMap::new();
    let mut skipped: HashSet<String> = HashSet::new();

    for row in csv.records() {
        let row = row.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            Error::format(offset, e.to_string())
        })?;
        let offset = row.position().map_or(0, |p| p.byte());
        let field = |i: usize| row.get(i).unwrap_or("");
        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(Error::format(offset, "empty id"));
        }

        let psi = c_psi.map(field).unwrap_or("");
        let pose_path = c_pose_path.map(field).unwrap_or("");
        if !psi.is_empty() || !pose_path.is_empty() {
            if psi.is_empty() || pose_path.is_empty() {
                return Err(Error::format(offset, "pose_psi and pose_path must be given together"));
            }
            let level: f64 = psi
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::format(offset, format!("invalid pose_psi '{psi}'")))?;
            poses
                .entry(id)
                .or_default()
                .push((level, resolve(pose_path), offset));
            continue;
        }

        if bases.contains_key(&id) || skipped.contains(&id) {
            return Err(Error::format(offset, format!("duplicate id '{id}'")));
        }
        let age_bucket = field(c_age).to_string();
        if is_minor(&age_bucket) {
            manifest.dropped_minors += 1;
            skipped.insert(id);
            continue;
        }
        let Some(race) = Race::from_label(field(c_race)) else {
            manifest.dropped_unknown_race += 1;
            skipped.insert(id);
            continue;
        };
        let gender = field(c_gender)
            .parse()
            .map_err(|e: Error| Error::format(offset, e.to_string()))?;
        order.push(id.clone());
        bases.insert(
            id.clone(),
            FaceRecord {
                id,
                image_path: resolve(field(c_path)),
                race,
                gender,
                age_bucket,
                pose_variants: None,
            },
        );
    }

    for (id, mut variants) in poses {
        if skipped.contains(&id) {
            continue;
        }
        let Some(record) = bases.get_mut(&id) else {
            let offset = variants[0].2;
            return Err(Error::format(offset, format!("pose rows for unknown id '{id}'")));
        };
        variants.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        if let Some(w) = variants.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::format(w[1].2, format!("duplicate pose level {} for '{id}'", w[1].0)));
        }
        if !variants.iter().any(|v| v.0 == 0.0) {
            return Err(Error::format(
                variants[0].2,
                format!("pose variants for '{id}' lack the level-0 rendering"),
            ));
        }
        record.pose_variants = Some(variants.into_iter().map(|(l, p, _)| (l, p)).collect());
    }

    manifest.records = order
        .into_iter()
        .map(|id| bases.remove(&id).expect("recorded id"))
        .collect();
    if manifest.dropped_unknown_race > 0 {
        log::warn!(
            "dropped {} rows with race labels outside White/Black/Asian/Indian",
            manifest.dropped_unknown_race
        );
    }
    Ok(manifest)
}

/// Writes records back out in manifest form, including pose rows.
pub fn write_manifest(records: &[FaceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["id", "image_path", "race", "gender", "age_bucket", "pose_psi", "pose_path"])
        .map_err(io_err)?;
    for r in records {
        let img = r.image_path.display().to_string();
        w.write_record([
            r.id.as_str(),
            &img,
            r.race.name(),
            r.gender.name(),
            &r.age_bucket,
            "",
            "",
        ])
        .map_err(io_err)?;
        for (psi, p) in r.pose_variants.iter().flatten() {
            w.write_record([
                r.id.as_str(),
                &img,
                r.race.name(),
                r.gender.name(),
                &r.age_bucket,
                &psi.to_string(),
                &p.display().to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Demographic mix a sample is balanced towards. Cell targets are the product
/// of the race and gender shares, renormalized over the six studied cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub race_proportions: BTreeMap<Race, f64>,
    pub gender_proportions: BTreeMap<Gender, f64>,
}

impl TargetDistribution {
    /// 2020 US Census shares for the studied races and genders.
    pub fn us_census_2020() -> Self {
        TargetDistribution {
            race_proportions: BTreeMap::from([
                (Race::White, 0.578),
                (Race::Black, 0.121),
                (Race::Asian, 0.059),
            ]),
            gender_proportions: BTreeMap::from([(Gender::Female, 0.504), (Gender::Male, 0.496)]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .race_proportions
            .values()
            .chain(self.gender_proportions.values());
        for &p in all {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::usage(format!("proportion {p} outside [0, 1]")));
            }
        }
        let race_total: f64 = self.race_proportions.values().sum();
        if race_total > 1.0 + 1e-9 {
            return Err(Error::usage(format!("race proportions sum to {race_total} > 1")));
        }
        if self.cell_weights().iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::usage("target distribution gives every cell zero weight"));
        }
        Ok(())
    }

    /// Renormalized share of each cell, in [`Cell::all`] order.
    pub fn cell_weights(&self) -> Vec<(Cell, f64)> {
        let raw: Vec<(Cell, f64)> = Cell::all()
            .map(|cell| {
                let r = self.race_proportions.get(&cell.race).copied().unwrap_or(0.0);
                let g = self.gender_proportions.get(&cell.gender).copied().unwrap_or(0.0);
                (cell, r * g)
            })
            .collect();
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        if total == 0.0 {
            return raw;
        }
        raw.into_iter().map(|(c, w)| (c, w / total)).collect()
    }
}

impl Default for TargetDistribution {
    fn default() -> Self {
        TargetDistribution::us_census_2020()
    }
}

/// Largest-remainder (Hamilton) apportionment of `n` seats over `weights`.
/// Ties on the remainder go to the earlier entry.
pub fn apportion(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        seats[i] += 1;
    }
    seats
}

fn by_cell(pop: &[FaceRecord]) -> BTreeMap<Cell, Vec<&FaceRecord>> {
    let mut cells: BTreeMap<Cell, Vec<&FaceRecord>> = BTreeMap::new();
    for r in pop {
        cells.entry(r.cell()).or_default().push(r);
    }
    for members in cells.values_mut() {
        members.sort_by(|a, b| a.id.cmp(&b.id));
    }
    cells
}

/// Per-cell counts for a stratified sample of `n`.
pub fn allocation(dist: &TargetDistribution, n: usize) -> Vec<(Cell, usize)> {
    let weights = dist.cell_weights();
    let w: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    weights
        .iter()
        .map(|(c, _)| *c)
        .zip(apportion(&w, n))
        .collect()
}

/// Draws `n` records whose race x gender make-up follows `dist`, uniformly
/// without replacement inside each cell. Output is sorted by id.
pub fn stratified_sample(
    pop: &[FaceRecord],
    dist: &TargetDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<FaceRecord>> {
    dist.validate()?;
    let cells = by_cell(pop);
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(n);
    for (cell, count) in allocation(dist, n) {
        if count == 0 {
            continue;
        }
        let members = cells.get(&cell).map(Vec::as_slice).unwrap_or(&[]);
        if members.len() < count {
            return Err(Error::Capacity(format!(
                "cell {cell} needs {count} records but only {} are available",
                members.len()
            )));
        }
        out.extend(
            index::sample(&mut rng, members.len(), count)
                .into_iter()
                .map(|i| members[i].clone()),
        );
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Uniform draw of `n` records without replacement, sorted by id.
pub fn uniform_sample(pop: &[FaceRecord], n: usize, seed: u64) -> Result<Vec<FaceRecord>> {
    if pop.len() < n {
        return Err(Error::Capacity(format!(
            "need {n} records but only {} are available",
            pop.len()
        )));
    }
    let mut sorted: Vec<&FaceRecord> = pop.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = seed::rng(seed);
    let mut out: Vec<FaceRecord> = index::sample(&mut rng, sorted.len(), n)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub gallery_size: usize,
    pub probes_absent: usize,
    pub probes_present: usize,
    pub replications: usize,
    pub seed: u64,
    /// Balance probe sets to the target distribution as well as the gallery.
    pub stratify_probes: bool,
    /// Reuse replication 0's gallery in every replication.
    pub freeze_gallery: bool,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            gallery_size: 167,
            probes_absent: 84,
            probes_present: 83,
            replications: 256,
            seed: 0,
            stratify_probes: true,
            freeze_gallery: false,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("gallery_size", self.gallery_size),
            ("probes_absent", self.probes_absent),
            ("probes_present", self.probes_present),
            ("replications", self.replications),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::usage(format!("{name} must be positive")));
        }
        if self.probes_present > self.gallery_size {
            return Err(Error::usage(format!(
                "probes_present ({}) cannot exceed gallery_size ({})",
                self.probes_present, self.gallery_size
            )));
        }
        Ok(())
    }

    /// Seed for one replication's draws.
    pub fn replication_seed(&self, replication: usize) -> u64 {
        self.seed ^ seed::splitmix64(replication as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Presence {
    TargetPresent,
    TargetAbsent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub record: FaceRecord,
    pub presence: Presence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub replication: usize,
    pub gallery: Vec<FaceRecord>,
    /// Sorted by id.
    pub probes: Vec<Probe>,
}

impl Split {
    pub fn target_present(&self) -> impl Iterator<Item = &Probe> {
        self.probes
            .iter()
            .filter(|p| p.presence == Presence::TargetPresent)
    }

    pub fn target_absent(&self) -> impl Iterator<Item = &Probe> {
        self.probes
            .iter()
            .filter(|p| p.presence == Presence::TargetAbsent)
    }

    /// Position of the probe's mate in the gallery, if it has one.
    pub fn mate_index(&self, probe: &Probe) -> Option<usize> {
        self.gallery.iter().position(|g| g.id == probe.record.id)
    }
}

const GALLERY_STREAM: u64 = 1;
const ABSENT_STREAM: u64 = 2;
const PRESENT_STREAM: u64 = 3;

/// Builds replication `replication`'s gallery and probe sets. The result
/// depends only on the arguments, so replications can run in any order.
pub fn make_split(
    pop: &[FaceRecord],
    plan: &SplitPlan,
    dist: &TargetDistribution,
    replication: usize,
) -> Result<Split> {
    plan.validate()?;
    let needed = plan.gallery_size + plan.probes_absent;
    if pop.len() < needed {
        return Err(Error::Capacity(format!(
            "population of {} cannot supply a gallery of {} plus {} target-absent probes",
            pop.len(),
            plan.gallery_size,
            plan.probes_absent
        )));
    }
    let rep_seed = plan.replication_seed(replication);
    let gallery_seed = if plan.freeze_gallery {
        plan.replication_seed(0)
    } else {
        rep_seed
    };
    let gallery = stratified_sample(
        pop,
        dist,
        plan.gallery_size,
        seed::derive(gallery_seed, GALLERY_STREAM),
    )?;

    let in_gallery: HashSet<&str> = gallery.iter().map(|r| r.id.as_str()).collect();
    let outside: Vec<FaceRecord> = pop
        .iter()
        .filter(|r| !in_gallery.contains(r.id.as_str()))
        .cloned()
        .collect();

    let absent_seed = seed::derive(rep_seed, ABSENT_STREAM);
    let present_seed = seed::derive(rep_seed, PRESENT_STREAM);
    let (absent, present) = if plan.stratify_probes {
        (
            stratified_sample(&outside, dist, plan.probes_absent, absent_seed),
            stratified_sample(&gallery, dist, plan.probes_present, present_seed),
        )
    } else {
        (
            uniform_sample(&outside, plan.probes_absent, absent_seed),
            uniform_sample(&gallery, plan.probes_present, present_seed),
        )
    };
    let absent = absent.map_err(|e| e.context("target-absent probes"))?;
    let present = present.map_err(|e| e.context("target-present probes"))?;

    let mut probes: Vec<Probe> = present
        .into_iter()
        .map(|record| Probe {
            record,
            presence: Presence::TargetPresent,
        })
        .chain(absent.into_iter().map(|record| Probe {
            record,
            presence: Presence::TargetAbsent,
        }))
        .collect();
    probes.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    Ok(Split {
        replication,
        gallery,
        probes,
    })
}
