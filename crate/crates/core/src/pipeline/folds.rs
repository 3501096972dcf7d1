use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;

use super::manifest::{detect_delimiter, records, Manifest};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::rng::{stream, tags};

/// Assignment of every manifest clip to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    /// `assignment[i]` is the fold of clip `i`. Every fold must be non-empty.
    pub fn new(k: usize, assignment: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::FoldPlan("k must be at least 1".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&f| f >= k) {
            return Err(Error::FoldPlan(format!(
                "fold index {bad} out of range for k={k}"
            )));
        }
        let plan = Self { k, assignment };
        if let Some(empty) = plan.folds().iter().position(Vec::is_empty) {
            return Err(Error::FoldPlan(format!("fold {empty} has no clips")));
        }
        Ok(plan)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Clip indices per fold, ascending.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (i, &f) in self.assignment.iter().enumerate() {
            folds[f].push(i);
        }
        folds
    }

    /// `(train, validation)` clip indices. With `k = 1` both are every clip.
    pub fn split(&self, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.k {
            return Err(Error::FoldPlan(format!(
                "fold {fold} out of range for k={}",
                self.k
            )));
        }
        let val: Vec<usize> = (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect();
        if self.is_degenerate() {
            return Ok((val.clone(), val));
        }
        let train = (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect();
        Ok((train, val))
    }

    /// A single fold trains and validates on the same clips.
    pub fn is_degenerate(&self) -> bool {
        self.k == 1
    }

    /// Locations whose clips fall in more than one fold.
    pub fn leaking_locations(&self, manifest: &Manifest) -> Vec<String> {
        let mut folds_of: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for (e, &f) in manifest.entries().iter().zip(&self.assignment) {
            folds_of.entry(e.location.as_str()).or_default().insert(f);
        }
        folds_of
            .into_iter()
            .filter(|(_, f)| f.len() > 1)
            .map(|(l, _)| l.to_string())
            .collect()
    }

    /// `clip_path<TAB>fold` lines in manifest order.
    pub fn to_tsv(&self, manifest: &Manifest) -> String {
        manifest
            .entries()
            .iter()
            .zip(&self.assignment)
            .map(|(e, f)| format!("{}\t{f}\n", e.path))
            .collect()
    }
}

/// Location-level folds. Locations are grouped by the class of their first
/// clip, each group is shuffled with the seed, and the groups are dealt
/// round-robin into folds with one running counter, so fold sizes and
/// per-class fold counts differ by at most one location.
pub fn make_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::FoldPlan("k must be at least 1".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for e in manifest.entries() {
        if seen.insert(e.location.as_str()) {
            by_class
                .entry(e.class.id())
                .or_default()
                .push(e.location.as_str());
        }
    }
    if seen.len() < k {
        return Err(Error::FoldPlan(format!(
            "{} distinct locations cannot fill {k} folds",
            seen.len()
        )));
    }
    let mut rng = stream(seed, tags::FOLDS);
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0;
    for locations in by_class.values_mut() {
        locations.shuffle(&mut rng);
        for loc in locations.iter() {
            fold_of.insert(loc, next % k);
            next += 1;
        }
    }
    let assignment = manifest
        .entries()
        .iter()
        .map(|e| fold_of[e.location.as_str()])
        .collect();
    FoldPlan::new(k, assignment)
}

/// Result of reading an external plan: the plan plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct LoadedPlan {
    pub plan: FoldPlan,
    pub warnings: Vec<String>,
}

fn finish(manifest: &Manifest, folds: Vec<Option<usize>>) -> Result<LoadedPlan> {
    let missing: Vec<&str> = manifest
        .entries()
        .iter()
        .zip(&folds)
        .filter(|(_, f)| f.is_none())
        .map(|(e, _)| e.path.as_str())
        .collect();
    if let Some(first) = missing.first() {
        return Err(Error::FoldPlan(format!(
            "{} clip(s) have no fold assignment, first: {first}",
            missing.len()
        )));
    }
    let assignment: Vec<usize> = folds.into_iter().map(Option::unwrap).collect();
    let k = assignment.iter().max().map_or(1, |m| m + 1);
    let plan = FoldPlan::new(k, assignment)?;
    let warnings = plan
        .leaking_locations(manifest)
        .into_iter()
        .map(|l| format!("location {l} appears in more than one fold"))
        .collect();
    Ok(LoadedPlan { plan, warnings })
}

/// Reads `clip_path, fold_index` records (tab or comma). Every manifest clip
/// must be assigned exactly once; leakage across folds is reported as a
/// warning since external splits are authoritative.
pub fn load_fold_plan(path: &Path, manifest: &Manifest) -> Result<LoadedPlan> {
    let text = fsutil::read_to_string(path)?;
    let delim = detect_delimiter(&text);
    let mut folds = vec![None; manifest.len()];
    let err = |line, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (line, record) in records(&text) {
        let fields: Vec<&str> = record.split(delim).map(str::trim).collect();
        if fields.len() != 2 {
            return Err(err(
                line,
                format!(
                    "expected clip path and fold index, found {} fields",
                    fields.len()
                ),
            ));
        }
        let idx = manifest
            .index_of(fields[0])
            .ok_or_else(|| err(line, format!("clip {} is not in the manifest", fields[0])))?;
        let fold: usize = fields[1]
            .parse()
            .map_err(|_| err(line, format!("invalid fold index {:?}", fields[1])))?;
        if folds[idx].replace(fold).is_some() {
            return Err(err(line, format!("clip {} assigned twice", fields[0])));
        }
    }
    finish(manifest, folds)
}

/// Builds a plan from a DCASE `evaluation_setup` directory: the clips listed
/// in `foldN_evaluate.txt` form fold `N - 1`.
pub fn load_dcase_setup(dir: &Path, manifest: &Manifest) -> Result<LoadedPlan> {
    let mut folds = vec![None; manifest.len()];
    let mut n = 1;
    loop {
        let path = dir.join(format!("fold{n}_evaluate.txt"));
        if !path.exists() {
            break;
        }
        let text = fsutil::read_to_string(&path)?;
        let delim = detect_delimiter(&text);
        for (line, record) in records(&text) {
            let clip = record.split(delim).next().unwrap_or("").trim();
            let idx = manifest.index_of(clip).ok_or_else(|| Error::Manifest {
                path: path.clone(),
                line,
                message: format!("clip {clip} is not in the manifest"),
            })?;
            if folds[idx].replace(n - 1).is_some() {
                return Err(Error::FoldPlan(format!(
                    "clip {clip} is evaluated in two folds"
                )));
            }
        }
        n += 1;
    }
    if n == 1 {
        return Err(Error::FoldPlan(format!(
            "no fold1_evaluate.txt in {}",
            dir.display()
        )));
    }
    finish(manifest, folds)
}

pub fn write_fold_plan(plan: &FoldPlan, manifest: &Manifest, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, plan.to_tsv(manifest).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::SceneClass;
    use crate::pipeline::ManifestEntry;

    fn manifest(locations: usize, clips_per_location: usize) -> Manifest {
        let entries = (0..locations)
            .flat_map(|l| {
                (0..clips_per_location).map(move |c| ManifestEntry {
                    path: format!("l{l}_c{c}.wav"),
                    class: SceneClass::from_id(l % 15).unwrap(),
                    location: format!("loc{l}"),
                })
            })
            .collect();
        Manifest::new(entries, "").unwrap()
    }

    #[test]
    fn one_location_per_fold() {
        let m = manifest(4, 3);
        let plan = make_folds(&m, 4, 9).unwrap();
        for fold in plan.folds() {
            let locs: BTreeSet<_> = fold.iter().map(|&i| &m.entries()[i].location).collect();
            assert_eq!(locs.len(), 1);
        }
        assert!(plan.leaking_locations(&m).is_empty());
    }

    #[test]
    fn deterministic_and_balanced() {
        let m = manifest(60, 2);
        let a = make_folds(&m, 4, 1).unwrap();
        assert_eq!(a, make_folds(&m, 4, 1).unwrap());
        assert_ne!(a, make_folds(&m, 4, 2).unwrap());
        for fold in a.folds() {
            let locs: BTreeSet<_> = fold.iter().map(|&i| &m.entries()[i].location).collect();
            assert_eq!(locs.len(), 15);
        }
        assert!(a.leaking_locations(&m).is_empty());
    }

    #[test]
    fn too_few_locations() {
        assert!(make_folds(&manifest(3, 5), 4, 0).is_err());
    }

    #[test]
    fn degenerate_single_fold() {
        let m = manifest(2, 2);
        let plan = make_folds(&m, 1, 0).unwrap();
        assert!(plan.is_degenerate());
        let (train, val) = plan.split(0).unwrap();
        assert_eq!(train, val);
        assert_eq!(train.len(), 4);
    }

    #[test]
    fn external_plans() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(4, 2);
        let p = dir.path().join("plan.tsv");
        std::fs::write(
            &p,
            m.entries()
                .iter()
                .map(|e| format!("{}\t0\n", e.path))
                .collect::<String>(),
        )
        .unwrap();
        let loaded = load_fold_plan(&p, &m).unwrap();
        assert_eq!(loaded.plan.k(), 1);

        std::fs::write(&p, "ghost.wav\t0\n").unwrap();
        assert!(load_fold_plan(&p, &m)
            .unwrap_err()
            .to_string()
            .contains("ghost.wav"));

        // leakage is a warning, a missing clip is an error
        let text: String = m
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{},{}\n", e.path, i % 2))
            .collect();
        std::fs::write(&p, &text).unwrap();
        let loaded = load_fold_plan(&p, &m).unwrap();
        assert_eq!(loaded.warnings.len(), 4);
        std::fs::write(&p, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
        assert!(load_fold_plan(&p, &m).is_err());

        let plan = make_folds(&m, 2, 3).unwrap();
        write_fold_plan(&plan, &m, &p).unwrap();
        assert_eq!(load_fold_plan(&p, &m).unwrap().plan, plan);
    }

    #[test]
    fn dcase_setup_membership() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(4, 2);
        let plan = make_folds(&m, 2, 5).unwrap();
        for (f, clips) in plan.folds().iter().enumerate() {
            let text: String = clips
                .iter()
                .map(|&i| format!("{}\n", m.entries()[i].path))
                .collect();
            std::fs::write(dir.path().join(format!("fold{}_evaluate.txt", f + 1)), text).unwrap();
        }
        assert_eq!(load_dcase_setup(dir.path(), &m).unwrap().plan, plan);
    }
}
