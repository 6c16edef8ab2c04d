//! Evaluation protocol: seed-slice selection, static-copy baseline and the
//! {edge profile} × {verification} ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_masks, load_volume, write_atomic};
use crate::metrics::{dice, mean_std};
use crate::network::load_checkpoint;
use crate::propagator::{propagate_volume, NetworkProvider, PropagateOptions};
use crate::volume::{MaskPlane, MaskVolume, Volume};

/// Half-width of the window around the largest annotated slice.
pub const SEED_WINDOW: usize = 3;

/// Uniform draw among the non-empty slices within ±3 of the slice with the
/// largest annotated area (ties go to the lowest index).
pub fn select_seed_slice<R: Rng + ?Sized>(gt: &MaskVolume, rng: &mut R) -> Result<usize> {
    let areas: Vec<usize> = gt.planes().iter().map(MaskPlane::count).collect();
    let (best, &max) = areas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .ok_or_else(|| Error::Seed("groundtruth has no slices".into()))?;
    if max == 0 {
        return Err(Error::Seed("groundtruth is empty on every slice".into()));
    }
    let lo = best.saturating_sub(SEED_WINDOW);
    let hi = (best + SEED_WINDOW).min(areas.len() - 1);
    let candidates: Vec<usize> = (lo..=hi).filter(|&k| areas[k] > 0).collect();
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// The seed mask copied onto every slice.
pub fn baseline_static_copy(volume: &Volume, seed_mask: &MaskPlane, _seed_index: usize) -> MaskVolume {
    MaskVolume::from_planes(vec![seed_mask.clone(); volume.depth()]).expect("identical planes")
}

/// One volume with its reference segmentation.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: String,
    pub volume: Volume,
    pub groundtruth: MaskVolume,
}

impl EvalCase {
    pub fn new(id: impl Into<String>, volume: Volume, groundtruth: MaskVolume) -> Result<Self> {
        let id = id.into();
        let (h, w, d) = volume.dims();
        if groundtruth.dims() != (h, w, d) {
            return Err(Error::ShapeMismatch(format!(
                "{id}: groundtruth {:?} does not match volume {:?}",
                groundtruth.dims(),
                (h, w, d)
            )));
        }
        Ok(Self {
            id,
            volume,
            groundtruth,
        })
    }
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub edge_profile: bool,
    pub verification: bool,
}

impl GridEntry {
    pub fn name(&self) -> String {
        let mut s = String::from("network");
        if self.edge_profile {
            s.push_str("+edge-profile");
        }
        if self.verification {
            s.push_str("+verification");
        }
        s
    }

    pub fn apply(&self, base: &PropagateOptions) -> PropagateOptions {
        PropagateOptions {
            edge_profile: self.edge_profile,
            verification: self.verification,
            ..base.clone()
        }
    }
}

/// The four {edge profile} × {verification} combinations.
pub fn full_grid() -> Vec<GridEntry> {
    [(false, false), (false, true), (true, false), (true, true)]
        .into_iter()
        .map(|(edge_profile, verification)| GridEntry {
            edge_profile,
            verification,
        })
        .collect()
}

/// Produces a segmentation of a whole case from its seed annotation.
pub trait VolumeSegmenter: Sync {
    fn segment(
        &self,
        case: &EvalCase,
        seed_mask: &MaskPlane,
        seed_index: usize,
        opts: &PropagateOptions,
    ) -> Result<MaskVolume>;
}

/// Trained networks for both input modes. A grid cell whose mode has no
/// network fails with a configuration mismatch.
#[derive(Debug, Clone, Default)]
pub struct NetworkSegmenter {
    pub edge_profile: Option<NetworkProvider>,
    pub intensity: Option<NetworkProvider>,
}

impl VolumeSegmenter for NetworkSegmenter {
    fn segment(
        &self,
        case: &EvalCase,
        seed_mask: &MaskPlane,
        seed_index: usize,
        opts: &PropagateOptions,
    ) -> Result<MaskVolume> {
        let provider = if opts.edge_profile {
            &self.edge_profile
        } else {
            &self.intensity
        };
        let provider = provider.as_ref().ok_or_else(|| {
            Error::ConfigMismatch(format!(
                "no {} checkpoint available",
                if opts.edge_profile { "edge-profile" } else { "intensity" }
            ))
        })?;
        Ok(propagate_volume(provider, &case.volume, seed_mask, seed_index, opts)?.masks)
    }
}

/// Returns the reference segmentation unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSegmenter;

impl VolumeSegmenter for OracleSegmenter {
    fn segment(&self, case: &EvalCase, _: &MaskPlane, _: usize, _: &PropagateOptions) -> Result<MaskVolume> {
        Ok(case.groundtruth.clone())
    }
}

/// Result of one method on one volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeScore {
    pub dice: f64,
    pub slices: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub name: String,
    /// `None` for baselines.
    pub grid: Option<GridEntry>,
    pub per_volume: BTreeMap<String, VolumeScore>,
    pub mean: f64,
    pub std: f64,
    pub slices_per_second: f64,
}

impl MethodRow {
    fn new(name: String, grid: Option<GridEntry>, per_volume: BTreeMap<String, VolumeScore>) -> Self {
        let dices: Vec<f64> = per_volume.values().map(|s| s.dice).collect();
        let (mean, std) = mean_std(&dices);
        let slices: usize = per_volume.values().map(|s| s.slices).sum();
        let seconds: f64 = per_volume.values().map(|s| s.seconds).sum();
        Self {
            name,
            grid,
            per_volume,
            mean,
            std,
            slices_per_second: if seconds > 0.0 {
                slices as f64 / seconds
            } else {
                f64::INFINITY
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed_indices: BTreeMap<String, usize>,
    pub methods: Vec<MethodRow>,
    pub baselines: Vec<MethodRow>,
}

impl EvalReport {
    pub fn rows(&self) -> impl Iterator<Item = &MethodRow> {
        self.methods.iter().chain(&self.baselines)
    }

    pub fn row(&self, name: &str) -> Option<&MethodRow> {
        self.rows().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table, one line per method.
    pub fn to_table(&self) -> String {
        let headers = ["method", "dice mean", "dice std", "slices/s", "volumes"];
        let cells: Vec<[String; 5]> = self
            .rows()
            .map(|r| {
                [
                    r.name.clone(),
                    format!("{:.2}", r.mean),
                    format!("{:.2}", r.std),
                    format!("{:.2}", r.slices_per_second),
                    r.per_volume.len().to_string(),
                ]
            })
            .collect();
        let mut widths = headers.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cols: [&str; 5]| {
            let _ = write!(out, "{:<w$}", cols[0], w = widths[0]);
            for (c, w) in cols[1..].iter().zip(&widths[1..]) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        };
        line(&mut out, headers);
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3], &row[4]]);
        }
        out
    }

    /// One line per (method, volume).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,volume,seed_index,dice,slices,seconds\n");
        for r in self.rows() {
            for (id, s) in &r.per_volume {
                let seed = self.seed_indices.get(id).copied().unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{},{},{}", r.name, id, seed, s.dice, s.slices, s.seconds);
            }
        }
        out
    }
}

pub const STATIC_COPY: &str = "static-copy";

/// Runs every grid entry and the static-copy baseline on every case. Seeds
/// are drawn once per case, in the order given, from a ChaCha8 stream
/// seeded with `rng_seed`, so all methods share the same seed slice.
pub fn evaluate_cases<S: VolumeSegmenter>(
    cases: &[EvalCase],
    grid: &[GridEntry],
    base: &PropagateOptions,
    segmenter: &S,
    rng_seed: u64,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::Config("evaluation corpus is empty".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in cases {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Config(format!("duplicate volume id {}", c.id)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let seeds = cases
        .iter()
        .map(|c| select_seed_slice(&c.groundtruth, &mut rng).map_err(|e| Error::Seed(format!("{}: {e}", c.id))))
        .collect::<Result<Vec<_>>>()?;

    type PerCase = (Vec<VolumeScore>, VolumeScore);
    let results: Vec<PerCase> = cases
        .par_iter()
        .zip(&seeds)
        .map(|(case, &k)| -> Result<PerCase> {
            let seed_mask = case.groundtruth.plane(k)?;
            let d = case.volume.depth();
            let mut scores = Vec::with_capacity(grid.len());
            for g in grid {
                let t0 = Instant::now();
                let masks = segmenter.segment(case, seed_mask, k, &g.apply(base))?;
                let seconds = t0.elapsed().as_secs_f64();
                scores.push(VolumeScore {
                    dice: dice(&masks, &case.groundtruth)?,
                    slices: d,
                    seconds,
                });
            }
            let t0 = Instant::now();
            let copy = baseline_static_copy(&case.volume, seed_mask, k);
            let seconds = t0.elapsed().as_secs_f64();
            let baseline = VolumeScore {
                dice: dice(&copy, &case.groundtruth)?,
                slices: d,
                seconds,
            };
            Ok((scores, baseline))
        })
        .collect::<Result<_>>()?;

    let methods = grid
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let per = cases
                .iter()
                .zip(&results)
                .map(|(c, r)| (c.id.clone(), r.0[i].clone()))
                .collect();
            MethodRow::new(g.name(), Some(*g), per)
        })
        .collect();
    let baseline = cases
        .iter()
        .zip(&results)
        .map(|(c, r)| (c.id.clone(), r.1.clone()))
        .collect();
    Ok(EvalReport {
        seed_indices: cases.iter().zip(&seeds).map(|(c, &k)| (c.id.clone(), k)).collect(),
        methods,
        baselines: vec![MethodRow::new(STATIC_COPY.into(), None, baseline)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    /// SVL1 file.
    pub volume: PathBuf,
    /// SMK1 file with the same dimensions.
    pub groundtruth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub corpus: Vec<CorpusEntry>,
    /// Checkpoint trained on edge profiles.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint trained on raw intensity, used by grid cells with the edge
    /// profile turned off.
    pub intensity_checkpoint: Option<PathBuf>,
    pub grid: Vec<GridEntry>,
    /// Options shared by every grid cell; the two toggles are overridden.
    pub options: PropagateOptions,
    pub rng_seed: u64,
    pub report: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            checkpoint: None,
            intensity_checkpoint: None,
            grid: full_grid(),
            options: PropagateOptions::default(),
            rng_seed: 0,
            report: None,
            table: None,
            csv: None,
        }
    }
}

impl EvalConfig {
    /// Makes every relative path relative to `base`.
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for e in &mut self.corpus {
            fix(&mut e.volume);
            fix(&mut e.groundtruth);
        }
        for p in [
            &mut self.checkpoint,
            &mut self.intensity_checkpoint,
            &mut self.report,
            &mut self.table,
            &mut self.csv,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.is_empty() {
            return Err(Error::Config("evaluation corpus is empty".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("evaluation grid is empty".into()));
        }
        self.options.validate()?;
        if self.grid.iter().any(|g| g.edge_profile) && self.checkpoint.is_none() {
            return Err(Error::Config(
                "grid uses the edge profile but no checkpoint is given".into(),
            ));
        }
        if self.grid.iter().any(|g| !g.edge_profile) && self.intensity_checkpoint.is_none() {
            return Err(Error::Config(
                "grid disables the edge profile but no intensity_checkpoint is given".into(),
            ));
        }
        Ok(())
    }
}

/// Loads the corpus and checkpoints named in `cfg`, runs the grid, and
/// writes whichever report files are configured.
pub fn evaluate(cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let cases = cfg
        .corpus
        .iter()
        .map(|e| EvalCase::new(e.id.clone(), load_volume(&e.volume)?, load_masks(&e.groundtruth)?))
        .collect::<Result<Vec<_>>>()?;
    let provider = |path: &Option<PathBuf>, edge: bool| -> Result<Option<NetworkProvider>> {
        path.as_ref()
            .map(|p| {
                let ck = load_checkpoint(p)?;
                NetworkProvider::new(ck.network, ck.profile, edge)
            })
            .transpose()
    };
    let segmenter = NetworkSegmenter {
        edge_profile: provider(&cfg.checkpoint, true)?,
        intensity: provider(&cfg.intensity_checkpoint, false)?,
    };
    let report = evaluate_cases(&cases, &cfg.grid, &cfg.options, &segmenter, cfg.rng_seed)?;
    if let Some(p) = &cfg.report {
        write_atomic(p, report.to_json()?.as_bytes())?;
    }
    if let Some(p) = &cfg.table {
        write_atomic(p, report.to_table().as_bytes())?;
    }
    if let Some(p) = &cfg.csv {
        write_atomic(p, report.to_csv().as_bytes())?;
    }
    Ok(report)
}
