//! Stage runner over an output directory of artifacts.
//!
//! Every stage reads what earlier stages wrote and writes its own files, so
//! the stages can be run one by one (and re-run after seeds are edited) or
//! all at once. The CLI and the HTTP server both go through this module.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Grid2, Point};
use crate::mie::{combine_exams, mie_report, score_exam, FcmOptions, MieReport, ScoreGrid, DEFAULT_LAYER_THRESHOLD};
use crate::pamm::{cavity_regions, compute_maps, segmental_function, ParametricMaps, SegmentalFunction};
use crate::phantom::{self, ContractionLabels, PhantomSpec};
use crate::registration::{apply_transform, register, RegistrationOptions, RoiBox, TransformRecord, DEFAULT_COARSE_PRESMOOTH_PX, DEFAULT_PRESMOOTH_PX, DEFAULT_ROI_FACTOR};
use crate::sectors::{sectorize, SectorLegend, SectorMap, SliceSectors};
use crate::segmentation::{segment_endo, segment_epi, ContourSet, Rect, SeedConfig, SliceContours, SliceSeeds, SnakeParams};
use crate::stats::{build_confusion, group_by_contraction, Agreement, ConfusionTable, PairComparison};
use crate::sync::{average_cine_window, scan_align, SyncRecord, DEFAULT_WINDOW_LEN_MS, DEFAULT_WINDOW_START_MS};
use crate::volume::{load_cine, load_volume, save_cine, save_volume, write_atomic, CineSequence, Volume};

pub const ROI_FACTOR_RANGE: [f64; 2] = [2.0, 2.8];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: missing {}; run `cmrfusion {producer}` first", path.display())]
    MissingArtifact { stage: Stage, producer: String, path: PathBuf },
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Phantom,
    Sync,
    Register,
    Segment,
    Sectorize,
    Mie,
    Pamm,
    Report,
}

impl Stage {
    /// The analysis stages in dependency order; `phantom` only produces
    /// inputs and is not part of `all`.
    pub const ANALYSIS: [Stage; 7] =
        [Stage::Sync, Stage::Register, Stage::Segment, Stage::Sectorize, Stage::Mie, Stage::Pamm, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Sync => "sync",
            Stage::Register => "register",
            Stage::Segment => "segment",
            Stage::Sectorize => "sectorize",
            Stage::Mie => "mie",
            Stage::Pamm => "pamm",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Stage::Phantom].into_iter().chain(Stage::ANALYSIS).find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Run settings. Relative paths are taken relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Cine input; defaults to `cine.mvol.json` in the output directory.
    pub cine: Option<PathBuf>,
    /// DE exams; defaults to `de_0.mvol.json`, `de_1.mvol.json`, ... there.
    pub de_exams: Vec<PathBuf>,
    pub seeds: Option<PathBuf>,
    /// Reference scores for the agreement table; skipped when absent.
    pub expert_scores: Option<PathBuf>,
    /// Wall-motion classes for the ATR comparison; skipped when absent.
    pub contraction_labels: Option<PathBuf>,
    pub window_start_ms: f64,
    pub window_len_ms: f64,
    pub roi_factor: f64,
    pub presmooth_px: f64,
    /// Blur of the first registration pass; `null` skips that pass.
    pub coarse_presmooth_px: Option<f64>,
    pub snake: SnakeParams,
    pub layer_threshold: f64,
    pub excluded_slices: Vec<usize>,
    /// Cine phase whose contours bound the PAMM cavity region.
    pub ed_phase: usize,
    pub phantom: PhantomSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("out"),
            cine: None,
            de_exams: Vec::new(),
            seeds: None,
            expert_scores: None,
            contraction_labels: None,
            window_start_ms: DEFAULT_WINDOW_START_MS,
            window_len_ms: DEFAULT_WINDOW_LEN_MS,
            roi_factor: DEFAULT_ROI_FACTOR,
            presmooth_px: DEFAULT_PRESMOOTH_PX,
            coarse_presmooth_px: Some(DEFAULT_COARSE_PRESMOOTH_PX),
            snake: SnakeParams::default(),
            layer_threshold: DEFAULT_LAYER_THRESHOLD,
            excluded_slices: Vec::new(),
            ed_phase: 0,
            phantom: PhantomSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(ROI_FACTOR_RANGE[0]..=ROI_FACTOR_RANGE[1]).contains(&self.roi_factor) {
            return bad(format!("roi_factor {} outside [{}, {}]", self.roi_factor, ROI_FACTOR_RANGE[0], ROI_FACTOR_RANGE[1]));
        }
        if !(self.window_len_ms > 0.0) || !(self.window_start_ms >= 0.0) {
            return bad("window_start_ms must be >= 0 and window_len_ms > 0".into());
        }
        if !(self.layer_threshold > 0.0 && self.layer_threshold <= 1.0) {
            return bad(format!("layer_threshold {} outside (0, 1]", self.layer_threshold));
        }
        if !(self.presmooth_px >= 0.0) || self.coarse_presmooth_px.is_some_and(|c| !(c >= 0.0)) {
            return bad("presmooth_px and coarse_presmooth_px must be >= 0".into());
        }
        self.snake.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file and anchors its relative paths at the file's
    /// directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.rebase(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in self.cine.iter_mut().chain(self.seeds.iter_mut()).chain(self.expert_scores.iter_mut()).chain(self.contraction_labels.iter_mut()) {
            fix(p);
        }
        self.de_exams.iter_mut().for_each(fix);
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|source| PipelineError::Io { path: path.into(), source })
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: Box::new(e) }
}

/// Per-exam scan-alignment summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncArtifact {
    #[serde(flatten)]
    pub window: SyncRecord,
    pub de_overlap_voxels: Vec<usize>,
}

/// Registration ROI plus the transform found for every exam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub roi: RoiBox,
    pub exams: Vec<TransformRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub excluded_slices: Vec<usize>,
    pub confusion: ConfusionTable,
    pub exact: Agreement,
    pub within_one: Agreement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierMeans {
    pub n: Option<f64>,
    pub h: Option<f64>,
    pub ad: Option<f64>,
    /// Slices where the mean tier ATRs satisfy N > H > AD.
    pub ordered_slices: Vec<usize>,
    pub comparisons: Vec<PairComparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSegmentation {
    pub slice: usize,
    pub lambda: usize,
    pub repaired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub sync: SyncArtifact,
    pub registration: RegistrationSummary,
    pub segmentation: Vec<SliceSegmentation>,
    pub mie: MieReport,
    pub agreement: Option<AgreementSummary>,
    pub function: SegmentalFunction,
    pub atr_by_tier: Option<TierMeans>,
}

/// File names inside the output directory.
pub mod artifacts {
    pub const CINE: &str = "cine.mvol.json";
    pub const SEEDS: &str = "seeds.json";
    pub const TRUTH: &str = "truth.json";
    pub const EXPERT_SCORES: &str = "expert_scores.json";
    pub const CONTRACTION_LABELS: &str = "contraction_labels.json";
    pub const CINE_AVG: &str = "cine_avg.mvol.json";
    pub const SYNC: &str = "sync.json";
    pub const REGISTRATION: &str = "registration.json";
    pub const CONTOURS: &str = "contours.json";
    pub const CONTOURS_ED: &str = "contours_ed.json";
    pub const SECTORS: &str = "sectors.mvol.json";
    pub const SECTORS_LEGEND: &str = "sectors_legend.json";
    pub const SECTORS_ED: &str = "sectors_ed.mvol.json";
    pub const SECTORS_ED_LEGEND: &str = "sectors_ed_legend.json";
    pub const SCORES: &str = "scores.json";
    pub const MIE_REPORT: &str = "mie_report.json";
    pub const SEGMENTAL: &str = "segmental.json";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const MAP_NAMES: [&str; 5] = ["ab", "av", "ton", "toff", "sse"];

    pub fn de(k: usize) -> String {
        format!("de_{k}.mvol.json")
    }
    pub fn de_aligned(k: usize) -> String {
        format!("de_aligned_{k}.mvol.json")
    }
    pub fn de_registered(k: usize) -> String {
        format!("de_registered_{k}.mvol.json")
    }
    pub fn transform(k: usize) -> String {
        format!("transform_{k}.json")
    }
    pub fn scores_exam(k: usize) -> String {
        format!("scores_exam_{k}.json")
    }
    pub fn map(name: &str) -> String {
        format!("maps_{name}.mvol.json")
    }
}

/// One segmentation result with the filtered ROI it ran on.
#[derive(Clone, Debug)]
pub struct SegmentPreview {
    pub contours: SliceContours,
    pub roi: Rect,
    pub filtered: Grid2<f64>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Pipeline> {
        config.validate()?;
        Ok(Pipeline { config })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn need(&self, stage: Stage, path: PathBuf, producer: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact { stage, producer: producer.into(), path })
        }
    }

    pub fn cine_path(&self) -> PathBuf {
        self.config.cine.clone().unwrap_or_else(|| self.out(artifacts::CINE))
    }

    pub fn seeds_path(&self) -> PathBuf {
        self.config.seeds.clone().unwrap_or_else(|| self.out(artifacts::SEEDS))
    }

    pub fn de_paths(&self) -> Vec<PathBuf> {
        if !self.config.de_exams.is_empty() {
            return self.config.de_exams.clone();
        }
        (0..3).map(|k| self.out(&artifacts::de(k))).take_while(|p| p.exists()).collect()
    }

    fn n_exams(&self, stage: Stage, producer: &str, name: fn(usize) -> String) -> Result<usize> {
        let n = (0..3).take_while(|&k| self.out(&name(k)).exists()).count();
        if n == 0 {
            return Err(PipelineError::MissingArtifact { stage, producer: producer.into(), path: self.out(&name(0)) });
        }
        Ok(n)
    }

    pub fn load_cine(&self, stage: Stage) -> Result<CineSequence> {
        let p = self.need(stage, self.cine_path(), "phantom")?;
        load_cine(&p).map_err(stage_err(stage))
    }

    fn load_vol(&self, stage: Stage, name: &str, producer: &str) -> Result<Volume> {
        let p = self.need(stage, self.out(name), producer)?;
        load_volume(&p).map_err(stage_err(stage))
    }

    fn load_json<T: DeserializeOwned>(&self, stage: Stage, path: PathBuf, producer: &str) -> Result<T> {
        read_json(&self.need(stage, path, producer)?)
    }

    fn save_vol(&self, stage: Stage, v: &Volume, name: &str) -> Result<()> {
        save_volume(v, &self.out(name)).map_err(stage_err(stage))
    }

    pub fn load_seeds(&self, stage: Stage) -> Result<SeedConfig> {
        self.load_json(stage, self.seeds_path(), "phantom")
    }

    /// Runs one stage and returns the artifacts it wrote.
    pub fn run(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        info!("running {stage}");
        fs::create_dir_all(&self.config.output_dir).map_err(|source| PipelineError::Io { path: self.config.output_dir.clone(), source })?;
        let names = match stage {
            Stage::Phantom => self.phantom()?,
            Stage::Sync => self.sync()?,
            Stage::Register => self.register()?,
            Stage::Segment => self.segment()?,
            Stage::Sectorize => self.sectorize()?,
            Stage::Mie => self.mie()?,
            Stage::Pamm => self.pamm()?,
            Stage::Report => self.report()?.1,
        };
        Ok(names.into_iter().map(|n| self.out(&n)).collect())
    }

    /// All analysis stages in order.
    pub fn run_all(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for st in Stage::ANALYSIS {
            out.extend(self.run(st)?);
        }
        Ok(out)
    }

    fn phantom(&self) -> Result<Vec<String>> {
        let st = Stage::Phantom;
        let spec = &self.config.phantom;
        let cine = phantom::make_cine(spec).map_err(stage_err(st))?;
        save_cine(&cine, &self.out(artifacts::CINE)).map_err(stage_err(st))?;
        let de = phantom::make_de(spec).map_err(stage_err(st))?;
        let mut names = vec![artifacts::CINE.to_string()];
        for (k, v) in de.exams.iter().enumerate() {
            self.save_vol(st, v, &artifacts::de(k))?;
            names.push(artifacts::de(k));
        }
        write_json(&self.out(artifacts::SEEDS), &phantom::seeds(spec))?;
        write_json(&self.out(artifacts::TRUTH), &phantom::truth(spec))?;
        write_json(&self.out(artifacts::EXPERT_SCORES), &phantom::truth_scores(spec))?;
        write_json(&self.out(artifacts::CONTRACTION_LABELS), &phantom::contraction_labels(spec))?;
        names.extend([artifacts::SEEDS, artifacts::TRUTH, artifacts::EXPERT_SCORES, artifacts::CONTRACTION_LABELS].map(String::from));
        Ok(names)
    }

    fn sync(&self) -> Result<Vec<String>> {
        let st = Stage::Sync;
        let cine = self.load_cine(st)?;
        let de = self.de_paths();
        if de.is_empty() {
            return Err(PipelineError::MissingArtifact { stage: st, producer: "phantom".into(), path: self.out(&artifacts::de(0)) });
        }
        let r = average_cine_window(&cine, self.config.window_start_ms, self.config.window_len_ms).map_err(stage_err(st))?;
        self.save_vol(st, &r.averaged_cine, artifacts::CINE_AVG)?;
        let mut names = vec![artifacts::CINE_AVG.to_string()];
        let mut overlap = Vec::new();
        for (k, p) in de.iter().enumerate() {
            let v = load_volume(&self.need(st, p.clone(), "phantom")?).map_err(stage_err(st))?;
            let a = scan_align(&v, cine.geometry()).map_err(stage_err(st))?;
            overlap.push(a.overlap_count());
            self.save_vol(st, &a.volume, &artifacts::de_aligned(k))?;
            names.push(artifacts::de_aligned(k));
        }
        write_json(&self.out(artifacts::SYNC), &SyncArtifact { window: r.record(), de_overlap_voxels: overlap })?;
        names.push(artifacts::SYNC.into());
        Ok(names)
    }

    /// Registration box from the mean seeds over all seeded slices.
    pub fn registration_roi(&self, seeds: &SeedConfig, dims: [usize; 3]) -> Result<RoiBox> {
        if seeds.slices.is_empty() {
            return Err(PipelineError::Config("seed file has no slices".into()));
        }
        let n = seeds.slices.len() as f64;
        let p0 = seeds.slices.iter().fold(Point::new(0.0, 0.0), |a, s| a + s.p0) * (1.0 / n);
        let d = seeds.slices.iter().map(|s| s.p0.dist(s.p1)).sum::<f64>() / n;
        RoiBox::from_seeds(p0, p0 + Point::new(d, 0.0), self.config.roi_factor, dims).map_err(stage_err(Stage::Register))
    }

    fn register(&self) -> Result<Vec<String>> {
        let st = Stage::Register;
        let cine_avg = self.load_vol(st, artifacts::CINE_AVG, "sync")?;
        let seeds = self.load_seeds(st)?;
        let roi = self.registration_roi(&seeds, cine_avg.dims())?;
        let n = self.n_exams(st, "sync", artifacts::de_aligned)?;
        let opts = RegistrationOptions {
            presmooth_px: self.config.presmooth_px,
            coarse_presmooth_px: self.config.coarse_presmooth_px,
            ..RegistrationOptions::default()
        };
        let mut names = Vec::new();
        let mut records = Vec::new();
        for k in 0..n {
            let de = self.load_vol(st, &artifacts::de_aligned(k), "sync")?;
            let r = register(&de, &cine_avg, &roi, &opts).map_err(stage_err(st))?;
            info!("exam {k}: {:?} cost {:.6}", r.transform, r.cost);
            write_json(&self.out(&artifacts::transform(k)), &r.record())?;
            let moved = apply_transform(&de, &r.transform, roi.center).map_err(stage_err(st))?;
            self.save_vol(st, &moved.volume, &artifacts::de_registered(k))?;
            names.extend([artifacts::transform(k), artifacts::de_registered(k)]);
            records.push(r.record());
        }
        write_json(&self.out(artifacts::REGISTRATION), &RegistrationSummary { roi, exams: records })?;
        names.push(artifacts::REGISTRATION.into());
        Ok(names)
    }

    fn slice_image(v: &Volume, k: usize) -> Grid2<f64> {
        let [nx, ny, _] = v.dims();
        Grid2::from_vec(nx, ny, v.slice(k).iter().map(|&x| x as f64).collect())
    }

    /// Segments one slice of `image` with explicit seeds.
    pub fn segment_preview(&self, image: &Volume, seeds: &SliceSeeds) -> Result<SegmentPreview> {
        let st = Stage::Segment;
        let nz = image.dims()[2];
        if seeds.slice >= nz {
            return Err(PipelineError::Config(format!("slice {} outside a {nz}-slice volume", seeds.slice)));
        }
        let pixel_mm = image.geometry().spacing[0];
        let img = Self::slice_image(image, seeds.slice);
        let endo = segment_endo(&img, seeds, &self.config.snake, pixel_mm).map_err(stage_err(st))?;
        let epi = segment_epi(&endo, seeds, &self.config.snake, pixel_mm).map_err(stage_err(st))?;
        Ok(SegmentPreview {
            contours: SliceContours {
                slice: seeds.slice,
                lambda: endo.lambda,
                repaired: endo.repaired || epi.repaired,
                endo: endo.contour.points,
                epi: epi.contour.points,
            },
            roi: endo.roi,
            filtered: endo.filtered,
        })
    }

    fn segment_volume(&self, image: &Volume, seeds: &SeedConfig) -> Result<ContourSet> {
        use rayon::prelude::*;
        let mut jobs: Vec<&SliceSeeds> = seeds.slices.iter().collect();
        jobs.sort_by_key(|s| s.slice);
        let slices: Result<Vec<SliceContours>> = jobs.par_iter().map(|s| self.segment_preview(image, s).map(|p| p.contours)).collect();
        Ok(ContourSet { slices: slices? })
    }

    fn segment(&self) -> Result<Vec<String>> {
        let st = Stage::Segment;
        let cine_avg = self.load_vol(st, artifacts::CINE_AVG, "sync")?;
        let seeds = self.load_seeds(st)?;
        let pixel_mm = cine_avg.geometry().spacing[0];
        seeds.validate(cine_avg.dims(), pixel_mm).map_err(stage_err(st))?;
        write_json(&self.out(artifacts::CONTOURS), &self.segment_volume(&cine_avg, &seeds)?)?;
        let cine = self.load_cine(st)?;
        let ed = cine.phases().get(self.config.ed_phase).ok_or_else(|| {
            PipelineError::Config(format!("ed_phase {} outside a {}-phase cine", self.config.ed_phase, cine.len()))
        })?;
        write_json(&self.out(artifacts::CONTOURS_ED), &self.segment_volume(ed, &seeds)?)?;
        Ok(vec![artifacts::CONTOURS.into(), artifacts::CONTOURS_ED.into()])
    }

    fn sectorize_one(&self, contours: &str, volume: &str, legend: &str) -> Result<()> {
        let st = Stage::Sectorize;
        let cs: ContourSet = self.load_json(st, self.out(contours), "segment")?;
        let seeds = self.load_seeds(st)?;
        let geometry = self.load_vol(st, artifacts::CINE_AVG, "sync")?.geometry().clone();
        let map = SectorMap::build(&geometry, &cs, |k| seeds.get(k).map(|s| s.p1)).map_err(stage_err(st))?;
        self.save_vol(st, &map.to_volume().map_err(stage_err(st))?, volume)?;
        write_json(&self.out(legend), &map.legend())
    }

    fn sectorize(&self) -> Result<Vec<String>> {
        self.sectorize_one(artifacts::CONTOURS, artifacts::SECTORS, artifacts::SECTORS_LEGEND)?;
        self.sectorize_one(artifacts::CONTOURS_ED, artifacts::SECTORS_ED, artifacts::SECTORS_ED_LEGEND)?;
        Ok([artifacts::SECTORS, artifacts::SECTORS_LEGEND, artifacts::SECTORS_ED, artifacts::SECTORS_ED_LEGEND].map(String::from).to_vec())
    }

    pub fn load_sectors(&self, stage: Stage, volume: &str, legend: &str) -> Result<SectorMap> {
        let v = self.load_vol(stage, volume, "sectorize")?;
        let l: SectorLegend = self.load_json(stage, self.out(legend), "sectorize")?;
        SectorMap::from_volume(&v, &l).map_err(stage_err(stage))
    }

    fn mie(&self) -> Result<Vec<String>> {
        let st = Stage::Mie;
        let map = self.load_sectors(st, artifacts::SECTORS, artifacts::SECTORS_LEGEND)?;
        let n = self.n_exams(st, "register", artifacts::de_registered)?;
        let mut grids = Vec::new();
        let mut names = Vec::new();
        for k in 0..n {
            let de = self.load_vol(st, &artifacts::de_registered(k), "register")?;
            let (g, _) = score_exam(&de, &map, &FcmOptions::default(), self.config.layer_threshold).map_err(stage_err(st))?;
            write_json(&self.out(&artifacts::scores_exam(k)), &g)?;
            names.push(artifacts::scores_exam(k));
            grids.push(g);
        }
        let combined = combine_exams(&grids).map_err(stage_err(st))?;
        write_json(&self.out(artifacts::SCORES), &combined)?;
        write_json(&self.out(artifacts::MIE_REPORT), &mie_report(&combined))?;
        names.extend([artifacts::SCORES.into(), artifacts::MIE_REPORT.into()]);
        Ok(names)
    }

    fn pamm(&self) -> Result<Vec<String>> {
        let st = Stage::Pamm;
        let cine = self.load_cine(st)?;
        let map = self.load_sectors(st, artifacts::SECTORS_ED, artifacts::SECTORS_ED_LEGEND)?;
        let maps = compute_maps(&cine, &cavity_regions(&map)).map_err(stage_err(st))?;
        let mut names = Vec::new();
        for (name, v) in maps.volumes().map_err(stage_err(st))? {
            self.save_vol(st, &v, &artifacts::map(name))?;
            names.push(artifacts::map(name));
        }
        let seg = segmental_function(&maps, &map).map_err(stage_err(st))?;
        write_json(&self.out(artifacts::SEGMENTAL), &seg)?;
        names.push(artifacts::SEGMENTAL.into());
        Ok(names)
    }

    /// Reloads the parametric maps written by `pamm`.
    pub fn load_maps(&self, stage: Stage, n_phases: usize) -> Result<ParametricMaps> {
        let mut v: Vec<Volume> = Vec::with_capacity(5);
        for name in artifacts::MAP_NAMES {
            v.push(self.load_vol(stage, &artifacts::map(name), "pamm")?);
        }
        let mut it = v.into_iter();
        let mut next = || it.next().expect("five maps");
        ParametricMaps::from_volumes(next(), next(), next(), next(), next(), n_phases).map_err(stage_err(stage))
    }

    fn optional_json<T: DeserializeOwned>(&self, configured: &Option<PathBuf>, default: &str) -> Result<Option<T>> {
        let path = configured.clone().unwrap_or_else(|| self.out(default));
        if path.exists() {
            read_json(&path).map(Some)
        } else if configured.is_some() {
            Err(PipelineError::Config(format!("configured file {} does not exist", path.display())))
        } else {
            Ok(None)
        }
    }

    /// Builds the report and writes `report.json` and `report.txt`.
    pub fn report(&self) -> Result<(Report, Vec<String>)> {
        let st = Stage::Report;
        let sync: SyncArtifact = self.load_json(st, self.out(artifacts::SYNC), "sync")?;
        let registration: RegistrationSummary = self.load_json(st, self.out(artifacts::REGISTRATION), "register")?;
        let contours: ContourSet = self.load_json(st, self.out(artifacts::CONTOURS), "segment")?;
        let scores: ScoreGrid = self.load_json(st, self.out(artifacts::SCORES), "mie")?;
        let mie: MieReport = self.load_json(st, self.out(artifacts::MIE_REPORT), "mie")?;
        let function: SegmentalFunction = self.load_json(st, self.out(artifacts::SEGMENTAL), "pamm")?;
        let expert: Option<ScoreGrid> = self.optional_json(&self.config.expert_scores, artifacts::EXPERT_SCORES)?;
        let labels: Option<ContractionLabels> = self.optional_json(&self.config.contraction_labels, artifacts::CONTRACTION_LABELS)?;

        let agreement = match expert {
            Some(e) => {
                let excluded = self.config.excluded_slices.clone();
                let confusion = build_confusion(&scores, &e, &excluded).map_err(stage_err(st))?;
                let exact = confusion.agreement(0).map_err(stage_err(st))?;
                let within_one = confusion.agreement(1).map_err(stage_err(st))?;
                Some(AgreementSummary { excluded_slices: excluded, confusion, exact, within_one })
            }
            None => None,
        };
        let atr_by_tier = labels.map(|l| tier_means(&function, &l));
        let report = Report {
            sync,
            registration,
            segmentation: contours.slices.iter().map(|s| SliceSegmentation { slice: s.slice, lambda: s.lambda, repaired: s.repaired }).collect(),
            mie,
            agreement,
            function,
            atr_by_tier,
        };
        write_json(&self.out(artifacts::REPORT_JSON), &report)?;
        let txt = self.out(artifacts::REPORT_TXT);
        write_atomic(&txt, render_text(&report).as_bytes()).map_err(|source| PipelineError::Io { path: txt, source })?;
        Ok((report, vec![artifacts::REPORT_JSON.into(), artifacts::REPORT_TXT.into()]))
    }

    /// Sector labels of one slice of the working (window-averaged) volume.
    pub fn sector_slice(&self, slice: usize) -> Result<SliceSectors> {
        let cs: ContourSet = self.load_json(Stage::Sectorize, self.out(artifacts::CONTOURS), "segment")?;
        let seeds = self.load_seeds(Stage::Sectorize)?;
        let c = cs.get(slice).ok_or_else(|| PipelineError::Config(format!("no contours for slice {slice}")))?;
        let s = seeds.get(slice).ok_or_else(|| PipelineError::Config(format!("no seeds for slice {slice}")))?;
        let [nx, ny, _] = self.load_vol(Stage::Sectorize, artifacts::CINE_AVG, "sync")?.dims();
        sectorize(slice, &c.endo, &c.epi, s.p1, nx, ny).map_err(stage_err(Stage::Sectorize))
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean ATR per wall-motion tier, per-slice ordering and the ANOVA pairs.
pub fn tier_means(function: &SegmentalFunction, labels: &ContractionLabels) -> TierMeans {
    use crate::stats::Contraction::{AD, H, N};
    let mut values = Vec::new();
    let mut ordered = Vec::new();
    for s in &function.slices {
        let mut per = [Vec::new(), Vec::new(), Vec::new()];
        for f in &s.segments {
            if let (Some(atr), true, Some(tier)) = (f.atr, f.reliable, labels.get(s.slice, f.segment)) {
                values.push((atr, tier));
                per[tier as usize].push(atr);
            }
        }
        let m: Vec<Option<f64>> = [N, H, AD].iter().map(|&t| mean(&per[t as usize])).collect();
        if let [Some(n), Some(h), Some(ad)] = m[..] {
            if n > h && h > ad {
                ordered.push(s.slice);
            }
        }
    }
    let tier = |t| mean(&values.iter().filter(|v| v.1 == t).map(|v| v.0).collect::<Vec<_>>());
    TierMeans { n: tier(N), h: tier(H), ad: tier(AD), ordered_slices: ordered, comparisons: group_by_contraction(&values) }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn render_text(r: &Report) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "cmrfusion report");
    let _ = writeln!(s, "\ncine phases averaged: {:?} (window {} ms + {} ms)", r.sync.window.selected_phase_indices, r.sync.window.window_start_ms, r.sync.window.window_len_ms);
    let _ = writeln!(s, "\nregistration (ROI x {}..{}, y {}..{})", r.registration.roi.x0, r.registration.roi.x1, r.registration.roi.y0, r.registration.roi.y1);
    for (k, e) in r.registration.exams.iter().enumerate() {
        let t = &e.transform;
        let _ = writeln!(s, "  exam {k}: tx {:+.3} mm  ty {:+.3} mm  theta {:+.3} deg  dz {:+}  cost {:.6}", t.tx_mm, t.ty_mm, t.theta_deg, t.dz_slices, e.cost);
    }
    let _ = writeln!(s, "\nsegmentation");
    for g in &r.segmentation {
        let _ = writeln!(s, "  slice {:2}: lambda {}{}", g.slice, g.lambda, if g.repaired { " (repaired)" } else { "" });
    }
    let _ = writeln!(
        s,
        "\ninfarct extent: {} enhanced segments, {} non-enhanced, {} transmural sub-segments",
        r.mie.de_segments, r.mie.nde_segments, r.mie.transmural_sub_segments
    );
    if let Some(a) = &r.agreement {
        let _ = writeln!(s, "agreement with reference: exact {}/{} ({:.1}%), within one grade {}/{} ({:.1}%)",
            a.exact.numerator, a.exact.denominator, 100.0 * a.exact.fraction(),
            a.within_one.numerator, a.within_one.denominator, 100.0 * a.within_one.fraction());
        let _ = writeln!(s, "  confusion (rows reference 0..4, columns automatic 0..4)");
        for row in &a.confusion.counts {
            let _ = writeln!(s, "  {}", row.iter().map(|c| format!("{c:5}")).collect::<String>());
        }
    }
    if let Some(t) = &r.atr_by_tier {
        let _ = writeln!(s, "\nATR mean by wall motion: N {}  H {}  AD {}", fmt_opt(t.n), fmt_opt(t.h), fmt_opt(t.ad));
        let _ = writeln!(s, "  slices ordered N > H > AD: {}/{}", t.ordered_slices.len(), r.function.slices.len());
        for c in &t.comparisons {
            match &c.anova {
                Some(a) => { let _ = writeln!(s, "  {:?} vs {:?}: F {:.3}  p {:.3e}", c.first, c.second, a.f, a.p); }
                None => { let _ = writeln!(s, "  {:?} vs {:?}: {}", c.first, c.second, c.note.as_deref().unwrap_or("not computed")); }
            }
        }
    }
    s
}
