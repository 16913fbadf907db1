//! Whole-run configuration and the multi-stage drivers shared by the
//! command-line tool: batch placement, batch synthesis and the
//! self-contained demo.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{
    boundaries_to_geojson, build_boundary_map, extract_curbs, select_parking_candidates, BoundaryPolyline, CurbRuleConfig,
    GrowConfig, ParkingCandidate,
};
use crate::cloud::{Frame, PointCloud};
use crate::dataset::{build_sample, NormConfig, SplitSpec};
use crate::digest::sha256_file;
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::kernels::{sgc_forward, SgcArch, SgcParams, SgcTrace};
use crate::metrics::{evaluate, plane_stats, staged_loss, LossConfig, MetricsReport, PLANE_NEIGHBORS};
use crate::placement::{
    canonicalize_vehicle, load_dims_table, load_mesh, place_vehicle, procedural_car, GroundPlane, PlacementConfig,
    PoseRecord, TriangleMesh, VehicleDims,
};
use crate::ply::{write_ply, WriteOptions};
use crate::postprocess::{merge_completion, MergeConfig, GENERATED, PROVENANCE};
use crate::raycast::{crop_scene, synthesize_pair, CropConfig, ScenePairRaw};
use crate::rng::SeededRng;
use crate::scanstrip::FilterConfig;
use crate::synthetic::{street_profile, StreetScanner};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Length of the synthetic street along x (meters).
    pub street_length: f64,
    pub curb_offset: f64,
    pub curb_height: f64,
    pub sidewalk_width: f64,
    pub range_noise: f64,
    pub slope: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            street_length: 24.0,
            curb_offset: 5.0,
            curb_height: 0.15,
            sidewalk_width: 3.0,
            range_noise: 0.005,
            slope: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub filter: FilterConfig,
    pub grow: GrowConfig,
    pub curb: CurbRuleConfig,
    pub candidates_per_polyline: usize,
    pub placement: PlacementConfig,
    pub vehicle: VehicleDims,
    pub crop: CropConfig,
    pub norm: NormConfig,
    pub augment: bool,
    pub split: Option<SplitSpec>,
    pub model: SgcArch,
    pub loss: LossConfig,
    pub fscore_threshold: f64,
    pub merge: MergeConfig,
    pub demo: DemoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            filter: FilterConfig::default(),
            grow: GrowConfig::default(),
            curb: CurbRuleConfig::default(),
            candidates_per_polyline: 2,
            placement: PlacementConfig::default(),
            vehicle: VehicleDims::default(),
            crop: CropConfig::default(),
            norm: NormConfig::default(),
            augment: false,
            split: None,
            model: SgcArch::full(),
            loss: LossConfig::default(),
            fscore_threshold: crate::metrics::DEFAULT_FSCORE_THRESHOLD,
            merge: MergeConfig::default(),
            demo: DemoConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a JSON document; absent keys take defaults, unknown keys are
    /// rejected by name.
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.curb.validate()?;
        self.placement.validate()?;
        self.vehicle.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.merge.validate()?;
        if !(self.fscore_threshold > 0.0) {
            return Err(Error::invalid("fscore_threshold must be positive"));
        }
        if self.candidates_per_polyline == 0 {
            return Err(Error::invalid("candidates_per_polyline must be at least 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::digest::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Canonicalized vehicle meshes keyed by id, in id order.
#[derive(Debug, Clone)]
pub struct VehicleLibrary {
    pub models: Vec<(String, TriangleMesh, VehicleDims)>,
}

impl VehicleLibrary {
    /// Every `*.obj` under `dir`, id = file stem. Per-model dimensions come
    /// from `dims.json` in the same directory when present.
    pub fn load(dir: impl AsRef<Path>, default_dims: &VehicleDims) -> Result<VehicleLibrary> {
        let dir = dir.as_ref();
        let table_path = dir.join("dims.json");
        let table = if table_path.exists() {
            load_dims_table(&table_path)?
        } else {
            Default::default()
        };
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
            .collect();
        files.sort();
        let mut models = Vec::new();
        for f in files {
            let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let dims = table.get(&id).copied().unwrap_or(*default_dims);
            let mesh = canonicalize_vehicle(&load_mesh(&f)?, &dims, None)
                .map_err(|e| Error::invalid(format!("model {id}: {e}")))?;
            models.push((id, mesh, dims));
        }
        if models.is_empty() {
            return Err(Error::EmptyInput("no .obj vehicle models found"));
        }
        Ok(VehicleLibrary { models })
    }

    pub fn procedural(dims: &VehicleDims, rng: &SeededRng) -> Result<VehicleLibrary> {
        let mesh = procedural_car(dims, &mut rng.derive("procedural-car"))?;
        Ok(VehicleLibrary {
            models: vec![("procedural-car".into(), mesh, *dims)],
        })
    }

    pub fn get(&self, id: &str) -> Result<&(String, TriangleMesh, VehicleDims)> {
        self.models
            .iter()
            .find(|m| m.0 == id)
            .ok_or_else(|| Error::invalid(format!("unknown vehicle model {id:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub candidate: ParkingCandidate,
    pub pose: PoseRecord,
    pub ground: GroundPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSet {
    pub seed: u64,
    pub placements: Vec<Placement>,
    /// Candidates where no reliable ground was found.
    pub skipped: usize,
}

/// Samples parking candidates on every polyline and places a randomly
/// chosen model at each. Candidates without reliable ground are skipped.
pub fn place_all(
    cloud: &PointCloud,
    polylines: &[BoundaryPolyline],
    library: &VehicleLibrary,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PlacementSet> {
    let root = SeededRng::new(seed);
    let candidates = select_parking_candidates(polylines, &cfg.curb, cfg.candidates_per_polyline, &root.derive("candidates"));
    let mut placements = Vec::new();
    let mut skipped = 0;
    for (i, cand) in candidates.iter().enumerate() {
        let rng = root.derive(format!("vehicle-{i}"));
        let pick = rng.derive("model").gen_range(0..library.models.len());
        let (id, _, dims) = &library.models[pick];
        match place_vehicle(cloud, cand, id, dims, &cfg.placement, &rng) {
            Ok((pose, ground)) => placements.push(Placement {
                candidate: *cand,
                pose: pose.to_record(),
                ground,
            }),
            Err(Error::NoReliableGround(msg)) => {
                log::warn!("candidate {i} skipped: {msg}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PlacementSet { seed, placements, skipped })
}

/// Crops around one placed vehicle and removes the points it occludes.
pub fn synthesize_one(cloud: &PointCloud, placement: &Placement, library: &VehicleLibrary, crop: &CropConfig, rng: &SeededRng) -> Result<ScenePairRaw> {
    let pose = placement.pose.to_pose()?;
    let (_, mesh, _) = library.get(&pose.mesh_id)?;
    let posed = pose.apply_mesh(mesh);
    let location = Point3::from(pose.translation);
    let (center, complete) = crop_scene(cloud, &location, crop, &mut rng.derive("crop"))?;
    synthesize_pair(complete, &posed, center, pose)
}

/// Scene id used on disk for the `i`-th placement.
pub fn scene_id(i: usize) -> String {
    format!("scene{i:04}")
}

/// Street cloud as scanned by the demo's analytic scanner, filtered and
/// oriented.
pub fn demo_street(cfg: &PipelineConfig) -> Result<PointCloud> {
    let d = &cfg.demo;
    let scanner = StreetScanner {
        surfaces: street_profile(d.curb_offset, d.curb_height, d.sidewalk_width),
        slope: d.slope,
        range_noise: d.range_noise,
        seed: cfg.seed,
        ..StreetScanner::default()
    };
    let cols = (d.street_length / scanner.column_spacing).round() as usize;
    scanner.filtered_cloud(0.0, cols, &cfg.filter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSummary {
    pub points: usize,
    pub within_5cm: f64,
    pub within_10cm: f64,
    pub line_fallback: usize,
    pub histogram: Vec<usize>,
    pub bin_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub street_points: usize,
    pub boundaries: usize,
    pub pose: PoseRecord,
    pub removed: usize,
    pub flagged: bool,
    pub metrics: MetricsReport,
    pub staged_loss: f64,
    pub trace: SgcTrace,
    pub merged_points: usize,
    pub generated_kept: usize,
    pub plane: Option<PlaneSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoOutcome {
    pub report: DemoReport,
    /// File name → SHA-256 of every artifact written.
    pub checksums: BTreeMap<String, String>,
}

/// Synthetic street → curbs → one parked procedural car → occlusion pair →
/// normalized sample → network forward pass → metrics → merge.
pub fn run_demo(cfg: &PipelineConfig, out_dir: impl AsRef<Path>) -> Result<DemoOutcome> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let root = SeededRng::new(cfg.seed).derive("demo");

    let street = demo_street(cfg)?;
    let curbs = extract_curbs(&street, &cfg.grow, &cfg.curb)?;
    let polylines = build_boundary_map(&curbs, &street.points);
    let library = VehicleLibrary::procedural(&cfg.vehicle, &root)?;
    let set = place_all(&street, &polylines, &library, cfg, cfg.seed)?;
    if set.placements.is_empty() {
        return Err(Error::EmptyInput("demo street produced no placeable parking candidate"));
    }
    let pick = root.derive("pick").gen_range(0..set.placements.len());
    let placement = &set.placements[pick];
    let raw = synthesize_one(&street, placement, &library, &cfg.crop, &root.derive("synthesize"))?;
    let id = scene_id(0);
    let pair = build_sample(&raw, &id, &cfg.norm, &root.derive(&id))?;

    let params = SgcParams::init(cfg.model, cfg.seed)?;
    let sgc = sgc_forward(&pair.gapped, &params, &mut root.derive("forward"))?;
    let metrics = evaluate(&sgc.output, &pair.complete, cfg.fscore_threshold)?;
    let loss = staged_loss(&sgc.coarse, &sgc.output, &pair.complete, &cfg.loss)?;

    let gap_world = pair.to_world(&pair.gapped);
    let pred_world = pair.to_world(&sgc.output);
    let merged = merge_completion(&gap_world, &pred_world, &cfg.merge)?;
    let prov = &merged.extra(PROVENANCE).expect("merge sets provenance").values;
    let generated = merged.filter(|i| prov[i] == GENERATED);
    let plane = if generated.is_empty() {
        None
    } else {
        let s = plane_stats(&generated, &raw.complete.positions_only(), PLANE_NEIGHBORS)?;
        Some(PlaneSummary {
            points: s.distances.len(),
            within_5cm: s.within_5cm,
            within_10cm: s.within_10cm,
            line_fallback: s.line_fallback.len(),
            histogram: s.histogram,
            bin_width: s.bin_width,
        })
    };

    let report = DemoReport {
        seed: cfg.seed,
        street_points: street.len(),
        boundaries: polylines.len(),
        pose: placement.pose.clone(),
        removed: raw.removed,
        flagged: raw.flagged,
        metrics,
        staged_loss: loss,
        trace: sgc.trace,
        merged_points: merged.len(),
        generated_kept: generated.len(),
        plane,
    };

    let opts = WriteOptions::default();
    let mut files: Vec<(&str, PathBuf)> = Vec::new();
    let mut add = |name: &'static str| {
        let p = out.join(name);
        files.push((name, p.clone()));
        p
    };
    write_ply(add("complete.ply"), &pair.complete, opts)?;
    write_ply(add("gap.ply"), &pair.gapped, opts)?;
    write_ply(add("coarse.ply"), &sgc.coarse, opts)?;
    write_ply(add("prediction.ply"), &sgc.output, opts)?;
    write_ply(add("merged.ply"), &merged, opts)?;
    write_json(add("boundaries.json"), &boundaries_to_geojson(&polylines))?;
    write_json(add("placements.json"), &set)?;
    write_json(add("report.json"), &report)?;
    let mut checksums = BTreeMap::new();
    for (name, path) in files {
        checksums.insert(name.to_string(), sha256_file(&path)?);
    }
    debug_assert!(pair.complete.frame == Frame::Normalized);
    Ok(DemoOutcome { report, checksums })
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}
