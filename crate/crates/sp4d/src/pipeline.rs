//! Pipeline orchestration: the full decomposition run and the directory-
//! level commands behind the CLI.
//!
//! Stage order: validate, ground removal, per-frame DBSCAN, scene flow
//! (loaded or estimated), superpoint generation, similarity clustering,
//! canonical/deformation/motion initialization, export. Per-frame and
//! per-pair work is distributed over a local rayon pool; results are
//! always collected positionally, so outputs are byte-identical for every
//! worker count.

use std::path::Path;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::dbscan::{dbscan_points, DbscanParams};
use crate::error::{Result, Sp4dError};
use crate::flow::{estimate_flow, load_flow};
use crate::ground::remove_ground;
use crate::instance::{
    aggregate_similarity, build_deformation, classify_motion, cluster_superpoints, compute_stats,
    instance_mean_flow, select_canonical, DeformationTrack, InstanceDecomposition, Motion,
    MotionClass, SuperPointStats,
};
use crate::io::{
    read_frames, read_labels, write_flow_dir, write_labels, write_manifest, LabelData, LabelRow,
    Manifest, ManifestInstance,
};
use crate::model::{
    validate_sequence, ClusterLabeling, FlowField, FrameSequence, Point3, GROUND, NOISE,
};
use crate::superpoint::{generate_superpoints, SuperPoint4D};
use crate::synth::{evaluate, generate_scene, EvalReport, SceneSpec};

/// Where the decomposition gets its flow from.
pub enum FlowSource<'a> {
    /// Use this field as-is (validated against the sequence).
    Provided(FlowField),
    /// Load `flow_%04d.csv` files from a directory.
    LoadDir(&'a Path),
    /// Run the built-in estimator on non-ground points.
    Estimate,
}

/// Everything one decomposition run produces.
pub struct Decomposition {
    pub seq: FrameSequence,
    pub clusters: ClusterLabeling,
    pub flow: FlowField,
    pub superpoints: Vec<SuperPoint4D>,
    pub stats: Vec<SuperPointStats>,
    pub instances: InstanceDecomposition,
    pub canonical: Vec<usize>,
    pub tracks: Vec<DeformationTrack>,
    pub motion: Vec<MotionClass>,
}

/// Run a closure inside a rayon pool of `threads` workers (0 = automatic).
pub fn run_with_threads<T, F>(threads: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Sp4dError::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

/// Full decomposition of a raw sequence.
pub fn decompose(
    mut seq: FrameSequence,
    cfg: &PipelineConfig,
    flow_source: FlowSource,
) -> Result<Decomposition> {
    let report = validate_sequence(&seq);
    if !report.is_ok() {
        let v = &report.violations[0];
        return Err(Sp4dError::format(
            "sequence",
            format!(
                "{} violations, first: {:?} at frame {:?} point {:?}",
                report.violations.len(),
                v.kind,
                v.frame,
                v.point
            ),
        ));
    }
    let t_count = seq.len();

    // ground removal, one frame per task
    let masks: Vec<Vec<bool>> = seq
        .frames
        .par_iter()
        .map(|frame| {
            let mut ground_cfg = cfg.ground.clone();
            ground_cfg.seed = cfg.ground.seed.wrapping_add(frame.t as u64);
            remove_ground(frame, &ground_cfg).map(|(mask, _)| mask)
        })
        .collect::<Result<Vec<_>>>()?;
    for (frame, mask) in seq.frames.iter_mut().zip(masks) {
        frame.ground_mask = Some(mask);
    }

    // per-frame clustering over non-ground points
    let params = DbscanParams {
        eps: cfg.dbscan_eps_m,
        min_pts: cfg.dbscan_min_pts,
    };
    let labels: Vec<Vec<i32>> = seq
        .frames
        .par_iter()
        .map(|frame| {
            let keep = frame.non_ground_indices();
            let pts: Vec<Point3> = keep.iter().map(|&i| frame.points[i]).collect();
            let compact = dbscan_points(&pts, &params)?;
            let mut full = vec![GROUND; frame.len()];
            for (label, &i) in compact.into_iter().zip(keep.iter()) {
                full[i] = label;
            }
            Ok(full)
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = ClusterLabeling::new(labels);

    // scene flow
    let flow = match flow_source {
        FlowSource::Provided(f) => {
            f.validate(&seq)?;
            f
        }
        FlowSource::LoadDir(dir) => load_flow(dir, &seq)?,
        FlowSource::Estimate => {
            let slices: Vec<Vec<Point3>> = (0..t_count.saturating_sub(1))
                .into_par_iter()
                .map(|t| {
                    let src_keep = seq.frames[t].non_ground_indices();
                    let dst_keep = seq.frames[t + 1].non_ground_indices();
                    let mut slice = vec![[0.0f64; 3]; seq.frames[t].len()];
                    if !src_keep.is_empty() && !dst_keep.is_empty() {
                        let src: Vec<Point3> =
                            src_keep.iter().map(|&i| seq.frames[t].points[i]).collect();
                        let dst: Vec<Point3> = dst_keep
                            .iter()
                            .map(|&i| seq.frames[t + 1].points[i])
                            .collect();
                        let est = estimate_flow(&src, &dst, &cfg.flow)?;
                        for (f, &i) in est.flow.into_iter().zip(src_keep.iter()) {
                            slice[i] = f;
                        }
                    }
                    Ok(slice)
                })
                .collect::<Result<Vec<_>>>()?;
            FlowField::new(slices)
        }
    };

    // 4D superpoints
    let superpoints = generate_superpoints(&seq, &clusters, &flow, &cfg.matching)?;

    // per-superpoint statistics
    let stats: Vec<SuperPointStats> = superpoints
        .par_iter()
        .map(|sp| compute_stats(sp, &seq, &flow))
        .collect::<Result<Vec<_>>>()?;

    // similarity clustering into instances
    let similarity = aggregate_similarity(&stats, cfg.sim_lambda, cfg.sim_sigma_m);
    let instances = cluster_superpoints(&similarity, &superpoints, &cfg.instance_params())?;

    // canonical frames, deformation tracks, motion classes
    let canonical: Vec<usize> = instances.instances.iter().map(select_canonical).collect();
    let tracks: Vec<DeformationTrack> = instances
        .instances
        .iter()
        .zip(canonical.iter())
        .map(|(inst, &t_star)| build_deformation(inst, &stats, &superpoints, flow.len(), t_star))
        .collect::<Result<Vec<_>>>()?;
    let motion: Vec<MotionClass> = instances
        .instances
        .iter()
        .map(|inst| classify_motion(inst, &stats, &superpoints, cfg.motion_tau_dyn_m))
        .collect();

    Ok(Decomposition {
        seq,
        clusters,
        flow,
        superpoints,
        stats,
        instances,
        canonical,
        tracks,
        motion,
    })
}

impl Decomposition {
    /// Per-frame per-point output rows.
    pub fn label_data(&self) -> LabelData {
        let t_count = self.seq.len();
        let mut frames: Vec<Vec<LabelRow>> = (0..t_count)
            .map(|t| {
                self.clusters.labels[t]
                    .iter()
                    .map(|&l| {
                        let motion = match l {
                            GROUND => 'G',
                            NOISE => 'N',
                            _ => 'S', // instance letter patched below
                        };
                        LabelRow {
                            superpoint: l.min(-1) as i64, // clusters overwritten below
                            instance: l.min(-1) as i64,
                            motion,
                        }
                    })
                    .collect()
            })
            .collect();
        for sp in &self.superpoints {
            let inst = self.instances.instance_of[sp.id];
            let letter = match self.motion[inst].class {
                Motion::Dynamic => 'D',
                Motion::Static => 'S',
            };
            for t in sp.t1..=sp.t2 {
                for &i in sp.members_at(t).expect("alive") {
                    frames[t][i] = LabelRow {
                        superpoint: sp.id as i64,
                        instance: inst as i64,
                        motion: letter,
                    };
                }
            }
        }
        LabelData { frames }
    }

    /// Ids of instances classified dynamic.
    pub fn dynamic_instances(&self) -> Vec<usize> {
        self.motion
            .iter()
            .enumerate()
            .filter(|(_, m)| m.class == Motion::Dynamic)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-instance dynamic flags, indexed by instance id.
    pub fn dynamic_flags(&self) -> Vec<bool> {
        self.motion
            .iter()
            .map(|m| m.class == Motion::Dynamic)
            .collect()
    }

    pub fn manifest(&self, cfg: &PipelineConfig) -> Manifest {
        let instances = self
            .instances
            .instances
            .iter()
            .map(|inst| {
                let track = &self.tracks[inst.id];
                ManifestInstance {
                    id: inst.id,
                    lifespan: [inst.t1, inst.t2],
                    motion: match self.motion[inst.id].class {
                        Motion::Dynamic => "dynamic".into(),
                        Motion::Static => "static".into(),
                    },
                    mean_flow_magnitude: self.motion[inst.id].mean_flow_magnitude,
                    canonical_frame: track.canonical_frame,
                    canonical_point_count: track.canonical_points.len(),
                    deformation: track
                        .steps
                        .iter()
                        .map(|s| [s.t as f64, s.delta_x[0], s.delta_x[1], s.delta_x[2]])
                        .collect(),
                }
            })
            .collect();
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.to_map(),
            frame_count: self.seq.len(),
            instances,
        }
    }

    /// Instance mean flow at frame t (exposed for tests and tools).
    pub fn instance_flow(&self, inst: usize, t: usize) -> Option<Point3> {
        instance_mean_flow(
            &self.instances.instances[inst],
            &self.stats,
            &self.superpoints,
            t,
        )
    }
}

/// `decompose` directory command: read frames, run, write labels and
/// manifest into `out_dir`.
pub fn decompose_dir(
    in_dir: &Path,
    flow_dir: Option<&Path>,
    out_dir: &Path,
    cfg: &PipelineConfig,
    threads: usize,
) -> Result<Manifest> {
    run_with_threads(threads, || {
        let seq = read_frames(in_dir)?;
        let source = match flow_dir {
            Some(dir) => FlowSource::LoadDir(dir),
            None if cfg.flow_estimate => FlowSource::Estimate,
            None => {
                return Err(Sp4dError::Config(
                    "no --flow directory given and flow.estimate = false".into(),
                ))
            }
        };
        let dec = decompose(seq, cfg, source)?;
        let labels = dec.label_data();
        std::fs::create_dir_all(out_dir)?;
        write_labels(out_dir, &labels)?;
        let manifest = dec.manifest(cfg);
        write_manifest(&out_dir.join("manifest.json"), &manifest, &labels)?;
        Ok(manifest)
    })
}

/// `flow` directory command: estimate (or re-emit loaded) flow per pair.
pub fn flow_dir_cmd(
    in_dir: &Path,
    copy_from: Option<&Path>,
    out_dir: &Path,
    cfg: &PipelineConfig,
    threads: usize,
) -> Result<usize> {
    run_with_threads(threads, || {
        let mut seq = read_frames(in_dir)?;
        // ground removal so flow lives on non-ground points
        let masks: Vec<Vec<bool>> = seq
            .frames
            .par_iter()
            .map(|frame| {
                let mut ground_cfg = cfg.ground.clone();
                ground_cfg.seed = cfg.ground.seed.wrapping_add(frame.t as u64);
                remove_ground(frame, &ground_cfg).map(|(mask, _)| mask)
            })
            .collect::<Result<Vec<_>>>()?;
        for (frame, mask) in seq.frames.iter_mut().zip(masks) {
            frame.ground_mask = Some(mask);
        }
        let flow = match copy_from {
            Some(dir) => load_flow(dir, &seq)?,
            None => {
                if !cfg.flow_estimate {
                    return Err(Sp4dError::Config(
                        "flow.estimate = false and no source directory to copy from".into(),
                    ));
                }
                let slices: Vec<Vec<Point3>> = (0..seq.len().saturating_sub(1))
                    .into_par_iter()
                    .map(|t| {
                        let src_keep = seq.frames[t].non_ground_indices();
                        let dst_keep = seq.frames[t + 1].non_ground_indices();
                        let mut slice = vec![[0.0f64; 3]; seq.frames[t].len()];
                        if !src_keep.is_empty() && !dst_keep.is_empty() {
                            let src: Vec<Point3> =
                                src_keep.iter().map(|&i| seq.frames[t].points[i]).collect();
                            let dst: Vec<Point3> = dst_keep
                                .iter()
                                .map(|&i| seq.frames[t + 1].points[i])
                                .collect();
                            let est = estimate_flow(&src, &dst, &cfg.flow)?;
                            for (f, &i) in est.flow.into_iter().zip(src_keep.iter()) {
                                slice[i] = f;
                            }
                        }
                        Ok(slice)
                    })
                    .collect::<Result<Vec<_>>>()?;
                FlowField::new(slices)
            }
        };
        write_flow_dir(out_dir, &flow)?;
        Ok(flow.len())
    })
}

/// `init` command: rebuild superpoints/instances from label files and
/// recompute canonical frames, deformation tracks and motion classes.
pub fn init_dir(
    in_dir: &Path,
    labels_dir: &Path,
    flow_dir: Option<&Path>,
    out_dir: &Path,
    cfg: &PipelineConfig,
    threads: usize,
) -> Result<Manifest> {
    run_with_threads(threads, || {
        let mut seq = read_frames(in_dir)?;
        let label_data = read_labels(labels_dir)?;
        if label_data.frames.len() != seq.len() {
            return Err(Sp4dError::format(
                labels_dir.display().to_string(),
                format!(
                    "labels cover {} frames, sequence has {}",
                    label_data.frames.len(),
                    seq.len()
                ),
            ));
        }
        for (t, rows) in label_data.frames.iter().enumerate() {
            if rows.len() != seq.frames[t].len() {
                return Err(Sp4dError::format(
                    labels_dir.display().to_string(),
                    format!(
                        "frame {t}: {} label rows for {} points",
                        rows.len(),
                        seq.frames[t].len()
                    ),
                ));
            }
        }
        // ground mask from the label files
        for (frame, rows) in seq.frames.iter_mut().zip(label_data.frames.iter()) {
            frame.ground_mask = Some(rows.iter().map(|r| r.motion == 'G').collect());
        }

        let flow = match flow_dir {
            Some(dir) => load_flow(dir, &seq)?,
            None if cfg.flow_estimate => {
                let slices: Vec<Vec<Point3>> = (0..seq.len().saturating_sub(1))
                    .into_par_iter()
                    .map(|t| {
                        let src_keep = seq.frames[t].non_ground_indices();
                        let dst_keep = seq.frames[t + 1].non_ground_indices();
                        let mut slice = vec![[0.0f64; 3]; seq.frames[t].len()];
                        if !src_keep.is_empty() && !dst_keep.is_empty() {
                            let src: Vec<Point3> =
                                src_keep.iter().map(|&i| seq.frames[t].points[i]).collect();
                            let dst: Vec<Point3> = dst_keep
                                .iter()
                                .map(|&i| seq.frames[t + 1].points[i])
                                .collect();
                            let est = estimate_flow(&src, &dst, &cfg.flow)?;
                            for (f, &i) in est.flow.into_iter().zip(src_keep.iter()) {
                                slice[i] = f;
                            }
                        }
                        Ok(slice)
                    })
                    .collect::<Result<Vec<_>>>()?;
                FlowField::new(slices)
            }
            None => {
                return Err(Sp4dError::Config(
                    "no --flow directory given and flow.estimate = false".into(),
                ))
            }
        };

        let (superpoints, instances) = rebuild_from_labels(&label_data)?;
        let stats: Vec<SuperPointStats> = superpoints
            .par_iter()
            .map(|sp| compute_stats(sp, &seq, &flow))
            .collect::<Result<Vec<_>>>()?;
        let canonical: Vec<usize> = instances.instances.iter().map(select_canonical).collect();
        let tracks: Vec<DeformationTrack> = instances
            .instances
            .iter()
            .zip(canonical.iter())
            .map(|(inst, &t_star)| {
                build_deformation(inst, &stats, &superpoints, flow.len(), t_star)
            })
            .collect::<Result<Vec<_>>>()?;
        let motion: Vec<MotionClass> = instances
            .instances
            .iter()
            .map(|inst| classify_motion(inst, &stats, &superpoints, cfg.motion_tau_dyn_m))
            .collect();

        let dec = Decomposition {
            seq,
            clusters: ClusterLabeling::new(
                label_data
                    .frames
                    .iter()
                    .map(|rows| rows.iter().map(|r| r.superpoint.max(-2) as i32).collect())
                    .collect(),
            ),
            flow,
            superpoints,
            stats,
            instances,
            canonical,
            tracks,
            motion,
        };
        let labels = dec.label_data();
        std::fs::create_dir_all(out_dir)?;
        write_labels(out_dir, &labels)?;
        let manifest = dec.manifest(cfg);
        write_manifest(&out_dir.join("manifest.json"), &manifest, &labels)?;
        Ok(manifest)
    })
}

/// Reconstruct superpoints and instances from per-point label rows.
fn rebuild_from_labels(labels: &LabelData) -> Result<(Vec<SuperPoint4D>, InstanceDecomposition)> {
    use std::collections::BTreeMap;
    let mut sp_frames: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    let mut sp_instance: BTreeMap<usize, i64> = BTreeMap::new();
    for (t, rows) in labels.frames.iter().enumerate() {
        for (i, r) in rows.iter().enumerate() {
            if r.superpoint >= 0 {
                sp_frames
                    .entry(r.superpoint as usize)
                    .or_default()
                    .entry(t)
                    .or_default()
                    .push(i);
                let prev = sp_instance.insert(r.superpoint as usize, r.instance);
                if let Some(p) = prev {
                    if p != r.instance {
                        return Err(Sp4dError::Invariant(format!(
                            "superpoint {} assigned to instances {p} and {}",
                            r.superpoint, r.instance
                        )));
                    }
                }
            }
        }
    }
    let mut superpoints = Vec::new();
    let mut id_map: BTreeMap<usize, usize> = BTreeMap::new();
    for (raw_id, frames) in &sp_frames {
        let t1 = *frames.keys().next().expect("non-empty");
        let t2 = *frames.keys().last().expect("non-empty");
        if frames.len() != t2 - t1 + 1 {
            return Err(Sp4dError::Invariant(format!(
                "superpoint {raw_id} has a lifespan gap in the label files"
            )));
        }
        let id = superpoints.len();
        id_map.insert(*raw_id, id);
        superpoints.push(SuperPoint4D {
            id,
            parent: None,
            t1,
            t2,
            members: (t1..=t2).map(|t| frames[&t].clone()).collect(),
        });
    }
    // instances from the instance column
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (raw_id, inst) in &sp_instance {
        if *inst < 0 {
            return Err(Sp4dError::Invariant(format!(
                "superpoint {raw_id} has sentinel instance id {inst}"
            )));
        }
        groups.entry(*inst).or_default().push(id_map[raw_id]);
    }
    let mut instance_of = vec![0usize; superpoints.len()];
    let mut instances = Vec::new();
    for (new_id, (_, sps)) in groups.iter().enumerate() {
        for &s in sps {
            instance_of[s] = new_id;
        }
        instances.push(crate::instance::rebuild_instance(new_id, sps, &superpoints));
    }
    Ok((
        superpoints,
        InstanceDecomposition {
            instance_of,
            instances,
        },
    ))
}

/// `synth` command: generate a scene into a directory (frames, ground-
/// truth labels, ground-truth flow).
pub fn synth_dir(spec: &SceneSpec, out_dir: &Path) -> Result<(usize, usize)> {
    let (seq, truth) = generate_scene(spec)?;
    std::fs::create_dir_all(out_dir)?;
    for frame in &seq.frames {
        crate::io::write_frame_csv(
            &out_dir.join(format!("frame_{:04}.csv", frame.t)),
            &frame.points,
        )?;
    }
    let label_data = LabelData {
        frames: truth
            .labels
            .labels
            .iter()
            .map(|frame_labels| {
                frame_labels
                    .iter()
                    .map(|&l| {
                        if l >= 0 {
                            LabelRow {
                                superpoint: l as i64,
                                instance: l as i64,
                                motion: if truth.object_dynamic[l as usize] {
                                    'D'
                                } else {
                                    'S'
                                },
                            }
                        } else {
                            LabelRow {
                                superpoint: -2,
                                instance: -2,
                                motion: 'G',
                            }
                        }
                    })
                    .collect()
            })
            .collect(),
    };
    write_labels(out_dir, &label_data)?;
    write_flow_dir(out_dir, &truth.flow)?;
    Ok((seq.len(), seq.frames.iter().map(|f| f.len()).sum()))
}

/// `eval` command: compare predicted labels (and flow when present on
/// both sides) against ground-truth labels.
pub fn eval_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let pred = read_labels(pred_dir)?;
    let gt = read_labels(gt_dir)?;
    if pred.frames.len() != gt.frames.len() {
        return Err(Sp4dError::format(
            pred_dir.display().to_string(),
            format!(
                "prediction covers {} frames, truth {}",
                pred.frames.len(),
                gt.frames.len()
            ),
        ));
    }
    // reconstruct a SceneTruth from the ground-truth label files
    let gt_labeling = gt.instance_labeling();
    let n_objects = gt
        .frames
        .iter()
        .flat_map(|rows| rows.iter())
        .filter(|r| r.instance >= 0)
        .map(|r| r.instance + 1)
        .max()
        .unwrap_or(0) as usize;
    let mut object_dynamic = vec![false; n_objects];
    for rows in &gt.frames {
        for r in rows {
            if r.instance >= 0 && r.motion == 'D' {
                object_dynamic[r.instance as usize] = true;
            }
        }
    }

    let has_flow = |dir: &Path| dir.join("flow_0000.csv").exists();
    let (pred_flow, gt_flow) = if has_flow(pred_dir) && has_flow(gt_dir) {
        (
            Some(read_flow_rows(pred_dir, &pred)?),
            Some(read_flow_rows(gt_dir, &gt)?),
        )
    } else {
        (None, None)
    };

    let truth = crate::synth::SceneTruth {
        labels: gt_labeling,
        flow: gt_flow.unwrap_or_else(|| FlowField::new(Vec::new())),
        object_dynamic,
    };
    evaluate(
        &pred.instance_labeling(),
        &pred.dynamic_flags(),
        &truth,
        pred_flow.as_ref(),
    )
}

fn read_flow_rows(dir: &Path, labels: &LabelData) -> Result<FlowField> {
    let mut slices = Vec::new();
    for t in 0..labels.frames.len().saturating_sub(1) {
        let path = dir.join(format!("flow_{t:04}.csv"));
        if !path.exists() {
            return Err(Sp4dError::format(
                path.display().to_string(),
                format!("missing flow file for frame pair {t}"),
            ));
        }
        let rows = crate::flow::read_flow_file(&path)?;
        if rows.len() != labels.frames[t].len() {
            return Err(Sp4dError::format(
                path.display().to_string(),
                format!(
                    "row count {} does not match frame point count {}",
                    rows.len(),
                    labels.frames[t].len()
                ),
            ));
        }
        slices.push(rows);
    }
    Ok(FlowField::new(slices))
}

/// Report of the regularizer gradient check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RegCheckReport {
    pub loss2d: f64,
    pub grad2d_max_rel_err: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss3d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad3d_max_rel_err: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
const GRAD_CHECK_STEP: f64 = 1e-6;

/// Evaluate both regularizers on the given inputs and compare their
/// analytic gradients against central finite differences.
pub fn reg_check(
    flow_map: &crate::reg::FlowMap2D,
    image: &crate::reg::Image2D,
    velocity: Option<&crate::reg::VelocityField3D>,
    cfg: &PipelineConfig,
) -> Result<RegCheckReport> {
    let norm = cfg.reg_flow_norm;
    let lambda = cfg.reg_lambda_edge;
    let loss2d = crate::reg::smooth2d_loss(flow_map, image, lambda, norm)?;
    let analytic2d: Vec<f64> = crate::reg::smooth2d_grad(flow_map, image, lambda, norm)?
        .into_iter()
        .flatten()
        .collect();
    let mut work = flow_map.clone();
    let mut numeric2d = Vec::with_capacity(analytic2d.len());
    for idx in 0..work.h * work.w {
        for ch in 0..2 {
            let orig = work.data()[idx][ch];
            work.data_mut()[idx][ch] = orig + GRAD_CHECK_STEP;
            let plus = crate::reg::smooth2d_loss(&work, image, lambda, norm)?;
            work.data_mut()[idx][ch] = orig - GRAD_CHECK_STEP;
            let minus = crate::reg::smooth2d_loss(&work, image, lambda, norm)?;
            work.data_mut()[idx][ch] = orig;
            numeric2d.push((plus - minus) / (2.0 * GRAD_CHECK_STEP));
        }
    }
    let err2d = crate::reg::max_relative_gradient_error(&analytic2d, &numeric2d);

    let (loss3d, err3d) = match velocity {
        None => (None, None),
        Some(v) => {
            let loss = crate::reg::smooth3d_loss(v)?;
            let analytic: Vec<f64> = crate::reg::smooth3d_grad(v)?
                .into_iter()
                .flatten()
                .collect();
            let mut work = v.clone();
            let mut numeric = Vec::with_capacity(analytic.len());
            for i in 0..work.velocities.len() {
                for a in 0..3 {
                    let orig = work.velocities[i][a];
                    work.velocities[i][a] = orig + GRAD_CHECK_STEP;
                    let plus = crate::reg::smooth3d_loss(&work)?;
                    work.velocities[i][a] = orig - GRAD_CHECK_STEP;
                    let minus = crate::reg::smooth3d_loss(&work)?;
                    work.velocities[i][a] = orig;
                    numeric.push((plus - minus) / (2.0 * GRAD_CHECK_STEP));
                }
            }
            (
                Some(loss),
                Some(crate::reg::max_relative_gradient_error(&analytic, &numeric)),
            )
        }
    };

    let pass = err2d <= GRAD_CHECK_TOLERANCE
        && err3d.is_none_or(|e| e <= GRAD_CHECK_TOLERANCE);
    Ok(RegCheckReport {
        loss2d,
        grad2d_max_rel_err: err2d,
        loss3d,
        grad3d_max_rel_err: err3d,
        tolerance: GRAD_CHECK_TOLERANCE,
        pass,
    })
}
