//! File formats: frame input (CSV or binary PLY), label output, flow
//! files, the run manifest, and the small CSV grids consumed by the
//! regularizer checker. All writes are atomic (temp file + rename).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, Sp4dError};
use crate::model::{ClusterLabeling, FlowField, FrameSequence, Point3, PointFrame};

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------
// frames

/// Read `frame_%04d.csv` / `frame_%04d.ply` files from a directory.
/// Frame indices must be contiguous from zero.
pub fn read_frames(dir: &Path) -> Result<FrameSequence> {
    let mut found: BTreeMap<usize, PathBuf> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| {
        Sp4dError::format(dir.display().to_string(), format!("cannot read directory: {e}"))
    })?;
    for entry in entries {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(idx) = parse_indexed_name(name, "frame_", &["csv", "ply"]) {
            if let Some(old) = found.insert(idx, path.clone()) {
                return Err(Sp4dError::format(
                    path.display().to_string(),
                    format!("frame {idx} appears twice ({} and {name})", old.display()),
                ));
            }
        }
    }
    if found.is_empty() {
        return Err(Sp4dError::format(
            dir.display().to_string(),
            "no frame_NNNN.csv or frame_NNNN.ply files found",
        ));
    }
    let mut frames = Vec::with_capacity(found.len());
    for (expected, (idx, path)) in found.iter().enumerate() {
        if *idx != expected {
            return Err(Sp4dError::format(
                dir.display().to_string(),
                format!("frame indices not contiguous: expected {expected}, found {idx}"),
            ));
        }
        let points = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => read_frame_csv(path)?,
            Some("ply") => read_frame_ply(path)?,
            _ => unreachable!("extension filtered above"),
        };
        frames.push(PointFrame::new(*idx, points));
    }
    Ok(FrameSequence::new(frames))
}

fn parse_indexed_name(name: &str, prefix: &str, exts: &[&str]) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    let (digits, ext) = rest.split_once('.')?;
    if digits.len() != 4 || !exts.contains(&ext) {
        return None;
    }
    digits.parse().ok()
}

pub fn read_frame_csv(path: &Path) -> Result<Vec<Point3>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y,z" => {}
        Some((_, h)) => {
            return Err(Sp4dError::format(
                name,
                format!("expected header 'x,y,z', got '{}'", h.trim()),
            ))
        }
        None => return Err(Sp4dError::format(name, "empty frame file")),
    }
    let mut points = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Sp4dError::format(
                name,
                format!("line {}: expected 3 columns, got {}", lineno + 1, cols.len()),
            ));
        }
        let mut p = [0.0f64; 3];
        for (k, c) in cols.iter().enumerate() {
            p[k] = c
                .trim()
                .parse()
                .map_err(|e| Sp4dError::format(&name, format!("line {}: {e}", lineno + 1)))?;
        }
        points.push(p);
    }
    Ok(points)
}

pub fn write_frame_csv(path: &Path, points: &[Point3]) -> Result<()> {
    let mut s = String::from("x,y,z\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    atomic_write(path, s.as_bytes())
}

/// Binary little-endian PLY with float32 x/y/z vertex properties. Extra
/// scalar properties are skipped by stride.
pub fn read_frame_ply(path: &Path) -> Result<Vec<Point3>> {
    let name = path.display().to_string();
    let mut file = std::fs::File::open(path)?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;

    let header_end = find_header_end(&data).ok_or_else(|| {
        Sp4dError::format(&name, "missing end_header")
    })?;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| Sp4dError::format(&name, "header is not ASCII"))?;

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut offset = 0usize;
    let mut stride = 0usize;
    let mut xyz_offsets: [Option<usize>; 3] = [None; 3];
    let mut format_ok = false;
    for line in header.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["ply"] | ["comment", ..] | ["end_header"] => {}
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => {
                return Err(Sp4dError::format(
                    &name,
                    format!("unsupported PLY format '{other}' (need binary_little_endian)"),
                ))
            }
            ["element", "vertex", n] => {
                in_vertex = true;
                vertex_count = Some(n.parse().map_err(|e| {
                    Sp4dError::format(&name, format!("bad vertex count: {e}"))
                })?);
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(Sp4dError::format(&name, "list properties unsupported"))
            }
            ["property", ty, prop] if in_vertex => {
                let size = scalar_size(ty).ok_or_else(|| {
                    Sp4dError::format(&name, format!("unknown property type '{ty}'"))
                })?;
                if let Some(axis) = match *prop {
                    "x" => Some(0),
                    "y" => Some(1),
                    "z" => Some(2),
                    _ => None,
                } {
                    if *ty != "float" {
                        return Err(Sp4dError::format(
                            &name,
                            format!("vertex {prop} must be float32, got {ty}"),
                        ));
                    }
                    xyz_offsets[axis] = Some(offset);
                }
                offset += size;
                stride = offset;
            }
            _ => {}
        }
    }
    if !format_ok {
        return Err(Sp4dError::format(&name, "missing format line"));
    }
    let n = vertex_count.ok_or_else(|| Sp4dError::format(&name, "no vertex element"))?;
    let [Some(ox), Some(oy), Some(oz)] = xyz_offsets else {
        return Err(Sp4dError::format(&name, "vertex element lacks x/y/z"));
    };

    let body = &data[header_end..];
    if body.len() < n * stride {
        return Err(Sp4dError::format(
            &name,
            format!(
                "truncated body: {} bytes for {} vertices of stride {}",
                body.len(),
                n,
                stride
            ),
        ));
    }
    let read_f32 = |at: usize| -> f32 {
        f32::from_le_bytes([body[at], body[at + 1], body[at + 2], body[at + 3]])
    };
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * stride;
        points.push([
            read_f32(base + ox) as f64,
            read_f32(base + oy) as f64,
            read_f32(base + oz) as f64,
        ]);
    }
    Ok(points)
}

fn find_header_end(data: &[u8]) -> Option<usize> {
    let needle = b"end_header\n";
    data.windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
}

fn scalar_size(ty: &str) -> Option<usize> {
    match ty {
        "char" | "uchar" | "int8" | "uint8" => Some(1),
        "short" | "ushort" | "int16" | "uint16" => Some(2),
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => Some(4),
        "double" | "float64" => Some(8),
        _ => None,
    }
}

pub fn write_frame_ply(path: &Path, points: &[Point3]) -> Result<()> {
    let mut bytes = Vec::with_capacity(128 + points.len() * 12);
    bytes.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
            points.len()
        )
        .as_bytes(),
    );
    for p in points {
        for a in 0..3 {
            bytes.extend_from_slice(&(p[a] as f32).to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------
// flow

pub fn write_flow_dir(dir: &Path, flow: &FlowField) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, slice) in flow.slices.iter().enumerate() {
        let mut s = String::from("fx,fy,fz\n");
        for f in slice {
            s.push_str(&format!("{},{},{}\n", f[0], f[1], f[2]));
        }
        atomic_write(&dir.join(format!("flow_{t:04}.csv")), s.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// labels

/// Per-point output row of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRow {
    pub superpoint: i64,
    pub instance: i64,
    pub motion: char,
}

/// Per-frame label rows for the whole sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelData {
    pub frames: Vec<Vec<LabelRow>>,
}

impl LabelData {
    /// Instance labels as a ClusterLabeling (sentinels pass through).
    pub fn instance_labeling(&self) -> ClusterLabeling {
        ClusterLabeling::new(
            self.frames
                .iter()
                .map(|rows| rows.iter().map(|r| r.instance as i32).collect())
                .collect(),
        )
    }

    /// Dynamic flags per instance id, sized to the largest id + 1.
    pub fn dynamic_flags(&self) -> Vec<bool> {
        let max_id = self
            .frames
            .iter()
            .flat_map(|rows| rows.iter())
            .filter(|r| r.instance >= 0)
            .map(|r| r.instance)
            .max()
            .unwrap_or(-1);
        let mut flags = vec![false; (max_id + 1) as usize];
        for rows in &self.frames {
            for r in rows {
                if r.instance >= 0 && r.motion == 'D' {
                    flags[r.instance as usize] = true;
                }
            }
        }
        flags
    }
}

pub fn write_labels(dir: &Path, labels: &LabelData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, rows) in labels.frames.iter().enumerate() {
        let mut s = String::from("point_index,superpoint_id,instance_id,motion\n");
        for (i, r) in rows.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{}\n", r.superpoint, r.instance, r.motion));
        }
        atomic_write(&dir.join(format!("labels_{t:04}.csv")), s.as_bytes())?;
    }
    Ok(())
}

pub fn read_labels(dir: &Path) -> Result<LabelData> {
    let mut found: BTreeMap<usize, PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| {
        Sp4dError::format(dir.display().to_string(), format!("cannot read directory: {e}"))
    })? {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(idx) = parse_indexed_name(name, "labels_", &["csv"]) {
                found.insert(idx, path);
            }
        }
    }
    if found.is_empty() {
        return Err(Sp4dError::format(
            dir.display().to_string(),
            "no labels_NNNN.csv files found",
        ));
    }
    let mut frames = Vec::with_capacity(found.len());
    for (expected, (idx, path)) in found.iter().enumerate() {
        if *idx != expected {
            return Err(Sp4dError::format(
                dir.display().to_string(),
                format!("label indices not contiguous: expected {expected}, found {idx}"),
            ));
        }
        frames.push(read_label_file(path)?);
    }
    Ok(LabelData { frames })
}

fn read_label_file(path: &Path) -> Result<Vec<LabelRow>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "point_index,superpoint_id,instance_id,motion" => {}
        Some((_, h)) => {
            return Err(Sp4dError::format(
                name,
                format!("unexpected header '{}'", h.trim()),
            ))
        }
        None => return Err(Sp4dError::format(name, "empty label file")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Sp4dError::format(
                name,
                format!("line {}: expected 4 columns, got {}", lineno + 1, cols.len()),
            ));
        }
        let idx: usize = cols[0]
            .trim()
            .parse()
            .map_err(|e| Sp4dError::format(&name, format!("line {}: {e}", lineno + 1)))?;
        if idx != rows.len() {
            return Err(Sp4dError::format(
                name,
                format!("line {}: point_index {idx} out of order", lineno + 1),
            ));
        }
        let superpoint: i64 = cols[1]
            .trim()
            .parse()
            .map_err(|e| Sp4dError::format(&name, format!("line {}: {e}", lineno + 1)))?;
        let instance: i64 = cols[2]
            .trim()
            .parse()
            .map_err(|e| Sp4dError::format(&name, format!("line {}: {e}", lineno + 1)))?;
        let motion = cols[3].trim();
        if !matches!(motion, "S" | "D" | "G" | "N") {
            return Err(Sp4dError::format(
                name,
                format!("line {}: motion must be S|D|G|N, got '{motion}'", lineno + 1),
            ));
        }
        rows.push(LabelRow {
            superpoint,
            instance,
            motion: motion.chars().next().expect("non-empty"),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub frame_count: usize,
    pub instances: Vec<ManifestInstance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestInstance {
    pub id: usize,
    pub lifespan: [usize; 2],
    pub motion: String,
    pub mean_flow_magnitude: f64,
    pub canonical_frame: usize,
    pub canonical_point_count: usize,
    /// Per-frame translation offsets `[t, dx, dy, dz]`.
    pub deformation: Vec<[f64; 4]>,
}

/// Cross-check a manifest against label files, then write it. The check
/// guards the invariant that the manifest and the per-frame labels
/// describe the same decomposition.
pub fn write_manifest(path: &Path, manifest: &Manifest, labels: &LabelData) -> Result<()> {
    cross_check(manifest, labels)?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Sp4dError::Invariant(format!("manifest serialization failed: {e}")))?;
    atomic_write(path, json.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Sp4dError::format(path.display().to_string(), e.to_string()))
}

fn cross_check(manifest: &Manifest, labels: &LabelData) -> Result<()> {
    if manifest.frame_count != labels.frames.len() {
        return Err(Sp4dError::Invariant(format!(
            "manifest says {} frames, labels have {}",
            manifest.frame_count,
            labels.frames.len()
        )));
    }
    // per-instance per-frame counts from the label files
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut motions: BTreeMap<usize, char> = BTreeMap::new();
    for (t, rows) in labels.frames.iter().enumerate() {
        for r in rows {
            if r.instance >= 0 {
                *counts
                    .entry(r.instance as usize)
                    .or_default()
                    .entry(t)
                    .or_insert(0) += 1;
                let prev = motions.insert(r.instance as usize, r.motion);
                if let Some(p) = prev {
                    if p != r.motion {
                        return Err(Sp4dError::Invariant(format!(
                            "instance {} has mixed motion letters {p} and {}",
                            r.instance, r.motion
                        )));
                    }
                }
            }
        }
    }
    if counts.len() != manifest.instances.len() {
        return Err(Sp4dError::Invariant(format!(
            "labels contain {} instances, manifest {}",
            counts.len(),
            manifest.instances.len()
        )));
    }
    for mi in &manifest.instances {
        let per_frame = counts.get(&mi.id).ok_or_else(|| {
            Sp4dError::Invariant(format!("instance {} missing from labels", mi.id))
        })?;
        let t_first = *per_frame.keys().next().expect("non-empty");
        let t_last = *per_frame.keys().last().expect("non-empty");
        if [t_first, t_last] != mi.lifespan {
            return Err(Sp4dError::Invariant(format!(
                "instance {}: lifespan {:?} in manifest, [{t_first}, {t_last}] in labels",
                mi.id, mi.lifespan
            )));
        }
        let canonical_in_labels = per_frame.get(&mi.canonical_frame).copied().unwrap_or(0);
        if canonical_in_labels != mi.canonical_point_count {
            return Err(Sp4dError::Invariant(format!(
                "instance {}: canonical count {} in manifest, {} in labels",
                mi.id, mi.canonical_point_count, canonical_in_labels
            )));
        }
        let expected_motion = match motions.get(&mi.id) {
            Some('D') => "dynamic",
            Some('S') => "static",
            other => {
                return Err(Sp4dError::Invariant(format!(
                    "instance {}: unexpected motion letter {other:?}",
                    mi.id
                )))
            }
        };
        if mi.motion != expected_motion {
            return Err(Sp4dError::Invariant(format!(
                "instance {}: motion '{}' in manifest, '{}' in labels",
                mi.id, mi.motion, expected_motion
            )));
        }
        let span: Vec<usize> = mi.deformation.iter().map(|d| d[0] as usize).collect();
        let want: Vec<usize> = (mi.lifespan[0]..=mi.lifespan[1]).collect();
        if span != want {
            return Err(Sp4dError::Invariant(format!(
                "instance {}: deformation frames {:?} do not cover lifespan {:?}",
                mi.id, span, mi.lifespan
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// regularizer-check grids

/// `y,x,u,v` CSV -> dense flow map; the grid must be complete.
pub fn read_flowmap_csv(path: &Path) -> Result<crate::reg::FlowMap2D> {
    let name = path.display().to_string();
    let rows = read_grid_csv(path, &["y", "x", "u", "v"])?;
    let (h, w) = grid_dims(&rows, &name)?;
    let mut data = vec![None; h * w];
    for (lineno, r) in rows {
        let (y, x) = (r[0] as usize, r[1] as usize);
        if data[y * w + x].replace([r[2], r[3]]).is_some() {
            return Err(Sp4dError::format(
                &name,
                format!("line {lineno}: duplicate pixel ({y},{x})"),
            ));
        }
    }
    let data: Option<Vec<[f64; 2]>> = data.into_iter().collect();
    let data = data.ok_or_else(|| Sp4dError::format(&name, "incomplete pixel grid"))?;
    crate::reg::FlowMap2D::new(h, w, data)
}

/// `y,x,c0[,c1,...]` CSV -> multi-channel image in [0,1].
pub fn read_image_csv(path: &Path) -> Result<crate::reg::Image2D> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim().to_string(),
        None => return Err(Sp4dError::format(name, "empty file")),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "y" || cols[1] != "x" {
        return Err(Sp4dError::format(
            name,
            format!("expected header 'y,x,c0[,c1,...]', got '{header}'"),
        ));
    }
    let channels = cols.len() - 2;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_f64_row(line, cols.len(), &name, lineno + 1)?;
        rows.push((lineno + 1, vals));
    }
    let (h, w) = grid_dims(&rows, &name)?;
    let mut data = vec![None; h * w];
    for (lineno, r) in rows {
        let (y, x) = (r[0] as usize, r[1] as usize);
        if data[y * w + x].replace(r[2..].to_vec()).is_some() {
            return Err(Sp4dError::format(
                &name,
                format!("line {lineno}: duplicate pixel ({y},{x})"),
            ));
        }
    }
    let mut flat = Vec::with_capacity(h * w * channels);
    for cell in data {
        let cell = cell.ok_or_else(|| Sp4dError::format(&name, "incomplete pixel grid"))?;
        flat.extend(cell);
    }
    crate::reg::Image2D::new(h, w, channels, flat)
}

/// `px,py,pz,vx,vy,vz` CSV -> positions and velocities.
pub fn read_velocity_csv(path: &Path) -> Result<(Vec<Point3>, Vec<Point3>)> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "px,py,pz,vx,vy,vz" => {}
        Some((_, h)) => {
            return Err(Sp4dError::format(
                name,
                format!("expected header 'px,py,pz,vx,vy,vz', got '{}'", h.trim()),
            ))
        }
        None => return Err(Sp4dError::format(name, "empty file")),
    }
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_f64_row(line, 6, &name, lineno + 1)?;
        positions.push([vals[0], vals[1], vals[2]]);
        velocities.push([vals[3], vals[4], vals[5]]);
    }
    Ok((positions, velocities))
}

fn read_grid_csv(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let expected = header.join(",");
    match lines.next() {
        Some((_, h)) if h.trim() == expected => {}
        Some((_, h)) => {
            return Err(Sp4dError::format(
                name,
                format!("expected header '{expected}', got '{}'", h.trim()),
            ))
        }
        None => return Err(Sp4dError::format(name, "empty file")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows.push((lineno + 1, parse_f64_row(line, header.len(), &name, lineno + 1)?));
    }
    Ok(rows)
}

fn parse_f64_row(line: &str, n: usize, name: &str, lineno: usize) -> Result<Vec<f64>> {
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != n {
        return Err(Sp4dError::format(
            name,
            format!("line {lineno}: expected {n} columns, got {}", cols.len()),
        ));
    }
    cols.iter()
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|e| Sp4dError::format(name, format!("line {lineno}: {e}")))
        })
        .collect()
}

fn grid_dims(rows: &[(usize, Vec<f64>)], name: &str) -> Result<(usize, usize)> {
    if rows.is_empty() {
        return Err(Sp4dError::format(name, "no data rows"));
    }
    let mut h = 0usize;
    let mut w = 0usize;
    for (lineno, r) in rows {
        if r[0] < 0.0 || r[1] < 0.0 || r[0].fract() != 0.0 || r[1].fract() != 0.0 {
            return Err(Sp4dError::format(
                name,
                format!("line {lineno}: y,x must be non-negative integers"),
            ));
        }
        h = h.max(r[0] as usize + 1);
        w = w.max(r[1] as usize + 1);
    }
    Ok((h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_0000.csv");
        let points = vec![[0.125, -3.5, 2.0], [1.0 / 3.0, 0.1, -0.7]];
        write_frame_csv(&path, &points).unwrap();
        assert_eq!(read_frame_csv(&path).unwrap(), points);
    }

    #[test]
    fn frame_csv_bad_column_count_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_0000.csv");
        std::fs::write(&path, "x,y,z\n1,2,3\n4,5\n").unwrap();
        let err = read_frame_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn ply_round_trip_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_0000.ply");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Point3> = (0..100)
            .map(|_| {
                [
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-5.0..5.0),
                ]
            })
            .collect();
        write_frame_ply(&path, &points).unwrap();
        let back = read_frame_ply(&path).unwrap();
        assert_eq!(back.len(), points.len());
        for (a, b) in points.iter().zip(back.iter()) {
            for k in 0..3 {
                assert_eq!(a[k] as f32, b[k] as f32);
            }
        }
    }

    #[test]
    fn ply_skips_extra_properties() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_0000.ply");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar intensity\nend_header\n",
        );
        for (p, i) in [([1.0f32, 2.0, 3.0], 7u8), ([4.0, 5.0, 6.0], 9)] {
            for v in p {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.push(i);
        }
        std::fs::write(&path, bytes).unwrap();
        let points = read_frame_ply(&path).unwrap();
        assert_eq!(points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn frames_dir_mixed_and_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_csv(&dir.path().join("frame_0000.csv"), &[[0.0; 3]]).unwrap();
        write_frame_ply(&dir.path().join("frame_0001.ply"), &[[1.0, 0.0, 0.0]]).unwrap();
        let seq = read_frames(dir.path()).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.frames[1].points[0], [1.0, 0.0, 0.0]);

        // gap breaks contiguity
        write_frame_csv(&dir.path().join("frame_0003.csv"), &[[0.0; 3]]).unwrap();
        let err = read_frames(dir.path()).unwrap_err();
        assert!(err.to_string().contains("not contiguous"), "{err}");
    }

    fn sample_labels() -> LabelData {
        LabelData {
            frames: vec![
                vec![
                    LabelRow { superpoint: 0, instance: 0, motion: 'D' },
                    LabelRow { superpoint: -2, instance: -2, motion: 'G' },
                    LabelRow { superpoint: -1, instance: -1, motion: 'N' },
                ],
                vec![
                    LabelRow { superpoint: 0, instance: 0, motion: 'D' },
                    LabelRow { superpoint: 0, instance: 0, motion: 'D' },
                    LabelRow { superpoint: -2, instance: -2, motion: 'G' },
                ],
            ],
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = sample_labels();
        write_labels(dir.path(), &labels).unwrap();
        assert_eq!(read_labels(dir.path()).unwrap(), labels);
    }

    fn sample_manifest() -> Manifest {
        Manifest {
            version: "0.1.0".into(),
            config_hash: "deadbeef".into(),
            config: BTreeMap::new(),
            frame_count: 2,
            instances: vec![ManifestInstance {
                id: 0,
                lifespan: [0, 1],
                motion: "dynamic".into(),
                mean_flow_magnitude: 0.5,
                canonical_frame: 1,
                canonical_point_count: 2,
                deformation: vec![[0.0, -0.5, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
            }],
        }
    }

    #[test]
    fn manifest_cross_check_passes_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = sample_manifest();
        write_manifest(&path, &manifest, &sample_labels()).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.instances[0].canonical_point_count, 2);
        assert_eq!(back.frame_count, 2);
    }

    #[test]
    fn manifest_cross_check_catches_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = sample_manifest();
        manifest.instances[0].canonical_point_count = 5;
        let err = write_manifest(&dir.path().join("m.json"), &manifest, &sample_labels());
        assert!(err.is_err());
    }

    #[test]
    fn manifest_cross_check_catches_lifespan_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = sample_manifest();
        manifest.instances[0].lifespan = [0, 0];
        assert!(write_manifest(&dir.path().join("m.json"), &manifest, &sample_labels()).is_err());
    }

    #[test]
    fn flowmap_and_image_grids() {
        let dir = tempfile::tempdir().unwrap();
        let fpath = dir.path().join("flow.csv");
        std::fs::write(&fpath, "y,x,u,v\n0,0,1,2\n0,1,3,4\n1,0,5,6\n1,1,7,8\n").unwrap();
        let fm = read_flowmap_csv(&fpath).unwrap();
        assert_eq!((fm.h, fm.w), (2, 2));
        assert_eq!(fm.at(1, 0), [5.0, 6.0]);

        let ipath = dir.path().join("img.csv");
        std::fs::write(&ipath, "y,x,c0,c1\n0,0,0.1,0.2\n0,1,0.3,0.4\n").unwrap();
        let img = read_image_csv(&ipath).unwrap();
        assert_eq!((img.h, img.w, img.channels), (1, 2, 2));
        assert_eq!(img.at(0, 1, 1), 0.4);

        // incomplete grid rejected
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "y,x,u,v\n0,0,1,2\n1,1,3,4\n").unwrap();
        assert!(read_flowmap_csv(&bad).is_err());
    }

    #[test]
    fn velocity_csv_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vel.csv");
        std::fs::write(&path, "px,py,pz,vx,vy,vz\n0,0,0,1,0,0\n1,0,0,0.5,0,0\n").unwrap();
        let (pos, vel) = read_velocity_csv(&path).unwrap();
        assert_eq!(pos.len(), 2);
        assert_eq!(vel[1], [0.5, 0.0, 0.0]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("file.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert!(!path.with_extension("tmp").exists());
    }
}
