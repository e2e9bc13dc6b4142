//! Bulk frame export.
//!
//! Frame files (`.owfr`, little-endian):
//!
//! ```text
//! magic   "OWFR"        4 bytes
//! version u32 = 1
//! nx      u32
//! ny      u32
//! pixels  ny*nx f64     row-major, row n = y index
//! ```
//!
//! Ground truth goes to `ground_truth.csv` with one row per transmitter.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use super::{
    generate_scene, render_frame, AcquisitionConfig, Frame, Scene, SceneConfig, SensorConfig,
};
use crate::error::{Error, Result};
use crate::optics::LensConfig;
use crate::stream_rng;

pub const FRAME_MAGIC: &[u8; 4] = b"OWFR";
pub const FRAME_VERSION: u32 = 1;
pub const GROUND_TRUTH_HEADER: &str =
    "frame_id,tx_id,legit,x_true_m,y_true_m,x_claimed_m,y_claimed_m,power_w";

pub fn write_frame(path: &Path, pixels: &Array2<f64>) -> Result<()> {
    let (ny, nx) = pixels.dim();
    let mut buf = Vec::with_capacity(16 + 8 * nx * ny);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&(nx as u32).to_le_bytes());
    buf.extend_from_slice(&(ny as u32).to_le_bytes());
    for v in pixels.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<Array2<f64>> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != FRAME_MAGIC {
        return Err(bad("missing OWFR header"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    if word(1) != FRAME_VERSION {
        return Err(bad("unsupported version"));
    }
    let (nx, ny) = (word(2) as usize, word(3) as usize);
    if bytes.len() != 16 + 8 * nx * ny {
        return Err(bad("pixel payload does not match the declared size"));
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((ny, nx), values).map_err(|e| bad(&e.to_string()))
}

/// One line of `ground_truth.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRow {
    pub frame_id: usize,
    pub tx_id: usize,
    pub legit: bool,
    pub true_position: [f64; 2],
    pub claimed_position: Option<[f64; 2]>,
    pub power_w: f64,
}

impl GroundTruthRow {
    pub fn from_scene(frame_id: usize, scene: &Scene) -> Vec<Self> {
        scene
            .transmitters
            .iter()
            .map(|t| Self {
                frame_id,
                tx_id: t.id,
                legit: t.legitimate,
                true_position: t.true_position,
                claimed_position: t.claimed_position,
                power_w: t.beam.tx_power,
            })
            .collect()
    }
}

pub fn write_ground_truth<W: Write>(mut out: W, rows: &[GroundTruthRow]) -> std::io::Result<()> {
    writeln!(out, "{GROUND_TRUTH_HEADER}")?;
    for r in rows {
        let (cx, cy) = match r.claimed_position {
            Some([x, y]) => (x.to_string(), y.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.frame_id,
            r.tx_id,
            u8::from(r.legit),
            r.true_position[0],
            r.true_position[1],
            cx,
            cy,
            r.power_w
        )?;
    }
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != GROUND_TRUTH_HEADER {
                return Err(bad(1, "unexpected header".into()));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(
                i + 1,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad number `{}`", fields[k])))
        };
        let int = |k: usize| -> Result<usize> {
            fields[k]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad integer `{}`", fields[k])))
        };
        let claimed = if fields[5].is_empty() {
            None
        } else {
            Some([num(5)?, num(6)?])
        };
        rows.push(GroundTruthRow {
            frame_id: int(0)?,
            tx_id: int(1)?,
            legit: int(2)? == 1,
            true_position: [num(3)?, num(4)?],
            claimed_position: claimed,
            power_w: num(7)?,
        });
    }
    Ok(rows)
}

/// Everything needed to synthesize frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub lens: LensConfig,
    pub sensor: SensorConfig,
    pub acquisition: AcquisitionConfig,
}

/// Files written by [`export_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    pub ground_truth: PathBuf,
}

impl DatasetHandle {
    pub fn load_frames(&self) -> Result<Vec<Array2<f64>>> {
        self.frames.iter().map(|p| read_frame(p)).collect()
    }
}

/// Frame `index` of a dataset: its scene and rendered frame.
pub fn synthesize(index: usize, cfg: &DatasetConfig, master_seed: u64) -> Result<(Scene, Frame)> {
    let mut rng = stream_rng(master_seed, index as u64);
    let scene = generate_scene(&mut rng, &cfg.scene)?;
    let mut frame = render_frame(&scene, &cfg.lens, &cfg.sensor, &cfg.acquisition, &mut rng)?;
    frame.seed = master_seed;
    Ok((scene, frame))
}

/// Renders `count` frames in parallel and writes them plus ground truth to `dir`.
///
/// Frame `i` draws from its own stream of `master_seed`, so the output does
/// not depend on thread scheduling.
pub fn export_dataset(
    count: usize,
    cfg: &DatasetConfig,
    master_seed: u64,
    dir: &Path,
) -> Result<DatasetHandle> {
    if count == 0 {
        return Err(Error::config("count", "must be at least 1"));
    }
    cfg.scene.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rendered: Vec<(Scene, Frame)> = (0..count)
        .into_par_iter()
        .map(|i| synthesize(i, cfg, master_seed))
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(count);
    let mut truth = Vec::new();
    for (i, (scene, frame)) in rendered.iter().enumerate() {
        let path = dir.join(format!("frame_{i:06}.owfr"));
        write_frame(&path, &frame.pixels)?;
        frames.push(path);
        truth.extend(GroundTruthRow::from_scene(i, scene));
    }
    let ground_truth = dir.join("ground_truth.csv");
    let file = File::create(&ground_truth).map_err(|e| Error::io(&ground_truth, e))?;
    let mut out = BufWriter::new(file);
    write_ground_truth(&mut out, &truth)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&ground_truth, e))?;
    Ok(DatasetHandle {
        dir: dir.to_path_buf(),
        frames,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::LensConfig;

    fn small_cfg() -> DatasetConfig {
        let lens = LensConfig {
            sigma_diff0: 1e-3,
            ..LensConfig::default()
        };
        DatasetConfig {
            scene: SceneConfig::default(),
            lens,
            sensor: SensorConfig::centered(24, 24, 0.03, 0.03, lens.focal_length).unwrap(),
            acquisition: AcquisitionConfig::default(),
        }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        entries
            .into_iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = small_cfg();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        export_dataset(10, &cfg, 42, a.path()).unwrap();
        export_dataset(10, &cfg, 42, b.path()).unwrap();
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = small_cfg();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ha = export_dataset(10, &cfg, 1, a.path()).unwrap();
        let hb = export_dataset(10, &cfg, 2, b.path()).unwrap();
        assert_ne!(ha.load_frames().unwrap(), hb.load_frames().unwrap());
    }

    #[test]
    fn round_trip_matches_memory() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let handle = export_dataset(10, &cfg, 7, dir.path()).unwrap();
        let loaded = handle.load_frames().unwrap();
        let truth = read_ground_truth(&handle.ground_truth).unwrap();
        let mut expected_truth = Vec::new();
        for (i, pixels) in loaded.iter().enumerate() {
            let (scene, frame) = synthesize(i, &cfg, 7).unwrap();
            assert_eq!(pixels, &frame.pixels);
            expected_truth.extend(GroundTruthRow::from_scene(i, &scene));
        }
        assert_eq!(truth, expected_truth);
    }

    #[test]
    fn frame_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.owfr");
        let pixels = Array2::from_shape_fn((2, 3), |(n, m)| (10 * n + m) as f64);
        write_frame(&path, &pixels).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"OWFR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        // row-major: second value is pixel (n=0, m=1)
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 16 + 6 * 8);

        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_frame(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn unwritable_sink_reports_path() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = export_dataset(1, &cfg, 0, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("sub"));
    }
}
