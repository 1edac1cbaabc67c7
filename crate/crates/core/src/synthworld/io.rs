use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{
    derive_seed, generate_scene, render_sequence, stylize_domain, Class, Domain, DomainParams, FrameBundle,
    WorldConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, FlowField, PoseSE3};
use crate::tensor::Tensor;

const RASTER_MAGIC: &[u8; 4] = b"S3D1";

/// Row-major HWC raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    /// From an NCHW tensor with N = 1.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [c, h, w] = match *t.shape() {
            [1, c, h, w] => [c, h, w],
            _ => return Err(Error::domain("Raster::from_tensor", format!("shape {:?}", t.shape()))),
        };
        let plane = h * w;
        let d = t.data();
        let mut data = Vec::with_capacity(c * plane);
        for p in 0..plane {
            for ch in 0..c {
                data.push(d[ch * plane + p] as f32);
            }
        }
        Ok(Self {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }

    /// As an NCHW tensor with N = 1.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.channels * plane];
        for p in 0..plane {
            for ch in 0..self.channels {
                out[ch * plane + p] = self.data[p * self.channels + ch] as f64;
            }
        }
        Tensor::new(out, &[1, self.channels, self.height, self.width])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        buf.extend_from_slice(RASTER_MAGIC);
        for v in [self.height, self.width, self.channels] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 16 || &b[..4] != RASTER_MAGIC {
            return Err(Error::Format("not an S3D1 raster".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(b[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        let n = height * width * channels;
        if b.len() != 16 + 4 * n {
            return Err(Error::Format(format!("S3D1 payload of {} bytes, expected {}", b.len() - 16, 4 * n)));
        }
        let data = b[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let b = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub id: usize,
    pub name: String,
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<String>,
    /// Channels: du, dv, valid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_to_next: Option<String>,
    /// World-from-camera, row-major 4×4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub domain: Domain,
    pub intrinsics: CameraIntrinsics,
    pub palette: Vec<PaletteEntry>,
    pub frames: Vec<FrameEntry>,
}

pub fn palette() -> Vec<PaletteEntry> {
    Class::ALL
        .iter()
        .map(|c| PaletteEntry {
            id: c.index(),
            name: c.name().into(),
            rgb: c.palette(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSelection {
    Synthetic,
    Real,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub scenes: usize,
    pub world: WorldConfig,
    pub real_style: DomainParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 40,
            world: WorldConfig::default(),
            real_style: DomainParams::default(),
        }
    }
}

pub const SYNTHETIC_DIR: &str = "synthetic";
pub const REAL_DIR: &str = "real";
pub const REAL_EVAL_DIR: &str = "real_eval";

fn scene_dir(root: &Path, domain_dir: &str, i: usize) -> PathBuf {
    root.join(domain_dir).join(format!("scene_{i:04}"))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn labels_tensor(labels: &[usize], h: usize, w: usize) -> Result<Tensor> {
    Tensor::new(labels.iter().map(|&l| l as f64).collect(), &[1, 1, h, w])
}

fn flow_tensor(f: &FlowField) -> Result<Tensor> {
    Tensor::concat_channels(&[&f.flow, &f.mask])
}

/// Scene seeds are derived per domain so the two corpora never share scenes.
pub fn scene_seed(base: u64, domain: Domain, index: usize) -> u64 {
    let tag = match domain {
        Domain::Synthetic => 0x5359_4e00,
        Domain::Real => 0x5245_4100,
    };
    derive_seed(base, tag + index as u64)
}

/// Renders one scene of `domain`; real frames are stylized with per-frame
/// noise seeds.
pub fn render_scene(cfg: &DatasetConfig, domain: Domain, index: usize) -> Result<(u64, Vec<FrameBundle>)> {
    let seed = scene_seed(cfg.seed, domain, index);
    let scene = generate_scene(seed, &cfg.world)?;
    let frames = render_sequence(&scene, cfg.world.supersample)?;
    let frames = match domain {
        Domain::Synthetic => frames,
        Domain::Real => frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let p = DomainParams {
                    noise_seed: derive_seed(seed, 0x4e00 + i as u64),
                    ..cfg.real_style
                };
                stylize_domain(f, &p)
            })
            .collect::<Result<_>>()?,
    };
    Ok((seed, frames))
}

fn write_scene(root: &Path, cfg: &DatasetConfig, domain: Domain, index: usize) -> Result<usize> {
    let (seed, frames) = render_scene(cfg, domain, index)?;
    let k = cfg.world.intrinsics()?;
    let (h, w) = (k.height, k.width);
    let (train_dir, eval_dir) = match domain {
        Domain::Synthetic => (scene_dir(root, SYNTHETIC_DIR, index), None),
        Domain::Real => (scene_dir(root, REAL_DIR, index), Some(scene_dir(root, REAL_EVAL_DIR, index))),
    };
    mkdir(&train_dir)?;
    if let Some(d) = &eval_dir {
        mkdir(d)?;
    }
    let mut train = Vec::new();
    let mut hidden = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let rgb = format!("rgb_{i:03}.s3d");
        let depth = format!("depth_{i:03}.s3d");
        let sem = format!("semantics_{i:03}.s3d");
        let flow = format!("flow_{i:03}.s3d");
        Raster::from_tensor(&f.rgb)?.write(&train_dir.join(&rgb))?;
        let labels_dir = eval_dir.as_ref().unwrap_or(&train_dir);
        Raster::from_tensor(&f.depth)?.write(&labels_dir.join(&depth))?;
        Raster::from_tensor(&labels_tensor(&f.semantics, h, w)?)?.write(&labels_dir.join(&sem))?;
        let flow = match &f.flow_to_next {
            Some(fl) => {
                Raster::from_tensor(&flow_tensor(fl)?)?.write(&labels_dir.join(&flow))?;
                Some(flow)
            }
            None => None,
        };
        let labels = FrameEntry {
            rgb: None,
            depth: Some(depth),
            semantics: Some(sem),
            flow_to_next: flow,
            pose: Some(f.pose.to_row_major().to_vec()),
        };
        match domain {
            Domain::Synthetic => train.push(FrameEntry {
                rgb: Some(rgb),
                ..labels
            }),
            Domain::Real => {
                train.push(FrameEntry {
                    rgb: Some(rgb),
                    ..FrameEntry::default()
                });
                hidden.push(labels);
            }
        }
    }
    let manifest = |frames| Manifest {
        seed,
        domain,
        intrinsics: k,
        palette: palette(),
        frames,
    };
    write_json(&train_dir.join("manifest.json"), &manifest(train))?;
    if let Some(d) = eval_dir {
        write_json(&d.join("manifest.json"), &manifest(hidden))?;
    }
    Ok(frames.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenSummary {
    pub scenes: usize,
    pub frames: usize,
}

/// Renders and writes the corpus; scenes render in parallel, output bytes do
/// not depend on scheduling.
pub fn generate_dataset(root: &Path, cfg: &DatasetConfig, which: DomainSelection) -> Result<GenSummary> {
    cfg.world.validate()?;
    mkdir(root)?;
    let domains: &[Domain] = match which {
        DomainSelection::Synthetic => &[Domain::Synthetic],
        DomainSelection::Real => &[Domain::Real],
        DomainSelection::Both => &[Domain::Synthetic, Domain::Real],
    };
    let jobs: Vec<(Domain, usize)> = domains
        .iter()
        .flat_map(|&d| (0..cfg.scenes).map(move |i| (d, i)))
        .collect();
    let counts = jobs
        .par_iter()
        .map(|&(d, i)| write_scene(root, cfg, d, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(GenSummary {
        scenes: jobs.len(),
        frames: counts.iter().sum(),
    })
}

/// A scene as loaded from disk. Fields missing from the manifest stay empty.
#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub dir: PathBuf,
    pub seed: u64,
    pub domain: Domain,
    pub intrinsics: CameraIntrinsics,
    pub rgb: Vec<Tensor>,
    pub depth: Vec<Tensor>,
    pub semantics: Vec<Vec<usize>>,
    pub flow_to_next: Vec<FlowField>,
    pub poses: Vec<PoseSE3>,
}

impl LoadedScene {
    pub fn len(&self) -> usize {
        self.rgb.len().max(self.depth.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let s = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&s).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads one scene directory.
pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    let m = read_manifest(dir)?;
    m.intrinsics.validate()?;
    let mut s = LoadedScene {
        dir: dir.to_path_buf(),
        seed: m.seed,
        domain: m.domain,
        intrinsics: m.intrinsics,
        rgb: Vec::new(),
        depth: Vec::new(),
        semantics: Vec::new(),
        flow_to_next: Vec::new(),
        poses: Vec::new(),
    };
    let (h, w) = (m.intrinsics.height, m.intrinsics.width);
    let read = |name: &str, channels: usize| -> Result<Tensor> {
        let r = Raster::read(&dir.join(name))?;
        if (r.height, r.width, r.channels) != (h, w, channels) {
            return Err(Error::Format(format!("{name}: unexpected extents")));
        }
        r.to_tensor()
    };
    for f in &m.frames {
        if let Some(n) = &f.rgb {
            s.rgb.push(read(n, 3)?);
        }
        if let Some(n) = &f.depth {
            s.depth.push(read(n, 1)?);
        }
        if let Some(n) = &f.semantics {
            s.semantics.push(read(n, 1)?.data().iter().map(|&v| v as usize).collect());
        }
        if let Some(n) = &f.flow_to_next {
            let t = read(n, 3)?;
            s.flow_to_next.push(FlowField {
                flow: t.slice(1, 0, 2)?,
                mask: t.slice(1, 2, 1)?,
            });
        }
        if let Some(p) = &f.pose {
            s.poses.push(PoseSE3::from_row_major(p)?);
        }
    }
    Ok(s)
}

/// All scene directories below `root/<domain_dir>`, sorted.
pub fn scene_dirs(root: &Path, domain_dir: &str) -> Result<Vec<PathBuf>> {
    let base = root.join(domain_dir);
    if !base.is_dir() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&base)
        .map_err(|e| Error::io(format!("listing {}", base.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Loads every scene of one domain directory.
pub fn load_domain(root: &Path, domain_dir: &str) -> Result<Vec<LoadedScene>> {
    scene_dirs(root, domain_dir)?.iter().map(|d| load_scene(d)).collect()
}
