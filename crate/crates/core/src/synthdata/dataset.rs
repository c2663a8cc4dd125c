use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mostnet_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{read_homographies, write_homographies, Homography};
use crate::{Error, Result};

pub const MANIFEST: &str = "MANIFEST.sha256";
pub const INDEX: &str = "index.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown split {s:?}")))
    }
}

/// One clip with degraded inputs and labels. Frames are `[3, H, W]`, masks `[1, H, W]`.
#[derive(Clone, Debug)]
pub struct Clip {
    pub name: String,
    pub degraded: Vec<Tensor<f32>>,
    pub restored: Vec<Tensor<f32>>,
    pub masks: Vec<Tensor<f32>>,
    pub homographies: Vec<Homography>,
}

impl Clip {
    pub fn n_frames(&self) -> usize {
        self.restored.len()
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.restored[0].shape();
        (s[1], s[2])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub name: String,
    /// Relative to the dataset root.
    pub dir: PathBuf,
    pub n_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub split: Split,
    pub clips: Vec<ClipEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    #[serde(skip)]
    pub root: PathBuf,
    pub width: usize,
    pub height: usize,
    pub splits: Vec<SplitIndex>,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> &[ClipEntry] {
        self.splits
            .iter()
            .find(|s| s.split == split)
            .map(|s| s.clips.as_slice())
            .unwrap_or(&[])
    }

    /// `(split, clips, frames)` rows.
    pub fn summary(&self) -> Vec<(Split, usize, usize)> {
        self.splits
            .iter()
            .map(|s| (s.split, s.clips.len(), s.clips.iter().map(|c| c.n_frames).sum()))
            .collect()
    }

    pub fn load_clip(&self, entry: &ClipEntry) -> Result<Clip> {
        let dir = self.root.join(&entry.dir);
        let mut clip = Clip {
            name: entry.name.clone(),
            degraded: Vec::new(),
            restored: Vec::new(),
            masks: Vec::new(),
            homographies: read_homographies(&dir.join("H.txt"))?,
        };
        for t in 0..entry.n_frames {
            let f = frame_name(t);
            clip.degraded.push(read_png(&dir.join("B").join(&f), 3)?);
            clip.restored.push(read_png(&dir.join("R").join(&f), 3)?);
            let mut m = read_png(&dir.join("M").join(&f), 1)?;
            m.data_mut().iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
            clip.masks.push(m);
        }
        if clip.homographies.len() + 1 != entry.n_frames {
            return Err(Error::dataset(
                dir.join("H.txt"),
                format!("expected {} homographies, found {}", entry.n_frames - 1, clip.homographies.len()),
            ));
        }
        Ok(clip)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Clip>> {
        self.split(split).iter().map(|e| self.load_clip(e)).collect()
    }
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.png")
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[C, H, W]` tensor (`C` = 1 or 3) as an 8-bit PNG.
pub fn write_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let plane = h * w;
    let mut buf = Vec::with_capacity(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            buf.push(to_u8(t.data()[ch * plane + i]));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::dataset(path, e.to_string()))?;
    writer
        .write_image_data(&buf)
        .map_err(|e| Error::dataset(path, e.to_string()))
}

/// Reads an 8-bit PNG into a `[channels, H, W]` tensor in `[0, 1]`.
pub fn read_png(path: &Path, channels: usize) -> Result<Tensor<f32>> {
    let file = fs::File::open(path).map_err(|_| Error::dataset(path, "missing file"))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| Error::dataset(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::dataset(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::dataset(path, "expected 8-bit samples"));
    }
    let src_c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Indexed => return Err(Error::dataset(path, "indexed PNGs are not supported")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let plane = w * h;
    let mut out = Tensor::zeros(&[channels, h, w]);
    for i in 0..plane {
        let px = &buf[i * src_c..(i + 1) * src_c];
        for ch in 0..channels {
            let v = match (src_c, channels) {
                (1 | 2, _) => px[0],
                (_, 1) => px[0],
                _ => px[ch],
            };
            out.data_mut()[ch * plane + i] = v as f32 / 255.0;
        }
    }
    Ok(out)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn clip_files(n_frames: usize) -> Vec<PathBuf> {
    let mut files = vec![PathBuf::from("H.txt")];
    for kind in ["B", "R", "M"] {
        for t in 0..n_frames {
            files.push(Path::new(kind).join(frame_name(t)));
        }
    }
    files
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `root/<split>/clip_XXXX/{B,R,M}/frame_%04d.png` and `H.txt` per clip,
/// plus `index.json` and a SHA-256 manifest of every file.
pub fn write_dataset(root: &Path, clips: &[(Split, Clip)]) -> Result<DatasetIndex> {
    let mut names: Vec<(Split, &str)> = clips.iter().map(|(s, c)| (*s, c.name.as_str())).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("clip names must be unique within a split".into()));
    }
    let (height, width) = clips.first().map(|(_, c)| c.size()).unwrap_or((0, 0));
    for (_, c) in clips {
        if c.n_frames() < 2 || c.size() != (height, width) {
            return Err(Error::InvalidConfig(format!("clip {} has an invalid size or length", c.name)));
        }
        if c.degraded.len() != c.n_frames() || c.masks.len() != c.n_frames() || c.homographies.len() + 1 != c.n_frames() {
            return Err(Error::InvalidConfig(format!("clip {} has inconsistent label counts", c.name)));
        }
    }
    create_dir(root)?;
    let mut index = DatasetIndex {
        root: root.to_path_buf(),
        width,
        height,
        splits: Vec::new(),
    };
    let mut manifest = String::new();
    for split in Split::ALL {
        let mut entries = Vec::new();
        for (_, clip) in clips.iter().filter(|(s, _)| *s == split) {
            let rel = Path::new(split.name()).join(&clip.name);
            let dir = root.join(&rel);
            for kind in ["B", "R", "M"] {
                create_dir(&dir.join(kind))?;
            }
            for t in 0..clip.n_frames() {
                let f = frame_name(t);
                write_png(&dir.join("B").join(&f), &clip.degraded[t])?;
                write_png(&dir.join("R").join(&f), &clip.restored[t])?;
                write_png(&dir.join("M").join(&f), &clip.masks[t])?;
            }
            write_homographies(&dir.join("H.txt"), &clip.homographies)?;
            for f in clip_files(clip.n_frames()) {
                let rel_file = rel.join(&f);
                manifest.push_str(&format!(
                    "{}  {}\n",
                    sha256_file(&root.join(&rel_file))?,
                    rel_file.to_string_lossy().replace('\\', "/")
                ));
            }
            entries.push(ClipEntry {
                name: clip.name.clone(),
                dir: rel,
                n_frames: clip.n_frames(),
            });
        }
        index.splits.push(SplitIndex { split, clips: entries });
    }
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    let index_path = root.join(INDEX);
    fs::write(&index_path, json + "\n").map_err(|e| Error::io(&index_path, e))?;
    let manifest_path = root.join(MANIFEST);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(index)
}

/// Reads and validates a dataset: every expected file present, checksums
/// matching the manifest, homography counts consistent.
pub fn read_dataset(root: &Path) -> Result<DatasetIndex> {
    let index_path = root.join(INDEX);
    let text = fs::read_to_string(&index_path).map_err(|_| Error::dataset(&index_path, "missing index"))?;
    let mut index: DatasetIndex =
        serde_json::from_str(&text).map_err(|e| Error::dataset(&index_path, e.to_string()))?;
    index.root = root.to_path_buf();
    let manifest_path = root.join(MANIFEST);
    let manifest =
        fs::read_to_string(&manifest_path).map_err(|_| Error::dataset(&manifest_path, "missing manifest"))?;
    let mut sums = std::collections::HashMap::new();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, file) = line
            .split_once("  ")
            .ok_or_else(|| Error::dataset(&manifest_path, format!("malformed line {line:?}")))?;
        sums.insert(file.to_string(), hash.to_string());
    }
    let mut expected = 0;
    for split in &index.splits {
        for entry in &split.clips {
            if entry.n_frames < 2 {
                return Err(Error::dataset(root.join(&entry.dir), "clip needs at least 2 frames"));
            }
            for f in clip_files(entry.n_frames) {
                let rel = entry.dir.join(&f);
                let key = rel.to_string_lossy().replace('\\', "/");
                let path = root.join(&rel);
                if !path.is_file() {
                    return Err(Error::dataset(path, "missing file"));
                }
                let want = sums
                    .get(&key)
                    .ok_or_else(|| Error::dataset(&path, "file not listed in manifest"))?;
                if &sha256_file(&path)? != want {
                    return Err(Error::dataset(path, "checksum mismatch"));
                }
                expected += 1;
            }
            let hs = read_homographies(&root.join(&entry.dir).join("H.txt"))?;
            if hs.len() + 1 != entry.n_frames {
                return Err(Error::dataset(
                    root.join(&entry.dir).join("H.txt"),
                    format!("expected {} homographies, found {}", entry.n_frames - 1, hs.len()),
                ));
            }
        }
    }
    if expected != sums.len() {
        return Err(Error::dataset(&manifest_path, "manifest lists files outside the index"));
    }
    Ok(index)
}
