//! On-disk sample container and dataset directories.
//!
//! Each sample is one file `sample_{index:06}.kds` (all integers and floats
//! little-endian):
//!
//! ```text
//! magic    b"KLDSMPL\0"
//! version  u32 = 1
//! mode     u8   (0 = 3D, 1 = video)
//! seed     u64
//! views    u32
//! height   u32
//! width    u32
//! channels u32
//! poses    views × 12 f64   (camera-to-world [R | t], row-major)
//! pixels   views × height × width × channels f32, values in [−1, 1]
//! ```
//!
//! Poses are the raw scene-unit cameras, so any view can be re-rendered
//! exactly from `SceneSpec::random(seed)`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{make_3d_sample, make_video_sample, Sample, SampleMode};
use crate::geometry::{CameraPose, PoseSet};
use crate::image::Image;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"KLDSMPL\0";
const VERSION: u32 = 1;
const EXT: &str = "kds";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    ThreeD,
    Video,
}

impl From<DatasetMode> for SampleMode {
    fn from(m: DatasetMode) -> Self {
        match m {
            DatasetMode::ThreeD => SampleMode::ThreeD,
            DatasetMode::Video => SampleMode::Video,
        }
    }
}

impl std::str::FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3d" | "threed" => Ok(Self::ThreeD),
            "video" => Ok(Self::Video),
            _ => Err(Error::invalid(format!("unknown dataset mode {s:?} (expected 3d or video)"))),
        }
    }
}

impl Sample {
    pub fn to_bytes(&self) -> Vec<u8> {
        let im0 = &self.images[0];
        let mut out = Vec::with_capacity(64 + self.views() * (96 + 4 * im0.data.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.mode {
            SampleMode::ThreeD => 0,
            SampleMode::Video => 1,
        });
        out.extend_from_slice(&self.seed.to_le_bytes());
        for d in [self.views(), im0.height, im0.width, im0.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for p in &self.poses.poses {
            let r = p.rotation();
            let t = p.translation();
            for row in 0..3 {
                for c in 0..3 {
                    out.extend_from_slice(&r[row][c].to_le_bytes());
                }
                out.extend_from_slice(&t[row].to_le_bytes());
            }
        }
        for im in &self.images {
            for x in &im.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Dataset("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Dataset(format!("unsupported version {version}")));
        }
        let mode = match r.take(1)?[0] {
            0 => SampleMode::ThreeD,
            1 => SampleMode::Video,
            m => return Err(Error::Dataset(format!("unknown mode tag {m}"))),
        };
        let seed = r.u64()?;
        let views = r.u32()? as usize;
        let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if views == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Dataset("zero-sized sample".into()));
        }
        let expected = views
            .checked_mul(96)
            .and_then(|p| h.checked_mul(w)?.checked_mul(c)?.checked_mul(4 * views)?.checked_add(p))
            .ok_or_else(|| Error::Dataset("sample dimensions overflow".into()))?;
        if r.remaining() != expected {
            return Err(Error::Dataset(format!(
                "payload is {} bytes, header implies {expected}",
                r.remaining()
            )));
        }
        let mut poses = Vec::with_capacity(views);
        for _ in 0..views {
            let mut rot = [[0.0; 3]; 3];
            let mut t = [0.0; 3];
            for row in 0..3 {
                for col in 0..3 {
                    rot[row][col] = r.f64()?;
                }
                t[row] = r.f64()?;
            }
            poses.push(CameraPose::new(rot, t).map_err(|e| Error::Dataset(format!("pose: {e}")))?);
        }
        let mut images = Vec::with_capacity(views);
        for _ in 0..views {
            let data = (0..h * w * c).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dataset("non-finite pixel".into()));
            }
            images.push(Image::from_vec(h, w, c, data)?);
        }
        Ok(Sample {
            seed,
            mode,
            images,
            poses: PoseSet::new(poses),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?).map_err(|e| match e {
            Error::Dataset(m) => Error::Dataset(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Writes `view_{k:02}.ppm` (and `.png` when `png` is set) into `dir`.
    pub fn export_images(&self, dir: &Path, png: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, im) in self.images.iter().enumerate() {
            im.write_ppm(&dir.join(format!("view_{k:02}.ppm")))?;
            if png {
                im.write_png(&dir.join(format!("view_{k:02}.png")))?;
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Dataset("truncated sample".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// A directory of sample files, sorted by name.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Dataset {
    /// Renders `count` samples with seeds `first_seed..first_seed + count`.
    pub fn generate(dir: &Path, mode: DatasetMode, count: usize, first_seed: u64, views: usize, res: usize) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(count);
        for i in 0..count {
            let seed = first_seed + i as u64;
            let sample = match mode {
                DatasetMode::ThreeD => make_3d_sample(seed, views, res)?,
                DatasetMode::Video => make_video_sample(seed, views, res)?,
            };
            let path = dir.join(format!("sample_{i:06}.{EXT}"));
            sample.save(&path)?;
            files.push(path);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files,
        })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == EXT))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!("no .{EXT} samples in {}", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<Sample> {
        let path = self.files.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            size: self.files.len(),
        })?;
        Sample::load(path)
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render, SceneSpec};

    #[test]
    fn container_round_trip() {
        for s in [make_3d_sample(5, 3, 8).unwrap(), make_video_sample(6, 4, 8).unwrap()] {
            let bytes = s.to_bytes();
            assert_eq!(Sample::from_bytes(&bytes).unwrap(), s);
            assert!(Sample::from_bytes(&bytes[..bytes.len() - 1]).is_err());
            let mut bad = bytes.clone();
            bad[0] = b'X';
            assert!(Sample::from_bytes(&bad).is_err());
        }
    }

    #[test]
    fn dataset_directory() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(dir.path(), DatasetMode::ThreeD, 3, 100, 4, 8).unwrap();
        let again = Dataset::open(dir.path()).unwrap();
        assert_eq!(again.len(), 3);
        let s = again.get(1).unwrap();
        assert_eq!(s.seed, 101);
        let img = render(&SceneSpec::random(101), &s.poses.poses[3], 8, 8);
        assert_eq!(img, s.images[3]);
        assert_eq!(ds.get(1).unwrap(), s);
        assert!(again.get(3).is_err());
        assert!(Dataset::open(tempfile::tempdir().unwrap().path()).is_err());

        s.export_images(&dir.path().join("png"), true).unwrap();
        let back = Image::<f32>::read_ppm(&dir.path().join("png/view_00.ppm")).unwrap();
        assert_eq!(back.to_u8(), s.images[0].to_u8());
    }
}
