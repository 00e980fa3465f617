//! Frame files, run configuration and dataset manifests.
//!
//! Frames are stored either as DTEN (`[3, H, W]`, lossless) or as 16-bit RGB
//! PNG with `code = round(v * 65535)`. Reading a PNG with an 8- or 10-bit
//! depth tag re-quantises, so quantised frames round-trip exactly.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::color::{BitDepth, ColorSpace, Frame};
use crate::degradation::{quantize, ClipPair, CLIP_LEN};
use crate::error::{Error, Result};
use crate::net::{NetConfig, TrainConfig};
use crate::tensor::Tensor;

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    if !is_png(path) {
        return frame.pixels.save(path);
    }
    let (h, w) = (frame.height(), frame.width());
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    let hw = h * w;
    let d = frame.pixels.data();
    let mut bytes = Vec::with_capacity(6 * hw);
    for i in 0..hw {
        for c in 0..3 {
            let code = (d[c * hw + i] * 65535.0).round() as u16;
            bytes.extend_from_slice(&code.to_be_bytes());
        }
    }
    writer.write_image_data(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_frame(path: &Path, space: ColorSpace, depth: BitDepth) -> Result<Frame> {
    let pixels = if is_png(path) { read_png(path)? } else { Tensor::<f64>::load(path)? };
    let frame = Frame::new(pixels, space, BitDepth::Float)?;
    match depth.bits() {
        Some(b) => quantize(&frame, b),
        None => Ok(frame),
    }
}

fn read_png(path: &Path) -> Result<Tensor<f64>> {
    let dec = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Rgb {
        return Err(Error::Format(format!(
            "{}: expected 16-bit RGB PNG, found {:?} {:?}",
            path.display(),
            info.bit_depth,
            info.color_type
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let hw = h * w;
    let mut data = vec![0.0; 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            let o = 6 * i + 2 * c;
            data[c * hw + i] = u16::from_be_bytes([buf[o], buf[o + 1]]) as f64 / 65535.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Plain `key=value` run configuration; `#` starts a comment line.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub width: usize,
    pub height: usize,
    pub qp: u32,
    pub seed: u64,
    pub train_clips: usize,
    pub test_clips: usize,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            qp: 37,
            seed: 0,
            train_clips: 32,
            test_clips: 8,
            data: None,
            out: None,
            checkpoint: None,
            net: NetConfig::tiny(),
            train: TrainConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", no + 1)));
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                other => other,
            })?;
        }
        if cfg.train.steps > 0 && cfg.train.lr < 0.0 {
            return Err(Error::Config("lr must be non-negative".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "qp" => self.qp = num(key, value)?,
            "seed" => {
                self.seed = num(key, value)?;
                self.train.seed = self.seed;
            }
            "train_clips" => self.train_clips = num(key, value)?,
            "test_clips" => self.test_clips = num(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "lr" => self.train.lr = num(key, value)?,
            "steps" => self.train.steps = num(key, value)?,
            "main_weight" => self.train.main_weight = num(key, value)?,
            "aux_weight" => self.train.aux_weight = num(key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = num(key, value)?,
            "augment" => self.train.augment = num(key, value)?,
            "preset" => match value {
                "tiny" => self.net = NetConfig::tiny(),
                "standard" => self.net = NetConfig::standard(),
                _ => return Err(Error::Config(format!("unknown preset {value:?}"))),
            },
            _ => self.net.set(key, value).map_err(|_| Error::Config(format!("unknown or invalid key {key:?}={value:?}")))?,
        }
        Ok(())
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub qp: u32,
    pub seed: u64,
    pub lq_dir: PathBuf,
    pub hq_sdr: PathBuf,
    pub hq_hdr: PathBuf,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {}/ {} {}",
            self.clip_id,
            self.qp,
            self.seed,
            self.lq_dir.display(),
            self.hq_sdr.display(),
            self.hq_hdr.display()
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("manifest line needs `clip_id qp seed lq_dir/ hq_sdr hq_hdr`, got {line:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(Self {
            clip_id: f[0].to_string(),
            qp: f[1].parse().map_err(|_| bad())?,
            seed: f[2].parse().map_err(|_| bad())?,
            lq_dir: PathBuf::from(f[3].trim_end_matches('/')),
            hq_sdr: PathBuf::from(f[4]),
            hq_hdr: PathBuf::from(f[5]),
        })
    }
}

pub fn lq_frame_name(i: usize) -> String {
    format!("frame_{i}.png")
}

/// Writes clips under `root` (LQ frames as PNG, targets as DTEN) and returns
/// the manifest path. Paths in the manifest are relative to `root`.
pub fn write_dataset(root: &Path, clips: &[(String, ClipPair)]) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let mut manifest = String::new();
    for (id, clip) in clips {
        let lq_dir = PathBuf::from(id).join("lq");
        fs::create_dir_all(root.join(&lq_dir))?;
        for (i, f) in clip.lq_sdr.iter().enumerate() {
            write_frame(&root.join(&lq_dir).join(lq_frame_name(i)), f)?;
        }
        let entry = ManifestEntry {
            clip_id: id.clone(),
            qp: clip.qp_label,
            seed: clip.seed,
            hq_sdr: PathBuf::from(id).join("hq_sdr.dten"),
            hq_hdr: PathBuf::from(id).join("hq_hdr.dten"),
            lq_dir,
        };
        write_frame(&root.join(&entry.hq_sdr), &clip.hq_sdr_mid)?;
        write_frame(&root.join(&entry.hq_hdr), &clip.hq_hdr_mid)?;
        manifest.push_str(&entry.to_line());
        manifest.push('\n');
    }
    let path = root.join("manifest.txt");
    fs::write(&path, manifest)?;
    Ok(path)
}

pub fn read_clip(root: &Path, e: &ManifestEntry) -> Result<ClipPair> {
    let lq = (0..CLIP_LEN)
        .map(|i| read_frame(&root.join(&e.lq_dir).join(lq_frame_name(i)), ColorSpace::SdrBt709, BitDepth::Eight))
        .collect::<Result<Vec<_>>>()?;
    let sdr = read_frame(&root.join(&e.hq_sdr), ColorSpace::SdrBt709, BitDepth::Float)?;
    let hdr = read_frame(&root.join(&e.hq_hdr), ColorSpace::HdrBt2020Pq, BitDepth::Float)?;
    ClipPair::new(lq, sdr, hdr, e.qp, e.seed)
}

/// Reads every clip listed in a manifest; relative paths resolve against
/// the manifest's directory.
pub fn read_dataset(manifest: &Path) -> Result<Vec<(String, ClipPair)>> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    fs::read_to_string(manifest)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let e = ManifestEntry::parse(l)?;
            Ok((e.clip_id.clone(), read_clip(root, &e)?))
        })
        .collect()
}

/// Loads the SDR frames of a clip directory, sorted by file name.
pub fn read_sdr_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| is_png(p) || p.extension().is_some_and(|e| e == "dten"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_frame(p, ColorSpace::SdrBt709, BitDepth::Float)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: u64) -> Frame {
        Frame::new(Tensor::uniform(&[3, 5, 7], 0.0, 1.0, seed).unwrap(), ColorSpace::SdrBt709, BitDepth::Float).unwrap()
    }

    #[test]
    fn dten_frame_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.dten");
        let f = frame(1);
        write_frame(&p, &f).unwrap();
        assert_eq!(read_frame(&p, ColorSpace::SdrBt709, BitDepth::Float).unwrap(), f);
    }

    #[test]
    fn png_round_trip_of_quantised_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        for bits in [8, 10] {
            let q = quantize(&frame(2), bits).unwrap();
            write_frame(&p, &q).unwrap();
            assert_eq!(read_frame(&p, ColorSpace::SdrBt709, q.depth).unwrap(), q);
        }
    }

    #[test]
    fn truncated_and_foreign_files_fail_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        write_frame(&p, &frame(3)).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_frame(&p, ColorSpace::SdrBt709, BitDepth::Float), Err(Error::Format(_))));

        let p8 = dir.path().join("eight.png");
        let mut enc = png::Encoder::new(File::create(&p8).unwrap(), 2, 2);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[0u8; 12]).unwrap();
        assert!(matches!(read_frame(&p8, ColorSpace::SdrBt709, BitDepth::Float), Err(Error::Format(_))));

        let pd = dir.path().join("f.dten");
        write_frame(&pd, &frame(4)).unwrap();
        let bytes = fs::read(&pd).unwrap();
        fs::write(&pd, &bytes[..30]).unwrap();
        assert!(matches!(read_frame(&pd, ColorSpace::SdrBt709, BitDepth::Float), Err(Error::Format(_))));
    }

    #[test]
    fn config_parsing() {
        let c = Config::parse("# run\nwidth=128\nqp = 32\nsteps=10\nchannels=8\nuse_wa=false\n").unwrap();
        assert_eq!((c.width, c.qp, c.train.steps, c.net.channels, c.net.use_wa), (128, 32, 10, 8, false));
        assert!(matches!(Config::parse("colour=1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("width=1\nwidth=2"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("width"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("width=abc"), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_lines() {
        let e = ManifestEntry::parse("c7 37 42 c7/lq/ c7/hq_sdr.dten c7/hq_hdr.dten").unwrap();
        assert_eq!((e.clip_id.as_str(), e.qp, e.seed), ("c7", 37, 42));
        assert_eq!(e.to_line(), "c7 37 42 c7/lq/ c7/hq_sdr.dten c7/hq_hdr.dten");
        assert!(ManifestEntry::parse("c7 37").is_err());
    }
}
