use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{generate_scene, sample_id, Dataset, Gray16, Gray8, Image, Rgb8, Sample, SceneSpec};
use crate::error::{Error, Result};

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn netpbm(magic: &str, w: usize, h: usize, maxval: u32, body: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
    out.extend_from_slice(body);
    out
}

pub fn write_ppm(path: &Path, img: &Rgb8) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Contract(format!("PPM needs 3 channels, got {}", img.channels)));
    }
    write_file(path, &netpbm("P6", img.width, img.height, 255, &img.data))
}

pub fn write_pgm8(path: &Path, img: &Gray8) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Contract(format!("PGM needs 1 channel, got {}", img.channels)));
    }
    write_file(path, &netpbm("P5", img.width, img.height, 255, &img.data))
}

pub fn write_pgm16(path: &Path, img: &Gray16) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Contract(format!("PGM needs 1 channel, got {}", img.channels)));
    }
    let body: Vec<u8> = img.data.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_file(path, &netpbm("P5", img.width, img.height, 65535, &body))
}

/// Parses a binary netpbm header; returns (width, height, maxval, body offset).
fn parse_header(path: &Path, bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, u32, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            path,
            format!("bad magic: expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated or malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, "header number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, "missing whitespace after header"));
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("invalid header values {w}x{h} maxval {maxval}")));
    }
    Ok((w as usize, h as usize, maxval as u32, pos + 1))
}

fn body<'a>(path: &Path, bytes: &'a [u8], offset: usize, expected: usize) -> Result<&'a [u8]> {
    let found = bytes.len() - offset;
    if found != expected {
        let what = if found < expected { "truncated" } else { "size mismatch" };
        return Err(format_err(
            path,
            format!("{what}: expected {expected} bytes of pixel data, found {found}"),
        ));
    }
    Ok(&bytes[offset..])
}

pub fn read_ppm(path: &Path) -> Result<Rgb8> {
    let bytes = read_file(path)?;
    let (w, h, maxval, off) = parse_header(path, &bytes, b"P6")?;
    if maxval != 255 {
        return Err(format_err(path, format!("expected 8-bit PPM, maxval is {maxval}")));
    }
    let data = body(path, &bytes, off, w * h * 3)?.to_vec();
    Image::from_data(w, h, 3, data)
}

pub fn read_pgm8(path: &Path) -> Result<Gray8> {
    let bytes = read_file(path)?;
    let (w, h, maxval, off) = parse_header(path, &bytes, b"P5")?;
    if maxval != 255 {
        return Err(format_err(path, format!("expected 8-bit PGM, maxval is {maxval}")));
    }
    let data = body(path, &bytes, off, w * h)?.to_vec();
    Image::from_data(w, h, 1, data)
}

pub fn read_pgm16(path: &Path) -> Result<Gray16> {
    let bytes = read_file(path)?;
    let (w, h, maxval, off) = parse_header(path, &bytes, b"P5")?;
    if maxval != 65535 {
        return Err(format_err(path, format!("expected 16-bit PGM, maxval is {maxval}")));
    }
    let raw = body(path, &bytes, off, w * h * 2)?;
    let data = raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Image::from_data(w, h, 1, data)
}

fn sample_paths(dir: &Path, id: &str) -> [PathBuf; 5] {
    ["rgb.ppm", "sem.ppm", "semid.pgm", "dense.pgm", "sparse.pgm"].map(|s| dir.join(format!("{id}_{s}")))
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    let (w, h) = (sample.width(), sample.height());
    let dims = [
        (&sample.semantic_rgb.width, &sample.semantic_rgb.height),
        (&sample.semantic_ids.width, &sample.semantic_ids.height),
        (&sample.dense_depth.width, &sample.dense_depth.height),
        (&sample.sparse_depth.width, &sample.sparse_depth.height),
    ];
    if dims.iter().any(|&(&dw, &dh)| (dw, dh) != (w, h)) {
        return Err(Error::Contract(format!("sample {} has images of differing sizes", sample.id)));
    }
    let [rgb, sem, semid, dense, sparse] = sample_paths(dir, &sample.id);
    write_ppm(&rgb, &sample.rgb)?;
    write_ppm(&sem, &sample.semantic_rgb)?;
    write_pgm8(&semid, &sample.semantic_ids)?;
    write_pgm16(&dense, &sample.dense_depth)?;
    write_pgm16(&sparse, &sample.sparse_depth)
}

pub fn load_sample(dir: &Path, id: &str) -> Result<Sample> {
    let [rgb_p, sem_p, semid_p, dense_p, sparse_p] = sample_paths(dir, id);
    let rgb = read_ppm(&rgb_p)?;
    let check = |path: &Path, w: usize, h: usize| {
        if (w, h) != (rgb.width, rgb.height) {
            Err(format_err(
                path,
                format!("size {w}x{h} does not match rgb {}x{}", rgb.width, rgb.height),
            ))
        } else {
            Ok(())
        }
    };
    let semantic_rgb = read_ppm(&sem_p)?;
    check(&sem_p, semantic_rgb.width, semantic_rgb.height)?;
    let semantic_ids = read_pgm8(&semid_p)?;
    check(&semid_p, semantic_ids.width, semantic_ids.height)?;
    let dense_depth = read_pgm16(&dense_p)?;
    check(&dense_p, dense_depth.width, dense_depth.height)?;
    let sparse_depth = read_pgm16(&sparse_p)?;
    check(&sparse_p, sparse_depth.width, sparse_depth.height)?;
    Ok(Sample {
        id: id.to_string(),
        rgb,
        semantic_rgb,
        semantic_ids,
        dense_depth,
        sparse_depth,
    })
}

/// Contents of a dataset's `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub rho: f32,
    pub dmax_mm: f32,
    pub spec_hash: u64,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.txt";

    pub fn for_spec(spec: &SceneSpec, count: usize) -> Self {
        Manifest {
            seed: spec.seed,
            count,
            width: spec.width,
            height: spec.height,
            rho: spec.rho,
            dmax_mm: spec.d_max_mm,
            spec_hash: spec.hash(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "count={}", self.count);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "rho={}", self.rho);
        let _ = writeln!(s, "dmax_mm={}", self.dmax_mm);
        let _ = writeln!(s, "spec_hash={:016x}", self.spec_hash);
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err(path, format!("expected key=value, got `{line}`")))?;
            kv.insert(k.trim(), v.trim());
        }
        fn get<T: std::str::FromStr>(
            kv: &std::collections::BTreeMap<&str, &str>,
            key: &str,
            path: &Path,
        ) -> Result<T> {
            let raw = kv.get(key).ok_or_else(|| format_err(path, format!("missing key `{key}`")))?;
            raw.parse()
                .map_err(|_| format_err(path, format!("bad value `{raw}` for `{key}`")))
        }
        let hash: String = get(&kv, "spec_hash", path)?;
        let m = Manifest {
            seed: get(&kv, "seed", path)?,
            count: get(&kv, "count", path)?,
            width: get(&kv, "width", path)?,
            height: get(&kv, "height", path)?,
            rho: get(&kv, "rho", path)?,
            dmax_mm: get(&kv, "dmax_mm", path)?,
            spec_hash: u64::from_str_radix(&hash, 16)
                .map_err(|_| format_err(path, format!("bad spec_hash `{hash}`")))?,
        };
        if !(m.dmax_mm > 0.0 && m.dmax_mm <= u16::MAX as f32) {
            return Err(format_err(path, format!("dmax_mm {} out of range", m.dmax_mm)));
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Manifest::parse(&text, &path)
    }

    /// The default-shaped spec these keys describe, if its hash matches.
    pub fn scene_spec(&self) -> Option<SceneSpec> {
        let spec = SceneSpec {
            seed: self.seed,
            width: self.width,
            height: self.height,
            rho: self.rho,
            d_max_mm: self.dmax_mm,
            ..SceneSpec::default()
        };
        (spec.hash() == self.spec_hash).then_some(spec)
    }
}

/// Generates `count` samples into `dir` and writes the manifest last.
pub fn generate_dataset(dir: &Path, spec: &SceneSpec, count: usize) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .into_par_iter()
        .try_for_each(|i| write_sample(dir, &generate_scene(spec, i)?))?;
    let manifest = Manifest::for_spec(spec, count);
    write_file(&dir.join(Manifest::FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = Manifest::load(dir)?;
    let samples = (0..manifest.count)
        .into_par_iter()
        .map(|i| load_sample(dir, &sample_id(i)))
        .collect::<Result<Vec<_>>>()?;
    for s in &samples {
        if (s.width(), s.height()) != (manifest.width, manifest.height) {
            return Err(format_err(
                &dir.join(format!("{}_rgb.ppm", s.id)),
                format!(
                    "size {}x{} differs from manifest {}x{}",
                    s.width(),
                    s.height(),
                    manifest.width,
                    manifest.height
                ),
            ));
        }
    }
    Ok(Dataset::new(manifest, samples))
}
