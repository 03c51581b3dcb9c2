//! Label palettes: ordered `(id, color, name)` entries with exactly one
//! entry marked as the ignored label.

use std::path::Path;

use crate::error::{Error, Result};

const CITYSCAPES: &str = include_str!("../assets/cityscapes.palette");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteEntry {
    pub id: u8,
    pub color: [u8; 3],
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
    ignored: u8,
}

impl Palette {
    /// The 19 Cityscapes training classes plus the ignored label 19.
    pub fn cityscapes() -> Self {
        Palette::parse(CITYSCAPES, "<builtin cityscapes>").expect("builtin palette is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Palette::parse(&text, &path.display().to_string())
    }

    /// Parses `id r g b name [ignored]` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Format {
            path: origin.into(),
            msg: format!("line {line}: {msg}"),
        };
        let mut entries = Vec::new();
        let mut ignored = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 && !(f.len() == 6 && f[5] == "ignored") {
                return Err(bad(i + 1, format!("expected `id r g b name [ignored]`, got `{line}`")));
            }
            let num = |s: &str| s.parse::<u8>().map_err(|_| bad(i + 1, format!("`{s}` is not a byte")));
            let id = num(f[0])?;
            let color = [num(f[1])?, num(f[2])?, num(f[3])?];
            if f.len() == 6 {
                if ignored.is_some() {
                    return Err(bad(i + 1, "more than one ignored entry".into()));
                }
                ignored = Some(id);
            }
            entries.push(PaletteEntry {
                id,
                color,
                name: f[4].to_string(),
            });
        }
        let ignored = ignored.ok_or_else(|| bad(0, "no entry marked ignored".into()))?;
        Palette::new(entries, ignored).map_err(|e| match e {
            Error::Config(m) => bad(0, m),
            e => e,
        })
    }

    pub fn new(mut entries: Vec<PaletteEntry>, ignored: u8) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        if entries.is_empty() {
            return Err(Error::Config("palette is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Config(format!(
                    "label ids must be unique and contiguous from 0; missing or repeated id near {}",
                    e.id
                )));
            }
        }
        for (i, a) in entries.iter().enumerate() {
            if entries[..i].iter().any(|b| b.color == a.color) {
                return Err(Error::Config(format!("color {:?} of {} is not unique", a.color, a.name)));
            }
        }
        if ignored as usize >= entries.len() {
            return Err(Error::Config(format!("ignored id {ignored} is not in the palette")));
        }
        Ok(Palette { entries, ignored })
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ignored(&self) -> u8 {
        self.ignored
    }

    pub fn color(&self, id: u8) -> Option<[u8; 3]> {
        self.entries.get(id as usize).map(|e| e.color)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    /// Label whose color is nearest in RGB; ties go to the lowest id.
    pub fn nearest(&self, rgb: [u8; 3]) -> u8 {
        let mut best = (u32::MAX, 0u8);
        for e in &self.entries {
            let d: u32 = (0..3)
                .map(|k| {
                    let t = rgb[k] as i32 - e.color[k] as i32;
                    (t * t) as u32
                })
                .sum();
            if d < best.0 {
                best = (d, e.id);
            }
        }
        best.1
    }

    /// Serialized form accepted by [`Palette::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let [r, g, b] = e.color;
            s.push_str(&format!("{} {r} {g} {b} {}", e.id, e.name));
            if e.id == self.ignored {
                s.push_str(" ignored");
            }
            s.push('\n');
        }
        s
    }
}
