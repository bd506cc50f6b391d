use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pgm::read_pgm_dimensions;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// Ground-truth presentation species.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Live,
    Printed,
    Contact,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Live, Label::Printed, Label::Contact];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Live => "live",
            Label::Printed => "printed",
            Label::Contact => "contact",
        }
    }

    pub fn is_attack(self) -> bool {
        self != Label::Live
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(Label::Live),
            "printed" => Ok(Label::Printed),
            "contact" => Ok(Label::Contact),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Test => "test",
        }
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Subset::Train),
            "test" => Ok(Subset::Test),
            other => Err(format!("unknown subset '{other}'")),
        }
    }
}

/// Pixel rectangle `[x_min, x_max) × [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.check_nonempty()?;
        Ok(b)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Argument(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        self.check_nonempty()?;
        if self.x_max > width || self.y_max > height {
            return Err(Error::Argument(format!(
                "bounding box {self:?} exceeds {width}×{height} image"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: String,
    pub label: Label,
    pub dataset: String,
    pub subset: Subset,
    pub bbox: Option<BBox>,
}

pub const MANIFEST_HEADER: &str = "image_path,label,dataset,subset,x_min,y_min,x_max,y_max";
const SHORT_HEADER: &str = "image_path,label,dataset,subset";

/// Ordered sample list; relative image paths resolve against `root`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<SampleRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.image_path.as_str()) {
                return Err(Error::Data(format!(
                    "duplicate image path {}",
                    r.image_path
                )));
            }
        }
        Ok(Manifest {
            records,
            root: root.into(),
        })
    }

    /// Parses a manifest; image files are not touched.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_impl(path, false)
    }

    /// Parses a manifest and checks that every image exists and that every
    /// bounding box fits inside its image.
    pub fn load_strict(path: &Path) -> Result<Self> {
        Self::load_impl(path, true)
    }

    fn load_impl(path: &Path, strict: bool) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let err = |line: usize, message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        let mut header_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != MANIFEST_HEADER && line != SHORT_HEADER {
                    return Err(err(lineno, format!("expected header '{MANIFEST_HEADER}'")));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 && fields.len() != 8 {
                return Err(err(
                    lineno,
                    format!("expected 4 or 8 columns, found {}", fields.len()),
                ));
            }
            if fields[0].is_empty() {
                return Err(err(lineno, "empty image_path".into()));
            }
            let label: Label = fields[1].parse().map_err(|m| err(lineno, m))?;
            let subset: Subset = fields[3].parse().map_err(|m| err(lineno, m))?;
            if fields[2].is_empty() {
                return Err(err(lineno, "empty dataset name".into()));
            }
            let bbox = if fields.len() == 8 {
                let mut v = [0usize; 4];
                for (slot, f) in v.iter_mut().zip(&fields[4..]) {
                    *slot = f
                        .parse()
                        .map_err(|_| err(lineno, format!("bad bbox coordinate '{f}'")))?;
                }
                Some(BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| err(lineno, e.to_string()))?)
            } else {
                None
            };
            if !seen.insert(fields[0].to_string()) {
                return Err(err(lineno, format!("duplicate image path {}", fields[0])));
            }
            let record = SampleRecord {
                image_path: fields[0].to_string(),
                label,
                dataset: fields[2].to_string(),
                subset,
                bbox,
            };
            if strict {
                let file = root.join(&record.image_path);
                let (w, h) = read_pgm_dimensions(&file).map_err(|e| err(lineno, e.to_string()))?;
                if let Some(b) = &record.bbox {
                    b.check_within(w, h)
                        .map_err(|e| err(lineno, e.to_string()))?;
                }
            }
            records.push(record);
        }
        if !header_seen {
            return Err(err(1, "missing header row".into()));
        }
        Ok(Manifest { records, root })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            if r.image_path.contains([',', '\n', '\r']) || r.dataset.contains([',', '\n', '\r']) {
                return Err(Error::Data(format!(
                    "cannot encode '{}' in a manifest row",
                    r.image_path
                )));
            }
            out.push_str(&format!(
                "{},{},{},{}",
                r.image_path,
                r.label,
                r.dataset,
                r.subset.as_str()
            ));
            if let Some(b) = &r.bbox {
                out.push_str(&format!(",{},{},{},{}", b.x_min, b.y_min, b.x_max, b.y_max));
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.image_path)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dataset names in order of first appearance.
    pub fn datasets(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.records {
            if !names.contains(&r.dataset) {
                names.push(r.dataset.clone());
            }
        }
        names
    }

    /// Records passing `keep`, same root.
    pub fn filtered(&self, keep: impl Fn(&SampleRecord) -> bool) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            root: self.root.clone(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }
}
