//! Lesion records and metadata CSV ingestion.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// JPEG decoding is compiled in alongside the mandatory PNG and PPM decoders.
pub const JPEG_SUPPORTED: bool = true;

const EXTENSIONS: [&str; 4] = ["png", "ppm", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lesion {
    #[serde(rename = "AKIEC")]
    Akiec,
    #[serde(rename = "BCC")]
    Bcc,
    #[serde(rename = "BKL")]
    Bkl,
    #[serde(rename = "DF")]
    Df,
    #[serde(rename = "MEL")]
    Mel,
    #[serde(rename = "NV")]
    Nv,
    #[serde(rename = "VASC")]
    Vasc,
}

impl Lesion {
    pub const ALL: [Lesion; 7] = [
        Lesion::Akiec,
        Lesion::Bcc,
        Lesion::Bkl,
        Lesion::Df,
        Lesion::Mel,
        Lesion::Nv,
        Lesion::Vasc,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Lesion> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Lesion::Akiec => "AKIEC",
            Lesion::Bcc => "BCC",
            Lesion::Bkl => "BKL",
            Lesion::Df => "DF",
            Lesion::Mel => "MEL",
            Lesion::Nv => "NV",
            Lesion::Vasc => "VASC",
        }
    }

    /// The lowercase `dx` value used by the public metadata file.
    pub fn dx(self) -> &'static str {
        match self {
            Lesion::Akiec => "akiec",
            Lesion::Bcc => "bcc",
            Lesion::Bkl => "bkl",
            Lesion::Df => "df",
            Lesion::Mel => "mel",
            Lesion::Nv => "nv",
            Lesion::Vasc => "vasc",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|l| l.code().to_string()).collect()
    }
}

impl fmt::Display for Lesion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Lesion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let t = s.trim();
        Lesion::ALL
            .iter()
            .copied()
            .find(|l| l.code().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown lesion class {s:?}"))
    }
}

/// Diagnostic method that confirmed a label, ordered by difficulty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DxType {
    Consensus,
    Serial,
    Confocal,
    Histo,
}

impl DxType {
    pub const ALL: [DxType; 4] = [DxType::Consensus, DxType::Serial, DxType::Confocal, DxType::Histo];

    /// Maps metadata spellings; empty means absent.
    pub fn parse(s: &str) -> std::result::Result<Option<DxType>, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" => Ok(None),
            "consensus" | "expert consensus" => Ok(Some(DxType::Consensus)),
            "follow_up" | "serial" | "serial imaging showed no change" => Ok(Some(DxType::Serial)),
            "confocal" | "confocal microscopy" => Ok(Some(DxType::Confocal)),
            "histo" | "histopathology" => Ok(Some(DxType::Histo)),
            other => Err(format!("unknown dx_type {other:?}")),
        }
    }

    pub fn metadata_name(self) -> &'static str {
        match self {
            DxType::Consensus => "consensus",
            DxType::Serial => "follow_up",
            DxType::Confocal => "confocal",
            DxType::Histo => "histo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub image_id: String,
    pub image: RgbImage,
    pub label: Lesion,
    pub dx_type: Option<DxType>,
}

/// A metadata row that could not become a record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub records: Vec<DatasetRecord>,
    pub rejected: Vec<Rejection>,
}

pub fn find_image(image_dir: &Path, image_id: &str) -> Option<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|ext| image_dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

pub fn decode_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

/// Reads the metadata CSV (`image_id`, `dx`, `dx_type` required; extra
/// columns ignored) and decodes one image per row. Rows with unknown classes
/// or missing/undecodable images are rejected and counted; a malformed CSV
/// fails the whole load.
pub fn load_dataset(image_dir: impl AsRef<Path>, metadata_csv: impl AsRef<Path>) -> Result<LoadedDataset> {
    let image_dir = image_dir.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(metadata_csv.as_ref())?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data(format!("metadata is missing required column {name}")))
    };
    let (id_col, dx_col, dxt_col) = (column("image_id")?, column("dx")?, column("dx_type")?);

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let image_id = row.get(id_col).unwrap_or_default().to_string();
        let mut reject = |reason: String| {
            log::warn!("metadata row {}: {reason}", i + 1);
            rejected.push(Rejection { row: i + 1, image_id: image_id.clone(), reason });
        };
        let label = match row.get(dx_col).unwrap_or_default().parse::<Lesion>() {
            Ok(l) => l,
            Err(e) => {
                reject(e);
                continue;
            }
        };
        let dx_type = match DxType::parse(row.get(dxt_col).unwrap_or_default()) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("metadata row {}: {e}, treating as absent", i + 1);
                None
            }
        };
        let Some(path) = find_image(image_dir, &image_id) else {
            reject(format!("no image file for {image_id:?} in {}", image_dir.display()));
            continue;
        };
        match decode_image(&path) {
            Ok(image) => records.push(DatasetRecord { image_id: image_id.clone(), image, label, dx_type }),
            Err(e) => reject(format!("cannot decode {}: {e}", path.display())),
        }
    }
    Ok(LoadedDataset { records, rejected })
}

/// Writes records as PNG files plus a metadata CSV in the public layout.
/// Every file is written atomically; the metadata goes last.
pub fn write_dataset(records: &[DatasetRecord], image_dir: impl AsRef<Path>, metadata_csv: impl AsRef<Path>) -> Result<()> {
    let image_dir = image_dir.as_ref();
    std::fs::create_dir_all(image_dir)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["image_id", "dx", "dx_type"])?;
    for r in records {
        write_atomic(image_dir.join(format!("{}.png", r.image_id)), &encode_png(&r.image)?)?;
        writer.write_record([r.image_id.as_str(), r.label.dx(), r.dx_type.map_or("", |d| d.metadata_name())])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(metadata_csv, &bytes)
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut bytes = std::io::Cursor::new(Vec::new());
    image.write_to(&mut bytes, image::ImageFormat::Png)?;
    Ok(bytes.into_inner())
}

pub fn class_counts(labels: impl IntoIterator<Item = Lesion>) -> [usize; Lesion::COUNT] {
    let mut counts = [0; Lesion::COUNT];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}
