//! Consent-gated image store: content-addressed blobs plus an append-only
//! JSON-lines log of classification events.
//!
//! Layout under the root:
//!
//! ```text
//! blobs/<sha256>.<png|jpg>
//! records.jsonl
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use fer_core::preprocess::CropBox;
use fer_core::EmotionLabel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;

const BLOB_DIR: &str = "blobs";
const LOG_FILE: &str = "records.jsonl";
const MANIFEST: &str = "manifest.json";
const PREDICTED_DIR: &str = "predicted";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Webcam,
    #[default]
    Upload,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: EmotionLabel,
    pub confidence: f32,
}

/// One consented classification event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Lowercase hex SHA-256 of the original image bytes.
    pub id: String,
    pub captured_at: DateTime<Utc>,
    pub source: Source,
    pub crop: Option<CropBox>,
    /// Top three, descending.
    pub predictions: Vec<Prediction>,
    pub consent: bool,
    pub user_label: Option<EmotionLabel>,
    pub model_id: String,
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn extension_for(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        "jpg"
    } else {
        "png"
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    /// Serializes appends to the log.
    writer: Mutex<()>,
}

impl Store {
    /// Open or create a store rooted at `root`.
    pub fn open(root: &Path) -> Result<Self, ServiceError> {
        let blobs = root.join(BLOB_DIR);
        fs::create_dir_all(&blobs).map_err(|e| ServiceError::io(&blobs, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Fails when the root or blob directory has gone away.
    pub fn check(&self) -> Result<(), ServiceError> {
        for dir in [self.root.clone(), self.root.join(BLOB_DIR)] {
            let meta = fs::metadata(&dir).map_err(|e| ServiceError::io(&dir, e))?;
            if !meta.is_dir() {
                return Err(ServiceError::Storage(format!("{} is not a directory", dir.display())));
            }
        }
        Ok(())
    }

    fn blob_path(&self, id: &str, bytes: &[u8]) -> PathBuf {
        self.root.join(BLOB_DIR).join(format!("{id}.{}", extension_for(bytes)))
    }

    /// Persist the image (once per hash) and append the event. Rejects the
    /// record before touching disk unless it carries consent and its id is
    /// the hash of `bytes`.
    pub fn persist(&self, record: &ImageRecord, bytes: &[u8]) -> Result<String, ServiceError> {
        if !record.consent {
            return Err(ServiceError::ConsentRequired);
        }
        if record.id != content_id(bytes) {
            return Err(ServiceError::BadRequest("record id does not match the image hash".into()));
        }
        self.check()?;
        let mut line = serde_json::to_vec(record).map_err(|e| ServiceError::Storage(e.to_string()))?;
        line.push(b'\n');

        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let blob = self.blob_path(&record.id, bytes);
        if !blob.exists() {
            write_atomically(&blob, bytes)?;
        }
        let log_path = self.root.join(LOG_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| ServiceError::io(&log_path, e))?;
        // A torn final line from an earlier crash must not swallow this one.
        if ends_mid_line(&mut log).map_err(|e| ServiceError::io(&log_path, e))? {
            line.insert(0, b'\n');
        }
        log.write_all(&line)
            .and_then(|()| log.sync_data())
            .map_err(|e| ServiceError::io(&log_path, e))?;
        Ok(record.id.clone())
    }

    /// Every complete event in append order. Torn or unparseable lines are
    /// skipped with a warning.
    pub fn records(&self) -> Result<Vec<ImageRecord>, ServiceError> {
        self.check()?;
        let log_path = self.root.join(LOG_FILE);
        let text = match fs::read_to_string(&log_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(ServiceError::io(&log_path, e)),
        };
        let mut out = Vec::new();
        let complete = text.rfind('\n').map_or("", |end| &text[..end]);
        for (n, line) in complete.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ImageRecord>(line) {
                Ok(r) => out.push(r),
                Err(e) => log::warn!("{}: skipping line {}: {e}", log_path.display(), n + 1),
            }
        }
        Ok(out)
    }

    /// Number of distinct images with at least one recorded event.
    pub fn image_count(&self) -> Result<usize, ServiceError> {
        Ok(self.records()?.iter().map(|r| r.id.as_str()).collect::<HashSet<_>>().len())
    }

    /// Original bytes of a stored image.
    pub fn blob(&self, id: &str) -> Result<(Vec<u8>, &'static str), ServiceError> {
        for ext in ["png", "jpg"] {
            let path = self.root.join(BLOB_DIR).join(format!("{id}.{ext}"));
            match fs::read(&path) {
                Ok(bytes) => return Ok((bytes, ext)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(ServiceError::io(&path, e)),
            }
        }
        Err(ServiceError::Storage(format!("blob {id} is missing")))
    }

    /// Write a tar archive in the evaluation dataset layout: human-labelled
    /// images under `<label>/`, others under `predicted/<top-1 label>/`, and
    /// `manifest.json` describing every exported image. Each image appears
    /// once, described by its latest event; its label is the most recent
    /// human label given for it.
    pub fn export(&self, labeled_only: bool, out: impl Write) -> Result<ExportSummary, ServiceError> {
        let mut latest: BTreeMap<String, ImageRecord> = BTreeMap::new();
        let mut order = Vec::new();
        for record in self.records()? {
            let label = record.user_label;
            let entry = latest.entry(record.id.clone()).or_insert_with(|| {
                order.push(record.id.clone());
                record.clone()
            });
            let keep_label = entry.user_label;
            *entry = record;
            entry.user_label = label.or(keep_label);
        }

        let mut builder = tar::Builder::new(out);
        let mut rows = Vec::new();
        let mut labeled = 0;
        for id in &order {
            let record = &latest[id];
            let path = match (record.user_label, record.predictions.first()) {
                (Some(label), _) => format!("{label}/"),
                (None, Some(top)) if !labeled_only => format!("{PREDICTED_DIR}/{}/", top.label),
                _ => continue,
            };
            let (bytes, ext) = self.blob(id)?;
            let path = format!("{path}{id}.{ext}");
            append_file(&mut builder, &path, &bytes)?;
            labeled += usize::from(record.user_label.is_some());
            rows.push(ManifestRow {
                path,
                record: record.clone(),
            });
        }
        let summary = ExportSummary {
            record_count: rows.len(),
            labeled_count: labeled,
            labeled_only,
        };
        let manifest = Manifest {
            summary: summary.clone(),
            records: rows,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| ServiceError::Storage(e.to_string()))?;
        append_file(&mut builder, MANIFEST, &json)?;
        builder
            .into_inner()
            .and_then(|mut w| w.flush())
            .map_err(|e| ServiceError::Storage(format!("writing archive: {e}")))?;
        Ok(summary)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub record_count: usize,
    pub labeled_count: usize,
    pub labeled_only: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    #[serde(flatten)]
    pub record: ImageRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub summary: ExportSummary,
    pub records: Vec<ManifestRow>,
}

fn append_file<W: Write>(builder: &mut tar::Builder<W>, path: &str, bytes: &[u8]) -> Result<(), ServiceError> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder
        .append_data(&mut header, path, bytes)
        .map_err(|e| ServiceError::Storage(format!("writing archive entry {path}: {e}")))
}

fn ends_mid_line(file: &mut File) -> std::io::Result<bool> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}

/// Write to a sibling temporary file, sync, then rename into place.
fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(ServiceError::io(path, e));
    }
    Ok(())
}
