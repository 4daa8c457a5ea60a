//! Installed weight files and the currently serving model.
//!
//! Files live at `<dir>/<sha256>.ferw`; `<dir>/index.json` records display
//! names, install times and the active id so the registry survives restarts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use fer_core::model::ferw;
use fer_core::Model;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::store::content_id;

const INDEX: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_id: String,
    pub name: String,
    pub installed_at: DateTime<Utc>,
    pub active: bool,
}

/// The serving model together with its id, swapped as one unit.
#[derive(Debug)]
pub struct ActiveModel {
    pub id: String,
    pub model: Model,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    entries: Vec<ModelEntry>,
}

#[derive(Debug)]
pub struct ModelRegistry {
    dir: PathBuf,
    entries: RwLock<Vec<ModelEntry>>,
    active: RwLock<Option<Arc<ActiveModel>>>,
}

impl ModelRegistry {
    /// Open or create the registry and load the previously active model.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        let index_path = dir.join(INDEX);
        let index: Index = match fs::read(&index_path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| ServiceError::Storage(format!("{}: {e}", index_path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
            Err(e) => return Err(ServiceError::io(&index_path, e)),
        };
        let registry = Self {
            dir: dir.to_path_buf(),
            entries: RwLock::new(index.entries),
            active: RwLock::new(None),
        };
        let active_id = registry.list().into_iter().find(|e| e.active).map(|e| e.model_id);
        if let Some(id) = active_id {
            let model = registry.load(&id)?;
            *registry.active.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(ActiveModel { id, model }));
        }
        Ok(registry)
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.ferw"))
    }

    fn load(&self, id: &str) -> Result<Model, ServiceError> {
        let bytes = fs::read(self.path(id)).map_err(|e| ServiceError::io(&self.path(id), e))?;
        ferw::from_bytes(&bytes).map_err(|e| ServiceError::InvalidModel(e.to_string()))
    }

    pub fn list(&self) -> Vec<ModelEntry> {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn active(&self) -> Option<Arc<ActiveModel>> {
        self.active.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Validate and install a weight file under its content hash. The first
    /// model installed into an empty registry is activated so that a model is
    /// always serving once any exists. Returns the entry and whether it is new.
    pub fn install(&self, bytes: &[u8], name: Option<&str>) -> Result<(ModelEntry, bool), ServiceError> {
        let model = ferw::from_bytes(bytes).map_err(|e| ServiceError::InvalidModel(e.to_string()))?;
        let id = content_id(bytes);
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        if let Some(existing) = entries.iter().find(|e| e.model_id == id) {
            return Ok((existing.clone(), false));
        }
        let path = self.path(&id);
        write_atomically(&path, bytes)?;
        let first = entries.is_empty();
        let entry = ModelEntry {
            model_id: id.clone(),
            name: name.map_or_else(|| model.spec().name.clone(), str::to_string),
            installed_at: Utc::now(),
            active: first,
        };
        entries.push(entry.clone());
        self.save_index(&entries)?;
        if first {
            *self.active.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(ActiveModel { id, model }));
        }
        log::info!("installed model {} ({})", entry.model_id, entry.name);
        Ok((entry, true))
    }

    /// Make `id` the serving model. Requests already holding the previous
    /// model finish on it.
    pub fn activate(&self, id: &str) -> Result<ModelEntry, ServiceError> {
        if !self.list().iter().any(|e| e.model_id == id) {
            return Err(ServiceError::UnknownModel(id.to_string()));
        }
        let model = self.load(id)?;
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        for e in entries.iter_mut() {
            e.active = e.model_id == id;
        }
        self.save_index(&entries)?;
        *self.active.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(ActiveModel {
            id: id.to_string(),
            model,
        }));
        log::info!("activated model {id}");
        Ok(entries.iter().find(|e| e.model_id == id).cloned().expect("checked above"))
    }

    fn save_index(&self, entries: &[ModelEntry]) -> Result<(), ServiceError> {
        let json = serde_json::to_vec_pretty(&Index {
            entries: entries.to_vec(),
        })
        .map_err(|e| ServiceError::Storage(e.to_string()))?;
        write_atomically(&self.dir.join(INDEX), &json)
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|()| fs::rename(&tmp, path))
        .map_err(|e| ServiceError::io(path, e))
}
