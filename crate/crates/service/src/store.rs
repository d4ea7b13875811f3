//! One JSON document per session, replaced atomically on every transition.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use frugal_core::SessionState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ServiceError, ServiceResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolRef {
    pub path: PathBuf,
    pub sha256: String,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub pool_ref: PoolRef,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
    pub state: SessionState,
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> ServiceResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, record: &SessionRecord) -> ServiceResult<()> {
        let text = serde_json::to_vec_pretty(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let target = self.path_of(&record.session_id);
        let tmp = self.dir.join(format!(".{}.json.tmp", record.session_id));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&text)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        Ok(())
    }

    /// `None` when no document exists for `id`.
    pub fn load(&self, id: &str) -> ServiceResult<Option<SessionRecord>> {
        if !valid_id(id) {
            return Ok(None);
        }
        let bytes = match fs::read(self.path_of(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let record: SessionRecord =
            serde_json::from_slice(&bytes).map_err(|e| ServiceError::Internal(format!("corrupt session {id}: {e}")))?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(ServiceError::Internal(format!(
                "session {id} has schema version {}, expected {SCHEMA_VERSION}",
                record.schema_version
            )));
        }
        Ok(Some(record))
    }
}

/// Session ids are generated hyphenated UUIDs; anything else never touches the
/// file system.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_hexdigit() || c == '-')
}
