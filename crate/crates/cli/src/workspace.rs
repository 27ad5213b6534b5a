//! On-disk workspace: one directory holding the shared services (registry
//! and secret store), every entity's key file, the trusted-image list, and
//! pending proposals. Independent `pht` invocations compose through it the
//! way independently operated services would.

use crate::error::CliError;
use pht_core::builder::{Proposal, TrustedImageList};
use pht_core::crypto::KeyPair;
use pht_core::registry::{Principal, Registry, Role, SecretStore};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const WORKSPACE_FILE: &str = "workspace.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntityEntry {
    pub role: Role,
    /// Armored private-key file, relative to the workspace root.
    pub key_file: String,
    /// Real-world station name (stations only; the pseudonym is the id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_name: Option<String>,
    /// Record-store directory (stations only), relative to the root if not
    /// absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WorkspaceFile {
    pub version: u32,
    /// Directory holding the registry and secret-store state.
    pub services_dir: String,
    pub trusted_images_file: String,
    pub proposals_dir: String,
    pub entities: BTreeMap<String, EntityEntry>,
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    pub file: WorkspaceFile,
}

impl Workspace {
    pub fn init(root: &Path) -> Result<Workspace, CliError> {
        let marker = root.join(WORKSPACE_FILE);
        if marker.exists() {
            return Err(CliError::new(
                crate::error::Family::Lifecycle,
                format!("`{}` is already a workspace", root.display()),
            ));
        }
        let file = WorkspaceFile {
            version: 1,
            services_dir: "services".into(),
            trusted_images_file: "trusted_images.txt".into(),
            proposals_dir: "proposals".into(),
            entities: BTreeMap::new(),
        };
        let io = |e: std::io::Error| CliError::internal(format!("workspace setup failed: {e}"));
        std::fs::create_dir_all(root.join(&file.services_dir)).map_err(io)?;
        std::fs::create_dir_all(root.join(&file.proposals_dir)).map_err(io)?;
        std::fs::create_dir_all(root.join("keys")).map_err(io)?;
        std::fs::write(root.join(&file.trusted_images_file), b"").map_err(io)?;
        let ws = Workspace {
            root: root.to_path_buf(),
            file,
        };
        ws.save()?;
        Ok(ws)
    }

    /// Open an existing workspace and check that everything it references
    /// is actually present.
    pub fn open(root: &Path) -> Result<Workspace, CliError> {
        let marker = root.join(WORKSPACE_FILE);
        let bytes = std::fs::read(&marker).map_err(|_| {
            CliError::config(format!(
                "`{}` is not a workspace (no {WORKSPACE_FILE}; run `pht init`)",
                root.display()
            ))
        })?;
        let file: WorkspaceFile = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(format!("{WORKSPACE_FILE} is malformed: {e}")))?;
        let ws = Workspace {
            root: root.to_path_buf(),
            file,
        };
        for path in [ws.services_path(), ws.trusted_path(), ws.proposals_path()] {
            if !path.exists() {
                return Err(CliError::config(format!(
                    "workspace references `{}`, which does not exist",
                    path.display()
                )));
            }
        }
        for (id, entry) in &ws.file.entities {
            if !ws.resolve(&entry.key_file).exists() {
                return Err(CliError::config(format!(
                    "key file for `{id}` is missing: {}",
                    entry.key_file
                )));
            }
            if let Some(data) = &entry.data_path {
                if !ws.resolve(data).exists() {
                    return Err(CliError::config(format!(
                        "data path for `{id}` is missing: {data}"
                    )));
                }
            }
        }
        Ok(ws)
    }

    pub fn save(&self) -> Result<(), CliError> {
        let bytes = serde_json::to_vec_pretty(&self.file)?;
        std::fs::write(self.root.join(WORKSPACE_FILE), bytes)
            .map_err(|e| CliError::internal(format!("cannot write {WORKSPACE_FILE}: {e}")))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolve a workspace-relative path (absolute paths pass through).
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn services_path(&self) -> PathBuf {
        self.root.join(&self.file.services_dir)
    }

    pub fn trusted_path(&self) -> PathBuf {
        self.root.join(&self.file.trusted_images_file)
    }

    pub fn proposals_path(&self) -> PathBuf {
        self.root.join(&self.file.proposals_dir)
    }

    pub fn store(&self) -> Result<SecretStore, CliError> {
        Ok(SecretStore::on_disk(&self.services_path())?)
    }

    pub fn registry(&self) -> Result<Registry, CliError> {
        Ok(Registry::on_disk(&self.services_path())?)
    }

    pub fn entity(&self, id: &str) -> Result<&EntityEntry, CliError> {
        self.file
            .entities
            .get(id)
            .ok_or_else(|| CliError::config(format!("entity `{id}` is not in this workspace")))
    }

    /// The sole builder entity (the router/train-manager identity).
    pub fn builder_id(&self) -> Result<String, CliError> {
        self.file
            .entities
            .iter()
            .find(|(_, e)| e.role == Role::Builder)
            .map(|(id, _)| id.clone())
            .ok_or_else(|| CliError::config("no builder is registered in this workspace"))
    }

    pub fn keypair(&self, id: &str) -> Result<KeyPair, CliError> {
        let entry = self.entity(id)?;
        let path = self.resolve(&entry.key_file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::config(format!("cannot read key file {}: {e}", path.display())))?;
        let keypair = KeyPair::from_armored(&text)
            .map_err(|e| CliError::config(format!("key file {} is invalid: {e}", path.display())))?;
        if keypair.entity_id() != id {
            return Err(CliError::config(format!(
                "key file {} belongs to `{}`, not `{id}`",
                path.display(),
                keypair.entity_id()
            )));
        }
        Ok(keypair)
    }

    pub fn principal(&self, id: &str) -> Result<Principal, CliError> {
        Ok(Principal::with_key(&self.keypair(id)?))
    }

    pub fn trusted_list(&self) -> Result<TrustedImageList, CliError> {
        TrustedImageList::from_file(&self.trusted_path()).map_err(CliError::from)
    }

    pub fn add_trusted(&self, image_id: &str) -> Result<(), CliError> {
        let path = self.trusted_path();
        let mut text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::internal(format!("cannot read trusted list: {e}")))?;
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(image_id);
        text.push('\n');
        std::fs::write(&path, text)
            .map_err(|e| CliError::internal(format!("cannot write trusted list: {e}")))
    }

    pub fn proposal_path(&self, proposal_id: &str) -> PathBuf {
        self.proposals_path().join(format!("{proposal_id}.json"))
    }

    pub fn load_proposal(&self, proposal_id: &str) -> Result<Proposal, CliError> {
        let path = self.proposal_path(proposal_id);
        let bytes = std::fs::read(&path).map_err(|_| {
            CliError::new(
                crate::error::Family::NotFound,
                format!("no proposal `{proposal_id}` in this workspace"),
            )
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::internal(format!("proposal file is corrupt: {e}")))
    }

    pub fn save_proposal(&self, proposal: &Proposal) -> Result<(), CliError> {
        let bytes = serde_json::to_vec_pretty(proposal)?;
        std::fs::write(self.proposal_path(&proposal.proposal_id), bytes)
            .map_err(|e| CliError::internal(format!("cannot write proposal: {e}")))
    }

    pub fn add_entity(&mut self, id: &str, entry: EntityEntry) -> Result<(), CliError> {
        self.file.entities.insert(id.to_string(), entry);
        self.save()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Family;

    #[test]
    fn init_refuses_an_existing_workspace() {
        let tmp = tempfile::tempdir().unwrap();
        Workspace::init(tmp.path()).unwrap();
        assert_eq!(Workspace::init(tmp.path()).unwrap_err().family, Family::Lifecycle);
    }

    #[test]
    fn open_requires_the_marker_file() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(Workspace::open(tmp.path()).unwrap_err().family, Family::Config);
    }

    #[test]
    fn relative_paths_resolve_against_the_workspace_root() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = Workspace::init(tmp.path()).unwrap();
        assert_eq!(ws.resolve("/abs/path"), PathBuf::from("/abs/path"));
        assert_eq!(ws.resolve("rel"), tmp.path().join("rel"));
    }
}
