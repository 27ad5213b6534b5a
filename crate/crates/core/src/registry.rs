//! Simulated infrastructure: the image registry and the secret store.
//!
//! The registry is deliberately modeled as an untrusted carrier. It moves
//! train images between repos (`incoming` → each `station:<pid>` →
//! `outgoing`), enforces per-repo ACLs, and keeps a full push history — and
//! it also exposes `tamper`, the malicious-registry half of the threat
//! model, which rewrites images in transit using only information a
//! registry legitimately holds (the bytes, the push history, and the
//! world-readable public key directory). Nothing the registry can do should
//! survive a station's verification pass; the protocol, not the registry,
//! is the trust anchor.
//!
//! The secret store is the trusted side: the entity key directory, the
//! station name → pseudonym mapping visible only to the train builder, and
//! per-train routes readable by the router and the route's own stations.
//!
//! Both services run in memory (mutex-guarded state, caller-asserted
//! identity) or on disk (one file per image/key/route, signed request
//! envelopes for registry access, atomic renames for image moves).
//!
//! Train-repo pulls are checkouts: the image leaves the repo while a
//! station processes it and returns on push-back, which is how the router
//! can tell "still executing" from "ready to move on". Pulls from
//! `trusted-base` copy, since base images are shared immutable artifacts.

use crate::crypto::{
    self, canonical_encode, hash, hex_array32, hex_bytes, CryptoError, KeyPair, PublicKey,
    Signature,
};
use crate::model::{self, ModelError, Route};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("entity `{0}` is already registered")]
    DuplicateEntity(String),
    #[error("entity `{0}` is not registered")]
    UnknownEntity(String),
    #[error("a builder is already registered as `{0}`; only one builder may exist")]
    BuilderExists(String),
    #[error("no builder is registered")]
    NoBuilder,
    #[error("station name `{0}` is already assigned a pseudonym")]
    DuplicateStationName(String),
    #[error("station name `{0}` is not registered")]
    UnknownStationName(String),
    #[error("principal `{0}` is not the router")]
    NotRouter(String),
    #[error("station `{pid}` is not a participant of train `{train_id}`")]
    NotParticipant { pid: String, train_id: String },
    #[error("a route for train `{0}` already exists")]
    RouteExists(String),
    #[error("no route is stored for train `{0}`")]
    UnknownRoute(String),
    #[error("secret store I/O failure: {0}")]
    Io(String),
    #[error("secret store state is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("principal `{principal}` may not {action} repo `{repo}`")]
    AccessDenied {
        principal: String,
        action: Action,
        repo: RepoName,
    },
    #[error("disk registry access requires a signing key for principal `{0}`")]
    AuthRequired(String),
    #[error("request signature for principal `{0}` did not verify")]
    AuthFailed(String),
    #[error("repo `{0}` does not exist")]
    UnknownRepo(String),
    #[error("image `{image_id}` not found in repo `{repo}`")]
    NotFound { repo: RepoName, image_id: String },
    #[error("train `{train_id}` is not in repo `{repo}` (not yet pushed back)")]
    MissingImage { repo: RepoName, train_id: String },
    #[error("train `{0}` has already reached the outgoing repo")]
    TerminalRoute(String),
    #[error("train `{0}` has not finished its route")]
    NotFinished(String),
    #[error("tamper operation failed: {0}")]
    TamperFailed(String),
    #[error("registry I/O failure: {0}")]
    Io(String),
    #[error("registry state is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

// ---------------------------------------------------------------------------
// Identities

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Station,
    Builder,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "user",
            Role::Station => "station",
            Role::Builder => "builder",
        })
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Role::User),
            "station" => Ok(Role::Station),
            "builder" => Ok(Role::Builder),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// The identity a service call runs as. The in-memory backends trust the
/// asserted id; the disk registry additionally demands a signing key so
/// requests can be verified against the key directory.
#[derive(Clone, Debug)]
pub struct Principal {
    id: String,
    keypair: Option<KeyPair>,
}

impl Principal {
    pub fn of(id: &str) -> Self {
        Principal {
            id: id.to_string(),
            keypair: None,
        }
    }

    pub fn with_key(keypair: &KeyPair) -> Self {
        Principal {
            id: keypair.entity_id().to_string(),
            keypair: Some(keypair.clone()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

// ---------------------------------------------------------------------------
// Secret store

#[derive(Default)]
struct MemoryStore {
    keys: BTreeMap<String, (Role, PublicKey)>,
    routes: BTreeMap<String, Route>,
    station_names: BTreeMap<String, String>,
}

enum StoreBackend {
    Memory(Mutex<MemoryStore>),
    Disk { root: PathBuf },
}

/// Trusted key directory, station-name mapping, and per-train route store.
pub struct SecretStore {
    backend: StoreBackend,
}

impl SecretStore {
    pub fn in_memory() -> Self {
        SecretStore {
            backend: StoreBackend::Memory(Mutex::new(MemoryStore::default())),
        }
    }

    pub fn on_disk(root: &Path) -> Result<Self, StoreError> {
        let io = |e: std::io::Error| StoreError::Io(e.to_string());
        std::fs::create_dir_all(root.join("secrets").join("keys")).map_err(io)?;
        std::fs::create_dir_all(root.join("secrets").join("routes")).map_err(io)?;
        Ok(SecretStore {
            backend: StoreBackend::Disk {
                root: root.to_path_buf(),
            },
        })
    }

    fn mem(&self) -> Option<std::sync::MutexGuard<'_, MemoryStore>> {
        match &self.backend {
            StoreBackend::Memory(m) => Some(m.lock().expect("store mutex never poisoned")),
            StoreBackend::Disk { .. } => None,
        }
    }

    fn disk_root(&self) -> Option<&Path> {
        match &self.backend {
            StoreBackend::Memory(_) => None,
            StoreBackend::Disk { root } => Some(root),
        }
    }

    fn key_path(root: &Path, entity_id: &str) -> PathBuf {
        root.join("secrets").join("keys").join(format!("{entity_id}.pub"))
    }

    fn route_path(root: &Path, train_id: &str) -> PathBuf {
        root.join("secrets").join("routes").join(format!("{train_id}.json"))
    }

    fn names_path(root: &Path) -> PathBuf {
        root.join("secrets").join("station_names.json")
    }

    /// Register an entity's public key under a role. Entity ids are unique
    /// and at most one builder may ever be registered.
    pub fn register_entity(
        &self,
        entity_id: &str,
        role: Role,
        key: &PublicKey,
    ) -> Result<(), StoreError> {
        if entity_id.is_empty() {
            return Err(StoreError::Corrupt("entity id must be non-empty".into()));
        }
        if role == Role::Builder {
            if let Some(existing) = self.builder_id_opt()? {
                return Err(StoreError::BuilderExists(existing));
            }
        }
        if let Some(mut mem) = self.mem() {
            if mem.keys.contains_key(entity_id) {
                return Err(StoreError::DuplicateEntity(entity_id.to_string()));
            }
            mem.keys.insert(entity_id.to_string(), (role, key.clone()));
            return Ok(());
        }
        let root = self.disk_root().unwrap();
        let path = Self::key_path(root, entity_id);
        if path.exists() {
            return Err(StoreError::DuplicateEntity(entity_id.to_string()));
        }
        let armored = crypto::armor_public_key(key, entity_id, &[("Role", &role.to_string())]);
        std::fs::write(&path, armored).map_err(|e| StoreError::Io(e.to_string()))
    }

    fn read_disk_entity(path: &Path) -> Result<(String, Role, PublicKey), StoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| StoreError::Io(e.to_string()))?;
        let (id, headers, key) = crypto::parse_public_key_armor(&text)
            .map_err(|e| StoreError::Corrupt(e.to_string()))?;
        let role = headers
            .iter()
            .find(|(k, _)| k == "Role")
            .ok_or_else(|| StoreError::Corrupt(format!("{}: missing Role header", path.display())))?
            .1
            .parse::<Role>()
            .map_err(StoreError::Corrupt)?;
        Ok((id, role, key))
    }

    fn entity(&self, entity_id: &str) -> Result<(Role, PublicKey), StoreError> {
        if let Some(mem) = self.mem() {
            return mem
                .keys
                .get(entity_id)
                .cloned()
                .ok_or_else(|| StoreError::UnknownEntity(entity_id.to_string()));
        }
        let root = self.disk_root().unwrap();
        let path = Self::key_path(root, entity_id);
        if !path.exists() {
            return Err(StoreError::UnknownEntity(entity_id.to_string()));
        }
        let (id, role, key) = Self::read_disk_entity(&path)?;
        if id != entity_id {
            return Err(StoreError::Corrupt(format!(
                "key file for `{entity_id}` holds entity id `{id}`"
            )));
        }
        Ok((role, key))
    }

    /// Public keys are world-readable: any participant may fetch any key.
    pub fn public_key(&self, entity_id: &str) -> Result<PublicKey, StoreError> {
        Ok(self.entity(entity_id)?.1)
    }

    pub fn role(&self, entity_id: &str) -> Result<Role, StoreError> {
        Ok(self.entity(entity_id)?.0)
    }

    fn entities(&self) -> Result<Vec<(String, Role)>, StoreError> {
        if let Some(mem) = self.mem() {
            return Ok(mem
                .keys
                .iter()
                .map(|(id, (role, _))| (id.clone(), *role))
                .collect());
        }
        let root = self.disk_root().unwrap();
        let dir = root.join("secrets").join("keys");
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| StoreError::Io(e.to_string()))? {
            let entry = entry.map_err(|e| StoreError::Io(e.to_string()))?;
            let (id, role, _) = Self::read_disk_entity(&entry.path())?;
            out.push((id, role));
        }
        out.sort();
        Ok(out)
    }

    fn builder_id_opt(&self) -> Result<Option<String>, StoreError> {
        Ok(self
            .entities()?
            .into_iter()
            .find(|(_, role)| *role == Role::Builder)
            .map(|(id, _)| id))
    }

    /// The single registered builder (the router identity).
    pub fn builder_id(&self) -> Result<String, StoreError> {
        self.builder_id_opt()?.ok_or(StoreError::NoBuilder)
    }

    /// All registered station pseudonyms.
    pub fn station_pids(&self) -> Result<Vec<String>, StoreError> {
        Ok(self
            .entities()?
            .into_iter()
            .filter(|(_, role)| *role == Role::Station)
            .map(|(id, _)| id)
            .collect())
    }

    /// Mint an opaque pseudonym for a real station name. The mapping is
    /// stored here; only the builder may read it back.
    pub fn assign_station_pid(&self, real_name: &str) -> Result<String, StoreError> {
        if real_name.is_empty() {
            return Err(StoreError::Corrupt("station name must be non-empty".into()));
        }
        let mint = |taken: &dyn Fn(&str) -> bool| -> String {
            loop {
                let mut raw = [0u8; 4];
                use rand::RngCore;
                rand::rngs::OsRng.fill_bytes(&mut raw);
                let pid = format!("st-{}", hex::encode(raw));
                if !taken(&pid) {
                    return pid;
                }
            }
        };
        if let Some(mut mem) = self.mem() {
            if mem.station_names.contains_key(real_name) {
                return Err(StoreError::DuplicateStationName(real_name.to_string()));
            }
            let existing: BTreeSet<String> = mem.station_names.values().cloned().collect();
            let pid = mint(&|p: &str| existing.contains(p) || mem.keys.contains_key(p));
            mem.station_names
                .insert(real_name.to_string(), pid.clone());
            return Ok(pid);
        }
        let root = self.disk_root().unwrap();
        let _guard = DiskLock::acquire(root).map_err(|e| StoreError::Io(e.to_string()))?;
        let mut names = self.read_names()?;
        if names.contains_key(real_name) {
            return Err(StoreError::DuplicateStationName(real_name.to_string()));
        }
        let existing: BTreeSet<String> = names.values().cloned().collect();
        let pid = mint(&|p: &str| existing.contains(p) || Self::key_path(root, p).exists());
        names.insert(real_name.to_string(), pid.clone());
        self.write_names(&names)?;
        Ok(pid)
    }

    fn read_names(&self) -> Result<BTreeMap<String, String>, StoreError> {
        let root = self.disk_root().unwrap();
        let path = Self::names_path(root);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let bytes = std::fs::read(&path).map_err(|e| StoreError::Io(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(e.to_string()))
    }

    fn write_names(&self, names: &BTreeMap<String, String>) -> Result<(), StoreError> {
        let root = self.disk_root().unwrap();
        let bytes = serde_json::to_vec_pretty(names).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        std::fs::write(Self::names_path(root), bytes).map_err(|e| StoreError::Io(e.to_string()))
    }

    fn require_router(&self, principal: &Principal) -> Result<(), StoreError> {
        match self.role(principal.id()) {
            Ok(Role::Builder) => Ok(()),
            _ => Err(StoreError::NotRouter(principal.id().to_string())),
        }
    }

    /// Resolve a real station name to its pseudonym. Builder-only: the
    /// name mapping is the one secret stations must never see.
    pub fn station_pid(
        &self,
        principal: &Principal,
        real_name: &str,
    ) -> Result<String, StoreError> {
        self.require_router(principal)?;
        let names = if let Some(mem) = self.mem() {
            mem.station_names.clone()
        } else {
            self.read_names()?
        };
        names
            .get(real_name)
            .cloned()
            .ok_or_else(|| StoreError::UnknownStationName(real_name.to_string()))
    }

    /// The full name → pseudonym directory. Builder-only.
    pub fn station_names(
        &self,
        principal: &Principal,
    ) -> Result<BTreeMap<String, String>, StoreError> {
        self.require_router(principal)?;
        if let Some(mem) = self.mem() {
            return Ok(mem.station_names.clone());
        }
        self.read_names()
    }

    /// Store a fresh route. Router-only; a train's route is written once.
    pub fn store_route(&self, principal: &Principal, route: &Route) -> Result<(), StoreError> {
        self.require_router(principal)?;
        route.validate()?;
        if let Some(mut mem) = self.mem() {
            if mem.routes.contains_key(&route.train_id) {
                return Err(StoreError::RouteExists(route.train_id.clone()));
            }
            mem.routes.insert(route.train_id.clone(), route.clone());
            return Ok(());
        }
        let root = self.disk_root().unwrap();
        let path = Self::route_path(root, &route.train_id);
        if path.exists() {
            return Err(StoreError::RouteExists(route.train_id.clone()));
        }
        let bytes = serde_json::to_vec_pretty(route).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        std::fs::write(&path, bytes).map_err(|e| StoreError::Io(e.to_string()))
    }

    fn route_unchecked(&self, train_id: &str) -> Result<Route, StoreError> {
        if let Some(mem) = self.mem() {
            return mem
                .routes
                .get(train_id)
                .cloned()
                .ok_or_else(|| StoreError::UnknownRoute(train_id.to_string()));
        }
        let root = self.disk_root().unwrap();
        let path = Self::route_path(root, train_id);
        if !path.exists() {
            return Err(StoreError::UnknownRoute(train_id.to_string()));
        }
        let bytes = std::fs::read(&path).map_err(|e| StoreError::Io(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(e.to_string()))
    }

    /// Read a route as the router.
    pub fn route(&self, principal: &Principal, train_id: &str) -> Result<Route, StoreError> {
        self.require_router(principal)?;
        self.route_unchecked(train_id)
    }

    /// Read a route as one of its stations. Participants need the route to
    /// verify their position and their predecessors' signatures; everyone
    /// else is refused.
    pub fn route_for_participant(
        &self,
        pid: &str,
        train_id: &str,
    ) -> Result<Route, StoreError> {
        let route = self.route_unchecked(train_id)?;
        if route.position(pid).is_none() {
            return Err(StoreError::NotParticipant {
                pid: pid.to_string(),
                train_id: train_id.to_string(),
            });
        }
        Ok(route)
    }

    /// Persist a route's updated cursor. Router-only.
    pub fn update_route(&self, principal: &Principal, route: &Route) -> Result<(), StoreError> {
        self.require_router(principal)?;
        route.validate()?;
        if let Some(mut mem) = self.mem() {
            if !mem.routes.contains_key(&route.train_id) {
                return Err(StoreError::UnknownRoute(route.train_id.clone()));
            }
            mem.routes.insert(route.train_id.clone(), route.clone());
            return Ok(());
        }
        let root = self.disk_root().unwrap();
        let path = Self::route_path(root, &route.train_id);
        if !path.exists() {
            return Err(StoreError::UnknownRoute(route.train_id.clone()));
        }
        let bytes = serde_json::to_vec_pretty(route).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        std::fs::write(&path, bytes).map_err(|e| StoreError::Io(e.to_string()))
    }

    /// Remove a route (build rollback). Router-only.
    pub fn remove_route(&self, principal: &Principal, train_id: &str) -> Result<(), StoreError> {
        self.require_router(principal)?;
        if let Some(mut mem) = self.mem() {
            mem.routes
                .remove(train_id)
                .ok_or_else(|| StoreError::UnknownRoute(train_id.to_string()))?;
            return Ok(());
        }
        let root = self.disk_root().unwrap();
        let path = Self::route_path(root, train_id);
        if !path.exists() {
            return Err(StoreError::UnknownRoute(train_id.to_string()));
        }
        std::fs::remove_file(&path).map_err(|e| StoreError::Io(e.to_string()))
    }
}

/// Exclusive advisory lock over a service root, for read-modify-write
/// sections of the disk backends.
struct DiskLock {
    file: std::fs::File,
}

impl DiskLock {
    fn acquire(root: &Path) -> std::io::Result<DiskLock> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(root.join(".lock"))?;
        file.lock()?;
        Ok(DiskLock { file })
    }
}

impl Drop for DiskLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

// ---------------------------------------------------------------------------
// Registry

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Action {
    Push,
    Pull,
}

impl Action {
    fn as_str(self) -> &'static str {
        match self {
            Action::Push => "push",
            Action::Pull => "pull",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, PartialEq, Eq, Debug, PartialOrd, Ord)]
pub enum RepoName {
    Incoming,
    Outgoing,
    TrustedBase,
    Station(String),
}

impl fmt::Display for RepoName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepoName::Incoming => f.write_str("incoming"),
            RepoName::Outgoing => f.write_str("outgoing"),
            RepoName::TrustedBase => f.write_str("trusted-base"),
            RepoName::Station(pid) => write!(f, "station:{pid}"),
        }
    }
}

impl std::str::FromStr for RepoName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "incoming" => Ok(RepoName::Incoming),
            "outgoing" => Ok(RepoName::Outgoing),
            "trusted-base" => Ok(RepoName::TrustedBase),
            other => match other.strip_prefix("station:") {
                Some(pid) if !pid.is_empty() => Ok(RepoName::Station(pid.to_string())),
                _ => Err(format!("unknown repo `{other}`")),
            },
        }
    }
}

/// Who may act on a repo: a materialized id set, or anyone.
#[derive(Clone, Debug)]
enum AclSet {
    Anyone,
    Only(BTreeSet<String>),
}

impl AclSet {
    fn permits(&self, id: &str) -> bool {
        match self {
            AclSet::Anyone => true,
            AclSet::Only(ids) => ids.contains(id),
        }
    }
}

struct RepoAcl {
    push: AclSet,
    pull: AclSet,
}

/// Materialize a repo's ACL from the key directory: the router reaches all
/// train repos, each station exactly its own, the user none; trusted base
/// images are world-readable but only the builder publishes them.
fn acl_for(repo: &RepoName, store: &SecretStore) -> Result<RepoAcl, RegistryError> {
    let builder = store.builder_id()?;
    let only = |ids: &[&String]| AclSet::Only(ids.iter().map(|s| s.to_string()).collect());
    match repo {
        RepoName::Incoming | RepoName::Outgoing => Ok(RepoAcl {
            push: only(&[&builder]),
            pull: only(&[&builder]),
        }),
        RepoName::TrustedBase => Ok(RepoAcl {
            push: only(&[&builder]),
            pull: AclSet::Anyone,
        }),
        RepoName::Station(pid) => {
            match store.role(pid) {
                Ok(Role::Station) => {}
                _ => return Err(RegistryError::UnknownRepo(repo.to_string())),
            }
            Ok(RepoAcl {
                push: only(&[&builder, pid]),
                pull: only(&[&builder, pid]),
            })
        }
    }
}

struct HistoryEntry {
    image_id: String,
    bytes: Vec<u8>,
}

#[derive(Default)]
struct MemoryRegistry {
    repos: BTreeMap<String, BTreeMap<String, Vec<u8>>>,
    history: Vec<HistoryEntry>,
}

enum RegistryBackend {
    Memory(Mutex<MemoryRegistry>),
    Disk { root: PathBuf },
}

/// The simulated image registry.
pub struct Registry {
    backend: RegistryBackend,
}

#[derive(Serialize, Deserialize)]
struct DiskHistoryMeta {
    repo: String,
    image_id: String,
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry {
            backend: RegistryBackend::Memory(Mutex::new(MemoryRegistry::default())),
        }
    }

    pub fn on_disk(root: &Path) -> Result<Self, RegistryError> {
        let io = |e: std::io::Error| RegistryError::Io(e.to_string());
        std::fs::create_dir_all(root.join("repos")).map_err(io)?;
        std::fs::create_dir_all(root.join("history")).map_err(io)?;
        Ok(Registry {
            backend: RegistryBackend::Disk {
                root: root.to_path_buf(),
            },
        })
    }

    fn mem(&self) -> Option<std::sync::MutexGuard<'_, MemoryRegistry>> {
        match &self.backend {
            RegistryBackend::Memory(m) => Some(m.lock().expect("registry mutex never poisoned")),
            RegistryBackend::Disk { .. } => None,
        }
    }

    fn disk_root(&self) -> Option<&Path> {
        match &self.backend {
            RegistryBackend::Memory(_) => None,
            RegistryBackend::Disk { root } => Some(root),
        }
    }

    fn image_path(root: &Path, repo: &RepoName, image_id: &str) -> PathBuf {
        root.join("repos")
            .join(repo.to_string())
            .join(format!("{image_id}.tar"))
    }

    /// Authorize one registry request. On top of the ACL check, the disk
    /// backend demands a request envelope signed by the principal's key as
    /// registered in the key directory.
    fn authorize(
        &self,
        store: &SecretStore,
        principal: &Principal,
        action: Action,
        repo: &RepoName,
        image_id: &str,
    ) -> Result<(), RegistryError> {
        if self.disk_root().is_some() {
            let keypair = principal
                .keypair
                .as_ref()
                .ok_or_else(|| RegistryError::AuthRequired(principal.id().to_string()))?;
            let request = canonical_encode(&[
                principal.id().as_bytes(),
                action.as_str().as_bytes(),
                repo.to_string().as_bytes(),
                image_id.as_bytes(),
            ]);
            let envelope = crypto::sign(&hash(&request), keypair);
            let directory_key = store
                .public_key(principal.id())
                .map_err(|_| RegistryError::AuthFailed(principal.id().to_string()))?;
            if !crypto::vrfy(&request, &envelope, &directory_key) {
                return Err(RegistryError::AuthFailed(principal.id().to_string()));
            }
        }
        let acl = acl_for(repo, store)?;
        let set = match action {
            Action::Push => &acl.push,
            Action::Pull => &acl.pull,
        };
        if !set.permits(principal.id()) {
            return Err(RegistryError::AccessDenied {
                principal: principal.id().to_string(),
                action,
                repo: repo.clone(),
            });
        }
        Ok(())
    }

    /// Push image bytes into a repo, recording the push in the registry's
    /// history. Train repos index by the bundle's manifest image id;
    /// `trusted-base` is content-addressed by the digest of the raw bytes.
    pub fn push(
        &self,
        store: &SecretStore,
        principal: &Principal,
        repo: &RepoName,
        bytes: &[u8],
    ) -> Result<String, RegistryError> {
        // Authorize on the content digest before the bytes are inspected:
        // unauthorized pushes are denied without parsing the payload.
        self.authorize(store, principal, Action::Push, repo, &hash(bytes).to_hex())?;
        let image_id = match repo {
            RepoName::TrustedBase => hash(bytes).to_hex(),
            _ => model::peek_image_id(bytes)?,
        };
        self.insert(repo, &image_id, bytes)?;
        self.append_history(repo, &image_id, bytes)?;
        Ok(image_id)
    }

    /// Pull an image. From train repos this is a checkout — the image
    /// leaves the repo until pushed back. From `trusted-base` it copies.
    pub fn pull(
        &self,
        store: &SecretStore,
        principal: &Principal,
        repo: &RepoName,
        image_id: &str,
    ) -> Result<Vec<u8>, RegistryError> {
        self.authorize(store, principal, Action::Pull, repo, image_id)?;
        let checkout = !matches!(repo, RepoName::TrustedBase);
        if checkout {
            self.remove(repo, image_id)
        } else {
            self.read(repo, image_id)
        }
    }

    fn insert(&self, repo: &RepoName, image_id: &str, bytes: &[u8]) -> Result<(), RegistryError> {
        if let Some(mut mem) = self.mem() {
            mem.repos
                .entry(repo.to_string())
                .or_default()
                .insert(image_id.to_string(), bytes.to_vec());
            return Ok(());
        }
        let root = self.disk_root().unwrap();
        let path = Self::image_path(root, repo, image_id);
        let io = |e: std::io::Error| RegistryError::Io(e.to_string());
        std::fs::create_dir_all(path.parent().unwrap()).map_err(io)?;
        let tmp = path.with_extension("tar.tmp");
        std::fs::write(&tmp, bytes).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }

    fn read(&self, repo: &RepoName, image_id: &str) -> Result<Vec<u8>, RegistryError> {
        if let Some(mem) = self.mem() {
            return mem
                .repos
                .get(&repo.to_string())
                .and_then(|r| r.get(image_id))
                .cloned()
                .ok_or_else(|| RegistryError::NotFound {
                    repo: repo.clone(),
                    image_id: image_id.to_string(),
                });
        }
        let root = self.disk_root().unwrap();
        let path = Self::image_path(root, repo, image_id);
        if !path.exists() {
            return Err(RegistryError::NotFound {
                repo: repo.clone(),
                image_id: image_id.to_string(),
            });
        }
        std::fs::read(&path).map_err(|e| RegistryError::Io(e.to_string()))
    }

    fn remove(&self, repo: &RepoName, image_id: &str) -> Result<Vec<u8>, RegistryError> {
        if let Some(mut mem) = self.mem() {
            return mem
                .repos
                .get_mut(&repo.to_string())
                .and_then(|r| r.remove(image_id))
                .ok_or_else(|| RegistryError::NotFound {
                    repo: repo.clone(),
                    image_id: image_id.to_string(),
                });
        }
        let bytes = self.read(repo, image_id)?;
        let root = self.disk_root().unwrap();
        std::fs::remove_file(Self::image_path(root, repo, image_id))
            .map_err(|e| RegistryError::Io(e.to_string()))?;
        Ok(bytes)
    }

    fn contains(&self, repo: &RepoName, image_id: &str) -> bool {
        if let Some(mem) = self.mem() {
            return mem
                .repos
                .get(&repo.to_string())
                .is_some_and(|r| r.contains_key(image_id));
        }
        let root = self.disk_root().unwrap();
        Self::image_path(root, repo, image_id).exists()
    }

    /// Move an image between repos without touching history. Internal: this
    /// is the registry acting as carrier (routing) or as attacker (tamper).
    fn relocate(&self, from: &RepoName, to: &RepoName, image_id: &str) -> Result<(), RegistryError> {
        if let Some(mut mem) = self.mem() {
            let bytes = mem
                .repos
                .get_mut(&from.to_string())
                .and_then(|r| r.remove(image_id))
                .ok_or_else(|| RegistryError::NotFound {
                    repo: from.clone(),
                    image_id: image_id.to_string(),
                })?;
            mem.repos
                .entry(to.to_string())
                .or_default()
                .insert(image_id.to_string(), bytes);
            return Ok(());
        }
        let root = self.disk_root().unwrap();
        let from_path = Self::image_path(root, from, image_id);
        if !from_path.exists() {
            return Err(RegistryError::NotFound {
                repo: from.clone(),
                image_id: image_id.to_string(),
            });
        }
        let to_path = Self::image_path(root, to, image_id);
        let io = |e: std::io::Error| RegistryError::Io(e.to_string());
        std::fs::create_dir_all(to_path.parent().unwrap()).map_err(io)?;
        std::fs::rename(&from_path, &to_path).map_err(io)
    }

    fn append_history(
        &self,
        repo: &RepoName,
        image_id: &str,
        bytes: &[u8],
    ) -> Result<(), RegistryError> {
        if let Some(mut mem) = self.mem() {
            mem.history.push(HistoryEntry {
                image_id: image_id.to_string(),
                bytes: bytes.to_vec(),
            });
            return Ok(());
        }
        let root = self.disk_root().unwrap();
        let io = |e: std::io::Error| RegistryError::Io(e.to_string());
        let _guard = DiskLock::acquire(root).map_err(io)?;
        let dir = root.join("history");
        let seq = std::fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count();
        let meta = DiskHistoryMeta {
            repo: repo.to_string(),
            image_id: image_id.to_string(),
        };
        std::fs::write(
            dir.join(format!("{seq:08}.json")),
            serde_json::to_vec(&meta).expect("history metadata always serializes"),
        )
        .map_err(io)?;
        std::fs::write(dir.join(format!("{seq:08}.tar")), bytes).map_err(io)
    }

    fn history_for_train(&self, train_id: &str) -> Result<Vec<Vec<u8>>, RegistryError> {
        if let Some(mem) = self.mem() {
            return Ok(mem
                .history
                .iter()
                .filter(|h| h.image_id == train_id)
                .map(|h| h.bytes.clone())
                .collect());
        }
        let root = self.disk_root().unwrap();
        let io = |e: std::io::Error| RegistryError::Io(e.to_string());
        let dir = root.join("history");
        let mut seqs: Vec<String> = std::fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .map(|e| e.path().file_stem().unwrap().to_string_lossy().into_owned())
            .collect();
        seqs.sort();
        let mut out = Vec::new();
        for seq in seqs {
            let meta_bytes = std::fs::read(dir.join(format!("{seq}.json"))).map_err(io)?;
            let meta: DiskHistoryMeta = serde_json::from_slice(&meta_bytes)
                .map_err(|e| RegistryError::Corrupt(e.to_string()))?;
            if meta.image_id == train_id {
                out.push(std::fs::read(dir.join(format!("{seq}.tar"))).map_err(io)?);
            }
        }
        Ok(out)
    }

    /// Every repo a train image could sit in, in scan order.
    fn train_repos(&self, store: &SecretStore) -> Result<Vec<RepoName>, RegistryError> {
        let mut repos = vec![RepoName::Incoming];
        repos.extend(store.station_pids()?.into_iter().map(RepoName::Station));
        repos.push(RepoName::Outgoing);
        Ok(repos)
    }

    /// Locate a train image. Observability aid for the CLI and tests; the
    /// protocol itself never depends on it.
    pub fn locate(
        &self,
        store: &SecretStore,
        train_id: &str,
    ) -> Result<Option<RepoName>, RegistryError> {
        for repo in self.train_repos(store)? {
            if self.contains(&repo, train_id) {
                return Ok(Some(repo));
            }
        }
        Ok(None)
    }

    /// Advance a train one hop along its route: `incoming` → first station,
    /// station → next station, last station → `outgoing`. Router-only. If
    /// the expected repo does not hold the image (the station has not
    /// pushed it back yet), the cursor is left untouched and a
    /// missing-image error is returned. A train already in `outgoing` is
    /// terminal.
    pub fn route_next(
        &self,
        store: &SecretStore,
        principal: &Principal,
        train_id: &str,
    ) -> Result<RepoName, RegistryError> {
        let mut route = store.route(principal, train_id)?;
        let pids = route.station_pids.clone();

        if route.cursor < pids.len() {
            let from = if route.cursor == 0 {
                RepoName::Incoming
            } else {
                RepoName::Station(pids[route.cursor - 1].clone())
            };
            if !self.contains(&from, train_id) {
                return Err(RegistryError::MissingImage {
                    repo: from,
                    train_id: train_id.to_string(),
                });
            }
            let to = RepoName::Station(pids[route.cursor].clone());
            self.relocate(&from, &to, train_id)?;
            route.cursor += 1;
            store.update_route(principal, &route)?;
            return Ok(to);
        }

        // Cursor exhausted: the only remaining legal hop is the final move
        // from the last station's repo to outgoing.
        let last = RepoName::Station(pids.last().expect("routes are never empty").clone());
        if self.contains(&last, train_id) {
            self.relocate(&last, &RepoName::Outgoing, train_id)?;
            return Ok(RepoName::Outgoing);
        }
        if self.contains(&RepoName::Outgoing, train_id) {
            return Err(RegistryError::TerminalRoute(train_id.to_string()));
        }
        Err(RegistryError::MissingImage {
            repo: last,
            train_id: train_id.to_string(),
        })
    }

    /// Assemble the extraction package for a finished train. Router-only.
    /// The package holds everything the user needs to decrypt and verify
    /// the results offline: the encrypted result payload, the user's key
    /// envelope entry, the final result signature, the full chain, and the
    /// route's station public keys.
    pub fn extract_results(
        &self,
        store: &SecretStore,
        principal: &Principal,
        train_id: &str,
    ) -> Result<ResultPackage, RegistryError> {
        let route = store.route(principal, train_id)?;
        if !self.contains(&RepoName::Outgoing, train_id) {
            return Err(RegistryError::NotFinished(train_id.to_string()));
        }
        let bytes = self.read(&RepoName::Outgoing, train_id)?;
        let bundle = model::deserialize_bundle(&bytes)?;
        let config = bundle.config()?;

        let corrupt = |msg: &str| RegistryError::Corrupt(format!("train `{train_id}`: {msg}"));
        let enc_result = bundle
            .layer(model::LayerKind::Result)
            .ok_or_else(|| corrupt("finished train has no result layer"))?
            .payload()
            .to_vec();
        let user_key_envelope = config
            .key_envelope
            .get(&config.user_id)
            .cloned()
            .ok_or_else(|| corrupt("key envelope holds no user entry"))?;
        let last_pid = route
            .station_pids
            .last()
            .expect("routes are never empty")
            .clone();
        let result_signature = config
            .result_signatures
            .get(&last_pid)
            .cloned()
            .ok_or_else(|| corrupt("missing final result signature"))?;

        let mut station_public_keys = BTreeMap::new();
        for pid in &route.station_pids {
            let key = store.public_key(pid)?;
            station_public_keys.insert(
                pid.clone(),
                crypto::armor_public_key(&key, pid, &[]),
            );
        }

        Ok(ResultPackage {
            train_id: train_id.to_string(),
            user_id: config.user_id.clone(),
            session_id: config.session_id,
            enc_result,
            user_key_envelope,
            result_signature,
            chain: config.chain.clone(),
            route_pids: route.station_pids.clone(),
            station_public_keys,
        })
    }
}

// ---------------------------------------------------------------------------
// Extraction package

/// Everything a user needs to decrypt and verify a finished train's
/// results without trusting the registry: encrypted payload, their own key
/// envelope entry, the final result signature, the signature chain, and the
/// station keys to verify it all against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultPackage {
    pub train_id: String,
    pub user_id: String,
    #[serde(with = "hex_array32")]
    pub session_id: [u8; 32],
    #[serde(with = "hex_bytes")]
    pub enc_result: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub user_key_envelope: Vec<u8>,
    pub result_signature: Signature,
    pub chain: Vec<Signature>,
    pub route_pids: Vec<String>,
    pub station_public_keys: BTreeMap<String, String>,
}

impl ResultPackage {
    pub fn to_canonical_json(&self) -> Result<Vec<u8>, ModelError> {
        model::canonical_json(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelError> {
        serde_json::from_slice(bytes).map_err(|e| ModelError::Json(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Tamper operations (the malicious registry)

/// Attacks a malicious registry can mount on an image in transit. Every
/// operation leaves a structurally valid archive — digests consistent,
/// envelopes rewrapped for the original recipients using the public key
/// directory — so only the protocol's signature checks can catch it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TamperAttack {
    /// Replace the analysis and query with attacker-chosen plaintexts under
    /// a fresh key, rewrapping the static envelope for all recipients.
    ModifyStatic,
    /// Replace the result layer with a forged, well-formed result document
    /// under a fresh key, rewrapping the live envelope for all recipients.
    ModifyResult,
    /// Rewrite the visited list in the config layer.
    ModifyConfig,
    /// Move the image to a station repo out of route order.
    RerouteImage { to_pid: String },
    /// Swap the trusted base layer for an attacker payload, updating the
    /// config's base image id consistently.
    SwapBaseLayer,
    /// Splice an earlier result/config layer pair from the push history
    /// back into the current image.
    ReplayResult,
}

impl TamperAttack {
    pub fn name(&self) -> &'static str {
        match self {
            TamperAttack::ModifyStatic => "modify_static",
            TamperAttack::ModifyResult => "modify_result",
            TamperAttack::ModifyConfig => "modify_config",
            TamperAttack::RerouteImage { .. } => "reroute_image",
            TamperAttack::SwapBaseLayer => "swap_base_layer",
            TamperAttack::ReplayResult => "replay_result",
        }
    }
}

/// What a tamper operation did, for reporting.
#[derive(Clone, Debug, Serialize)]
pub struct TamperReport {
    pub attack: String,
    pub repo: String,
    pub detail: String,
}

impl Registry {
    /// Mount an attack on a train image wherever it currently sits. No
    /// principal: the registry itself is the adversary here, and it
    /// legitimately holds the image bytes, the push history, and the
    /// public key directory.
    pub fn tamper(
        &self,
        store: &SecretStore,
        attack: &TamperAttack,
        train_id: &str,
    ) -> Result<TamperReport, RegistryError> {
        let repo = self
            .locate(store, train_id)?
            .ok_or_else(|| RegistryError::TamperFailed(format!("train `{train_id}` not found")))?;
        let report = |detail: String| TamperReport {
            attack: attack.name().to_string(),
            repo: repo.to_string(),
            detail,
        };

        if let TamperAttack::RerouteImage { to_pid } = attack {
            let to = RepoName::Station(to_pid.clone());
            if to == repo {
                return Err(RegistryError::TamperFailed(
                    "image already sits in the target repo".into(),
                ));
            }
            self.relocate(&repo, &to, train_id)?;
            return Ok(report(format!("moved image from {repo} to {to}")));
        }

        let bytes = self.read(&repo, train_id)?;
        let mut bundle = model::deserialize_bundle(&bytes)?;
        let mut config = bundle.config()?;

        let detail = match attack {
            TamperAttack::ModifyStatic => {
                let forged_key = crypto::SymmetricKey::generate();
                let forged_algorithm = br#"{"kind":"count","params":{}}"#.to_vec();
                let forged_query = b"age >= 0".to_vec();
                let payload = model::StaticPayload {
                    enc_algorithm: crypto::encs(&forged_algorithm, &forged_key),
                    enc_query: crypto::encs(&forged_query, &forged_key),
                };
                // Rewrap for every original recipient so decryption still
                // succeeds everywhere.
                let mut envelope = BTreeMap::new();
                for recipient in config.static_key_envelope.keys() {
                    let pk = store.public_key(recipient)?;
                    envelope.insert(
                        recipient.clone(),
                        crypto::encp(forged_key.as_bytes(), &pk)?,
                    );
                }
                config.static_key_envelope = envelope;
                bundle.set_layer(model::LayerKind::Static, payload.to_bytes());
                bundle.set_config(&config)?;
                "replaced analysis and query, rewrapped static envelope".to_string()
            }
            TamperAttack::ModifyResult => {
                if bundle.layer(model::LayerKind::Result).is_none() {
                    return Err(RegistryError::TamperFailed(
                        "train carries no result layer yet".into(),
                    ));
                }
                let forged_key = crypto::SymmetricKey::generate();
                let forged = crate::analysis::ResultData {
                    kind: crate::analysis::AnalysisKind::Count,
                    stations: BTreeMap::from([(
                        "st-forged".to_string(),
                        crate::analysis::StationEntry::Count { count: 0 },
                    )]),
                    merged: crate::analysis::MergedView::Count { total: 0 },
                };
                let mut envelope = BTreeMap::new();
                for recipient in config.key_envelope.keys() {
                    let pk = store.public_key(recipient)?;
                    envelope.insert(
                        recipient.clone(),
                        crypto::encp(forged_key.as_bytes(), &pk)?,
                    );
                }
                config.key_envelope = envelope;
                bundle.set_layer(
                    model::LayerKind::Result,
                    crypto::encs(&forged.canonical_bytes(), &forged_key),
                );
                bundle.set_config(&config)?;
                "replaced result layer with a forged document, rewrapped envelope".to_string()
            }
            TamperAttack::ModifyConfig => {
                let detail = if config.visited.is_empty() {
                    config.visited.push("st-phantom".to_string());
                    "inserted a phantom station into the visited list".to_string()
                } else {
                    let dropped = config.visited.pop().unwrap();
                    format!("dropped `{dropped}` from the visited list")
                };
                bundle.set_config(&config)?;
                detail
            }
            TamperAttack::SwapBaseLayer => {
                let payload = b"hostile runtime payload".to_vec();
                // Keep the config consistent with the new layer so detection
                // must come from the trusted-image list, not a cheap
                // cross-field comparison.
                config.base_image_id = hash(&payload).to_hex();
                bundle.set_layer(model::LayerKind::Base, payload);
                bundle.set_config(&config)?;
                "swapped base layer and updated the config to match".to_string()
            }
            TamperAttack::ReplayResult => {
                let history = self.history_for_train(train_id)?;
                let earlier = history
                    .iter()
                    .filter_map(|b| model::deserialize_bundle(b).ok())
                    .find(|b| b.layer(model::LayerKind::Result).is_some())
                    .ok_or_else(|| {
                        RegistryError::TamperFailed(
                            "push history holds no earlier executed version".into(),
                        )
                    })?;
                if earlier.layer(model::LayerKind::Config).map(|l| l.payload())
                    == bundle.layer(model::LayerKind::Config).map(|l| l.payload())
                {
                    return Err(RegistryError::TamperFailed(
                        "no strictly earlier version to replay".into(),
                    ));
                }
                let old_result = earlier
                    .layer(model::LayerKind::Result)
                    .expect("filtered for result presence")
                    .payload()
                    .to_vec();
                let old_config = earlier
                    .layer(model::LayerKind::Config)
                    .expect("bundles always carry a config")
                    .payload()
                    .to_vec();
                bundle.set_layer(model::LayerKind::Result, old_result);
                bundle.set_layer(model::LayerKind::Config, old_config);
                "spliced the earliest executed result/config pair back in".to_string()
            }
            TamperAttack::RerouteImage { .. } => unreachable!("handled above"),
        };

        let mutated = model::serialize_bundle(&bundle)?;
        self.insert(&repo, train_id, &mutated)?;
        Ok(report(detail))
    }
}
