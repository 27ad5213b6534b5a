//! Train assembly: participation proposals, station approvals, and the
//! build step that turns an approved submission into a signed, encrypted
//! train image.
//!
//! The builder is the protocol's orchestration identity. It resolves real
//! station names to pseudonyms, collects approvals, verifies the base image
//! against its trusted list, and assembles the bundle — but it never holds
//! the user's private key. The user signs the train hash through a callback,
//! and the builder countersigns that signature, so a later verifier can pin
//! both who requested the analysis and who assembled it.

use crate::crypto::{
    self, hash, CryptoError, Digest, KeyPair, Signature, SymmetricKey,
};
use crate::model::{
    self, compute_train_hash, train_hash_message, ModelError, Route, StaticPayload, TrainBundle,
    TrainConfig,
};
use crate::registry::{
    Principal, Registry, RegistryError, RepoName, Role, SecretStore, StoreError,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("keypair `{0}` is not the registered builder")]
    NotBuilder(String),
    #[error("station `{0}` is not registered")]
    UnknownStation(String),
    #[error("station `{0}` is not part of the proposal")]
    NotProposed(String),
    #[error("station `{0}` has not accepted the proposal")]
    NotApproved(String),
    #[error("station `{0}` already voted on the proposal")]
    DoubleVote(String),
    #[error("submission user `{found}` does not match proposal user `{expected}`")]
    WrongUser { expected: String, found: String },
    #[error("a route must visit at least one station")]
    EmptyRoute,
    #[error("station `{0}` appears more than once in the route")]
    DuplicateStation(String),
    #[error("base image `{0}` is not on the trusted list")]
    UntrustedBase(String),
    #[error("user signature rejected: {0}")]
    UserSignature(String),
    #[error("malformed submission: {0}")]
    MalformedSubmission(String),
    #[error("submission I/O failure: {0}")]
    Io(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Proposals and approvals

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalDecision {
    Accepted,
    Rejected,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalStatus {
    Pending,
    Accepted,
    Rejected,
}

/// A request for a set of stations to participate in a user's analysis.
/// Stations vote exactly once; a train can only be built over stations that
/// accepted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Proposal {
    pub proposal_id: String,
    pub user_id: String,
    approvals: BTreeMap<String, ApprovalStatus>,
}

impl Proposal {
    pub fn new(user_id: &str, station_pids: &[String]) -> Result<Self, BuildError> {
        if station_pids.is_empty() {
            return Err(BuildError::EmptyRoute);
        }
        let mut approvals = BTreeMap::new();
        for pid in station_pids {
            if approvals
                .insert(pid.clone(), ApprovalStatus::Pending)
                .is_some()
            {
                return Err(BuildError::DuplicateStation(pid.clone()));
            }
        }
        Ok(Proposal {
            proposal_id: uuid::Uuid::new_v4().to_string(),
            user_id: user_id.to_string(),
            approvals,
        })
    }

    /// Record a station's vote. Each station votes exactly once.
    pub fn record_approval(
        &mut self,
        pid: &str,
        decision: ApprovalDecision,
    ) -> Result<(), BuildError> {
        let status = self
            .approvals
            .get_mut(pid)
            .ok_or_else(|| BuildError::NotProposed(pid.to_string()))?;
        if *status != ApprovalStatus::Pending {
            return Err(BuildError::DoubleVote(pid.to_string()));
        }
        *status = match decision {
            ApprovalDecision::Accepted => ApprovalStatus::Accepted,
            ApprovalDecision::Rejected => ApprovalStatus::Rejected,
        };
        Ok(())
    }

    pub fn status(&self, pid: &str) -> Option<ApprovalStatus> {
        self.approvals.get(pid).copied()
    }

    pub fn approvals(&self) -> &BTreeMap<String, ApprovalStatus> {
        &self.approvals
    }

    pub fn fully_approved(&self) -> bool {
        self.approvals
            .values()
            .all(|s| *s == ApprovalStatus::Accepted)
    }
}

// ---------------------------------------------------------------------------
// Submissions

/// What a user hands the builder, read from a submission directory:
/// `algorithm.json` (analysis descriptor), `query.txt` (filter expression),
/// and `stations.txt` (real station names, one per line). Names are used
/// because users pick institutions from a public directory; only the
/// builder can translate them to route pseudonyms.
#[derive(Clone, Debug)]
pub struct SubmissionDraft {
    pub algorithm: Vec<u8>,
    pub query: Vec<u8>,
    pub station_names: Vec<String>,
}

impl SubmissionDraft {
    pub fn from_dir(dir: &Path) -> Result<Self, BuildError> {
        let io = |e: std::io::Error| BuildError::Io(e.to_string());
        let algorithm = std::fs::read(dir.join("algorithm.json")).map_err(io)?;
        let query_text = std::fs::read_to_string(dir.join("query.txt")).map_err(io)?;
        let stations_text = std::fs::read_to_string(dir.join("stations.txt")).map_err(io)?;
        let station_names: Vec<String> = stations_text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if station_names.is_empty() {
            return Err(BuildError::MalformedSubmission(
                "stations.txt lists no stations".into(),
            ));
        }
        Ok(SubmissionDraft {
            algorithm,
            query: query_text.trim_end().as_bytes().to_vec(),
            station_names,
        })
    }
}

/// A fully resolved build request: pseudonymous route, analysis and query
/// plaintexts, and the trusted base image to assemble onto.
#[derive(Clone, Debug)]
pub struct Submission {
    pub user_id: String,
    pub algorithm: Vec<u8>,
    pub query: Vec<u8>,
    pub station_pids: Vec<String>,
    pub base_image_id: String,
}

// ---------------------------------------------------------------------------
// Trusted images

/// The builder's allowlist of base image ids. On disk: one hex digest per
/// line, blank lines and `#` comments ignored.
#[derive(Clone, Debug, Default)]
pub struct TrustedImageList {
    ids: BTreeSet<String>,
}

impl TrustedImageList {
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        TrustedImageList {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BuildError> {
        let text = std::fs::read_to_string(path).map_err(|e| BuildError::Io(e.to_string()))?;
        Ok(Self::from_ids(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        ))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.ids.contains(image_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }
}

// ---------------------------------------------------------------------------
// The builder

/// A finished train image, ready to dispatch into the `incoming` repo.
#[derive(Clone, Debug)]
pub struct BuiltTrain {
    pub train_id: String,
    pub image: Vec<u8>,
}

pub struct TrainBuilder<'a> {
    registry: &'a Registry,
    store: &'a SecretStore,
    keypair: &'a KeyPair,
    trusted: TrustedImageList,
}

impl<'a> TrainBuilder<'a> {
    /// The keypair must belong to the registered builder identity.
    pub fn new(
        registry: &'a Registry,
        store: &'a SecretStore,
        keypair: &'a KeyPair,
        trusted: TrustedImageList,
    ) -> Result<Self, BuildError> {
        let id = keypair.entity_id();
        match store.role(id) {
            Ok(Role::Builder) => Ok(TrainBuilder {
                registry,
                store,
                keypair,
                trusted,
            }),
            _ => Err(BuildError::NotBuilder(id.to_string())),
        }
    }

    fn principal(&self) -> Principal {
        Principal::with_key(self.keypair)
    }

    /// Open a proposal towards a set of stations, all of which must be
    /// registered.
    pub fn create_proposal(
        &self,
        user_id: &str,
        station_pids: &[String],
    ) -> Result<Proposal, BuildError> {
        for pid in station_pids {
            match self.store.role(pid) {
                Ok(Role::Station) => {}
                _ => return Err(BuildError::UnknownStation(pid.clone())),
            }
        }
        Proposal::new(user_id, station_pids)
    }

    /// Resolve a user's draft (real station names) into a build request
    /// (route pseudonyms). Route order follows the draft's station order.
    pub fn resolve_submission(
        &self,
        draft: &SubmissionDraft,
        user_id: &str,
        base_image_id: &str,
    ) -> Result<Submission, BuildError> {
        let principal = self.principal();
        let mut station_pids = Vec::with_capacity(draft.station_names.len());
        for name in &draft.station_names {
            station_pids.push(self.store.station_pid(&principal, name)?);
        }
        Ok(Submission {
            user_id: user_id.to_string(),
            algorithm: draft.algorithm.clone(),
            query: draft.query.clone(),
            station_pids,
            base_image_id: base_image_id.to_string(),
        })
    }

    /// Assemble a train from an approved submission.
    ///
    /// `user_sign` is the user's signing step: it receives the train hash
    /// and must return the user's signature over it, produced with a key
    /// the builder never sees. The signature is verified against the key
    /// directory before it is embedded.
    ///
    /// On any failure after the route has been stored, the route is removed
    /// again so a failed build leaves no trace.
    pub fn build_train<F>(
        &self,
        proposal: &Proposal,
        submission: &Submission,
        user_sign: F,
    ) -> Result<BuiltTrain, BuildError>
    where
        F: FnOnce(&Digest) -> Result<Signature, String>,
    {
        if submission.user_id != proposal.user_id {
            return Err(BuildError::WrongUser {
                expected: proposal.user_id.clone(),
                found: submission.user_id.clone(),
            });
        }
        if submission.station_pids.is_empty() {
            return Err(BuildError::EmptyRoute);
        }
        let mut seen = BTreeSet::new();
        for pid in &submission.station_pids {
            if !seen.insert(pid.clone()) {
                return Err(BuildError::DuplicateStation(pid.clone()));
            }
            match proposal.status(pid) {
                None => return Err(BuildError::NotProposed(pid.clone())),
                Some(ApprovalStatus::Accepted) => {}
                Some(_) => return Err(BuildError::NotApproved(pid.clone())),
            }
        }
        if !self.trusted.contains(&submission.base_image_id) {
            return Err(BuildError::UntrustedBase(submission.base_image_id.clone()));
        }

        let principal = self.principal();
        let base_payload = self.registry.pull(
            self.store,
            &principal,
            &RepoName::TrustedBase,
            &submission.base_image_id,
        )?;
        let user_key = self.store.public_key(&submission.user_id)?;
        let mut station_keys = BTreeMap::new();
        for pid in &submission.station_pids {
            station_keys.insert(pid.clone(), self.store.public_key(pid)?);
        }

        let train_id = uuid::Uuid::new_v4().to_string();
        let route = Route::new(&train_id, submission.station_pids.clone())?;
        self.store.store_route(&principal, &route)?;

        // Everything past this point must roll the stored route back on
        // failure.
        let result = self.assemble(submission, &route, &base_payload, &user_key, &station_keys, user_sign);
        if result.is_err() {
            let _ = self.store.remove_route(&principal, &train_id);
        }
        result
    }

    fn assemble<F>(
        &self,
        submission: &Submission,
        route: &Route,
        base_payload: &[u8],
        user_key: &crypto::PublicKey,
        station_keys: &BTreeMap<String, crypto::PublicKey>,
        user_sign: F,
    ) -> Result<BuiltTrain, BuildError>
    where
        F: FnOnce(&Digest) -> Result<Signature, String>,
    {
        let mut session_id = [0u8; 32];
        {
            use rand::RngCore;
            rand::rngs::OsRng.fill_bytes(&mut session_id);
        }
        let session_key = SymmetricKey::generate();

        let train_hash = compute_train_hash(
            &submission.user_id,
            &submission.algorithm,
            &submission.query,
            route,
            &session_id,
        );
        let user_signature = user_sign(&train_hash).map_err(BuildError::UserSignature)?;
        if user_signature.signer_id != submission.user_id {
            return Err(BuildError::UserSignature(format!(
                "signature names `{}`, expected `{}`",
                user_signature.signer_id, submission.user_id
            )));
        }
        let message = train_hash_message(
            &submission.user_id,
            &submission.algorithm,
            &submission.query,
            route,
            &session_id,
        );
        if !crypto::vrfy(&message, &user_signature, user_key) {
            return Err(BuildError::UserSignature(
                "signature does not verify against the user's registered key".into(),
            ));
        }
        let builder_signature = crypto::sign(&hash(&user_signature.canonical_bytes()), self.keypair);

        let static_payload = StaticPayload {
            enc_algorithm: crypto::encs(&submission.algorithm, &session_key),
            enc_query: crypto::encs(&submission.query, &session_key),
        };

        // Both envelopes start out wrapping the same session key, for every
        // station plus the user. The static envelope never changes again;
        // the live envelope is rewrapped by each station after it runs.
        let mut envelope = BTreeMap::new();
        for (pid, key) in station_keys {
            envelope.insert(pid.clone(), crypto::encp(session_key.as_bytes(), key)?);
        }
        envelope.insert(
            submission.user_id.clone(),
            crypto::encp(session_key.as_bytes(), user_key)?,
        );

        let config = TrainConfig {
            user_id: submission.user_id.clone(),
            session_id,
            route_digest: route.digest(),
            key_envelope: envelope.clone(),
            static_key_envelope: envelope,
            user_signature,
            builder_signature,
            chain: Vec::new(),
            result_signatures: BTreeMap::new(),
            base_image_id: submission.base_image_id.clone(),
            visited: Vec::new(),
        };

        let bundle = TrainBundle::new(
            &route.train_id,
            base_payload.to_vec(),
            static_payload.to_bytes(),
            config.to_canonical_json()?,
        )?;
        Ok(BuiltTrain {
            train_id: route.train_id.clone(),
            image: model::serialize_bundle(&bundle)?,
        })
    }

    /// Push a built train into the `incoming` repo, ready for routing.
    pub fn dispatch(&self, built: &BuiltTrain) -> Result<(), BuildError> {
        self.registry.push(
            self.store,
            &self.principal(),
            &RepoName::Incoming,
            &built.image,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::MIN_RSA_BITS;
    use crate::model::LayerKind;
    use std::sync::OnceLock;

    struct World {
        builder: KeyPair,
        stations: Vec<KeyPair>,
        user: KeyPair,
    }

    fn world() -> &'static World {
        static WORLD: OnceLock<World> = OnceLock::new();
        WORLD.get_or_init(|| World {
            builder: KeyPair::generate("tb-main", MIN_RSA_BITS).unwrap(),
            stations: vec![
                KeyPair::generate("st-00000001", MIN_RSA_BITS).unwrap(),
                KeyPair::generate("st-00000002", MIN_RSA_BITS).unwrap(),
            ],
            user: KeyPair::generate("user-1", MIN_RSA_BITS).unwrap(),
        })
    }

    struct Setup {
        store: SecretStore,
        registry: Registry,
        base_id: String,
    }

    fn setup() -> Setup {
        let w = world();
        let store = SecretStore::in_memory();
        store
            .register_entity("tb-main", Role::Builder, w.builder.public())
            .unwrap();
        for st in &w.stations {
            store
                .register_entity(st.entity_id(), Role::Station, st.public())
                .unwrap();
        }
        store
            .register_entity("user-1", Role::User, w.user.public())
            .unwrap();
        let registry = Registry::in_memory();
        let base_id = registry
            .push(
                &store,
                &Principal::of("tb-main"),
                &RepoName::TrustedBase,
                b"trusted analysis runtime",
            )
            .unwrap();
        Setup {
            store,
            registry,
            base_id,
        }
    }

    fn pids() -> Vec<String> {
        world()
            .stations
            .iter()
            .map(|s| s.entity_id().to_string())
            .collect()
    }

    fn accepted_proposal() -> Proposal {
        let mut proposal = Proposal::new("user-1", &pids()).unwrap();
        for pid in pids() {
            proposal
                .record_approval(&pid, ApprovalDecision::Accepted)
                .unwrap();
        }
        proposal
    }

    fn submission(base_id: &str) -> Submission {
        Submission {
            user_id: "user-1".into(),
            algorithm: br#"{"kind":"count","params":{}}"#.to_vec(),
            query: b"age >= 18".to_vec(),
            station_pids: pids(),
            base_image_id: base_id.to_string(),
        }
    }

    fn user_signer() -> impl FnOnce(&Digest) -> Result<Signature, String> {
        |digest: &Digest| Ok(crypto::sign(digest, &world().user))
    }

    #[test]
    fn approvals_enforce_membership_and_single_votes() {
        let mut proposal = Proposal::new("user-1", &pids()).unwrap();
        assert!(!proposal.fully_approved());
        assert!(matches!(
            proposal.record_approval("st-outsider", ApprovalDecision::Accepted),
            Err(BuildError::NotProposed(_))
        ));
        proposal
            .record_approval("st-00000001", ApprovalDecision::Accepted)
            .unwrap();
        assert!(matches!(
            proposal.record_approval("st-00000001", ApprovalDecision::Rejected),
            Err(BuildError::DoubleVote(_))
        ));
        assert!(!proposal.fully_approved());
        proposal
            .record_approval("st-00000002", ApprovalDecision::Accepted)
            .unwrap();
        assert!(proposal.fully_approved());

        assert!(matches!(
            Proposal::new("user-1", &[]),
            Err(BuildError::EmptyRoute)
        ));
        let dup = vec!["st-00000001".to_string(), "st-00000001".to_string()];
        assert!(matches!(
            Proposal::new("user-1", &dup),
            Err(BuildError::DuplicateStation(_))
        ));
    }

    #[test]
    fn built_train_has_expected_structure() {
        let w = world();
        let s = setup();
        let builder = TrainBuilder::new(
            &s.registry,
            &s.store,
            &w.builder,
            TrustedImageList::from_ids([s.base_id.clone()]),
        )
        .unwrap();

        let built = builder
            .build_train(&accepted_proposal(), &submission(&s.base_id), user_signer())
            .unwrap();
        let bundle = model::deserialize_bundle(&built.image).unwrap();
        assert_eq!(bundle.image_id(), built.train_id);
        assert_eq!(bundle.layer_count(), 3);
        assert!(bundle.layer(LayerKind::Result).is_none());

        let config = bundle.config().unwrap();
        assert_eq!(config.user_id, "user-1");
        assert_eq!(config.base_image_id, s.base_id);
        assert!(config.chain.is_empty());
        assert!(config.visited.is_empty());
        assert!(config.result_signatures.is_empty());
        // One envelope entry per station plus the user, in both envelopes.
        assert_eq!(config.key_envelope.len(), 3);
        assert_eq!(config.key_envelope, config.static_key_envelope);

        // The stored route matches the submission and the signed digest.
        let route = s
            .store
            .route(&Principal::of("tb-main"), &built.train_id)
            .unwrap();
        assert_eq!(route.station_pids, pids());
        assert_eq!(route.cursor, 0);
        assert_eq!(route.digest(), config.route_digest);

        // Any station can open the static layer with its envelope entry and
        // verify the user's signature over the exact plaintexts.
        let station = &w.stations[1];
        let wrapped = &config.static_key_envelope[station.entity_id()];
        let key_bytes = crypto::decp(wrapped, station).unwrap();
        let key = SymmetricKey::from_bytes(&key_bytes).unwrap();
        let payload = StaticPayload::from_bytes(
            bundle.layer(LayerKind::Static).unwrap().payload(),
        )
        .unwrap();
        let algorithm = crypto::decs(&payload.enc_algorithm, &key).unwrap();
        let query = crypto::decs(&payload.enc_query, &key).unwrap();
        assert_eq!(algorithm, submission(&s.base_id).algorithm);
        assert_eq!(query, submission(&s.base_id).query);

        let message =
            train_hash_message("user-1", &algorithm, &query, &route, &config.session_id);
        assert!(crypto::vrfy(&message, &config.user_signature, w.user.public()));
        assert!(crypto::vrfy(
            &config.user_signature.canonical_bytes(),
            &config.builder_signature,
            w.builder.public(),
        ));

        // Dispatch lands the image in incoming under the train id.
        builder.dispatch(&built).unwrap();
        assert_eq!(
            s.registry.locate(&s.store, &built.train_id).unwrap(),
            Some(RepoName::Incoming)
        );
    }

    #[test]
    fn build_refuses_bad_submissions() {
        let w = world();
        let s = setup();
        let builder = TrainBuilder::new(
            &s.registry,
            &s.store,
            &w.builder,
            TrustedImageList::from_ids([s.base_id.clone()]),
        )
        .unwrap();
        let proposal = accepted_proposal();

        // Untrusted base image.
        let mut sub = submission(&s.base_id);
        sub.base_image_id = "0".repeat(64);
        assert!(matches!(
            builder.build_train(&proposal, &sub, user_signer()),
            Err(BuildError::UntrustedBase(_))
        ));

        // Station outside the proposal.
        let mut sub = submission(&s.base_id);
        sub.station_pids.push("st-00000003".into());
        assert!(matches!(
            builder.build_train(&proposal, &sub, user_signer()),
            Err(BuildError::NotProposed(_))
        ));

        // Station that rejected.
        let mut rejected = Proposal::new("user-1", &pids()).unwrap();
        rejected
            .record_approval("st-00000001", ApprovalDecision::Accepted)
            .unwrap();
        rejected
            .record_approval("st-00000002", ApprovalDecision::Rejected)
            .unwrap();
        assert!(matches!(
            builder.build_train(&rejected, &submission(&s.base_id), user_signer()),
            Err(BuildError::NotApproved(_))
        ));

        // User mismatch between proposal and submission.
        let mut sub = submission(&s.base_id);
        sub.user_id = "user-2".into();
        assert!(matches!(
            builder.build_train(&proposal, &sub, user_signer()),
            Err(BuildError::WrongUser { .. })
        ));

        // Only the registered builder may build.
        assert!(matches!(
            TrainBuilder::new(&s.registry, &s.store, &w.user, TrustedImageList::default()),
            Err(BuildError::NotBuilder(_))
        ));
    }

    #[test]
    fn failed_user_signing_rolls_the_route_back() {
        let w = world();
        let s = setup();
        let builder = TrainBuilder::new(
            &s.registry,
            &s.store,
            &w.builder,
            TrustedImageList::from_ids([s.base_id.clone()]),
        )
        .unwrap();
        let proposal = accepted_proposal();

        let router = Principal::of("tb-main");

        // The user refuses to sign.
        let err = builder
            .build_train(&proposal, &submission(&s.base_id), |_d| {
                Err("user declined".to_string())
            })
            .unwrap_err();
        assert!(matches!(err, BuildError::UserSignature(_)));

        // The user signs with the wrong key (signature will not verify).
        let err = builder
            .build_train(&proposal, &submission(&s.base_id), |d| {
                let mut forged = crypto::sign(d, &w.stations[0]);
                forged.signer_id = "user-1".into();
                Ok(forged)
            })
            .unwrap_err();
        assert!(matches!(err, BuildError::UserSignature(_)));

        // Both failures rolled back: a successful build right after draws a
        // fresh train id, and no orphan route blocks it.
        let built = builder
            .build_train(&proposal, &submission(&s.base_id), user_signer())
            .unwrap();
        assert!(s.store.route(&router, &built.train_id).is_ok());
    }

    #[test]
    fn submission_drafts_read_the_three_part_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("algorithm.json"), b"{\"kind\":\"count\"}").unwrap();
        std::fs::write(dir.path().join("query.txt"), "age >= 18\n").unwrap();
        std::fs::write(
            dir.path().join("stations.txt"),
            "General Hospital\n\nCounty Clinic\n",
        )
        .unwrap();

        let draft = SubmissionDraft::from_dir(dir.path()).unwrap();
        assert_eq!(draft.algorithm, b"{\"kind\":\"count\"}");
        assert_eq!(draft.query, b"age >= 18");
        assert_eq!(draft.station_names, vec!["General Hospital", "County Clinic"]);

        std::fs::write(dir.path().join("stations.txt"), "\n").unwrap();
        assert!(matches!(
            SubmissionDraft::from_dir(dir.path()),
            Err(BuildError::MalformedSubmission(_))
        ));
    }

    #[test]
    fn trusted_list_files_skip_blanks_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trusted_images.txt");
        std::fs::write(&path, "# approved runtimes\nabc123\n\n  def456  \n").unwrap();
        let list = TrustedImageList::from_file(&path).unwrap();
        assert!(list.contains("abc123"));
        assert!(list.contains("def456"));
        assert!(!list.contains("# approved runtimes"));
        assert_eq!(list.ids().count(), 2);
    }
}
