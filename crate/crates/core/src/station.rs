//! Station runtime: the verify–execute–reseal cycle a train goes through at
//! every stop, plus the user's matching offline verification of the final
//! results.
//!
//! `pre_run` is the protocol's teeth. It re-derives every claim a train
//! carries — trusted base image, route binding, user and builder
//! signatures over the exact decrypted plaintexts, the hash-chain proving
//! which stations ran and in what order, and the previous station's
//! signature over the current result bytes — and refuses to surface the
//! analysis descriptor until all of it holds. Anything a malicious carrier
//! rewrites trips exactly one of these checks; the analysis executor is
//! never reached.
//!
//! `post_run` reseals the train: it signs the new results, re-encrypts them
//! under a fresh key, rewraps the key envelope for every recipient, and
//! extends the hash chain with this station's segment.

use crate::analysis::{AnalysisDescriptor, AnalysisError, ResultData};
use crate::crypto::{
    self, canonical_encode, hash, CryptoError, KeyPair, PublicKey, Signature, SymmetricKey,
};
use crate::model::{
    self, train_hash_message, LayerKind, ModelError, Route, StaticPayload, TrainBundle,
    TrainConfig,
};
use crate::query::{DataError, FilterExpr};
use crate::registry::{ResultPackage, SecretStore, StoreError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

/// Why a station refused a train. Each verification step maps to exactly
/// one reason, so tests (and operators) can tell attacks apart.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    UntrustedImage,
    BadUserSignature,
    BadBuilderSignature,
    BadChain,
    RouteMismatch,
    BadResultSignature,
    DecryptFailure,
}

impl AbortReason {
    pub fn code(&self) -> &'static str {
        match self {
            AbortReason::UntrustedImage => "untrusted_image",
            AbortReason::BadUserSignature => "bad_user_signature",
            AbortReason::BadBuilderSignature => "bad_builder_signature",
            AbortReason::BadChain => "bad_chain",
            AbortReason::RouteMismatch => "route_mismatch",
            AbortReason::BadResultSignature => "bad_result_signature",
            AbortReason::DecryptFailure => "decrypt_failure",
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A verification failure: the train is halted, nothing is executed.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ProtocolAbort {
    pub code: AbortReason,
    pub detail: String,
}

impl ProtocolAbort {
    fn new(code: AbortReason, detail: impl Into<String>) -> Self {
        ProtocolAbort {
            code,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ProtocolAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StationError {
    #[error("train verification failed — {0}")]
    Abort(ProtocolAbort),
    #[error("the train is verified but its analysis is not runnable here: {0}")]
    Unsupported(String),
    #[error("station misconfiguration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("analysis execution failed: {0}")]
    Execution(#[from] AnalysisError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl StationError {
    /// The abort, if this error is a protocol abort.
    pub fn abort(&self) -> Option<&ProtocolAbort> {
        match self {
            StationError::Abort(a) => Some(a),
            _ => None,
        }
    }
}

fn abort(code: AbortReason, detail: impl Into<String>) -> StationError {
    StationError::Abort(ProtocolAbort::new(code, detail))
}

/// Execution limits a station imposes on any train it runs.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Resources {
    pub max_records: usize,
    pub timeout_seconds: u64,
}

impl Default for Resources {
    fn default() -> Self {
        Resources {
            max_records: 100_000,
            timeout_seconds: 60,
        }
    }
}

impl Resources {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_seconds)
    }
}

/// A station's local identity and environment: its keypair, its record
/// store, the base images it trusts, and its execution limits.
pub struct StationContext {
    pub keypair: KeyPair,
    pub data_path: PathBuf,
    pub trusted_images: BTreeSet<String>,
    pub resources: Resources,
}

impl StationContext {
    pub fn pid(&self) -> &str {
        self.keypair.entity_id()
    }
}

/// A train that passed every `pre_run` check. Holding one is the only way
/// to reach `execute` and `post_run`.
pub struct VerifiedTrain {
    bundle: TrainBundle,
    config: TrainConfig,
    route: Route,
    position: usize,
    descriptor: AnalysisDescriptor,
    filter: FilterExpr,
    previous: Option<ResultData>,
}

impl VerifiedTrain {
    pub fn train_id(&self) -> &str {
        self.bundle.image_id()
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn descriptor(&self) -> &AnalysisDescriptor {
        &self.descriptor
    }

    pub fn filter(&self) -> &FilterExpr {
        &self.filter
    }

    pub fn previous_results(&self) -> Option<&ResultData> {
        self.previous.as_ref()
    }
}

// ---------------------------------------------------------------------------
// Chain and result signature material

/// The message a station signs to extend the chain: the session nonce for
/// the first segment, afterwards the canonical framing of every existing
/// segment — so each segment pins the entire prefix before it.
pub fn chain_extension_message(chain: &[Signature], session_id: &[u8; 32]) -> Vec<u8> {
    if chain.is_empty() {
        return session_id.to_vec();
    }
    let parts: Vec<Vec<u8>> = chain.iter().map(Signature::canonical_bytes).collect();
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    canonical_encode(&refs)
}

/// The message a station signs over the result bytes it produced, bound to
/// this train's session.
pub fn result_signature_message(result_bytes: &[u8], session_id: &[u8; 32]) -> Vec<u8> {
    canonical_encode(&[result_bytes, session_id])
}

/// Verify a chain against the stations that should have produced it:
/// segment `j` must name `pids[j]` and verify over the prefix before it.
/// `keys` must map every pid the chain names.
pub fn verify_chain(
    chain: &[Signature],
    pids: &[String],
    session_id: &[u8; 32],
    keys: &BTreeMap<String, PublicKey>,
) -> Result<(), ProtocolAbort> {
    if chain.len() > pids.len() {
        return Err(ProtocolAbort::new(
            AbortReason::BadChain,
            format!(
                "chain holds {} segments but the route has only {} stations",
                chain.len(),
                pids.len()
            ),
        ));
    }
    for (j, segment) in chain.iter().enumerate() {
        let expected = &pids[j];
        if &segment.signer_id != expected {
            return Err(ProtocolAbort::new(
                AbortReason::BadChain,
                format!(
                    "segment {j} is signed by `{}`, expected `{expected}`",
                    segment.signer_id
                ),
            ));
        }
        let key = keys.get(expected).ok_or_else(|| {
            ProtocolAbort::new(AbortReason::BadChain, format!("no key for signer `{expected}`"))
        })?;
        let message = chain_extension_message(&chain[..j], session_id);
        if !crypto::vrfy(&message, segment, key) {
            return Err(ProtocolAbort::new(
                AbortReason::BadChain,
                format!("segment {j} by `{expected}` does not verify"),
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// pre_run

fn unwrap_symmetric_key(
    envelope: &BTreeMap<String, Vec<u8>>,
    which: &str,
    keypair: &KeyPair,
) -> Result<SymmetricKey, StationError> {
    let pid = keypair.entity_id();
    let wrapped = envelope.get(pid).ok_or_else(|| {
        abort(
            AbortReason::DecryptFailure,
            format!("the {which} envelope holds no entry for `{pid}`"),
        )
    })?;
    let raw = crypto::decp(wrapped, keypair).map_err(|e| {
        abort(
            AbortReason::DecryptFailure,
            format!("the {which} envelope entry for `{pid}` does not decrypt: {e}"),
        )
    })?;
    SymmetricKey::from_bytes(&raw).map_err(|e| {
        abort(
            AbortReason::DecryptFailure,
            format!("the {which} envelope entry for `{pid}` is not a valid key: {e}"),
        )
    })
}

/// Verify an arriving train image end to end. Returns the verified train —
/// with its decrypted, parsed analysis — only if every protocol check
/// passes; the analysis is never even parsed before the signatures hold.
pub fn pre_run(
    ctx: &StationContext,
    store: &SecretStore,
    image: &[u8],
) -> Result<VerifiedTrain, StationError> {
    let pid = ctx.pid();

    // Structural integrity: the archive itself, layer digests, manifest.
    let bundle = model::deserialize_bundle(image)?;
    let config = bundle.config()?;
    let train_id = bundle.image_id().to_string();

    // Guard against running with a key the directory does not vouch for.
    let registered = store.public_key(pid)?;
    if &registered != ctx.keypair.public() {
        return Err(StationError::Config(format!(
            "the key registered for `{pid}` does not match this station's keypair"
        )));
    }

    // The base layer must be a known-good runtime, and the config must not
    // lie about which one it is.
    let base = bundle
        .layer(LayerKind::Base)
        .expect("deserialized bundles always carry a base layer");
    let base_id = hash(base.payload()).to_hex();
    if base_id != config.base_image_id || !ctx.trusted_images.contains(&base_id) {
        return Err(abort(
            AbortReason::UntrustedImage,
            format!("base layer digest {base_id} is not a trusted runtime"),
        ));
    }

    // The route this station was told about must be the route the user
    // signed. Not being a participant at all is a routing violation too.
    let route = match store.route_for_participant(pid, &train_id) {
        Ok(route) => route,
        Err(StoreError::UnknownRoute(_)) | Err(StoreError::NotParticipant { .. }) => {
            return Err(abort(
                AbortReason::RouteMismatch,
                format!("no route places `{pid}` on train `{train_id}`"),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    if route.digest() != config.route_digest {
        return Err(abort(
            AbortReason::RouteMismatch,
            "the stored route does not match the digest pinned in the config",
        ));
    }
    let position = route
        .position(pid)
        .expect("participant gating guarantees membership");

    // Open the static layer with the build-time envelope.
    let static_key = unwrap_symmetric_key(&config.static_key_envelope, "static", &ctx.keypair)?;
    let static_layer = bundle
        .layer(LayerKind::Static)
        .expect("deserialized bundles always carry a static layer");
    let payload = StaticPayload::from_bytes(static_layer.payload()).map_err(|e| {
        abort(
            AbortReason::DecryptFailure,
            format!("static payload framing is invalid: {e}"),
        )
    })?;
    let algorithm = crypto::decs(&payload.enc_algorithm, &static_key).map_err(|_| {
        abort(
            AbortReason::DecryptFailure,
            "the analysis descriptor does not decrypt under the static key",
        )
    })?;
    let query = crypto::decs(&payload.enc_query, &static_key).map_err(|_| {
        abort(
            AbortReason::DecryptFailure,
            "the query does not decrypt under the static key",
        )
    })?;

    // The user's signature binds identity, analysis, query, route, and
    // session — verified over the exact plaintexts just decrypted, before
    // anything is parsed or executed.
    if config.user_signature.signer_id != config.user_id {
        return Err(abort(
            AbortReason::BadUserSignature,
            format!(
                "user signature names `{}`, config names `{}`",
                config.user_signature.signer_id, config.user_id
            ),
        ));
    }
    let user_key = store.public_key(&config.user_id)?;
    let message = train_hash_message(
        &config.user_id,
        &algorithm,
        &query,
        &route,
        &config.session_id,
    );
    if !crypto::vrfy(&message, &config.user_signature, &user_key) {
        return Err(abort(
            AbortReason::BadUserSignature,
            "the user's signature does not cover this train's analysis, query, route, and session",
        ));
    }

    // The builder's countersignature over the user's signature.
    let builder_id = store.builder_id()?;
    if config.builder_signature.signer_id != builder_id {
        return Err(abort(
            AbortReason::BadBuilderSignature,
            format!(
                "builder signature names `{}`, the registered builder is `{builder_id}`",
                config.builder_signature.signer_id
            ),
        ));
    }
    let builder_key = store.public_key(&builder_id)?;
    if !crypto::vrfy(
        &config.user_signature.canonical_bytes(),
        &config.builder_signature,
        &builder_key,
    ) {
        return Err(abort(
            AbortReason::BadBuilderSignature,
            "the builder's countersignature does not verify",
        ));
    }

    // Position-dependent checks: the chain must prove exactly the executions
    // the route said happened before this stop, and the carried results must
    // be the ones the previous station signed.
    let previous = if position == 0 {
        if bundle.layer(LayerKind::Result).is_some() {
            return Err(abort(
                AbortReason::BadChain,
                "a result layer is present before any station ran",
            ));
        }
        if !config.chain.is_empty() {
            return Err(abort(
                AbortReason::BadChain,
                format!(
                    "chain holds {} segments but no station should have run yet",
                    config.chain.len()
                ),
            ));
        }
        if !config.visited.is_empty() {
            return Err(abort(
                AbortReason::RouteMismatch,
                "the visited list is non-empty before any station ran",
            ));
        }
        None
    } else {
        if config.chain.len() != position {
            return Err(abort(
                AbortReason::BadChain,
                format!(
                    "chain holds {} segments, position {position} requires exactly {position}",
                    config.chain.len()
                ),
            ));
        }
        let mut keys = BTreeMap::new();
        for prior in &route.station_pids[..position] {
            keys.insert(prior.clone(), store.public_key(prior)?);
        }
        verify_chain(&config.chain, &route.station_pids, &config.session_id, &keys)
            .map_err(StationError::Abort)?;

        if config.visited != route.station_pids[..position] {
            return Err(abort(
                AbortReason::RouteMismatch,
                format!(
                    "visited list {:?} does not match the route prefix {:?}",
                    config.visited,
                    &route.station_pids[..position]
                ),
            ));
        }

        let result_key = unwrap_symmetric_key(&config.key_envelope, "result", &ctx.keypair)?;
        let result_layer = bundle.layer(LayerKind::Result).ok_or_else(|| {
            abort(
                AbortReason::BadResultSignature,
                "the result layer is absent despite prior executions",
            )
        })?;
        let result_bytes = crypto::decs(result_layer.payload(), &result_key).map_err(|_| {
            abort(
                AbortReason::DecryptFailure,
                "the result layer does not decrypt under the result key",
            )
        })?;

        let prev_pid = &route.station_pids[position - 1];
        let prev_sig = config.result_signatures.get(prev_pid).ok_or_else(|| {
            abort(
                AbortReason::BadResultSignature,
                format!("no result signature from the previous station `{prev_pid}`"),
            )
        })?;
        if &prev_sig.signer_id != prev_pid {
            return Err(abort(
                AbortReason::BadResultSignature,
                format!(
                    "result signature names `{}`, expected `{prev_pid}`",
                    prev_sig.signer_id
                ),
            ));
        }
        let prev_key = store.public_key(prev_pid)?;
        let result_message = result_signature_message(&result_bytes, &config.session_id);
        if !crypto::vrfy(&result_message, prev_sig, &prev_key) {
            return Err(abort(
                AbortReason::BadResultSignature,
                format!("`{prev_pid}`'s signature does not cover the carried results"),
            ));
        }

        let previous = ResultData::from_bytes(&result_bytes)?;
        previous.validate()?;
        Some(previous)
    };

    // Only now, with every signature verified, surface the analysis. A
    // descriptor this station cannot run is an honest limitation, not an
    // integrity failure.
    let descriptor =
        AnalysisDescriptor::parse(&algorithm).map_err(|e| StationError::Unsupported(e.to_string()))?;
    let query_text = std::str::from_utf8(&query)
        .map_err(|_| StationError::Unsupported("the query is not valid UTF-8".into()))?;
    let filter = FilterExpr::parse(query_text)
        .map_err(|e| StationError::Unsupported(format!("the query does not parse: {e}")))?;

    Ok(VerifiedTrain {
        bundle,
        config,
        route,
        position,
        descriptor,
        filter,
        previous,
    })
}

// ---------------------------------------------------------------------------
// execute and post_run

/// Run the verified analysis over this station's local records, within the
/// station's resource limits.
pub fn execute(ctx: &StationContext, train: &VerifiedTrain) -> Result<ResultData, StationError> {
    let deadline = Instant::now() + ctx.resources.timeout();
    let records = crate::query::load_records(&ctx.data_path, ctx.resources.max_records)?;
    let results = crate::analysis::run_analysis(
        &train.descriptor,
        &train.filter,
        &records,
        ctx.pid(),
        train.previous.as_ref(),
        Some(deadline),
    )?;
    Ok(results)
}

/// Reseal the train around freshly produced results: sign them, encrypt
/// them under a fresh key, rewrap the key envelope for every station and
/// the user, extend the chain, and serialize the updated image.
pub fn post_run(
    ctx: &StationContext,
    store: &SecretStore,
    train: VerifiedTrain,
    results: &ResultData,
) -> Result<Vec<u8>, StationError> {
    results.validate()?;
    if results.kind != train.descriptor.kind() {
        return Err(StationError::Execution(AnalysisError::KindMismatch {
            expected: train.descriptor.kind(),
            found: results.kind,
        }));
    }

    let VerifiedTrain {
        mut bundle,
        mut config,
        route,
        ..
    } = train;
    let pid = ctx.pid().to_string();
    let result_bytes = results.canonical_bytes();

    // Sign the results, bound to this session, before sealing them.
    let result_message = result_signature_message(&result_bytes, &config.session_id);
    config
        .result_signatures
        .insert(pid.clone(), crypto::sign(&hash(&result_message), &ctx.keypair));

    // Fresh key, fresh envelope: every station and the user can open the
    // new results, and the old key never protects anything again.
    let fresh_key = SymmetricKey::generate();
    let mut envelope = BTreeMap::new();
    for recipient in &route.station_pids {
        let key = store.public_key(recipient)?;
        envelope.insert(recipient.clone(), crypto::encp(fresh_key.as_bytes(), &key)?);
    }
    let user_key = store.public_key(&config.user_id)?;
    envelope.insert(
        config.user_id.clone(),
        crypto::encp(fresh_key.as_bytes(), &user_key)?,
    );
    config.key_envelope = envelope;

    // Extend the chain over everything signed so far and record the visit.
    let extension = chain_extension_message(&config.chain, &config.session_id);
    let segment = crypto::sign(&hash(&extension), &ctx.keypair);
    config.chain.push(segment);
    config.visited.push(pid);

    bundle.set_layer(LayerKind::Result, crypto::encs(&result_bytes, &fresh_key));
    bundle.set_config(&config)?;
    Ok(model::serialize_bundle(&bundle)?)
}

// ---------------------------------------------------------------------------
// User-side verification

/// Decrypt and verify an extraction package without trusting the registry
/// that produced it: open the user's envelope entry, check the final
/// station's signature over the exact result bytes, and replay the full
/// chain against the route's public keys.
pub fn user_decrypt(
    package: &ResultPackage,
    user_keypair: &KeyPair,
) -> Result<ResultData, StationError> {
    if package.user_id != user_keypair.entity_id() {
        return Err(StationError::Config(format!(
            "the package is addressed to `{}`, not `{}`",
            package.user_id,
            user_keypair.entity_id()
        )));
    }
    let raw = crypto::decp(&package.user_key_envelope, user_keypair).map_err(|e| {
        abort(
            AbortReason::DecryptFailure,
            format!("the user envelope entry does not decrypt: {e}"),
        )
    })?;
    let key = SymmetricKey::from_bytes(&raw).map_err(|e| {
        abort(
            AbortReason::DecryptFailure,
            format!("the user envelope entry is not a valid key: {e}"),
        )
    })?;
    let result_bytes = crypto::decs(&package.enc_result, &key).map_err(|_| {
        abort(
            AbortReason::DecryptFailure,
            "the result payload does not decrypt under the unwrapped key",
        )
    })?;

    let mut keys = BTreeMap::new();
    for pid in &package.route_pids {
        let armored = package.station_public_keys.get(pid).ok_or_else(|| {
            StationError::Config(format!("the package carries no public key for `{pid}`"))
        })?;
        let (entity_id, _, public) = crypto::parse_public_key_armor(armored)?;
        if &entity_id != pid {
            return Err(StationError::Config(format!(
                "the key supplied for `{pid}` is armored for `{entity_id}`"
            )));
        }
        keys.insert(pid.clone(), public);
    }

    let last_pid = package
        .route_pids
        .last()
        .ok_or_else(|| StationError::Config("the package names an empty route".into()))?;
    if &package.result_signature.signer_id != last_pid {
        return Err(abort(
            AbortReason::BadResultSignature,
            format!(
                "the final result signature names `{}`, expected `{last_pid}`",
                package.result_signature.signer_id
            ),
        ));
    }
    let result_message = result_signature_message(&result_bytes, &package.session_id);
    if !crypto::vrfy(&result_message, &package.result_signature, &keys[last_pid]) {
        return Err(abort(
            AbortReason::BadResultSignature,
            "the final station's signature does not cover the decrypted results",
        ));
    }

    if package.chain.len() != package.route_pids.len() {
        return Err(abort(
            AbortReason::BadChain,
            format!(
                "chain holds {} segments for a route of {} stations",
                package.chain.len(),
                package.route_pids.len()
            ),
        ));
    }
    verify_chain(
        &package.chain,
        &package.route_pids,
        &package.session_id,
        &keys,
    )
    .map_err(StationError::Abort)?;

    let results = ResultData::from_bytes(&result_bytes)?;
    results.validate()?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::MIN_RSA_BITS;

    fn chain_keys(n: usize) -> (Vec<KeyPair>, Vec<String>, BTreeMap<String, PublicKey>) {
        let keypairs: Vec<KeyPair> = (0..n)
            .map(|i| KeyPair::generate(&format!("st-chain{i:04}"), MIN_RSA_BITS).unwrap())
            .collect();
        let pids: Vec<String> = keypairs.iter().map(|k| k.entity_id().to_string()).collect();
        let keys = keypairs
            .iter()
            .map(|k| (k.entity_id().to_string(), k.public().clone()))
            .collect();
        (keypairs, pids, keys)
    }

    fn build_chain(keypairs: &[KeyPair], session_id: &[u8; 32]) -> Vec<Signature> {
        let mut chain = Vec::new();
        for kp in keypairs {
            let message = chain_extension_message(&chain, session_id);
            chain.push(crypto::sign(&hash(&message), kp));
        }
        chain
    }

    #[test]
    fn chains_verify_exactly_when_untouched_and_in_order() {
        let (keypairs, pids, keys) = chain_keys(3);
        let session = [9u8; 32];
        let chain = build_chain(&keypairs, &session);

        // Every prefix verifies, as does the full chain.
        for len in 0..=chain.len() {
            verify_chain(&chain[..len], &pids, &session, &keys).unwrap();
        }

        // A flipped byte in any segment breaks it.
        for j in 0..chain.len() {
            let mut broken = chain.clone();
            broken[j].bytes[0] ^= 1;
            let err = verify_chain(&broken, &pids, &session, &keys).unwrap_err();
            assert_eq!(err.code, AbortReason::BadChain);
        }

        // Swapping two segments breaks the order binding.
        let mut swapped = chain.clone();
        swapped.swap(0, 1);
        assert!(verify_chain(&swapped, &pids, &session, &keys).is_err());

        // Dropping a middle segment breaks every later one.
        let dropped: Vec<Signature> = vec![chain[0].clone(), chain[2].clone()];
        assert!(verify_chain(&dropped, &pids, &session, &keys).is_err());

        // Duplicating a segment fails on the repeated signer.
        let duplicated = vec![chain[0].clone(), chain[0].clone(), chain[2].clone()];
        assert!(verify_chain(&duplicated, &pids, &session, &keys).is_err());

        // A chain longer than the route can never verify.
        let mut long = chain.clone();
        long.push(chain[2].clone());
        assert!(verify_chain(&long, &pids, &session, &keys).is_err());

        // The same segments under a different session nonce fail.
        assert!(verify_chain(&chain, &pids, &[0u8; 32], &keys).is_err());
    }

    #[test]
    fn chain_extension_messages_pin_the_whole_prefix() {
        let (keypairs, _, _) = chain_keys(2);
        let session = [1u8; 32];
        let chain = build_chain(&keypairs, &session);

        assert_eq!(chain_extension_message(&[], &session), session.to_vec());
        let one = chain_extension_message(&chain[..1], &session);
        let two = chain_extension_message(&chain, &session);
        assert_ne!(one, two);

        // Changing an earlier segment changes every later message.
        let mut altered = chain.clone();
        altered[0].bytes[0] ^= 1;
        assert_ne!(chain_extension_message(&altered, &session), two);
    }

    #[test]
    fn resource_defaults_are_generous_but_bounded() {
        let r = Resources::default();
        assert_eq!(r.max_records, 100_000);
        assert_eq!(r.timeout(), Duration::from_secs(60));
    }
}
