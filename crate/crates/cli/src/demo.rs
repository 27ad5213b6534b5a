//! Self-contained walkthroughs over in-memory services: no workspace on
//! disk, everything (keys, registry, fixtures) lives for one invocation.
//! Each scenario narrates the full lifecycle and self-checks its outcome
//! against an independently computed expectation.

use crate::commands::Output;
use crate::error::CliError;
use num_bigint::BigUint;
use pht_core::builder::{ApprovalDecision, Submission, TrainBuilder, TrustedImageList};
use pht_core::crypto::{self, KeyPair, MIN_RSA_BITS};
use pht_core::fixtures::{self, TARGET_ALLELE};
use pht_core::paillier::PaillierKeyPair;
use pht_core::registry::{
    Principal, Registry, RepoName, ResultPackage, Role, SecretStore, TamperAttack,
};
use pht_core::station::{self, AbortReason, Resources, StationContext};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;

const BUILDER_ID: &str = "conductor";
const USER_ID: &str = "analyst";
const STATION_IDS: [&str; 3] = ["st-demo-a", "st-demo-b", "st-demo-c"];

struct DemoKeys {
    builder: KeyPair,
    user: KeyPair,
    stations: Vec<KeyPair>,
}

/// One keypair set per process: RSA generation dominates demo runtime, and
/// fresh worlds only need fresh services, not fresh identities.
fn keys() -> &'static DemoKeys {
    static KEYS: OnceLock<DemoKeys> = OnceLock::new();
    KEYS.get_or_init(|| DemoKeys {
        builder: KeyPair::generate(BUILDER_ID, MIN_RSA_BITS).expect("builder keygen"),
        user: KeyPair::generate(USER_ID, MIN_RSA_BITS).expect("user keygen"),
        stations: STATION_IDS
            .iter()
            .map(|id| KeyPair::generate(id, MIN_RSA_BITS).expect("station keygen"))
            .collect(),
    })
}

struct DemoWorld {
    store: SecretStore,
    registry: Registry,
    base_id: String,
    data_dirs: Vec<PathBuf>,
    _tmp: tempfile::TempDir,
}

impl DemoWorld {
    fn new(write_data: impl Fn(usize, &PathBuf) -> std::io::Result<PathBuf>) -> Result<Self, CliError> {
        let keys = keys();
        let store = SecretStore::in_memory();
        store.register_entity(BUILDER_ID, Role::Builder, keys.builder.public())?;
        store.register_entity(USER_ID, Role::User, keys.user.public())?;
        for kp in &keys.stations {
            store.register_entity(kp.entity_id(), Role::Station, kp.public())?;
        }
        let registry = Registry::in_memory();
        let base_id = registry.push(
            &store,
            &Principal::of(BUILDER_ID),
            &RepoName::TrustedBase,
            b"shared analysis runtime v1",
        )?;
        let tmp = tempfile::tempdir()
            .map_err(|e| CliError::internal(format!("tempdir: {e}")))?;
        let mut data_dirs = Vec::new();
        for i in 0..STATION_IDS.len() {
            let dir = tmp.path().join(format!("station-{i}"));
            write_data(i, &dir).map_err(|e| CliError::internal(format!("fixtures: {e}")))?;
            data_dirs.push(dir);
        }
        Ok(DemoWorld {
            store,
            registry,
            base_id,
            data_dirs,
            _tmp: tmp,
        })
    }

    fn with_allele_data(mix: &[(usize, usize)], seed: u64) -> Result<Self, CliError> {
        DemoWorld::new(|i, dir| {
            let (total, matching) = mix[i];
            let lines =
                fixtures::generate_allele_records(&format!("d{i}"), seed + i as u64, total, matching);
            fixtures::write_record_store(dir, &lines)
        })
    }

    fn with_random_data(seed: u64) -> Result<Self, CliError> {
        DemoWorld::new(|i, dir| {
            let lines = fixtures::generate_random_records(&format!("d{i}"), seed + i as u64);
            fixtures::write_record_store(dir, &lines)
        })
    }

    fn pids(&self) -> Vec<String> {
        STATION_IDS.iter().map(|s| s.to_string()).collect()
    }

    fn dispatch(&self, descriptor: &[u8], query: &[u8]) -> Result<String, CliError> {
        let keys = keys();
        let builder = TrainBuilder::new(
            &self.registry,
            &self.store,
            &keys.builder,
            TrustedImageList::from_ids([self.base_id.clone()]),
        )?;
        let mut proposal = builder.create_proposal(USER_ID, &self.pids())?;
        for pid in STATION_IDS {
            proposal.record_approval(pid, ApprovalDecision::Accepted)?;
        }
        let submission = Submission {
            user_id: USER_ID.into(),
            algorithm: descriptor.to_vec(),
            query: query.to_vec(),
            station_pids: self.pids(),
            base_image_id: self.base_id.clone(),
        };
        let built = builder.build_train(&proposal, &submission, |digest| {
            Ok(crypto::sign(digest, &keys.user))
        })?;
        builder.dispatch(&built)?;
        Ok(built.train_id)
    }

    fn station_ctx(&self, i: usize) -> StationContext {
        StationContext {
            keypair: keys().stations[i].clone(),
            data_path: self.data_dirs[i].join("records.ndjson"),
            trusted_images: BTreeSet::from([self.base_id.clone()]),
            resources: Resources::default(),
        }
    }

    /// Honest station turn: pull, verify, execute, reseal, push back.
    fn run_station(&self, i: usize, train_id: &str) -> Result<(), CliError> {
        let principal = Principal::of(STATION_IDS[i]);
        let repo = RepoName::Station(STATION_IDS[i].to_string());
        let image = self.registry.pull(&self.store, &principal, &repo, train_id)?;
        let ctx = self.station_ctx(i);
        let train = station::pre_run(&ctx, &self.store, &image)?;
        let results = station::execute(&ctx, &train)?;
        let out = station::post_run(&ctx, &self.store, train, &results)?;
        self.registry.push(&self.store, &principal, &repo, &out)?;
        Ok(())
    }

    fn route(&self, train_id: &str) -> Result<RepoName, CliError> {
        Ok(self
            .registry
            .route_next(&self.store, &Principal::of(BUILDER_ID), train_id)?)
    }

    /// Route + run every hop, narrating each, then extract the package.
    fn drive(&self, train_id: &str, log: &mut Vec<String>) -> Result<ResultPackage, CliError> {
        let mut hop = 0;
        loop {
            match self.route(train_id)? {
                RepoName::Station(pid) => {
                    hop += 1;
                    let i = STATION_IDS
                        .iter()
                        .position(|s| *s == pid)
                        .expect("demo route stays within demo stations");
                    self.run_station(i, train_id)?;
                    log.push(format!(
                        "hop {hop}: {pid} verified signatures + chain, ran the analysis, resealed and pushed back"
                    ));
                }
                RepoName::Outgoing => {
                    log.push("train reached `outgoing`".to_string());
                    break;
                }
                other => {
                    return Err(CliError::internal(format!(
                        "train routed to unexpected repo `{other}`"
                    )))
                }
            }
        }
        Ok(self
            .registry
            .extract_results(&self.store, &Principal::of(BUILDER_ID), train_id)?)
    }

    /// Independent oracle: raw fixture lines, parsed with serde_json alone.
    fn raw_records(&self) -> Result<Vec<serde_json::Value>, CliError> {
        let mut records = Vec::new();
        for dir in &self.data_dirs {
            let text = std::fs::read_to_string(dir.join("records.ndjson"))
                .map_err(|e| CliError::internal(format!("fixture read: {e}")))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                records.push(serde_json::from_str(line)?);
            }
        }
        Ok(records)
    }
}

pub fn demo(scenario: &str, seed: u64) -> Result<Output, CliError> {
    match scenario {
        "hla-count" => hla_count(seed),
        "hist" => hist(seed),
        "attack-matrix" => attack_matrix(seed),
        other => Err(CliError::config(format!(
            "unknown scenario `{other}` (hla-count|hist|attack-matrix)"
        ))),
    }
}

/// Three hospitals count occurrences of one HLA allele without any party —
/// stations, builder, or registry — seeing another station's count: counts
/// travel under the user's additively homomorphic key.
fn hla_count(seed: u64) -> Result<Output, CliError> {
    let mix = [(20usize, 9usize), (15, 8), (30, 7)];
    let expected: [u64; 3] = [9, 8, 7];
    let world = DemoWorld::with_allele_data(&mix, seed)?;
    let paillier = PaillierKeyPair::generate(1024)
        .map_err(|e| CliError::internal(format!("paillier keygen: {e}")))?;

    let mut log = vec!["-- encrypted allele count over three stations --".to_string()];
    for (i, (total, matching)) in mix.iter().enumerate() {
        log.push(format!(
            "{}: {total} records, {matching} carrying {TARGET_ALLELE}",
            STATION_IDS[i]
        ));
    }

    let descriptor = serde_json::to_vec(&json!({
        "kind": "paillier_count",
        "params": { "paillier_public_key": paillier.public() },
    }))?;
    let query = format!("hla_allele = \"{TARGET_ALLELE}\"").into_bytes();
    let train_id = world.dispatch(&descriptor, &query)?;
    log.push(format!("train {train_id} built, signed, and dispatched"));

    let package = world.drive(&train_id, &mut log)?;
    let results = station::user_decrypt(&package, &keys().user)?;
    log.push("user verified the chain and opened the result envelope".to_string());

    let total = match &results.merged {
        pht_core::analysis::MergedView::PaillierCount { encrypted_total } => {
            paillier.decrypt(encrypted_total)?
        }
        other => {
            return Err(CliError::internal(format!(
                "expected a homomorphic count, got {other:?}"
            )))
        }
    };
    let mut per_station = BTreeMap::new();
    for (pid, entry) in &results.stations {
        match entry {
            pht_core::analysis::StationEntry::PaillierCount { encrypted_count } => {
                per_station.insert(pid.clone(), paillier.decrypt(encrypted_count)?);
            }
            other => {
                return Err(CliError::internal(format!(
                    "expected per-station ciphertexts, got {other:?}"
                )))
            }
        }
    }

    let want_total: u64 = expected.iter().sum();
    log.push(format!("merged ciphertext decrypts to {total} (expected {want_total})"));
    let mut ok = total == BigUint::from(want_total);
    for (i, pid) in STATION_IDS.iter().enumerate() {
        let got = per_station
            .get(*pid)
            .ok_or_else(|| CliError::internal(format!("missing entry for {pid}")))?;
        log.push(format!("  {pid}: {got} (expected {})", expected[i]));
        ok &= *got == BigUint::from(expected[i]);
    }
    log.push(format!("self-check: {}", if ok { "PASS" } else { "FAIL" }));
    if !ok {
        return Err(CliError::internal("demo self-check failed"));
    }

    Ok(Output {
        human: log.join("\n"),
        json: json!({
            "command": "demo",
            "scenario": "hla-count",
            "train_id": train_id,
            "route": STATION_IDS,
            "allele": TARGET_ALLELE,
            "total": u64::try_from(&total).map_err(|_| CliError::internal("count overflows u64"))?,
            "stations": per_station
                .iter()
                .map(|(pid, v)| (pid.clone(), v.to_string()))
                .collect::<BTreeMap<_, _>>(),
            "self_check": "pass",
        }),
    })
}

/// Top-k histogram of allele values across randomized stations, checked
/// against a flat scan of the raw fixture files.
fn hist(seed: u64) -> Result<Output, CliError> {
    let world = DemoWorld::with_random_data(seed)?;
    let descriptor = br#"{"kind":"top_k_hist","params":{"field":"hla_allele","k":3}}"#;
    let query = b"age >= 0";
    let mut log = vec![
        "-- top-3 allele histogram over randomized stations --".to_string(),
        format!("fixture seed: {seed}"),
    ];

    let train_id = world.dispatch(descriptor, query)?;
    log.push(format!("train {train_id} built, signed, and dispatched"));
    let package = world.drive(&train_id, &mut log)?;
    let results = station::user_decrypt(&package, &keys().user)?;

    let (histogram, top, k) = match &results.merged {
        pht_core::analysis::MergedView::TopKHist { histogram, top, k } => (histogram, top, *k),
        other => {
            return Err(CliError::internal(format!(
                "expected a histogram, got {other:?}"
            )))
        }
    };

    // Oracle: same statistic straight off the raw records.
    let mut want_hist: BTreeMap<String, u64> = BTreeMap::new();
    for record in world.raw_records()? {
        if record["age"].as_f64().is_some_and(|a| a >= 0.0) {
            if let Some(v) = record["hla_allele"].as_str() {
                *want_hist.entry(v.to_string()).or_insert(0) += 1;
            }
        }
    }
    let mut want_top: Vec<(String, u64)> =
        want_hist.iter().map(|(kv, c)| (kv.clone(), *c)).collect();
    want_top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    want_top.truncate(k);

    log.push(format!("top {k} alleles (train result vs raw-file scan):"));
    for (i, (value, count)) in top.iter().enumerate() {
        let (wv, wc) = &want_top[i];
        log.push(format!("  {value}: {count}   (oracle: {wv}: {wc})"));
    }
    let ok = top == &want_top && histogram == &want_hist;
    log.push(format!("self-check: {}", if ok { "PASS" } else { "FAIL" }));
    if !ok {
        return Err(CliError::internal("demo self-check failed"));
    }

    Ok(Output {
        human: log.join("\n"),
        json: json!({
            "command": "demo",
            "scenario": "hist",
            "train_id": train_id,
            "seed": seed,
            "top": top,
            "histogram": histogram,
            "self_check": "pass",
        }),
    })
}

/// Every registry-level attack from the threat model, each against a fresh
/// world: all six must halt the train at verification, before execution.
fn attack_matrix(seed: u64) -> Result<Output, CliError> {
    struct Case {
        label: &'static str,
        hops_before: usize,
        victim: usize,
        expected: AbortReason,
        attack: fn() -> TamperAttack,
    }
    let cases = [
        Case {
            label: "modify_static",
            hops_before: 0,
            victim: 0,
            expected: AbortReason::BadUserSignature,
            attack: || TamperAttack::ModifyStatic,
        },
        Case {
            label: "swap_base_layer",
            hops_before: 0,
            victim: 0,
            expected: AbortReason::UntrustedImage,
            attack: || TamperAttack::SwapBaseLayer,
        },
        Case {
            label: "modify_result",
            hops_before: 1,
            victim: 1,
            expected: AbortReason::BadResultSignature,
            attack: || TamperAttack::ModifyResult,
        },
        Case {
            label: "modify_config",
            hops_before: 1,
            victim: 1,
            expected: AbortReason::RouteMismatch,
            attack: || TamperAttack::ModifyConfig,
        },
        Case {
            label: "reroute_image",
            hops_before: 1,
            victim: 2,
            expected: AbortReason::BadChain,
            attack: || TamperAttack::RerouteImage {
                to_pid: STATION_IDS[2].to_string(),
            },
        },
        Case {
            label: "replay_result",
            hops_before: 2,
            victim: 2,
            expected: AbortReason::BadChain,
            attack: || TamperAttack::ReplayResult,
        },
    ];

    let mut log = vec![
        "-- malicious-registry attack matrix --".to_string(),
        format!("{:<16} {:<24} {:<22} detected", "attack", "struck", "halt code"),
    ];
    let mut rows = Vec::new();
    let mut detected = 0;
    for case in &cases {
        let world = DemoWorld::with_allele_data(&[(12, 5), (9, 4), (11, 6)], seed)?;
        let train_id = world.dispatch(br#"{"kind":"count","params":{}}"#, b"age >= 1")?;
        for _ in 0..case.hops_before {
            match world.route(&train_id)? {
                RepoName::Station(pid) => {
                    let i = STATION_IDS.iter().position(|s| *s == pid).expect("route");
                    world.run_station(i, &train_id)?;
                }
                other => {
                    return Err(CliError::internal(format!(
                        "unexpected repo `{other}` before the attack"
                    )))
                }
            }
        }
        // Move the image into the repo the registry will strike.
        world.route(&train_id)?;
        let report = world
            .registry
            .tamper(&world.store, &(case.attack)(), &train_id)?;

        // The victim station pulls the tampered image; verification must
        // halt it before the analysis ever runs.
        let pid = STATION_IDS[case.victim];
        let image = world.registry.pull(
            &world.store,
            &Principal::of(pid),
            &RepoName::Station(pid.to_string()),
            &train_id,
        )?;
        let ctx = world.station_ctx(case.victim);
        let code = match station::pre_run(&ctx, &world.store, &image) {
            Ok(_) => None,
            Err(e) => e.abort().map(|a| a.code),
        };
        let ok = code.as_ref() == Some(&case.expected);
        if ok {
            detected += 1;
        }
        let code_str = code
            .as_ref()
            .map_or("NOT DETECTED".to_string(), |c| c.code().to_string());
        log.push(format!(
            "{:<16} {:<24} {:<22} {}",
            case.label,
            report.repo,
            code_str,
            if ok { "yes" } else { "NO" }
        ));
        rows.push(json!({
            "attack": case.label,
            "struck": report.repo,
            "halt_code": code.as_ref().map(|c| c.code()),
            "expected": case.expected.code(),
            "detected": ok,
        }));
    }
    log.push(format!("{detected}/{} attacks detected and halted", cases.len()));
    if detected != cases.len() {
        return Err(CliError::internal("demo self-check failed"));
    }

    Ok(Output {
        human: log.join("\n"),
        json: json!({
            "command": "demo",
            "scenario": "attack-matrix",
            "cases": rows,
            "detected": detected,
            "self_check": "pass",
        }),
    })
}
