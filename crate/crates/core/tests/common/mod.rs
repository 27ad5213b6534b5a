//! Shared scaffolding for integration tests: a fully registered world
//! (builder, user, stations with on-disk record stores), plus drivers that
//! move a train through its whole lifecycle the way the CLI would.

#![allow(dead_code)] // each integration binary uses a subset of this module

use pht_core::builder::{
    ApprovalDecision, BuiltTrain, Proposal, Submission, TrainBuilder, TrustedImageList,
};
use pht_core::crypto::{self, KeyPair, MIN_RSA_BITS};
use pht_core::fixtures;
use pht_core::registry::{
    Principal, Registry, RepoName, ResultPackage, Role, SecretStore,
};
use pht_core::station::{self, Resources, StationContext, StationError};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

pub const BUILDER_ID: &str = "tb-main";
pub const USER_ID: &str = "user-main";
pub const MAX_POOL_STATIONS: usize = 8;

/// RSA keypairs are expensive; generate one pool per test binary and lend
/// it to every world.
pub struct KeyPool {
    pub builder: KeyPair,
    pub user: KeyPair,
    pub stations: Vec<KeyPair>,
}

pub fn pool() -> &'static KeyPool {
    static POOL: OnceLock<KeyPool> = OnceLock::new();
    POOL.get_or_init(|| KeyPool {
        builder: KeyPair::generate(BUILDER_ID, MIN_RSA_BITS).expect("builder keygen"),
        user: KeyPair::generate(USER_ID, MIN_RSA_BITS).expect("user keygen"),
        stations: (0..MAX_POOL_STATIONS)
            .map(|i| {
                KeyPair::generate(&format!("st-fix{i:04}"), MIN_RSA_BITS).expect("station keygen")
            })
            .collect(),
    })
}

/// A registered world over in-memory services: `n` stations with their own
/// record directories, one trusted base image, one builder, one user.
pub struct World {
    pub store: SecretStore,
    pub registry: Registry,
    pub base_id: String,
    pub station_pids: Vec<String>,
    pub data_dirs: Vec<PathBuf>,
    tmp: tempfile::TempDir,
}

pub const BASE_PAYLOAD: &[u8] = b"shared analysis runtime v1";

impl World {
    /// A world whose station record stores hold allele fixtures:
    /// `allele_mix[i] = (total_records, matching_records)` for station `i`.
    pub fn with_allele_data(allele_mix: &[(usize, usize)]) -> World {
        World::build(allele_mix.len(), |i, dir| {
            let (total, matching) = allele_mix[i];
            let lines = fixtures::generate_allele_records(
                &format!("w{i}"),
                1_000 * i as u64 + 7,
                total,
                matching,
            );
            fixtures::write_record_store(dir, &lines).expect("fixture write");
        })
    }

    /// A world with fully randomized record stores, seeded per station.
    pub fn with_random_data(n: usize, seed: u64) -> World {
        World::build(n, |i, dir| {
            let lines = fixtures::generate_random_records(&format!("r{i}"), seed + i as u64);
            fixtures::write_record_store(dir, &lines).expect("fixture write");
        })
    }

    fn build(n: usize, mut write_data: impl FnMut(usize, &PathBuf)) -> World {
        assert!(n <= MAX_POOL_STATIONS, "key pool holds {MAX_POOL_STATIONS} stations");
        let keys = pool();
        let store = SecretStore::in_memory();
        store
            .register_entity(BUILDER_ID, Role::Builder, keys.builder.public())
            .expect("register builder");
        store
            .register_entity(USER_ID, Role::User, keys.user.public())
            .expect("register user");
        let mut station_pids = Vec::new();
        for kp in &keys.stations[..n] {
            store
                .register_entity(kp.entity_id(), Role::Station, kp.public())
                .expect("register station");
            station_pids.push(kp.entity_id().to_string());
        }

        let registry = Registry::in_memory();
        let base_id = registry
            .push(
                &store,
                &Principal::of(BUILDER_ID),
                &RepoName::TrustedBase,
                BASE_PAYLOAD,
            )
            .expect("push trusted base");

        let tmp = tempfile::tempdir().expect("tempdir");
        let mut data_dirs = Vec::new();
        for i in 0..n {
            let dir = tmp.path().join(format!("station-{i}"));
            write_data(i, &dir);
            data_dirs.push(dir);
        }

        World {
            store,
            registry,
            base_id,
            station_pids,
            data_dirs,
            tmp,
        }
    }

    pub fn station_keypair(&self, i: usize) -> &KeyPair {
        &pool().stations[i]
    }

    pub fn station_ctx(&self, i: usize) -> StationContext {
        StationContext {
            keypair: self.station_keypair(i).clone(),
            data_path: self.data_dirs[i].join("records.ndjson"),
            trusted_images: BTreeSet::from([self.base_id.clone()]),
            resources: Resources::default(),
        }
    }

    pub fn train_builder(&self) -> TrainBuilder<'_> {
        TrainBuilder::new(
            &self.registry,
            &self.store,
            &pool().builder,
            TrustedImageList::from_ids([self.base_id.clone()]),
        )
        .expect("builder identity is registered")
    }

    pub fn submission(&self, algorithm: &[u8], query: &[u8]) -> Submission {
        Submission {
            user_id: USER_ID.into(),
            algorithm: algorithm.to_vec(),
            query: query.to_vec(),
            station_pids: self.station_pids.clone(),
            base_image_id: self.base_id.clone(),
        }
    }

    pub fn approved_proposal(&self) -> Proposal {
        let builder = self.train_builder();
        let mut proposal = builder
            .create_proposal(USER_ID, &self.station_pids)
            .expect("proposal");
        for pid in &self.station_pids {
            proposal
                .record_approval(pid, ApprovalDecision::Accepted)
                .expect("approval");
        }
        proposal
    }

    /// Build a train over all stations and dispatch it into `incoming`.
    pub fn build_and_dispatch(&self, algorithm: &[u8], query: &[u8]) -> BuiltTrain {
        let builder = self.train_builder();
        let built = builder
            .build_train(
                &self.approved_proposal(),
                &self.submission(algorithm, query),
                |digest| Ok(crypto::sign(digest, &pool().user)),
            )
            .expect("build");
        builder.dispatch(&built).expect("dispatch");
        built
    }

    pub fn station_index(&self, pid: &str) -> usize {
        self.station_pids
            .iter()
            .position(|p| p == pid)
            .expect("pid belongs to this world")
    }

    /// One full station turn: check the image out, verify, execute, reseal,
    /// push back. On verification failure the image is NOT pushed back —
    /// the train is halted at this station.
    pub fn run_station(&self, i: usize, train_id: &str) -> Result<(), StationError> {
        let pid = &self.station_pids[i];
        let principal = Principal::of(pid);
        let repo = RepoName::Station(pid.clone());
        let image = self
            .registry
            .pull(&self.store, &principal, &repo, train_id)
            .expect("station repo holds the arriving image");
        let ctx = self.station_ctx(i);
        let train = station::pre_run(&ctx, &self.store, &image)?;
        let results = station::execute(&ctx, &train)?;
        let out = station::post_run(&ctx, &self.store, train, &results)?;
        self.registry
            .push(&self.store, &principal, &repo, &out)
            .expect("push back");
        Ok(())
    }

    /// Drive a dispatched train through every hop and extract the package.
    pub fn drive_to_completion(&self, train_id: &str) -> ResultPackage {
        let router = Principal::of(BUILDER_ID);
        loop {
            match self
                .registry
                .route_next(&self.store, &router, train_id)
                .expect("routing")
            {
                RepoName::Station(pid) => {
                    let i = self.station_index(&pid);
                    self.run_station(i, train_id).expect("station turn");
                }
                RepoName::Outgoing => break,
                other => panic!("train routed to unexpected repo {other}"),
            }
        }
        self.registry
            .extract_results(&self.store, &router, train_id)
            .expect("extract")
    }

    /// Independent oracle: every record in every station's raw fixture
    /// file, parsed with nothing but serde_json — bypassing every protocol
    /// and analysis code path.
    pub fn raw_records(&self) -> Vec<serde_json::Value> {
        let mut records = Vec::new();
        for dir in &self.data_dirs {
            let text = std::fs::read_to_string(dir.join("records.ndjson")).expect("fixture read");
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                records.push(serde_json::from_str(line).expect("fixture line"));
            }
        }
        records
    }

    /// Independent oracle: count raw records the predicate accepts.
    pub fn raw_scan_count(&self, mut predicate: impl FnMut(&serde_json::Value) -> bool) -> u64 {
        self.raw_records()
            .iter()
            .filter(|v| predicate(v))
            .count() as u64
    }
}

/// The canonical allele-count descriptor used across tests.
pub fn count_descriptor() -> Vec<u8> {
    br#"{"kind":"count","params":{}}"#.to_vec()
}

pub fn allele_query() -> Vec<u8> {
    format!("hla_allele = \"{}\"", fixtures::TARGET_ALLELE).into_bytes()
}
