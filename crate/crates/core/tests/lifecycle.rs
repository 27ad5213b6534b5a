//! End-to-end lifecycle: build, dispatch, route, verify, execute, reseal,
//! extract, decrypt — plus the operational edges (checkout semantics,
//! resource limits, unfinished extraction, unsupported analyses).

mod common;

use common::{allele_query, count_descriptor, World, BUILDER_ID};
use pht_core::analysis::MergedView;
use pht_core::crypto;
use pht_core::fixtures::TARGET_ALLELE;
use pht_core::query::DataError;
use pht_core::registry::{Principal, RegistryError, RepoName, TamperAttack};
use pht_core::station::{self, AbortReason, StationError};

#[test]
fn count_train_matches_an_independent_scan_over_raw_files() {
    let world = World::with_allele_data(&[(20, 9), (15, 8), (30, 7)]);
    let built = world.build_and_dispatch(&count_descriptor(), &allele_query());
    let package = world.drive_to_completion(&built.train_id);

    let results = station::user_decrypt(&package, &common::pool().user).unwrap();
    let expected = world.raw_scan_count(|v| v["hla_allele"] == TARGET_ALLELE);
    assert_eq!(expected, 9 + 8 + 7);
    match results.merged {
        MergedView::Count { total } => assert_eq!(total, expected),
        other => panic!("expected a count view, got {other:?}"),
    }
    // One per-station entry per route stop, in route order.
    assert_eq!(
        results.stations.keys().cloned().collect::<Vec<_>>(),
        {
            let mut sorted = world.station_pids.clone();
            sorted.sort();
            sorted
        }
    );
}

#[test]
fn summary_stats_train_matches_an_independent_fold() {
    let world = World::with_random_data(3, 4242);
    let algorithm = br#"{"kind":"summary_stats","params":{"field":"age"}}"#;
    let query = format!("hla_allele != \"{TARGET_ALLELE}\"");
    let built = world.build_and_dispatch(algorithm, query.as_bytes());
    let package = world.drive_to_completion(&built.train_id);
    let results = station::user_decrypt(&package, &common::pool().user).unwrap();

    // Oracle: fold ages over the raw files with a plain scan.
    let ages: Vec<f64> = world
        .raw_records()
        .iter()
        .filter(|v| v["hla_allele"] != TARGET_ALLELE)
        .map(|v| v["age"].as_f64().unwrap())
        .collect();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    match results.merged {
        MergedView::SummaryStats {
            count,
            sum,
            min,
            max,
            mean,
        } => {
            assert_eq!(count as usize, ages.len());
            assert!(close(sum, ages.iter().sum::<f64>()));
            assert_eq!(min.unwrap(), ages.iter().copied().fold(f64::INFINITY, f64::min));
            assert_eq!(max.unwrap(), ages.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            assert!(close(mean.unwrap(), ages.iter().sum::<f64>() / ages.len() as f64));
        }
        other => panic!("expected summary stats, got {other:?}"),
    }
}

#[test]
fn routing_reports_a_checked_out_image_without_moving_the_cursor() {
    let world = World::with_allele_data(&[(10, 3), (10, 2)]);
    let built = world.build_and_dispatch(&count_descriptor(), &allele_query());
    let router = Principal::of(BUILDER_ID);
    let train_id = &built.train_id;

    // First hop: into station 0's repo.
    assert_eq!(
        world.registry.route_next(&world.store, &router, train_id).unwrap(),
        RepoName::Station(world.station_pids[0].clone())
    );

    // The station checks the image out to process it; until it pushes the
    // image back, routing must refuse to advance and keep the cursor.
    let pid = world.station_pids[0].clone();
    let held = world
        .registry
        .pull(&world.store, &Principal::of(&pid), &RepoName::Station(pid.clone()), train_id)
        .unwrap();
    let err = world
        .registry
        .route_next(&world.store, &router, train_id)
        .unwrap_err();
    assert!(matches!(err, RegistryError::MissingImage { .. }));
    assert_eq!(world.store.route(&router, train_id).unwrap().cursor, 1);

    world
        .registry
        .push(&world.store, &Principal::of(&pid), &RepoName::Station(pid.clone()), &held)
        .unwrap();
    assert_eq!(
        world.registry.route_next(&world.store, &router, train_id).unwrap(),
        RepoName::Station(world.station_pids[1].clone())
    );
}

#[test]
fn extraction_is_refused_until_the_train_reaches_outgoing() {
    let world = World::with_allele_data(&[(10, 3), (10, 2)]);
    let built = world.build_and_dispatch(&count_descriptor(), &allele_query());
    let router = Principal::of(BUILDER_ID);

    assert!(matches!(
        world.registry.extract_results(&world.store, &router, &built.train_id),
        Err(RegistryError::NotFinished(_))
    ));

    world
        .registry
        .route_next(&world.store, &router, &built.train_id)
        .unwrap();
    world.run_station(0, &built.train_id).unwrap();
    assert!(matches!(
        world.registry.extract_results(&world.store, &router, &built.train_id),
        Err(RegistryError::NotFinished(_))
    ));

    world
        .registry
        .route_next(&world.store, &router, &built.train_id)
        .unwrap();
    world.run_station(1, &built.train_id).unwrap();
    world
        .registry
        .route_next(&world.store, &router, &built.train_id)
        .unwrap();
    assert!(world
        .registry
        .extract_results(&world.store, &router, &built.train_id)
        .is_ok());
}

#[test]
fn resource_limits_bound_execution() {
    let world = World::with_allele_data(&[(25, 5)]);
    let built = world.build_and_dispatch(&count_descriptor(), &allele_query());
    let router = Principal::of(BUILDER_ID);
    world
        .registry
        .route_next(&world.store, &router, &built.train_id)
        .unwrap();
    let pid = world.station_pids[0].clone();
    let image = world
        .registry
        .pull(&world.store, &Principal::of(&pid), &RepoName::Station(pid.clone()), &built.train_id)
        .unwrap();

    // A zero time budget trips the execution deadline.
    let mut ctx = world.station_ctx(0);
    ctx.resources.timeout_seconds = 0;
    let train = station::pre_run(&ctx, &world.store, &image).unwrap();
    assert!(matches!(
        station::execute(&ctx, &train),
        Err(StationError::Execution(pht_core::analysis::AnalysisError::Timeout))
    ));

    // A record cap below the store size refuses to load at all.
    let mut ctx = world.station_ctx(0);
    ctx.resources.max_records = 10;
    let train = station::pre_run(&ctx, &world.store, &image).unwrap();
    assert!(matches!(
        station::execute(&ctx, &train),
        Err(StationError::Data(DataError::TooManyRecords { .. }))
    ));
}

#[test]
fn a_signed_but_unknown_analysis_kind_is_unsupported_not_an_abort() {
    let world = World::with_allele_data(&[(10, 3)]);
    let built = world.build_and_dispatch(
        br#"{"kind":"quantum_enrichment","params":{}}"#,
        &allele_query(),
    );
    let router = Principal::of(BUILDER_ID);
    world
        .registry
        .route_next(&world.store, &router, &built.train_id)
        .unwrap();

    let err = world.run_station(0, &built.train_id).unwrap_err();
    match err {
        StationError::Unsupported(detail) => {
            assert!(detail.contains("quantum_enrichment"), "detail: {detail}")
        }
        other => panic!("expected Unsupported, got {other:?}"),
    }
}

#[test]
fn a_tampered_static_layer_aborts_with_bad_user_signature() {
    let world = World::with_allele_data(&[(10, 3), (10, 2)]);
    let built = world.build_and_dispatch(&count_descriptor(), &allele_query());
    let router = Principal::of(BUILDER_ID);
    world
        .registry
        .route_next(&world.store, &router, &built.train_id)
        .unwrap();

    world
        .registry
        .tamper(&world.store, &TamperAttack::ModifyStatic, &built.train_id)
        .unwrap();

    let err = world.run_station(0, &built.train_id).unwrap_err();
    let abort = err.abort().expect("tampering must abort verification");
    assert_eq!(abort.code, AbortReason::BadUserSignature);
}

#[test]
fn user_decrypt_rejects_misaddressed_and_mangled_packages() {
    let world = World::with_allele_data(&[(12, 4), (8, 1)]);
    let built = world.build_and_dispatch(&count_descriptor(), &allele_query());
    let package = world.drive_to_completion(&built.train_id);

    // The genuine package decrypts for the right user…
    station::user_decrypt(&package, &common::pool().user).unwrap();

    // …but not for anyone else's key.
    let err = station::user_decrypt(&package, &common::pool().stations[0]).unwrap_err();
    assert!(matches!(err, StationError::Config(_)));

    // A mangled payload fails to decrypt.
    let mut mangled = package.clone();
    mangled.enc_result[0] ^= 1;
    let err = station::user_decrypt(&mangled, &common::pool().user).unwrap_err();
    assert_eq!(err.abort().unwrap().code, AbortReason::DecryptFailure);

    // A truncated chain fails chain verification.
    let mut truncated = package.clone();
    truncated.chain.pop();
    let err = station::user_decrypt(&truncated, &common::pool().user).unwrap_err();
    assert_eq!(err.abort().unwrap().code, AbortReason::BadChain);

    // A swapped result signature (signed by the wrong station) is refused.
    let mut reassigned = package.clone();
    reassigned.result_signature = package.chain[0].clone();
    let err = station::user_decrypt(&reassigned, &common::pool().user).unwrap_err();
    assert_eq!(err.abort().unwrap().code, AbortReason::BadResultSignature);
}

#[test]
fn the_user_id_is_bound_into_the_train_hash() {
    // A signature produced over the right digest but naming another user is
    // rejected at build time, and a config rewritten to another user id
    // fails verification at the first station.
    let world = World::with_allele_data(&[(10, 3)]);
    let builder = world.train_builder();
    let err = builder
        .build_train(
            &world.approved_proposal(),
            &world.submission(&count_descriptor(), &allele_query()),
            |digest| {
                let mut sig = crypto::sign(digest, &common::pool().user);
                sig.signer_id = "user-imposter".into();
                Ok(sig)
            },
        )
        .unwrap_err();
    assert!(matches!(err, pht_core::builder::BuildError::UserSignature(_)));
}
