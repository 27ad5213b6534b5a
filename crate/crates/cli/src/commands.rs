//! One function per subcommand. Each returns an [`Output`] carrying both a
//! human-readable rendering and the machine JSON emitted behind `--json`.

use crate::error::CliError;
use crate::workspace::{EntityEntry, Workspace};
use pht_core::builder::{ApprovalDecision, SubmissionDraft, TrainBuilder};
use pht_core::crypto::{self, KeyPair, MIN_RSA_BITS};
use pht_core::fixtures;
use pht_core::registry::{
    Principal, Registry, RepoName, ResultPackage, Role, SecretStore, TamperAttack,
};
use pht_core::station::{self, Resources, StationContext};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub struct Output {
    pub human: String,
    pub json: serde_json::Value,
}

impl Output {
    fn new(human: impl Into<String>, json: serde_json::Value) -> Self {
        Output {
            human: human.into(),
            json,
        }
    }
}

fn open_services(ws: &Workspace) -> Result<(SecretStore, Registry), CliError> {
    Ok((ws.store()?, ws.registry()?))
}

fn train_builder<'a>(
    ws: &Workspace,
    registry: &'a Registry,
    store: &'a SecretStore,
    builder_keypair: &'a KeyPair,
) -> Result<TrainBuilder<'a>, CliError> {
    Ok(TrainBuilder::new(
        registry,
        store,
        builder_keypair,
        ws.trusted_list()?,
    )?)
}

// ---------------------------------------------------------------------------
// Workspace setup

pub fn init(root: &Path) -> Result<Output, CliError> {
    let ws = Workspace::init(root)?;
    Ok(Output::new(
        format!("initialized workspace at {}", ws.root().display()),
        json!({
            "command": "init",
            "root": ws.root().display().to_string(),
            "services_dir": ws.file.services_dir,
            "trusted_images_file": ws.file.trusted_images_file,
        }),
    ))
}

pub fn keygen(
    ws: &mut Workspace,
    role: &str,
    id: Option<String>,
    name: Option<String>,
    data: Option<PathBuf>,
) -> Result<Output, CliError> {
    let role = Role::from_str(role)
        .map_err(|_| CliError::config(format!("unknown role `{role}` (user|station|builder)")))?;
    let store = ws.store()?;

    let (entity_id, station_name) = match role {
        Role::Station => {
            let name = name
                .ok_or_else(|| CliError::config("stations are named: pass --name <real name>"))?;
            if id.is_some() {
                return Err(CliError::config(
                    "stations get a minted pseudonym; --id is not accepted",
                ));
            }
            let pid = store.assign_station_pid(&name)?;
            (pid, Some(name))
        }
        Role::User | Role::Builder => {
            let id = id.ok_or_else(|| CliError::config("pass --id <entity id>"))?;
            if name.is_some() || data.is_some() {
                return Err(CliError::config(
                    "--name and --data are for stations only",
                ));
            }
            (id, None)
        }
    };

    let keypair = KeyPair::generate(&entity_id, MIN_RSA_BITS)
        .map_err(|e| CliError::internal(format!("key generation failed: {e}")))?;
    store.register_entity(&entity_id, role, keypair.public())?;

    let key_file = format!("keys/{entity_id}.key");
    std::fs::write(ws.resolve(&key_file), keypair.to_armored())
        .map_err(|e| CliError::internal(format!("cannot write key file: {e}")))?;

    let data_path = match &data {
        Some(p) => {
            std::fs::create_dir_all(ws.resolve(&p.display().to_string()))
                .map_err(|e| CliError::internal(format!("cannot create data dir: {e}")))?;
            Some(p.display().to_string())
        }
        None => None,
    };
    ws.add_entity(
        &entity_id,
        EntityEntry {
            role,
            key_file: key_file.clone(),
            station_name: station_name.clone(),
            data_path: data_path.clone(),
        },
    )?;

    let human = match &station_name {
        Some(name) => format!("registered station `{name}` as `{entity_id}` (key: {key_file})"),
        None => format!("registered {role} `{entity_id}` (key: {key_file})"),
    };
    Ok(Output::new(
        human,
        json!({
            "command": "keygen",
            "id": entity_id,
            "role": role.to_string(),
            "key_file": key_file,
            "station_name": station_name,
            "data_path": data_path,
        }),
    ))
}

pub fn base_image_add(ws: &Workspace, file: &Path) -> Result<Output, CliError> {
    let bytes = std::fs::read(file)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", file.display())))?;
    let (store, registry) = open_services(ws)?;
    let builder = ws.principal(&ws.builder_id()?)?;
    let image_id = registry.push(&store, &builder, &RepoName::TrustedBase, &bytes)?;
    ws.add_trusted(&image_id)?;
    Ok(Output::new(
        format!("trusted base image {image_id} ({} bytes)", bytes.len()),
        json!({
            "command": "base-image-add",
            "image_id": image_id,
            "size": bytes.len(),
        }),
    ))
}

fn parse_counts(list: &str, stations: usize, what: &str) -> Result<Vec<usize>, CliError> {
    let parts: Result<Vec<usize>, _> = list.split(',').map(|p| p.trim().parse()).collect();
    let parts =
        parts.map_err(|_| CliError::config(format!("--{what} takes counts like `20` or `20,15,30`")))?;
    match parts.len() {
        1 => Ok(vec![parts[0]; stations]),
        n if n == stations => Ok(parts),
        n => Err(CliError::config(format!(
            "--{what} lists {n} values for {stations} stations"
        ))),
    }
}

pub fn gen_fixtures(
    out: &Path,
    stations: usize,
    records: Option<String>,
    matching: Option<String>,
    seed: u64,
) -> Result<Output, CliError> {
    if stations == 0 {
        return Err(CliError::config("--stations must be at least 1"));
    }
    let totals = records
        .map(|r| parse_counts(&r, stations, "records"))
        .transpose()?;
    let matches = matching
        .map(|m| parse_counts(&m, stations, "matching"))
        .transpose()?;
    if matches.is_some() && totals.is_none() {
        return Err(CliError::config("--matching requires --records"));
    }

    let mut rows = Vec::new();
    let mut human = String::new();
    for i in 0..stations {
        let label = format!("s{i}");
        let lines = match &totals {
            Some(totals) => {
                let total = totals[i];
                let matching = matches.as_ref().map_or(0, |m| m[i]);
                if matching > total {
                    return Err(CliError::config(format!(
                        "station {i}: {matching} matching records exceed the {total} total"
                    )));
                }
                fixtures::generate_allele_records(&label, seed + i as u64, total, matching)
            }
            None => fixtures::generate_random_records(&label, seed + i as u64),
        };
        let dir = out.join(format!("station-{i}"));
        let file = fixtures::write_record_store(&dir, &lines)
            .map_err(|e| CliError::internal(format!("cannot write fixtures: {e}")))?;
        human.push_str(&format!(
            "station-{i}: {} records -> {}\n",
            lines.len(),
            file.display()
        ));
        rows.push(json!({
            "station": i,
            "label": label,
            "records": lines.len(),
            "file": file.display().to_string(),
        }));
    }
    human.push_str(&format!("seed: {seed}"));
    Ok(Output::new(
        human,
        json!({ "command": "gen-fixtures", "seed": seed, "stations": rows }),
    ))
}

// ---------------------------------------------------------------------------
// Train lifecycle

fn split_names(csv: &str) -> Result<Vec<String>, CliError> {
    let names: Vec<String> = csv
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(CliError::config("pass at least one station name"));
    }
    Ok(names)
}

fn approvals_json(proposal: &pht_core::builder::Proposal) -> serde_json::Value {
    let map: BTreeMap<&String, String> = proposal
        .approvals()
        .iter()
        .map(|(pid, status)| (pid, format!("{status:?}").to_lowercase()))
        .collect();
    json!(map)
}

pub fn propose(ws: &Workspace, user: &str, stations_csv: &str) -> Result<Output, CliError> {
    let (store, registry) = open_services(ws)?;
    let builder_kp = ws.keypair(&ws.builder_id()?)?;
    let builder = train_builder(ws, &registry, &store, &builder_kp)?;
    if store.role(user)? != Role::User {
        return Err(CliError::config(format!("`{user}` is not a user")));
    }
    let principal = Principal::with_key(&builder_kp);
    let names = split_names(stations_csv)?;
    let mut pids = Vec::new();
    for name in &names {
        pids.push(store.station_pid(&principal, name)?);
    }
    let proposal = builder.create_proposal(user, &pids)?;
    ws.save_proposal(&proposal)?;

    let mut human = format!(
        "proposal {} for user `{user}` over {} stations:\n",
        proposal.proposal_id,
        pids.len()
    );
    for (name, pid) in names.iter().zip(&pids) {
        human.push_str(&format!("  {name} -> {pid} (pending)\n"));
    }
    human.push_str("every station must approve before the train can be built");
    Ok(Output::new(
        human,
        json!({
            "command": "propose",
            "proposal_id": proposal.proposal_id,
            "user": user,
            "stations": pids,
            "approvals": approvals_json(&proposal),
        }),
    ))
}

pub fn approve(
    ws: &Workspace,
    proposal_id: &str,
    station: &str,
    decision: &str,
) -> Result<Output, CliError> {
    let decision = match decision {
        "accepted" => ApprovalDecision::Accepted,
        "rejected" => ApprovalDecision::Rejected,
        other => {
            return Err(CliError::config(format!(
                "decision `{other}` must be accepted|rejected"
            )))
        }
    };
    let mut proposal = ws.load_proposal(proposal_id)?;
    proposal.record_approval(station, decision)?;
    ws.save_proposal(&proposal)?;
    Ok(Output::new(
        format!(
            "recorded `{station}` vote on {proposal_id}: {}",
            if decision == ApprovalDecision::Accepted {
                "accepted"
            } else {
                "rejected"
            }
        ),
        json!({
            "command": "approve",
            "proposal_id": proposal_id,
            "station": station,
            "approvals": approvals_json(&proposal),
            "fully_approved": proposal.fully_approved(),
        }),
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn submit(
    ws: &Workspace,
    proposal_id: &str,
    algorithm: &Path,
    query: &Path,
    stations_csv: &str,
    base_image: &str,
) -> Result<Output, CliError> {
    let proposal = ws.load_proposal(proposal_id)?;
    let (store, registry) = open_services(ws)?;
    let builder_kp = ws.keypair(&ws.builder_id()?)?;
    let builder = train_builder(ws, &registry, &store, &builder_kp)?;

    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))
    };
    let draft = SubmissionDraft {
        algorithm: read(algorithm)?,
        query: read(query)?,
        station_names: split_names(stations_csv)?,
    };
    let submission = builder.resolve_submission(&draft, &proposal.user_id, base_image)?;

    // The user signs the train hash with a key the builder never touches.
    let user_kp = ws.keypair(&proposal.user_id)?;
    let built = builder.build_train(&proposal, &submission, |digest| {
        Ok(crypto::sign(digest, &user_kp))
    })?;
    builder.dispatch(&built)?;

    Ok(Output::new(
        format!(
            "train {} built over {} stations and dispatched to incoming ({} bytes)",
            built.train_id,
            submission.station_pids.len(),
            built.image.len()
        ),
        json!({
            "command": "submit",
            "train_id": built.train_id,
            "user": proposal.user_id,
            "route": submission.station_pids,
            "image_size": built.image.len(),
        }),
    ))
}

pub fn route(ws: &Workspace, train_id: &str) -> Result<Output, CliError> {
    let (store, registry) = open_services(ws)?;
    let builder = ws.principal(&ws.builder_id()?)?;
    let moved_to = registry.route_next(&store, &builder, train_id)?;
    Ok(Output::new(
        format!("train {train_id} moved to `{moved_to}`"),
        json!({
            "command": "route",
            "train_id": train_id,
            "moved_to": moved_to.to_string(),
        }),
    ))
}

pub fn station_run(
    ws: &Workspace,
    station: &str,
    train_id: &str,
    max_records: usize,
    timeout_seconds: u64,
) -> Result<Output, CliError> {
    let entry = ws.entity(station)?;
    if entry.role != Role::Station {
        return Err(CliError::config(format!("`{station}` is not a station")));
    }
    let data = entry.data_path.clone().ok_or_else(|| {
        CliError::config(format!(
            "station `{station}` has no data path (pass --data at keygen)"
        ))
    })?;
    let mut data_path = ws.resolve(&data);
    if data_path.is_dir() {
        data_path = data_path.join("records.ndjson");
    }

    let (store, registry) = open_services(ws)?;
    let keypair = ws.keypair(station)?;
    let principal = Principal::with_key(&keypair);
    let repo = RepoName::Station(station.to_string());
    let image = registry.pull(&store, &principal, &repo, train_id)?;

    let ctx = StationContext {
        keypair,
        data_path,
        trusted_images: ws.trusted_list()?.ids().map(str::to_string).collect(),
        resources: Resources {
            max_records,
            timeout_seconds,
        },
    };

    // Verify, execute, reseal. On any failure the image is NOT pushed
    // back: the train halts here and routing reports it missing.
    let train = station::pre_run(&ctx, &store, &image)?;
    let position = train.position();
    let results = station::execute(&ctx, &train)?;
    let kind = results.kind.to_string();
    let out = station::post_run(&ctx, &store, train, &results)?;
    registry.push(&store, &principal, &repo, &out)?;

    Ok(Output::new(
        format!(
            "station `{station}` (position {position}) verified and executed `{kind}`, image resealed and pushed back"
        ),
        json!({
            "command": "station-run",
            "train_id": train_id,
            "station": station,
            "position": position,
            "kind": kind,
            "pushed": true,
        }),
    ))
}

pub fn extract(ws: &Workspace, train_id: &str, out: &Path) -> Result<Output, CliError> {
    let (store, registry) = open_services(ws)?;
    let builder = ws.principal(&ws.builder_id()?)?;
    let package = registry.extract_results(&store, &builder, train_id)?;
    let bytes = package
        .to_canonical_json()
        .map_err(|e| CliError::internal(format!("package serialization failed: {e}")))?;
    std::fs::write(out, &bytes)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", out.display())))?;
    Ok(Output::new(
        format!(
            "result package for {train_id} written to {} ({} chain segments, {} bytes)",
            out.display(),
            package.chain.len(),
            bytes.len()
        ),
        json!({
            "command": "extract",
            "train_id": train_id,
            "out": out.display().to_string(),
            "chain_segments": package.chain.len(),
            "route_len": package.route_pids.len(),
            "size": bytes.len(),
        }),
    ))
}

pub fn decrypt(ws: &Workspace, package_file: &Path, user: &str, out: &Path) -> Result<Output, CliError> {
    let bytes = std::fs::read(package_file).map_err(|e| {
        CliError::config(format!("cannot read {}: {e}", package_file.display()))
    })?;
    let package = ResultPackage::from_json(&bytes)
        .map_err(|e| CliError::config(format!("not a result package: {e}")))?;
    let keypair = ws.keypair(user)?;
    let results = station::user_decrypt(&package, &keypair)?;
    let plaintext = results.canonical_bytes();
    std::fs::write(out, &plaintext)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", out.display())))?;

    let merged = serde_json::to_value(&results.merged)?;
    Ok(Output::new(
        format!(
            "package verified (chain, result signature) and decrypted: kind `{}`\nmerged result: {}\nplaintext written to {}",
            results.kind,
            merged,
            out.display()
        ),
        json!({
            "command": "decrypt",
            "train_id": package.train_id,
            "user": user,
            "kind": results.kind.to_string(),
            "merged": merged,
            "stations": serde_json::to_value(&results.stations)?,
            "out": out.display().to_string(),
        }),
    ))
}

pub fn tamper(
    ws: &Workspace,
    attack: &str,
    train_id: &str,
    to_pid: Option<String>,
) -> Result<Output, CliError> {
    let attack = match (attack, to_pid) {
        ("modify_static", None) => TamperAttack::ModifyStatic,
        ("modify_result", None) => TamperAttack::ModifyResult,
        ("modify_config", None) => TamperAttack::ModifyConfig,
        ("swap_base_layer", None) => TamperAttack::SwapBaseLayer,
        ("replay_result", None) => TamperAttack::ReplayResult,
        ("reroute_image", Some(to_pid)) => TamperAttack::RerouteImage { to_pid },
        ("reroute_image", None) => {
            return Err(CliError::config("reroute_image needs --to-pid <station>"))
        }
        (other, Some(_)) if other != "reroute_image" => {
            return Err(CliError::config("only reroute_image takes --to-pid"))
        }
        (other, _) => {
            return Err(CliError::config(format!(
                "unknown attack `{other}` (modify_static|modify_result|modify_config|reroute_image|swap_base_layer|replay_result)"
            )))
        }
    };
    let (store, registry) = open_services(ws)?;
    let report = registry.tamper(&store, &attack, train_id)?;
    Ok(Output::new(
        format!(
            "attack `{}` applied to train {train_id} in `{}`: {}",
            report.attack, report.repo, report.detail
        ),
        json!({
            "command": "tamper",
            "train_id": train_id,
            "attack": report.attack,
            "repo": report.repo,
            "detail": report.detail,
        }),
    ))
}

// ---------------------------------------------------------------------------
// Low-level registry plumbing

pub fn push(ws: &Workspace, as_id: &str, repo: &str, file: &Path) -> Result<Output, CliError> {
    let repo = RepoName::from_str(repo).map_err(|e| CliError::config(e.to_string()))?;
    let bytes = std::fs::read(file)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", file.display())))?;
    let (store, registry) = open_services(ws)?;
    let principal = ws.principal(as_id)?;
    let image_id = registry.push(&store, &principal, &repo, &bytes)?;
    Ok(Output::new(
        format!("pushed {image_id} to `{repo}` as `{as_id}`"),
        json!({
            "command": "push",
            "repo": repo.to_string(),
            "image_id": image_id,
            "size": bytes.len(),
        }),
    ))
}

pub fn pull(
    ws: &Workspace,
    as_id: &str,
    repo: &str,
    image_id: &str,
    out: &Path,
) -> Result<Output, CliError> {
    let repo = RepoName::from_str(repo).map_err(|e| CliError::config(e.to_string()))?;
    let (store, registry) = open_services(ws)?;
    let principal = ws.principal(as_id)?;
    let bytes = registry.pull(&store, &principal, &repo, image_id)?;
    std::fs::write(out, &bytes)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", out.display())))?;
    let note = if matches!(repo, RepoName::TrustedBase) {
        "copied"
    } else {
        "checked out"
    };
    Ok(Output::new(
        format!(
            "{note} {image_id} from `{repo}` to {} ({} bytes)",
            out.display(),
            bytes.len()
        ),
        json!({
            "command": "pull",
            "repo": repo.to_string(),
            "image_id": image_id,
            "out": out.display().to_string(),
            "size": bytes.len(),
        }),
    ))
}
