use std::collections::{BTreeMap, BTreeSet};

use causalsim::checkers::{audit_visibility, VisibilityClass};
use causalsim::harness::WorkloadSpec;
use causalsim::history::{EventKind, ObjectId, Transaction, TxnId, ValueId};
use causalsim::protocol::{ProcessId, Registry};
use causalsim::simnet::{
    paired_run, run, run_checked, Action, MessageMatch, RunConfig, Schedule, SimError, Workload,
    World,
};

fn write_txn(client: u32, seq: u32, object: &str) -> Transaction {
    let id = TxnId::new(client, seq);
    let writes = BTreeMap::from([(ObjectId::new(object), ValueId::written(client, seq.into()))]);
    Transaction::new(id, client, BTreeSet::new(), writes).unwrap()
}

fn read_txn(client: u32, seq: u32, objects: &[&str]) -> Transaction {
    let reads = objects.iter().map(|o| ObjectId::new(*o)).collect();
    Transaction::new(TxnId::new(client, seq), client, reads, BTreeMap::new()).unwrap()
}

#[test]
fn unit_delay_write_is_acknowledged_two_ticks_after_sending() {
    let naive = Registry::builtin().get("naive-invisible").unwrap();
    let mut w = Workload::new();
    w.push(write_txn(0, 0, "o0"), 0, 0);
    let out = run(
        naive.as_ref(),
        &World::new(1, 1),
        &w,
        &Schedule::random(1, 1, 1),
        &RunConfig::until(100),
    )
    .unwrap();
    let first = &out.log.records[0];
    assert_eq!((first.sent_at, first.deliver_at), (0, Some(1)));
    let ack = out
        .history
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::WriteAck { .. }))
        .unwrap();
    assert_eq!(ack.time, first.sent_at + 2);
    assert_eq!(out.end_of(TxnId::new(0, 0)), Some(3));
    assert_eq!(out.in_flight, 0);
}

#[test]
fn repeated_runs_are_identical() {
    let registry = Registry::builtin();
    for name in [
        "naive-invisible",
        "fast-visible",
        "slow-2round",
        "ts-global-2u",
    ] {
        let p = registry.get(name).unwrap();
        let spec = WorkloadSpec::new(3, 3, 20, 0.3, 11);
        run_checked(
            p.as_ref(),
            &spec.world(),
            &spec.workload(),
            &spec.schedule(),
            &RunConfig::until(spec.horizon),
        )
        .unwrap();
    }
}

#[test]
fn different_seeds_give_different_delays() {
    let p = Registry::builtin().get("fast-visible").unwrap();
    let spec = WorkloadSpec::new(3, 3, 20, 0.3, 11);
    let go = |seed| {
        run(
            p.as_ref(),
            &spec.world(),
            &spec.workload(),
            &Schedule::random(seed, 1, 10),
            &RunConfig::until(spec.horizon),
        )
        .unwrap()
        .log
    };
    assert_ne!(go(1), go(2));
}

#[test]
fn a_hold_without_release_is_an_error() {
    let naive = Registry::builtin().get("naive-invisible").unwrap();
    let mut w = Workload::new();
    w.push(write_txn(0, 0, "o0"), 0, 0);
    let schedule =
        Schedule::random(1, 1, 3).with(MessageMatch::any(), Action::Hold("forever".into()));
    let err = run(
        naive.as_ref(),
        &World::new(1, 1),
        &w,
        &schedule,
        &RunConfig::until(100),
    );
    assert!(matches!(err, Err(SimError::UnreleasedHold { .. })));
}

#[test]
fn released_hold_delivers_at_release_tick() {
    let naive = Registry::builtin().get("naive-invisible").unwrap();
    let mut w = Workload::new();
    w.push(write_txn(0, 0, "o0"), 0, 0);
    let schedule = Schedule::random(1, 1, 3)
        .with(
            MessageMatch::any().dst(ProcessId::Server(0)),
            Action::Hold("h".into()),
        )
        .release("h", 40);
    let out = run(
        naive.as_ref(),
        &World::new(1, 1),
        &w,
        &schedule,
        &RunConfig::until(100),
    )
    .unwrap();
    assert_eq!(out.log.records[0].deliver_at, Some(40));
}

#[test]
fn clock_protocols_need_clock_access() {
    let ts = Registry::builtin().get("ts-global").unwrap();
    let mut world = World::new(1, 1);
    world.allow_clock = false;
    let mut w = Workload::new();
    w.push(read_txn(0, 0, &["o0"]), 0, 0);
    let err = run(
        ts.as_ref(),
        &world,
        &w,
        &Schedule::random(1, 1, 3),
        &RunConfig::until(100),
    );
    assert!(matches!(err, Err(SimError::ClockAccessDenied { .. })));
}

#[test]
fn restricted_protocols_reject_multi_object_writes() {
    let naive = Registry::builtin().get("naive-invisible").unwrap();
    let spec = WorkloadSpec {
        wot_size: 2,
        ..WorkloadSpec::new(2, 2, 10, 0.5, 3)
    };
    let err = run(
        naive.as_ref(),
        &spec.world(),
        &spec.workload(),
        &spec.schedule(),
        &RunConfig::until(spec.horizon),
    );
    assert!(matches!(err, Err(SimError::ShapeMismatch { .. })));
}

#[test]
fn probes_run_after_quiescence() {
    let p = Registry::builtin().get("slow-2round").unwrap();
    let spec = WorkloadSpec::new(2, 2, 10, 0.5, 5);
    let out = run(
        p.as_ref(),
        &spec.world(),
        &spec.workload(),
        &spec.schedule(),
        &RunConfig::until(spec.horizon),
    )
    .unwrap();
    let q = out.quiescence.unwrap();
    let probe = out
        .history
        .transactions()
        .unwrap()
        .into_iter()
        .find(|t| t.client == spec.probe_client())
        .unwrap();
    assert_eq!(probe.start, q + 1);
}

#[test]
fn horizon_cuts_runs_and_lists_incomplete_transactions() {
    let p = Registry::builtin().get("fast-visible").unwrap();
    let spec = WorkloadSpec::new(3, 3, 50, 0.3, 5);
    let out = run(
        p.as_ref(),
        &spec.world(),
        &spec.workload(),
        &spec.schedule(),
        &RunConfig::until(30),
    )
    .unwrap();
    assert!(out.quiescence.is_none());
    assert!(!out.incomplete.is_empty());
    out.history.transactions().unwrap();
}

#[test]
fn paired_runs_separate_stateless_reads_from_recorded_ones() {
    let registry = Registry::builtin();
    let spec = WorkloadSpec::new(3, 3, 20, 0.2, 8);
    let (with, without, probe) = spec.visibility_pair(40);
    let classify = |name: &str| {
        let p = registry.get(name).unwrap();
        let pr = paired_run(
            p.as_ref(),
            &spec.world(),
            &with,
            &without,
            &spec.schedule(),
            &RunConfig::until(spec.horizon),
            probe,
        )
        .unwrap();
        audit_visibility(&pr.diff).0
    };
    assert_eq!(
        classify("naive-invisible"),
        VisibilityClass::InvisibleWitnessed
    );
    assert_eq!(classify("fast-visible"), VisibilityClass::Visible);
}

#[test]
fn message_log_round_trips_through_jsonl() {
    let p = Registry::builtin().get("fast-visible").unwrap();
    let spec = WorkloadSpec::new(2, 2, 10, 0.3, 2);
    let out = run(
        p.as_ref(),
        &spec.world(),
        &spec.workload(),
        &spec.schedule(),
        &RunConfig::until(spec.horizon),
    )
    .unwrap();
    let mut buf = Vec::new();
    out.log.write_jsonl(&mut buf).unwrap();
    let back = causalsim::simnet::MessageLog::read_jsonl(buf.as_slice()).unwrap();
    let strip = |l: &causalsim::simnet::MessageLog| {
        l.records
            .iter()
            .cloned()
            .map(|mut r| {
                r.payload = None;
                r
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&out.log), strip(&back));
}
