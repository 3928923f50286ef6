use causalsim::harness::{run_spec, WorkloadSpec};
use causalsim::protocol::Registry;

#[test]
fn single_client_single_object_passes_everywhere() {
    let registry = Registry::builtin();
    for name in registry.names() {
        let p = registry.get(name).unwrap();
        let spec = WorkloadSpec {
            objects: 1,
            rot_size: 1,
            ..WorkloadSpec::new(1, 1, 30, 0.4, 3)
        };
        let r = run_spec(p.as_ref(), &spec).unwrap();
        assert!(r.consistent(), "{name}: {:?}", r.causal);
        assert!(r.one_version.pass, "{name}");
        if name != "fast-generic-help" {
            assert!(r.progress_ok(), "{name}: {:?}", r.progress);
        }
    }
}

#[test]
fn shipped_protocols_are_consistent_under_write_heavy_load() {
    let registry = Registry::builtin();
    for name in ["fast-visible", "slow-2round", "ts-global-2u"] {
        let p = registry.get(name).unwrap();
        for seed in 0..20 {
            let r = run_spec(p.as_ref(), &WorkloadSpec::new(4, 3, 40, 0.4, seed)).unwrap();
            assert!(r.consistent(), "{name} seed {seed}: {:?}", r.causal);
            assert!(r.progress_ok(), "{name} seed {seed}: {:?}", r.progress);
            assert!(r.one_version.pass, "{name} seed {seed}");
            assert_eq!(r.output.in_flight, 0);
        }
    }
}

#[test]
fn fast_protocols_answer_in_one_round_and_slow_in_two() {
    let registry = Registry::builtin();
    let spec = WorkloadSpec::new(4, 3, 40, 0.2, 9);
    for name in [
        "fast-visible",
        "ts-global",
        "ts-global-2u",
        "naive-invisible",
    ] {
        let r = run_spec(registry.get(name).unwrap().as_ref(), &spec).unwrap();
        assert!(r.slow_rots.is_empty(), "{name}");
        assert_eq!(r.metrics.mean_rot_rounds, 1.0, "{name}");
    }
    let slow = run_spec(registry.get("slow-2round").unwrap().as_ref(), &spec).unwrap();
    assert_eq!(slow.metrics.fast_rots, 0);
    assert_eq!(slow.metrics.mean_rot_rounds, 2.0);
}

#[test]
fn visible_reads_cost_server_messages() {
    let registry = Registry::builtin();
    let spec = WorkloadSpec::new(4, 3, 50, 0.05, 1);
    let d1 = run_spec(registry.get("d1").unwrap().as_ref(), &spec).unwrap();
    let slow = run_spec(registry.get("slow-2round").unwrap().as_ref(), &spec).unwrap();
    assert!(d1.metrics.server_server_messages > 0);
    assert_eq!(slow.metrics.server_server_messages, 0);
}

#[test]
fn aliases_resolve_to_the_same_protocol() {
    let registry = Registry::builtin();
    assert_eq!(registry.get("d1").unwrap().name(), "fast-visible");
    assert_eq!(registry.get("d2").unwrap().name(), "ts-global");
    assert_eq!(registry.get("d2-bounded").unwrap().name(), "ts-global-2u");
    assert_eq!(registry.get("slow2round").unwrap().name(), "slow-2round");
    assert!(registry.get("nope").is_err());
}
