#[path = "oracles/bayes_net.rs"]
#[allow(dead_code)]
mod oracles;

use std::collections::BTreeMap;

use bayesnav_core::dependability::{BayesNet, DependabilityError, Evidence, NodeSpec};

#[test]
fn variable_elimination_matches_enumeration() {
    let worst = oracles::max_enumeration_error();
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn uniform_soft_evidence_is_a_no_op() {
    let shift = oracles::uniform_soft_shift();
    assert!(shift <= 1e-12, "{shift:e}");
}

#[test]
fn hard_and_one_hot_soft_evidence_agree() {
    assert!(oracles::hard_soft_identical());
}

#[test]
fn contradictory_evidence_is_reported() {
    let nodes = vec![
        NodeSpec {
            name: "a".into(),
            states: vec!["f".into(), "t".into()],
            parents: vec![],
            cpt: vec![vec![1.0, 0.0]],
        },
        NodeSpec {
            name: "b".into(),
            states: vec!["f".into(), "t".into()],
            parents: vec!["a".into()],
            cpt: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        },
    ];
    let net = BayesNet::new(nodes).unwrap();
    let ev = BTreeMap::from([("a".to_string(), Evidence::Hard(1))]);
    assert!(matches!(net.infer(&ev), Err(DependabilityError::ImpossibleEvidence)));
}

#[test]
fn default_network_roundtrips_through_json() {
    let net = BayesNet::default_network();
    let text = serde_json::to_string(&net).unwrap();
    assert_eq!(BayesNet::from_json(&text).unwrap(), net);
    for event in ["GateMiss", "Flyaway"] {
        assert!(net.node_index(event).is_some());
    }
}
