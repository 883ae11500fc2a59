// Exact inference against summing the full joint distribution.

use std::collections::BTreeMap;

use bayesnav_core::dependability::{BayesNet, Evidence, NodeSpec};
use bayesnav_core::seed;
use rand::Rng;

pub const CASES: usize = 100;
pub const MAX_NODES: usize = 12;

pub fn random_net(rng: &mut impl Rng, n: usize) -> BayesNet {
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let mut parents: Vec<usize> = (0..i).filter(|_| rng.random_bool(0.35)).collect();
        parents.truncate(3);
        let rows = 1usize << parents.len();
        let cpt = (0..rows)
            .map(|_| {
                let p = rng.random_range(0.02..0.98);
                vec![1.0 - p, p]
            })
            .collect();
        nodes.push(NodeSpec {
            name: format!("n{i}"),
            states: vec!["f".into(), "t".into()],
            parents: parents.iter().map(|p| format!("n{p}")).collect(),
            cpt,
        });
    }
    BayesNet::new(nodes).unwrap()
}

/// Posterior marginals by summing the full joint over every assignment.
pub fn enumerate(net: &BayesNet, evidence: &BTreeMap<String, Evidence>) -> Vec<[f64; 2]> {
    let nodes = net.nodes();
    let n = nodes.len();
    let mut marg = vec![[0.0; 2]; n];
    for assignment in 0..(1usize << n) {
        let bit = |i: usize| (assignment >> i) & 1;
        let mut p = 1.0;
        for (i, node) in nodes.iter().enumerate() {
            let row = node
                .parents
                .iter()
                .fold(0, |acc, name| acc * 2 + bit(net.node_index(name).unwrap()));
            p *= node.cpt[row][bit(i)];
            match evidence.get(&node.name) {
                Some(Evidence::Hard(s)) if *s != bit(i) => p = 0.0,
                Some(Evidence::Soft(l)) => p *= l[bit(i)],
                _ => {}
            }
        }
        for (i, m) in marg.iter_mut().enumerate() {
            m[bit(i)] += p;
        }
    }
    for m in &mut marg {
        let z = m[0] + m[1];
        m[0] /= z;
        m[1] /= z;
    }
    marg
}

/// Largest posterior deviation from enumeration over `CASES` random nets
/// with mixed hard and soft evidence.
pub fn max_enumeration_error() -> f64 {
    let mut rng = seed::rng(31, &[]);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let n = rng.random_range(2..=MAX_NODES);
        let net = random_net(&mut rng, n);
        let mut evidence = BTreeMap::new();
        for i in 0..n {
            match rng.random_range(0..4) {
                0 => {
                    evidence.insert(format!("n{i}"), Evidence::Hard(rng.random_range(0..2)));
                }
                1 => {
                    evidence.insert(
                        format!("n{i}"),
                        Evidence::Soft(vec![rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)]),
                    );
                }
                _ => {}
            }
        }
        let got = net.infer(&evidence).unwrap();
        let want = enumerate(&net, &evidence);
        for (i, w) in want.iter().enumerate() {
            let g = &got[&format!("n{i}")];
            for s in 0..2 {
                worst = worst.max((g[s] - w[s]).abs());
            }
        }
    }
    worst
}

/// Largest change caused by a constant likelihood vector.
pub fn uniform_soft_shift() -> f64 {
    let mut rng = seed::rng(32, &[]);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let net = random_net(&mut rng, 8);
        let prior = net.infer(&BTreeMap::new()).unwrap();
        let c = rng.random_range(0.1..5.0);
        let ev = BTreeMap::from([(format!("n{}", rng.random_range(0..8)), Evidence::Soft(vec![c, c]))]);
        let post = net.infer(&ev).unwrap();
        for (k, v) in &prior {
            for s in 0..2 {
                worst = worst.max((v[s] - post[k][s]).abs());
            }
        }
    }
    worst
}

/// Whether hard evidence and the matching one-hot likelihood give identical
/// posteriors on every trial.
pub fn hard_soft_identical() -> bool {
    let mut rng = seed::rng(33, &[]);
    (0..30).all(|_| {
        let net = random_net(&mut rng, 9);
        let node = format!("n{}", rng.random_range(0..9));
        let state = rng.random_range(0..2);
        let mut one_hot = vec![0.0; 2];
        one_hot[state] = 1.0;
        let hard = net.infer(&BTreeMap::from([(node.clone(), Evidence::Hard(state))])).unwrap();
        let soft = net.infer(&BTreeMap::from([(node.clone(), Evidence::Soft(one_hot))])).unwrap();
        hard == soft && hard[&node][state] == 1.0
    })
}
