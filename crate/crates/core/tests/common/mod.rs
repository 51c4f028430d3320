#![allow(dead_code)]

use popproto::{Configuration, Protocol, StateId, TransitionSequence};
use rand::seq::IndexedRandom;
use rand::Rng;

/// The worked surgery example, with the second g1,g2 rule replaced by
/// g1,g1 -> g2,g2 so that δ stays a function.
pub fn example_p() -> Protocol {
    Protocol::parse(
        "states: d1 d2 d3 g1 g2
transition: d1 d3 -> g1 d2
transition: g1 d2 -> g1 d3
transition: g1 d3 -> g1 g1
transition: g1 g2 -> g1 g1
transition: g1 g1 -> g2 g2
",
    )
    .unwrap()
}

pub fn ids(p: &Protocol, names: &[&str]) -> Vec<StateId> {
    names.iter().map(|n| p.state(n).unwrap()).collect()
}

pub fn counts(p: &Protocol, names: &[&str], vals: &[u64]) -> Configuration {
    let mut c = Configuration::zeros(p.num_states());
    for (n, v) in names.iter().zip(vals) {
        c.add(p.state(n).unwrap(), *v).unwrap();
    }
    c
}

pub fn repeat(steps: &[(usize, usize)]) -> Vec<usize> {
    steps.iter().flat_map(|(r, k)| std::iter::repeat_n(*r, *k)).collect()
}

/// 7τ1, 16τ2, 17τ3 from ten agents in every state: ends at (3,1,2,34,10).
pub fn walkthrough_host(p: &Protocol) -> TransitionSequence {
    let x = Configuration::from_counts(vec![10; 5]).unwrap();
    let _ = p;
    TransitionSequence::new(x, repeat(&[(0, 7), (1, 16), (2, 17)]))
}

/// The walkthrough followed by 16 g1,g1 -> g2,g2 and 2 g1,g2 -> g1,g1:
/// g1 dips to 2 before the last two steps. Ends at (3,1,2,4,40).
pub fn dip_host(p: &Protocol) -> TransitionSequence {
    let _ = p;
    let x = Configuration::from_counts(vec![10; 5]).unwrap();
    TransitionSequence::new(x, repeat(&[(0, 7), (1, 16), (2, 17), (4, 16), (3, 2)]))
}

/// A random protocol that is Δ-ordered via its first d rules, on states
/// d1..dd followed by `gamma` Γ-states, plus a few extra Γ rules.
pub struct OrderedProtocol {
    pub protocol: Protocol,
    pub delta: Vec<StateId>,
}

pub fn random_ordered<R: Rng>(rng: &mut R, d: usize, gamma: usize) -> OrderedProtocol {
    assert!(gamma >= 1);
    let lam = d + gamma;
    let names: Vec<String> = (1..=d).map(|i| format!("d{i}")).chain((1..=gamma).map(|i| format!("g{i}"))).collect();
    let mut b = Protocol::builder();
    for n in &names {
        b.add_state(n).unwrap();
    }
    let mut used = std::collections::HashSet::new();
    for j in 0..d {
        // second input and outputs come from {d_{j+1}..d_d} ∪ Γ
        let allowed: Vec<usize> = (j + 1..lam).collect();
        let s = allowed[rng.random_range(0..allowed.len())];
        let o1 = allowed[rng.random_range(0..allowed.len())];
        let o2 = allowed[rng.random_range(0..allowed.len())];
        used.insert((j.min(s), j.max(s)));
        b.add_rule(&names[j], &names[s], &names[o1], &names[o2]).unwrap();
    }
    let extra = rng.random_range(0..=gamma.min(3));
    for _ in 0..extra {
        let (a, c) = (d + rng.random_range(0..gamma), d + rng.random_range(0..gamma));
        let key = (a.min(c), a.max(c));
        if used.contains(&key) {
            continue;
        }
        let (o1, o2) = (d + rng.random_range(0..gamma), d + rng.random_range(0..gamma));
        if (o1.min(o2), o1.max(o2)) == key {
            continue;
        }
        used.insert(key);
        b.add_rule(&names[a], &names[c], &names[o1], &names[o2]).unwrap();
    }
    let protocol = b.build().unwrap();
    let delta = (0..d).map(StateId).collect();
    OrderedProtocol { protocol, delta }
}

/// Host path that drains each di (in ordering order) with its witness
/// down to `target[i]`, starting from `k` agents in every state. Whenever a
/// witness's partner would drop to `floor`, x is topped up in that state, so
/// the host never fires a witness against a partner of count ≤ floor and each
/// τi fires at least k − target[i] times. Returns (x, host).
pub fn topped_up_host<R: Rng>(
    p: &Protocol,
    witnesses: &[usize],
    delta: &[StateId],
    target: &[u64],
    k: u64,
    floor: u64,
    rng: &mut R,
) -> TransitionSequence {
    let mut x = Configuration::from_counts(vec![k; p.num_states()]).unwrap();
    let mut cur = x.clone();
    let mut steps = Vec::new();
    let gamma_rules: Vec<usize> = (0..p.rules().len())
        .filter(|r| {
            let t = p.rule(*r);
            [t.r1, t.r2, t.p1, t.p2].iter().all(|s| !delta.contains(s))
        })
        .collect();
    if !gamma_rules.is_empty() {
        for _ in 0..rng.random_range(0..20) {
            let r = *gamma_rules.choose(rng).unwrap();
            let t = p.rule(r);
            if cur.get(t.r1) > floor + 1 && cur.get(t.r2) > floor + 1 {
                popproto::config::apply_in_place(&mut cur, t).unwrap();
                steps.push(r);
            }
        }
    }
    for (i, d) in delta.iter().enumerate() {
        let t = p.rule(witnesses[i]);
        let partner = if t.r1 == *d { t.r2 } else { t.r1 };
        while cur.get(*d) > target[i] {
            if cur.get(partner) <= floor {
                let top = k.max(1);
                x.add(partner, top).unwrap();
                cur.add(partner, top).unwrap();
            }
            popproto::config::apply_in_place(&mut cur, t).unwrap();
            steps.push(witnesses[i]);
        }
    }
    TransitionSequence::new(x, steps)
}
