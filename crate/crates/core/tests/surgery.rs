mod common;

use common::*;
use popproto::surgery::*;
use popproto::{Configuration, Protocol, StateId, TransitionSequence};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows(m: &IntMatrix) -> Vec<Vec<i64>> {
    m.to_rows()
}

#[test]
fn example_ordering_and_t() {
    let p = example_p();
    let s = Surgery::new(&p, &ids(&p, &["d3", "d1", "d2"])).unwrap();
    assert_eq!(s.ordering.delta, ids(&p, &["d1", "d2", "d3"]));
    assert_eq!(s.ordering.witnesses, vec![0, 1, 2]);
    assert_eq!(rows(&s.matrices.t), vec![vec![1, 0, 0], vec![1, 1, 0], vec![1, 1, 1]]);
    assert_eq!(s.matrices.t.mul_vec(&[5, 1, 2]).unwrap(), vec![5, 6, 8]);
    assert_eq!(rows(&s.matrices.t1_tilde), vec![vec![0, 0, 0], vec![1, 0, 0], vec![-1, 1, 0]]);
    assert_eq!(rows(&s.matrices.t_tilde), vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 1]]);
    // Γ = (g1, g2)
    assert_eq!(rows(&s.matrices.c3), vec![vec![1, 1, 1], vec![0, 0, 0]]);
}

#[test]
fn example_elimination() {
    let p = example_p();
    let s = Surgery::new(&p, &ids(&p, &["d1", "d2", "d3"])).unwrap();
    let el = s.eliminate_delta(&[5, 1, 2]).unwrap();
    assert_eq!(el.e, counts(&p, &["d3", "g1"], &[5, 14]));
    assert_eq!(el.rule_counts, vec![5, 6, 8]);
    let end = el.path.execute(&p).unwrap();
    assert_eq!(end, el.z);
    assert_eq!(s.delta_part(&end), vec![0, 0, 0]);
    assert_eq!(end, counts(&p, &["g1"], &[27]));
}

#[test]
fn six_rule_example_matrices() {
    let p = Protocol::parse(
        "states: d1 d2 d3 d4 d5 d6 g1 g2
transition: d1 d3 -> d2 d4
transition: d2 g1 -> d3 d4
transition: d3 d6 -> d5 g1
transition: d4 d6 -> g1 g2
transition: d5 g2 -> d6 d6
transition: d6 g1 -> g1 g2
",
    )
    .unwrap();
    let delta = ids(&p, &["d1", "d2", "d3", "d4", "d5", "d6"]);
    let s = Surgery::new(&p, &delta).unwrap();
    assert_eq!(s.ordering.delta, delta);
    assert_eq!(s.ordering.witnesses, vec![0, 1, 2, 3, 4, 5]);
    let mut t1 = IntMatrix::zeros(6, 6);
    for (r, c, v) in [(1, 0, 1), (3, 0, 1), (3, 1, 1), (2, 1, 1), (4, 2, 1), (5, 4, 2)] {
        t1.set(r, c, v);
    }
    assert_eq!(s.matrices.t1, t1);
    let mut tt = t1.clone();
    for (r, c) in [(2, 0), (5, 2), (5, 3)] {
        tt.set(r, c, -1);
    }
    assert_eq!(s.matrices.t1_tilde, tt);
    assert!(s.matrices.t1.is_strictly_lower());
    assert!(s.matrices.t.max() < 1 << 6);
}

#[test]
fn produce_e_worked_edit() {
    let p = example_p();
    let s = Surgery::new(&p, &ids(&p, &["d1", "d2", "d3"])).unwrap();
    let host = dip_host(&p);
    let o = host.execute(&p).unwrap();
    assert_eq!(o.counts(), &[3, 1, 2, 4, 40]);
    let pe = s.produce_e(&host, &[0, 0, 5], 3).unwrap();
    assert_eq!(pe.t_tilde, vec![3, 4, -2]);
    assert_eq!(pe.edit.removals, vec![0, 0, 2]);
    assert_eq!(pe.edit.additions, vec![3, 4, 0]);
    assert_eq!(pe.edit.buffer.counts(), &[240; 5]);
    assert_eq!(s.delta_part(&pe.executed), vec![240, 240, 245]);
    let pred: Vec<u64> = pe.predicted.iter().map(|v| *v as u64).collect();
    assert_eq!(pe.executed.counts(), pred.as_slice());
}

#[test]
fn removal_without_buffer_dips_below_zero() {
    let p = example_p();
    let host = dip_host(&p);
    // drop the last two g1,d3 -> g1,g1
    let mut steps = host.steps.clone();
    for _ in 0..2 {
        let last = steps.iter().rposition(|r| *r == 2).unwrap();
        steps.remove(last);
    }
    let g1 = p.state("g1").unwrap();
    assert_eq!(verify_path_validity(&p, &host.origin, &steps), Validity::FirstFailure { index: 54, state: g1 });
    let buffered = host.origin.checked_add(&Configuration::from_counts(vec![2; 5]).unwrap()).unwrap();
    assert_eq!(verify_path_validity(&p, &buffered, &steps), Validity::Valid);
}

#[test]
fn push_walkthrough() {
    let p = example_p();
    let s = Surgery::new(&p, &ids(&p, &["d1", "d2", "d3"])).unwrap();
    let host = walkthrough_host(&p);
    let pd = s.push_delta(&host, &[2, 0, 0], &[0, 0, 0], 3).unwrap();
    assert_eq!(pd.final_config.counts(), &[0, 0, 0, 82, 20]);
    assert!(pd.warnings.iter().any(|w| w.contains("buffer")));
    let pred: Vec<u64> = pd.predicted.iter().map(|v| *v as u64).collect();
    assert_eq!(pd.final_config.counts(), pred.as_slice());
}

#[test]
fn push_with_target() {
    let p = example_p();
    let s = Surgery::new(&p, &ids(&p, &["d1", "d2", "d3"])).unwrap();
    let x = Configuration::from_counts(vec![400; 5]).unwrap();
    let host = TransitionSequence::new(x, repeat(&[(0, 397), (1, 796), (2, 797)]));
    let o = host.execute(&p).unwrap();
    assert_eq!(s.delta_part(&o), vec![3, 1, 2]);
    let pd = s.push_delta(&host, &[1, 2, 0], &[0, 1, 2], 3).unwrap();
    assert_eq!(s.delta_part(&pd.final_config), vec![0, 1, 2]);
    assert!(pd.warnings.iter().all(|w| !w.contains("buffer")));
}

#[test]
fn errors() {
    let p = example_p();
    let g = ids(&p, &["g1", "g2"]);
    match Surgery::new(&p, &g) {
        Err(SurgeryError::NotOrderable(left)) => assert_eq!(left, vec!["g1", "g2"]),
        other => panic!("{other:?}"),
    }
    let s = Surgery::new(&p, &ids(&p, &["d1", "d2", "d3"])).unwrap();
    assert!(matches!(s.eliminate_delta(&[1]), Err(SurgeryError::Arity { got: 1, want: 3 })));
    // removing more τ3 than the host contains
    let host = TransitionSequence::new(Configuration::from_counts(vec![10; 5]).unwrap(), vec![2]);
    assert!(matches!(
        s.produce_e(&host, &[10, 10, 12], 12),
        Err(SurgeryError::InsufficientOccurrences { needed: 3, present: 1, .. })
    ));
    let bad = TransitionSequence::new(Configuration::zeros(5), vec![0]);
    assert!(matches!(s.eliminate_delta(&[0, 0, 0]).map(|e| e.rule_counts), Ok(v) if v == vec![0, 0, 0]));
    assert!(matches!(s.produce_e(&bad, &[0, 0, 0], 1), Err(SurgeryError::InvalidHost(0))));
}

#[test]
fn empty_delta() {
    let p = example_p();
    let s = Surgery::new(&p, &[]).unwrap();
    assert_eq!(s.d(), 0);
    let el = s.eliminate_delta(&[]).unwrap();
    assert!(el.path.steps.is_empty());
    assert_eq!(el.e.n(), 0);
}

/// Test-side oracle: does this permutation satisfy the ordering condition?
fn perm_orderable(p: &Protocol, perm: &[StateId]) -> bool {
    (0..perm.len()).all(|i| {
        let prefix = &perm[..=i];
        p.rules().iter().any(|t| {
            let other = if t.r1 == perm[i] {
                t.r2
            } else if t.r2 == perm[i] {
                t.r1
            } else {
                return false;
            };
            !prefix.contains(&other) && !prefix.contains(&t.p1) && !prefix.contains(&t.p2)
        })
    })
}

fn permutations(items: &[StateId]) -> Vec<Vec<StateId>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn random_protocol(seed: u64, lam: usize, rules: usize) -> Protocol {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..lam).map(|i| format!("s{i}")).collect();
    let mut b = Protocol::builder();
    for n in &names {
        b.add_state(n).unwrap();
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..rules {
        let (a, c) = (rng.random_range(0..lam), rng.random_range(0..lam));
        let (o1, o2) = (rng.random_range(0..lam), rng.random_range(0..lam));
        if !seen.insert((a.min(c), a.max(c))) || (a.min(c), a.max(c)) == (o1.min(o2), o1.max(o2)) {
            continue;
        }
        b.add_rule(&names[a], &names[c], &names[o1], &names[o2]).unwrap();
    }
    b.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ordering_search_matches_brute_force(seed in any::<u64>(), lam in 2usize..8, rules in 1usize..14, d in 1usize..=5) {
        let p = random_protocol(seed, lam, rules);
        let delta: Vec<StateId> = (0..d.min(lam)).map(StateId).collect();
        let exists = permutations(&delta).iter().any(|perm| perm_orderable(&p, perm));
        match find_delta_ordering(&p, &delta) {
            Ok(ord) => {
                prop_assert!(exists);
                prop_assert!(is_valid_ordering(&p, &ord));
                prop_assert!(perm_orderable(&p, &ord.delta));
            }
            Err(SurgeryError::NotOrderable(_)) => prop_assert!(!exists),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn elimination_agrees_with_execution(seed in any::<u64>(), d in 1usize..=5, gamma in 1usize..=4, c in proptest::collection::vec(0u64..6, 5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = random_ordered(&mut rng, d, gamma);
        let s = Surgery::new(&op.protocol, &op.delta).unwrap();
        let m = &s.matrices;
        prop_assert!(m.t1.is_strictly_lower());
        prop_assert!(m.t.max() < 1 << d);
        prop_assert!(m.c1.max() < 1 << (d + 1));
        let el = s.eliminate_delta(&c[..d]).unwrap();
        let end = el.path.execute(&op.protocol).unwrap();
        prop_assert_eq!(&end, &el.z);
        prop_assert!(s.delta_part(&end).iter().all(|v| *v == 0));
        prop_assert_eq!(el.path.rule_counts(op.protocol.rules().len()).iter().sum::<u64>(), el.rule_counts.iter().sum::<u64>());
    }
}
