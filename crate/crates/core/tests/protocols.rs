use popproto::linear::LinearSpec;
use popproto::protocols::*;
use popproto::sim::*;
use popproto::verify::*;

/// All vectors in ℕ^k with ‖m‖ ≤ max.
fn grid(k: usize, max: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|v: Vec<u64>| {
                let used: u64 = v.iter().sum();
                (0..=max - used).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

fn certify(inst: &ProtocolInstance, max: u64, a_values: &[Option<u64>]) -> CheckReport {
    let conv = inst.convention().unwrap();
    let mut cases = Vec::new();
    for m in grid(inst.k(), max) {
        for a in a_values {
            if let Some(c) = inst.case(&m, *a).unwrap() {
                cases.push(c);
            }
        }
    }
    check_cases(&inst.protocol, &conv, &cases, Limits::default(), &mut StabilityCache::default())
}

fn assert_all_pass(name: &str, rep: &CheckReport) {
    for c in &rep.cases {
        assert!(
            matches!(c.verdict, Verdict::Pass | Verdict::Skipped),
            "{name}: input {:?} a={:?} → {:?} (stable outputs {:?}, witness {:?})",
            c.input,
            c.a,
            c.verdict,
            c.stable_outputs,
            c.witness
        );
    }
    assert!(rep.count(Verdict::Pass) > 0);
}

#[test]
fn builtins_are_certified_on_small_inputs() {
    for name in ["double", "halve_slow", "majority", "parity", "equality"] {
        let inst = builtin(name).unwrap();
        assert_all_pass(name, &certify(&inst, 6, &[None]));
    }
    let hf = builtin("halve_fast").unwrap();
    assert_all_pass("halve_fast", &certify(&hf, 6, &[Some(1), Some(2)]));
}

#[test]
fn subtraction_on_its_domain() {
    let inst = builtin("subtract").unwrap();
    let rep = certify(&inst, 6, &[None]);
    // m1 < m2 has no oracle value and is left out
    assert!(rep.cases.iter().all(|c| c.input[0] >= c.input[1]));
    assert_all_pass("subtract", &rep);
}

#[test]
fn majority_decides_one_two_as_zero() {
    let inst = builtin("majority").unwrap();
    let rep = check_stable_decision(&inst.protocol, &|m| m[0] >= m[1], &[vec![1, 2]], Limits::default()).unwrap();
    assert_eq!(rep.cases[0].stable_outputs, vec![0]);
    assert!(rep.all_pass());
}

#[test]
fn compiled_instances_are_certified() {
    for c in [vec![0], vec![1], vec![2], vec![3], vec![4, 1, 2], vec![0, 2]] {
        let inst = compile_nlinear(&c).unwrap();
        assert_all_pass(&inst.name, &certify(&inst, if c.len() > 2 { 4 } else { 6 }, &[None]));
    }
    for s in ["1/2", "2/3", "1", "3/2", "1/2,1"] {
        let inst = compile_qlinear_approx(&LinearSpec::parse(s).unwrap()).unwrap();
        let max = if s.contains(',') { 3 } else { 6 };
        assert_all_pass(&inst.name, &certify(&inst, max, &[Some(1), Some(2)]));
    }
}

#[test]
fn two_thirds_of_nine_with_one_helper() {
    let inst = compile_qlinear_approx(&LinearSpec::parse("2/3").unwrap()).unwrap();
    let case = inst.case(&[9], Some(1)).unwrap().unwrap();
    assert_eq!(case.expected, Expected::Interval(5, 7));
    let conv = inst.convention().unwrap();
    let rep = check_cases(&inst.protocol, &conv, &[case], Limits::default(), &mut StabilityCache::default());
    assert!(rep.all_pass());
    assert!(rep.cases[0].stable_outputs.iter().all(|y| (6..=7).contains(y)));
}

#[test]
fn nlinear_simulation_is_exact() {
    let inst = compile_nlinear(&[4, 1, 2]).unwrap();
    let y = inst.protocol.roles.output.unwrap();
    let c0 = inst.initial(&[25, 50, 12], None, None).unwrap();
    let stats = estimate_stabilization_time(&inst.protocol, &c0, &inst.stop_condition(), 200, 17).unwrap();
    for r in &stats.records {
        assert_eq!(r.final_config.get(y), 4 * 25 + 50 + 2 * 12);
    }
    let ident = compile_nlinear(&[1]).unwrap();
    let c0 = ident.initial(&[5], None, None).unwrap();
    let r = run_accelerated(&ident.protocol, &c0, &ident.stop_condition(), &mut rng_for(1)).unwrap();
    assert_eq!(ident.output(&r.final_config), Some(5));
}

#[test]
fn approximators_stay_in_their_intervals() {
    let cases: Vec<(ProtocolInstance, Vec<u64>, u64)> = vec![
        (builtin("halve_fast").unwrap(), vec![200], 20),
        (compile_qlinear_approx(&LinearSpec::parse("1/2").unwrap()).unwrap(), vec![200], 10),
        (compile_qlinear_approx(&LinearSpec::parse("2/3,1/4").unwrap()).unwrap(), vec![90, 60], 5),
    ];
    for (inst, m, a) in cases {
        let c0 = inst.initial(&m, Some(a), None).unwrap();
        let want = inst.expected(&m, a).unwrap();
        let stats = estimate_stabilization_time(&inst.protocol, &c0, &inst.stop_condition(), 1000, 23).unwrap();
        for r in &stats.records {
            let y = inst.output(&r.final_config).unwrap();
            assert!(want.accepts(y), "{}: y = {y} outside {want:?}", inst.name);
            for s in &inst.drain {
                assert_eq!(r.final_config.get(*s), 0);
            }
        }
    }
}

#[test]
fn qlinear_half_behaves_like_fast_halving() {
    let inst = compile_qlinear_approx(&LinearSpec::parse("1/2").unwrap()).unwrap();
    let c0 = inst.initial(&[1000], Some(50), None).unwrap();
    let stats = estimate_stabilization_time(&inst.protocol, &c0, &inst.stop_condition(), 20, 5).unwrap();
    for r in &stats.records {
        let y = inst.output(&r.final_config).unwrap();
        assert!(y.abs_diff(500) <= 50, "y = {y}");
    }
    let whole = compile_qlinear_approx(&LinearSpec::parse("1/1").unwrap()).unwrap();
    let c0 = whole.initial(&[37], Some(3), None).unwrap();
    let r = run_accelerated(&whole.protocol, &c0, &whole.stop_condition(), &mut rng_for(2)).unwrap();
    assert_eq!(whole.output(&r.final_config), Some(37));
}

#[test]
fn double_from_three() {
    let inst = builtin("double").unwrap();
    let c0 = inst.initial(&[3], None, None).unwrap();
    assert_eq!(c0.get(inst.protocol.roles.quiescent.unwrap()), 3);
    for seed in 0..50 {
        let r = run_until(&inst.protocol, &c0, &inst.stop_condition(), &mut rng_for(seed), false).unwrap();
        assert_eq!(inst.output(&r.final_config), Some(6));
    }
}

#[test]
fn layouts_only_use_inputs_quiescent_and_helper() {
    let insts = [
        builtin("double").unwrap(),
        builtin("halve_fast").unwrap(),
        builtin("subtract").unwrap(),
        compile_nlinear(&[4, 1, 2]).unwrap(),
        compile_qlinear_approx(&LinearSpec::parse("1/2,3,5/3").unwrap()).unwrap(),
    ];
    for inst in &insts {
        let roles = &inst.protocol.roles;
        let mut allowed = roles.inputs.clone();
        allowed.extend(roles.quiescent);
        allowed.extend(roles.approx);
        for m in grid(inst.k(), 5) {
            if inst.expected(&m, 1).is_none() {
                continue;
            }
            let c = inst.initial(&m, Some(1), None).unwrap();
            assert_eq!(c.restrict(&allowed), c, "{}", inst.name);
            let norm: u64 = m.iter().sum::<u64>() + inst.is_approximator() as u64;
            let q = roles.quiescent.map(|s| c.get(s)).unwrap_or(0);
            if norm > 0 {
                assert!(q <= inst.q0_constant() * norm, "{}: q0 = {q}", inst.name);
            }
        }
    }
    let hf = builtin("halve_fast").unwrap();
    assert!(hf.initial(&[10], None, None).is_err());
    assert!(matches!(
        hf.initial(&[10, 1], Some(1), None),
        Err(popproto::Error::Compile(CompileError::Arity { got: 2, want: 1 }))
    ));
}
