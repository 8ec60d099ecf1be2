use opcircuit::duotensor::{convert_all, decompose, default_fiducials_for, reconstruct, DotColor};
use opcircuit::evaluator::{
    probability, probability_foliated, probability_foliated_with, random_circuit, Binding, RandomCircuitConfig,
};
use opcircuit::linalg::{partial_trace, partial_transpose, random_hermitian, random_physical, rng_from_seed, tensor_product};
use opcircuit::notation::{foliate, foliate_latest, CircuitFragment, OperationDecl};
use opcircuit::optensor::{
    execute_plan, is_physical, left_to_right_plan, plan_contraction, sandwich_check, witness_nonphysical, PHYSICAL_EPS,
};
use opcircuit::tomography::{reconstruct_operation, ExactBox, SampledBox};
use opcircuit::{parse_circuit, print_circuit, Error, LabeledOperator, Slot, WireLabel, WiringError};
use proptest::prelude::*;
use rand::Rng;

fn small() -> RandomCircuitConfig {
    RandomCircuitConfig { max_ops: 6, ..Default::default() }
}

fn longest_path(f: &CircuitFragment) -> usize {
    let succ = f.successors();
    fn depth(v: usize, succ: &[Vec<usize>], memo: &mut Vec<Option<usize>>) -> usize {
        if let Some(d) = memo[v] {
            return d;
        }
        let d = succ[v].iter().map(|&w| 1 + depth(w, succ, memo)).max().unwrap_or(0);
        memo[v] = Some(d);
        d
    }
    let mut memo = vec![None; f.ops.len()];
    (0..f.ops.len()).map(|v| depth(v, &succ, &mut memo)).max().unwrap_or(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluators_agree_and_foliation_is_irrelevant(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let (f, b) = random_circuit(&RandomCircuitConfig::default(), &mut rng);
        let p = probability(&f, &b).unwrap();
        let early = probability_foliated(&f, &b).unwrap();
        let late = probability_foliated_with(&f, &b, &foliate_latest(&f)).unwrap();
        prop_assert!((p - early).abs() <= 1e-10);
        prop_assert!((early - late).abs() <= 1e-10);
        prop_assert!((-1e-10..=1.0 + 1e-10).contains(&p));
    }

    #[test]
    fn plans_agree(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let (f, b) = random_circuit(&small(), &mut rng);
        let ops = b.bind(&f).unwrap();
        let greedy = execute_plan(&ops, &plan_contraction(&ops).unwrap()).unwrap().value();
        let ltr = execute_plan(&ops, &left_to_right_plan(&ops).unwrap()).unwrap().value();
        prop_assert!((greedy - ltr).abs() <= 1e-10);
    }

    #[test]
    fn canonical_printing_is_stable(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let (f, _) = random_circuit(&RandomCircuitConfig::default(), &mut rng);
        let text = print_circuit(&f);
        let again = parse_circuit(&text).unwrap();
        prop_assert_eq!(print_circuit(&again), text);
        prop_assert_eq!(again.canonicalize(), f.canonicalize());
    }

    #[test]
    fn foliation_depth_is_longest_path(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let (f, _) = random_circuit(&RandomCircuitConfig::default(), &mut rng);
        prop_assert_eq!(foliate(&f).layers.len(), 1 + longest_path(&f));
        prop_assert_eq!(foliate_latest(&f).layers.len(), 1 + longest_path(&f));
    }

    #[test]
    fn validation_rejects_each_wiring_violation(seed in any::<u64>(), which in 0..3usize) {
        let mut rng = rng_from_seed(seed);
        let (f, _) = random_circuit(&RandomCircuitConfig::default(), &mut rng);
        prop_assert!(CircuitFragment::new(f.ops.clone()).is_ok());
        let w = &f.wires[rng.random_range(0..f.wires.len())];
        let fresh = f.max_label_id() + 1;
        let mut ops = f.ops.clone();
        match which {
            0 => {
                ops.push(OperationDecl::new("Z", vec![w.label.clone()], vec![]));
                let r = CircuitFragment::new(ops);
                prop_assert!(matches!(r, Err(Error::Wiring(WiringError::OneWireViolation { .. }))), "{:?}", r);
            }
            1 => {
                let other = if w.label.sys == "a" { "b" } else { "a" };
                ops[w.consumer].inputs[w.input_slot] = WireLabel::new(other, w.label.id);
                let r = CircuitFragment::new(ops);
                prop_assert!(matches!(r, Err(Error::Wiring(WiringError::TypeMismatch { .. }))), "{:?}", r);
            }
            _ => {
                let back = WireLabel::new("a", fresh);
                ops[w.consumer].outputs.push(back.clone());
                ops[w.producer].inputs.push(back);
                let r = CircuitFragment::new(ops);
                prop_assert!(matches!(r, Err(Error::Wiring(WiringError::ClosedLoop { .. }))), "{:?}", r);
            }
        }
    }

    #[test]
    fn transpose_inside_trace_is_invisible(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let l = |s: &str| s.parse::<WireLabel>().unwrap();
        let a = LabeledOperator::new(vec![Slot::input(l("a1"), 2), Slot::output(l("b2"), 3)], random_hermitian(6, &mut rng)).unwrap();
        let b = LabeledOperator::new(vec![Slot::output(l("a3"), 2)], random_hermitian(2, &mut rng)).unwrap();
        for over in [vec![l("a1")], vec![l("b2")], vec![l("a1"), l("b2")]] {
            let direct = partial_trace(&a, &over).unwrap();
            let via = partial_trace(&partial_transpose(&a, &over).unwrap(), &over).unwrap();
            prop_assert!(direct.max_abs_diff(&via).unwrap() <= 1e-12);
        }
        let ab = tensor_product(&a, &b).unwrap();
        prop_assert!((ab.trace() - a.trace() * b.trace()).abs() <= 1e-12 * (1.0 + (a.trace() * b.trace()).abs()));
    }

    #[test]
    fn physicality_verdicts_match_definition(seed in any::<u64>(), scale in 0.0f64..1.5) {
        let mut rng = rng_from_seed(seed);
        let l = |s: &str| s.parse::<WireLabel>().unwrap();
        let base = random_physical(vec![Slot::input(l("a1"), 2)], vec![Slot::output(l("a2"), 2)], false, &mut rng);
        let noise = LabeledOperator::new(base.slots().to_vec(), random_hermitian(4, &mut rng)).unwrap();
        let op = base.add(&noise.scaled(scale)).unwrap();
        if is_physical(&op, PHYSICAL_EPS).physical {
            prop_assert!(sandwich_check(&op, &[1, 2, 4], 100, seed, PHYSICAL_EPS).unwrap().pass);
        } else {
            let w = witness_nonphysical(&op, PHYSICAL_EPS).unwrap();
            prop_assert!(w.value < -1e-10 || w.value > 1.0 + 1e-10);
        }
    }

    #[test]
    fn decomposition_inverts_for_any_hermitian(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let l = |s: &str| s.parse::<WireLabel>().unwrap();
        let op = LabeledOperator::new(vec![Slot::output(l("a1"), 2), Slot::input(l("b2"), 3)], random_hermitian(6, &mut rng)).unwrap();
        let fs = default_fiducials_for(&op).unwrap();
        let w = decompose(&op, &fs).unwrap();
        prop_assert!(reconstruct(&w, &fs).unwrap().max_abs_diff(&op).unwrap() <= 1e-10);
        let round = convert_all(&convert_all(&w, DotColor::Black, &fs).unwrap(), DotColor::White, &fs).unwrap();
        prop_assert!(round.max_abs_diff(&w) <= 1e-12);
        let rec = reconstruct_operation(&ExactBox::new(op.clone()), &fs).unwrap();
        prop_assert!(rec.max_abs_diff(&op).unwrap() <= 1e-10);
    }

    #[test]
    fn outcome_sums_match_coarse_graining(seed in any::<u64>()) {
        // two-outcome measurement {E, I - E} after a random circuit fragment
        let mut rng = rng_from_seed(seed);
        let l = |s: &str| s.parse::<WireLabel>().unwrap();
        let f = parse_circuit("P^{a1} C_{a1}^{a2} M_{a2}").unwrap();
        let mut b = Binding::new();
        b.insert("P", random_physical(vec![], vec![Slot::output(l("a1"), 2)], false, &mut rng));
        b.insert("C", random_physical(vec![Slot::input(l("a1"), 2)], vec![Slot::output(l("a2"), 2)], false, &mut rng));
        let e = random_physical(vec![Slot::input(l("a1"), 2)], vec![], false, &mut rng);
        let id = LabeledOperator::identity(vec![Slot::input(l("a1"), 2)]);
        b.insert("M", e.clone());
        let p0 = probability(&f, &b).unwrap();
        b.insert("M", id.sub(&e).unwrap());
        let p1 = probability(&f, &b).unwrap();
        b.insert("M", id);
        prop_assert!((p0 + p1 - probability(&f, &b).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn sampled_error_shrinks_with_shots() {
    let l = |s: &str| s.parse::<WireLabel>().unwrap();
    let mut rng = rng_from_seed(77);
    let op = random_physical(vec![Slot::input(l("a1"), 2)], vec![Slot::output(l("a2"), 2)], true, &mut rng);
    let fs = default_fiducials_for(&op).unwrap();
    let mut better = 0;
    for seed in 0..10 {
        let coarse = reconstruct_operation(&SampledBox::new(op.clone(), 10_000, seed), &fs).unwrap();
        let fine = reconstruct_operation(&SampledBox::new(op.clone(), 1_000_000, seed), &fs).unwrap();
        if fine.max_abs_diff(&op).unwrap() < coarse.max_abs_diff(&op).unwrap() {
            better += 1;
        }
    }
    assert!(better >= 9, "only {better} of 10 seeds improved");
}

#[test]
fn sampled_reconstructions_are_nearly_physical() {
    let l = |s: &str| s.parse::<WireLabel>().unwrap();
    let mut rng = rng_from_seed(78);
    let shots = 100_000;
    for seed in 0..5 {
        let op = random_physical(vec![Slot::input(l("a1"), 2)], vec![Slot::output(l("b2"), 3)], true, &mut rng);
        let fs = default_fiducials_for(&op).unwrap();
        let rec = reconstruct_operation(&SampledBox::new(op.clone(), shots, seed), &fs).unwrap();
        let noise = opcircuit::tomography::propagated_noise(op.slots(), &fs, shots).unwrap();
        assert!(is_physical(&rec, 3.0 * noise).physical, "seed {seed}: {:?} vs noise {noise}", is_physical(&rec, 0.0));
    }
}
