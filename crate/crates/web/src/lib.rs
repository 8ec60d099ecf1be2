//! Browser demo exports. The `*_json` and plain functions are ordinary Rust
//! and are what the tests call; the `#[wasm_bindgen]` wrappers only convert
//! errors into JavaScript exceptions.

use opcircuit::evaluator::{probability_foliated, probability_with_plan, Binding};
use opcircuit::io::operator_from_json;
use opcircuit::linalg::{random_physical, rng_from_seed};
use opcircuit::optensor::{is_physical, PHYSICAL_EPS};
use opcircuit::tomography::{reconstruct_operation, SampledBox};
use opcircuit::duotensor::default_fiducials_for;
use opcircuit::{parse_circuit, print_circuit, LabeledOperator, Slot, WireLabel};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Evaluates `circuit` with operators given as a JSON object of name to operator file contents.
pub fn evaluate_json(circuit: &str, bindings: &str) -> Result<String, String> {
    let frag = parse_circuit(circuit).map_err(|e| e.to_string())?;
    let table: serde_json::Map<String, Value> = serde_json::from_str(bindings).map_err(|e| format!("bindings: {e}"))?;
    let mut b = Binding::new();
    for (name, op) in table {
        b.insert(name.clone(), operator_from_json(&op.to_string()).map_err(|e| format!("{name}: {e}"))?);
    }
    let (p, plan) = probability_with_plan(&frag, &b).map_err(|e| e.to_string())?;
    let q = probability_foliated(&frag, &b).map_err(|e| e.to_string())?;
    let nonphysical = b.nonphysical(&frag, PHYSICAL_EPS).map_err(|e| e.to_string())?;
    Ok(json!({
        "canonical": print_circuit(&frag),
        "probability": p,
        "foliated": q,
        "plan": plan.to_string().lines().collect::<Vec<_>>(),
        "nonphysical": nonphysical,
    })
    .to_string())
}

/// Qubit channel `mix * wire + noise * identity / 2` from `a1` to `a2`.
pub fn wire_noise_family(mix: f64, noise: f64) -> LabeledOperator {
    let wire = LabeledOperator::wire(WireLabel::new("a", 1), WireLabel::new("a", 2), 2);
    let id = LabeledOperator::identity(wire.slots().to_vec());
    wire.scaled(mix).add(&id.scaled(noise / 2.0)).expect("same slots")
}

/// Signed physicality score over an `n x n` grid with `mix`, `noise` in `[lo, hi]`,
/// row-major with `noise` along rows. Positive cells are physical; the value is
/// the smaller of the positivity margin and the trace slack.
pub fn physicality_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        let noise = hi - row as f64 * step;
        for col in 0..n {
            let r = is_physical(&wire_noise_family(lo + col as f64 * step, noise), PHYSICAL_EPS);
            out.push(r.positivity_margin.min(-r.trace_margin));
        }
    }
    out
}

/// Max-entry tomography error of a random qubit channel for each shot count.
pub fn tomography_errors(shots: &[u64], seed: u64) -> Result<Vec<f64>, String> {
    let mut rng = rng_from_seed(seed);
    let l = |s: &str| s.parse::<WireLabel>().expect("literal label");
    let hidden = random_physical(vec![Slot::input(l("a1"), 2)], vec![Slot::output(l("a2"), 2)], true, &mut rng);
    let fs = default_fiducials_for(&hidden).map_err(|e| e.to_string())?;
    shots
        .iter()
        .map(|&n| {
            let rec = reconstruct_operation(&SampledBox::new(hidden.clone(), n, seed), &fs).map_err(|e| e.to_string())?;
            rec.max_abs_diff(&hidden).map_err(|e| e.to_string())
        })
        .collect()
}

#[wasm_bindgen]
pub fn evaluate(circuit: &str, bindings: &str) -> Result<String, JsError> {
    evaluate_json(circuit, bindings).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn physicality_heatmap(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    physicality_grid(n, lo, hi)
}

#[wasm_bindgen]
pub fn physicality_at(mix: f64, noise: f64) -> String {
    let r = is_physical(&wire_noise_family(mix, noise), PHYSICAL_EPS);
    json!({ "positivity_margin": r.positivity_margin, "trace_margin": r.trace_margin, "physical": r.physical }).to_string()
}

#[wasm_bindgen]
pub fn tomography_curve(shots: Vec<f64>, seed: u64) -> Result<Vec<f64>, JsError> {
    let shots: Vec<u64> = shots.iter().map(|&s| s.max(1.0) as u64).collect();
    tomography_errors(&shots, seed).map_err(|e| JsError::new(&e))
}
