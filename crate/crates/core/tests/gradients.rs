mod common;

use common::{worst_error, BLOCKS, OPS, TOLERANCE};

const INSTANCES: u64 = 20;

fn assert_all(names: &[&str]) {
    let mut failures = Vec::new();
    for name in names {
        let err = worst_error(name, INSTANCES);
        if !(err < TOLERANCE) {
            failures.push(format!("{name}: {err:e}"));
        }
    }
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}

#[test]
fn tape_operations_match_finite_differences() {
    assert_all(OPS);
}

#[test]
fn layers_match_finite_differences() {
    assert_all(&["linear", "gru_cell", "ra_layer", "va_layer", "gcn_layer"]);
}

#[test]
fn composed_blocks_match_finite_differences() {
    assert_all(&["encoder", "tiu", "ltf", "critic", "critic_loss", "generator_loss", "joint_loss", "sln", "dtc"]);
}

#[test]
fn suite_covers_every_block() {
    let covered: Vec<&str> = OPS.iter().chain(BLOCKS).copied().collect();
    for name in ["ra_layer", "va_layer", "tiu", "ltf", "critic", "dtc"] {
        assert!(covered.contains(&name));
    }
}

#[test]
fn checker_detects_a_wrong_gradient() {
    // a tape op whose backward is right, paired with a forward we alter after recording
    let p = common::problem("mul", 3);
    let honest = common::check(&p, 0);
    let broken = common::Problem {
        inputs: p.inputs.clone(),
        store: p.store.clone(),
        forward: Box::new(|t, _, v| {
            let y = t.mul(v[0], v[1])?;
            let k = t.detach(v[0]);
            let z = t.mul(k, v[0])?;
            t.add(y, z)
        }),
    };
    assert!(honest < TOLERANCE);
    assert!(common::check(&broken, 0) > 1e-2);
}
