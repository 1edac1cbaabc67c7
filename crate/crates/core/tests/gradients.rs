//! Central finite differences against reverse-mode gradients for every loss
//! component and every network forward, on random instances.

mod common;

use common::gradsuite::{self, Checks, TOL};

fn check(group: fn(&mut Checks)) {
    let mut out = Vec::new();
    group(&mut out);
    for (name, worst) in out {
        assert!(worst < TOL, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn photometric_error_and_ssim() {
    check(gradsuite::photometric_error_and_ssim);
}

#[test]
fn adversarial_and_identity_terms() {
    check(gradsuite::adversarial_and_identity_terms);
}

#[test]
fn semantic_terms() {
    check(gradsuite::semantic_terms);
}

#[test]
fn flow_task_and_smoothness_terms() {
    check(gradsuite::flow_task_and_smoothness_terms);
}

#[test]
fn view_synthesis_and_masked_terms() {
    check(gradsuite::view_synthesis_and_masked_terms);
}

#[test]
fn phase_objectives() {
    check(gradsuite::phase_objectives);
}

#[test]
fn depth_network() {
    check(gradsuite::depth_network);
}

#[test]
fn pose_network() {
    check(gradsuite::pose_network);
}

#[test]
fn translation_networks() {
    check(gradsuite::translation_networks);
}
