mod common;

use common::{gradient_error, Family, ALL_FAMILIES};
use unlearn_core::reweight::CriterionKind;

const INSTANCES: u64 = 20;
const TOLERANCE: f64 = 1e-4;

fn check(family: Family) {
    for seed in 0..INSTANCES {
        let err = gradient_error(family, seed);
        assert!(err < TOLERANCE, "{family:?} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn ga_gradient() {
    check(Family::Ga);
}

#[test]
fn importance_gradient() {
    check(Family::Reweighted(CriterionKind::Importance));
}

#[test]
fn saturation_gradient() {
    check(Family::Reweighted(CriterionKind::Saturation));
}

#[test]
fn wga_gradient() {
    check(Family::Reweighted(CriterionKind::Wga));
}

#[test]
fn simsat_gradient() {
    check(Family::Reweighted(CriterionKind::SimSat));
}

#[test]
fn simimp_gradient() {
    check(Family::Reweighted(CriterionKind::SimImp));
}

#[test]
fn satimp_gradient() {
    check(Family::Reweighted(CriterionKind::SatImp));
}

#[test]
fn po_gradient() {
    check(Family::Po);
}

#[test]
fn dpo_gradient() {
    check(Family::Dpo);
}

#[test]
fn npo_gradient() {
    check(Family::Npo);
}

#[test]
fn simnpo_gradient() {
    check(Family::SimNpo);
}

#[test]
fn rmu_gradient() {
    check(Family::Rmu);
}

#[test]
fn gd_gradient() {
    check(Family::Gd);
}

#[test]
fn family_list_is_complete() {
    assert_eq!(ALL_FAMILIES.len(), 13);
}
