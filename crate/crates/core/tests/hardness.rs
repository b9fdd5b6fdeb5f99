//! Certificate and exact-check sweeps over the hard instance.

use num_rational::BigRational;
use num_traits::{One, Zero};
use tempering_lab::hardness::{
    certificate, min_divergence_f, rational_to_f64, verify_bottleneck_bound,
    verify_mode_mass_bounds, HardInstance,
};
use tempering_lab::paths::k_star;
use tempering_lab::spectral::{cheeger_ratio, SpectralOptions};
use tempering_lab::DEFAULT_STATE_BUDGET;

#[test]
fn certificate_holds_for_every_small_l() {
    for top in 1..=6 {
        let inst = HardInstance::build(top).unwrap();
        let r = certificate(
            &inst,
            DEFAULT_STATE_BUDGET,
            true,
            &SpectralOptions::default(),
        )
        .unwrap();
        let gap = r.measured_gap.unwrap();
        assert!(
            gap <= r.cheeger_2phi_s + 1e-8,
            "L = {top}: {gap} vs {}",
            r.cheeger_2phi_s
        );
        assert!((r.cheeger_2phi_s - r.cheeger_2phi_s_float).abs() < 1e-10);
        assert!(
            r.lemmas.iter().all(|l| l.holds),
            "L = {top}: {:?}",
            r.lemmas
        );
        assert!(r.holds);
    }
}

#[test]
fn cheeger_of_s_matches_kernel() {
    let inst = HardInstance::build(3).unwrap();
    let chain =
        tempering_lab::hardness::constrained_projected_chain(&inst, DEFAULT_STATE_BUDGET).unwrap();
    let lambda = chain.index_of(&[0, 1, 2, 3]).unwrap();
    let r = certificate(
        &inst,
        DEFAULT_STATE_BUDGET,
        false,
        &SpectralOptions::default(),
    )
    .unwrap();
    let direct = 2.0 * cheeger_ratio(&chain.kernel, &[lambda]).unwrap();
    assert!((direct - r.cheeger_2phi_s).abs() < 1e-12);
    assert!(r.measured_gap.is_none());
}

#[test]
fn bound_rhs_closed_form_at_l3() {
    let r = certificate(
        &HardInstance::build(3).unwrap(),
        DEFAULT_STATE_BUDGET,
        false,
        &SpectralOptions::default(),
    )
    .unwrap();
    let e2 = std::f64::consts::E.powi(2);
    let want = 32.0 * e2 * 4f64.powi(7);
    assert!((r.bound_rhs - want).abs() <= 1e-12 * want);
}

#[test]
fn l1_weights_and_exact_rows() {
    let inst = HardInstance::build(1).unwrap();
    assert_eq!(inst.gamma().to_string(), "8");
    for row in inst.mode_masses() {
        let s = row.iter().fold(BigRational::zero(), |a, b| a + b);
        assert!(s == BigRational::one());
    }
    let r = verify_mode_mass_bounds(&inst);
    assert!(r.holds);
    assert!(r
        .cells
        .iter()
        .filter(|c| c.upper.is_some())
        .all(|c| c.mass > c.lower && c.mass < c.upper.unwrap()));
}

#[test]
fn exact_checks_for_l_up_to_12() {
    for top in 1..=12 {
        let inst = HardInstance::build(top).unwrap();
        assert!(verify_mode_mass_bounds(&inst).holds, "masses L = {top}");
        assert!(verify_bottleneck_bound(&inst).holds, "B L = {top}");
        // The dominant mode at the top level is the last one.
        let f = inst.to_family().unwrap();
        assert_eq!(k_star(&f), top);
        assert!(rational_to_f64(inst.mode_mass(top, top)) > 1.0 - 1.0 / (top + 1) as f64);
    }
    let r7 = verify_mode_mass_bounds(&HardInstance::build(7).unwrap());
    assert!(r7.min_margin > 0.0);
}

#[test]
fn f_oracle_monotone_with_padding() {
    let mut prev = 0;
    for top in 1..=6 {
        let f0 = min_divergence_f(top, 0, DEFAULT_STATE_BUDGET).unwrap().f;
        let f1 = min_divergence_f(top, 1, DEFAULT_STATE_BUDGET).unwrap().f;
        assert_eq!(f0, f1, "padding changed f({top})");
        assert!(f0 >= prev);
        assert!(f0 >= top.ilog2() as usize);
        prev = f0;
    }
    assert!(min_divergence_f(0, 0, DEFAULT_STATE_BUDGET).is_err());
}
