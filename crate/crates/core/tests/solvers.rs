//! Temporal self-convergence of every benchmark solver, and mean
//! conservation on the periodic ones.

mod common;

use common::convergence;

#[test]
fn kdv_rk4_is_fourth_order() {
    convergence::kdv_rk4().unwrap();
}

#[test]
fn burgers_etdrk4_is_fourth_order() {
    convergence::burgers_etdrk4().unwrap();
}

#[test]
fn modified_ks_etdrk4_is_fourth_order() {
    convergence::modified_ks_etdrk4().unwrap();
}

#[test]
fn dopri_is_fifth_order_at_fixed_steps() {
    convergence::dopri_fixed_step().unwrap();
}

#[test]
fn rd_error_tracks_tolerance() {
    convergence::rd_tolerance().unwrap();
}

#[test]
fn periodic_solvers_conserve_the_mean() {
    convergence::periodic_mean_conservation().unwrap();
}
