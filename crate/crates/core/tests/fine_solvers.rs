use std::f64::consts::PI;

use curlhom::fine::{
    direct_solve, laminate_direct_solve, oscillation_decay, poincare_check, random_band_limited, remainder_report, shift_ensemble,
    uniform_shifts, LaminateOptions, Stratified,
};
use curlhom::homogenised::{MacroField, TorusProblem};
use curlhom::laminate::LaminateProfile;
use curlhom::spectral::CoefField;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn c(v: f64) -> C64 {
    C64::new(v, 0.0)
}

fn source() -> MacroField {
    MacroField::curl_of(1.0, &[([1, 1, 2], [c(0.3), c(-0.2), c(0.5)]), ([0, 1, 0], [c(0.4), c(0.0), c(-0.1)])]).unwrap()
}

#[test]
fn homogeneous_grid_solve_is_single_mode_inversion() {
    let p = TorusProblem::new(1.0, 0.5, source()).unwrap();
    let s = direct_solve(&p, &CoefField::Scalar(vec![3.0; 512]), 8, 1e-12).unwrap();
    let g = &s.grid;
    for idx in [0usize, 77, 1000, 3001] {
        let x = g.coords(idx).map(|i| i as f64 / 16.0);
        let f = p.source.eval(x);
        let mut expect = [0.0; 3];
        for (k, a) in &p.source.modes {
            let q = p.source.q(*k);
            let q2: f64 = q.iter().map(|v| v * v).sum();
            let ph = C64::from_polar(1.0, q[0] * x[0] + q[1] * x[1] + q[2] * x[2]);
            for i in 0..3 {
                expect[i] += 2.0 * (a[i] * ph).re / (3.0 * q2);
            }
        }
        for i in 0..3 {
            assert!((s.u[i][idx] - expect[i]).abs() < 1e-12, "{} {}", s.u[i][idx], expect[i]);
        }
        let _ = f;
    }
}

#[test]
fn zero_source_has_zero_grid_solution() {
    let p = TorusProblem::new(1.0, 0.5, MacroField::zero(1.0)).unwrap();
    let s = direct_solve(&p, &CoefField::Scalar(vec![1.0; 512]), 8, 1e-10).unwrap();
    assert!(s.u.iter().all(|c| c.iter().all(|v| *v == 0.0)));
}

#[test]
fn laminate_grid_solve_energy_identity() {
    let prof = LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap();
    let p = TorusProblem::new(1.0, 0.25, source()).unwrap();
    let s = direct_solve(&p, &Stratified::Layers(prof).sample(8).unwrap(), 8, 1e-12).unwrap();
    assert!(s.residual() < 1e-8, "{}", s.residual());
}

#[test]
fn grid_and_element_solvers_agree_on_smooth_stratified_medium() {
    let m = Stratified::Sinusoid { mean: 1.5, amplitude: 0.3 };
    let p = TorusProblem::new(1.0, 0.25, source()).unwrap();
    let grid = direct_solve(&p, &m.sample(16).unwrap(), 16, 1e-13).unwrap();
    let sem = laminate_direct_solve(&p, &m, 0.0, &LaminateOptions { degree: 12, subdivisions: 2 }).unwrap();
    let g = &grid.grid;
    let (mut d2, mut n2) = (0.0, 0.0);
    for idx in 0..g.len() {
        let x = g.coords(idx).map(|i| i as f64 / 64.0);
        let v = sem.eval(x);
        for i in 0..3 {
            d2 += (grid.u[i][idx] - v[i]).powi(2);
            n2 += v[i] * v[i];
        }
    }
    let rel = (d2 / n2).sqrt();
    assert!(rel < 1e-6, "relative L2 difference {rel}");
    assert!((grid.energy - sem.energy).abs() < 1e-6 * sem.energy.abs());
}

#[test]
fn laminate_energy_identity_and_divergence() {
    let prof = LaminateProfile::from_widths(&[1.0, 3.0, 2.0], &[0.2, 0.5, 0.3]).unwrap();
    let p = TorusProblem::new(1.0, 0.25, source()).unwrap();
    let s = laminate_direct_solve(&p, &Stratified::Layers(prof), 0.3, &LaminateOptions::default()).unwrap();
    assert!(s.residual() < 1e-8);
    assert!(s.max_divergence() < 1e-8 * s.l2_norm());
}

#[test]
fn homogeneous_shift_ensemble_is_shift_independent() {
    let prof = LaminateProfile::two_layer(1.5, 1.5, 0.4).unwrap();
    let p = TorusProblem::new(1.0, 0.25, source()).unwrap();
    let ens = shift_ensemble(&p, &Stratified::Layers(prof), &uniform_shifts(4), &LaminateOptions::default()).unwrap();
    let first = ens.solutions[0].macro_band(&p.source).unwrap();
    assert!(ens.average.axpy(-1.0, &first).unwrap().l2_norm() < 1e-12);
    assert!((ens.norm_ratio() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_shift_ensemble_equals_direct_solve() {
    let prof = LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap();
    let p = TorusProblem::new(1.0, 0.125, source()).unwrap();
    let m = Stratified::Layers(prof);
    let ens = shift_ensemble(&p, &m, &[0.0], &LaminateOptions::default()).unwrap();
    let d = laminate_direct_solve(&p, &m, 0.0, &LaminateOptions::default()).unwrap();
    assert!(ens.average.axpy(-1.0, &d.macro_band(&p.source).unwrap()).unwrap().l2_norm() == 0.0);
}

#[test]
fn shifted_norms_stay_bounded() {
    let prof = LaminateProfile::two_layer(1.0, 5.0, 0.3).unwrap();
    let p = TorusProblem::new(1.0, 0.25, source()).unwrap();
    let ens = shift_ensemble(&p, &Stratified::Layers(prof), &uniform_shifts(8), &LaminateOptions::default()).unwrap();
    assert!(ens.norm_ratio() < 10.0);
}

#[test]
fn homogeneous_remainders_vanish() {
    let prof = LaminateProfile::two_layer(2.0, 2.0, 0.5).unwrap();
    let p = TorusProblem::new(1.0, 0.25, source()).unwrap();
    let r = remainder_report(&p, &prof, &[1, 2], &[0.25, 0.125, 0.0625], &LaminateOptions::default()).unwrap();
    // solution norm is O(1e-2); everything left is round-off
    for row in &r.rows {
        assert!(row.curl < 1e-11 && row.div_hminus1 < 1e-12 && row.l2 < 1e-12 && row.mean < 1e-15, "{row:?}");
    }
}

#[test]
fn remainder_report_rejects_bad_eps_lists() {
    let prof = LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap();
    let p = TorusProblem::new(1.0, 0.25, source()).unwrap();
    let o = LaminateOptions::default();
    assert!(matches!(remainder_report(&p, &prof, &[2], &[0.25, 0.125], &o), Err(curlhom::Error::TooFewSamples(2))));
    assert!(remainder_report(&p, &prof, &[2], &[0.125, 0.25, 0.0625], &o).is_err());
    assert!(remainder_report(&p, &prof, &[2], &[0.25, 0.3, 0.1], &o).is_err());
}

#[test]
fn oscillatory_integral_of_constant_is_zero() {
    let cell = |y: [f64; 3]| (2.0 * PI * y[0]).cos() * (2.0 * PI * y[2]).sin();
    let rows = oscillation_decay(&cell, &|_| 1.0, 1.0, &[0.5, 0.25], 16).unwrap();
    assert!(rows.iter().all(|r| r.integral < 1e-15));
}

#[test]
fn poincare_zero_field_and_lowest_mode() {
    let z = poincare_check(&[MacroField::zero(1.0)]);
    assert!(z.all_hold && z.rows[0].l2 == 0.0);
    // lowest divergence-free mode on the side-2 torus: ratio 1 / (|k|^2 |T|)
    let t = 2.0;
    let f = MacroField::new(t, vec![([1, 0, 0], [c(0.0), c(1.0), c(0.0)])]).unwrap();
    let r = poincare_check(&[f]);
    let k2 = (2.0 * PI / t).powi(2);
    assert!((r.rows[0].ratio - 1.0 / (k2 * t.powi(3))).abs() < 1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fields: Vec<MacroField> = (0..5).map(|_| random_band_limited(1.0, 3, 6, &mut rng).unwrap()).collect();
    assert!(poincare_check(&fields).all_hold);
}
