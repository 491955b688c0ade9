use krom_core::edmd::{convergence_scan, fit, FitOptions, SnapshotSet};
use krom_core::krom::{make_bilinear, RangePolicy};
use krom_core::plants::{collect, LinearPlant, Plant};
use krom_core::Dictionary;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plant() -> LinearPlant {
    let a = DMatrix::from_row_slice(2, 2, &[-0.3, 0.8, -0.8, -0.2]);
    let b = DVector::from_vec(vec![0.5, 1.0]);
    LinearPlant::new(a, b, 0.1, 4).unwrap()
}

fn pairs(p: &LinearPlant, u: f64, m: usize, seed: u64) -> SnapshotSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::zeros(2, m);
    let mut zn = DMatrix::zeros(2, m);
    for c in 0..m {
        let s = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let next = p.step(&s, u).unwrap();
        z.set_column(c, &DVector::from_column_slice(&s));
        zn.set_column(c, &DVector::from_column_slice(&next));
    }
    SnapshotSet::new(z, zn, u, p.h()).unwrap()
}

#[test]
fn interpolated_midpoint_equals_direct_fit() {
    let p = plant();
    let dict = Dictionary::new(2, 1).unwrap();
    let opts = FitOptions::default();
    let ma = fit(&dict, &pairs(&p, -1.0, 20, 1), opts).unwrap();
    let mb = fit(&dict, &pairs(&p, 1.0, 20, 2), opts).unwrap();
    let mid = fit(&dict, &pairs(&p, 0.0, 20, 3), opts).unwrap();
    let m = make_bilinear(&ma, &mb).unwrap();
    let interpolated = m.transition_at(0.0).unwrap();
    assert!((interpolated - mid.transition()).amax() < 1e-8);
}

#[test]
fn bilinear_step_is_affine_in_control() {
    let p = plant();
    let dict = Dictionary::new(2, 1).unwrap();
    let ma = fit(&dict, &pairs(&p, -1.0, 20, 4), FitOptions::default()).unwrap();
    let mb = fit(&dict, &pairs(&p, 1.0, 20, 5), FitOptions::default()).unwrap();
    let m = make_bilinear(&ma, &mb).unwrap();
    let psi = dict.lift(&[0.7, -1.1]).unwrap();
    let s = |u| m.step_lifted(&psi, u).unwrap();
    let (x0, x1, x2) = (s(-0.6), s(0.1), s(0.45));
    let slope = (&x1 - &x0) / 0.7;
    assert!((&x2 - (&x1 + slope * 0.35)).amax() < 1e-12);
    assert!(m.step_lifted(&psi, 1.5).is_err());
    assert_eq!(m.step_lifted_with(&psi, 1.5, RangePolicy::Clamp).unwrap(), s(1.0));
}

#[test]
fn linear_dictionary_reproduces_matrix_powers() {
    let p = plant();
    let dict = Dictionary::new(2, 1).unwrap();
    let model = fit(&dict, &pairs(&p, 0.0, 30, 6), FitOptions::default()).unwrap();
    // one exact step of the plant at u = 0 is a fixed matrix; recover it column by column
    let phi = DMatrix::from_columns(&[
        DVector::from_vec(p.step(&[1.0, 0.0], 0.0).unwrap()),
        DVector::from_vec(p.step(&[0.0, 1.0], 0.0).unwrap()),
    ]);
    let traj = model.predict_observable(&[1.5, -0.5], 40).unwrap();
    let mut z = DVector::from_vec(vec![1.5, -0.5]);
    for i in 1..=40 {
        z = &phi * z;
        assert!((traj.column(i) - &z).amax() < 1e-10, "step {i}");
    }
}

#[test]
fn held_out_one_step_error_vanishes_on_closure() {
    let p = plant();
    let dict = Dictionary::new(2, 1).unwrap();
    let model = fit(&dict, &pairs(&p, 0.4, 15, 7), FitOptions::default()).unwrap();
    assert!(model.one_step_error(&pairs(&p, 0.4, 15, 8)).unwrap() <= 1e-8);
    let rows = convergence_scan(&pairs(&p, 0.4, 40, 9), &pairs(&p, 0.4, 10, 10), &[1, 2], &[3, 10, 40], FitOptions::default()).unwrap();
    assert!(rows.iter().filter(|r| r.m >= r.k).all(|r| r.test_error < 1e-8), "{rows:?}");
}

#[test]
fn fit_ignores_column_order() {
    let p = plant();
    let dict = Dictionary::new(2, 2).unwrap();
    let data = pairs(&p, 0.2, 25, 11);
    let perm: Vec<usize> = (0..25).map(|i| (i * 7) % 25).collect();
    let shuffled = SnapshotSet::new(
        data.z().select_columns(&perm),
        data.z_next().select_columns(&perm),
        0.2,
        p.h(),
    )
    .unwrap();
    let a = fit(&dict, &data, FitOptions::default()).unwrap();
    let b = fit(&dict, &shuffled, FitOptions::default()).unwrap();
    assert!((a.transition() - b.transition()).amax() < 1e-10);
}

#[test]
fn one_step_prediction_is_projected_fit() {
    let p = plant();
    let dict = Dictionary::new(2, 2).unwrap();
    let model = fit(&dict, &pairs(&p, 0.2, 25, 12), FitOptions::default()).unwrap();
    let z0 = [0.3, -0.9];
    let direct = dict.project(&(model.transition() * dict.lift(&z0).unwrap())).unwrap();
    assert_eq!(model.predict_observable(&z0, 1).unwrap().column(1), direct.column(0));
}

#[test]
fn collected_data_fits_within_residual() {
    let p = plant();
    let controls = vec![0.5; 30];
    let archive = collect(&p, &[(vec![1.0, -1.0], controls.clone()), (vec![-0.5, 2.0], controls)]).unwrap();
    let sets = archive.to_snapshots().unwrap();
    assert_eq!(sets.len(), 1);
    let dict = Dictionary::new(2, 1).unwrap();
    let model = fit(&dict, &sets[0], FitOptions::default()).unwrap();
    assert_eq!(sets[0].len(), 60);
    assert!((model.lifted_residual(&sets[0]).unwrap() - model.fit_residual()).abs() < 1e-12);
    assert!(model.fit_residual() < 1e-10);
}
