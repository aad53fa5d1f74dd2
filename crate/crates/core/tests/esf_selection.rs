mod common;

use common::{basis_for, normal_vec, rng, uniform_coords};
use nalgebra::{DMatrix, DVector};
use reesf::esf::{fit_esf, fit_esf_svc, MAX_VIF};
use reesf::{EigenBasis, SpatialDataset};

fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.clone().svd(true, true).solve(y, 1e-14).unwrap()
}

fn adj_r2(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let rss = (y - x * lstsq(x, y)).norm_squared();
    let mean = y.mean();
    let tss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    1.0 - (rss / (n - x.ncols() as f64)) / (tss / (n - 1.0))
}

/// VIF of column `j` by the auxiliary regression on an intercept and the
/// remaining columns.
fn vif_aux(z: &DMatrix<f64>, j: usize) -> f64 {
    let n = z.nrows();
    let others: Vec<usize> = (0..z.ncols()).filter(|&c| c != j).collect();
    let mut aux = DMatrix::from_element(n, others.len() + 1, 1.0);
    for (p, &c) in others.iter().enumerate() {
        aux.set_column(p + 1, &z.column(c));
    }
    let target = z.column(j).into_owned();
    1.0 / (1.0 - adj_r2_plain(&aux, &target))
}

fn adj_r2_plain(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let rss = (y - x * lstsq(x, y)).norm_squared();
    let mean = y.mean();
    1.0 - rss / y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
}

fn setup(seed: u64, n: usize) -> (DMatrix<f64>, EigenBasis, reesf::Coordinates) {
    let mut r = rng(seed);
    let coords = uniform_coords(&mut r, n);
    let basis = basis_for(&coords, 12);
    let x1 = normal_vec(&mut rng(seed + 1), n);
    let cov = DMatrix::from_column_slice(n, 1, x1.as_slice());
    (cov, basis, coords)
}

#[test]
fn exact_linear_response_selects_nothing() {
    let (cov, basis, coords) = setup(1, 60);
    let y = cov.column(0) * 1.5 + DVector::from_element(60, -0.5);
    let data = SpatialDataset::new(coords, y, cov, vec!["x1".into()]).unwrap();
    let fit = fit_esf(&data, &basis).unwrap();
    assert!(fit.selected.is_empty());
    assert!((fit.beta[0] + 0.5).abs() < 1e-8 && (fit.beta[1] - 1.5).abs() < 1e-8);

    let svc = fit_esf_svc(&data, &basis).unwrap();
    assert!(svc.selected.is_empty());
    for i in 0..60 {
        assert!((svc.svc[(i, 0)] + 0.5).abs() < 1e-6 && (svc.svc[(i, 1)] - 1.5).abs() < 1e-6);
    }
}

#[test]
fn dominant_eigenvector_is_selected_first() {
    let n = 60;
    let (cov, basis, coords) = setup(2, n);
    let mut r = rng(3);
    let y = cov.column(0) * 0.7 + basis.vectors().column(0) * 3.0 + normal_vec(&mut r, n) * 1e-3;
    let data = SpatialDataset::new(coords, y.clone(), cov, vec!["x1".into()]).unwrap();
    let fit = fit_esf(&data, &basis).unwrap();

    // Exhaustive single-step search.
    let best = (0..basis.n_vectors())
        .map(|l| {
            let mut x = data.x.clone().insert_column(2, 0.0);
            x.set_column(2, &basis.vectors().column(l));
            (l, adj_r2(&x, &y))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(best.0, 0);
    assert_eq!(fit.selected[0], best.0);
    assert!((fit.path[1] - best.1).abs() < 1e-10);
}

#[test]
fn collinear_eigenvector_is_skipped() {
    let n = 80;
    let (_, basis, coords) = setup(4, n);
    let mut r = rng(5);
    let e3 = basis.vectors().column(3).into_owned();
    let x1 = &e3 + normal_vec(&mut r, n) * 0.01;
    let y = &x1 + &e3 * 5.0 + basis.vectors().column(1) * 2.0 + normal_vec(&mut r, n) * 0.05;
    let cov = DMatrix::from_column_slice(n, 1, x1.as_slice());
    let data = SpatialDataset::new(coords, y, cov, vec!["x1".into()]).unwrap();
    let fit = fit_esf(&data, &basis).unwrap();
    assert!(!fit.selected.contains(&3));
    assert!(fit.selected.contains(&1));
}

#[test]
fn selection_invariants_hold() {
    for seed in [10, 11, 12] {
        let n = 70;
        let (cov, basis, coords) = setup(seed, n);
        let mut r = rng(seed + 100);
        let slope = (basis.vectors() * normal_vec(&mut r, basis.n_vectors())).add_scalar(1.0);
        let y = cov.column(0).component_mul(&slope)
            + basis.vectors() * normal_vec(&mut r, basis.n_vectors())
            + normal_vec(&mut r, n) * 0.3;
        let data = SpatialDataset::new(coords, y.clone(), cov, vec!["x1".into()]).unwrap();
        let fit = fit_esf_svc(&data, &basis).unwrap();
        assert!(!fit.selected.is_empty());
        assert!(fit.path.windows(2).all(|w| w[1] >= w[0]));

        // Frozen-set refit.
        let k = data.n_coefs();
        let mut design = DMatrix::zeros(n, k + fit.selected.len());
        design.columns_mut(0, k).copy_from(&data.x);
        for (s, &(c, l)) in fit.selected.iter().enumerate() {
            design.set_column(k + s, &data.x.column(c).component_mul(&basis.vectors().column(l)));
        }
        let coef = lstsq(&design, &y);
        for c in 0..k {
            assert!((coef[c] - fit.beta[c]).abs() < 1e-10);
        }
        for (s, &(c, l)) in fit.selected.iter().enumerate() {
            assert!((coef[k + s] - fit.gamma[(l, c)]).abs() < 1e-10);
        }
        assert!((adj_r2(&design, &y) - fit.adjusted_r2).abs() < 1e-10);

        // svc assembly
        for c in 0..k {
            let expected = (basis.vectors() * fit.gamma.column(c)).add_scalar(fit.beta[c]);
            assert!((expected - fit.svc.column(c)).amax() < 1e-10);
        }

        // VIFs of selected terms, by auxiliary regressions.
        let z = design.columns(1, design.ncols() - 1).into_owned();
        for j in (k - 1)..z.ncols() {
            assert!(vif_aux(&z, j) <= MAX_VIF * (1.0 + 1e-9));
        }
    }
}

#[test]
fn intercept_only_svc_tracks_eigenvector() {
    let n = 60;
    let (_, basis, coords) = setup(20, n);
    let mut r = rng(21);
    let e2 = basis.vectors().column(2).into_owned();
    let y = e2.add_scalar(1.0) + normal_vec(&mut r, n) * 1e-3;
    let data = SpatialDataset::new(coords, y, DMatrix::zeros(n, 0), vec![]).unwrap();
    let fit = fit_esf_svc(&data, &basis).unwrap();
    let truth = e2.add_scalar(1.0);
    assert!((fit.svc.column(0) - truth).amax() < 0.01);
    assert_eq!(fit.selected[0], (0, 2));
}

#[test]
fn collinear_interaction_is_skipped() {
    let n = 80;
    let (_, basis, coords) = setup(30, n);
    let mut r = rng(31);
    // x1 is nearly constant, so x1 o e_2 nearly duplicates e_2.
    let x1 = normal_vec(&mut r, n).map(|v| 1.0 + 0.01 * v);
    let e2 = basis.vectors().column(2).into_owned();
    let y = &x1 + &e2 * 3.0 + normal_vec(&mut r, n) * 0.05;
    let cov = DMatrix::from_column_slice(n, 1, x1.as_slice());
    let data = SpatialDataset::new(coords, y, cov, vec!["x1".into()]).unwrap();
    let fit = fit_esf_svc(&data, &basis).unwrap();
    let has_intercept_term = fit.selected.contains(&(0, 2));
    let has_interaction = fit.selected.contains(&(1, 2));
    assert!(has_intercept_term ^ has_interaction);
}
