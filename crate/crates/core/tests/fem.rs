mod common;

use noisedesign::fem::*;
use proptest::prelude::*;

fn laminate(h: &Homogenization, e_of_row: impl Fn(usize) -> f64) -> Vec<f64> {
    let (nx, ny) = (h.mesh.nx, h.mesh.ny);
    (0..nx * ny).map(|e| e_of_row(e / nx)).collect()
}

#[test]
fn grid_counts() {
    let m = Mesh::grid(1, 1, false).unwrap();
    assert_eq!((m.n_nodes(), m.n_elems()), (4, 1));
    assert_eq!(Mesh::grid(2, 2, true).unwrap().n_masters(), 4);
    let m = Mesh::grid(32, 32, false).unwrap();
    assert_eq!((m.n_nodes(), m.n_elems()), (1089, 1024));
}

#[test]
fn layered_cell_matches_laminate_formulas() {
    let nu = 0.3;
    let h = Homogenization::new(8, 8, nu, PlaneModel::Stress).unwrap();
    let theta = laminate(&h, |row| if row % 2 == 0 { 1.0 } else { 100.0 });
    let c = h.homogenize(&theta).unwrap().c_hom;
    // layers are normal to y: ε11, σ22 and σ12 are continuous across them
    let phases = [elastic_matrix(1.0, nu, PlaneModel::Stress), elastic_matrix(100.0, nu, PlaneModel::Stress)];
    let mean = |f: &dyn Fn(&[[f64; 3]; 3]) -> f64| phases.iter().map(|p| f(p)).sum::<f64>() / 2.0;
    let inv_c = mean(&|p| 1.0 / p[1][1]);
    let b_c = mean(&|p| p[0][1] / p[1][1]);
    let c22 = 1.0 / inv_c;
    let c12 = b_c / inv_c;
    let c11 = mean(&|p| p[0][0] - p[0][1] * p[0][1] / p[1][1]) + b_c * b_c / inv_c;
    let c33 = 1.0 / mean(&|p| 1.0 / p[2][2]);
    for (got, want) in [(c[0][0], c11), (c[1][1], c22), (c[0][1], c12), (c[1][0], c12), (c[2][2], c33)] {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    assert!(c[0][2].abs() < 1e-8 && c[1][2].abs() < 1e-8);
}

#[test]
fn checkerboard_is_orthotropic_and_symmetric() {
    let h = Homogenization::new(8, 8, 0.3, PlaneModel::Stress).unwrap();
    let theta: Vec<f64> = (0..64).map(|e| if ((e % 8) / 2 + (e / 8) / 2) % 2 == 0 { 100.0 } else { 1.0 }).collect();
    let c = h.homogenize(&theta).unwrap().c_hom;
    assert!(c[0][2].abs() < 1e-8 && c[1][2].abs() < 1e-8, "{c:?}");
    for i in 0..3 {
        for j in 0..3 {
            assert!((c[i][j] - c[j][i]).abs() < 1e-8);
        }
    }
}

#[test]
fn fluctuations_are_periodic() {
    let h = Homogenization::new(6, 6, 0.3, PlaneModel::Stress).unwrap();
    let theta = common::uniform(36, 1.0, 100.0, 4);
    let r = h.homogenize(&theta).unwrap();
    let m = &h.mesh;
    for u in &r.fluctuations {
        for k in 0..=6 {
            for d in 0..2 {
                assert_eq!(u[2 * m.node(k, 0) + d], u[2 * m.node(k, 6) + d]);
                assert_eq!(u[2 * m.node(0, k) + d], u[2 * m.node(6, k) + d]);
            }
        }
    }
}

/// All principal minors of a symmetric 3×3 matrix are ≥ −tol.
fn is_psd(a: &[[f64; 3]; 3], tol: f64) -> bool {
    let d2 = |i: usize, j: usize| a[i][i] * a[j][j] - a[i][j] * a[j][i];
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    (0..3).all(|i| a[i][i] >= -tol) && d2(0, 1) >= -tol && d2(0, 2) >= -tol && d2(1, 2) >= -tol && det >= -tol
}

fn diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut d = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = a[i][j] - b[i][j];
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn c_hom_is_bounded_by_phases(seed in 0u64..1000) {
        let h = Homogenization::new(4, 4, 0.3, PlaneModel::Stress).unwrap();
        let theta = common::uniform(16, 1.0, 100.0, seed);
        let c = h.homogenize(&theta).unwrap().c_hom;
        let soft = elastic_matrix(1.0, 0.3, PlaneModel::Stress);
        let stiff = elastic_matrix(100.0, 0.3, PlaneModel::Stress);
        prop_assert!(is_psd(&diff(&c, &soft), 1e-8));
        prop_assert!(is_psd(&diff(&stiff, &c), 1e-8));
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((c[i][j] - c[j][i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn plastic_points_stay_inside_yield_surface(seed in 0u64..1000) {
        let p = Plasticity::new(3, 3, PlasticOptions::default()).unwrap();
        let x = common::uniform(9, 0.0, 1.0, seed);
        let theta: Vec<f64> = x.iter().map(|t| 1e3 + (1e5 - 1e3) * t).chain(x.iter().map(|t| 30.0 + 270.0 * t)).collect();
        let h = p.incremental_solve(&theta, &Plasticity::load_schedule(5e-4, 1e-2, 8)).unwrap();
        prop_assert!(p.max_yield_excess(&theta, &h) <= 1e-9);
    }
}

#[test]
fn single_element_uniaxial_response_is_bilinear() {
    let p = Plasticity::new(1, 1, PlasticOptions::default()).unwrap();
    let (e, s0) = (1e5, 300.0);
    let loads = Plasticity::load_schedule(5e-4, 1e-2, 20);
    let h = p.incremental_solve(&[e, s0], &loads).unwrap();
    for (s, l) in h.sbar.iter().zip(&loads) {
        let want = (e * l).min(s0);
        assert!((s - want).abs() < 1e-8, "load {l}: {s} vs {want}");
    }
    assert!(p.max_yield_excess(&[e, s0], &h) <= 1e-9);
}

#[test]
fn plastic_history_is_reproducible() {
    let p = Plasticity::new(3, 3, PlasticOptions::default()).unwrap();
    let theta = [common::uniform(9, 1e3, 1e5, 1), common::uniform(9, 30.0, 300.0, 2)].concat();
    let loads = Plasticity::load_schedule(5e-4, 1e-2, 6);
    let a = p.incremental_solve(&theta, &loads).unwrap();
    let b = p.incremental_solve(&theta, &loads).unwrap();
    assert_eq!(a.sbar, b.sbar);
    assert_eq!(a.u, b.u);
}

#[test]
fn elastic_tangent_option_reaches_the_same_path() {
    let mut opts = PlasticOptions::default();
    let p = Plasticity::new(2, 2, opts).unwrap();
    let theta = [vec![1e5; 4], vec![300.0; 4]].concat();
    let loads = Plasticity::load_schedule(1e-3, 6e-3, 4);
    let a = p.incremental_solve(&theta, &loads).unwrap();
    opts.tangent = PlasticTangent::Elastic;
    opts.max_iter = 500;
    let b = Plasticity::new(2, 2, opts).unwrap().incremental_solve(&theta, &loads).unwrap();
    for (x, y) in a.sbar.iter().zip(&b.sbar) {
        assert!((x - y).abs() < 1e-6 * x.abs());
    }
}

#[test]
fn stiff_block_plateaus_at_yield() {
    let p = Plasticity::new(4, 4, PlasticOptions::default()).unwrap();
    let theta = [vec![1e5; 16], vec![300.0; 16]].concat();
    let h = p.incremental_solve(&theta, &Plasticity::load_schedule(5e-4, 1e-2, 20)).unwrap();
    assert!(h.sbar.iter().all(|&s| s <= 300.0 + 1e-8));
    assert!((h.sbar.last().unwrap() - 300.0).abs() < 1e-6);
}

#[test]
fn plastic_tangent_matches_residual_differences() {
    let p = Plasticity::new(2, 2, PlasticOptions::default()).unwrap();
    let theta = [vec![1e5; 4], vec![300.0; 4]].concat();
    let h = p.incremental_solve(&theta, &[2e-3, 5e-3]).unwrap();
    let prev = (&h.eps[0][..], &h.sig[0][..]);
    let mut u = h.u[1].clone();
    // perturb off equilibrium so both branches are exercised
    u.iter_mut().enumerate().for_each(|(i, v)| *v += 1e-5 * ((i % 5) as f64 - 2.0));
    for &d in p.mesh.top_nodes().iter().map(|n| 2 * n + 1).collect::<Vec<_>>().iter() {
        u[d] = 5e-3;
    }
    let (_, k) = p.assemble(&theta, &u, prev, true).unwrap();
    let k = k.unwrap().to_dense();
    let r0 = p.assemble(&theta, &u, prev, false).unwrap().0;
    let h_ = 1e-9;
    let mut j = 0;
    for d in 0..u.len() {
        let mut up = u.clone();
        up[d] += h_;
        let mut um = u.clone();
        um[d] -= h_;
        let rp = p.assemble(&theta, &up, prev, false).unwrap().0;
        let rm = p.assemble(&theta, &um, prev, false).unwrap().0;
        if !p_dof_free(&p, d) {
            continue;
        }
        for i in 0..r0.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * h_);
            let scale = k.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((fd - k[i][j]).abs() < 1e-6 * scale, "K[{i}][{j}] {} vs {fd}", k[i][j]);
        }
        j += 1;
    }
    assert_eq!(j, r0.len());
}

fn p_dof_free(p: &Plasticity, d: usize) -> bool {
    let nx = p.mesh.nx;
    let node = d / 2;
    let (i, j) = (node % (nx + 1), node / (nx + 1));
    let top = j == p.mesh.ny;
    let bottom = j == 0;
    if d % 2 == 1 {
        !(top || bottom)
    } else {
        !(i == 0 && j == 0)
    }
}

#[test]
fn stretched_block_deforms_homogeneously() {
    let s = Hyperelastic::new(3, 3, 0.3, StretchBc::Roller).unwrap();
    let path = s.solve_path(&vec![100.0; 9], &[0.1]).unwrap();
    let u = &path.u[0];
    // with roller supports the exact solution is affine: u = (a x, 0.1 y)
    let a = u[2 * s.mesh.node(3, 0)] / 1.0;
    for (n, c) in s.mesh.coords.iter().enumerate() {
        assert!((u[2 * n] - a * c[0]).abs() < 1e-8);
        assert!((u[2 * n + 1] - 0.1 * c[1]).abs() < 1e-8);
    }
}

#[test]
fn stiff_block_energy_follows_reference_curve() {
    let s = Hyperelastic::new(16, 16, 0.3, StretchBc::FixedBase).unwrap();
    let loads = [0.1, 0.2, 0.3, 0.4, 0.5];
    let path = s.solve_path(&vec![100.0; 256], &loads).unwrap();
    let p1 = |x: f64| -19.880 * x * x * x + 51.245 * x * x + 0.472 * x;
    for (w, &x) in path.energy.iter().zip(&loads) {
        assert!((w - p1(x)).abs() <= 0.02 * p1(0.5), "{x}: {w} vs {}", p1(x));
    }
    assert!((path.energy[4] / p1(0.5) - 1.0).abs() < 0.02);
}

#[test]
fn hyperelastic_tangent_matches_residual_differences() {
    let s = Hyperelastic::new(2, 2, 0.3, StretchBc::FixedBase).unwrap();
    let theta = vec![10.0, 50.0, 1.0, 100.0];
    let mut u = s.boundary_state(0.2);
    for (i, v) in u.iter_mut().enumerate() {
        *v += 0.01 * ((i * 7 % 5) as f64 - 2.0);
    }
    let u = {
        let mut b = s.boundary_state(0.2);
        for (i, v) in b.iter_mut().enumerate() {
            if s.mesh.coords[i / 2][1] > 0.0 && s.mesh.coords[i / 2][1] < 1.0 {
                *v = u[i];
            }
        }
        b
    };
    let (r0, k) = s.assemble(&theta, &u, true).unwrap();
    let k = k.unwrap().to_dense();
    let scale = k.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let free: Vec<usize> = (0..u.len()).filter(|&d| {
        let y = s.mesh.coords[d / 2][1];
        y > 0.0 && (y < 1.0 || d % 2 == 0)
    }).collect();
    assert_eq!(free.len(), r0.len());
    for (j, &d) in free.iter().enumerate() {
        let h = 1e-7;
        let mut up = u.clone();
        up[d] += h;
        let mut um = u.clone();
        um[d] -= h;
        let rp = s.assemble(&theta, &up, false).unwrap().0;
        let rm = s.assemble(&theta, &um, false).unwrap().0;
        for i in 0..r0.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            assert!((fd - k[i][j]).abs() < 1e-6 * scale);
        }
    }
}
