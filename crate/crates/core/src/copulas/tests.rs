use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, StandardNormal};

use super::*;
use crate::kernels::normal::normal_log_pdf;
use crate::oracles::{check_gradient, empirical_corr, ks_uniform_test};

fn part(s: &[usize]) -> BlockPartition {
    BlockPartition::new(s.to_vec()).unwrap()
}

pub(crate) fn families() -> Vec<CopulaSpec> {
    vec![
        CopulaSpec::Independence { dim: 4 },
        CopulaSpec::GvcFactor(GvcFactor::new(part(&[2, 3, 1]), 2).unwrap()),
        CopulaSpec::GvcFactor(GvcFactor::new(part(&[1, 1]), 1).unwrap()),
        CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[4, 2]), false).unwrap()),
        CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[2, 3, 1]), false).unwrap()),
        CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[3, 3, 1]), true).unwrap()),
        CopulaSpec::Kvc(Kvc::new(part(&[2, 1, 3]))),
        nested_a7(2),
        CopulaSpec::Nested {
            outer: Box::new(CopulaSpec::GvcFactor(GvcFactor::new(part(&[4, 2]), 1).unwrap())),
            refine: 0,
            inner: Box::new(CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[1, 3]), false).unwrap())),
        },
    ]
}

fn nested_a7(m: usize) -> CopulaSpec {
    CopulaSpec::Nested {
        outer: Box::new(CopulaSpec::Kvc(Kvc::new(part(&[2 * m, 1])))),
        refine: 0,
        inner: Box::new(CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[m, m]), true).unwrap())),
    }
}

/// Moves the parameters away from the independence initialization.
pub(crate) fn random_params(c: &CopulaSpec, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut p = c.init(rng);
    for (slice, v) in c.index_map().slices.iter().flat_map(|s| std::iter::repeat(s).take(s.len)).zip(p.iter_mut()) {
        match slice.transform {
            crate::layout::Transform::Stiefel { .. } => {}
            _ => *v += 0.5 * rng.sample::<f64, _>(StandardNormal),
        }
    }
    p
}

fn noise(c: &CopulaSpec, rng: &mut ChaCha20Rng) -> (Vec<f64>, Vec<f64>) {
    let (nn, ne) = c.noise_dims();
    let n = (0..nn).map(|_| rng.sample(StandardNormal)).collect();
    let e = (0..ne).map(|_| rng.sample(Exp1)).collect();
    (n, e)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_log_c(omega: &DMatrix<f64>, z: &[f64]) -> f64 {
    let d = z.len();
    let chol = omega.clone().cholesky().unwrap();
    let zv = DVector::from_column_slice(z);
    let w = chol.l().solve_lower_triangular(&zv).unwrap();
    let ld = 2.0 * chol.l().diagonal().map(f64::ln).sum();
    let indep: f64 = z.iter().map(|&v| normal_log_pdf(v)).sum();
    -0.5 * ld - 0.5 * w.norm_squared() - d as f64 * crate::kernels::normal::LN_SQRT_2PI - indep
}

#[test]
fn partition_rejects_bad_sizes() {
    assert!(BlockPartition::new(vec![]).is_err());
    assert!(BlockPartition::new(vec![2, 0]).is_err());
    let p = part(&[2, 3]);
    assert_eq!(p.total(), 5);
    assert_eq!(p.range(1), 2..5);
}

#[test]
fn structural_validation() {
    assert!(GvcFactor::new(part(&[1, 1]), 2).is_err());
    assert!(GvcFactor::new(part(&[2, 1]), 0).is_err());
    assert!(GvcOrtho::new(part(&[3]), false).is_err());
    assert!(GvcOrtho::new(part(&[3, 2]), true).is_err());
    let bad = CopulaSpec::Nested {
        outer: Box::new(CopulaSpec::Kvc(Kvc::new(part(&[4, 1])))),
        refine: 0,
        inner: Box::new(CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[2, 1]), false).unwrap())),
    };
    assert!(bad.validate().is_err());
    let bad = CopulaSpec::Nested {
        outer: Box::new(CopulaSpec::Kvc(Kvc::new(part(&[4, 1])))),
        refine: 0,
        inner: Box::new(CopulaSpec::Kvc(Kvc::new(part(&[2, 2])))),
    };
    assert!(bad.validate().is_err());
    for c in families() {
        c.validate().unwrap();
        assert!(c.index_map().validate());
    }
}

#[test]
fn parameter_counts() {
    let m = 7;
    let gvci = CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[m, m, 1]), true).unwrap());
    assert_eq!(gvci.n_params(), m);
    let kvc = CopulaSpec::Kvc(Kvc::new(part(&[2, 2, 2])));
    assert_eq!(kvc.n_params(), 6);
    let f = CopulaSpec::GvcFactor(GvcFactor::new(part(&[m, m, 1]), 3).unwrap());
    assert_eq!(f.n_params(), 3 * (2 * m + 1) + 1);
    let o = CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[5, 3]), false).unwrap());
    assert_eq!(o.n_params(), 5 * 3 + 3 * 3 + 3);
}

#[test]
fn noise_length_is_checked() {
    let c = &families()[1];
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let p = c.init(&mut rng);
    assert!(c.sample(&p, &[0.0; 3], &[]).is_err());
    assert!(c.sample(&p[1..], &[0.0; 8], &[]).is_err());
}

#[test]
fn gvc_factor_zero_loading_is_independence() {
    let g = GvcFactor::new(part(&[2, 3]), 2).unwrap();
    let c = CopulaSpec::GvcFactor(g);
    let mut p = vec![0.0; c.n_params()];
    p[0] = 1.7;
    let eps: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 0.8).collect();
    let d = c.sample(&p, &eps, &[]).unwrap();
    for i in 0..5 {
        assert!((d.z[i] - eps[i]).abs() < 1e-14);
    }
    assert!(c.per_draw_log_c(&p, &d).unwrap().abs() < 1e-14);
    assert!(c.log_density(&p, &[0.1, 0.5, 0.9, 0.3, 0.99]).unwrap().abs() < 1e-13);
}

#[test]
fn gvc_factor_two_singletons_closed_form() {
    let c = CopulaSpec::GvcFactor(GvcFactor::new(part(&[1, 1]), 1).unwrap());
    let (zt, b1, b2) = (0.8f64, 0.9, -1.3);
    let zeta = zt * zt;
    let p = [zt, b1, b2];
    let om = c.dense_omega(&p).unwrap();
    let want = b1 * b2 / ((zeta + b1 * b1) * (zeta + b2 * b2)).sqrt();
    assert!((om[(0, 1)] - want).abs() < 1e-14);
    assert!((om[(0, 0)] - 1.0).abs() < 1e-14);
}

#[test]
fn gaussian_densities_match_dense_construction() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for c in families() {
        for _ in 0..10 {
            let p = random_params(&c, &mut rng);
            let Some(om) = c.dense_omega(&p) else { continue };
            let z: Vec<f64> = (0..c.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let got = c.log_density_z(&p, &z).unwrap();
            let want = gaussian_log_c(&om, &z);
            assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "{} {got} {want}", c.name());
            for j in 0..c.coarse_sizes().len() {
                let r = match &c {
                    CopulaSpec::GvcFactor(g) => g.partition.range(j),
                    CopulaSpec::GvcOrtho(g) => g.partition.range(j),
                    _ => 0..c.dim(),
                };
                let blk = om.view((r.start, r.start), (r.len(), r.len()));
                assert!((blk - DMatrix::identity(r.len(), r.len())).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn gvc_identity_two_by_two_example() {
    let c = CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[1, 1]), true).unwrap());
    // l = 0.5 ⇔ l̃ = ln 3
    let p = [3f64.ln()];
    let om = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let z = DVector::from_vec(vec![1.0, 1.0]);
    let inv = om.clone().try_inverse().unwrap();
    let want = -0.5 * 0.75f64.ln() - 0.5 * (z.transpose() * (inv - DMatrix::identity(2, 2)) * &z)[0];
    assert!((c.log_density_z(&p, &[1.0, 1.0]).unwrap() - want).abs() < 1e-14);
}

#[test]
fn gvc_ortho_closed_forms_against_dense() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for k in 0..100 {
        let sizes = [[5, 3], [3, 5], [4, 4], [6, 1]][k % 4];
        let g = GvcOrtho::new(part(&sizes), k % 8 == 6 && sizes[0] == sizes[1]).unwrap();
        let c = CopulaSpec::GvcOrtho(g.clone());
        let p = random_params(&c, &mut rng);
        let om = g.dense_omega(&p);
        let inv = g.dense_omega_inverse(&p);
        let d = om.nrows();
        assert!((&om * &inv - DMatrix::identity(d, d)).amax() < 1e-9);
        let det = om.clone().determinant();
        assert!((det - g.log_det_omega(&p).exp()).abs() < 1e-10, "{det}");
    }
}

#[test]
fn ortho_near_comonotone_limit() {
    let c = CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[2, 2]), true).unwrap());
    // l = 1 − 1e-12
    let lt = ((2.0 - 1e-12) / 1e-12f64).ln();
    let eps = [0.3, -1.2, 2.0, 0.4];
    let d = c.sample(&[lt, lt], &eps, &[]).unwrap();
    assert!((d.z[2] - 0.3).abs() < 1e-5 && (d.z[3] + 1.2).abs() < 1e-5);
}

/// `zbarᵀ z(λ) + elbo_term(λ)` at fixed noise.
fn total_objective(c: &CopulaSpec, p: &[f64], n: &[f64], e: &[f64], zbar: &[f64]) -> f64 {
    let d = c.sample(p, n, e).unwrap();
    dot(zbar, &d.z) + c.elbo_term(p, &d).unwrap()
}

#[test]
fn total_backward_matches_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    for c in families() {
        for rep in 0..50 {
            let p = random_params(&c, &mut rng);
            let (n, e) = noise(&c, &mut rng);
            let zbar: Vec<f64> = (0..c.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let draw = c.sample(&p, &n, &e).unwrap();
            let (g, nbar) = c.total_backward(&p, &draw, &zbar).unwrap();
            let rep_p = check_gradient(|q| total_objective(&c, q, &n, &e, &zbar), &p, &g);
            assert!(rep_p.max_rel_error < 1e-5, "{} rep {rep}: {:?}", c.name(), rep_p);
            let rep_n = check_gradient(|m| total_objective(&c, &p, m, &e, &zbar), &n, &nbar);
            assert!(rep_n.max_rel_error < 1e-5, "{} rep {rep} noise: {:?}", c.name(), rep_n);
        }
    }
}

#[test]
fn path_backward_matches_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    for c in families() {
        for rep in 0..20 {
            let p = random_params(&c, &mut rng);
            let (n, e) = noise(&c, &mut rng);
            let zbar: Vec<f64> = (0..c.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let draw = c.sample(&p, &n, &e).unwrap();
            let (g, _) = c.path_backward(&p, &draw, &zbar).unwrap();
            let f = |q: &[f64]| dot(&zbar, &c.sample(q, &n, &e).unwrap().z) - c.expected_log_c(q);
            let rep_p = check_gradient(f, &p, &g);
            assert!(rep_p.max_rel_error < 1e-5, "{} rep {rep}: {:?}", c.name(), rep_p);
        }
    }
}

#[test]
fn score_is_gradient_of_density_in_final_scores() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    for c in families() {
        if matches!(c, CopulaSpec::Kvc(_)) {
            continue;
        }
        for _ in 0..20 {
            let p = random_params(&c, &mut rng);
            let (n, e) = noise(&c, &mut rng);
            let draw = c.sample(&p, &n, &e).unwrap();
            let s = c.score_z(&p, &draw).unwrap();
            let per_draw = |z: &[f64]| match &c {
                CopulaSpec::Nested { outer, refine, inner } => {
                    // outer density is per draw only when it is Gaussian
                    let (po, pi) = p.split_at(outer.n_params());
                    let r = CopulaSpec::nested_range(outer, *refine);
                    let eps = inner.noise_inverse(pi, &z[r.clone()]).unwrap();
                    let mut zo = z.to_vec();
                    zo[r.clone()].copy_from_slice(&eps);
                    let lo = if outer.has_per_draw_density() { outer.log_density_z(po, &zo).unwrap() } else { 0.0 };
                    lo + inner.log_density_z(pi, &z[r]).unwrap()
                }
                _ => c.log_density_z(&p, z).unwrap(),
            };
            let rep = check_gradient(per_draw, &draw.z, &s);
            assert!(rep.max_rel_error < 1e-6, "{}: {:?}", c.name(), rep);
            let direct = c.per_draw_log_c(&p, &draw).unwrap();
            assert!((direct - per_draw(&draw.z)).abs() < 1e-9 * (1.0 + direct.abs()), "{}", c.name());
        }
    }
}

#[test]
fn zero_cotangent_gives_zero_path_gradient() {
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    for c in families() {
        let p = random_params(&c, &mut rng);
        let (n, e) = noise(&c, &mut rng);
        let draw = c.sample(&p, &n, &e).unwrap();
        let (mut g, nb) = c.path_backward(&p, &draw, &vec![0.0; c.dim()]).unwrap();
        if let CopulaSpec::Kvc(k) = &c {
            let mut ent = vec![0.0; g.len()];
            k.entropy_grad(&p, &mut ent);
            g.iter_mut().zip(&ent).for_each(|(a, b)| *a -= b);
        }
        if matches!(c, CopulaSpec::Nested { .. }) {
            continue;
        }
        assert!(g.iter().all(|v| v.abs() < 1e-15), "{}", c.name());
        assert!(nb.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn stiefel_retraction_curve_derivative() {
    // FD along the QR retraction matches the projected Euclidean gradient.
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let g = GvcOrtho::new(part(&[4, 2]), false).unwrap();
    let c = CopulaSpec::GvcOrtho(g.clone());
    let p = random_params(&c, &mut rng);
    let (n, e) = noise(&c, &mut rng);
    let zbar: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
    let draw = c.sample(&p, &n, &e).unwrap();
    let (grad, _) = c.total_backward(&p, &draw, &zbar).unwrap();
    let mut proj = grad.clone();
    crate::kernels::stiefel::project_slice(&p[..8], &mut proj[..8], 4, 2);
    let dir: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
    let mut tangent = dir.clone();
    crate::kernels::stiefel::project_slice(&p[..8], &mut tangent, 4, 2);
    let at = |t: f64| {
        let mut q = p.clone();
        for i in 0..8 {
            q[i] += t * tangent[i];
        }
        crate::kernels::stiefel::retract_slice(&mut q[..8], 4, 2);
        total_objective(&c, &q, &n, &e, &zbar)
    };
    let h = 1e-6;
    let fd = (at(h) - at(-h)) / (2.0 * h);
    let an = dot(&proj[..8], &tangent);
    assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{fd} {an}");
}

#[test]
fn nested_composition_identities() {
    let mut rng = ChaCha20Rng::seed_from_u64(18);
    let outer = CopulaSpec::GvcFactor(GvcFactor::new(part(&[3, 1]), 2).unwrap());
    let po = random_params(&outer, &mut rng);
    let nest = CopulaSpec::Nested { outer: Box::new(outer.clone()), refine: 0, inner: Box::new(CopulaSpec::Independence { dim: 3 }) };
    let n: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
    assert_eq!(nest.sample(&po, &n, &[]).unwrap().z, outer.sample(&po, &n, &[]).unwrap().z);

    let inner = CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[2, 2]), true).unwrap());
    let pi = random_params(&inner, &mut rng);
    let nest = CopulaSpec::Nested {
        outer: Box::new(CopulaSpec::Independence { dim: 4 }),
        refine: 0,
        inner: Box::new(inner.clone()),
    };
    let n: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let a = nest.sample(&pi, &n, &[]).unwrap();
    let b = inner.sample(&pi, &n, &[]).unwrap();
    assert_eq!(a.z, b.z);
    assert_eq!(nest.per_draw_log_c(&pi, &a).unwrap(), inner.per_draw_log_c(&pi, &b).unwrap());
}

#[test]
fn kvc_identity_and_singleton_cases() {
    let k = Kvc::new(part(&[1, 1]));
    let c = CopulaSpec::Kvc(k.clone());
    let p = c.init(&mut ChaCha20Rng::seed_from_u64(0));
    assert_eq!(k.entropy_term(&p), 0.0);
    assert!(c.log_density(&p, &[0.2, 0.7]).unwrap().abs() < 1e-13);
    // shape 1: u = v exactly
    let d = c.sample(&p, &[0.4, -1.1], &[0.3, 2.0]).unwrap();
    assert!((d.z[0] - 0.4).abs() < 1e-12 && (d.z[1] + 1.1).abs() < 1e-12);

    // ρ off the diagonal: log|G̃| = log √(1 − ρ²)
    let rho = 0.6f64;
    let p = [1.0, rho / (1.0 - rho * rho).sqrt(), 1.0];
    assert!((k.entropy_term(&p) - (1.0 - rho * rho).sqrt().ln()).abs() < 1e-14);
    // singletons reduce to the bivariate Gaussian copula
    let om = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    for u in [[0.2, 0.7], [0.9, 0.95], [0.01, 0.5]] {
        let z: Vec<f64> = u.iter().map(|&v| crate::kernels::normal_quantile(v).unwrap()).collect();
        let want = gaussian_log_c(&om, &z);
        assert!((c.log_density(&p, &u).unwrap() - want).abs() < 1e-10);
    }
}

#[test]
fn kvc_block_with_many_coordinates_round_trips() {
    // the Kendall transform of a sampled block reproduces Φ(κ_j)
    let mut rng = ChaCha20Rng::seed_from_u64(19);
    let c = CopulaSpec::Kvc(Kvc::new(part(&[5, 30])));
    let p = random_params(&c, &mut rng);
    let (n, e) = noise(&c, &mut rng);
    let d = c.sample(&p, &n, &e).unwrap();
    let DrawCache::Kvc(cache) = &d.cache else { panic!() };
    let _ = cache;
    let u = d.uniforms();
    let (_, gt, _) = match &c {
        CopulaSpec::Kvc(k) => k.factors(&p),
        _ => unreachable!(),
    };
    let kappa = &gt * DVector::from_column_slice(&n);
    for (j, r) in [(0usize, 0..5), (1, 5..35)] {
        let x: f64 = u[r.clone()].iter().map(|v| -v.ln()).sum();
        let v = crate::kernels::erlang_sf(x, r.len());
        assert!((v - crate::kernels::normal_cdf(kappa[j])).abs() < 1e-9, "{v}");
    }
}

fn ks_all_margins(c: &CopulaSpec, p: &[f64], n_draws: usize, seed: u64) -> (f64, Vec<Vec<f64>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut cols = vec![Vec::with_capacity(n_draws); c.dim()];
    for _ in 0..n_draws {
        let (n, e) = noise(c, &mut rng);
        let d = c.sample(p, &n, &e).unwrap();
        for (col, u) in cols.iter_mut().zip(d.uniforms()) {
            col.push(u);
        }
    }
    let worst = cols.iter().map(|col| ks_uniform_test(col).unwrap()).fold(0.0, f64::max);
    (worst, cols)
}

#[test]
fn margins_are_uniform_for_every_family() {
    let mut rng = ChaCha20Rng::seed_from_u64(20);
    for (k, c) in families().into_iter().enumerate() {
        let p = random_params(&c, &mut rng);
        let (worst, _) = ks_all_margins(&c, &p, 1_000_000, 100 + k as u64);
        assert!(worst < 0.003, "{}: KS {worst}", c.name());
    }
}

#[test]
fn kvc_single_block_has_independent_uniforms() {
    let c = CopulaSpec::Kvc(Kvc::new(part(&[3])));
    let p = c.init(&mut ChaCha20Rng::seed_from_u64(0));
    let (worst, cols) = ks_all_margins(&c, &p, 1_000_000, 21);
    assert!(worst < 0.003);
    let x = DMatrix::from_fn(cols[0].len(), 3, |r, j| cols[j][r]);
    let corr = empirical_corr(&x).unwrap();
    assert!(corr[(0, 1)].abs() < 0.004 && corr[(1, 2)].abs() < 0.004);
}

fn score_matrix(c: &CopulaSpec, p: &[f64], n_draws: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = c.dim();
    let mut m = DMatrix::zeros(n_draws, d);
    for r in 0..n_draws {
        let (n, e) = noise(c, &mut rng);
        let z = c.sample(p, &n, &e).unwrap().z;
        for j in 0..d {
            m[(r, j)] = z[j];
        }
    }
    m
}

#[test]
fn monte_carlo_correlation_matches_omega() {
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let f = CopulaSpec::GvcFactor(GvcFactor::new(part(&[2, 3, 1]), 2).unwrap());
    let p = random_params(&f, &mut rng);
    let emp = empirical_corr(&score_matrix(&f, &p, 1_000_000, 23)).unwrap();
    let om = f.dense_omega(&p).unwrap();
    assert!((&emp - &om).amax() < 0.01, "{emp} {om}");

    let i = CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[2, 2]), true).unwrap());
    let l = 0.7f64;
    let lt = ((1.0 + l) / (1.0 - l)).ln();
    let emp = empirical_corr(&score_matrix(&i, &[lt, lt], 1_000_000, 24)).unwrap();
    assert!((emp[(0, 2)] - 0.7).abs() < 0.01 && (emp[(1, 3)] - 0.7).abs() < 0.01);
    assert!(emp[(0, 3)].abs() < 0.01 && emp[(0, 1)].abs() < 0.01 && emp[(2, 3)].abs() < 0.01);
}

#[test]
fn kvc_entropy_is_minus_expected_log_density() {
    let mut rng = ChaCha20Rng::seed_from_u64(25);
    let c = CopulaSpec::Kvc(Kvc::new(part(&[1, 2, 1, 3, 2])));
    let p = random_params(&c, &mut rng);
    let CopulaSpec::Kvc(k) = &c else { unreachable!() };
    let n_draws = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_draws {
        let (n, e) = noise(&c, &mut rng);
        let u = c.sample(&p, &n, &e).unwrap().uniforms();
        let u: Vec<f64> = u.iter().map(|v| v.clamp(1e-300, 1.0 - 1e-16)).collect();
        let v = c.log_density(&p, &u).unwrap();
        s += v;
        s2 += v * v;
    }
    let mean = s / n_draws as f64;
    let se = ((s2 / n_draws as f64 - mean * mean) / n_draws as f64).sqrt();
    let want = -k.entropy_term(&p);
    assert!((mean - want).abs() < 3.0 * se, "{mean} {want} {se}");
}

#[test]
fn densities_integrate_to_one() {
    let mut rng = ChaCha20Rng::seed_from_u64(26);
    let specs = vec![
        CopulaSpec::GvcFactor(GvcFactor::new(part(&[2, 1, 1]), 1).unwrap()),
        CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[2, 1]), false).unwrap()),
        CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[2, 2]), true).unwrap()),
        CopulaSpec::Kvc(Kvc::new(part(&[1, 2, 1]))),
    ];
    for c in specs {
        let mut p = random_params(&c, &mut rng);
        // keep the dependence moderate so the MC variance stays bounded
        for v in p.iter_mut() {
            *v = v.clamp(-1.0, 1.5);
        }
        let n = 2_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let u: Vec<f64> = (0..c.dim()).map(|_| rng.random_range(1e-12..1.0 - 1e-12)).collect();
            let v = c.log_density(&p, &u).unwrap().exp();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se.max(1e-4), "{} {mean} ± {se}", c.name());
    }
}
