//! The `check` manifest: gradient checks for every named family, copula
//! sampler uniformity, the Kendall series and Gaussian exactness, each at a
//! size that runs in seconds.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, StandardNormal};
use vcvi_core::copulas::{BlockPartition, CopulaSpec, GvcFactor, GvcOrtho, Kvc};
use vcvi_core::engine::{elbo_mc, run_sgd, Assembly, Estimator, RunConfig};
use vcvi_core::kernels::kendall_cdf;
use vcvi_core::layout::{IndexMap, Transform};
use vcvi_core::oracles::{check_gradient, gaussian_elbo_closed_form, ks_uniform_test};
use vcvi_core::parallel::Parallelism;
use vcvi_core::targets::{simulate_logistic_dataset, Design, GaussianTarget, LogisticHorseshoe};

pub const GRADIENT_FAMILIES: [&str; 20] = [
    "GMF",
    "G-F2",
    "GC-F2",
    "BLK",
    "BLK-C",
    "BLK-C(M1)",
    "GVC-F2&M1",
    "GVC-I&M1",
    "GVC-I&M1-YJ",
    "GVC-I&M2-YJ",
    "GVC-O&M1",
    "KVC-G&M1",
    "Nested(KVC-G∘GVC-I)&M1-YJ",
    "A1",
    "A2",
    "A3",
    "A4",
    "A5",
    "A6",
    "A7",
];
const GRADIENT_STATES: usize = 5;
const GRADIENT_LIMIT: f64 = 1e-5;
const SAMPLER_DRAWS: usize = 100_000;
/// Family-wise level of the KS tests within one sampler check.
const KS_LEVEL: f64 = 1e-3;
const COV_LIMIT: f64 = 0.02;

pub struct CheckOutcome {
    pub pass: bool,
    pub detail: String,
}

pub struct Check {
    pub name: String,
    run: Box<dyn Fn(bool) -> CheckOutcome + Send + Sync>,
}

impl Check {
    /// With `inject` the check corrupts its own analytic side, which must
    /// then fail.
    pub fn run(&self, inject: bool) -> CheckOutcome {
        (self.run)(inject)
    }
}

fn check(name: impl Into<String>, f: impl Fn(bool) -> CheckOutcome + Send + Sync + 'static) -> Check {
    Check { name: name.into(), run: Box::new(f) }
}

pub fn registry() -> Vec<Check> {
    let mut v = Vec::new();
    for fam in GRADIENT_FAMILIES {
        v.push(check(format!("gradient/{fam}"), move |inj| gradient(fam, inj)));
    }
    for (name, seed) in [("GVC-F3", 1), ("GVC-O", 2), ("GVC-I", 3), ("KVC-G", 4), ("Nested", 5)] {
        v.push(check(format!("sampler/{name}"), move |inj| sampler(name, seed, inj)));
    }
    v.push(check("kendall/horner-vs-series", kendall));
    v.push(check("gaussian/closed-form-vs-monte-carlo", gaussian_closed_form));
    v.push(check("gaussian/exact-recovery", gaussian_exactness));
    v
}

fn perturb(p: &mut [f64], im: &IndexMap, scale: f64, rng: &mut ChaCha20Rng) {
    for s in &im.slices {
        if !matches!(s.transform, Transform::Stiefel { .. }) {
            for x in &mut p[s.offset..s.offset + s.len] {
                *x += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}

fn gradient(family: &str, inject: bool) -> CheckOutcome {
    let data = simulate_logistic_dataset(100, 5, 0.4, 1).expect("valid simulation");
    let t = LogisticHorseshoe::new(Design::auto(data.x), data.y).expect("valid data");
    let a = match Assembly::from_family(family, &t.blocks()) {
        Ok(a) => a,
        Err(e) => return CheckOutcome { pass: false, detail: e.to_string() },
    };
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_STATES {
        let mut lam = a.init(&mut rng);
        perturb(&mut lam, &a.index_map(), 0.3, &mut rng);
        let noise = a.draw_noise(&mut rng);
        let mut g = match a.elbo_gradient(&lam, &t, &noise, Estimator::Total) {
            Ok((_, g)) => g,
            Err(e) => return CheckOutcome { pass: false, detail: e.to_string() },
        };
        if inject {
            g[0] += 1e-3 * g[0].abs().max(1.0);
        }
        let r = check_gradient(|x| a.elbo_estimate(x, &t, &noise).unwrap_or(f64::NAN), &lam, &g);
        worst = worst.max(if r.non_finite.is_empty() { r.max_rel_error } else { f64::INFINITY });
    }
    CheckOutcome {
        pass: worst <= GRADIENT_LIMIT,
        detail: format!("max rel error {worst:.2e} over {GRADIENT_STATES} states (limit {GRADIENT_LIMIT:e})"),
    }
}

fn part(sizes: &[usize]) -> BlockPartition {
    BlockPartition::new(sizes.to_vec()).expect("positive sizes")
}

fn copula(name: &str) -> CopulaSpec {
    match name {
        "GVC-F3" => CopulaSpec::GvcFactor(GvcFactor::new(part(&[5, 5, 5, 5]), 3).expect("valid")),
        "GVC-O" => CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[6, 4]), false).expect("valid")),
        "GVC-I" => CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[10, 10]), true).expect("valid")),
        "KVC-G" => CopulaSpec::Kvc(Kvc::new(part(&[5, 3, 2]))),
        _ => CopulaSpec::Nested {
            outer: Box::new(CopulaSpec::Kvc(Kvc::new(part(&[6, 1])))),
            refine: 0,
            inner: Box::new(CopulaSpec::GvcOrtho(GvcOrtho::new(part(&[3, 3]), true).expect("valid"))),
        },
    }
}

/// Every margin KS-uniform and, for Gaussian copulas, the sample covariance
/// of `z` close to the dense `Ω`.
fn sampler(name: &str, seed: u64, inject: bool) -> CheckOutcome {
    let c = copula(name);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut p = c.init(&mut rng);
    perturb(&mut p, &c.index_map(), 0.8, &mut rng);
    let d = c.dim();
    let omega = c.dense_omega(&p);
    let (nn, ne) = c.noise_dims();
    let mut cols = vec![Vec::with_capacity(SAMPLER_DRAWS); d];
    let mut sum = DVector::<f64>::zeros(d);
    let mut outer = DMatrix::<f64>::zeros(d, d);
    for _ in 0..SAMPLER_DRAWS {
        let normals: Vec<f64> = (0..nn).map(|_| rng.sample(StandardNormal)).collect();
        let exps: Vec<f64> = (0..ne).map(|_| rng.sample(Exp1)).collect();
        let draw = match c.sample(&p, &normals, &exps) {
            Ok(d) => d,
            Err(e) => return CheckOutcome { pass: false, detail: e.to_string() },
        };
        for (col, u) in cols.iter_mut().zip(draw.uniforms()) {
            col.push(if inject { u * u } else { u });
        }
        if omega.is_some() {
            let z = DVector::from_column_slice(&draw.z);
            sum += &z;
            outer.ger(1.0, &z, &z, 1.0);
        }
    }
    let ks = cols.iter().map(|c| ks_uniform_test(c).unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    // Bonferroni over the d margins with the asymptotic tail 2e^{-2c²}
    let ks_limit = (-0.5 * (KS_LEVEL / (2.0 * d as f64)).ln()).sqrt() / (SAMPLER_DRAWS as f64).sqrt();
    let cov_err = omega.map(|om| {
        let nf = SAMPLER_DRAWS as f64;
        let mu = &sum / nf;
        (&outer / nf - &mu * mu.transpose() - om).amax()
    });
    let pass = ks < ks_limit && cov_err.is_none_or(|e| e <= COV_LIMIT);
    let detail = match cov_err {
        Some(e) => format!("max KS {ks:.4} (limit {ks_limit:.4}), |cov - Omega| {e:.4} (limit {COV_LIMIT})"),
        None => format!("max KS {ks:.4} (limit {ks_limit:.4})"),
    };
    CheckOutcome { pass, detail }
}

fn kendall(inject: bool) -> CheckOutcome {
    let mut worst = 0.0f64;
    for d in 1..=200 {
        for k in 1..100 {
            let t = k as f64 / 100.0;
            // t Σ_{b<d} (−ln t)^b / b!, term by term
            let x = -t.ln();
            let (mut term, mut s) = (1.0, 0.0);
            for b in 0..d {
                if b > 0 {
                    term *= x / b as f64;
                }
                s += term;
            }
            let mut h = kendall_cdf(t, d).unwrap_or(f64::NAN);
            if inject {
                h += 1e-6;
            }
            let e = (h - t * s).abs();
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
    }
    CheckOutcome { pass: worst <= 1e-13, detail: format!("max |Horner - series| {worst:.1e} for d <= 200 (limit 1e-13)") }
}

fn coupled_gaussian(inject: bool) -> (GaussianTarget, Vec<f64>) {
    let (m, l) = (2, [0.5, -0.7]);
    let mut omega = DMatrix::<f64>::identity(2 * m, 2 * m);
    for i in 0..m {
        omega[(i, m + i)] = l[i];
        omega[(m + i, i)] = l[i];
    }
    let sd = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.5, 2.0, 0.8]));
    let cov = &sd * omega * &sd;
    let mean = vec![1.0, -0.5, 0.0, 2.0];
    // the offset feeds log Z only, so a shift is visible to the exactness check
    let t = GaussianTarget::from_covariance(mean.clone(), &cov, if inject { 0.1 } else { 0.0 }).expect("positive definite");
    (t, mean)
}

/// The closed-form Gaussian ELBO against a Monte Carlo average at random
/// parameters.
fn gaussian_closed_form(inject: bool) -> CheckOutcome {
    let (t, _) = coupled_gaussian(false);
    let a = Assembly::from_family("GVC-I&M1(L=dense)", &[2, 2]).expect("valid family");
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for k in 0..3 {
        let mut lam = a.init(&mut rng);
        perturb(&mut lam, &a.index_map(), 0.3, &mut rng);
        let exact = match gaussian_elbo_closed_form(&a, &lam, &t) {
            Ok(v) => v + if inject { 1.0 } else { 0.0 },
            Err(e) => return CheckOutcome { pass: false, detail: e.to_string() },
        };
        let (mc, se) = elbo_mc(&a, &lam, &t, 200_000, 30 + k, Parallelism::Rayon).expect("finite draws");
        worst = worst.max((mc - exact).abs() / se);
    }
    CheckOutcome { pass: worst <= 4.0, detail: format!("max |MC - closed form| {worst:.2} SE over 3 states (limit 4)") }
}

/// A Gaussian target whose posterior lies inside GVC-I with identity-L
/// margins: the fitted ELBO must reach log Z and the means must match.
fn gaussian_exactness(inject: bool) -> CheckOutcome {
    let (t, mean) = coupled_gaussian(inject);
    let a = Assembly::from_family("GVC-I&M1(L=I)", &[2, 2]).expect("valid family");
    let cfg = RunConfig { steps: 20_000, seed: 5, ..RunConfig::default() };
    let (state, _) = match run_sgd(&a, &t, &cfg) {
        Ok(r) => r,
        Err(e) => return CheckOutcome { pass: false, detail: e.to_string() },
    };
    let (elbo, (q_mean, _)) = match (gaussian_elbo_closed_form(&a, &state.lambda, &t), a.gaussian_form(&state.lambda)) {
        (Ok(e), Ok(g)) => (e, g),
        (Err(e), _) | (_, Err(e)) => return CheckOutcome { pass: false, detail: e.to_string() },
    };
    let log_z = coupled_gaussian(false).0.log_evidence();
    let gap = (elbo - log_z).abs();
    let mean_err = q_mean.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    CheckOutcome {
        pass: gap <= 1e-3 && mean_err <= 0.02,
        detail: format!("|ELBO - log Z| {gap:.1e} (limit 1e-3), max mean error {mean_err:.1e} (limit 0.02)"),
    }
}

