//! Checks shared by the oracle tests and the acceptance runner. Each one
//! measures something, compares it with a fixed threshold and reports both.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::rc::Rc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use picnn_core::arch::{
    darts_search, enas_child_step, ArchNet, Controller, ControllerConfig, DartsConfig, OneShotTask, SearchSpace, Selection,
    Supernet,
};
use picnn_core::data::darcy::{darcy_bc, darcy_system};
use picnn_core::data::poisson::{poisson_system, unit_square_bc};
use picnn_core::data::{darcy_flux_cuts, kl_expansion, sample_grf, solve_darcy_fv, solve_poisson_fd, GrfSpec, SparseSystem};
use picnn_core::loss::{bo_suggest, median_stop_check, LossBatch, LossEvaluator, LossGenome, LossSpace, LossSpaceConfig, TrialRecord, TrialStatus, WeightOp};
use picnn_core::loss::weights::WeightState;
use picnn_core::pde::{apply_stencil, laplacian, BoundarySpec, Derivative, EdgeCondition, Geometry, KernelFamily, PdeKind, StencilKernel};
use picnn_core::rng::stream;
use picnn_tensor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Res<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn rand_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::parameter((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn probe(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand_param(&mut rng, shape).detach()
}

fn weighted_sum(y: &Tensor, seed: u64) -> picnn_tensor::Result<Tensor> {
    Ok(y.mul(&probe(y.shape(), seed))?.sum())
}

type Case = (&'static str, Box<dyn Fn(&[Tensor]) -> picnn_tensor::Result<Tensor>>, Vec<Tensor>);

/// Every differentiable tensor op against central differences.
pub fn gradcheck_suite() -> Res<Check> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut p = |s: &[usize]| rand_param(&mut rng, s);
    let x4 = p(&[2, 2, 5, 6]);
    let w3 = p(&[3, 2, 3, 3]);
    let b3 = p(&[3]);
    let dw = p(&[2, 1, 3, 3]);
    let pw = p(&[3, 2, 1, 1]);
    let v = p(&[7]);
    let v2 = p(&[7]);
    let den = Tensor::parameter(vec![1.5, -2.0, 0.7, 3.0, -1.1, 0.9, 2.2], &[7])?;
    let m1 = p(&[3, 4]);
    let m2 = p(&[4, 2]);
    let gamma = p(&[2]);
    let beta = p(&[2]);
    let csr = Rc::new(CsrMatrix::from_rows(7, &[vec![(0, 1.0), (3, -2.0)], vec![(6, 0.5)], vec![(1, 1.0), (2, 1.0), (5, 3.0)]])?);
    let gather: Rc<[GatherEntry]> = Rc::from(vec![GatherEntry::copy(4), GatherEntry::constant(2.0), GatherEntry::copy(0), GatherEntry::copy(4)]);
    let cases: Vec<Case> = vec![
        ("conv2d same", Box::new(|t| weighted_sum(&conv2d(&t[0], &t[1], Some(&t[2]), 1, PaddingSpec::Same)?, 1)), vec![x4.clone(), w3.clone(), b3.clone()]),
        ("conv2d stride 2", Box::new(|t| weighted_sum(&conv2d(&t[0], &t[1], None, 2, PaddingSpec::Valid)?, 2)), vec![x4.clone(), w3.clone()]),
        ("depthwise conv", Box::new(|t| weighted_sum(&depthwise_conv2d(&t[0], &t[1], 1, PaddingSpec::Same)?, 3)), vec![x4.clone(), dw.clone()]),
        (
            "separable conv",
            Box::new(|t| weighted_sum(&depthwise_separable_conv2d(&t[0], &t[1], &t[2], Some(&t[3]), 1, PaddingSpec::Same)?, 4)),
            vec![x4.clone(), dw.clone(), pw.clone(), b3.clone()],
        ),
        ("maxpool", Box::new(|t| weighted_sum(&maxpool2d(&t[0], 2, 2, PaddingSpec::Valid)?, 5)), vec![x4.clone()]),
        ("avgpool", Box::new(|t| weighted_sum(&avgpool2d(&t[0], 3, 1, PaddingSpec::Same)?, 6)), vec![x4.clone()]),
        ("upsample bilinear", Box::new(|t| weighted_sum(&upsample(&t[0], UpsampleMode::Bilinear, 2)?, 7)), vec![x4.clone()]),
        ("upsample nearest", Box::new(|t| weighted_sum(&upsample(&t[0], UpsampleMode::Nearest, 2)?, 8)), vec![x4.clone()]),
        ("resize", Box::new(|t| weighted_sum(&resize(&t[0], UpsampleMode::Bilinear, 7, 4)?, 9)), vec![x4.clone()]),
        ("group_norm", Box::new(|t| weighted_sum(&group_norm(&t[0], 1, &t[1], &t[2], 1e-5)?, 10)), vec![x4.clone(), gamma, beta]),
        ("gelu", Box::new(|t| weighted_sum(&t[0].gelu(), 11)), vec![v.clone()]),
        ("relu", Box::new(|t| weighted_sum(&t[0].relu(), 12)), vec![v.clone()]),
        ("tanh", Box::new(|t| weighted_sum(&t[0].tanh(), 13)), vec![v.clone()]),
        ("sigmoid", Box::new(|t| weighted_sum(&t[0].sigmoid(), 14)), vec![v.clone()]),
        ("exp", Box::new(|t| weighted_sum(&t[0].exp(), 15)), vec![v.clone()]),
        ("softmax", Box::new(|t| weighted_sum(&t[0].softmax(), 16)), vec![v.clone()]),
        ("log_softmax", Box::new(|t| weighted_sum(&t[0].log_softmax(), 17)), vec![v.clone()]),
        ("add/sub/mul", Box::new(|t| weighted_sum(&t[0].add(&t[1])?.mul(&t[0])?.sub(&t[1])?, 18)), vec![v.clone(), v2.clone()]),
        ("div", Box::new(|t| weighted_sum(&t[0].div(&t[1])?, 19)), vec![v.clone(), den]),
        (
            "scalar ops",
            Box::new(|t| weighted_sum(&t[0].add_scalar(0.3).mul_scalar(-1.7).div_scalar(2.5)?.neg(), 20)),
            vec![v.clone()],
        ),
        ("pow2/abs", Box::new(|t| Ok(t[0].mul(&t[1])?.add(&t[0].abs())?.pow2().sum())), vec![v.clone(), v2.clone()]),
        ("mean/max", Box::new(|t| Ok(t[0].mean().add(&t[0].max_reduce())?)), vec![v.clone()]),
        ("matmul", Box::new(|t| weighted_sum(&t[0].matmul(&t[1])?, 21)), vec![m1, m2]),
        ("reshape/select", Box::new(|t| Ok(t[0].reshape(&[2, 2, 6, 5])?.select(17)?.mul_scalar(3.0))), vec![x4.clone()]),
        ("concat", Box::new(|t| weighted_sum(&concat(&[t[0].clone(), t[0].mul_scalar(2.0)], 1)?, 22)), vec![x4.clone()]),
        ("gather", Box::new(move |t| weighted_sum(&t[0].gather(&[4], gather.clone())?, 23)), vec![v.clone()]),
        ("spmv", Box::new(move |t| weighted_sum(&t[0].spmv(csr.clone(), &[3])?, 24)), vec![v.clone()]),
    ];
    let mut worst: (f64, &str) = (0.0, "");
    let mut failed = Vec::new();
    for (name, f, inputs) in &cases {
        let r = gradcheck(f, inputs, 1e-5, 1e-6)?;
        if r.worst() > worst.0 {
            worst = (r.worst(), name);
        }
        if !r.passed() {
            failed.push(*name);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok(Check::new(
        failed.is_empty() && secs < 120.0,
        format!("{} ops, worst rel. error {:.1e} ({}), {secs:.1} s{}", cases.len(), worst.0, worst.1, if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }),
    ))
}

fn grid(n: usize, f: impl Fn(f64, f64) -> f64) -> (Tensor, f64) {
    let h = 1.0 / (n - 1) as f64;
    let v = (0..n * n).map(|k| f((k % n) as f64 * h, (k / n) as f64 * h)).collect();
    (Tensor::new(v, &[1, 1, n, n]).unwrap(), h)
}

/// Largest `|stencil(u) - exact|` over nodes the stencil fits on.
fn stencil_error(n: usize, family: KernelFamily, d: Derivative, u: impl Fn(f64, f64) -> f64, exact: impl Fn(f64, f64) -> f64) -> Res<f64> {
    let (t, h) = grid(n, u);
    let k = StencilKernel::new(family, d, h)?;
    let out = apply_stencil(&t, &k)?.to_vec();
    let (ry, rx) = k.radius();
    let mut worst = 0.0f64;
    for i in ry..n - ry {
        for j in rx..n - rx {
            worst = worst.max((out[i * n + j] - exact(j as f64 * h, i as f64 * h)).abs());
        }
    }
    Ok(worst)
}

fn laplacian_error(n: usize, family: KernelFamily) -> Res<f64> {
    let u = |x: f64, y: f64| (PI * x).sin() * (2.0 * PI * y).cos() + (x * y).exp();
    let lap = |x: f64, y: f64| -5.0 * PI * PI * (PI * x).sin() * (2.0 * PI * y).cos() + (x * x + y * y) * (x * y).exp();
    let (t, h) = grid(n, u);
    let kxx = StencilKernel::new(family, Derivative::Dxx, h)?;
    let kyy = StencilKernel::new(family, Derivative::Dyy, h)?;
    let out = laplacian(&t, &kxx, &kyy, &Geometry::Cartesian { dx: h, dy: h }, 0)?.to_vec();
    let r = family.second_radius();
    let mut worst = 0.0f64;
    for i in r..n - r {
        for j in r..n - r {
            worst = worst.max((out[i * n + j] - lap(j as f64 * h, i as f64 * h)).abs());
        }
    }
    Ok(worst)
}

/// Polynomial exactness on 64×64 grids and the convergence order of the
/// discrete Laplacian under halving of h.
pub fn stencil_suite() -> Res<Check> {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
    let quad = |x: f64, y: f64| c[0] * x * x + c[1] * x * y + c[2] * y * y + c[3] * x + c[4] * y + c[5];
    // quartic: Σ c[k,l] x^k y^l over k + l ≤ 4
    let mono: Vec<(i32, i32)> = (0..=4).flat_map(|k| (0..=4 - k).map(move |l| (k, l))).collect();
    let quart = |x: f64, y: f64| mono.iter().zip(&c).map(|(&(k, l), a)| a * x.powi(k) * y.powi(l)).sum::<f64>();
    let quart_xx = |x: f64, y: f64| {
        mono.iter().zip(&c).filter(|m| m.0 .0 >= 2).map(|(&(k, l), a)| a * (k * (k - 1)) as f64 * x.powi(k - 2) * y.powi(l)).sum::<f64>()
    };
    let quart_yy = |x: f64, y: f64| {
        mono.iter().zip(&c).filter(|m| m.0 .1 >= 2).map(|(&(k, l), a)| a * (l * (l - 1)) as f64 * x.powi(k) * y.powi(l - 2)).sum::<f64>()
    };
    let lin = |x: f64, y: f64| c[6] * x + c[7] * y + c[8];
    let mut worst = 0.0f64;
    let mut note = String::new();
    let mut record = |name: &str, e: f64| {
        worst = worst.max(e);
        if e >= TOL {
            let _ = write!(note, " {name}={e:.1e}");
        }
    };
    record("c2 xx", stencil_error(64, KernelFamily::Central2, Derivative::Dxx, quad, |_, _| 2.0 * c[0])?);
    record("c2 yy", stencil_error(64, KernelFamily::Central2, Derivative::Dyy, quad, |_, _| 2.0 * c[2])?);
    record("c4 xx", stencil_error(64, KernelFamily::Central4, Derivative::Dxx, quart, quart_xx)?);
    record("c4 yy", stencil_error(64, KernelFamily::Central4, Derivative::Dyy, quart, quart_yy)?);
    for fam in [KernelFamily::Sobel3, KernelFamily::Sobel5] {
        record("sobel x", stencil_error(64, fam, Derivative::Dx, lin, |_, _| c[6])?);
        record("sobel y", stencil_error(64, fam, Derivative::Dy, lin, |_, _| c[7])?);
    }
    let r2 = laplacian_error(17, KernelFamily::Central2)? / laplacian_error(33, KernelFamily::Central2)?;
    let r4 = laplacian_error(17, KernelFamily::Central4)? / laplacian_error(33, KernelFamily::Central4)?;
    let ok_ratio = (r2 / 4.0 - 1.0).abs() <= 0.2 && (r4 / 16.0 - 1.0).abs() <= 0.2;
    Ok(Check::new(
        worst < TOL && ok_ratio,
        format!("max exactness error {worst:.1e}{note}; halving ratios central2 {r2:.2} (4), central4 {r4:.2} (16)"),
    ))
}

/// The vanilla genome's loss against mean squared residual plus mean squared
/// boundary mismatch computed directly, on random 8×8 Poisson batches.
pub fn vanilla_equivalence(trials: usize) -> Res<Check> {
    let (n, h, w) = (3usize, 8usize, 8usize);
    let (dx, dy) = (1.0 / (w - 1) as f64, 1.0 / (h - 1) as f64);
    let eval = LossEvaluator::new(LossGenome::vanilla(), PdeKind::Poisson)?;
    let mut worst = 0.0f64;
    for seed in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let u: Vec<f64> = (0..n * h * w).map(|_| rng.random_range(-2.0..12.0)).collect();
        let f: Vec<f64> = (0..n * h * w).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mut bcs = Vec::new();
        let mut g = Vec::new();
        for _ in 0..n {
            let (a, b, c) = (rng.random_range(0.0..10.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let gs = move |i: usize, j: usize| a + b * j as f64 * dx + c * (i as f64 * dy).powi(2);
            bcs.push(BoundarySpec {
                top: EdgeCondition::Dirichlet { values: (0..w).map(|j| gs(0, j)).collect() },
                bottom: EdgeCondition::Dirichlet { values: (0..w).map(|j| gs(h - 1, j)).collect() },
                left: EdgeCondition::Dirichlet { values: (0..h).map(|i| gs(i, 0)).collect() },
                right: EdgeCondition::Dirichlet { values: (0..h).map(|i| gs(i, w - 1)).collect() },
                geometry: Geometry::Cartesian { dx, dy },
            });
            g.push(gs);
        }
        let pred = Tensor::new(u.clone(), &[n, 1, h, w])?;
        let input = Tensor::new(f.clone(), &[n, 1, h, w])?;
        let mut state = WeightState::new(WeightOp::Unitize, n, h * w);
        let samples: Vec<usize> = (0..n).collect();
        let got = eval
            .evaluate(LossBatch { pred: &pred, input: &input, bcs: &bcs, samples: &samples }, &mut state)?
            .total
            .item();

        let at = |s: usize, i: usize, j: usize| u[(s * h + i) * w + j];
        let (mut lr, mut nr, mut lb, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for s in 0..n {
            for i in 1..h - 1 {
                for j in 1..w - 1 {
                    let uxx = (at(s, i, j + 1) - 2.0 * at(s, i, j) + at(s, i, j - 1)) / (dx * dx);
                    let uyy = (at(s, i + 1, j) - 2.0 * at(s, i, j) + at(s, i - 1, j)) / (dy * dy);
                    let r = uxx + uyy + f[(s * h + i) * w + j];
                    lr += r * r;
                    nr += 1.0;
                }
            }
            let mut edge = |i: usize, j: usize| {
                let d = at(s, i, j) - g[s](i, j);
                lb += d * d;
                nb += 1.0;
            };
            for j in 0..w {
                edge(0, j);
                edge(h - 1, j);
            }
            for i in 0..h {
                edge(i, 0);
                edge(i, w - 1);
            }
        }
        let want = lr / nr + lb / nb;
        worst = worst.max((got - want).abs() / want.abs());
    }
    Ok(Check::new(worst < 1e-12, format!("{trials} random batches, max relative difference {worst:.1e}")))
}

fn dense_solve(sys: &SparseSystem) -> Vec<f64> {
    let n = sys.rhs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in sys.matrix.row(i) {
            a[(i, j)] = v;
        }
    }
    a.lu().solve(&DVector::from_column_slice(&sys.rhs)).expect("nonsingular").as_slice().to_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn manufactured_error(n: usize) -> Res<f64> {
    let h = 1.0 / (n - 1) as f64;
    let bump = |k: usize| (PI * (k % n) as f64 * h).sin() * (PI * (k / n) as f64 * h).sin();
    let f: Vec<f64> = (0..n * n).map(|k| 2.0 * PI * PI * bump(k)).collect();
    let u = solve_poisson_fd(&f, &unit_square_bc(n, n, 10.0), n, n)?;
    Ok((0..n * n).map(|k| (u[k] - 10.0 - bump(k)).abs()).fold(0.0, f64::max))
}

/// CG against a dense LU solve, a manufactured Poisson solution at two
/// resolutions, and conservation of the Darcy flux.
pub fn solver_suite() -> Res<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f: Vec<f64> = (0..64).map(|_| rng.random_range(-20.0..20.0)).collect();
    let (ps, _) = poisson_system(&f, &unit_square_bc(8, 8, 10.0), 8, 8)?;
    let k: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0f64..1.0).exp()).collect();
    let (ds, _) = darcy_system(&k, &darcy_bc(8, 8, 1.0, 0.0), 8, 8)?;
    let mut cg_gap = 0.0f64;
    for sys in [&ps, &ds] {
        let (x, _) = sys.solve(1e-12, 1000)?;
        cg_gap = cg_gap.max(max_diff(&x, &dense_solve(sys)));
    }

    const C: f64 = 1.0;
    let (e1, e2) = (manufactured_error(17)?, manufactured_error(33)?);
    let (h1, h2) = (1.0 / 16.0, 1.0 / 32.0);
    let manufactured_ok = e1 < C * h1 * h1 && e2 < C * h2 * h2;

    let spec = GrfSpec { sigma0: 1.0, length_scale: 0.5, n_modes: 64, rows: 32, cols: 32 };
    let basis = kl_expansion(&spec)?;
    let kf: Vec<f64> = sample_grf(&basis, &mut stream(9, "flux", 0)).iter().map(|v| v.exp()).collect();
    let bc = darcy_bc(32, 32, 1.0, 0.0);
    let (dy, dx) = bc.geometry.spacing(32, 32);
    let u = solve_darcy_fv(&kf, &bc, 32, 32)?;
    let cuts = darcy_flux_cuts(&kf, &u, 32, 32, dy, dx);
    let mean = cuts.iter().sum::<f64>() / cuts.len() as f64;
    let imbalance = cuts.iter().map(|c| (c - mean).abs()).fold(0.0, f64::max) / mean.abs();

    Ok(Check::new(
        cg_gap < 1e-6 && manufactured_ok && imbalance < 1e-8,
        format!(
            "CG vs dense {cg_gap:.1e}; manufactured error/h² {:.3} (h=1/16), {:.3} (h=1/32), C = {C}; Darcy flux imbalance {imbalance:.1e}",
            e1 / (h1 * h1),
            e2 / (h2 * h2)
        ),
    ))
}

/// Orthonormal modes, covariance reconstruction at full rank and the
/// pointwise variance of sampled fields.
pub fn grf_suite(samples: usize) -> Res<Check> {
    let full = GrfSpec { sigma0: 1.3, length_scale: 0.5, n_modes: 30, rows: 6, cols: 5 };
    let b = kl_expansion(&full)?;
    let mut ortho = 0.0f64;
    for (a, pa) in b.modes.iter().enumerate() {
        for (c, pc) in b.modes.iter().enumerate() {
            let d: f64 = pa.iter().zip(pc).map(|(x, y)| x * y).sum();
            ortho = ortho.max((d - if a == c { 1.0 } else { 0.0 }).abs());
        }
    }
    let pts: Vec<(f64, f64)> = (0..30).map(|k| ((k % 5) as f64 / 4.0, (k / 5) as f64 / 5.0)).collect();
    let mut frob = 0.0;
    for p in 0..30 {
        for q in 0..30 {
            let d2 = (pts[p].0 - pts[q].0).powi(2) + (pts[p].1 - pts[q].1).powi(2);
            let want = full.sigma0 * full.sigma0 * (-d2 / (full.length_scale * full.length_scale)).exp();
            let got: f64 = b.eigenvalues.iter().zip(&b.modes).map(|(l, m)| l * m[p] * m[q]).sum();
            frob += (got - want).powi(2);
        }
    }
    let frob = frob.sqrt();

    let spec = GrfSpec { sigma0: 1.0, length_scale: 0.5, n_modes: 10, rows: 30, cols: 30 };
    let b = kl_expansion(&spec)?;
    let mut rng = stream(3, "grf/mc", 0);
    let mut s2 = vec![0.0; 900];
    for _ in 0..samples {
        for (acc, v) in s2.iter_mut().zip(sample_grf(&b, &mut rng)) {
            *acc += v * v;
        }
    }
    let mut var_err = 0.0f64;
    for (p, acc) in s2.iter().enumerate() {
        let want: f64 = b.eigenvalues.iter().zip(&b.modes).map(|(l, m)| l * m[p] * m[p]).sum();
        var_err = var_err.max((acc / samples as f64 / want - 1.0).abs());
    }
    Ok(Check::new(
        ortho < 1e-10 && frob < 1e-8 && var_err < 0.05,
        format!("orthonormality {ortho:.1e}; covariance Frobenius error {frob:.1e}; worst variance deviation {:.2}% over {samples} samples", 100.0 * var_err),
    ))
}

/// Evaluations BO needs to hit a planted optimum of a smooth objective on
/// the encoded loss space.
pub fn bo_hits(space: &LossSpace, seed: u64) -> Res<usize> {
    let mut rng = stream(seed, "planted/bo", 0);
    let target = rng.random_range(0..space.len());
    let ft = &space.features[target];
    let y = |i: usize| 0.05 + space.features[i].iter().zip(ft).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut observed: Vec<(usize, f64)> = Vec::new();
    let none = Default::default();
    while observed.len() < space.len() {
        let pick = bo_suggest(&space.features, &observed, &none, 1, 8, &mut rng)?;
        let i = pick[0];
        observed.push((i, y(i)));
        if i == target {
            return Ok(observed.len());
        }
    }
    Ok(space.len())
}

pub fn bo_planted(seeds: u64) -> Res<Check> {
    let space = LossSpace::enumerate(LossSpaceConfig::default())?;
    let mut hits: Vec<usize> = (0..seeds).map(|s| bo_hits(&space, s)).collect::<Res<_>>()?;
    hits.sort_unstable();
    let median = hits[hits.len() / 2];
    let limit = 0.3 * space.len() as f64;
    Ok(Check::new(
        (median as f64) <= limit,
        format!("median {median} of {} evaluations (limit {limit:.0}), range {}..{}", space.len(), hits[0], hits[hits.len() - 1]),
    ))
}

/// A random ledger of validation traces: decaying curves with noise, some
/// completed, some cut short.
pub fn synthetic_ledger(rng: &mut impl Rng) -> Vec<TrialRecord> {
    let epochs = rng.random_range(5..40);
    let trials = rng.random_range(2..12);
    (0..trials)
        .map(|id| {
            let floor = rng.random_range(0.01..1.0);
            let start = floor + rng.random_range(0.0..2.0);
            let rate = rng.random_range(0.02..0.5);
            let completed = rng.random_bool(0.7);
            let len = if completed { epochs } else { rng.random_range(1..=epochs) };
            let trace: Vec<f64> = (0..len)
                .map(|t| floor + (start - floor) * (-rate * t as f64).exp() + rng.random_range(0.0..0.05))
                .collect();
            TrialRecord {
                id,
                candidate: id,
                genome: LossGenome::vanilla(),
                status: if completed { TrialStatus::Completed } else { TrialStatus::Stopped },
                best: trace.iter().copied().fold(f64::INFINITY, f64::min),
                trace,
            }
        })
        .collect()
}

/// Number of (trial, epoch) points in `ledger` where the incumbent (a
/// trial at least as good so far as every completed trial) gets stopped.
pub fn incumbent_stops(ledger: &[TrialRecord]) -> usize {
    let completed: Vec<TrialRecord> = ledger.iter().filter(|t| t.status == TrialStatus::Completed).cloned().collect();
    let mut bad = 0;
    for t in ledger {
        for e in 1..=t.trace.len() {
            let incumbent = completed.iter().all(|c| t.best_so_far(e) <= c.best_so_far(e));
            if incumbent && median_stop_check(t, &completed, e, 1) {
                bad += 1;
            }
        }
    }
    bad
}

pub fn median_property(ledgers: u64) -> Check {
    let mut bad = 0;
    let mut points = 0;
    for s in 0..ledgers {
        let ledger = synthetic_ledger(&mut stream(s, "median/ledger", 0));
        points += ledger.iter().map(|t| t.trace.len()).sum::<usize>();
        bad += incumbent_stops(&ledger);
    }
    Check::new(bad == 0, format!("{ledgers} ledgers, {points} trial-epochs checked, {bad} incumbent stops"))
}

pub fn bandit(seeds: u64) -> Res<Check> {
    let started = Instant::now();
    let mut probs = Vec::new();
    for seed in 0..seeds {
        let mut c = Controller::new(&[2], ControllerConfig::default(), seed)?;
        let mut rng = stream(seed, "bandit", 0);
        for _ in 0..200 {
            let (g, _) = c.sample(&mut rng)?;
            let r = if g.choices[0] == 0 { 1.0 } else { 0.1 };
            c.reinforce_update(&g, r)?;
        }
        probs.push(c.probabilities(&picnn_core::arch::ArchGenome::new(vec![0]))?[0][0]);
    }
    probs.sort_by(f64::total_cmp);
    let median = probs[probs.len() / 2];
    let secs = started.elapsed().as_secs_f64();
    Ok(Check::new(median > 0.9 && secs < 10.0, format!("median best-arm probability {median:.3} after 200 updates, {secs:.2} s")))
}

/// One slot: learnable conv, identity, box blur, zero.
struct IdentitySlot {
    w: Tensor,
}

impl Supernet for IdentitySlot {
    fn slot_sizes(&self) -> Vec<usize> {
        vec![4]
    }
    fn weights(&self) -> Vec<Tensor> {
        vec![self.w.clone()]
    }
    fn forward_with(&self, x: &Tensor, sel: Selection<'_>) -> picnn_core::Result<Tensor> {
        let ops = [
            conv2d(x, &self.w, None, 1, PaddingSpec::Same)?,
            x.clone(),
            avgpool2d(x, 3, 1, PaddingSpec::Same)?,
            x.mul_scalar(0.0),
        ];
        Ok(match sel {
            Selection::Path(c) => ops[c[0]].clone(),
            Selection::Mixed(p) => {
                let mut acc = ops[0].mul(&p[0].select(0)?)?;
                for (k, o) in ops.iter().enumerate().skip(1) {
                    acc = acc.add(&o.mul(&p[0].select(k)?)?)?;
                }
                acc
            }
        })
    }
}

struct Reconstruct(ChaCha8Rng);

impl Reconstruct {
    fn mse(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> picnn_core::Result<Tensor> {
        let v: Vec<f64> = (0..128).map(|_| self.0.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(v, &[2, 1, 8, 8])?;
        Ok(net.forward_with(&x, sel)?.sub(&x)?.pow2().mean())
    }
}

impl OneShotTask for Reconstruct {
    fn train_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> picnn_core::Result<Tensor> {
        self.mse(net, sel)
    }
    fn val_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> picnn_core::Result<Tensor> {
        self.mse(net, sel)
    }
}

pub fn darts_identity() -> Res<Check> {
    let mut rng = stream(4, "darts/w", 0);
    let w: Vec<f64> = (0..9).map(|_| rng.random_range(-0.3..0.3)).collect();
    let net = IdentitySlot { w: Tensor::parameter(w, &[1, 1, 3, 3])? };
    let cfg = DartsConfig { steps: 200, ..Default::default() };
    let res = darts_search(&net, &mut Reconstruct(stream(4, "darts/data", 0)), &cfg)?;
    let chosen = res.genome.choices[0];
    Ok(Check::new(
        chosen == 1 && res.max_normalization_error < 1e-9,
        format!("argmax α = candidate {chosen} (identity is 1) after {} steps; max softmax normalization error {:.1e}", res.trace.len(), res.max_normalization_error),
    ))
}

struct Noise(ChaCha8Rng);

impl OneShotTask for Noise {
    fn train_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> picnn_core::Result<Tensor> {
        let v: Vec<f64> = (0..2 * 16 * 16).map(|_| self.0.random_range(-1.0..1.0)).collect();
        Ok(net.forward_with(&Tensor::new(v, &[2, 1, 16, 16])?, sel)?.pow2().mean())
    }
    fn val_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> picnn_core::Result<Tensor> {
        self.train_loss(net, sel)
    }
}

/// After one child step on a sampled path, count parameters outside the
/// path that changed and parameters on it that moved.
pub fn enas_isolation() -> Res<Check> {
    let mut untouched_moved = 0;
    let mut sampled_moved = 0;
    let mut checked = 0;
    for space in [
        SearchSpace::cnn_stack(1, &[4, 8, 8, 4], true)?,
        SearchSpace::unet_entire(1, 4, 2)?,
        SearchSpace::unet_cell(1, 4, 2)?,
    ] {
        let net = ArchNet::supernet(&space, 7)?;
        let g = space.uniform_genome(1);
        let snapshot = |net: &ArchNet| -> Vec<Vec<Vec<u64>>> {
            (0..space.layout.len())
                .map(|l| {
                    let k = space.slots[space.layout[l].slot].candidates.len();
                    (0..k).flat_map(|c| net.candidate_parameters(l, c)).map(|p| p.to_vec().iter().map(|v| v.to_bits()).collect()).collect()
                })
                .collect()
        };
        let before = snapshot(&net);
        let mut opt = AdamState::new(&net.weights(), 1e-2);
        enas_child_step(&net, &mut Noise(stream(0, "enas", 0)), &g, &mut opt)?;
        let after = snapshot(&net);
        for (l, pos) in space.layout.iter().enumerate() {
            let k = space.slots[pos.slot].candidates.len();
            let mut idx = 0;
            for c in 0..k {
                for _ in net.candidate_parameters(l, c) {
                    let same = before[l][idx] == after[l][idx];
                    idx += 1;
                    checked += 1;
                    if c != g.choices[pos.slot] {
                        untouched_moved += usize::from(!same);
                    } else {
                        sampled_moved += usize::from(!same);
                    }
                }
            }
        }
    }
    Ok(Check::new(
        untouched_moved == 0 && sampled_moved > 0,
        format!("{checked} candidate tensors in 3 spaces; {untouched_moved} untouched tensors changed, {sampled_moved} sampled tensors updated"),
    ))
}
