//! Acceptance suite: one pass/fail line per criterion.
//!
//! Set `ICREG_ACCEPTANCE_OUT` to keep the zoo and grid artifacts.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use icreg::grid::{median, run_affine_grid, ExperimentGridSpec, GridReport};
use icreg::jobs::resolve_workers;
use icreg::zoo::{run_zoo, ZooModel, ZooOptions, ZooReport};
use icreg_core::autodiff::{check_gradients, PadMode, Tape, Tensor, Var};
use icreg_core::data::Dataset;
use icreg_core::lie::{
    compose, exponentiate, identity_grid, interior_points, mat_exp, norm1, rk4_flow, svf_exp, Dense, ExpSettings, LieAlgebraElement,
    MlpVelocity, MlpWeights, Transform, DEFAULT_RK4_STEPS, DEFAULT_SQUARING_STEPS, MLP_WIDTHS,
};
use icreg_core::losses::{bending_energy, dice, jacobian_stats, landmark_mtre, lncc};
use icreg_core::nets::{zoo_descriptor, Composition, Parameterization, RegistrationModel, GRID_PARAMS, ZOO_MODELS};
use icreg_core::train::{evaluate_pair, instance_optimize, Adam, DataSource, Objective, DEFAULT_INSTANCE_STEPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

const AFFINE_ICE: f64 = 1e-10;
const DENSE_ICE: f64 = 5e-2;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ice_bound(model: &RegistrationModel) -> f64 {
    if model.has_dense_steps() {
        DENSE_ICE
    } else {
        AFFINE_ICE
    }
}

fn zoo_source() -> DataSource {
    DataSource::BlobDigits { count: 120, size: 32, seed: 3 }
}

fn zoo_options() -> ZooOptions {
    ZooOptions {
        iterations: 500,
        batch_size: 2,
        held_out: 20,
        eval_pairs: 10,
        ..ZooOptions::default()
    }
}

fn grid_spec() -> ExperimentGridSpec {
    ExperimentGridSpec::new(DataSource::TriCirc { count: 200, size: 32, seed: 7 }, 400, (0..5).collect())
}

fn artifacts(name: &str) -> (Option<tempfile::TempDir>, PathBuf) {
    match std::env::var_os("ICREG_ACCEPTANCE_OUT") {
        Some(root) => (None, PathBuf::from(root).join(name)),
        None => {
            let dir = tempfile::tempdir().expect("temporary directory");
            let path = dir.path().to_path_buf();
            (Some(dir), path)
        }
    }
}

// ---------------------------------------------------------------- oracles

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn weighted_sum<'t>(out: &Var<'t>, seed: u64) -> icreg_core::Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = out.tape().constant(rand_tensor(&mut rng, out.shape(), -1.0, 1.0));
    out.mul(&w)?.sum()
}

fn matmul3(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; 9];
    for i in 0..3 {
        for k in 0..3 {
            for j in 0..3 {
                c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
            }
        }
    }
    c
}

fn taylor30(m: &[f64]) -> Vec<f64> {
    let mut term = Tensor::eye(3).to_vec();
    let mut sum = term.clone();
    for k in 1..30 {
        term = matmul3(&term, m).into_iter().map(|v| v / k as f64).collect();
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
    }
    sum
}

fn smooth_field(n: usize, amp: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let id = identity_grid(n, n);
    Tensor::from_fn(&[n, n, 2], |k| {
        let (x, y) = (id.data()[k - k % 2], id.data()[k - k % 2 + 1]);
        let o = 4 * (k % 2);
        amp * (c[o] * (3.0 * x + c[o + 1]).sin() + c[o + 2] * (2.5 * y + c[o + 3]).cos())
    })
}

fn interp(field: &Tensor, n: usize, p: [f64; 2]) -> [f64; 2] {
    let px = (p[0] * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let py = (p[1] * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let (j0, i0) = (px.floor() as usize, py.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(n - 1), (i0 + 1).min(n - 1));
    let (fx, fy) = (px - j0 as f64, py - i0 as f64);
    let at = |i: usize, j: usize, c: usize| field.data()[(i * n + j) * 2 + c];
    [0, 1].map(|c| (1.0 - fy) * ((1.0 - fx) * at(i0, j0, c) + fx * at(i0, j1, c)) + fy * ((1.0 - fx) * at(i1, j0, c) + fx * at(i1, j1, c)))
}

fn rk4_dense(field: &Tensor, n: usize, p: [f64; 2], steps: usize) -> [f64; 2] {
    let dt = 1.0 / steps as f64;
    let mut x = p;
    for _ in 0..steps {
        let k1 = interp(field, n, x);
        let k2 = interp(field, n, [x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
        let k3 = interp(field, n, [x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
        let k4 = interp(field, n, [x[0] + dt * k3[0], x[1] + dt * k3[1]]);
        for c in 0..2 {
            x[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
    }
    x
}

/// Max point distance in pixels on an `n`-pixel-wide grid.
fn max_px(a: &Tensor, b: &Tensor, n: usize) -> f64 {
    a.data()
        .chunks(2)
        .zip(b.data().chunks(2))
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]) * n as f64)
        .fold(0.0, f64::max)
}

fn hom<'t>(tape: &'t Tape, m: [f64; 6]) -> Var<'t> {
    tape.constant(Tensor::new(&[3, 3], vec![m[0], m[1], m[2], m[3], m[4], m[5], 0.0, 0.0, 0.0]).unwrap())
}

fn oracle_mat_exp() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let raw = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        let target = rng.gen_range(0.01..=1.0);
        let m = raw.map(|v| v * target / norm1(&raw));
        let tape = Tape::new();
        let e = mat_exp(&tape.constant(m.clone())).map_err(|e| e.to_string())?;
        let want = taylor30(m.data());
        let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = e.data().iter().zip(&want).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    ensure(worst < 1e-10, || format!("mat_exp relative error {worst:.2e}"))?;
    Ok(format!("mat_exp {worst:.1e}"))
}

fn oracle_svf() -> Check {
    let n = 32;
    let mut worst = 0.0f64;
    for seed in [21, 22, 23] {
        let field = smooth_field(n, 0.05, seed);
        let tape = Tape::new();
        let e = svf_exp(&tape.constant(field.clone()), DEFAULT_SQUARING_STEPS).map_err(|e| e.to_string())?;
        let id = identity_grid(n, n);
        for i in 2..n - 2 {
            for j in 2..n - 2 {
                let p = 2 * (i * n + j);
                let want = rk4_dense(&field, n, [id.data()[p], id.data()[p + 1]], 200);
                worst = worst.max((e.data()[p] - want[0]).hypot(e.data()[p + 1] - want[1]));
            }
        }
    }
    ensure(worst < 0.005, || format!("svf_exp vs dense flow {worst:.2e} of width"))?;
    Ok(format!("svf_exp {worst:.1e}"))
}

fn oracle_rk4() -> Check {
    let a = [[0.25, -0.6], [0.4, -0.1]];
    let tape = Tape::new();
    let pts = tape.constant(interior_points(16, 16, 2));
    let weight = tape.constant(Tensor::new(&[2, 2], vec![a[0][0] / 2.0, a[1][0] / 2.0, a[0][1] / 2.0, a[1][1] / 2.0]).unwrap());
    let bias = tape.constant(Tensor::zeros(&[1, 2]));
    let v = MlpVelocity {
        plus: MlpWeights {
            layers: vec![Dense { weight, bias }],
        },
        minus: None,
    };
    let flow = rk4_flow(&v, 1.0, DEFAULT_RK4_STEPS, &pts).map_err(|e| e.to_string())?;
    let g = LieAlgebraElement::hom_matrix(hom(&tape, [a[0][0], a[0][1], 0.0, a[1][0], a[1][1], 0.0])).unwrap();
    let want = exponentiate(g, 1.0, ExpSettings::default()).unwrap().apply_points(&pts).unwrap();
    let worst = max_px(flow.value(), want.value(), 1);
    ensure(worst < 1e-8, || format!("rk4 on linear field {worst:.2e}"))?;
    Ok(format!("rk4 {worst:.1e}"))
}

fn oracle_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let pos = rand_tensor(&mut rng, &[3, 4], 0.5, 2.0);
    let kinky = Tensor::from_fn(&[3, 4], |k| if k % 2 == 0 { 0.3 + 0.1 * k as f64 } else { -0.4 - 0.1 * k as f64 });
    let m = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let cube = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let img = rand_tensor(&mut rng, &[2, 6, 8], -1.0, 1.0);
    let x = rand_tensor(&mut rng, &[3, 7, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3], -1.0, 1.0);
    let bias = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    let image = rand_tensor(&mut rng, &[5, 6, 2], -1.0, 1.0);
    let gray = rand_tensor(&mut rng, &[5, 6], -1.0, 1.0);
    let coords = Tensor::from_fn(&[7, 2], |i| {
        let n = if i % 2 == 0 { 6.0 } else { 5.0 };
        ((i * 3 % (n as usize - 1)) as f64 + 0.5 + 0.2 + 0.07 * (i % 7) as f64) / n
    });
    let smooth = rand_tensor(&mut rng, &[12, 12], 0.0, 1.0);
    let other = rand_tensor(&mut rng, &[12, 12], 0.0, 1.0);
    let vel = rand_tensor(&mut rng, &[7, 6, 2], -0.1, 0.1);

    type F = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> icreg_core::Result<Var<'t>>>;
    let cases: Vec<(&str, Vec<Tensor>, F)> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|_, v| weighted_sum(&v[0].add(&v[1])?, 1))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|_, v| weighted_sum(&v[0].sub(&v[1])?, 1))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|_, v| weighted_sum(&v[0].mul(&v[1])?, 1))),
        ("div", vec![a.clone(), pos.clone()], Box::new(|_, v| weighted_sum(&v[0].div(&v[1])?, 1))),
        ("scalar_mul", vec![a.clone()], Box::new(|_, v| weighted_sum(&v[0].scale(-2.5)?, 1))),
        ("add_scalar", vec![a.clone()], Box::new(|_, v| weighted_sum(&v[0].add_scalar(0.7)?.square()?, 1))),
        ("matmul", vec![a.clone(), m], Box::new(|_, v| weighted_sum(&v[0].matmul(&v[1])?, 2))),
        ("transpose", vec![cube.clone()], Box::new(|_, v| weighted_sum(&v[0].permute(&[1, 2, 0])?, 3))),
        ("reshape", vec![a.clone()], Box::new(|_, v| weighted_sum(&v[0].reshape(&[2, 6])?, 4))),
        ("concat", vec![a.clone(), b.clone()], Box::new(|_, v| weighted_sum(&Var::concat(&[&v[0], &v[1]], 1)?, 5))),
        ("slice", vec![cube.clone()], Box::new(|_, v| weighted_sum(&v[0].slice(1, 1, 2)?, 6))),
        ("sum", vec![cube.clone()], Box::new(|_, v| weighted_sum(&v[0].sum_axis(1)?, 7))),
        ("mean", vec![cube.clone()], Box::new(|_, v| weighted_sum(&v[0].mean_axis(2)?, 7))),
        ("square", vec![a.clone()], Box::new(|_, v| weighted_sum(&v[0].square()?, 8))),
        ("sqrt", vec![pos.clone()], Box::new(|_, v| weighted_sum(&v[0].sqrt()?, 8))),
        ("exp", vec![a.clone()], Box::new(|_, v| weighted_sum(&v[0].exp()?, 8))),
        ("tanh", vec![a.clone()], Box::new(|_, v| weighted_sum(&v[0].tanh()?, 8))),
        ("leaky_relu", vec![kinky.clone()], Box::new(|_, v| weighted_sum(&v[0].leaky_relu()?, 9))),
        ("clamp", vec![kinky.clone()], Box::new(|_, v| weighted_sum(&v[0].clamp(-0.35, 0.35)?.add(&v[0])?, 9))),
        ("avg_pool2", vec![img.clone()], Box::new(|_, v| weighted_sum(&v[0].avg_pool2()?, 10))),
        ("upsample2", vec![img.clone()], Box::new(|_, v| weighted_sum(&v[0].upsample2()?, 10))),
        ("pad", vec![img.clone()], Box::new(|_, v| weighted_sum(&v[0].pad(&[0, 2, 1], &[0, 1, 3], PadMode::Replicate)?, 11))),
        ("gaussian_blur", vec![img.clone()], Box::new(|_, v| weighted_sum(&v[0].gaussian_blur(1.3)?, 12))),
        ("conv2d", vec![x.clone(), w.clone(), bias.clone()], Box::new(|_, v| weighted_sum(&v[0].conv2d(&v[1], Some(&v[2]), 2)?, 13))),
        ("grid_sample", vec![image, coords.clone()], Box::new(|_, v| weighted_sum(&v[0].grid_sample(&v[1])?, 14))),
        ("grid_sample_gray", vec![gray, coords], Box::new(|_, v| weighted_sum(&v[0].grid_sample(&v[1])?, 14))),
        ("lncc", vec![smooth, other], Box::new(|_, v| lncc(&v[0], &v[1], 2.0))),
        ("bending_energy", vec![vel], Box::new(|_, v| bending_energy(&v[0]))),
    ];
    let mut worst = (0.0f64, "");
    for (name, inputs, f) in &cases {
        let r = check_gradients(inputs, 1e-6, f).map_err(|e| format!("{name}: {e}"))?;
        if r.max_rel_err > worst.0 {
            worst = (r.max_rel_err, name);
        }
    }
    ensure(worst.0 < 1e-5, || format!("{} gradient relative error {:.2e}", worst.1, worst.0))?;
    Ok(format!("{} gradients {:.1e}", cases.len(), worst.0))
}

fn oracle_square_root() -> Check {
    let n = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tape = Tape::new();
    let pts = tape.constant(interior_points(n, n, 2));
    let count = icreg_core::lie::mlp_param_count(&MLP_WIDTHS);
    let mut flat = || MlpWeights::from_flat(&tape.constant(rand_tensor(&mut rng, &[count], -0.4, 0.4)), &MLP_WIDTHS).unwrap();
    let mlp = MlpVelocity {
        plus: flat(),
        minus: Some(flat()),
    };
    let families = [
        (
            "affine",
            LieAlgebraElement::hom_matrix(hom(&tape, [0.4, -0.7, 0.15, 0.3, -0.2, -0.1])).unwrap(),
            AFFINE_ICE,
        ),
        ("svf", LieAlgebraElement::velocity_grid(tape.constant(smooth_field(n, 0.04, 7))).unwrap(), DENSE_ICE),
        ("mlp", LieAlgebraElement::VelocityMlp(mlp), DENSE_ICE),
    ];
    let mut parts = Vec::new();
    for (name, g, tol) in families {
        let full = exponentiate(g, 1.0, ExpSettings::default()).map_err(|e| e.to_string())?;
        let half = full.sqrt().map_err(|e| e.to_string())?;
        let twice = compose(&half, &half).unwrap();
        let err = max_px(twice.apply_points(&pts).unwrap().value(), full.apply_points(&pts).unwrap().value(), n);
        ensure(err < tol, || format!("{name} square root {err:.2e} px"))?;
        parts.push(format!("{name} {err:.1e}"));
    }
    Ok(format!("sqrt {}", parts.join(" ")))
}

fn criterion_5() -> Check {
    let parts = [oracle_mat_exp()?, oracle_svf()?, oracle_rk4()?, oracle_gradients()?, oracle_square_root()?];
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- metrics

fn noise(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand_tensor(&mut rng, &[n, n], 0.0, 1.0)
}

fn criterion_6() -> Check {
    let tape = Tape::new();
    let s = jacobian_stats(&tape, &Transform::identity(), 32, 32).map_err(|e| e.to_string())?;
    let dev = s.dets.iter().fold(0.0f64, |a, d| a.max((d - 1.0).abs()));
    ensure(s.pct_neg == 0.0 && dev < 1e-12, || format!("identity Jacobian {}% negative, det deviation {dev:.1e}", s.pct_neg))?;
    for m in [[1.0, 0.0, 0.0, 0.0, -1.0, 0.0], [0.2, 1.0, 0.05, 1.0, 0.1, 0.0]] {
        let t = Transform::matrix(tape.constant(Tensor::new(&[3, 3], [&m[..], &[0.0, 0.0, 1.0]].concat()).unwrap())).unwrap();
        let s = jacobian_stats(&tape, &t, 32, 32).map_err(|e| e.to_string())?;
        ensure(s.pct_neg == 100.0, || format!("negative-determinant affine gives {}%", s.pct_neg))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let a: Vec<bool> = (0..256).map(|_| rng.gen_bool(0.3)).collect();
        let b: Vec<bool> = (0..256).map(|_| rng.gen_bool(0.6)).collect();
        let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let count = |m: &[bool]| m.iter().filter(|v| **v).count();
        let want = 2.0 * both as f64 / (count(&a) + count(&b)) as f64;
        let got = dice(&a, &b).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("dice {got} vs counted {want}"))?;
    }
    let half: Vec<bool> = (0..16).map(|k| k < 8).collect();
    let mid: Vec<bool> = (0..16).map(|k| (4..12).contains(&k)).collect();
    ensure(dice(&half, &mid).unwrap() == 0.5, || "dice of half-overlapping masks".into())?;

    let a = [[0.25, 0.375], [0.5, 0.5], [0.75, 0.125]];
    let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 3.0 / 32.0, p[1] + 4.0 / 32.0]).collect();
    let m = landmark_mtre(&a, &b, 32, 32).map_err(|e| e.to_string())?;
    ensure(m == 5.0, || format!("mtre {m} vs 5"))?;

    let mut worst_self = 1.0f64;
    let mut worst_sym = 0.0f64;
    for seed in 0..4 {
        let (x, y) = (noise(32, seed), noise(32, seed + 100));
        let tape = Tape::new();
        let (vx, vy) = (tape.constant(x.clone()), tape.constant(y));
        let affine = tape.constant(x.map(|v| 2.5 * v + 0.3));
        worst_self = worst_self.min(lncc(&vx, &vx, 5.0).unwrap().item()).min(lncc(&vx, &affine, 5.0).unwrap().item());
        worst_sym = worst_sym.max((lncc(&vx, &vy, 5.0).unwrap().item() - lncc(&vy, &vx, 5.0).unwrap().item()).abs());
    }
    ensure(worst_self >= 0.999, || format!("lncc self-similarity {worst_self}"))?;
    ensure(worst_sym <= 1e-12, || format!("lncc asymmetry {worst_sym:.1e}"))?;
    Ok(format!("lncc self {worst_self:.6}, asymmetry {worst_sym:.1e}"))
}

// ---------------------------------------------------------------- zoo

fn max_ice(m: &ZooModel) -> f64 {
    m.evals.iter().map(|e| e.inv_consistency_err).fold(0.0, f64::max)
}

fn criterion_1(untrained: &[(String, f64)], zoo: &ZooReport, seconds: f64) -> Check {
    let mut parts = Vec::new();
    for ((name, ice0), m) in untrained.iter().zip(&zoo.models) {
        let (bound, ice) = (ice_bound(&m.model), max_ice(m));
        ensure(ice0.is_finite() && *ice0 < bound, || format!("untrained {name} error {ice0:.2e} px, bound {bound:.0e}"))?;
        ensure(ice.is_finite() && ice < bound, || format!("trained {name} error {ice:.2e} px, bound {bound:.0e}"))?;
        parts.push(format!("{name} {ice:.1e}"));
    }
    ensure(seconds < 600.0, || format!("zoo training took {seconds:.0} s"))?;
    Ok(format!("max px after training: {}; {seconds:.0} s", parts.join(" ")))
}

fn untrained_ice(data: &Dataset, pairs: &[(usize, usize)]) -> Result<Vec<(String, f64)>, String> {
    ZOO_MODELS
        .iter()
        .map(|name| {
            let model = RegistrationModel::new(zoo_descriptor(name, 0).unwrap()).map_err(|e| e.to_string())?;
            let params = model.init_params().map_err(|e| e.to_string())?;
            let mut worst = 0.0f64;
            for &(i, j) in pairs {
                let e = evaluate_pair(&model, &params, &data.images[i], &data.images[j], Objective::default()).map_err(|e| e.to_string())?;
                worst = worst.max(e.inv_consistency_err);
            }
            Ok((name.to_string(), worst))
        })
        .collect()
}

fn self_deviation(model: &RegistrationModel, params: &icreg_core::autodiff::ParamStore, img: &Tensor) -> Result<f64, String> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let tape = Tape::new();
    let p = params.bind(&tape);
    let a = tape.constant(img.clone());
    let out = model.forward(&p, &a, &a).map_err(|e| e.to_string())?;
    let field = out.transform.position_field(&tape, h, w).map_err(|e| e.to_string())?;
    Ok(field.value().max_abs_diff(&identity_grid(h, w)))
}

fn criterion_2(data: &Dataset, zoo: &ZooReport) -> Check {
    let mut worst = (0.0f64, String::new());
    for m in &zoo.models {
        let fresh = m.model.init_params().map_err(|e| e.to_string())?;
        for (state, params) in [("untrained", &fresh), ("trained", &m.params)] {
            for &(i, _) in &zoo.pairs {
                let d = self_deviation(&m.model, params, &data.images[i].pixels)?;
                if !(d <= worst.0) {
                    worst = (d, format!("{state} {}", m.model.name()));
                }
            }
        }
    }
    ensure(worst.0 < 1e-12, || format!("{} deviates by {:.2e}", worst.1, worst.0))?;
    Ok(format!("max deviation {:.1e} over {} models, trained and untrained", worst.0, zoo.models.len()))
}

fn criterion_4(zoo: &ZooReport) -> Check {
    let mut parts = Vec::new();
    for m in &zoo.models {
        let before: f64 = m.evals.iter().map(|e| e.mse_before).sum();
        let after: f64 = m.evals.iter().map(|e| e.mse_after).sum();
        let ratio = after / before;
        ensure(ratio <= 0.5, || format!("{} keeps {:.1}% of the squared difference", m.model.name(), 100.0 * ratio))?;
        parts.push(format!("{} {ratio:.3}", m.model.name()));
    }
    let inv = zoo.models.iter().map(max_ice).zip(&zoo.models).all(|(ice, m)| ice < ice_bound(&m.model));
    ensure(inv, || "inverse consistency bound violated".into())?;
    Ok(format!("mse after/before: {}", parts.join(" ")))
}

fn criterion_7(data: &Dataset, zoo: &ZooReport) -> Check {
    let obj = Objective::default();
    let mut parts = Vec::new();
    for m in &zoo.models {
        let bound = ice_bound(&m.model);
        let (mut improved, mut worst) = (0, 0.0f64);
        for &(i, j) in &zoo.pairs {
            let (a, b) = (&data.images[i], &data.images[j]);
            let r = instance_optimize(&m.model, &m.params, &a.pixels, &b.pixels, obj, &Adam::default(), DEFAULT_INSTANCE_STEPS)
                .map_err(|e| format!("{}: {e}", m.model.name()))?;
            if r.loss_after <= r.loss_before {
                improved += 1;
            }
            let e = evaluate_pair(&m.model, &r.params, a, b, obj).map_err(|e| e.to_string())?;
            worst = worst.max(e.inv_consistency_err);
            ensure(e.inv_consistency_err.is_finite() && e.inv_consistency_err < bound, || {
                format!("{} after optimization: error {:.2e} px", m.model.name(), e.inv_consistency_err)
            })?;
        }
        let need = zoo.pairs.len() - zoo.pairs.len() / 10;
        ensure(improved >= need, || format!("{} improved on {improved}/{} pairs", m.model.name(), zoo.pairs.len()))?;
        parts.push(format!("{} {improved}/{} {worst:.1e}", m.model.name(), zoo.pairs.len()));
    }
    Ok(format!("improved pairs, max px: {}", parts.join(" ")))
}

// ---------------------------------------------------------------- grid

fn criterion_3(grid: &GridReport, seconds: f64) -> Check {
    let quarter = 100;
    let at = |p: Parameterization, c: Composition| median(grid.cell_runs(p, c).filter_map(|r| r.similarity_at(quarter)));
    let mut early = Vec::new();
    for c in Composition::ALL {
        let (anti, direct) = (at(Parameterization::Antisym, c), at(Parameterization::Direct, c));
        let (Some(anti), Some(direct)) = (anti, direct) else {
            return Err(format!("{} has no runs reaching iteration {quarter}", c.label()));
        };
        ensure(anti < direct, || format!("{}: antisym {anti:.4} vs direct {direct:.4} at iteration {quarter}", c.label()))?;
        early.push(format!("{} {anti:.3}<{direct:.3}", c.label()));
    }

    let mut ice = Vec::new();
    for p in GRID_PARAMS {
        for c in Composition::ALL {
            let runs: Vec<_> = grid.cell_runs(p, c).collect();
            let consistent = p == Parameterization::Antisym && c != Composition::TwoStep;
            let finals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.result.as_ref().ok().and_then(|rows| rows.last()).map(|m| m.inv_consistency_err))
                .collect();
            if consistent {
                let worst = runs.iter().filter_map(|r| r.max_inv_consistency()).fold(0.0, f64::max);
                ensure(finals.len() == runs.len() && worst < 1e-4, || format!("{} error {worst:.2e} px", runs[0].cell))?;
                ice.push(format!("{} {worst:.0e}", runs[0].cell));
            } else {
                let floor = if c == Composition::TwoStep { 1e-2 } else { 1e-4 };
                let least = finals.iter().copied().fold(f64::INFINITY, f64::min);
                ensure(least > floor, || format!("{} reaches {least:.2e} px", runs[0].cell))?;
            }
        }
    }

    let aborts = grid.runs.iter().filter(|r| r.param == Parameterization::Antisym && r.result.is_err()).count();
    ensure(aborts == 0, || format!("{aborts} antisym runs aborted"))?;
    ensure(seconds < 45.0 * 60.0, || format!("grid took {seconds:.0} s"))?;
    let failed = grid.runs.iter().filter(|r| r.result.is_err()).count();
    Ok(format!("{}; {}; {failed} failed runs elsewhere; {seconds:.0} s", early.join(" "), ice.join(" ")))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    let mut record = |n: usize, name: &'static str, start: Instant, r: Check| {
        let secs = start.elapsed().as_secs_f64();
        report_line(n, name, &r, secs);
        results.push((n, name, r, secs));
    };
    let workers = resolve_workers(None);

    let t = Instant::now();
    record(5, "oracle suites", t, criterion_5());
    let t = Instant::now();
    record(6, "metric correctness", t, criterion_6());

    let (_zoo_tmp, zoo_dir) = artifacts("zoo");
    let source = zoo_source();
    let t = Instant::now();
    let zoo = source.load().map_err(|e| e.to_string()).and_then(|data| {
        let opts = zoo_options();
        let report = run_zoo(&source, &data, &opts, workers, Some(&zoo_dir)).map_err(|e| format!("{e:#}"))?;
        Ok((data, report, t.elapsed().as_secs_f64()))
    });
    match &zoo {
        Ok((data, report, seconds)) => {
            let t = Instant::now();
            let c1 = untrained_ice(data, &report.pairs).and_then(|u| criterion_1(&u, report, *seconds));
            record(1, "architectural inverse consistency", t, c1);
            let t = Instant::now();
            record(2, "self-registration identity", t, criterion_2(data, report));
            let t = Instant::now();
            record(4, "zoo squared-difference reduction", t, criterion_4(report));
            let t = Instant::now();
            record(7, "instance optimization", t, criterion_7(data, report));
        }
        Err(e) => {
            for (n, name) in [(1, "architectural inverse consistency"), (2, "self-registration identity"), (4, "zoo squared-difference reduction"), (7, "instance optimization")] {
                record(n, name, t, Err(format!("zoo failed: {e}")));
            }
        }
    }

    let (_grid_tmp, grid_dir) = artifacts("affine_grid");
    let spec = grid_spec();
    let t = Instant::now();
    let grid = spec
        .base
        .data
        .load()
        .map_err(|e| e.to_string())
        .and_then(|data| run_affine_grid(&spec, &data, workers, Some(&grid_dir)).map_err(|e| format!("{e:#}")));
    let seconds = t.elapsed().as_secs_f64();
    record(3, "affine grid trends", t, grid.and_then(|g| criterion_3(&g, seconds)));

    results.sort_by_key(|r| r.0);
    println!("\nsummary");
    for (n, name, r, secs) in &results {
        report_line(*n, name, r, *secs);
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report_line(n: usize, name: &str, r: &Check, secs: f64) {
    match r {
        Ok(detail) => println!("[PASS] criterion {n} {name}: {detail} ({secs:.1} s)"),
        Err(why) => println!("[FAIL] criterion {n} {name}: {why} ({secs:.1} s)"),
    }
}
