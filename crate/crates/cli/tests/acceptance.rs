//! Acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use arft_cli::commands::{gen_synth, sweep, sweep_configs, SweepAxis};
use arft_cli::config::{ExperimentConfig, Group, Variant};
use arft_cli::pipeline::METRICS_FILE;
use arft_cli::run;
use arft_core::autograd::{check_gradients, NodeId, Tape, Tensor};
use arft_core::data::{correlation_report, random_oversample, spearman_rho, Dataset, SynthConfig};
use arft_core::eval::{balance, confusion, gain_ratio, info_gain, pd_pf_bal, relieff, select_top_k, symmetric_uncertainty};
use arft_core::losses::{focal_loss_value, mmd_rbf_value, resolve_sigma, FocalConfig, SigmaPolicy};
use arft_core::model::{forward, init_params, ModelConfig};
use arft_core::train::{training_objective, LossConfig};
use arft_core::Result as CoreResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so kinks sit far from the probe points.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let t = rand_tensor(shape, 0.2, 1.5, rng);
    let signs: Vec<f64> = (0..t.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape.to_vec(), t.data().iter().zip(&signs).map(|(a, s)| a * s).collect()).unwrap()
}

/// Weighted sum with fixed, uneven weights so every output element
/// contributes a distinct gradient.
fn scalarize(tape: &mut Tape, x: NodeId) -> CoreResult<NodeId> {
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w = tape.constant(Tensor::new(shape, (0..n).map(|i| ((i + 1) as f64 * 0.7).sin()).collect()).unwrap());
    let y = tape.mul(x, w)?;
    Ok(tape.sum(y))
}

type Graph = Box<dyn Fn(&mut Tape, &[NodeId]) -> CoreResult<NodeId>>;

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Graph)> {
    let mut cases: Vec<(&'static str, Vec<Tensor>, Graph)> = Vec::new();
    let a = rand_tensor(&[3, 4], -1.0, 1.0, rng);
    let row = rand_tensor(&[4], -1.0, 1.0, rng);
    let pos = rand_tensor(&[3, 4], 0.3, 2.0, rng);
    cases.push(("add", vec![a.clone(), row.clone()], Box::new(|t, x| { let y = t.add(x[0], x[1])?; scalarize(t, y) })));
    cases.push(("sub", vec![a.clone(), row.clone()], Box::new(|t, x| { let y = t.sub(x[0], x[1])?; scalarize(t, y) })));
    cases.push(("mul", vec![a.clone(), row.clone()], Box::new(|t, x| { let y = t.mul(x[0], x[1])?; scalarize(t, y) })));
    cases.push(("add_scalar", vec![a.clone()], Box::new(|t, x| { let y = t.add_scalar(x[0], 0.5); scalarize(t, y) })));
    cases.push(("mul_scalar", vec![a.clone()], Box::new(|t, x| { let y = t.mul_scalar(x[0], -1.7); scalarize(t, y) })));
    cases.push(("neg", vec![a.clone()], Box::new(|t, x| { let y = t.neg(x[0]); scalarize(t, y) })));
    cases.push(("powf", vec![pos.clone()], Box::new(|t, x| { let y = t.powf(x[0], 2.5); scalarize(t, y) })));
    cases.push(("clamp_min", vec![off_zero(&[3, 4], rng)], Box::new(|t, x| { let y = t.clamp_min(x[0], 0.0); scalarize(t, y) })));
    cases.push(("exp", vec![a.clone()], Box::new(|t, x| { let y = t.exp(x[0]); scalarize(t, y) })));
    cases.push(("log", vec![pos.clone()], Box::new(|t, x| { let y = t.log(x[0]); scalarize(t, y) })));
    let b3 = rand_tensor(&[2, 3, 4], -1.0, 1.0, rng);
    let m = rand_tensor(&[4, 5], -1.0, 1.0, rng);
    let bm = rand_tensor(&[2, 4, 2], -1.0, 1.0, rng);
    cases.push(("matmul", vec![b3.clone(), m], Box::new(|t, x| { let y = t.matmul(x[0], x[1])?; scalarize(t, y) })));
    cases.push(("matmul_batched", vec![b3.clone(), bm], Box::new(|t, x| { let y = t.matmul(x[0], x[1])?; scalarize(t, y) })));
    cases.push(("transpose", vec![b3.clone()], Box::new(|t, x| { let y = t.transpose(x[0])?; scalarize(t, y) })));
    cases.push(("permute", vec![b3.clone()], Box::new(|t, x| { let y = t.permute(x[0], &[2, 0, 1])?; scalarize(t, y) })));
    cases.push(("reshape", vec![b3.clone()], Box::new(|t, x| { let y = t.reshape(x[0], &[6, 4])?; scalarize(t, y) })));
    cases.push(("softmax", vec![b3.clone()], Box::new(|t, x| { let y = t.softmax(x[0], 1)?; scalarize(t, y) })));
    let gain = rand_tensor(&[4], 0.5, 1.5, rng);
    let bias = rand_tensor(&[4], -0.5, 0.5, rng);
    cases.push((
        "layer_norm",
        vec![b3.clone(), gain, bias],
        Box::new(|t, x| { let y = t.layer_norm(x[0], x[1], x[2], 1e-6)?; scalarize(t, y) }),
    ));
    cases.push(("reglu", vec![off_zero(&[3, 6], rng)], Box::new(|t, x| { let y = t.reglu(x[0])?; scalarize(t, y) })));
    cases.push((
        "dropout",
        vec![a.clone()],
        Box::new(|t, x| {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            let y = t.dropout(x[0], 0.3, true, &mut r)?;
            scalarize(t, y)
        }),
    ));
    cases.push(("sum", vec![a.clone()], Box::new(|t, x| { let y = t.mul(x[0], x[0])?; Ok(t.sum(y)) })));
    cases.push(("mean", vec![a.clone()], Box::new(|t, x| { let y = t.mul(x[0], x[0])?; t.mean(y) })));
    cases.push(("sum_axis", vec![b3.clone()], Box::new(|t, x| { let y = t.sum_axis(x[0], 1)?; scalarize(t, y) })));
    cases.push(("mean_axis", vec![b3.clone()], Box::new(|t, x| { let y = t.mean_axis(x[0], 2)?; scalarize(t, y) })));
    let other = rand_tensor(&[2, 1, 4], -1.0, 1.0, rng);
    cases.push(("concat", vec![b3.clone(), other], Box::new(|t, x| { let y = t.concat(&[x[0], x[1]], 1)?; scalarize(t, y) })));
    cases.push(("slice", vec![b3.clone()], Box::new(|t, x| { let y = t.slice(x[0], 2, 1, 2)?; scalarize(t, y) })));
    cases.push(("pick", vec![a.clone()], Box::new(|t, x| { let y = t.pick(x[0], &[3, 0, 2])?; scalarize(t, y) })));
    let pts = rand_tensor(&[4, 3], -1.0, 1.0, rng);
    let pts2 = rand_tensor(&[5, 3], -1.0, 1.0, rng);
    cases.push(("sq_dist", vec![pts, pts2], Box::new(|t, x| { let y = t.sq_dist(x[0], x[1])?; scalarize(t, y) })));
    cases
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (0.0f64, "");
    for (name, inputs, f) in primitive_cases(&mut rng) {
        let r = check_gradients(&inputs, 1e-5, |t: &mut Tape, ids: &[NodeId]| f(t, ids)).map_err(|e| format!("{name}: {e}"))?;
        if r.max_rel_err > worst.0 {
            worst = (r.max_rel_err, name);
        }
        check(r.max_rel_err < 1e-3, format!("{name}: max relative error {:.3e}", r.max_rel_err))?;
    }

    let cfg = ModelConfig { p: 5, d_token: 8, n_heads: 2, n_layers: 2, dropout_rate: 0.0, ..Default::default() };
    let params = init_params(&cfg, &mut rng).map_err(|e| e.to_string())?;
    let x = rand_tensor(&[6, 5], -1.5, 1.5, &mut rng);
    let labels = [1u8, 0, 1, 0];
    let (_, cls) = forward(&x, &params, &cfg, false, &mut rng).map_err(|e| e.to_string())?;
    let rows = |r: std::ops::Range<usize>| Tensor::new(vec![r.len(), 8], r.flat_map(|i| cls.row(i).to_vec()).collect()).unwrap();
    let sigma = resolve_sigma(SigmaPolicy::Median, &rows(0..4), &rows(4..6)).map_err(|e| e.to_string())?;
    let mut loss_cfg = LossConfig::default();
    loss_cfg.mmd.sigma = SigmaPolicy::Fixed(sigma);
    let inputs: Vec<Tensor> = params.values().into_iter().cloned().collect();
    let full = check_gradients(&inputs, 1e-5, |tape: &mut Tape, ids: &[NodeId]| {
        let bound = params.with_values(ids)?;
        let mut r = ChaCha8Rng::seed_from_u64(0);
        Ok(training_objective(tape, &x, 4, &labels, &bound, &cfg, &loss_cfg, 0.5, false, &mut r)?.total)
    })
    .map_err(|e| e.to_string())?;
    check(full.max_rel_err < 1e-3, format!("full model: max relative error {:.3e}", full.max_rel_err))?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "primitives worst {:.2e} ({}), full model {:.2e} over {} scalars, {secs:.2}s",
        worst.0, worst.1, full.max_rel_err, full.checked
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ce_cfg = FocalConfig { gamma: 0.0, alpha: 1.0 };
    let fl2 = FocalConfig { gamma: 2.0, alpha: 1.0 };
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p: f64 = rng.random_range(1e-9..1.0);
        let ce = -p.ln();
        let fl0 = focal_loss_value(&[p], &ce_cfg).map_err(|e| e.to_string())?;
        worst = worst.max((fl0 - ce).abs());
        let f2 = focal_loss_value(&[p], &fl2).map_err(|e| e.to_string())?;
        check(f2 <= ce, format!("FL(gamma=2) = {f2} > CE = {ce} at p = {p}"))?;
    }
    check(worst < 1e-12, format!("max |FL(0) - CE| = {worst:e}"))?;
    Ok(format!("max |FL(0) - CE| = {worst:.1e}, FL(2) <= CE on 10^4 draws"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = |r: arft_core::Result<f64>| r.map_err(|e| e.to_string());
    let x = rand_tensor(&[20, 4], -1.0, 1.0, &mut rng);
    let y = rand_tensor(&[15, 4], -0.5, 1.5, &mut rng);
    let self_mmd = e(mmd_rbf_value(&x, &x, 0.8))?;
    check(self_mmd.abs() < 1e-12, format!("mmd(X, X) = {self_mmd:e}"))?;
    let (xy, yx) = (e(mmd_rbf_value(&x, &y, 0.8))?, e(mmd_rbf_value(&y, &x, 0.8))?);
    check(xy == yx, format!("mmd(X, Y) = {xy} but mmd(Y, X) = {yx}"))?;
    let a = Tensor::new(vec![1, 3], vec![0.2, -1.0, 0.5]).unwrap();
    let b = Tensor::new(vec![1, 3], vec![1.0, 0.3, -0.4]).unwrap();
    let d2: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum();
    let sigma = 1.3;
    let analytic = 2.0 - 2.0 * (-d2 / (2.0 * sigma * sigma)).exp();
    let got = e(mmd_rbf_value(&a, &b, sigma))?;
    check((got - analytic).abs() < 1e-9, format!("singletons: {got} vs {analytic}"))?;
    let mut min = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..8);
        let m = rng.random_range(1..8);
        let d = rng.random_range(1..5);
        let p = rand_tensor(&[n, d], -2.0, 2.0, &mut rng);
        let q = rand_tensor(&[m, d], -2.0, 2.0, &mut rng);
        let s = rng.random_range(0.1..3.0);
        min = min.min(e(mmd_rbf_value(&p, &q, s))?);
    }
    check(min >= -1e-12, format!("negative MMD {min:e}"))?;
    Ok(format!("self {self_mmd:.1e}, symmetric, singleton error {:.1e}, min over 1000 pairs {min:.2e}", (got - analytic).abs()))
}

fn criterion_4() -> Outcome {
    let all_positive = confusion(&[1; 10], &[1, 1, 1, 0, 0, 0, 0, 0, 0, 0]).map_err(|e| e.to_string())?;
    let (pd, pf, bal) = pd_pf_bal(&all_positive).map_err(|e| e.to_string())?;
    check((pd, pf) == (1.0, 1.0), "all-positive predictor should give pd = pf = 1")?;
    let expected = 1.0 - 1.0 / 2f64.sqrt();
    check(bal == expected, format!("bal(1, 1) = {bal}, expected {expected}"))?;
    let h_to_l = balance(0.992, 0.287);
    check((0.79..=0.80).contains(&h_to_l), format!("bal(0.992, 0.287) = {h_to_l}"))?;
    Ok(format!("bal(1, 1) = {bal:.5}, bal(0.992, 0.287) = {h_to_l:.4}"))
}

/// Frozen training settings for the synthetic transfer experiment.
fn transfer_config(group: Group, variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { groups: vec![group], variant, seeds: vec![0, 1, 2, 3, 4], workers: 1, ..Default::default() };
    cfg.train.epochs = TRANSFER_EPOCHS;
    cfg.train.lr0 = TRANSFER_LR0;
    cfg
}

const TRANSFER_EPOCHS: usize = 3;
const TRANSFER_LR0: f64 = 0.01;

fn criterion_5(dir: &Path) -> Outcome {
    let start = Instant::now();
    let synth = SynthConfig { n_source: 2000, n_target: 800, p: 20, positive_rate: 0.05, shift_strength: 0.5, ..Default::default() };
    let files = gen_synth(&synth, "label", &dir.join("synth")).map_err(|e| format!("{e:#}"))?;
    let group = Group { name: None, sources: vec![files.source], target: files.target, truth: Some(files.truth) };
    let mut bal = Vec::new();
    for variant in [Variant::Arft, Variant::Baseline] {
        let cfg = transfer_config(group.clone(), variant);
        let m = run(&cfg, &dir.join(variant.name())).map_err(|e| format!("{e:#}"))?.remove(0);
        bal.push(m.aggregate.ok_or("no aggregate")?.bal_mean);
    }
    let secs = start.elapsed().as_secs_f64();
    let summary = format!("ARFT Bal {:.4}, baseline Bal {:.4}, gap {:+.4}, {secs:.0}s", bal[0], bal[1], bal[0] - bal[1]);
    check(bal[0] - bal[1] >= 0.05, format!("gap below 0.05: {summary}"))?;
    check(bal[0] >= 0.80, format!("ARFT Bal below 0.80: {summary}"))?;
    check(secs < 300.0, format!("too slow: {summary}"))?;
    Ok(summary)
}

fn small_group(dir: &Path, seed: u64) -> Result<Group, String> {
    let synth = SynthConfig { n_source: 150, n_target: 80, p: 5, positive_rate: 0.2, seed, ..Default::default() };
    let f = gen_synth(&synth, "label", dir).map_err(|e| format!("{e:#}"))?;
    Ok(Group { name: None, sources: vec![f.source], target: f.target, truth: Some(f.truth) })
}

fn small_config(group: Group) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { groups: vec![group], seeds: vec![3], workers: 1, ..Default::default() };
    cfg.model.d_token = 16;
    cfg.model.n_heads = 4;
    cfg.model.n_layers = 2;
    cfg.train.epochs = 2;
    cfg
}

fn criterion_6(dir: &Path) -> Outcome {
    let cfg = small_config(small_group(&dir.join("data"), 6)?);
    let mut files = Vec::new();
    for name in ["first", "second"] {
        run(&cfg, &dir.join(name)).map_err(|e| format!("{e:#}"))?;
        files.push(std::fs::read(dir.join(name).join(METRICS_FILE)).map_err(|e| e.to_string())?);
    }
    check(files[0] == files[1], "metrics CSVs differ")?;
    Ok(format!("two runs wrote identical {}-byte metrics files", files[0].len()))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = 12;
    let cfg = ModelConfig { p, ..Default::default() };
    let params = init_params(&cfg, &mut rng).map_err(|e| e.to_string())?;
    let x = rand_tensor(&[40, p], -2.0, 2.0, &mut rng);
    let mut perm: Vec<usize> = (0..p).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let xp = Tensor::new(vec![40, p], (0..40).flat_map(|i| perm.iter().map(move |&j| (i, j))).map(|(i, j)| x.row(i)[j]).collect())
        .unwrap();
    let pp = params.permute_features(&perm).map_err(|e| e.to_string())?;
    let (a, _) = forward(&x, &params, &cfg, false, &mut rng).map_err(|e| e.to_string())?;
    let (b, _) = forward(&xp, &pp, &cfg, false, &mut rng).map_err(|e| e.to_string())?;
    let diff = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    check(diff <= 1e-6, format!("max logit change {diff:e}"))?;
    Ok(format!("max logit change {diff:.1e} over 40 rows"))
}

/// Average ranks by direct counting: 1 + #smaller + (#equal - 1) / 2.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names: Vec<String> = (0..52).map(|j| format!("m{j}")).collect();
    let d = Dataset::new("p52", names, (0..30 * 52).map(|_| rng.random::<f64>()).collect(), None).map_err(|e| e.to_string())?;
    let report = correlation_report(&d, 0.3, 0.05).map_err(|e| e.to_string())?;
    check(report.total_pairs == 1326, format!("{} pairs", report.total_pairs))?;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(3..=50);
        // small integer range so ties are common
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8))).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8))).collect();
        let Ok((rho, _)) = spearman_rho(&x, &y) else { continue };
        worst = worst.max((rho - pearson(&brute_ranks(&x), &brute_ranks(&y))).abs());
        let tx: Vec<f64> = x.iter().map(|v| (v * 0.5).exp() + 3.0).collect();
        let (rho_t, _) = spearman_rho(&tx, &y).map_err(|e| e.to_string())?;
        check(rho_t == rho, format!("monotone transform changed rho {rho} -> {rho_t}"))?;
    }
    check(worst < 1e-12, format!("oracle mismatch {worst:e}"))?;
    Ok(format!("1326 pairs at p=52, oracle error {worst:.1e}, monotone invariance exact"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 689 + 41;
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 17 == 0 && i / 17 < 41)).collect();
    check(labels.iter().filter(|&&l| l == 1).count() == 41, "fixture should hold 41 positives")?;
    let features: Vec<f64> = (0..n * 3).map(|_| rng.random()).collect();
    let d = Dataset::new("mysql", vec!["a".into(), "b".into(), "c".into()], features, Some(labels)).map_err(|e| e.to_string())?;
    let out = random_oversample(&d, &mut rng).map_err(|e| e.to_string())?;
    check(out.class_counts() == Some((689, 689)), format!("counts {:?}", out.class_counts()))?;
    let key = |r: &[f64], l: u8| (r.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), l);
    let mut input: Vec<_> = (0..d.n_rows()).map(|i| key(d.row(i), d.labels().unwrap()[i])).collect();
    let mut output: Vec<_> = (0..out.n_rows()).map(|i| key(out.row(i), out.labels().unwrap()[i])).collect();
    input.sort();
    output.sort();
    let positives: std::collections::HashSet<_> = input.iter().filter(|k| k.1 == 1).cloned().collect();
    // remove each original once; what remains must be copies of positives
    let mut remaining = output.clone();
    for k in &input {
        let pos = remaining.binary_search(k).map_err(|_| "an original row is missing".to_string())?;
        remaining.remove(pos);
    }
    check(remaining.len() == 689 - 41, format!("{} extra rows", remaining.len()))?;
    check(remaining.iter().all(|k| positives.contains(k)), "an added row is not a copy of an input positive")?;
    Ok(format!("{:?} -> {:?}, {} duplicated positives", d.class_counts().unwrap(), out.class_counts().unwrap(), remaining.len()))
}

fn criterion_10(dir: &Path) -> Outcome {
    let mut cfg = small_config(small_group(&dir.join("g1"), 10)?);
    let mut second = small_group(&dir.join("g2"), 11)?;
    second.name = Some("second".into());
    cfg.groups.push(second);
    cfg.model.d_token = 32;
    cfg.model.n_heads = 8;
    cfg.model.n_layers = 1;
    cfg.train.epochs = 1;
    let bad_dir = dir.join("bad");
    let rejected = sweep(&cfg, SweepAxis::Heads, &[1.0, 2.0, 3.0], &bad_dir).is_err() && !bad_dir.exists();
    check(rejected, "head count 3 with d_token 32 was not rejected before training")?;
    check(sweep_configs(&cfg, SweepAxis::Heads, &[5.0]).is_err(), "head count 5 accepted")?;
    let heads = sweep(&cfg, SweepAxis::Heads, &SweepAxis::Heads.default_values(), &dir.join("heads")).map_err(|e| format!("{e:#}"))?;
    let gamma = sweep(&cfg, SweepAxis::Gamma, &SweepAxis::Gamma.default_values(), &dir.join("gamma")).map_err(|e| format!("{e:#}"))?;
    let groups = cfg.groups.len();
    check(heads.cells.len() == 6 * groups, format!("{} heads cells", heads.cells.len()))?;
    check(gamma.cells.len() == 5 * groups, format!("{} gamma cells", gamma.cells.len()))?;
    let head_values: Vec<usize> = heads.cells.iter().step_by(groups).map(|c| c.manifest.effective_model.n_heads).collect();
    check(head_values == [1, 2, 4, 8, 16, 32], format!("heads grid {head_values:?}"))?;
    let gammas: Vec<f64> = gamma.cells.iter().step_by(groups).map(|c| c.manifest.effective_loss.focal.gamma).collect();
    check(gammas == [1.0, 2.0, 3.0, 4.0, 5.0], format!("gamma grid {gammas:?}"))?;
    Ok(format!("{} heads cells and {} gamma cells over {groups} groups; invalid heads rejected up front", heads.cells.len(), gamma.cells.len()))
}

fn h(ps: &[f64]) -> f64 {
    ps.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

fn criterion_11() -> Outcome {
    let c0: Vec<f64> = (1..=12).map(f64::from).collect();
    let c1 = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
    let features = (0..12).flat_map(|i| [c0[i], c1[i]]).collect();
    let toy = Dataset::new("toy", vec!["a".into(), "b".into()], features, Some(vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0]))
        .map_err(|e| e.to_string())?;
    let h_y = h(&[7.0 / 12.0, 5.0 / 12.0]);
    let ig = [h_y - (2f64.ln() + h(&[0.25, 0.75])) / 3.0, h_y - (0.25 * h(&[1.0 / 3.0, 2.0 / 3.0]) + h(&[0.25, 0.75]) / 3.0)];
    let hx = [3f64.ln(), h(&[5.0 / 12.0, 3.0 / 12.0, 4.0 / 12.0])];
    let e = |r: arft_core::Result<arft_core::eval::FeatureScore>| r.map(|s| s.scores).map_err(|e| e.to_string());
    let (got_ig, got_gr, got_su) = (e(info_gain(&toy, 3))?, e(gain_ratio(&toy, 3))?, e(symmetric_uncertainty(&toy, 3))?);
    let mut worst = 0.0f64;
    for j in 0..2 {
        for (got, want) in [(got_ig[j], ig[j]), (got_gr[j], ig[j] / hx[j]), (got_su[j], 2.0 * ig[j] / (hx[j] + h_y))] {
            worst = worst.max((got - want).abs());
        }
    }
    check(worst < 1e-12, format!("toy table error {worst:e}"))?;

    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 1)).collect();
        let mut cols = vec![y.iter().map(|&l| f64::from(l) * 0.6 + rng.random_range(0.0..0.4)).collect::<Vec<_>>()];
        for _ in 0..5 {
            cols.push((0..n).map(|_| rng.random()).collect());
        }
        let features = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
        let names = (0..6).map(|j| format!("f{j}")).collect();
        let d = Dataset::new("relief", names, features, Some(y)).map_err(|e| e.to_string())?;
        let score = relieff(&d, 10, None, &mut rng).map_err(|e| e.to_string())?;
        if select_top_k(&score, 1).map_err(|e| e.to_string())? == [0] {
            hits += 1;
        }
    }
    check(hits >= 19, format!("planted feature first in {hits}/20 seeds"))?;
    Ok(format!("toy table error {worst:.1e}; ReliefF planted feature first in {hits}/20 seeds"))
}

fn main() {
    // the harness is ours, so honour the usual listing probe
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path().to_path_buf();
    let criteria: Vec<Criterion> = vec![
        ("gradient suite", Box::new(criterion_1)),
        ("focal identity", Box::new(criterion_2)),
        ("MMD properties", Box::new(criterion_3)),
        ("Bal formula", Box::new(criterion_4)),
        ("synthetic transfer", Box::new({ let r = root.clone(); move || criterion_5(&r.join("c5")) })),
        ("determinism", Box::new({ let r = root.clone(); move || criterion_6(&r.join("c6")) })),
        ("permutation equivariance", Box::new(criterion_7)),
        ("correlation tool", Box::new(criterion_8)),
        ("oversampling", Box::new(criterion_9)),
        ("sweep integrity", Box::new({ let r = root.clone(); move || criterion_10(&r.join("c10")) })),
        ("baseline scorers", Box::new(criterion_11)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
