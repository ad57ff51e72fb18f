use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
    }
}

fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[NodeId]) -> crate::Result<NodeId>) {
    let report = check_gradients(inputs, STEP, f).unwrap();
    assert!(report.max_rel_err < TOL, "{report:?}");
}

#[test]
fn matmul_identity_and_analytic() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let m = tape.constant(Tensor::from_rows(&[vec![2.0, 3.0], vec![5.0, 7.0]]).unwrap());
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[2.0, 3.0, 5.0, 7.0]);

    let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);
    assert_eq!(tape.shape(out), &[1, 1]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![4, 2]));
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

#[test]
fn matmul_gradient_of_sum_is_ones_times_b_transposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let mut tape = Tape::new();
    let ai = tape.param(a);
    let bi = tape.constant(b.clone());
    let c = tape.matmul(ai, bi).unwrap();
    let s = tape.sum(c);
    let g = tape.backward(s).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expected = b.row(k).iter().sum::<f64>();
            assert!((g.wrt(ai).get(&[i, k]) - expected).abs() < 1e-12);
        }
    }
    check(&[random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)], |t, x| {
        let c = t.matmul(x[0], x[1])?;
        Ok(t.sum(c))
    });
}

#[test]
fn batched_matmul_broadcasts_and_differentiates() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [random(&[2, 3, 3, 4], &mut rng), random(&[3, 4, 2], &mut rng), random(&[2, 3, 3, 2], &mut rng)];
    check(&inputs, |t, x| {
        let c = t.matmul(x[0], x[1])?;
        let w = t.mul(c, x[2])?;
        Ok(t.sum(w))
    });
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    assert_close(tape.value(y).data(), &[1.0 / 3.0; 3], 1e-15);

    let x = tape.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    let v = tape.value(y).data();
    assert!(v.iter().all(|p| p.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for axis in 0..2 {
        let inputs = [random(&[4, 6], &mut rng), random(&[4, 6], &mut rng)];
        check(&inputs, move |t, x| {
            let s = t.softmax(x[0], axis)?;
            let w = t.mul(s, x[1])?;
            Ok(t.sum(w))
        });
    }
}

#[test]
fn softmax_slices_sum_to_one_along_middle_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let x = tape.constant(random(&[3, 5, 2], &mut rng).map(|v| v * 50.0));
    let y = tape.softmax(x, 1).unwrap();
    let s = tape.sum_axis(y, 1).unwrap();
    assert!(tape.value(s).data().iter().all(|v| (v - 1.0).abs() < 1e-9));
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::ones(vec![3]));
    let b = tape.constant(Tensor::zeros(vec![3]));
    let x = tape.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    assert_close(tape.value(y).data(), &[-1.2247, 0.0, 1.2247], 1e-3);

    let x = tape.constant(Tensor::new(vec![1, 3], vec![5.0; 3]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-6).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0; 3]);

    let x = tape.constant(Tensor::zeros(vec![1, 3]));
    assert!(tape.layer_norm(x, g, b, 0.0).is_err());
}

#[test]
fn layer_norm_standardises_each_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::ones(vec![8]));
    let b = tape.constant(Tensor::zeros(vec![8]));
    let x = tape.constant(random(&[5, 8], &mut rng).map(|v| 3.0 * v + 1.0));
    let y = tape.layer_norm(x, g, b, 1e-10).unwrap();
    for r in 0..5 {
        let row = tape.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = [random(&[3, 2, 5], &mut rng), random(&[5], &mut rng), random(&[5], &mut rng), random(&[3, 2, 5], &mut rng)];
    check(&inputs, |t, x| {
        let y = t.layer_norm(x[0], x[1], x[2], 1e-6)?;
        let w = t.mul(y, x[3])?;
        Ok(t.sum(w))
    });
}

#[test]
fn reglu_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![2], vec![3.0, 2.0]).unwrap());
    let y = tape.reglu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[6.0]);
    let x = tape.constant(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
    let y = tape.reglu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0]);
    let x = tape.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(tape.reglu(x), Err(crate::Error::Shape(_))));
}

#[test]
fn reglu_gradient_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Keep gates at least 0.1 away from zero.
    let x = random(&[4, 6], &mut rng).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v });
    let w = random(&[4, 3], &mut rng);
    check(&[x, w], |t, x| {
        let y = t.reglu(x[0])?;
        let w = t.mul(y, x[1])?;
        Ok(t.sum(w))
    });
}

#[test]
fn dropout_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![10]));
    assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
    assert!(matches!(tape.dropout(x, 1.0, true, &mut rng), Err(crate::Error::Config(_))));
}

#[test]
fn dropout_keeps_expected_fraction_and_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![n]));
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let v = tape.value(y).data();
    let kept = v.iter().filter(|&&e| e != 0.0).count() as f64 / n as f64;
    let mean = v.iter().sum::<f64>() / n as f64;
    assert!((kept - 0.5).abs() < 0.01, "kept {kept}");
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn dropout_is_deterministic_per_rng_state() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(vec![64]));
        let y = tape.dropout(x, 0.3, true, &mut rng).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn backward_simple_cases() {
    let w = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut tape = Tape::new();
    let wi = tape.param(w.clone());
    let s = tape.sum(wi);
    assert_eq!(tape.backward(s).unwrap().wrt(wi).data(), &[1.0; 3]);

    let mut tape = Tape::new();
    let wi = tape.param(w.clone());
    let sq = tape.mul(wi, wi).unwrap();
    let s = tape.sum(sq);
    assert_eq!(tape.backward(s).unwrap().wrt(wi).data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn backward_contract_errors() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::ones(vec![3]));
    assert!(matches!(tape.backward(w), Err(crate::Error::Contract(_))));
    let s = tape.sum(w);
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(crate::Error::Contract(_))));
}

#[test]
fn unreachable_parameters_get_zero_gradients() {
    let mut tape = Tape::new();
    let used = tape.param(Tensor::ones(vec![2]));
    let unused = tape.param(Tensor::ones(vec![2, 2]));
    let s = tape.sum(used);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(unused), &Tensor::zeros(vec![2, 2]));
}

#[test]
fn elementwise_and_structural_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pos = random(&[2, 3], &mut rng).map(|v| v.abs() + 0.5);
    let inputs = [random(&[2, 3], &mut rng), random(&[3], &mut rng), pos, random(&[2, 1], &mut rng)];
    check(&inputs, |t, x| {
        let a = t.add(x[0], x[1])?;
        let b = t.sub(a, x[3])?;
        let c = t.mul(b, x[2])?;
        let d = t.exp(c);
        let e = t.log(x[2]);
        let f = t.powf(x[2], 2.5);
        let g = t.add_scalar(f, 0.3);
        let h = t.mul_scalar(g, -1.7);
        let cat = t.concat(&[d, e, h], 1)?;
        let sl = t.slice(cat, 1, 2, 5)?;
        let tr = t.transpose(sl)?;
        let m = t.mean_axis(tr, 0)?;
        let r = t.reshape(m, &[2, 1])?;
        let p = t.pick(r, &[0, 0])?;
        let q = t.mul(p, p)?;
        t.mean(q)
    });
}

#[test]
fn permute_and_sq_dist_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = [random(&[2, 3, 4], &mut rng), random(&[3, 4], &mut rng), random(&[5, 4], &mut rng)];
    check(&inputs, |t, x| {
        let p = t.permute(x[0], &[1, 0, 2])?;
        let p = t.reshape(p, &[6, 4])?;
        let d = t.sq_dist(p, x[2])?;
        let d2 = t.sq_dist(x[1], x[1])?;
        let k = t.mul_scalar(d, -0.1);
        let k = t.exp(k);
        let a = t.mean(k)?;
        let b = t.mean(d2)?;
        t.add(a, b)
    });
}

#[test]
fn clamp_min_blocks_gradient_below_floor() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2], vec![1e-20, 0.5]).unwrap());
    let c = tape.clamp_min(x, 1e-12);
    assert_eq!(tape.value(c).data(), &[1e-12, 0.5]);
    let s = tape.sum(c);
    assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[0.0, 1.0]);
}

#[test]
fn broadcasting_rejects_incompatible_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2]));
    assert!(tape.add(a, b).is_err());
}
