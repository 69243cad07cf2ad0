//! Minimal reverse-mode automatic differentiation.

mod tape;
mod tensor;

pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Largest relative error between tape gradients and central differences.
///
/// `f` builds a scalar loss on a fresh tape from the given parameter
/// variables. Each parameter is probed at up to `probes` evenly spread
/// coordinates with step `h`.
pub fn gradcheck<F>(f: F, params: &[Tensor], probes: usize, h: f64) -> f64
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);

    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let g = grads.get_or_zeros(vars[pi], p.len());
        let step = (p.len() / probes.max(1)).max(1);
        for idx in (0..p.len()).step_by(step).take(probes) {
            let mut plus = params.to_vec();
            plus[pi].data[idx] += h;
            let mut minus = params.to_vec();
            minus[pi].data[idx] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let denom = numeric.abs().max(g[idx].abs()).max(1e-3);
            worst = worst.max((numeric - g[idx]).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn weighted_sum<'t>(tape: &mut Tape<'t>, x: Var, seed: u64) -> Var {
        let w = rand_tensor(tape.shape(x), seed);
        let w = tape.constant(w);
        let p = tape.mul(x, w);
        tape.sum(p)
    }

    const TOL: f64 = 1e-6;

    #[test]
    fn elementwise_ops() {
        let ps = [
            rand_tensor(&[3, 4], 1),
            rand_tensor(&[3, 4], 2),
            rand_tensor(&[4], 3),
        ];
        let err = gradcheck(
            |t, v| {
                let a = t.add(v[0], v[1]);
                let b = t.sub(a, v[1]);
                let c = t.mul(b, v[1]);
                let d = t.scale(c, 1.7);
                let e = t.add_row(d, v[2]);
                let f = t.mul_row(e, v[2]);
                let g = t.sin(f);
                let h = t.gelu(g);
                let i = t.tanh(h);
                weighted_sum(t, i, 9)
            },
            &ps,
            12,
            1e-5,
        );
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn matmul_all_transposes() {
        for ta in [false, true] {
            for tb in [false, true] {
                let sa = if ta { [4, 3] } else { [3, 4] };
                let sb = if tb { [5, 4] } else { [4, 5] };
                let ps = [rand_tensor(&sa, 4), rand_tensor(&sb, 5)];
                let err = gradcheck(
                    |t, v| {
                        let m = t.matmul_t(v[0], v[1], ta, tb);
                        weighted_sum(t, m, 6)
                    },
                    &ps,
                    20,
                    1e-5,
                );
                assert!(err < TOL, "ta={ta} tb={tb}: {err}");
            }
        }
    }

    #[test]
    fn row_ops_and_normalization() {
        let ps = [rand_tensor(&[5, 6], 7)];
        let err = gradcheck(
            |t, v| {
                let a = t.layer_norm_rows(v[0], 1e-5);
                let b = t.softmax_rows(a);
                let c = t.transpose(b);
                let d = t.mean_rows(c);
                let e = t.l2_normalize(d);
                weighted_sum(t, e, 8)
            },
            &ps,
            30,
            1e-5,
        );
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn conv_pool_upsample_norm() {
        let ps = [
            rand_tensor(&[2, 6, 8], 10),
            rand_tensor(&[3, 2, 3, 3], 11),
            rand_tensor(&[3], 12),
            rand_tensor(&[2, 3, 1, 1], 13),
        ];
        let err = gradcheck(
            |t, v| {
                let a = t.conv2d(v[0], v[1], Some(v[2]));
                let b = t.instance_norm(a, 1e-5);
                let c = t.avg_pool2(b);
                let d = t.upsample2(c);
                let e = t.concat_channels(d, a);
                let e = t.relu(e);
                let w2 = t.reshape(v[3], &[1, 6, 1, 1]);
                let g = t.conv2d(e, w2, None);
                weighted_sum(t, g, 14)
            },
            &ps,
            25,
            1e-5,
        );
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn magnitude_and_patchify() {
        let ps = [rand_tensor(&[2, 8, 8], 15)];
        let err = gradcheck(
            |t, v| {
                let m = t.magnitude(v[0], 1e-3);
                let p = t.patchify(m, 4);
                weighted_sum(t, p, 16)
            },
            &ps,
            30,
            1e-6,
        );
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let p = tape.param(Tensor::from_vec(vec![3.0, 4.0]));
        let m = tape.mul(c, p);
        let s = tape.sum(m);
        let g = tape.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &[1.0, 2.0]);
    }

    struct Square;
    impl CustomOp for Square {
        fn backward(
            &self,
            inputs: &[&Tensor],
            _out: &Tensor,
            grad: &[f64],
        ) -> Vec<Option<Vec<f64>>> {
            vec![Some(
                inputs[0]
                    .data
                    .iter()
                    .zip(grad)
                    .map(|(x, g)| 2.0 * x * g)
                    .collect(),
            )]
        }
    }

    #[test]
    fn custom_op_is_chained() {
        let ps = [rand_tensor(&[6], 17)];
        let err = gradcheck(
            |t, v| {
                let x = t.value(v[0]).clone();
                let out =
                    Tensor::new(x.shape.clone(), x.data.iter().map(|a| a * a).collect()).unwrap();
                let y = t.custom(&[v[0]], out, Box::new(Square));
                weighted_sum(t, y, 18)
            },
            &ps,
            6,
            1e-5,
        );
        assert!(err < TOL, "{err}");
    }
}
