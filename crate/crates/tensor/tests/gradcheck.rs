//! Central-difference checks of every differentiable op.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqai_tensor::nn::{Attention, Block, LayerNorm, Linear};
use vqai_tensor::{Graph, ParamStore, Tensor, Var, IGNORE_INDEX};

type F = f64;

/// Checks d(loss)/d(inputs) against central differences.
fn check(inputs: Vec<Tensor<F>>, f: impl Fn(&Graph<F>, &[Var]) -> Var) {
    let store = ParamStore::new();
    let g = Graph::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&g, &vars);
    let grads = g.backward(loss);
    let eval = |inputs: &[Tensor<F>]| {
        let g = Graph::inference(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        g.item(f(&g, &vars))
    };
    let h = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in 0..t.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (1e-6 + a.abs().max(numeric.abs()));
            assert!(
                err < 1e-5 || (a - numeric).abs() < 1e-8,
                "input {k} elem {i}: analytic {a} numeric {numeric}"
            );
        }
    }
}

fn rnd(shape: &[usize], seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

/// Weighted sum so every output element has a distinct upstream gradient.
fn probe(g: &Graph<F>, y: Var) -> Var {
    let shape = g.shape(y);
    let n: usize = shape.iter().product();
    let w = Tensor::from_vec(&shape, (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect());
    g.sum(g.mul(y, g.constant(w)))
}

#[test]
fn elementwise_ops() {
    check(vec![rnd(&[3, 4], 1), rnd(&[3, 4], 2)], |g, v| {
        let a = g.add(v[0], v[1]);
        let b = g.mul(a, v[1]);
        let c = g.sub(b, g.scale(v[0], 0.3));
        probe(g, g.add_scalar(c, 0.5))
    });
    check(vec![rnd(&[2, 5], 3)], |g, v| {
        let y = g.concat(&[g.gelu(v[0]), g.silu(v[0]), g.tanh(v[0]), g.sqr(v[0]), g.exp(v[0])], 1);
        probe(g, y)
    });
    check(vec![rnd(&[2, 5], 4).map(|v| v.abs() + 0.5)], |g, v| probe(g, g.log(v[0])));
}

#[test]
fn broadcasting_ops() {
    check(vec![rnd(&[2, 3, 4], 5), rnd(&[4], 6), rnd(&[2, 1, 4], 7)], |g, v| {
        let y = g.add(v[0], v[1]);
        let y = g.mul(y, v[2]);
        let y = g.sub(y, v[2]);
        probe(g, y)
    });
}

#[test]
fn matmul_and_bmm() {
    check(vec![rnd(&[2, 3, 4], 8), rnd(&[4, 5], 9)], |g, v| probe(g, g.matmul(v[0], v[1])));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { rnd(&[2, 4, 3], 10) } else { rnd(&[2, 3, 4], 10) };
        let b = if tb { rnd(&[2, 5, 4], 11) } else { rnd(&[2, 4, 5], 11) };
        check(vec![a, b], move |g, v| probe(g, g.bmm(v[0], v[1], ta, tb)));
    }
}

#[test]
fn shape_ops() {
    check(vec![rnd(&[2, 3, 4], 12), rnd(&[2, 2, 4], 13)], |g, v| {
        let c = g.concat(&[v[0], v[1]], 1);
        let n = g.narrow(c, 1, 1, 3);
        let p = g.permute(n, &[2, 0, 1]);
        let r = g.reshape(p, &[4, 6]);
        probe(g, r)
    });
}

#[test]
fn normalisation_and_reductions() {
    check(vec![rnd(&[3, 6], 14)], |g, v| probe(g, g.softmax(v[0])));
    check(vec![rnd(&[3, 6], 15)], |g, v| probe(g, g.log_softmax(v[0])));
    check(vec![rnd(&[3, 6], 16), rnd(&[6], 17), rnd(&[6], 18)], |g, v| {
        probe(g, g.layer_norm(v[0], v[1], v[2], 1e-5))
    });
    check(vec![rnd(&[2, 3, 4], 19)], |g, v| {
        let a = g.sum_axis(v[0], 1);
        let b = g.mean_axis(v[0], 2);
        let s = g.add(g.sum(g.sqr(a)), g.mean(g.sqr(b)));
        g.add(s, g.mean(v[0]))
    });
}

#[test]
fn cross_entropy_and_embedding() {
    check(vec![rnd(&[4, 7], 20)], |g, v| g.cross_entropy(v[0], &[1, 6, IGNORE_INDEX, 0]));
    check(vec![rnd(&[5, 3], 21)], |g, v| probe(g, g.embedding(v[0], &[4, 0, 4, 2])));
}

#[test]
fn attention_block_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut store = ParamStore::<F>::new();
    let block = Block::new(&mut store, "blk", 8, 2, Some(6), &mut rng);
    let _ = Attention::new(&mut store, "unused", 8, 8, 2, &mut rng);
    let ln = LayerNorm::new(&mut store, "ln", 8);
    let head = Linear::new(&mut store, "head", 8, 3, &mut rng);
    let x = rnd(&[2, 3, 8], 23);
    let ctx = rnd(&[2, 4, 6], 24);
    let valid = Tensor::from_f64(&[2, 4], &[1., 1., 1., 0., 1., 1., 0., 0.]);
    let loss_of = |store: &ParamStore<F>, grad: bool| {
        let g = if grad { Graph::new(store) } else { Graph::inference(store) };
        let xv = g.constant(x.clone());
        let cv = g.constant(ctx.clone());
        let y = block.forward(&g, xv, None, true, Some((cv, Some(&valid))));
        let y = head.forward(&g, ln.forward(&g, y));
        let l = probe(&g, y);
        let v = g.item(l);
        (v, grad.then(|| g.backward(l).into_params()))
    };
    let (_, grads) = loss_of(&store, true);
    let grads = grads.unwrap();
    assert!(!grads.is_empty());
    let h = 1e-6;
    for (id, gt) in &grads {
        for i in (0..gt.len()).step_by(7) {
            let mut sp = store.clone();
            sp.value_mut(*id).data_mut()[i] += h;
            let mut sm = store.clone();
            sm.value_mut(*id).data_mut()[i] -= h;
            let numeric = (loss_of(&sp, false).0 - loss_of(&sm, false).0) / (2.0 * h);
            let a = gt.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 + 1e-5 * numeric.abs(),
                "{}[{i}]: analytic {a} numeric {numeric}",
                store.name(*id)
            );
        }
    }
}
