mod common;

use caflow::params::Cx;
use caflow::{Graph, Rng, Tensor};
use common::*;
use proptest::prelude::*;

fn shape4() -> impl Strategy<Value = [usize; 4]> {
    (1..3usize, 1..4usize, 1..4usize, 1..4usize).prop_map(|(b, c, h, w)| [b, c, 2 * h, 2 * w])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_layer_inverts_on_random_inputs(seed in any::<u64>(), scale in 0.1..3.0f64, batch in 1..5usize) {
        let mut rng = Rng::new(seed);
        for case in layer_zoo() {
            let g = Graph::no_grad();
            let cx = Cx::new(&g, &case.store);
            let x = normal_tensor::<f64>(&mut rng, with_batch(case.x_shape, batch), scale);
            let cond = case.cond_shape.map(|s| g.constant(normal_tensor(&mut rng, with_batch(s, batch), 1.0)));
            let out = case.layer.forward(&cx, g.constant(x.clone()), cond).unwrap();
            let back = case.layer.inverse(&cx, out.y, cond).unwrap();
            prop_assert!(g.value(back).max_abs_diff(&x) < 1e-9 * scale.max(1.0), "{}", case.name);
            prop_assert_eq!(g.shape(out.log_det), [batch, 1, 1, 1]);
        }
    }

    #[test]
    fn layers_treat_batch_items_independently(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        for case in layer_zoo() {
            let x = normal_tensor::<f64>(&mut rng, with_batch(case.x_shape, 3), 1.0);
            let c = case.cond_shape.map(|s| normal_tensor::<f64>(&mut rng, with_batch(s, 3), 1.0));
            let run = |x: &Tensor<f64>, c: Option<&Tensor<f64>>| {
                let g = Graph::no_grad();
                let cx = Cx::new(&g, &case.store);
                let out = case.layer.forward(&cx, g.constant(x.clone()), c.map(|c| g.constant(c.clone()))).unwrap();
                (g.value(out.y).as_ref().clone(), g.value(out.log_det).as_ref().clone())
            };
            let (y, ld) = run(&x, c.as_ref());
            for b in 0..3 {
                let cb = c.as_ref().map(|c| c.batch_item(b));
                let (yb, ldb) = run(&x.batch_item(b), cb.as_ref());
                prop_assert!(yb.max_abs_diff(&y.batch_item(b)) < 1e-12, "{}", case.name);
                prop_assert!(ldb.max_abs_diff(&ld.batch_item(b)) < 1e-12, "{}", case.name);
            }
        }
    }

    #[test]
    fn squeeze_is_a_volume_preserving_permutation(shape in shape4(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = normal_tensor::<f64>(&mut rng, shape, 1.0);
        let s = x.squeeze2x2().unwrap();
        prop_assert_eq!(s.shape(), [shape[0], 4 * shape[1], shape[2] / 2, shape[3] / 2]);
        prop_assert_eq!(s.unsqueeze2x2().unwrap(), x.clone());
        let mut a = x.data().to_vec();
        let mut b = s.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn conv_gradients_match_directional_differences(
        dims in (1..3usize, 1..4usize, 1..4usize, 1..6usize, 1..6usize),
        k in prop_oneof![Just(1usize), Just(3), Just(5)],
        seed in any::<u64>(),
    ) {
        // The loss is linear in each argument, so central differences are exact
        // up to rounding.
        let (b, ci, co, h, w) = dims;
        let mut rng = Rng::new(seed);
        let x = normal_tensor::<f64>(&mut rng, [b, ci, h, w], 1.0);
        let wt = normal_tensor::<f64>(&mut rng, [co, ci, k, k], 1.0);
        let bias = normal_tensor::<f64>(&mut rng, [1, co, 1, 1], 1.0);
        let r = normal_tensor::<f64>(&mut rng, [b, co, h, w], 1.0);
        let loss = |x: &Tensor<f64>, wt: &Tensor<f64>, bias: &Tensor<f64>, grad: bool| {
            let g = Graph::new();
            let (xv, wv, bv) = (g.leaf(x.clone(), grad), g.leaf(wt.clone(), grad), g.leaf(bias.clone(), grad));
            let y = g.conv2d(xv, wv, Some(bv)).unwrap();
            let l = g.sum_all(g.mul(y, g.constant(r.clone())).unwrap()).unwrap();
            let value = g.value(l).sum_f64();
            if !grad {
                return (value, None);
            }
            let gr = g.backward(l).unwrap();
            let gs = [xv, wv, bv].map(|v| gr.get(v).unwrap().clone());
            (value, Some(gs))
        };
        let (_, grads) = loss(&x, &wt, &bias, true);
        let grads = grads.unwrap();
        let args = [x.clone(), wt.clone(), bias.clone()];
        for (a, ga) in grads.iter().enumerate() {
            let dir = normal_tensor::<f64>(&mut rng, args[a].shape(), 1.0);
            let shifted = |eps: f64| {
                let mut v = args.clone();
                v[a] = Tensor::from_fn(args[a].shape(), |i| args[a].at(i) + eps * dir.at(i));
                loss(&v[0], &v[1], &v[2], false).0
            };
            let fd = (shifted(0.5) - shifted(-0.5)) / 1.0;
            let analytic: f64 = ga.data().iter().zip(dir.data()).map(|(p, q)| p * q).sum();
            prop_assert!((fd - analytic).abs() < 1e-9 * fd.abs().max(1.0), "arg {}: {} vs {}", a, fd, analytic);
        }
    }
}
