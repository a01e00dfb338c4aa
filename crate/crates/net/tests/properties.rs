use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svbr_net::checkpoint::{decode_checkpoint, encode_checkpoint};
use svbr_net::ops::{self, ConvGeom};
use svbr_net::{Mode, Network, NetworkConfig, Tensor};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, len)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_backward_is_the_adjoint(
        (cin, cout, half) in (1usize..4, 1usize..4, 1usize..4),
        down in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let g = if down { ConvGeom::DOWN2 } else { ConvGeom::SAME3 };
        let (h, w) = (2 * half, 2 * half + 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let x = Tensor::from_vec([2, cin, h, w], draw(2 * cin * h * w)).unwrap();
        let wt = draw(cout * cin * g.kernel * g.kernel);
        let y = ops::conv2d(&x, &wt, cout, None, g);
        let r = Tensor::from_vec(y.shape(), draw(y.len())).unwrap();
        let (dx, dw, db) = ops::conv2d_backward(&x, &wt, &r, g);
        let lhs = dot(y.data(), r.data());
        prop_assert!(close(lhs, dot(x.data(), dx.data())));
        prop_assert!(close(lhs, dot(&wt, &dw)));
        prop_assert!(close(r.data().iter().sum::<f64>(), db.iter().sum::<f64>()));
    }

    #[test]
    fn transposed_conv_backward_is_the_adjoint(
        (cin, cout, h, w) in (1usize..4, 1usize..4, 1usize..5, 1usize..5),
        data in values(2 * 3 * 4 * 4 + 3 * 3 * 4 + 2 * 3 * 8 * 8),
    ) {
        let (xs, rest) = data.split_at(2 * cin * h * w);
        let (ws, rs) = rest.split_at(cin * cout * 4);
        let x = Tensor::from_vec([2, cin, h, w], xs.to_vec()).unwrap();
        let y = ops::conv_transpose2(&x, ws, cout);
        prop_assert_eq!(y.shape(), [2, cout, 2 * h, 2 * w]);
        let r = Tensor::from_vec(y.shape(), rs[..y.len()].to_vec()).unwrap();
        let (dx, dw) = ops::conv_transpose2_backward(&x, ws, &r);
        let lhs = dot(y.data(), r.data());
        prop_assert!(close(lhs, dot(x.data(), dx.data())));
        prop_assert!(close(lhs, dot(ws, &dw)));
    }

    #[test]
    fn pooling_backward_is_the_adjoint(c in 1usize..4, half in 1usize..5, data in values(2 * 3 * 10 * 10 * 2)) {
        let n = 2 * c * 4 * half * half;
        let x = Tensor::from_vec([2, c, 2 * half, 2 * half], data[..n].to_vec()).unwrap();
        let y = ops::avg_pool2(&x);
        let r = Tensor::from_vec(y.shape(), data[n..n + y.len()].to_vec()).unwrap();
        let dx = ops::avg_pool2_backward(x.shape(), &r);
        prop_assert!(close(dot(y.data(), r.data()), dot(x.data(), dx.data())));
    }

    #[test]
    fn split_undoes_concat(ca in 1usize..4, cb in 1usize..4, data in values(2 * 7 * 9)) {
        let a = Tensor::from_vec([1, ca, 3, 3], data[..ca * 9].to_vec()).unwrap();
        let b = Tensor::from_vec([1, cb, 3, 3], data[ca * 9..(ca + cb) * 9].to_vec()).unwrap();
        let (a2, b2) = ops::split_channels(&ops::concat(&a, &b), ca);
        prop_assert_eq!(a2, a);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn sigmoid_stays_in_unit_interval(data in proptest::collection::vec(-800.0f64..800.0, 1..64)) {
        let n = data.len();
        let y = ops::sigmoid(&Tensor::from_vec([1, 1, 1, n], data).unwrap());
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn checkpoint_round_trip_preserves_eval_output(seed in any::<u64>()) {
        let mut net = Network::new(NetworkConfig::tiny(), seed).unwrap();
        // Move every parameter off its initial value, including the
        // zero-initialized head and the running statistics.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = net.params().iter().map(|(id, _)| id).collect();
        for id in ids {
            for v in net.params_mut().data_mut(id) {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        net.params_mut().round_to_f32();
        let (back, _) = decode_checkpoint(&encode_checkpoint(&net, &BTreeMap::new())).unwrap();
        let x = Tensor::from_fn([1, 3, 16, 16], |_, c, y, x| ((c + 3 * y + x) % 11) as f64 / 10.0);
        let m = Tensor::from_fn([1, 1, 16, 16], |_, _, y, x| ((y * x) % 5) as f64 / 4.0);
        let (a, _, _) = net.forward_batch(&x, &m, Mode::Eval).unwrap();
        let (b, _, _) = back.forward_batch(&x, &m, Mode::Eval).unwrap();
        prop_assert!(a.data().iter().any(|&v| v != a.data()[0]));
        prop_assert_eq!(a, b);
    }
}
