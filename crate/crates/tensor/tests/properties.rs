use lgseg_tensor::{Graph, GraphOptions, Tensor};
use proptest::prelude::*;

fn shape_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..5, 1..5).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(-1e3f64..1e3, n))
    })
}

proptest! {
    #[test]
    fn permute_roundtrip_is_bit_exact((shape, data) in shape_and_data(), seed in any::<u64>()) {
        let rank = shape.len();
        let mut axes: Vec<usize> = (0..rank).collect();
        // Fisher-Yates driven by the seed
        let mut s = seed;
        for i in (1..rank).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            axes.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut inv = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let x = g.constant(Tensor::from_vec(&shape, data).unwrap());
        let back = x.permute(&axes).unwrap().permute(&inv).unwrap();
        prop_assert!(back.value().bit_eq(x.value()));
    }

    #[test]
    fn reshape_roundtrip_is_bit_exact((shape, data) in shape_and_data()) {
        let g = Graph::<f32>::standalone(GraphOptions::eval());
        let n = data.len();
        let x = g.constant(Tensor::<f64>::from_vec(&shape, data).unwrap().cast::<f32>());
        let back = x.reshape(&[n]).unwrap().reshape(&shape).unwrap();
        prop_assert!(back.value().bit_eq(x.value()));
    }

    #[test]
    fn transpose_twice_is_identity((shape, data) in shape_and_data()) {
        prop_assume!(shape.len() >= 2);
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let x = g.constant(Tensor::from_vec(&shape, data).unwrap());
        prop_assert!(x.transpose().unwrap().transpose().unwrap().value().bit_eq(x.value()));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        rows in 1usize..5,
        row in prop::collection::vec(-30f64..30.0, 1..12),
        shift in -500f64..500.0,
    ) {
        let n = row.len();
        let data: Vec<f64> = (0..rows).flat_map(|_| row.iter().copied()).collect();
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let x = Tensor::from_vec(&[rows, n], data).unwrap();
        let y = g.constant(x.clone()).softmax(1).unwrap();
        for r in y.value().data().chunks(n) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let shifted = g.constant(x.map(|v| v + shift)).softmax(1).unwrap();
        prop_assert!(shifted.value().max_abs_diff(y.value()) <= 1e-6);
    }

    #[test]
    fn softmax_preserves_order(row in prop::collection::vec(-10f64..10.0, 2..10)) {
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let y = g.constant(Tensor::from_vec(&[row.len()], row.clone()).unwrap()).softmax(0).unwrap();
        for i in 0..row.len() {
            for j in 0..row.len() {
                if row[i] < row[j] {
                    prop_assert!(y.value().data()[i] <= y.value().data()[j]);
                }
            }
        }
    }

    #[test]
    fn float32_softmax_sums_to_one(row in prop::collection::vec(-50f32..50.0, 1..64)) {
        let g = Graph::<f32>::standalone(GraphOptions::eval());
        let y = g.constant(Tensor::from_vec(&[1, row.len()], row).unwrap()).softmax(1).unwrap();
        let total: f64 = y.value().to_f64_vec().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn concat_slice_roundtrip(a in prop::collection::vec(-1f64..1.0, 6), b in prop::collection::vec(-1f64..1.0, 9)) {
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let va = g.constant(Tensor::from_vec(&[3, 2], a).unwrap());
        let vb = g.constant(Tensor::from_vec(&[3, 3], b).unwrap());
        let c = g.concat(&[va.clone(), vb.clone()], 1).unwrap();
        prop_assert!(c.slice(1, 0, 2).unwrap().value().bit_eq(va.value()));
        prop_assert!(c.slice(1, 2, 3).unwrap().value().bit_eq(vb.value()));
    }
}
