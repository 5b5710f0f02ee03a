use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sf_diffcore::*;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| t.row(p).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn rank_of(t: &Tensor) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t.rows()).collect();
    order.sort_by(|&a, &b| {
        t.row(a)
            .iter()
            .zip(t.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rank = vec![0; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn adam_with_zero_lr_is_identity(seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 4, 3, &mut rng);
        let before: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        let adam = Adam { lr: 0.0, ..Adam::default() };
        for _ in 0..steps {
            let x = randn(&mut rng, &[5, 4]);
            let mut tape = Tape::new(&store);
            let xv = tape.input(x);
            let y = lin.forward(&mut tape, xv).unwrap();
            let w = randn(&mut rng, &[5, 3]);
            let l = tape.weighted_sum(y, &w).unwrap();
            let g = tape.backward(l);
            store.accumulate(&g, 1.0);
            adam.step(&mut store).unwrap();
        }
        let after: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn token_ops_commute_with_permutations(seed in any::<u64>(), n in 3usize..12, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 6, 3, &mut rng).unwrap();
        let ec = EdgeConv::new(&mut store, "ec", 6, 4, k.min(n - 1), &mut rng);
        let x = randn(&mut rng, &[n, 6]);
        let run = |x: &Tensor| {
            let rank = rank_of(x);
            let mut keys = vec![0; n];
            for (i, &r) in rank.iter().enumerate() {
                keys[r] = i;
            }
            let mut tape = Tape::new(&store);
            let xv = tape.input(x.clone());
            let a = mha.forward(&mut tape, xv, keys).unwrap();
            let e = ec.forward(&mut tape, xv, &vec![true; n], &rank).unwrap();
            (tape.value(a).clone(), tape.value(e).clone())
        };
        let (a0, e0) = run(&x);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (a1, e1) = run(&permute_rows(&x, &perm));
        prop_assert_eq!(a1, permute_rows(&a0, &perm));
        prop_assert_eq!(e1, permute_rows(&e0, &perm));
    }

    #[test]
    fn normalization_ops_hit_their_targets(seed in any::<u64>(), rows in 1usize..6, cols in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", cols);
        let x = randn(&mut rng, &[rows, cols]);
        let mut tape = Tape::new(&store);
        let xv = tape.input(x.clone());
        let y = ln.forward(&mut tape, xv).unwrap();
        let u = tape.normalize_rows(xv);
        for r in 0..rows {
            let row = tape.value(y).row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-12);
            let xr = x.row(r);
            let xm = xr.iter().sum::<f64>() / cols as f64;
            let xvar = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!((var - xvar / (xvar + 1e-5)).abs() < 1e-9);
            let norm = tape.value(u).row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
