use pmp_core::autodiff::band_stop_value;
use pmp_core::bandstop::{band_stop, BandStopConfig, LatentLayer};
use pmp_core::data::{adjacency, chunk_bounds, temporal_chunking, Frame, SkeletonSequence};
use pmp_core::distributions::inverse_erf;
use pmp_core::gcn::{graph_conv, Activation};
use pmp_core::gradcheck::grad_check;
use pmp_core::histogram::{kld_values, soft_histogram_values};
use pmp_core::train::magnitude_prune_mask;
use pmp_core::{BinGrid, CompGraph, ElementwiseOp, Tensor, TargetDistribution};
use proptest::prelude::*;

fn unit_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn elementwise_gradients(x in unit_vec(1..8), y_seed in unit_vec(8..9)) {
        let n = x.len();
        let y: Vec<f64> = y_seed.iter().take(n).copied().collect();
        let xs = Tensor::vector(x.clone());
        let ys = Tensor::vector(y);
        for op in [ElementwiseOp::Add, ElementwiseOp::Mul, ElementwiseOp::Exp, ElementwiseOp::Neg, ElementwiseOp::Square] {
            let binary = matches!(op, ElementwiseOp::Add | ElementwiseOp::Mul);
            let params = if binary { vec![xs.clone(), ys.clone()] } else { vec![xs.clone()] };
            let err = grad_check(
                |g, v| {
                    let e = g.elementwise(op, v)?;
                    let w = g.constant(Tensor::from_fn(&[n], |i| 0.3 + i as f64));
                    let e = g.mul(e, w)?;
                    Ok(g.sum(e))
                },
                &params,
                1e-5,
            ).unwrap();
            prop_assert!(err < 1e-4, "{op:?}: {err}");
        }
        let pos = Tensor::vector(x.iter().map(|v| v.abs() + 0.5).collect());
        let err = grad_check(|g, v| { let l = g.log(v[0])?; Ok(g.sum(l)) }, &[pos], 1e-5).unwrap();
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn shared_leaf_accumulates(x in unit_vec(1..10)) {
        let t = Tensor::vector(x);
        let mut g = CompGraph::new();
        let a = g.param(t.clone());
        let p = g.mul(a, a).unwrap();
        let s = g.sum(p);
        let shared = g.backward(s).unwrap().wrt(a);

        let mut g = CompGraph::new();
        let b = g.param(t);
        let q = g.square(b);
        let s = g.sum(q);
        let single = g.backward(s).unwrap().wrt(b);
        prop_assert!(shared.max_abs_diff(&single) < 1e-15);
    }

    #[test]
    fn forward_is_deterministic(a in unit_vec(6..7), b in unit_vec(6..7)) {
        let run = || {
            let mut g = CompGraph::new();
            let x = g.param(Tensor::new(vec![2, 3], a.clone()).unwrap());
            let y = g.param(Tensor::new(vec![3, 2], b.clone()).unwrap());
            let m = g.matmul(x, y).unwrap();
            let e = g.exp(m);
            g.value(e).clone()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn chunks_partition_frames(frames in 1usize..400, chunks in 1usize..80) {
        let bounds = chunk_bounds(frames, chunks);
        prop_assert_eq!(bounds.len(), chunks);
        prop_assert_eq!(bounds[0].0, 0);
        prop_assert_eq!(bounds[chunks - 1].1, frames);
        for w in bounds.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn chunked_signal_dimension(frames in 1usize..60, chunks in 1usize..20, joints in 1usize..5) {
        let traj: Vec<Vec<Frame>> = (0..joints)
            .map(|j| (0..frames).map(|t| Frame { t: t as f64, x: t as f64, y: j as f64, z: 0.5 }).collect())
            .collect();
        let seq = SkeletonSequence::new(traj, vec![], 0).unwrap();
        let s = temporal_chunking(&seq, chunks).unwrap();
        prop_assert_eq!(s.shape(), &[3 * chunks, joints]);
        prop_assert_eq!(s.numel(), 3 * chunks * joints);
    }

    #[test]
    fn adjacency_rows_sum_to_one(n in 1usize..20, raw in prop::collection::vec((0usize..20, 0usize..20), 0..30)) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(i, j)| (i % n, j % n)).collect();
        let a = adjacency(n, &edges).unwrap();
        for row in a.data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_inverts_cdf(r in 0.001f64..0.999, scale in 0.05f64..3.0, loc in -1.0f64..1.0) {
        for d in [
            TargetDistribution::uniform(scale).unwrap(),
            TargetDistribution::gaussian(loc, scale).unwrap(),
            TargetDistribution::laplace(loc, scale).unwrap(),
        ] {
            let q = d.quantile_signed(r).unwrap();
            prop_assert!((d.cdf(q) - r).abs() < 1e-9, "{:?} r={r}", d.kind());
            let m = d.quantile_magnitude(r).unwrap();
            let loc = d.location();
            prop_assert!((d.cdf(loc + m) - d.cdf(loc - m) - r).abs() < 1e-9);
        }
    }

    #[test]
    fn truncated_quantile_inverts_cdf(r in 0.01f64..0.99, std in 0.05f64..2.0) {
        let d = TargetDistribution::gaussian(0.0, std).unwrap().truncated(-1.0, 1.0).unwrap();
        let q = d.quantile_signed(r).unwrap();
        prop_assert!((d.cdf(q) - r).abs() < 1e-9);
    }

    #[test]
    fn discretized_law_is_valid(k in 2usize..200, std in 0.01f64..2.0) {
        let grid = BinGrid::uniform(-1.0, 1.0, k).unwrap();
        let p = TargetDistribution::laplace(0.1, std).unwrap().discretize(&grid).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn inverse_erf_is_odd_and_increasing(x in -0.999f64..0.999, dx in 1e-6f64..1e-3) {
        let y = inverse_erf(x).unwrap();
        prop_assert_eq!(inverse_erf(-x).unwrap(), -y);
        if x + dx < 1.0 {
            prop_assert!(inverse_erf(x + dx).unwrap() > y);
        }
        prop_assert!((libm::erf(y) - x).abs() < 1e-12);
    }

    #[test]
    fn band_stop_bounded_and_symmetric(w in -10.0f64..10.0, a in 0.0f64..2.0, sigma in 0.1f64..10.0) {
        let c = BandStopConfig::new(a, sigma).unwrap();
        let psi = band_stop(w, &c);
        prop_assert!(psi > 0.0 && psi < 1.0 || (psi == 1.0 && w.abs() > 5.0));
        prop_assert_eq!(psi, band_stop(-w, &c));
        prop_assert_eq!(psi, band_stop_value(w, a, sigma));
    }

    #[test]
    fn export_differs_only_below_threshold(x in unit_vec(1..40), a in 0.0f64..0.8) {
        let layer = LatentLayer::new(Tensor::vector(x), BandStopConfig::new(a, 1.0).unwrap()).unwrap();
        let bound = a * band_stop(a, &layer.config);
        for ((&w, &e), &h) in layer.latent.data().iter().zip(layer.effective_weights().data()).zip(layer.hard_export().data()) {
            if w.abs() > a {
                prop_assert_eq!(e, h);
            } else {
                prop_assert_eq!(h, 0.0);
                prop_assert!((e - h).abs() <= bound + 1e-15);
            }
            prop_assert!(e.abs() <= w.abs());
        }
    }

    #[test]
    fn soft_histogram_is_normalized(x in unit_vec(1..300), k in 2usize..120) {
        let grid = BinGrid::uniform(-1.0, 1.0, k).unwrap();
        let q = soft_histogram_values(&[&Tensor::vector(x)], &grid).unwrap();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(q.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn soft_histogram_translation(x in unit_vec(1..100), shift in -3.0f64..3.0) {
        let grid = BinGrid::uniform(-1.0, 1.0, 50).unwrap();
        let moved = BinGrid::from_centers(-1.0 + shift, 1.0 + shift, grid.centers().iter().map(|c| c + shift).collect()).unwrap();
        let q0 = soft_histogram_values(&[&Tensor::vector(x.clone())], &grid).unwrap();
        let q1 = soft_histogram_values(&[&Tensor::vector(x.iter().map(|v| v + shift).collect())], &moved).unwrap();
        for (a, b) in q0.iter().zip(&q1) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn kld_is_non_negative(p in prop::collection::vec(0.0f64..1.0, 2..60), q in prop::collection::vec(0.0f64..1.0, 60)) {
        let k = p.len();
        let sp: f64 = p.iter().sum::<f64>() + 1e-12;
        let q = &q[..k];
        let sq: f64 = q.iter().sum::<f64>() + 1e-12;
        let p: Vec<f64> = p.iter().map(|v| (v + 1e-12 / k as f64) / sp).collect();
        let q: Vec<f64> = q.iter().map(|v| (v + 1e-12 / k as f64) / sq).collect();
        prop_assert!(kld_values(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kld_values(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn graph_conv_is_permutation_equivariant(seed in 0u64..1000, n in 2usize..7) {
        use rand::{Rng, SeedableRng};
        use rand::seq::SliceRandom;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (s, c, heads) = (3, 4, 2);
        let attn: Vec<Tensor> = (0..heads).map(|_| Tensor::from_fn(&[n, n], |_| rng.random_range(-1.0..1.0))).collect();
        let filters: Vec<Tensor> = (0..heads).map(|_| Tensor::from_fn(&[s, c], |_| rng.random_range(-1.0..1.0))).collect();
        let u = Tensor::from_fn(&[s, n], |_| rng.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // node i of the relabelled graph is node perm[i] of the original
        let pa: Vec<Tensor> = attn.iter().map(|a| Tensor::from_fn(&[n, n], |k| a.data()[perm[k / n] * n + perm[k % n]])).collect();
        let pu = Tensor::from_fn(&[s, n], |k| u.data()[(k / n) * n + perm[k % n]]);

        let conv = |attn: &[Tensor], u: &Tensor| {
            let mut g = CompGraph::new();
            let a: Vec<_> = attn.iter().map(|t| g.constant(t.clone())).collect();
            let w: Vec<_> = filters.iter().map(|t| g.constant(t.clone())).collect();
            let x = g.constant(u.clone());
            let out = graph_conv(&mut g, &a, x, &w, Activation::Relu).unwrap();
            g.value(out).clone()
        };
        let base = conv(&attn, &u);
        let permuted = conv(&pa, &pu);
        for i in 0..n {
            for j in 0..c {
                prop_assert!((permuted.data()[i * c + j] - base.data()[perm[i] * c + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn magnitude_mask_matches_sort_oracle(
        a in prop::collection::vec(-3i32..3, 1..30),
        b in prop::collection::vec(-3i32..3, 1..30),
        r in 0.0f64..0.99,
    ) {
        // small integer magnitudes force many ties
        let ta = Tensor::vector(a.iter().map(|&v| v as f64 * 0.1).collect());
        let tb = Tensor::vector(b.iter().map(|&v| v as f64 * 0.1).collect());
        let mask = magnitude_prune_mask(&[&ta, &tb], r).unwrap();
        let all: Vec<f64> = ta.data().iter().chain(tb.data()).copied().collect();
        let k = (r * all.len() as f64).round() as usize;
        let mut expected = vec![false; all.len()];
        let mut chosen = 0;
        // brute force: repeatedly take the smallest remaining (lowest index first)
        while chosen < k {
            let mut best: Option<usize> = None;
            for i in 0..all.len() {
                if !expected[i] && best.is_none_or(|b| all[i].abs() < all[b].abs()) {
                    best = Some(i);
                }
            }
            expected[best.unwrap()] = true;
            chosen += 1;
        }
        let got: Vec<bool> = mask.concat();
        prop_assert_eq!(got, expected);
    }
}
