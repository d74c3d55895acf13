//! Randomized invariants of the public operators.

use ckn::grad::{layer_backward, LossKind};
use ckn::kernel::{inv_sqrt_psd, KernelSpec};
use ckn::layer::{encode_patch, layer_forward, LayerConfig, NetworkConfig};
use ckn::maps::{combine_patches, extract_patches, PoolSpec, SpatialMap};
use ckn::optim::{sphere_step, solve_w_convex, tangent_direction, Preconditioner, SolverOptions};
use ckn::tasks::classify::decide;
use ckn::{Layer, Network};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn unit_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut z = gaussian(rng, rows, cols);
    for mut c in z.columns_mut() {
        let n = c.dot(&c).sqrt();
        c /= n;
    }
    z
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> SpatialMap<f64> {
    SpatialMap::new(gaussian(rng, c, h * w), h, w).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extract_combine_are_adjoint(seed in any::<u64>(), c in 1usize..4, h in 1usize..9, w in 1usize..9, half in 0usize..3) {
        let e = 2 * half + 1;
        prop_assume!(e <= 2 * h.min(w) + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, c, h, w);
        let p = extract_patches(&x, e).unwrap();
        let y = gaussian(&mut rng, p.patch_dim(), p.columns());
        let lhs = (p.matrix() * &y).sum();
        let rhs = x.dot(&combine_patches(&y, e, (c, h, w)).unwrap());
        prop_assert!(rel(lhs, rhs) < 1e-12 || (lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn extraction_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, 2, 5, 6);
        let y = random_map(&mut rng, 2, 5, 6);
        let mix = SpatialMap::new(x.matrix() * a + y.matrix() * b, 5, 6).unwrap();
        let lhs = extract_patches(&mix, 3).unwrap().into_matrix();
        let rhs = extract_patches(&x, 3).unwrap().into_matrix() * a + extract_patches(&y, 3).unwrap().into_matrix() * b;
        prop_assert!((lhs - rhs).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn pool_is_adjoint_and_nonnegative(seed in any::<u64>(), s in 1.05f64..4.0, h in 1usize..12, w in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = PoolSpec::from_subsampling(s).unwrap().operator::<f64>(h, w).unwrap();
        let (oh, ow) = op.output_size();
        prop_assert_eq!(oh, (h as f64 / s).ceil() as usize);
        prop_assert_eq!(ow, (w as f64 / s).ceil() as usize);
        let m = gaussian(&mut rng, 3, h * w);
        let u = gaussian(&mut rng, 3, oh * ow);
        let lhs = (op.apply(&m.view()) * &u).sum();
        let rhs = (&m * &op.apply_adjoint(&u.view())).sum();
        prop_assert!(rel(lhs, rhs) < 1e-12 || (lhs - rhs).abs() < 1e-12);
        for src in 0..h * w {
            for dst in 0..oh * ow {
                prop_assert!(op.weight(src, dst) >= 0.0);
            }
        }
    }

    #[test]
    fn kappa_is_bounded_and_increasing(alpha in 0.1f64..20.0, t in -1.0f64..1.0, dt in 1e-6f64..0.5) {
        let k = KernelSpec::rbf(alpha).unwrap();
        let (a, b) = (k.kappa(t), k.kappa((t + dt).min(1.0)));
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b >= a);
    }

    #[test]
    fn whitening_power_relations(seed in any::<u64>(), p in 1usize..10, eps in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_columns(&mut rng, 12, p);
        let k = KernelSpec::rbf(4.0).unwrap();
        let m = k.kappa_mat(&z.t().dot(&z));
        let ws = inv_sqrt_psd(&m, eps).unwrap();
        let reg = &m + &(Array2::<f64>::eye(p) * eps);
        // A^2 (M + eps I) = I and A^{1/2} A^{1/2} = A
        let id = ws.a.dot(&ws.a).dot(&reg);
        prop_assert!((&id - &Array2::<f64>::eye(p)).iter().all(|d| d.abs() < 1e-7));
        prop_assert!((ws.a_half.dot(&ws.a_half) - &ws.a).iter().all(|d| d.abs() < 1e-9));
        prop_assert!((ws.a_half.dot(&ws.a) - &ws.a_threehalf).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn encoding_homogeneous_and_contractive(seed in any::<u64>(), gamma in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_columns(&mut rng, 9, 6);
        let layer = Layer::new(z, KernelSpec::rbf(2.0).unwrap(), 3, 1, None, 0.0).unwrap();
        let x: Array1<f64> = gaussian(&mut rng, 9, 1).column(0).to_owned();
        let xu = &x / x.dot(&x).sqrt();
        let psi = encode_patch(&layer, &xu).unwrap();
        prop_assert!(psi.dot(&psi).sqrt() <= 1.0 + 1e-9);
        let scaled = encode_patch(&layer, &(&x * gamma)).unwrap();
        let base = encode_patch(&layer, &x).unwrap() * gamma;
        prop_assert!((scaled - base).iter().all(|d| d.abs() < 1e-9 * gamma.max(1.0) * x.dot(&x).sqrt().max(1.0)));
    }

    #[test]
    fn layer_backward_is_linear_in_cotangent(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_columns(&mut rng, 18, 4);
        let layer = Layer::new(z, KernelSpec::rbf(4.0).unwrap(), 3, 2, Some(PoolSpec::from_subsampling(2.0).unwrap()), 1e-3).unwrap();
        let x = random_map(&mut rng, 2, 6, 6);
        let (out, cache) = layer_forward(&layer, &x).unwrap();
        let dim = out.matrix().dim();
        let u1 = gaussian(&mut rng, dim.0, dim.1);
        let u2 = gaussian(&mut rng, dim.0, dim.1);
        let g1 = layer_backward(&layer, &cache, &u1).unwrap();
        let g2 = layer_backward(&layer, &cache, &u2).unwrap();
        let g = layer_backward(&layer, &cache, &(&u1 * a + &u2 * b)).unwrap();
        let comb = &g1.filters * a + &g2.filters * b;
        let scale = comb.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!((&g.filters - &comb).iter().all(|d| d.abs() < 1e-9 * scale));
        prop_assert!((g.alpha - (a * g1.alpha + b * g2.alpha)).abs() < 1e-9 * scale.max(g.alpha.abs()));
        let (h, h1, h2) = (g.input.unwrap(), g1.input.unwrap(), g2.input.unwrap());
        let hc = h1.matrix() * a + h2.matrix() * b;
        prop_assert!((h.matrix() - &hc).iter().all(|d| d.abs() < 1e-9 * scale));
    }

    #[test]
    fn sphere_direction_is_tangent(seed in any::<u64>(), d in 2usize..12, eta in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_columns(&mut rng, d, 1).column(0).to_owned();
        let b = gaussian(&mut rng, d, d);
        let q = Preconditioner::from_matrix(b.t().dot(&b) + Array2::<f64>::eye(d) * 0.1).unwrap();
        let g: Array1<f64> = gaussian(&mut rng, d, 1).column(0).to_owned();
        let v = tangent_direction(&z.view(), &g.view(), &q).unwrap();
        prop_assert!(z.dot(&v).abs() < 1e-12 * v.dot(&v).sqrt().max(1.0));
        let next = sphere_step(&z.view(), &g.view(), &q, eta).unwrap();
        prop_assert!((next.dot(&next) - 1.0).abs() < 1e-12);
        // Q = I is the classical projected step
        let id = Preconditioner::identity(d);
        let classical = {
            let t = &g - &(&z * z.dot(&g));
            let m = &z - &(t * eta);
            &m / m.dot(&m).sqrt()
        };
        let step = sphere_step(&z.view(), &g.view(), &id, eta).unwrap();
        prop_assert!((step - classical).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn decision_ignores_positive_rescaling(scores in prop::collection::vec(-5.0f64..5.0, 2..8), c in 0.01f64..100.0) {
        let classes = scores.len();
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        prop_assert_eq!(decide(&scores, classes), decide(&scaled, classes));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn solver_ignores_sample_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (30, 5);
        let x = gaussian(&mut rng, n, d);
        let y = Array2::from_shape_fn((n, 1), |(i, _)| if x[[i, 0]] + 0.3 * x[[i, 1]] > 0.0 { 1.0 } else { -1.0 });
        let tol = 1e-6;
        let opts = SolverOptions { tol, ..Default::default() };
        let a = solve_w_convex(&x.view(), &y.view(), LossKind::SquaredHinge, 0.05, &opts).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let xp = x.select(ndarray::Axis(0), &perm);
        let yp = y.select(ndarray::Axis(0), &perm);
        let b = solve_w_convex(&xp.view(), &yp.view(), LossKind::SquaredHinge, 0.05, &opts).unwrap();
        let diff = (a.model.weights() - b.model.weights()).iter().map(|v| v * v).sum::<f64>().sqrt();
        // strong convexity turns the gradient certificate into a distance bound
        let wn = a.model.weights().iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        prop_assert!(diff <= 2.0 * tol * wn / 0.05, "diff {diff}");
    }
}

#[test]
fn f32_forward_tracks_f64() {
    let cfg = NetworkConfig {
        input_channels: 2,
        layers: vec![LayerConfig::new(3, 6, 2.0), LayerConfig::new(3, 8, 1.0)],
    };
    let net = Network::random(&cfg, 3).unwrap();
    let net32 = net.cast::<f32>().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = SpatialMap::from_fn(2, 9, 9, |_, _, _| rng.random_range(0.0..1.0));
    let a = ckn::network_apply(&net, &x).unwrap();
    let b = ckn::network_apply(&net32, &x.cast::<f32>()).unwrap();
    let scale = a.matrix().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (u, v) in a.matrix().iter().zip(b.matrix().iter()) {
        assert!((u - *v as f64).abs() < 1e-3 * scale);
    }
}
