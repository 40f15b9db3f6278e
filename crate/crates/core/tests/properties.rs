use proptest::prelude::*;

use outpaint_core::gcg::{build_window, max_index_gap, midpoints, select_keyframes};
use outpaint_core::io::{decode_hlvd, decode_ppm, encode_hlvd, encode_ppm};
use outpaint_core::metrics::{psnr, ssim, RegionSelector};
use outpaint_core::rng;
use outpaint_core::sampler::{self, SampleSchedule};
use outpaint_core::tiling::{axis_weights, blend, plan, Tile};
use outpaint_core::{Extent, VideoTensor};

fn small_video(seed: u64, f: usize, h: usize, w: usize, c: usize) -> VideoTensor {
    rng::gaussian(f, h, w, c, seed, 0)
        .map(|v| (0.5 * v).clamp(-1.0, 1.0))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_cover_every_voxel(
        f in 1usize..20, h in 1usize..40, w in 1usize..40,
        st in 1usize..12, sy in 1usize..24, sx in 1usize..24,
        ot in 0usize..12, oy in 0usize..24, ox in 0usize..24,
    ) {
        prop_assume!(ot < st && oy < sy && ox < sx);
        let e = Extent::new(f, h, w);
        let p = plan(e, st, sy, sx, ot, oy, ox).unwrap();
        let mut hits = vec![0u32; e.voxels()];
        for t in &p.tiles {
            prop_assert!(t.f1 <= f && t.y1 <= h && t.x1 <= w);
            prop_assert!(t.f0 < t.f1 && t.y0 < t.y1 && t.x0 < t.x1);
            for ff in t.frames() {
                for y in t.rows() {
                    for x in t.cols() {
                        hits[(ff * h + y) * w + x] += 1;
                    }
                }
            }
        }
        prop_assert!(hits.iter().all(|&n| n > 0));
    }

    #[test]
    fn blending_constant_tiles_is_identity(
        f in 1usize..10, h in 4usize..30, w in 4usize..30,
        sy in 2usize..16, oy in 0usize..8, c in -1.0f64..1.0,
    ) {
        prop_assume!(oy < sy);
        let p = plan(Extent::new(f, h, w), 4, sy, sy, 1, oy, oy).unwrap();
        let outs: Vec<(Tile, VideoTensor)> = p.tiles.iter().map(|t| {
            let e = t.extent();
            (*t, VideoTensor::filled(e.frames, e.height, e.width, 3, c))
        }).collect();
        let b = blend(&outs, &p).unwrap();
        prop_assert!(b.data().iter().all(|v| (v - c).abs() < 1e-9));
    }

    #[test]
    fn axis_weights_are_positive_and_symmetric(n in 1usize..64) {
        let w = axis_weights(n, false, false);
        prop_assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        for i in 0..n {
            prop_assert!((w[i] - w[n - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn keyframes_are_uniform_with_endpoints(frames in 2usize..3000, k in 2usize..40) {
        prop_assume!(k <= frames);
        let keys = select_keyframes(frames, k).unwrap();
        prop_assert_eq!(keys.len(), k);
        prop_assert_eq!(keys[0], 0);
        prop_assert_eq!(*keys.last().unwrap(), frames - 1);
        prop_assert!(keys.windows(2).all(|p| p[0] < p[1]));
        let ideal = (frames - 1) as f64 / (k - 1) as f64;
        prop_assert!(max_index_gap(&keys).unwrap() as f64 <= ideal.ceil());
    }

    #[test]
    fn windows_contain_keyframe_and_fit(frames in 1usize..200, big_k in 1usize..20, delta in 1usize..9, pick in 0.0f64..1.0) {
        prop_assume!(big_k <= frames);
        let k = ((frames - 1) as f64 * pick) as usize;
        let (w, d) = build_window(k, big_k, delta, frames).unwrap();
        prop_assert_eq!(w.len(), big_k);
        prop_assert!(d >= 1 && d <= delta);
        prop_assert!(w.contains(&k));
        prop_assert!(*w.last().unwrap() < frames);
        prop_assert!(w.windows(2).all(|p| p[1] - p[0] == d));
    }

    #[test]
    fn midpoint_densification_reaches_tau(frames in 2usize..4000, k in 2usize..20, tau in 1usize..50) {
        prop_assume!(k <= frames);
        let mut keys = select_keyframes(frames, k).unwrap();
        let mut rounds = 0;
        while max_index_gap(&keys).unwrap() > tau {
            let mids = midpoints(&keys, tau);
            prop_assert!(!mids.is_empty());
            keys.extend(mids);
            keys.sort_unstable();
            rounds += 1;
            prop_assert!(rounds <= outpaint_core::gcg::round_cap(frames, tau));
        }
    }

    #[test]
    fn hlvd_round_trip_is_lossless(seed in any::<u64>(), f in 1usize..4, h in 1usize..9, w in 1usize..9, three in any::<bool>()) {
        // samples are stored as f32; anything already representable survives exactly
        let v = small_video(seed, f, h, w, if three { 3 } else { 1 }).map(|x| x as f32 as f64).unwrap();
        let bytes = encode_hlvd(&v);
        let back = decode_hlvd(&bytes).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(encode_hlvd(&back), bytes);
    }

    #[test]
    fn ppm_round_trip_within_quantization(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
        let v = small_video(seed, 1, h, w, 3);
        let back = decode_ppm(&encode_ppm(&v, 0).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&v) <= 1.0 / 127.5);
    }

    #[test]
    fn metrics_symmetric_and_permutation_invariant(seed in any::<u64>(), f in 2usize..5) {
        let a = small_video(seed, f, 9, 10, 3);
        let b = small_video(seed ^ 1, f, 9, 10, 3);
        let all = RegionSelector::all(a.extent());
        prop_assert!((psnr(&a, &b, &all).unwrap() - psnr(&b, &a, &all).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let order: Vec<usize> = (0..f).rev().collect();
        let (pa, pb) = (a.select_frames(&order).unwrap(), b.select_frames(&order).unwrap());
        prop_assert!((psnr(&a, &b, &all).unwrap() - psnr(&pa, &pb, &all).unwrap()).abs() < 1e-9);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&pa, &pb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn euler_with_exact_velocity_recovers_x0(seed in any::<u64>(), steps in 1usize..60) {
        let x0 = small_video(seed, 2, 4, 4, 1);
        let eps = rng::gaussian_like(&x0, seed, 1);
        let v = sampler::velocity_target(&x0, &eps).unwrap();
        let s = SampleSchedule::new(steps, 0).unwrap();
        let mut z = sampler::add_noise(&x0, &eps, 1.0).unwrap();
        for (_, a, b) in s.descent() {
            z = sampler::step(&z, &v, a, b).unwrap();
        }
        prop_assert!(z.max_abs_diff(&x0) < 1e-9);
    }
}
