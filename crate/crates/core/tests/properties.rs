use fastband::fft::{convolve_counts_kernel, convolve_direct, KernelGrid};
use fastband::grid::{linear_binning, GridCounts, GridSpec, Sample};
use fastband::linalg::{BandwidthMatrix, SpdParam};
use fastband::mixture::{exact_ise, mixture_catalog};
use fastband::selector::dedup;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec_2d() -> GridSpec {
    GridSpec::new(vec![-1.0, -2.0], vec![3.0, 2.0], vec![11, 8]).unwrap()
}

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-1.0f64..=3.0, -2.0f64..=2.0).prop_map(|(a, b)| [a, b]), 1..max)
}

proptest! {
    #[test]
    fn spd_param_decodes_to_spd(theta in prop::collection::vec(-3.0f64..3.0, 6)) {
        let p = SpdParam::new(3, theta.clone()).unwrap();
        let h = p.decode().unwrap();
        prop_assert!(h.det() > 0.0);
        prop_assert!(h.matrix().check_symmetric(1e-12).is_ok());
        let back = SpdParam::encode(&h);
        for (a, b) in back.theta().iter().zip(&theta) {
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn binning_conserves_mass(pts in points(60)) {
        let s = Sample::from_rows(&pts).unwrap();
        let c = linear_binning(&s, &spec_2d()).unwrap();
        prop_assert!((c.total() - pts.len() as f64).abs() < 1e-9);
        prop_assert!(c.counts().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn binning_is_additive(a in points(30), b in points(30)) {
        let spec = spec_2d();
        let sa = Sample::from_rows(&a).unwrap();
        let sb = Sample::from_rows(&b).unwrap();
        let ca = linear_binning(&sa, &spec).unwrap();
        let cb = linear_binning(&sb, &spec).unwrap();
        let cab = linear_binning(&sa.concat(&sb).unwrap(), &spec).unwrap();
        for ((x, y), z) in ca.counts().iter().zip(cb.counts()).zip(cab.counts()) {
            prop_assert!((x + y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn binning_keeps_the_sample_mean(pts in points(40)) {
        let spec = spec_2d();
        let s = Sample::from_rows(&pts).unwrap();
        let c = linear_binning(&s, &spec).unwrap();
        let mean = s.mean();
        for axis in 0..2 {
            let mut m = 0.0;
            for ((_, x), w) in spec.points().zip(c.counts()) {
                m += w * x[axis];
            }
            prop_assert!((m / pts.len() as f64 - mean[axis]).abs() < 1e-9);
        }
    }

    #[test]
    fn fft_equals_direct_convolution(
        m1 in 2usize..14,
        m2 in 2usize..14,
        l1 in 0usize..14,
        l2 in 0usize..14,
        seed in any::<u64>(),
    ) {
        let l = [l1.min(m1 - 1), l2.min(m2 - 1)];
        let spec = GridSpec::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![m1, m2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = move || rng.random::<f64>();
        let counts: Vec<f64> = (0..m1 * m2).map(|_| next()).collect();
        let c = GridCounts::from_parts(spec, counts, 1).unwrap();
        let len = (2 * l[0] + 1) * (2 * l[1] + 1);
        let k = KernelGrid::new(l.to_vec(), (0..len).map(|_| next() - 0.5).collect()).unwrap();
        let fft = convolve_counts_kernel(&c, &k).unwrap();
        let direct = convolve_direct(&c, &k).unwrap();
        for (a, b) in fft.iter().zip(&direct) {
            prop_assert!((a - b).abs() < 1e-11 * (1.0 + b.abs()) * len as f64);
        }
    }

    #[test]
    fn exact_ise_is_nonnegative(pts in points(25), h11 in 0.01f64..2.0, h22 in 0.01f64..2.0, rho in -0.9f64..0.9) {
        let s = Sample::from_rows(&pts).unwrap();
        let off = rho * (h11 * h22).sqrt();
        let h = BandwidthMatrix::from_rows(&[[h11, off], [off, h22]]).unwrap();
        for name in ["standard", "trimodal", "fragile"] {
            let ise = exact_ise(&s, &h, &mixture_catalog(name).unwrap()).unwrap();
            prop_assert!(ise >= -1e-10);
        }
    }

    #[test]
    fn dedup_is_idempotent(pts in points(30), dup in 0usize..30) {
        let mut rows = pts.clone();
        rows.push(pts[dup % pts.len()]);
        rows.push([10.0, 10.0]);
        let s = Sample::from_rows(&rows).unwrap();
        let (once, removed) = dedup(&s).unwrap();
        prop_assert!(removed >= 1);
        let (twice, again) = dedup(&once).unwrap();
        prop_assert_eq!(again, 0);
        prop_assert_eq!(once, twice);
    }
}
