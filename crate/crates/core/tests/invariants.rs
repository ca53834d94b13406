use proptest::prelude::*;
use releaseflow_core::classical::{self, ModelKind};
use releaseflow_core::dataset::{self, FilmType};
use releaseflow_core::nn::{init_params, MlpArchitecture};
use releaseflow_core::pinn::{self, DMode, PinnConfig, TrainedPinn};
use releaseflow_core::uq::{self, UncertaintyBand, UqMethod};
use releaseflow_core::{fick, Error};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series_release_is_a_monotone_fraction(d in 1e-4f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (r_lo, r_hi) = (fick::release(d, lo), fick::release(d, hi));
        prop_assert!((0.0..=1.0).contains(&r_lo) && (0.0..=1.0).contains(&r_hi));
        prop_assert!(r_lo <= r_hi + 1e-12);
        prop_assert!(fick::release(d, hi) <= fick::release(d * 1.5, hi) + 1e-12);
    }

    #[test]
    fn lhs_fills_every_bin_once(n in 1usize..300, seed in any::<u64>()) {
        let c = pinn::sample_lhs(n, seed);
        prop_assert_eq!(c.len(), n);
        for axis in 0..2 {
            let mut seen = vec![false; n];
            for p in &c.points {
                let bin = ((p[axis] * n as f64) as usize).min(n - 1);
                prop_assert!(!seen[bin]);
                seen[bin] = true;
            }
        }
    }

    #[test]
    fn split_then_rejoin_is_identity(n in 2usize..15, film in 0usize..3) {
        let c = dataset::synthetic_curve(FilmType::ALL[film]);
        let s = dataset::split_first_n(&c, n).unwrap();
        prop_assert_eq!(s.train.len(), n);
        prop_assert_eq!(s.test.len(), c.len() - n);
        prop_assert_eq!(s.rejoin().unwrap(), c);
    }

    #[test]
    fn fits_report_mae_at_most_rmse(k in 0.05f64..0.9, n in 0.2f64..0.9, noise_seed in 0u64..1000) {
        let clean = dataset::peppas_burst_on(FilmType::Wrinkled1D, k, n, 0.0, dataset::canonical_times()).unwrap();
        let noisy = dataset::add_gaussian_noise(&clean, 0.02, noise_seed).unwrap();
        for kind in [ModelKind::FickSeries, ModelKind::Higuchi, ModelKind::Peppas] {
            let fit = classical::fit(kind, &noisy).unwrap();
            prop_assert!(fit.mae <= fit.rmse + 1e-15);
            prop_assert!(fit.model.params().iter().all(|p| p.is_finite() && *p > 0.0));
        }
    }

    #[test]
    fn band_std_is_never_negative(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 2..20)) {
        let b = UncertaintyBand::from_samples(vec![0.0, 0.25, 0.5, 0.75, 1.0], &rows, UqMethod::Ensemble).unwrap();
        prop_assert!(b.std.iter().all(|s| *s >= 0.0));
        prop_assert_eq!(b.n_samples, rows.len());
        let same = vec![rows[0].clone(); rows.len()];
        let b = UncertaintyBand::from_samples(b.times, &same, UqMethod::McDropout).unwrap();
        prop_assert!(b.std.iter().all(|s| *s == 0.0));
    }
}

fn untrained(p_keep: f64) -> TrainedPinn {
    let config = PinnConfig { p_keep, ..PinnConfig::comparison() };
    TrainedPinn { params: init_params(MlpArchitecture::PINN, 3), d_value: 0.01, loss_history: vec![], config }
}

#[test]
fn dropout_mean_converges_like_inverse_root_n() {
    let t = untrained(0.9);
    let times = [0.1, 0.4, 0.7, 1.0];
    // gap between the N-pass mean and the 2N-pass mean, over independent streams
    let gap = |n: usize| -> f64 {
        let mut total = 0.0;
        for seed in 0..12 {
            let a = uq::mc_dropout_band_with(&t, &times, n, seed, 0.9).unwrap();
            let b = uq::mc_dropout_band_with(&t, &times, 2 * n, seed, 0.9).unwrap();
            total += a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        }
        total.sqrt()
    };
    let ratio = gap(16) / gap(256);
    assert!((2.5..6.5).contains(&ratio), "16x more passes shrank the gap by {ratio}, expected about 4");
}

#[test]
fn dropout_needs_dropout() {
    assert!(matches!(uq::mc_dropout_band(&untrained(1.0), 10, 0), Err(Error::DropoutDisabled)));
    let b = uq::mc_dropout_band(&untrained(0.9), 100, 0).unwrap();
    assert_eq!(b.n_samples, 100);
    assert_eq!(b.times.len(), 101);
}

#[test]
fn noiseless_ensemble_is_tighter_than_noisy() {
    let curve = dataset::synthetic_curve(FilmType::Flat);
    let base = PinnConfig { epochs: 1500, n_collocation: 500, d_mode: DMode::Fixed(0.01), ..PinnConfig::ensemble() };
    let quiet = uq::train_ensemble(&base, &curve, 2, 0.0).unwrap();
    let noisy = uq::train_ensemble(&base, &curve, 2, 0.1).unwrap();
    assert_eq!((quiet.n_samples, noisy.n_samples), (2, 2));
    assert!(quiet.mean_std() < noisy.mean_std(), "{} vs {}", quiet.mean_std(), noisy.mean_std());
}

#[test]
fn ensemble_is_reproducible_and_forced_twins_agree() {
    let curve = dataset::synthetic_curve(FilmType::Crumpled2D);
    let base = PinnConfig { epochs: 20, n_collocation: 50, seed: 4, ..PinnConfig::ensemble() };
    let a = uq::train_ensemble(&base, &curve, 3, 0.1).unwrap();
    let b = uq::train_ensemble(&base, &curve, 3, 0.1).unwrap();
    assert_eq!(a, b);
    let twins = uq::train_ensemble_seeds(&base, &curve, &[9, 9], 0.1).unwrap();
    assert!(twins.std.iter().all(|s| *s == 0.0));
}
