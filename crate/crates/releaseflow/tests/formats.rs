use std::path::Path;

use proptest::prelude::*;
use releaseflow::core::dataset::{FilmType, ReleaseCurve};
use releaseflow::core::nn::{init_params, MlpArchitecture, MlpParams};
use releaseflow::core::pinn::{LossComponents, PinnConfig, TrainedPinn};
use releaseflow::io;
use releaseflow::Error;

fn curve_strategy() -> impl Strategy<Value = ReleaseCurve> {
    (2usize..30, 0usize..3, prop::option::of(0.0f64..0.5)).prop_flat_map(|(n, film, sigma)| {
        (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(-0.1f64..1.1, n)).prop_map(move |(mut t, y)| {
            t.sort_by(f64::total_cmp);
            t.dedup();
            let y = y[..t.len()].to_vec();
            ReleaseCurve::new(FilmType::ALL[film], t, y, sigma)
        })
    })
    .prop_filter_map("valid curve", |c| c.ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn curve_csv_round_trips_exactly(c in curve_strategy()) {
        let text = io::format_curve(&c);
        let back = io::parse_curve(&text, None, Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn checkpoint_round_trips(values in prop::collection::vec(-5.0f64..5.0, 9)) {
        let arch = MlpArchitecture::new(1, 2).unwrap();
        let p = MlpParams::from_flat(arch, values).unwrap();
        let bytes = io::checkpoint_bytes(&p);
        prop_assert_eq!(io::params_from_checkpoint(&bytes, arch, Path::new("p.bin")).unwrap(), p);
    }
}

#[test]
fn checkpoint_rejects_a_different_architecture() {
    let p = init_params(MlpArchitecture::PINN, 0);
    let bytes = io::checkpoint_bytes(&p);
    let other = MlpArchitecture::new(3, 20).unwrap();
    assert!(io::params_from_checkpoint(&bytes, other, Path::new("p.bin")).is_err());
    assert!(io::params_from_checkpoint(&bytes[..bytes.len() - 1], MlpArchitecture::PINN, Path::new("p.bin")).is_err());
}

#[test]
fn trained_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let l = LossComponents { total: 0.5, data: 0.1, pde: 0.2, ic: 0.15, bc: 0.05 };
    let t = TrainedPinn {
        params: init_params(MlpArchitecture::PINN, 8),
        d_value: 0.0123,
        loss_history: vec![l, l],
        config: PinnConfig { seed: 8, ..PinnConfig::limited() },
    };
    io::save_trained(dir.path(), &t).unwrap();
    assert_eq!(io::load_trained(dir.path()).unwrap(), t);
}

#[test]
fn parse_errors_carry_path_and_line() {
    let e = io::parse_curve("#film=flat\n0,0\n0.5,abc\n", None, Path::new("bad.csv")).unwrap_err();
    match &e {
        Error::Parse { path, line, .. } => assert_eq!((path.as_path(), *line), (Path::new("bad.csv"), 3)),
        other => panic!("{other:?}"),
    }
    let msg = e.to_string();
    assert!(msg.contains("bad.csv") && msg.contains('3'), "{msg}");
}

#[test]
fn minutes_are_normalized_to_the_last_sample() {
    let c = io::parse_curve("#time_unit=minutes\ntime,fraction\n0,0\n1440,0.4\n2880,0.5\n", Some(FilmType::Crumpled2D), Path::new("m.csv")).unwrap();
    assert_eq!(c.times(), &[0.0, 0.5, 1.0]);
    assert_eq!(c.film(), FilmType::Crumpled2D);
}
