use latentode::trajkit::{self, CsvFormat, TrajectorySet};
use latentode::{Error, Matrix};
use proptest::prelude::*;

fn trajectories() -> impl Strategy<Value = TrajectorySet> {
    (1usize..12, 1usize..5).prop_flat_map(|(frames, particles)| {
        prop::collection::vec(-100.0..100.0f64, frames * particles * 2).prop_map(move |v| {
            TrajectorySet::with_default_ids(Matrix::from_vec(frames, particles * 2, v).unwrap(), 30.0).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn long_format_round_trips(t in trajectories()) {
        let mut buf = Vec::new();
        trajkit::write_trajectories(&mut buf, &t, Some("seed=1")).unwrap();
        let back = trajkit::read_trajectories(buf.as_slice(), CsvFormat::Long).unwrap();
        prop_assert_eq!(back.features, t.features);
        prop_assert_eq!(back.particle_ids, t.particle_ids);
    }

    #[test]
    fn wide_format_round_trips(t in trajectories()) {
        let mut buf = Vec::new();
        trajkit::write_wide(&mut buf, &t, None).unwrap();
        let back = trajkit::read_trajectories(buf.as_slice(), CsvFormat::Auto).unwrap();
        prop_assert_eq!(back.features, t.features);
    }

    #[test]
    fn scaling_lands_in_unit_interval_and_inverts(t in trajectories()) {
        prop_assume!(t.n_frames() >= 2);
        let (scaled, params) = trajkit::minmax_scale(&t).unwrap();
        prop_assert!(scaled.features.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = trajkit::inverse_scale(&scaled, &params).unwrap();
        for (a, b) in back.features.as_slice().iter().zip(t.features.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn gaps_in_long_format_are_rejected() {
    let csv = "frame,id,x,y\n0,a,1,1\n0,b,2,2\n1,a,1,1\n";
    let err = trajkit::read_trajectories(csv.as_bytes(), CsvFormat::Long).unwrap_err();
    assert!(matches!(err, Error::Ingest(_)), "{err}");
}

#[test]
fn duplicate_entries_are_rejected() {
    let csv = "frame,id,x,y\n0,a,1,1\n0,a,2,2\n";
    assert!(trajkit::read_trajectories(csv.as_bytes(), CsvFormat::Long).is_err());
}

#[test]
fn bad_cells_report_their_location() {
    let csv = "frame,id,x,y\n0,a,1,1\n1,a,oops,1\n";
    match trajkit::read_trajectories(csv.as_bytes(), CsvFormat::Long) {
        Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn ids_keep_first_appearance_order() {
    let csv = "frame,id,x,y\n0,zeta,1,2\n0,alpha,3,4\n1,zeta,5,6\n1,alpha,7,8\n";
    let t = trajkit::read_trajectories(csv.as_bytes(), CsvFormat::Auto).unwrap();
    assert_eq!(t.particle_ids, ["zeta", "alpha"]);
    assert_eq!(t.features.row(1), &[5.0, 6.0, 7.0, 8.0]);
}

#[test]
fn scaling_a_single_frame_is_an_input_error() {
    let t = TrajectorySet::with_default_ids(Matrix::zeros(1, 2), 1.0).unwrap();
    assert!(matches!(trajkit::minmax_scale(&t), Err(Error::Input(_))));
}

#[test]
fn constant_columns_scale_to_zero() {
    let t = TrajectorySet::with_default_ids(Matrix::from_rows(&[vec![2.0, 1.0], vec![2.0, 3.0]]).unwrap(), 1.0).unwrap();
    let (s, _) = trajkit::minmax_scale(&t).unwrap();
    assert_eq!(s.features.column_values(0), [0.0, 0.0]);
    assert_eq!(s.features.column_values(1), [0.0, 1.0]);
}

#[test]
fn smoothing_keeps_straight_lines() {
    let rows: Vec<Vec<f64>> = (0..40).map(|t| vec![0.01 * t as f64, 0.5 - 0.002 * t as f64]).collect();
    let t = TrajectorySet::with_default_ids(Matrix::from_rows(&rows).unwrap(), 1.0).unwrap();
    let s = trajkit::smooth_trajectories(&t, 31, 2).unwrap();
    assert!(s.features.max_abs_diff(&t.features) < 1e-12);
}
