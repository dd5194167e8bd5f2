//! Simulation, CSV ingest, rolling means and windowing.

use std::io::Cursor;

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use pvgnn::clearsky::{clearsky_at, DEFAULT_LINKE_TURBIDITY};
use pvgnn::datagen::{
    make_windows, normalize, read_csv, rolling_mean, simulate_power, simulate_with_field,
    split_by_days, window_count, window_starts, write_csv, CloudBlob, CloudField, CloudParams,
    Dataset, FeatureSet, LocalFrame, PlantSpec, SyntheticConfig, WindowSpec, STEPS_PER_DAY,
    WARMUP_STEPS,
};
use pvgnn::exec::Exec;
use pvgnn::graph::NodeLocation;
use pvgnn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap()
}

fn frame() -> LocalFrame {
    LocalFrame {
        lat0: 46.95,
        lon0: 7.45,
    }
}

/// Plants on an east-west line through the frame origin, at the given km.
fn plants_at(xs: &[f64]) -> Vec<PlantSpec> {
    xs.iter()
        .map(|&x| PlantSpec::new(frame().unproject(x, 0.0, 540.0).unwrap(), 100.0).unwrap())
        .collect()
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Dataset {
    let power = (0..n * t).map(|_| rng.gen_range(0.0..50.0)).collect();
    Dataset::new(start(), n, power).unwrap()
}

#[test]
fn zero_blobs_give_clear_sky_power_exactly() {
    let plants = plants_at(&[-10.0, 0.0, 15.0]);
    let (data, field) = simulate_power(&plants, &CloudParams::clear_sky(), start(), 4).unwrap();
    assert!(field.blobs().is_empty());
    for t in 0..data.n_times() {
        for (v, p) in plants.iter().enumerate() {
            let ghi = clearsky_at(data.timestamp(t), &p.location, DEFAULT_LINKE_TURBIDITY).ghi;
            assert_eq!(data.power(t, v), p.capacity_kw * ghi / 1000.0);
        }
    }
}

#[test]
fn parked_blob_attenuates_only_its_node() {
    let plants = plants_at(&[-20.0, 0.0, 20.0]);
    let blob = CloudBlob {
        x_km: 0.0,
        y_km: 0.0,
        radius_km: 0.5,
        opacity: 0.9,
    };
    let field = CloudField::new(frame(), (0.0, 0.0), vec![blob]).unwrap();
    let cloudy = simulate_with_field(&plants, &field, start(), 4, 3.0).unwrap();
    let clear = simulate_with_field(
        &plants,
        &CloudField::new(frame(), (0.0, 0.0), vec![]).unwrap(),
        start(),
        4,
        3.0,
    )
    .unwrap();
    for t in 0..cloudy.n_times() {
        assert_eq!(cloudy.power(t, 0), clear.power(t, 0));
        assert_eq!(cloudy.power(t, 2), clear.power(t, 2));
        if clear.power(t, 1) > 0.0 {
            assert!(cloudy.power(t, 1) < 0.2 * clear.power(t, 1));
        }
    }
}

#[test]
fn advected_blob_dip_lags_by_distance_over_speed() {
    // nodes 20 km apart along an eastward 20 km/h wind
    let plants = plants_at(&[0.0, 20.0]);
    // reaches x = 0 at 09:00 UTC and x = 20 at 10:00 UTC
    let blob = CloudBlob {
        x_km: -180.0,
        y_km: 0.0,
        radius_km: 4.0,
        opacity: 0.8,
    };
    let field = CloudField::new(frame(), (20.0, 0.0), vec![blob]).unwrap();
    let cloudy = simulate_with_field(&plants, &field, start(), 4, 3.0).unwrap();
    let clear = simulate_with_field(
        &plants,
        &CloudField::new(frame(), (20.0, 0.0), vec![]).unwrap(),
        start(),
        4,
        3.0,
    )
    .unwrap();
    let dip = |v: usize| {
        (0..STEPS_PER_DAY)
            .filter(|&t| clear.power(t, v) > 0.0)
            .min_by(|&a, &b| {
                let ka = cloudy.power(a, v) / clear.power(a, v);
                let kb = cloudy.power(b, v) / clear.power(b, v);
                ka.total_cmp(&kb)
            })
            .unwrap()
    };
    let (up, down) = (dip(0), dip(1));
    assert_eq!(up, 36);
    let lag = down as i64 - up as i64;
    assert!((lag - 4).abs() <= 1, "lag {lag} steps");
}

#[test]
fn clear_sky_index_cross_correlation_peaks_at_advection_lag() {
    let plants = plants_at(&[0.0, 20.0]);
    let params = CloudParams {
        seed: 3,
        regime_multipliers: vec![1.0],
        density_per_1000km2: 3.0,
        ..CloudParams::default()
    };
    let (data, _) = simulate_power(&plants, &params, start(), 20).unwrap();
    let csi: Vec<Vec<Option<f64>>> = (0..2)
        .map(|v| {
            (0..data.n_times())
                .map(|t| {
                    let ghi = clearsky_at(data.timestamp(t), &plants[v].location, 3.0).ghi;
                    (ghi > 200.0).then(|| data.power(t, v) / (plants[v].capacity_kw * ghi / 1000.0))
                })
                .collect()
        })
        .collect();
    let corr = |lag: usize| {
        let pairs: Vec<(f64, f64)> = (0..data.n_times() - lag)
            .filter_map(|t| Some((csi[0][t]?, csi[1][t + lag]?)))
            .collect();
        let n = pairs.len() as f64;
        let (ma, mb) = pairs
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in &pairs {
            sab += (a - ma) * (b - mb);
            saa += (a - ma) * (a - ma);
            sbb += (b - mb) * (b - mb);
        }
        sab / (saa * sbb).sqrt()
    };
    let best = (0..=12)
        .max_by(|&a, &b| corr(a).total_cmp(&corr(b)))
        .unwrap();
    assert!((best as i64 - 4).abs() <= 1, "peak at lag {best}");
}

#[test]
fn generated_power_is_zero_at_night_and_bounded() {
    let cfg = SyntheticConfig {
        n_nodes: 6,
        days: 5,
        ..SyntheticConfig::default()
    };
    let (plants, data, _) = cfg.generate().unwrap();
    for t in 0..data.n_times() {
        for (v, p) in plants.iter().enumerate() {
            let ghi = clearsky_at(data.timestamp(t), &p.location, 3.0).ghi;
            if ghi == 0.0 {
                assert_eq!(data.power(t, v), 0.0);
            }
            assert!(data.power(t, v) >= 0.0 && data.power(t, v) <= p.capacity_kw);
        }
    }
}

#[test]
fn simulation_is_seed_deterministic() {
    let cfg = SyntheticConfig {
        n_nodes: 4,
        days: 4,
        ..SyntheticConfig::default()
    };
    let a = cfg.generate().unwrap();
    let b = cfg.generate().unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let c = SyntheticConfig { seed: 8, ..cfg }.generate().unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn too_few_days_rejected() {
    let plants = plants_at(&[0.0, 5.0]);
    let err = simulate_power(&plants, &CloudParams::default(), start(), 3).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(ref m) if m.contains("72 h")));
    assert!(simulate_power(&plants[..1], &CloudParams::default(), start(), 5).is_err());
}

#[test]
fn rolling_mean_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = random_dataset(&mut rng, 3, 5 * STEPS_PER_DAY);
    for t in [288, 300, 400, 480] {
        let got = rolling_mean(&d, t).unwrap();
        for v in 0..3 {
            let mut s = 0.0;
            let mut count = 0;
            for k in 0..d.n_times() {
                if k + 288 >= t && k + 96 < t {
                    s += d.power(k, v);
                    count += 1;
                }
            }
            assert_eq!(count, 192);
            assert!((got[v] - s / 192.0).abs() < 1e-12);
        }
    }
}

#[test]
fn rolling_mean_is_translation_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = random_dataset(&mut rng, 2, 5 * STEPS_PER_DAY);
    let k = 37;
    let tail = d.slice(k..d.n_times()).unwrap();
    for t in 288..tail.n_times() {
        assert_eq!(
            rolling_mean(&tail, t).unwrap(),
            rolling_mean(&d, t + k).unwrap()
        );
    }
    let moved = d.shifted(k as i64);
    assert_eq!(moved.timestamp(0), d.timestamp(k));
    assert_eq!(
        rolling_mean(&moved, 300).unwrap(),
        rolling_mean(&d, 300).unwrap()
    );
}

#[test]
fn normalization_round_trip_and_no_clipping() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = random_dataset(&mut rng, 3, 5 * STEPS_PER_DAY);
    let (train, _) = split_by_days(d.n_times(), 0.6).unwrap();
    let n = normalize(&d, train.clone()).unwrap();
    let locs = vec![NodeLocation::new(46.9, 7.4, 500.0).unwrap(); 3];
    let f = FeatureSet::build(&n, &locs, 3.0, Exec::default()).unwrap();
    let max = n.per_node_max().unwrap();
    let mut above = false;
    for t in 0..d.n_times() {
        for v in 0..3 {
            let back = f.power(t, v) * max[v];
            assert!((back - d.power(t, v)).abs() <= 1e-12 * d.power(t, v).max(1.0));
            if t >= train.end && f.power(t, v) > 1.0 {
                above = true;
            }
            if train.contains(&t) {
                assert!(f.power(t, v) <= 1.0);
            }
        }
    }
    assert!(
        above,
        "evaluation values above the training max stay unclipped"
    );
}

#[test]
fn window_count_matches_enumeration() {
    for t_len in [300, 320, 333, 400, 500] {
        for &(m, h, stride) in &[(1, 1, 1), (4, 2, 3), (16, 24, 1), (16, 24, 7), (5, 9, 50)] {
            let spec = WindowSpec::new(m, h, stride).unwrap();
            // enumerate every candidate decoder start
            let brute = (0..=t_len)
                .filter(|&t| {
                    t >= WARMUP_STEPS + m
                        && (t - WARMUP_STEPS - m).is_multiple_of(stride)
                        && t + h <= t_len
                })
                .count();
            assert_eq!(window_count(t_len, spec), brute);
            assert_eq!(window_starts(0..t_len, spec).len(), brute);
        }
    }
}

#[test]
fn windows_have_expected_shapes_and_channels() {
    let cfg = SyntheticConfig {
        n_nodes: 3,
        days: 5,
        ..SyntheticConfig::default()
    };
    let (plants, data, _) = cfg.generate().unwrap();
    let data = normalize(&data, 0..data.n_times()).unwrap();
    let locs: Vec<_> = plants.iter().map(|p| p.location).collect();
    let f = FeatureSet::build(&data, &locs, 3.0, Exec::default()).unwrap();
    let spec = WindowSpec::new(16, 24, 5).unwrap();
    let frames = make_windows(&f, 0..data.n_times(), spec).unwrap();
    assert_eq!(frames.len(), window_count(data.n_times(), spec));
    let w = &frames[3];
    assert_eq!(w.encoder_x.shape(), &[16, 3, 3]);
    assert_eq!(w.decoder_y.shape(), &[24, 3, 3]);
    assert_eq!(w.target.shape(), &[24, 3]);
    let max = data.per_node_max().unwrap();
    for v in 0..3 {
        // encoder ends right before the decoder starts
        let t_last = w.start - 1;
        assert_eq!(w.encoder_x.at(&[15, v, 0]), data.power(t_last, v) / max[v]);
        let pbar = rolling_mean(&data, t_last).unwrap()[v] / max[v];
        assert!((w.encoder_x.at(&[15, v, 1]) - pbar).abs() < 1e-12);
        let g = clearsky_at(data.timestamp(w.start), &locs[v], 3.0);
        assert!((w.decoder_y.at(&[0, v, 0]) - g.ghi / 1000.0).abs() < 1e-15);
        assert!((w.decoder_y.at(&[0, v, 1]) - g.dni / 1000.0).abs() < 1e-15);
        assert_eq!(w.target.at(&[0, v]), data.power(w.start, v) / max[v]);
    }
    // one window when the stride spans the dataset
    let one = WindowSpec::new(16, 24, data.n_times()).unwrap();
    assert_eq!(make_windows(&f, 0..data.n_times(), one).unwrap().len(), 1);
    assert!(matches!(
        f.frame(WARMUP_STEPS, 16, 24),
        Err(Error::Window(_))
    ));
}

#[test]
fn eval_windows_stay_inside_their_range() {
    let spec = WindowSpec::new(16, 24, 1).unwrap();
    let starts = window_starts(4000..5760, spec);
    assert_eq!(starts[0], 4016);
    assert_eq!(*starts.last().unwrap() + 24, 5760);
}

fn csv_text(rows: &[(String, Vec<f64>)], nodes: usize) -> String {
    let mut s = String::from("timestamp_utc");
    for v in 0..nodes {
        s += &format!(",node_{v}");
    }
    s.push('\n');
    for (ts, vals) in rows {
        s += ts;
        for v in vals {
            s += &format!(",{v}");
        }
        s.push('\n');
    }
    s
}

fn grid_rows(n_rows: usize, nodes: usize) -> Vec<(String, Vec<f64>)> {
    (0..n_rows)
        .map(|t| {
            let ts = start() + Duration::minutes(15 * t as i64);
            (
                ts.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                (0..nodes).map(|v| (t * (v + 1)) as f64 * 0.5).collect(),
            )
        })
        .collect()
}

#[test]
fn csv_one_day_two_nodes() {
    let text = csv_text(&grid_rows(96, 2), 2);
    let d = read_csv(Cursor::new(text)).unwrap();
    assert_eq!((d.n_times(), d.n_nodes()), (96, 2));
    assert_eq!(d.power(10, 1), 10.0);
    assert_eq!(d.start(), start());
}

#[test]
fn csv_single_missing_row_is_interpolated() {
    let mut rows = grid_rows(96, 2);
    rows.remove(40);
    let d = read_csv(Cursor::new(csv_text(&rows, 2))).unwrap();
    assert_eq!(d.n_times(), 96);
    assert!((d.power(40, 0) - 20.0).abs() < 1e-12);
    assert!((d.power(40, 1) - 40.0).abs() < 1e-12);
}

#[test]
fn csv_long_gap_rejected_with_interval() {
    let mut rows = grid_rows(400, 1);
    rows.drain(100..100 + 192);
    let err = read_csv(Cursor::new(csv_text(&rows, 1))).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("192 missing rows"), "{msg}");
    assert!(msg.contains("2017-06-02 01:00:00"), "{msg}");
    assert!(msg.contains("2017-06-04 00:45:00"), "{msg}");
}

#[test]
fn csv_errors_carry_row_numbers() {
    let mut rows = grid_rows(10, 2);
    rows[5].1[1] = -1.0;
    match read_csv(Cursor::new(csv_text(&rows, 2))) {
        Err(Error::Parse { row, message }) => {
            assert_eq!(row, 7);
            assert!(message.contains("negative"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let mut rows = grid_rows(10, 2);
    rows[3].0 = "2017-06-01T00:50:00Z".into();
    match read_csv(Cursor::new(csv_text(&rows, 2))) {
        Err(Error::Parse { row, .. }) => assert_eq!(row, 5),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn csv_write_read_round_trip_is_exact() {
    let cfg = SyntheticConfig {
        n_nodes: 3,
        days: 4,
        ..SyntheticConfig::default()
    };
    let (_, data, _) = cfg.generate().unwrap();
    let mut buf = Vec::new();
    write_csv(&data, &mut buf).unwrap();
    let back = read_csv(Cursor::new(buf.clone())).unwrap();
    assert_eq!(back, data);
    let mut again = Vec::new();
    write_csv(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rolling_mean_is_mean_of_192_samples(seed in any::<u64>(), t in 288usize..480) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dataset(&mut rng, 2, 5 * STEPS_PER_DAY);
        let got = rolling_mean(&d, t).unwrap();
        for v in 0..2 {
            let s: f64 = (t - 288..t - 96).map(|k| d.power(k, v)).sum();
            prop_assert!((got[v] - s / 192.0).abs() < 1e-12);
        }
    }
}
