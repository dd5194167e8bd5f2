//! Clear-sky geometry and irradiance against an independent SPA
//! implementation and a direct transcription of pvlib's Ineichen routine.

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use pvgnn::clearsky::{clearsky_at, clearsky_ineichen, solar_position, SolarPosition};
use pvgnn::graph::NodeLocation;
use solar_positioning::spa;

const DELTA_T: f64 = 69.0;

fn bern() -> NodeLocation {
    NodeLocation::new(46.95, 7.45, 540.0).unwrap()
}

fn spa_zenith(ts: DateTime<Utc>, site: &NodeLocation) -> (f64, f64) {
    let p = spa::solar_position(
        ts,
        site.latitude,
        site.longitude,
        site.altitude,
        DELTA_T,
        None,
    )
    .unwrap();
    (p.zenith_angle(), p.azimuth())
}

/// pvlib `ineichen` + `get_absolute_airmass(kastenyoung1989)` +
/// `alt2pres`, transcribed independently from the library code.
fn reference_ineichen(zenith: f64, altitude: f64, tl: f64, dni_extra: f64) -> (f64, f64) {
    let cos_z = zenith.to_radians().cos().max(0.0);
    if zenith >= 90.0 {
        return (0.0, 0.0);
    }
    let am_rel = 1.0 / (cos_z + 0.50572 * (6.07995 + (90.0 - zenith)).powf(-1.6364));
    let pressure = 100.0 * ((44331.514 - altitude) / 11880.516).powf(1.0 / 0.1902632);
    let am = am_rel * pressure / 101325.0;
    let fh1 = (-altitude / 8000.0).exp();
    let fh2 = (-altitude / 1250.0).exp();
    let cg1 = 5.09e-05 * altitude + 0.868;
    let cg2 = 3.92e-05 * altitude + 0.0387;
    let ghi = (-cg2 * am * (fh1 + fh2 * (tl - 1.0))).exp();
    let ghi = cg1 * dni_extra * cos_z * tl / tl * ghi.max(0.0);
    let b = 0.664 + 0.163 / fh1;
    let bnci = dni_extra * (b * (-0.09 * am * (tl - 1.0)).exp()).max(0.0);
    let bnci_2 = (1.0 - (0.1 - 0.2 * (-tl).exp()) / (0.1 + 0.882 / fh1)) / cos_z;
    let bnci_2 = ghi * bnci_2.max(0.0).min(1e20);
    (ghi, bnci.min(bnci_2))
}

#[test]
fn bern_summer_noon_zenith_matches_spa() {
    let ts = Utc.with_ymd_and_hms(2017, 6, 21, 12, 0, 0).unwrap();
    let ours = solar_position(ts, &bern());
    let (z, az) = spa_zenith(ts, &bern());
    assert!((ours.zenith - z).abs() < 0.5, "{} vs {}", ours.zenith, z);
    assert!(
        (ours.azimuth - az).abs() < 0.5,
        "{} vs {}",
        ours.azimuth,
        az
    );
}

#[test]
fn equator_equinox_solar_noon_is_near_overhead() {
    let site = NodeLocation::new(0.0, 0.0, 0.0).unwrap();
    // solar noon at Greenwich on 2017-03-20 is about 12:07 UTC
    let ts = Utc.with_ymd_and_hms(2017, 3, 20, 12, 7, 0).unwrap();
    let ours = solar_position(ts, &site);
    let (z, _) = spa_zenith(ts, &site);
    assert!(ours.zenith < 2.0);
    assert!(z < 2.0);
    assert!((ours.zenith - z).abs() < 0.5);
}

#[test]
fn zenith_agrees_with_spa_across_years_and_sites() {
    let sites = [
        bern(),
        NodeLocation::new(-33.9, 18.4, 10.0).unwrap(),
        NodeLocation::new(64.1, -21.9, 30.0).unwrap(),
        NodeLocation::new(35.7, 139.7, 40.0).unwrap(),
    ];
    let mut ts = Utc.with_ymd_and_hms(1955, 1, 1, 0, 0, 0).unwrap();
    let end = Utc.with_ymd_and_hms(2095, 1, 1, 0, 0, 0).unwrap();
    let mut worst: f64 = 0.0;
    while ts < end {
        for s in &sites {
            let ours = solar_position(ts, s);
            let (z, _) = spa_zenith(ts, s);
            worst = worst.max((ours.zenith - z).abs());
        }
        ts += Duration::hours(7 * 24 * 37 + 5);
    }
    assert!(worst < 0.5, "worst zenith deviation {worst}");
}

#[test]
fn bern_ghi_within_three_percent_of_reference() {
    let ts = Utc.with_ymd_and_hms(2017, 6, 21, 12, 0, 0).unwrap();
    let (z, _) = spa_zenith(ts, &bern());
    let dni_extra = 1367.0 * (1.0 + 0.033 * (2.0 * std::f64::consts::PI * 172.0 / 365.0).cos());
    let (ghi_ref, dni_ref) = reference_ineichen(z, bern().altitude, 3.0, dni_extra);
    let ours = clearsky_at(ts, &bern(), 3.0);
    assert!(
        (ours.ghi - ghi_ref).abs() / ghi_ref < 0.03,
        "{} vs {}",
        ours.ghi,
        ghi_ref
    );
    assert!(
        (ours.dni - dni_ref).abs() / dni_ref < 0.03,
        "{} vs {}",
        ours.dni,
        dni_ref
    );
    // sanity band for a clear midsummer noon at 540 m
    assert!((800.0..1000.0).contains(&ours.ghi));
}

#[test]
fn ineichen_matches_transcription_at_fixed_geometry() {
    for &(z, alt, tl) in &[
        (10.0, 0.0, 2.0),
        (45.0, 540.0, 3.0),
        (80.0, 1500.0, 6.5),
        (89.5, 200.0, 9.0),
    ] {
        let pos = SolarPosition {
            zenith: z,
            azimuth: 180.0,
            extraterrestrial_irradiance: 1360.0,
        };
        let site = NodeLocation::new(46.0, 7.0, alt).unwrap();
        let ours = clearsky_ineichen(&pos, &site, tl);
        let (g, d) = reference_ineichen(z, alt, tl, 1360.0);
        assert!((ours.ghi - g).abs() <= 1e-9 * g.max(1.0));
        assert!((ours.dni - d).abs() <= 1e-9 * d.max(1.0));
    }
}

#[test]
fn clear_day_ghi_is_unimodal_on_minute_grid() {
    for (y, m, d) in [(2017, 6, 21), (2017, 12, 21), (2017, 3, 20)] {
        let start = Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).unwrap();
        let series: Vec<f64> = (0..1440)
            .map(|i| clearsky_at(start + Duration::minutes(i), &bern(), 3.0).ghi)
            .collect();
        let peak = series
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(series[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(series[peak..].windows(2).all(|w| w[1] <= w[0]));
        // continuity: no jumps larger than a few W/m² per minute
        assert!(series.windows(2).all(|w| (w[1] - w[0]).abs() < 10.0));
    }
}

#[test]
fn night_is_zero_at_every_site() {
    let start = Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap();
    let sites = [bern(), NodeLocation::new(-45.0, 170.0, 100.0).unwrap()];
    for h in 0..(24 * 30) {
        let ts = start + Duration::minutes(h * 61);
        for s in &sites {
            let pos = solar_position(ts, s);
            let cs = clearsky_ineichen(&pos, s, 3.0);
            if pos.zenith >= 90.0 {
                assert_eq!((cs.ghi, cs.dni), (0.0, 0.0));
            } else {
                assert!(cs.ghi >= 0.0 && cs.dni >= 0.0);
            }
        }
    }
}

proptest! {
    #[test]
    fn irradiance_non_increasing_in_turbidity(
        zenith in 0.0f64..89.9,
        alt in 0.0f64..3000.0,
        tl in 1.0f64..9.9,
        dtl in 0.0f64..1.0,
    ) {
        let pos = SolarPosition { zenith, azimuth: 180.0, extraterrestrial_irradiance: 1367.0 };
        let site = NodeLocation::new(46.0, 7.0, alt).unwrap();
        let lo = clearsky_ineichen(&pos, &site, tl);
        let hi = clearsky_ineichen(&pos, &site, (tl + dtl).min(10.0));
        prop_assert!(hi.ghi <= lo.ghi);
        prop_assert!(hi.dni <= lo.dni);
    }

    #[test]
    fn position_is_deterministic_and_in_range(secs in -600_000_000i64..3_000_000_000i64, lat in -89.0f64..89.0, lon in -180.0f64..180.0) {
        let ts = Utc.timestamp_opt(secs, 0).unwrap();
        let site = NodeLocation::new(lat, lon, 0.0).unwrap();
        let a = solar_position(ts, &site);
        let b = solar_position(ts, &site);
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=180.0).contains(&a.zenith));
        prop_assert!((0.0..360.0).contains(&a.azimuth));
    }
}
