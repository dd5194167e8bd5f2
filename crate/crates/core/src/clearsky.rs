//! Solar geometry and Ineichen–Perez clear-sky irradiance.
//!
//! Solar position follows the NOAA spreadsheet formulation of Meeus'
//! low-precision algorithm (about 0.01° for 1950–2100, no refraction).

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Timelike, Utc};

use crate::exec::{self, Exec};
use crate::graph::NodeLocation;

pub const SOLAR_CONSTANT: f64 = 1367.0;
pub const DEFAULT_LINKE_TURBIDITY: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolarPosition {
    /// Degrees from vertical, in [0, 180].
    pub zenith: f64,
    /// Degrees clockwise from north, in [0, 360).
    pub azimuth: f64,
    /// W/m² at the top of the atmosphere.
    pub extraterrestrial_irradiance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClearSkySample {
    /// Global horizontal irradiance, W/m².
    pub ghi: f64,
    /// Direct normal irradiance, W/m².
    pub dni: f64,
}

impl ClearSkySample {
    pub const NIGHT: Self = Self { ghi: 0.0, dni: 0.0 };
}

fn julian_day(ts: &DateTime<Utc>) -> f64 {
    let secs = ts.timestamp() as f64 + f64::from(ts.timestamp_subsec_nanos()) * 1e-9;
    secs / 86_400.0 + 2_440_587.5
}

pub fn extraterrestrial_irradiance(day_of_year: u32) -> f64 {
    SOLAR_CONSTANT * (1.0 + 0.033 * (2.0 * PI * f64::from(day_of_year) / 365.0).cos())
}

pub fn solar_position(ts: DateTime<Utc>, site: &NodeLocation) -> SolarPosition {
    let jc = (julian_day(&ts) - 2_451_545.0) / 36_525.0;
    let mean_long = (280.46646 + jc * (36_000.769_83 + jc * 0.000_303_2)).rem_euclid(360.0);
    let mean_anom = 357.52911 + jc * (35_999.050_29 - 0.000_153_7 * jc);
    let ecc = 0.016_708_634 - jc * (0.000_042_037 + 0.000_000_126_7 * jc);
    let m = mean_anom.to_radians();
    let center = m.sin() * (1.914602 - jc * (0.004817 + 0.000014 * jc))
        + (2.0 * m).sin() * (0.019993 - 0.000101 * jc)
        + (3.0 * m).sin() * 0.000289;
    let omega = (125.04 - 1934.136 * jc).to_radians();
    let app_long = (mean_long + center - 0.00569 - 0.00478 * omega.sin()).to_radians();
    let mean_obliq =
        23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0;
    let obliq = (mean_obliq + 0.00256 * omega.cos()).to_radians();
    let decl = (obliq.sin() * app_long.sin()).asin();

    let y = (obliq / 2.0).tan().powi(2);
    let l0 = mean_long.to_radians();
    let eot_min = 4.0
        * (y * (2.0 * l0).sin() - 2.0 * ecc * m.sin() + 4.0 * ecc * y * m.sin() * (2.0 * l0).cos()
            - 0.5 * y * y * (4.0 * l0).sin()
            - 1.25 * ecc * ecc * (2.0 * m).sin())
        .to_degrees();

    let minutes = f64::from(ts.num_seconds_from_midnight()) / 60.0
        + f64::from(ts.timestamp_subsec_nanos()) * 1e-9 / 60.0;
    let true_solar = (minutes + eot_min + 4.0 * site.longitude).rem_euclid(1440.0);
    let hour_angle = true_solar / 4.0 - 180.0;

    let lat = site.latitude.to_radians();
    let ha = hour_angle.to_radians();
    let cos_z = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * ha.cos()).clamp(-1.0, 1.0);
    let zenith_rad = cos_z.acos();
    let sin_z = zenith_rad.sin();

    let azimuth = if sin_z.abs() < 1e-12 || lat.cos().abs() < 1e-12 {
        180.0
    } else {
        let c = ((lat.sin() * cos_z - decl.sin()) / (lat.cos() * sin_z)).clamp(-1.0, 1.0);
        let a = c.acos().to_degrees();
        if hour_angle > 0.0 {
            (a + 180.0).rem_euclid(360.0)
        } else {
            (540.0 - a).rem_euclid(360.0)
        }
    };

    SolarPosition {
        zenith: zenith_rad.to_degrees(),
        azimuth,
        extraterrestrial_irradiance: extraterrestrial_irradiance(ts.ordinal()),
    }
}

/// Kasten–Young (1989) relative optical airmass.
pub fn relative_airmass(zenith_deg: f64) -> f64 {
    1.0 / (zenith_deg.to_radians().cos() + 0.50572 * (96.07995 - zenith_deg).powf(-1.6364))
}

/// Standard-atmosphere pressure (Pa) at `altitude` meters.
pub fn altitude_to_pressure(altitude: f64) -> f64 {
    100.0 * ((44_331.514 - altitude) / 11_880.516).powf(1.0 / 0.190_263_2)
}

/// Ineichen–Perez clear-sky GHI and DNI with altitude-corrected coefficients.
///
/// `linke_turbidity` is expected in [1, 10]. Both outputs are zero once the
/// sun is at or below the horizon.
pub fn clearsky_ineichen(
    pos: &SolarPosition,
    site: &NodeLocation,
    linke_turbidity: f64,
) -> ClearSkySample {
    debug_assert!((1.0..=10.0).contains(&linke_turbidity));
    if !(pos.zenith < 90.0) {
        return ClearSkySample::NIGHT;
    }
    let cos_z = pos.zenith.to_radians().cos();
    let tl = linke_turbidity;
    let alt = site.altitude;
    let am = relative_airmass(pos.zenith) * altitude_to_pressure(alt) / 101_325.0;
    let i0 = pos.extraterrestrial_irradiance;

    let fh1 = (-alt / 8000.0).exp();
    let fh2 = (-alt / 1250.0).exp();
    let cg1 = 5.09e-5 * alt + 0.868;
    let cg2 = 3.92e-5 * alt + 0.0387;
    let ghi = cg1 * i0 * cos_z * (-cg2 * am * (fh1 + fh2 * (tl - 1.0))).exp();

    let b = 0.664 + 0.163 / fh1;
    let bnci = i0 * (b * (-0.09 * am * (tl - 1.0)).exp()).max(0.0);
    let ratio = (1.0 - (0.1 - 0.2 * (-tl).exp()) / (0.1 + 0.882 / fh1)) / cos_z;
    let bnci2 = ghi * ratio.clamp(0.0, 1e20);

    ClearSkySample {
        ghi: ghi.max(0.0),
        dni: bnci.min(bnci2).max(0.0),
    }
}

pub fn clearsky_at(ts: DateTime<Utc>, site: &NodeLocation, linke_turbidity: f64) -> ClearSkySample {
    clearsky_ineichen(&solar_position(ts, site), site, linke_turbidity)
}

/// Clear-sky irradiance for every (time, site) pair, stored time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ClearSkyTable {
    n_times: usize,
    n_sites: usize,
    ghi: Vec<f64>,
    dni: Vec<f64>,
}

impl ClearSkyTable {
    pub fn compute(
        exec: Exec,
        times: &[DateTime<Utc>],
        sites: &[NodeLocation],
        linke_turbidity: f64,
    ) -> Self {
        let columns = exec::map(exec, sites, |site| {
            times
                .iter()
                .map(|&t| clearsky_at(t, site, linke_turbidity))
                .collect::<Vec<_>>()
        });
        let (n_times, n_sites) = (times.len(), sites.len());
        let mut ghi = vec![0.0; n_times * n_sites];
        let mut dni = vec![0.0; n_times * n_sites];
        for (v, col) in columns.iter().enumerate() {
            for (t, s) in col.iter().enumerate() {
                ghi[t * n_sites + v] = s.ghi;
                dni[t * n_sites + v] = s.dni;
            }
        }
        Self {
            n_times,
            n_sites,
            ghi,
            dni,
        }
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn ghi(&self, t: usize, v: usize) -> f64 {
        self.ghi[t * self.n_sites + v]
    }

    pub fn dni(&self, t: usize, v: usize) -> f64 {
        self.dni[t * self.n_sites + v]
    }

    /// Row-major `[T, N]` GHI.
    pub fn ghi_data(&self) -> &[f64] {
        &self.ghi
    }

    pub fn dni_data(&self) -> &[f64] {
        &self.dni
    }
}
