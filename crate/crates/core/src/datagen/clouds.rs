//! Advecting Gaussian cloud blobs over a set of plants.
//!
//! Blobs are laid out once on an upwind strip long enough to feed the whole
//! simulation; at hour `τ` a blob's centre is its initial centre plus
//! `wind * τ`. Transmittance at a point is `Π (1 - opacity * gaussian)`.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Dataset, PlantSpec, STEPS_PER_DAY, STEP_MINUTES, WARMUP_STEPS};
use crate::clearsky::{ClearSkyTable, DEFAULT_LINKE_TURBIDITY};
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::graph::{NodeLocation, EARTH_RADIUS_KM};

/// Gaussian influence is ignored beyond this many radii.
const CUTOFF_RADII: f64 = 5.0;
const MIN_DAYS: usize = WARMUP_STEPS / STEPS_PER_DAY + 1;

/// Equirectangular projection to km east/north of an origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub lat0: f64,
    pub lon0: f64,
}

impl LocalFrame {
    pub fn centered_on(locations: &[NodeLocation]) -> Self {
        let n = locations.len().max(1) as f64;
        Self {
            lat0: locations.iter().map(|l| l.latitude).sum::<f64>() / n,
            lon0: locations.iter().map(|l| l.longitude).sum::<f64>() / n,
        }
    }

    pub fn project(&self, loc: &NodeLocation) -> (f64, f64) {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        (
            (loc.longitude - self.lon0) * k * self.lat0.to_radians().cos(),
            (loc.latitude - self.lat0) * k,
        )
    }

    pub fn unproject(&self, x_km: f64, y_km: f64, altitude: f64) -> Result<NodeLocation> {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        NodeLocation::new(
            self.lat0 + y_km / k,
            self.lon0 + x_km / (k * self.lat0.to_radians().cos()),
            altitude,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudBlob {
    /// Centre at simulation start, km east of the frame origin.
    pub x_km: f64,
    /// Centre at simulation start, km north of the frame origin.
    pub y_km: f64,
    pub radius_km: f64,
    /// Peak fraction of light removed, in [0, 0.9].
    pub opacity: f64,
}

impl CloudBlob {
    fn validate(&self) -> Result<()> {
        if !(self.radius_km > 0.0) {
            return Err(invalid(format!(
                "blob radius {} must be positive",
                self.radius_km
            )));
        }
        if !(0.0..=0.9).contains(&self.opacity) {
            return Err(invalid(format!(
                "blob opacity {} outside [0, 0.9]",
                self.opacity
            )));
        }
        Ok(())
    }
}

/// How the random cloud field is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudParams {
    pub wind_kmh: f64,
    /// Compass bearing the wind blows towards (90 = eastward).
    pub wind_towards_deg: f64,
    /// Mean blob count per 1000 km² before regime scaling.
    pub density_per_1000km2: f64,
    pub radius_km: (f64, f64),
    pub opacity: (f64, f64),
    /// Length of a weather regime in hours of advection.
    pub regime_hours: f64,
    /// Density multipliers a regime draws from, uniformly.
    pub regime_multipliers: Vec<f64>,
    pub seed: u64,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            wind_kmh: 20.0,
            wind_towards_deg: 90.0,
            density_per_1000km2: 1.5,
            radius_km: (4.0, 12.0),
            opacity: (0.3, 0.9),
            regime_hours: 24.0,
            regime_multipliers: vec![0.0, 0.5, 1.0, 1.5, 2.5],
            seed: 0,
        }
    }
}

impl CloudParams {
    pub fn clear_sky() -> Self {
        Self {
            density_per_1000km2: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (r0, r1) = self.radius_km;
        let (o0, o1) = self.opacity;
        if !(self.wind_kmh >= 0.0) || !self.wind_kmh.is_finite() {
            return Err(invalid(format!("wind speed {} km/h", self.wind_kmh)));
        }
        if !(self.density_per_1000km2 >= 0.0) {
            return Err(invalid(format!(
                "cloud density {}",
                self.density_per_1000km2
            )));
        }
        if !(r0 > 0.0 && r1 >= r0) {
            return Err(invalid(format!("radius range {r0}..{r1}")));
        }
        if !(o0 >= 0.0 && o1 >= o0 && o1 <= 0.9) {
            return Err(invalid(format!("opacity range {o0}..{o1}")));
        }
        if !(self.regime_hours > 0.0) || self.regime_multipliers.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid(
                "regimes need positive length and non-negative multipliers",
            ));
        }
        Ok(())
    }

    fn wind_unit(&self) -> (f64, f64) {
        let b = self.wind_towards_deg.to_radians();
        (b.sin(), b.cos())
    }
}

/// A concrete, fully specified cloud field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudField {
    pub frame: LocalFrame,
    /// Blob velocity in km/h (east, north).
    pub wind: (f64, f64),
    blobs: Vec<CloudBlob>,
    /// Initial along-wind coordinate of each blob, ascending.
    along: Vec<f64>,
    max_radius: f64,
}

impl CloudField {
    pub fn new(frame: LocalFrame, wind: (f64, f64), mut blobs: Vec<CloudBlob>) -> Result<Self> {
        for b in &blobs {
            b.validate()?;
        }
        let speed = wind.0.hypot(wind.1);
        let unit = if speed > 0.0 {
            (wind.0 / speed, wind.1 / speed)
        } else {
            (1.0, 0.0)
        };
        let key = |b: &CloudBlob| b.x_km * unit.0 + b.y_km * unit.1;
        blobs.sort_by(|a, b| key(a).total_cmp(&key(b)));
        let along = blobs.iter().map(key).collect();
        let max_radius = blobs.iter().map(|b| b.radius_km).fold(0.0, f64::max);
        Ok(Self {
            frame,
            wind,
            blobs,
            along,
            max_radius,
        })
    }

    /// Draws blobs covering every plant for `hours` of advection.
    pub fn generate(params: &CloudParams, plants: &[PlantSpec], hours: f64) -> Result<Self> {
        params.validate()?;
        let locs: Vec<NodeLocation> = plants.iter().map(|p| p.location).collect();
        let frame = LocalFrame::centered_on(&locs);
        let (ux, uy) = params.wind_unit();
        let speed = params.wind_kmh;
        let pts: Vec<(f64, f64)> = locs.iter().map(|l| frame.project(l)).collect();
        let along = |p: &(f64, f64)| p.0 * ux + p.1 * uy;
        let cross = |p: &(f64, f64)| -p.0 * uy + p.1 * ux;
        let margin = CUTOFF_RADII * params.radius_km.1;
        let fold = |f: &dyn Fn(&(f64, f64)) -> f64| {
            pts.iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (s_lo, s_hi) = fold(&along);
        let (c_lo, c_hi) = fold(&cross);
        let s_start = s_lo - margin - speed * hours;
        let s_end = s_hi + margin;
        let (c_start, c_end) = (c_lo - margin, c_hi + margin);

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let regime_len = if speed > 0.0 {
            speed * params.regime_hours
        } else {
            s_end - s_start
        };
        let mut blobs = Vec::new();
        let mut seg = s_start;
        while seg < s_end {
            let seg_end = (seg + regime_len).min(s_end);
            let mult = params
                .regime_multipliers
                .choose(&mut rng)
                .copied()
                .unwrap_or(1.0);
            let area = (seg_end - seg) * (c_end - c_start);
            let mean = params.density_per_1000km2 * mult * area / 1000.0;
            let count = if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..count {
                let s = rng.gen_range(seg..seg_end);
                let c = rng.gen_range(c_start..c_end);
                let radius_km = sample_range(&mut rng, params.radius_km);
                let opacity = sample_range(&mut rng, params.opacity);
                blobs.push(CloudBlob {
                    x_km: s * ux - c * uy,
                    y_km: s * uy + c * ux,
                    radius_km,
                    opacity,
                });
            }
            seg = seg_end;
        }
        Self::new(frame, (speed * ux, speed * uy), blobs)
    }

    pub fn blobs(&self) -> &[CloudBlob] {
        &self.blobs
    }

    /// Fraction of light reaching `(x, y)` km at `hours` after start.
    pub fn transmittance(&self, x: f64, y: f64, hours: f64) -> f64 {
        if self.blobs.is_empty() {
            return 1.0;
        }
        let (dx, dy) = (self.wind.0 * hours, self.wind.1 * hours);
        let speed = self.wind.0.hypot(self.wind.1);
        let unit = if speed > 0.0 {
            (self.wind.0 / speed, self.wind.1 / speed)
        } else {
            (1.0, 0.0)
        };
        // blobs whose advected along-wind coordinate can reach the point
        let s = (x - dx) * unit.0 + (y - dy) * unit.1;
        let reach = CUTOFF_RADII * self.max_radius;
        let lo = self.along.partition_point(|&a| a < s - reach);
        let hi = self.along.partition_point(|&a| a <= s + reach);
        let mut t = 1.0;
        for b in &self.blobs[lo..hi] {
            let (bx, by) = (b.x_km + dx, b.y_km + dy);
            let d2 = (x - bx).powi(2) + (y - by).powi(2);
            let r2 = b.radius_km * b.radius_km;
            if d2 <= (CUTOFF_RADII * CUTOFF_RADII) * r2 {
                t *= 1.0 - b.opacity * (-d2 / (2.0 * r2)).exp();
            }
        }
        t
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Production under an explicit cloud field:
/// `capacity * transmittance * ghi / 1000`, capped at capacity.
pub fn simulate_with_field(
    plants: &[PlantSpec],
    field: &CloudField,
    start: DateTime<Utc>,
    days: usize,
    linke_turbidity: f64,
) -> Result<Dataset> {
    if plants.len() < 2 {
        return Err(invalid(format!(
            "need at least 2 plants, got {}",
            plants.len()
        )));
    }
    if days < MIN_DAYS {
        return Err(invalid(format!(
            "{days} days is too short: the rolling mean needs a 72 h warm-up, so at least {MIN_DAYS} days"
        )));
    }
    let n_times = days * STEPS_PER_DAY;
    let times: Vec<_> = (0..n_times)
        .map(|t| start + Duration::minutes(STEP_MINUTES * t as i64))
        .collect();
    let locs: Vec<NodeLocation> = plants.iter().map(|p| p.location).collect();
    let table = ClearSkyTable::compute(Exec::default(), &times, &locs, linke_turbidity);
    let pts: Vec<(f64, f64)> = locs.iter().map(|l| field.frame.project(l)).collect();
    let n = plants.len();
    let mut power = vec![0.0; n_times * n];
    for t in 0..n_times {
        let hours = (STEP_MINUTES * t as i64) as f64 / 60.0;
        for (v, plant) in plants.iter().enumerate() {
            let ghi = table.ghi(t, v);
            if ghi <= 0.0 {
                continue;
            }
            let tr = field.transmittance(pts[v].0, pts[v].1, hours);
            power[t * n + v] = (plant.capacity_kw * tr * ghi / 1000.0).min(plant.capacity_kw);
        }
    }
    Dataset::new(start, n, power)
}

/// Draws a cloud field from `params` and simulates production.
pub fn simulate_power(
    plants: &[PlantSpec],
    params: &CloudParams,
    start: DateTime<Utc>,
    days: usize,
) -> Result<(Dataset, CloudField)> {
    if days < MIN_DAYS {
        return Err(invalid(format!(
            "{days} days is too short: the rolling mean needs a 72 h warm-up, so at least {MIN_DAYS} days"
        )));
    }
    let field = CloudField::generate(params, plants, (days * 24) as f64)?;
    let data = simulate_with_field(plants, &field, start, days, DEFAULT_LINKE_TURBIDITY)?;
    Ok((data, field))
}

/// Everything needed to draw a synthetic plant network and its production.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub days: usize,
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub center: NodeLocation,
    /// Extent of the plant box along and across the wind, km.
    pub along_km: f64,
    pub across_km: f64,
    pub capacity_kw: (f64, f64),
    pub clouds: CloudParams,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_nodes: 12,
            days: 60,
            seed: 7,
            start: Utc.with_ymd_and_hms(2017, 5, 1, 0, 0, 0).unwrap(),
            center: NodeLocation {
                latitude: 46.95,
                longitude: 7.45,
                altitude: 540.0,
            },
            along_km: 80.0,
            across_km: 40.0,
            capacity_kw: (20.0, 200.0),
            clouds: CloudParams::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn generate(&self) -> Result<(Vec<PlantSpec>, Dataset, CloudField)> {
        let plants = place_plants(self)?;
        let mut clouds = self.clouds.clone();
        clouds.seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.clouds.seed;
        let (data, field) = simulate_power(&plants, &clouds, self.start, self.days)?;
        Ok((plants, data, field))
    }
}

/// Uniform plant positions in a box around `center`, long side along the wind.
pub fn place_plants(cfg: &SyntheticConfig) -> Result<Vec<PlantSpec>> {
    if cfg.n_nodes < 2 {
        return Err(invalid(format!(
            "need at least 2 plants, got {}",
            cfg.n_nodes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frame = LocalFrame {
        lat0: cfg.center.latitude,
        lon0: cfg.center.longitude,
    };
    let (ux, uy) = cfg.clouds.wind_unit();
    (0..cfg.n_nodes)
        .map(|_| {
            let s = rng.gen_range(-0.5..0.5) * cfg.along_km;
            let c = rng.gen_range(-0.5..0.5) * cfg.across_km;
            let alt = (cfg.center.altitude + rng.gen_range(-100.0..100.0)).max(0.0);
            let loc = frame.unproject(s * ux - c * uy, s * uy + c * ux, alt)?;
            PlantSpec::new(loc, sample_range(&mut rng, cfg.capacity_kw))
        })
        .collect()
}
