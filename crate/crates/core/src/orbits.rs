//! Circular two-body orbits, ground/inter-satellite visibility, contact
//! windows, light-time delay and cylindrical Earth shadow.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Geostationary altitude in km.
pub const GEO_ALTITUDE_KM: f64 = 35_786.0;
/// Sidereal day in seconds, used for Earth rotation.
pub const SIDEREAL_DAY_S: f64 = 86_164.0;
/// Lunar tier one-way light time.
pub const LUNAR_OWLT_S: f64 = 1.28;
/// Grazing altitude an inter-satellite line of sight must clear.
pub const ISL_GRAZING_MARGIN_KM: f64 = 80.0;
/// Boundary refinement tolerance for window edges.
pub const WINDOW_TOLERANCE_S: f64 = 0.1;

const LEO_BAND_KM: (f64, f64) = (300.0, 2000.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConstants {
    /// km^3/s^2
    pub mu_earth: f64,
    /// km
    pub earth_radius_km: f64,
    /// km/s
    pub speed_of_light_km_s: f64,
    /// W/m^2
    pub solar_constant: f64,
    /// W/(m^2 K^4)
    pub stefan_boltzmann: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            mu_earth: 398_600.441_8,
            earth_radius_km: 6371.0,
            speed_of_light_km_s: 299_792.458,
            solar_constant: 1361.0,
            stefan_boltzmann: 5.670_374_419e-8,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("constants.mu_earth", self.mu_earth),
            ("constants.earth_radius_km", self.earth_radius_km),
            ("constants.speed_of_light_km_s", self.speed_of_light_km_s),
            ("constants.solar_constant", self.solar_constant),
            ("constants.stefan_boltzmann", self.stefan_boltzmann),
        ];
        for (field, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(field, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "LEO", alias = "leo")]
    Leo,
    #[serde(rename = "MEO", alias = "meo")]
    Meo,
    #[serde(rename = "GEO", alias = "geo")]
    Geo,
    #[serde(rename = "Lunar", alias = "lunar")]
    Lunar,
    #[serde(rename = "Ground", alias = "ground")]
    Ground,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Leo => "LEO",
            Layer::Meo => "MEO",
            Layer::Geo => "GEO",
            Layer::Lunar => "Lunar",
            Layer::Ground => "Ground",
        }
    }

    pub fn is_orbital(self) -> bool {
        matches!(self, Layer::Leo | Layer::Meo | Layer::Geo)
    }

    /// Checks that `altitude_km` is legal for an orbiting layer.
    pub fn admits_altitude(self, altitude_km: f64) -> bool {
        match self {
            Layer::Leo => (LEO_BAND_KM.0..=LEO_BAND_KM.1).contains(&altitude_km),
            Layer::Meo => altitude_km > LEO_BAND_KM.1 && altitude_km < GEO_ALTITUDE_KM,
            Layer::Geo => (altitude_km - GEO_ALTITUDE_KM).abs() < 1e-6,
            Layer::Lunar | Layer::Ground => false,
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn normalize_deg(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularOrbit {
    altitude_km: f64,
    inclination_deg: f64,
    raan_deg: f64,
    phase_deg: f64,
    layer: Layer,
}

impl CircularOrbit {
    pub fn new(
        altitude_km: f64,
        inclination_deg: f64,
        raan_deg: f64,
        phase_deg: f64,
        layer: Layer,
    ) -> Result<Self, ConfigError> {
        if !(altitude_km.is_finite() && altitude_km > 0.0) {
            return Err(ConfigError::invalid("altitude_km", "must be > 0"));
        }
        if !layer.is_orbital() {
            return Err(ConfigError::invalid(
                "layer",
                format!("{layer} nodes have no circular orbit"),
            ));
        }
        if !layer.admits_altitude(altitude_km) {
            return Err(ConfigError::invalid(
                "altitude_km",
                format!("{altitude_km} km is outside the {layer} altitude band"),
            ));
        }
        for (name, v) in [
            ("inclination_deg", inclination_deg),
            ("raan_deg", raan_deg),
            ("phase_deg", phase_deg),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::invalid(name, "must be finite"));
            }
        }
        Ok(Self {
            altitude_km,
            inclination_deg: normalize_deg(inclination_deg),
            raan_deg: normalize_deg(raan_deg),
            phase_deg: normalize_deg(phase_deg),
            layer,
        })
    }

    /// Equatorial orbit at `altitude_km` with zero phase.
    pub fn equatorial(altitude_km: f64, layer: Layer) -> Result<Self, ConfigError> {
        Self::new(altitude_km, 0.0, 0.0, 0.0, layer)
    }

    pub fn altitude_km(&self) -> f64 {
        self.altitude_km
    }
    pub fn inclination_deg(&self) -> f64 {
        self.inclination_deg
    }
    pub fn raan_deg(&self) -> f64 {
        self.raan_deg
    }
    pub fn phase_deg(&self) -> f64 {
        self.phase_deg
    }
    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn radius_km(&self, c: &PhysicalConstants) -> f64 {
        c.earth_radius_km + self.altitude_km
    }

    /// Keplerian period `2π·sqrt(r³/μ)`.
    pub fn period_s(&self, c: &PhysicalConstants) -> f64 {
        let r = self.radius_km(c);
        TAU * (r * r * r / c.mu_earth).sqrt()
    }

    /// Position at `t` seconds after epoch: uniform motion along the
    /// argument of latitude, rotated by inclination then RAAN.
    pub fn propagate(&self, t: f64, c: &PhysicalConstants) -> SatelliteState {
        let r = self.radius_km(c);
        let n = TAU / self.period_s(c);
        let u = self.phase_deg.to_radians() + n * t;
        let (su, cu) = u.sin_cos();
        let (si, ci) = self.inclination_deg.to_radians().sin_cos();
        let (so, co) = self.raan_deg.to_radians().sin_cos();
        let position = Vector3::new(r * (co * cu - so * su * ci), r * (so * cu + co * su * ci), r * su * si);
        SatelliteState { position, time: t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteState {
    /// km, Earth-centered inertial.
    pub position: Vector3<f64>,
    /// Seconds since scenario epoch.
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundStation {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub min_elevation_deg: f64,
}

impl GroundStation {
    pub fn new(latitude_deg: f64, longitude_deg: f64, min_elevation_deg: f64) -> Result<Self, ConfigError> {
        if !(latitude_deg.is_finite() && latitude_deg.abs() <= 90.0) {
            return Err(ConfigError::invalid("latitude_deg", "must lie in [-90, 90]"));
        }
        if !longitude_deg.is_finite() {
            return Err(ConfigError::invalid("longitude_deg", "must be finite"));
        }
        if !(0.0..90.0).contains(&min_elevation_deg) {
            return Err(ConfigError::invalid("min_elevation_deg", "must lie in [0, 90)"));
        }
        Ok(Self {
            latitude_deg,
            longitude_deg,
            min_elevation_deg,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SunModel {
    /// Constant sun direction (normalized on use).
    Fixed { direction: [f64; 3] },
    /// Sun moving along the ecliptic with a 365.25-day period.
    Ecliptic {
        initial_longitude_deg: f64,
        #[serde(default = "default_obliquity")]
        obliquity_deg: f64,
    },
}

fn default_obliquity() -> f64 {
    23.44
}

impl Default for SunModel {
    fn default() -> Self {
        SunModel::Fixed {
            direction: [1.0, 0.0, 0.0],
        }
    }
}

impl SunModel {
    pub fn direction(&self, t: f64) -> Vector3<f64> {
        match *self {
            SunModel::Fixed { direction } => Vector3::from(direction).normalize(),
            SunModel::Ecliptic {
                initial_longitude_deg,
                obliquity_deg,
            } => {
                let year = 365.25 * 86_400.0;
                let lon = initial_longitude_deg.to_radians() + TAU * t / year;
                let eps = obliquity_deg.to_radians();
                Vector3::new(lon.cos(), lon.sin() * eps.cos(), lon.sin() * eps.sin())
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            SunModel::Fixed { direction } => {
                let v = Vector3::from(direction);
                if !(v.norm().is_finite() && v.norm() > 0.0) {
                    return Err(ConfigError::invalid(
                        "environment.sun.direction",
                        "must be a non-zero finite vector",
                    ));
                }
            }
            SunModel::Ecliptic {
                initial_longitude_deg,
                obliquity_deg,
            } => {
                if !(initial_longitude_deg.is_finite() && obliquity_deg.is_finite()) {
                    return Err(ConfigError::invalid("environment.sun", "angles must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// Everything geometry queries need besides the orbits themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    pub constants: PhysicalConstants,
    /// When false, ground stations stay fixed in the inertial frame.
    pub earth_rotation: bool,
    pub sun: SunModel,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            constants: PhysicalConstants::default(),
            earth_rotation: true,
            sun: SunModel::default(),
        }
    }
}

impl Environment {
    pub fn non_rotating() -> Self {
        Self {
            earth_rotation: false,
            ..Self::default()
        }
    }

    /// Inertial position of a point on the surface at `t`.
    pub fn surface_position(&self, lat_deg: f64, lon_deg: f64, t: f64) -> Vector3<f64> {
        let rot = if self.earth_rotation {
            TAU * t / SIDEREAL_DAY_S
        } else {
            0.0
        };
        let lat = lat_deg.to_radians();
        let lon = lon_deg.to_radians() + rot;
        let r = self.constants.earth_radius_km;
        Vector3::new(r * lat.cos() * lon.cos(), r * lat.cos() * lon.sin(), r * lat.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    pub visible: bool,
    pub elevation_deg: f64,
    pub slant_range_km: f64,
}

pub fn visibility(sat: &SatelliteState, gs: &GroundStation, t: f64, env: &Environment) -> Visibility {
    let site = env.surface_position(gs.latitude_deg, gs.longitude_deg, t);
    elevation_from(sat.position, site, gs.min_elevation_deg)
}

/// Elevation of `target` seen from surface point `site`.
pub(crate) fn elevation_from(target: Vector3<f64>, site: Vector3<f64>, min_elevation_deg: f64) -> Visibility {
    let d = target - site;
    let range = d.norm();
    let up = site.normalize();
    let elevation_deg = if range == 0.0 {
        90.0
    } else {
        (d.dot(&up) / range).clamp(-1.0, 1.0).asin().to_degrees()
    };
    Visibility {
        visible: elevation_deg >= min_elevation_deg,
        elevation_deg,
        slant_range_km: range,
    }
}

/// Time intervals in `[0, horizon]` where `pred` holds. Sampled every
/// `step` seconds, each edge refined by bisection to `tol`.
pub fn predicate_windows<F>(mut pred: F, horizon: f64, step: f64, tol: f64) -> Vec<(f64, f64)>
where
    F: FnMut(f64) -> bool,
{
    assert!(step > 0.0 && horizon >= 0.0);
    let mut windows = Vec::new();
    let mut prev_t = 0.0;
    let mut prev = pred(0.0);
    let mut open = if prev { Some(0.0) } else { None };
    let mut k = 1u64;
    loop {
        let t = (k as f64 * step).min(horizon);
        let cur = pred(t);
        if cur != prev {
            let edge = bisect(&mut pred, prev_t, t, prev, tol);
            if cur {
                open = Some(edge);
            } else if let Some(start) = open.take() {
                windows.push((start, edge));
            }
        }
        prev = cur;
        prev_t = t;
        if t >= horizon {
            break;
        }
        k += 1;
    }
    if let Some(start) = open {
        windows.push((start, horizon));
    }
    windows
}

fn bisect<F: FnMut(f64) -> bool>(pred: &mut F, mut lo: f64, mut hi: f64, lo_val: bool, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) == lo_val {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn contact_windows(
    orbit: &CircularOrbit,
    gs: &GroundStation,
    env: &Environment,
    horizon_s: f64,
    step_s: f64,
) -> Vec<(f64, f64)> {
    assert!(step_s > 0.0 && horizon_s >= step_s, "need step > 0 and horizon >= step");
    predicate_windows(
        |t| visibility(&orbit.propagate(t, &env.constants), gs, t, env).visible,
        horizon_s,
        step_s,
        WINDOW_TOLERANCE_S,
    )
}

pub fn propagation_delay(slant_range_km: f64, c: &PhysicalConstants) -> f64 {
    slant_range_km / c.speed_of_light_km_s
}

/// Cylindrical shadow: anti-sun side and within one Earth radius of the
/// sun line.
pub fn in_eclipse(sat: &SatelliteState, sun_direction: &Vector3<f64>, c: &PhysicalConstants) -> bool {
    let along = sat.position.dot(sun_direction);
    if along >= 0.0 {
        return false;
    }
    let perp = sat.position - sun_direction * along;
    perp.norm() < c.earth_radius_km
}

/// Closed-form eclipse fraction for a circular orbit at sun beta angle
/// `beta_deg`, cylindrical model.
pub fn eclipse_fraction_analytic(altitude_km: f64, beta_deg: f64, c: &PhysicalConstants) -> f64 {
    let r = c.earth_radius_km + altitude_km;
    let beta = beta_deg.to_radians();
    let limit = (c.earth_radius_km / r).asin();
    if beta.abs() >= limit {
        return 0.0;
    }
    let ratio = ((r * r - c.earth_radius_km * c.earth_radius_km).sqrt() / (r * beta.cos())).clamp(-1.0, 1.0);
    ratio.acos() / PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IslVisibility {
    pub visible: bool,
    pub range_km: f64,
}

/// Line of sight between two satellites clears a sphere of radius
/// `R_E + ISL_GRAZING_MARGIN_KM`.
pub fn isl_visibility(a: &SatelliteState, b: &SatelliteState, c: &PhysicalConstants) -> IslVisibility {
    isl_visibility_with_margin(a, b, c, ISL_GRAZING_MARGIN_KM)
}

pub fn isl_visibility_with_margin(
    a: &SatelliteState,
    b: &SatelliteState,
    c: &PhysicalConstants,
    margin_km: f64,
) -> IslVisibility {
    let d = b.position - a.position;
    let range_km = d.norm();
    let clearance = c.earth_radius_km + margin_km;
    // symmetric: evaluate the closest approach from both ends and keep the minimum
    let closest = segment_min_norm(a.position, b.position).min(segment_min_norm(b.position, a.position));
    IslVisibility {
        visible: closest >= clearance,
        range_km,
    }
}

fn segment_min_norm(p: Vector3<f64>, q: Vector3<f64>) -> f64 {
    let d = q - p;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return p.norm();
    }
    let s = (-p.dot(&d) / len2).clamp(0.0, 1.0);
    (p + d * s).norm()
}

/// Sub-satellite unit vector (used for footprint proximity).
pub fn nadir_direction(state: &SatelliteState) -> Vector3<f64> {
    state.position.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn leo(h: f64) -> CircularOrbit {
        CircularOrbit::equatorial(h, Layer::Leo).unwrap()
    }

    #[test]
    fn period_examples() {
        let c = PhysicalConstants::default();
        let t = leo(550.0).period_s(&c);
        let oracle = TAU * (6921.0f64.powi(3) / 398_600.441_8).sqrt();
        assert_relative_eq!(t, oracle, max_relative = 1e-12);
        assert!((t - 5731.0).abs() < 1.0, "{t}");
        let geo = CircularOrbit::equatorial(GEO_ALTITUDE_KM, Layer::Geo).unwrap();
        // mean Earth radius puts the two-body GEO period ~22 s short of a sidereal day
        assert!((geo.period_s(&c) / SIDEREAL_DAY_S - 1.0).abs() < 1e-3);
        assert_eq!(t.to_bits(), leo(550.0).period_s(&c).to_bits());
    }

    #[test]
    fn layer_bands_are_enforced() {
        assert!(CircularOrbit::new(-5.0, 0.0, 0.0, 0.0, Layer::Leo).is_err());
        assert!(CircularOrbit::new(2500.0, 0.0, 0.0, 0.0, Layer::Leo).is_err());
        assert!(CircularOrbit::new(35_000.0, 0.0, 0.0, 0.0, Layer::Geo).is_err());
        assert!(CircularOrbit::new(10_000.0, 0.0, 0.0, 0.0, Layer::Meo).is_ok());
        assert!(CircularOrbit::new(550.0, 0.0, 0.0, 0.0, Layer::Lunar).is_err());
        let o = CircularOrbit::new(550.0, -10.0, 725.0, 360.0, Layer::Leo).unwrap();
        assert_eq!(o.inclination_deg(), 350.0);
        assert_eq!(o.raan_deg(), 5.0);
        assert_eq!(o.phase_deg(), 0.0);
    }

    #[test]
    fn propagate_epoch_half_and_quarter() {
        let c = PhysicalConstants::default();
        let o = leo(550.0);
        let r = 6921.0;
        let p0 = o.propagate(0.0, &c).position;
        assert_relative_eq!(p0.x, r, max_relative = 1e-12);
        assert!(p0.y.abs() < 1e-9 && p0.z.abs() < 1e-9);
        let t = o.period_s(&c);
        let half = o.propagate(t / 2.0, &c).position;
        assert_relative_eq!(half, -p0, epsilon = 1e-6);
        let quarter = o.propagate(t / 4.0, &c).position;
        assert!(quarter.x.abs() < 1e-6);
        assert_relative_eq!(quarter.y, r, max_relative = 1e-12);
    }

    #[test]
    fn zenith_and_antipodal_visibility() {
        let env = Environment::non_rotating();
        let gs = GroundStation::new(0.0, 0.0, 10.0).unwrap();
        let sat = leo(550.0).propagate(0.0, &env.constants);
        let v = visibility(&sat, &gs, 0.0, &env);
        assert!(v.visible);
        assert_relative_eq!(v.elevation_deg, 90.0, epsilon = 1e-9);
        assert_relative_eq!(v.slant_range_km, 550.0, epsilon = 1e-6);
        let far = SatelliteState {
            position: -sat.position,
            time: 0.0,
        };
        assert!(!visibility(&far, &gs, 0.0, &env).visible);
    }

    #[test]
    fn horizon_central_angle_matches_spherical_geometry() {
        // At 0° mask the visibility edge sits at central angle arccos(R/(R+h)).
        let env = Environment::non_rotating();
        let c = env.constants;
        let gs = GroundStation::new(0.0, 0.0, 0.0).unwrap();
        let lambda0 = (c.earth_radius_km / (c.earth_radius_km + 550.0)).acos();
        assert!((lambda0 - 0.400).abs() < 2e-3);
        let o = leo(550.0);
        let n = TAU / o.period_s(&c);
        let just_in = o.propagate((lambda0 - 1e-4) / n, &c);
        let just_out = o.propagate((lambda0 + 1e-4) / n, &c);
        assert!(visibility(&just_in, &gs, 0.0, &env).visible);
        assert!(!visibility(&just_out, &gs, 0.0, &env).visible);
    }

    #[test]
    fn overhead_pass_duration_matches_arc_fraction() {
        let env = Environment::non_rotating();
        let c = env.constants;
        let gs = GroundStation::new(0.0, 0.0, 0.0).unwrap();
        // start a quarter orbit before the zenith crossing
        let o = CircularOrbit::new(550.0, 0.0, 0.0, -90.0, Layer::Leo).unwrap();
        let period = o.period_s(&c);
        let w = contact_windows(&o, &gs, &env, period, 10.0);
        assert_eq!(w.len(), 1);
        let lambda0 = (c.earth_radius_km / (c.earth_radius_km + 550.0)).acos();
        let oracle = 2.0 * lambda0 / TAU * period;
        let dur = w[0].1 - w[0].0;
        assert!((dur - oracle).abs() < 0.3, "{dur} vs {oracle}");
        assert!((dur - 729.0).abs() < 0.01 * 729.0);
    }

    #[test]
    fn geostationary_window_spans_horizon() {
        let env = Environment::default();
        let geo = CircularOrbit::equatorial(GEO_ALTITUDE_KM, Layer::Geo).unwrap();
        let gs = GroundStation::new(0.0, 0.0, 10.0).unwrap();
        let w = contact_windows(&geo, &gs, &env, 86_400.0, 60.0);
        assert_eq!(w, vec![(0.0, 86_400.0)]);
    }

    #[test]
    fn polar_station_sees_many_polar_passes() {
        let env = Environment::default();
        let o = CircularOrbit::new(550.0, 90.0, 0.0, 0.0, Layer::Leo).unwrap();
        let gs = GroundStation::new(89.0, 0.0, 10.0).unwrap();
        let w = contact_windows(&o, &gs, &env, 86_400.0, 20.0);
        // independent dense-sampling count
        let mut dense = 0;
        let mut prev = false;
        let mut t = 0.0;
        while t <= 86_400.0 {
            let v = visibility(&o.propagate(t, &env.constants), &gs, t, &env).visible;
            if v && !prev {
                dense += 1;
            }
            prev = v;
            t += 1.0;
        }
        assert!(w.len() >= 10, "{}", w.len());
        assert_eq!(w.len(), dense);
        for pair in w.windows(2) {
            assert!(pair[0].1 < pair[1].0);
        }
    }

    #[test]
    fn delay_examples() {
        let c = PhysicalConstants::default();
        assert!((propagation_delay(550.0, &c) - 1.834e-3).abs() < 1e-6);
        let geo = propagation_delay(GEO_ALTITUDE_KM, &c);
        assert!((geo - 0.11937).abs() < 1e-5);
        assert!((2.0 * geo - 0.2387).abs() < 1e-4);
        assert!((propagation_delay(0.001, &c) - 3.34e-9).abs() < 1e-11);
    }

    #[test]
    fn eclipse_sun_side_and_beta_zero_fraction() {
        let c = PhysicalConstants::default();
        let sun = Vector3::new(1.0, 0.0, 0.0);
        let o = leo(550.0);
        assert!(!in_eclipse(&o.propagate(0.0, &c), &sun, &c));
        let period = o.period_s(&c);
        let n = 100_000;
        let hits = (0..n)
            .filter(|&i| in_eclipse(&o.propagate(period * i as f64 / n as f64, &c), &sun, &c))
            .count();
        let frac = hits as f64 / n as f64;
        let analytic = (c.earth_radius_km / 6921.0).asin() / PI;
        assert!((analytic - 0.372).abs() < 1e-3);
        assert!((frac - analytic).abs() < 1e-3);
        assert!((eclipse_fraction_analytic(550.0, 0.0, &c) - analytic).abs() < 1e-12);
    }

    #[test]
    fn geo_has_no_eclipse_beyond_shadow_half_angle() {
        let c = PhysicalConstants::default();
        let half = (c.earth_radius_km / (c.earth_radius_km + GEO_ALTITUDE_KM))
            .asin()
            .to_degrees();
        assert!((half - 8.69).abs() < 0.01);
        let geo = CircularOrbit::equatorial(GEO_ALTITUDE_KM, Layer::Geo).unwrap();
        let beta: f64 = 8.8f64.to_radians();
        let sun = Vector3::new(beta.cos(), 0.0, beta.sin());
        let period = geo.period_s(&c);
        assert!((0..20_000).all(|i| !in_eclipse(&geo.propagate(period * i as f64 / 20_000.0, &c), &sun, &c)));
        assert_eq!(eclipse_fraction_analytic(GEO_ALTITUDE_KM, 8.8, &c), 0.0);
    }

    #[test]
    fn isl_examples() {
        let c = PhysicalConstants::default();
        let o = leo(550.0);
        let a = o.propagate(0.0, &c);
        let v = isl_visibility(&a, &a, &c);
        assert!(v.visible && v.range_km == 0.0);
        let b = o.propagate(o.period_s(&c) / 2.0, &c);
        assert!(!isl_visibility(&a, &b, &c).visible);
        let g1 = CircularOrbit::equatorial(GEO_ALTITUDE_KM, Layer::Geo).unwrap();
        let g2 = CircularOrbit::new(GEO_ALTITUDE_KM, 0.0, 0.0, 60.0, Layer::Geo).unwrap();
        let v = isl_visibility(&g1.propagate(0.0, &c), &g2.propagate(0.0, &c), &c);
        assert!(v.visible);
        assert_relative_eq!(v.range_km, 2.0 * 42_157.0 * 0.5, max_relative = 1e-9);
    }

    #[test]
    fn sun_models() {
        let fixed = SunModel::Fixed {
            direction: [2.0, 0.0, 0.0],
        };
        assert_relative_eq!(fixed.direction(123.0), Vector3::new(1.0, 0.0, 0.0));
        let ecl = SunModel::Ecliptic {
            initial_longitude_deg: 0.0,
            obliquity_deg: 23.44,
        };
        let year = 365.25 * 86_400.0;
        assert_relative_eq!(ecl.direction(0.0), ecl.direction(year), epsilon = 1e-9);
        assert_relative_eq!(ecl.direction(year / 4.0).norm(), 1.0, epsilon = 1e-12);
    }
}
