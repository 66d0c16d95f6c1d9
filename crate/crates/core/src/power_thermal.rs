//! Solar harvest, linear battery, lumped radiator and the energy-zone
//! state machine.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ModelError};
use crate::orbits::PhysicalConstants;
use crate::traffic::TaskClass;

/// Upper bound on the explicit integration step.
pub const MAX_PHYSICS_STEP_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSpec {
    pub panel_area_m2: f64,
    pub panel_efficiency: f64,
    pub battery_capacity_wh: f64,
    pub p_idle_w: f64,
    pub p_compute_max_w: f64,
    /// Transmit power per bit/s of link rate.
    pub p_tx_w_per_bps: f64,
}

impl Default for PowerSpec {
    fn default() -> Self {
        Self {
            panel_area_m2: 4.0,
            panel_efficiency: 0.3,
            battery_capacity_wh: 2000.0,
            p_idle_w: 150.0,
            p_compute_max_w: 600.0,
            p_tx_w_per_bps: 1e-8,
        }
    }
}

impl PowerSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (f, v) in [
            ("panel_area_m2", self.panel_area_m2),
            ("battery_capacity_wh", self.battery_capacity_wh),
            ("p_idle_w", self.p_idle_w),
            ("p_compute_max_w", self.p_compute_max_w),
            ("p_tx_w_per_bps", self.p_tx_w_per_bps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(f, "must be > 0"));
            }
        }
        if !(self.panel_efficiency > 0.0 && self.panel_efficiency <= 1.0) {
            return Err(ConfigError::invalid("panel_efficiency", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalSpec {
    pub radiator_area_m2: f64,
    pub emissivity: f64,
    pub sink_temperature_k: f64,
    pub max_radiator_temperature_k: f64,
    pub heat_capacity_j_per_k: f64,
}

impl Default for ThermalSpec {
    fn default() -> Self {
        Self {
            radiator_area_m2: 4.0,
            emissivity: 0.85,
            sink_temperature_k: 255.0,
            max_radiator_temperature_k: 330.0,
            heat_capacity_j_per_k: 50_000.0,
        }
    }
}

impl ThermalSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.emissivity > 0.0 && self.emissivity <= 1.0) {
            return Err(ConfigError::invalid("emissivity", "must lie in (0, 1]"));
        }
        if !(self.radiator_area_m2.is_finite() && self.radiator_area_m2 > 0.0) {
            return Err(ConfigError::invalid("radiator_area_m2", "must be > 0"));
        }
        if !(self.heat_capacity_j_per_k.is_finite() && self.heat_capacity_j_per_k > 0.0) {
            return Err(ConfigError::invalid("heat_capacity_j_per_k", "must be > 0"));
        }
        if !(self.sink_temperature_k >= 0.0
            && self.sink_temperature_k < self.max_radiator_temperature_k
            && self.max_radiator_temperature_k.is_finite())
        {
            return Err(ConfigError::invalid(
                "sink_temperature_k",
                "requires 0 <= sink_temperature_k < max_radiator_temperature_k",
            ));
        }
        Ok(())
    }

    /// Largest explicit Euler step that stays stable up to `T_max`.
    pub fn max_stable_step_s(&self, c: &PhysicalConstants) -> f64 {
        let t = self.max_radiator_temperature_k;
        self.heat_capacity_j_per_k / (4.0 * self.emissivity * c.stefan_boltzmann * self.radiator_area_m2 * t * t * t)
    }

    /// Signed net radiative exchange; negative below the sink.
    fn net_exchange_w(&self, temperature_k: f64, c: &PhysicalConstants) -> f64 {
        self.emissivity
            * c.stefan_boltzmann
            * self.radiator_area_m2
            * (temperature_k.powi(4) - self.sink_temperature_k.powi(4))
    }

    pub fn max_rejection_w(&self, c: &PhysicalConstants) -> f64 {
        self.net_exchange_w(self.max_radiator_temperature_k, c)
    }

    /// Net rejected flux per square metre at `temperature_k`.
    pub fn net_flux_w_per_m2(&self, temperature_k: f64, c: &PhysicalConstants) -> f64 {
        self.net_exchange_w(temperature_k, c) / self.radiator_area_m2
    }

    /// Radiator area needed to reject `power_w` at `temperature_k`.
    pub fn required_area_m2(&self, power_w: f64, temperature_k: f64, c: &PhysicalConstants) -> f64 {
        power_w / self.net_flux_w_per_m2(temperature_k, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnergyZone {
    Red,
    Yellow,
    Green,
}

impl EnergyZone {
    pub fn as_str(self) -> &'static str {
        match self {
            EnergyZone::Red => "red",
            EnergyZone::Yellow => "yellow",
            EnergyZone::Green => "green",
        }
    }
}

impl std::fmt::Display for EnergyZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZonePolicy {
    pub r_green: f64,
    pub r_red: f64,
    pub forecast_margin_s: f64,
    pub thermal_gate: f64,
    /// Yellow admits inference only below this fraction of derated
    /// capacity (see [`lightweight_limit_units`]).
    pub lightweight_fraction: f64,
}

impl Default for ZonePolicy {
    fn default() -> Self {
        Self {
            r_green: 0.40,
            r_red: 0.15,
            forecast_margin_s: 600.0,
            thermal_gate: 0.10,
            lightweight_fraction: 0.10,
        }
    }
}

/// Compute seconds that define the lightweight inference tier.
pub const LIGHTWEIGHT_REFERENCE_S: f64 = 60.0;

/// Largest compute demand still treated as lightweight inference: the
/// configured fraction of what the node can deliver in one reference
/// interval at derated capacity.
pub fn lightweight_limit_units(policy: &ZonePolicy, derated_capacity: f64) -> f64 {
    policy.lightweight_fraction * derated_capacity * LIGHTWEIGHT_REFERENCE_S
}

impl ZonePolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0 < self.r_red && self.r_red < self.r_green && self.r_green < 1.0) {
            return Err(ConfigError::invalid(
                "r_red",
                "ZonePolicy requires 0 < r_red < r_green < 1",
            ));
        }
        if !(self.forecast_margin_s >= 0.0 && self.forecast_margin_s.is_finite()) {
            return Err(ConfigError::invalid("forecast_margin_s", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.thermal_gate) {
            return Err(ConfigError::invalid("thermal_gate", "must lie in [0, 1]"));
        }
        if !(self.lightweight_fraction > 0.0 && self.lightweight_fraction <= 1.0) {
            return Err(ConfigError::invalid("lightweight_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerThermalState {
    pub soc_wh: f64,
    pub radiator_temperature_k: f64,
    pub harvest_w: f64,
    pub load_w: f64,
    pub zone: EnergyZone,
    pub thermal_headroom: f64,
}

impl PowerThermalState {
    /// Fresh state at `soc_fraction` of capacity, radiator at the sink
    /// temperature (or 1 K above it when the sink is absolute zero).
    pub fn initial(power: &PowerSpec, thermal: &ThermalSpec, soc_fraction: f64, c: &PhysicalConstants) -> Self {
        let soc_wh = (soc_fraction.clamp(0.0, 1.0)) * power.battery_capacity_wh;
        let temperature = thermal.sink_temperature_k.max(1.0);
        Self {
            soc_wh,
            radiator_temperature_k: temperature,
            harvest_w: 0.0,
            load_w: power.p_idle_w,
            zone: EnergyZone::Green,
            thermal_headroom: thermal_headroom(thermal, power.p_idle_w, c),
        }
    }
}

pub fn harvest_power(spec: &PowerSpec, eclipsed: bool, c: &PhysicalConstants) -> f64 {
    if eclipsed {
        0.0
    } else {
        spec.panel_efficiency * spec.panel_area_m2 * c.solar_constant
    }
}

/// `ε·σ·A·(T⁴ − T_env⁴)`.
pub fn radiated_power(spec: &ThermalSpec, temperature_k: f64, c: &PhysicalConstants) -> Result<f64, ModelError> {
    if temperature_k < spec.sink_temperature_k {
        return Err(ModelError::BelowSinkTemperature {
            temperature_k,
            sink_k: spec.sink_temperature_k,
        });
    }
    Ok(spec.net_exchange_w(temperature_k, c))
}

pub fn thermal_headroom(spec: &ThermalSpec, dissipated_w: f64, c: &PhysicalConstants) -> f64 {
    let max = spec.max_rejection_w(c);
    ((max - dissipated_w) / max).clamp(0.0, 1.0)
}

/// Result of one integration step, including what the SoC clamp absorbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStep {
    pub state: PowerThermalState,
    /// Surplus discarded because the battery was full (Wh, ≥ 0).
    pub spilled_wh: f64,
    /// Demand that the empty battery could not serve (Wh, ≥ 0).
    pub unserved_wh: f64,
    pub deficit: bool,
}

impl EnergyStep {
    /// Signed clamp correction so that `Δsoc = ∫(harvest − load) + clamp`.
    pub fn clamp_adjustment_wh(&self) -> f64 {
        self.unserved_wh - self.spilled_wh
    }
}

/// Explicit Euler step of battery and radiator. The zone is carried over
/// unchanged; call [`compute_zone`] to refresh it.
pub fn step_energy_thermal(
    state: &PowerThermalState,
    power: &PowerSpec,
    thermal: &ThermalSpec,
    load_w: f64,
    eclipsed: bool,
    dt_s: f64,
    c: &PhysicalConstants,
) -> Result<EnergyStep, ModelError> {
    if !(dt_s > 0.0) {
        return Err(ModelError::NonPositiveStep(dt_s));
    }
    let limit = thermal.max_stable_step_s(c);
    if dt_s >= limit {
        return Err(ModelError::UnstableThermalStep { dt_s, limit_s: limit });
    }
    let harvest = harvest_power(power, eclipsed, c);
    let raw = state.soc_wh + (harvest - load_w) * dt_s / 3600.0;
    let cap = power.battery_capacity_wh;
    let (soc, spilled, unserved) = if raw > cap {
        (cap, raw - cap, 0.0)
    } else if raw < 0.0 {
        (0.0, 0.0, -raw)
    } else {
        (raw, 0.0, 0.0)
    };
    let net = thermal.net_exchange_w(state.radiator_temperature_k, c);
    let temperature = (state.radiator_temperature_k + dt_s * (load_w - net) / thermal.heat_capacity_j_per_k).max(1e-3);
    Ok(EnergyStep {
        state: PowerThermalState {
            soc_wh: soc,
            radiator_temperature_k: temperature,
            harvest_w: harvest,
            load_w,
            zone: state.zone,
            thermal_headroom: thermal_headroom(thermal, load_w, c),
        },
        spilled_wh: spilled,
        unserved_wh: unserved,
        deficit: unserved > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZoneForecast {
    pub eclipse_remaining_s: f64,
    pub time_to_next_contact_s: f64,
    pub projected_load_w: f64,
}

/// Projects SoC over the remaining eclipse plus margin (no harvest) and
/// maps it to a zone.
pub fn compute_zone(
    soc_wh: f64,
    thermal_headroom: f64,
    capacity_wh: f64,
    policy: &ZonePolicy,
    forecast: &ZoneForecast,
) -> EnergyZone {
    let window = forecast.eclipse_remaining_s + policy.forecast_margin_s;
    let projected = soc_wh - forecast.projected_load_w * window / 3600.0;
    if soc_wh <= 0.0 || projected < policy.r_red * capacity_wh {
        EnergyZone::Red
    } else if projected >= policy.r_green * capacity_wh && thermal_headroom >= policy.thermal_gate {
        EnergyZone::Green
    } else {
        EnergyZone::Yellow
    }
}

pub fn allowed_task_classes(zone: EnergyZone) -> BTreeSet<TaskClass> {
    match zone {
        EnergyZone::Green => TaskClass::ALL.into_iter().collect(),
        EnergyZone::Yellow => [
            TaskClass::RealTimeInference,
            TaskClass::InterruptibleCompression,
            TaskClass::Housekeeping,
        ]
        .into_iter()
        .collect(),
        EnergyZone::Red => [TaskClass::Housekeeping].into_iter().collect(),
    }
}

/// Zone permission for a concrete task, applying the lightweight
/// inference tier in Yellow.
pub fn zone_permits(zone: EnergyZone, class: TaskClass, demand_units: f64, lightweight_limit: f64) -> bool {
    if !allowed_task_classes(zone).contains(&class) {
        return false;
    }
    !(zone == EnergyZone::Yellow && class == TaskClass::RealTimeInference && demand_units > lightweight_limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn harvest_examples() {
        let mut spec = PowerSpec {
            panel_area_m2: 10.0,
            panel_efficiency: 0.3,
            ..PowerSpec::default()
        };
        assert_eq!(harvest_power(&spec, true, &c()), 0.0);
        assert_relative_eq!(harvest_power(&spec, false, &c()), 4083.0, max_relative = 1e-12);
        spec.panel_area_m2 = 1.0;
        spec.panel_efficiency = 1.0;
        assert_eq!(harvest_power(&spec, false, &c()), 1361.0);
    }

    fn unit_radiator() -> ThermalSpec {
        ThermalSpec {
            radiator_area_m2: 1.0,
            emissivity: 0.85,
            sink_temperature_k: 255.0,
            max_radiator_temperature_k: 330.0,
            heat_capacity_j_per_k: 5_000.0,
        }
    }

    #[test]
    fn radiated_power_examples() {
        let spec = unit_radiator();
        assert_eq!(radiated_power(&spec, 255.0, &c()).unwrap(), 0.0);
        let p = radiated_power(&spec, 300.0, &c()).unwrap();
        let oracle = 0.85 * 5.670_374_419e-8 * (300f64.powi(4) - 255f64.powi(4));
        assert_relative_eq!(p, oracle, max_relative = 1e-12);
        assert!((p - 186.6).abs() < 0.05);
        assert!((100.0..=300.0).contains(&p));
        let area = spec.required_area_m2(1000.0, 300.0, &c());
        assert!((area - 5.36).abs() < 0.01, "{area}");
        assert!(matches!(
            radiated_power(&spec, 200.0, &c()),
            Err(ModelError::BelowSinkTemperature { .. })
        ));
    }

    #[test]
    fn equilibrium_and_clamped_deficit() {
        let power = PowerSpec::default();
        let thermal = ThermalSpec::default();
        let s0 = PowerThermalState::initial(&power, &thermal, 0.5, &c());
        let harvest = harvest_power(&power, false, &c());
        let out = step_energy_thermal(&s0, &power, &thermal, harvest, false, 10.0, &c()).unwrap();
        assert_eq!(out.state.soc_wh, s0.soc_wh);

        let empty = PowerThermalState { soc_wh: 0.0, ..s0 };
        let out = step_energy_thermal(&empty, &power, &thermal, power.p_idle_w, true, 10.0, &c()).unwrap();
        assert_eq!(out.state.soc_wh, 0.0);
        assert!(out.deficit);
        assert_relative_eq!(out.unserved_wh, power.p_idle_w * 10.0 / 3600.0);
    }

    #[test]
    fn overfull_battery_spills() {
        let power = PowerSpec::default();
        let thermal = ThermalSpec::default();
        let full = PowerThermalState::initial(&power, &thermal, 1.0, &c());
        let out = step_energy_thermal(&full, &power, &thermal, 0.0, false, 10.0, &c()).unwrap();
        assert_eq!(out.state.soc_wh, power.battery_capacity_wh);
        assert!(out.spilled_wh > 0.0);
        assert_relative_eq!(
            out.state.soc_wh - full.soc_wh,
            harvest_power(&power, false, &c()) * 10.0 / 3600.0 + out.clamp_adjustment_wh(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn radiator_converges_to_fixed_point() {
        let thermal = unit_radiator();
        let power = PowerSpec::default();
        let load = radiated_power(&thermal, 300.0, &c()).unwrap();
        let mut s = PowerThermalState::initial(&power, &thermal, 1.0, &c());
        let dt = 5.0;
        assert!(dt < thermal.max_stable_step_s(&c()));
        for _ in 0..20_000 {
            s = step_energy_thermal(&s, &power, &thermal, load, false, dt, &c())
                .unwrap()
                .state;
        }
        assert!(
            (s.radiator_temperature_k - 300.0).abs() < 0.5,
            "{}",
            s.radiator_temperature_k
        );
    }

    #[test]
    fn unstable_step_is_rejected() {
        let thermal = ThermalSpec {
            heat_capacity_j_per_k: 10.0,
            ..unit_radiator()
        };
        let power = PowerSpec::default();
        let s = PowerThermalState::initial(&power, &thermal, 1.0, &c());
        assert!(matches!(
            step_energy_thermal(&s, &power, &thermal, 100.0, false, 10.0, &c()),
            Err(ModelError::UnstableThermalStep { .. })
        ));
    }

    #[test]
    fn default_thermal_spec_sits_in_flux_band() {
        let t = ThermalSpec::default();
        let q = t.net_flux_w_per_m2(300.0, &c());
        assert!((100.0..=300.0).contains(&q));
        let a = t.required_area_m2(1000.0, 300.0, &c());
        assert!((3.3..=10.0).contains(&a));
    }

    #[test]
    fn zone_examples() {
        let policy = ZonePolicy::default();
        let none = ZoneForecast::default();
        assert_eq!(compute_zone(1000.0, 0.9, 1000.0, &policy, &none), EnergyZone::Green);
        assert_eq!(compute_zone(0.0, 0.9, 1000.0, &policy, &none), EnergyZone::Red);
        let f = ZoneForecast {
            eclipse_remaining_s: 1800.0,
            time_to_next_contact_s: 0.0,
            projected_load_w: 200.0,
        };
        // 500 − 200·2400/3600 = 366.7 Wh
        assert_eq!(compute_zone(500.0, 0.9, 1000.0, &policy, &f), EnergyZone::Yellow);
        // thermal gate demotes an otherwise green node
        assert_eq!(compute_zone(1000.0, 0.05, 1000.0, &policy, &none), EnergyZone::Yellow);
    }

    #[test]
    fn class_sets() {
        let g = allowed_task_classes(EnergyZone::Green);
        let y = allowed_task_classes(EnergyZone::Yellow);
        let r = allowed_task_classes(EnergyZone::Red);
        assert_eq!(g.len(), TaskClass::ALL.len());
        assert!(r.is_subset(&y) && y.is_subset(&g));
        assert_eq!(r, [TaskClass::Housekeeping].into_iter().collect());
        assert!(!y.contains(&TaskClass::BulkTraining));
        assert!(zone_permits(
            EnergyZone::Yellow,
            TaskClass::RealTimeInference,
            5.0,
            10.0
        ));
        assert!(!zone_permits(
            EnergyZone::Yellow,
            TaskClass::RealTimeInference,
            50.0,
            10.0
        ));
        assert!(zone_permits(
            EnergyZone::Green,
            TaskClass::RealTimeInference,
            50.0,
            10.0
        ));
    }

    #[test]
    fn policy_validation() {
        let bad = ZonePolicy {
            r_red: 0.5,
            r_green: 0.4,
            ..ZonePolicy::default()
        };
        let err = bad.validate().unwrap_err();
        assert!(err.message.contains("r_red < r_green"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn zone_monotone_in_soc(a in 0.0f64..1000.0, b in 0.0f64..1000.0,
                                    load in 0.0f64..500.0, ecl in 0.0f64..3000.0, head in 0.0f64..1.0) {
                let policy = ZonePolicy::default();
                let f = ZoneForecast { eclipse_remaining_s: ecl, time_to_next_contact_s: 0.0, projected_load_w: load };
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(compute_zone(lo, head, 1000.0, &policy, &f) <= compute_zone(hi, head, 1000.0, &policy, &f));
            }

            #[test]
            fn energy_bookkeeping_closes(soc in 0.0f64..2000.0, load in 0.0f64..3000.0, ecl: bool, dt in 0.1f64..10.0) {
                let power = PowerSpec::default();
                let thermal = ThermalSpec::default();
                let s = PowerThermalState { soc_wh: soc, ..PowerThermalState::initial(&power, &thermal, 0.0, &c()) };
                let out = step_energy_thermal(&s, &power, &thermal, load, ecl, dt, &c()).unwrap();
                let flow = (out.state.harvest_w - load) * dt / 3600.0;
                prop_assert!(out.spilled_wh >= 0.0 && out.unserved_wh >= 0.0);
                prop_assert!((out.state.soc_wh - soc - flow - out.clamp_adjustment_wh()).abs() < 1e-9);
                prop_assert!(out.state.soc_wh >= 0.0 && out.state.soc_wh <= power.battery_capacity_wh);
            }
        }
    }
}
