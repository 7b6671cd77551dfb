//! Power, cooling and thermal models.
//!
//! Policies and the engine only see the [`PowerModel`], [`CoolingModel`] and
//! [`ThermalModel`] traits through a [`ModelSet`], so any implementation that
//! honours the same contracts can be dropped in. The defaults are closed-form:
//!
//! * server power `P = p_idle + (p_max - p_idle) * u * (f / f_max)^2`
//! * chiller `COP(T) = a T^2 + b T + c` with `T` in Celsius, `P_cool = P_IT / COP`
//! * inlet `T_in = setpoint + beta * (sum of rack power)`
//! * CPU `T_cpu = T_in + R_th * P`

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{DataCentreState, HostSpec, RackId};
use crate::error::{Error, Result};

pub const KELVIN_OFFSET: f64 = 273.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModelParams {
    pub p_idle_w: f64,
    pub p_max_w: f64,
}

impl Default for PowerModelParams {
    fn default() -> Self {
        // idle draw at 30 % of peak
        Self {
            p_idle_w: 75.0,
            p_max_w: 250.0,
        }
    }
}

impl PowerModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_idle_w > 0.0 && self.p_idle_w < self.p_max_w) {
            return Err(Error::param(
                "models.power.p_idle_w",
                "need 0 < p_idle_w < p_max_w",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoolingModelParams {
    pub cop_a: f64,
    pub cop_b: f64,
    pub cop_c: f64,
    pub min_k: f64,
    pub max_k: f64,
    pub granularity_k: f64,
}

impl Default for CoolingModelParams {
    fn default() -> Self {
        Self {
            cop_a: 0.0068,
            cop_b: 0.0008,
            cop_c: 0.458,
            min_k: 285.0,
            max_k: 308.0,
            granularity_k: 0.5,
        }
    }
}

impl CoolingModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_k < self.max_k) {
            return Err(Error::param("models.cooling.min_k", "need min_k < max_k"));
        }
        if !(self.granularity_k > 0.0) {
            return Err(Error::param("models.cooling.granularity_k", "must be > 0"));
        }
        let poly = PolynomialCop(*self);
        if !(poly.cop_raw(self.min_k) > 0.0) {
            return Err(Error::param(
                "models.cooling",
                "COP must be positive over the setpoint range",
            ));
        }
        // the polynomial's derivative is linear, so checking both ends covers the range
        let slope = |k: f64| 2.0 * self.cop_a * (k - KELVIN_OFFSET) + self.cop_b;
        if !(slope(self.min_k) > 0.0 && slope(self.max_k) > 0.0) {
            return Err(Error::param(
                "models.cooling",
                "COP must increase with setpoint over the range",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalModelParams {
    pub beta_k_per_w: f64,
    pub r_thermal_k_per_w: f64,
}

impl Default for ThermalModelParams {
    fn default() -> Self {
        // a full 40-host rack at 250 W lifts its inlets by 8 K
        Self {
            beta_k_per_w: 0.0008,
            r_thermal_k_per_w: 0.15,
        }
    }
}

impl ThermalModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_k_per_w >= 0.0) {
            return Err(Error::param("models.thermal.beta_k_per_w", "must be >= 0"));
        }
        if !(self.r_thermal_k_per_w >= 0.0) {
            return Err(Error::param(
                "models.thermal.r_thermal_k_per_w",
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

fn check_util(util: f64) -> Result<()> {
    if (0.0..=1.0).contains(&util) {
        Ok(())
    } else {
        Err(Error::Utilisation(util))
    }
}

/// Server draw in watts for an active host.
pub fn server_power(
    params: &PowerModelParams,
    util: f64,
    freq_idx: usize,
    spec: &HostSpec,
) -> Result<f64> {
    check_util(util)?;
    let ratio = spec.freq_ratio(freq_idx)?;
    Ok(params.p_idle_w + (params.p_max_w - params.p_idle_w) * util * ratio * ratio)
}

/// Chiller COP and electrical draw for a given IT load.
pub fn cooling_power(
    params: &CoolingModelParams,
    p_it_total_w: f64,
    setpoint_k: f64,
) -> Result<(f64, f64)> {
    PolynomialCop(*params).cooling_power(p_it_total_w, setpoint_k)
}

/// Inlet temperature of every host. `racks[i]` is host `i`'s rack.
pub fn inlet_temps(
    params: &ThermalModelParams,
    setpoint_k: f64,
    host_powers: &[f64],
    racks: &[RackId],
) -> Result<Vec<f64>> {
    if let Some(p) = host_powers.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::NegativePower(*p));
    }
    let mut rack_sum: BTreeMap<&RackId, f64> = BTreeMap::new();
    for (p, r) in host_powers.iter().zip(racks) {
        *rack_sum.entry(r).or_default() += p;
    }
    Ok(racks
        .iter()
        .map(|r| setpoint_k + params.beta_k_per_w * rack_sum[r])
        .collect())
}

/// Steady-state CPU temperature.
pub fn cpu_temp(r_thermal_k_per_w: f64, inlet_k: f64, server_power_w: f64) -> Result<f64> {
    if !(server_power_w >= 0.0) {
        return Err(Error::NegativePower(server_power_w));
    }
    Ok(inlet_k + r_thermal_k_per_w * server_power_w)
}

/// Power usage effectiveness.
pub fn pue(p_it_w: f64, p_cool_w: f64, p_other_w: f64) -> Result<f64> {
    if !(p_it_w > 0.0) {
        return Err(Error::PueUndefined);
    }
    Ok((p_it_w + p_cool_w + p_other_w) / p_it_w)
}

pub trait PowerModel: fmt::Debug + Send + Sync {
    /// Draw of an active host. Must stay within `[p_idle, p_max]` and be
    /// non-decreasing in both `util` and `freq_idx`.
    fn power_w(&self, spec: &HostSpec, util: f64, freq_idx: usize) -> Result<f64>;
}

pub trait CoolingModel: fmt::Debug + Send + Sync {
    /// Must be positive and strictly increasing over [`Self::setpoint_range_k`].
    fn cop(&self, setpoint_k: f64) -> Result<f64>;

    fn setpoint_range_k(&self) -> (f64, f64);

    fn granularity_k(&self) -> f64;

    fn cooling_power(&self, p_it_total_w: f64, setpoint_k: f64) -> Result<(f64, f64)> {
        if !(p_it_total_w >= 0.0) {
            return Err(Error::NegativePower(p_it_total_w));
        }
        let cop = self.cop(setpoint_k)?;
        Ok((cop, p_it_total_w / cop))
    }

    /// Admissible setpoints, ascending.
    fn setpoint_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.setpoint_range_k();
        let step = self.granularity_k();
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }
}

pub trait ThermalModel: fmt::Debug + Send + Sync {
    /// Inlets of the hosts sharing one rack, given each host's draw. Racks do
    /// not influence each other. Every inlet is at least the setpoint and
    /// non-decreasing in each power.
    fn rack_inlets(&self, setpoint_k: f64, powers: &[f64]) -> Vec<f64>;

    fn cpu_temp(&self, inlet_k: f64, power_w: f64, r_thermal_k_per_w: f64) -> f64;
}

/// `P = p_idle + (p_max - p_idle) * u * (f/f_max)^exponent`, using the host
/// spec's idle and peak draw. The default exponent is 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricPower {
    pub freq_exponent: f64,
}

impl Default for ParametricPower {
    fn default() -> Self {
        Self { freq_exponent: 2.0 }
    }
}

impl PowerModel for ParametricPower {
    fn power_w(&self, spec: &HostSpec, util: f64, freq_idx: usize) -> Result<f64> {
        check_util(util)?;
        let ratio = spec.freq_ratio(freq_idx)?;
        let scale = if self.freq_exponent == 2.0 {
            ratio * ratio
        } else {
            ratio.powf(self.freq_exponent)
        };
        Ok(spec.p_idle_w + (spec.p_max_w - spec.p_idle_w) * util * scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialCop(pub CoolingModelParams);

impl PolynomialCop {
    fn cop_raw(&self, setpoint_k: f64) -> f64 {
        let p = &self.0;
        let t = setpoint_k - KELVIN_OFFSET;
        p.cop_a * t * t + p.cop_b * t + p.cop_c
    }
}

impl CoolingModel for PolynomialCop {
    fn cop(&self, setpoint_k: f64) -> Result<f64> {
        let p = &self.0;
        // tolerate grid arithmetic landing a hair outside the range
        if setpoint_k < p.min_k - 1e-9 || setpoint_k > p.max_k + 1e-9 {
            return Err(Error::SetpointRange {
                setpoint_k,
                min_k: p.min_k,
                max_k: p.max_k,
            });
        }
        Ok(self.cop_raw(setpoint_k))
    }

    fn setpoint_range_k(&self) -> (f64, f64) {
        (self.0.min_k, self.0.max_k)
    }

    fn granularity_k(&self) -> f64 {
        self.0.granularity_k
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearRecirculation(pub ThermalModelParams);

impl ThermalModel for LinearRecirculation {
    fn rack_inlets(&self, setpoint_k: f64, powers: &[f64]) -> Vec<f64> {
        let rise = self.0.beta_k_per_w * powers.iter().sum::<f64>();
        vec![setpoint_k + rise; powers.len()]
    }

    fn cpu_temp(&self, inlet_k: f64, power_w: f64, r_thermal_k_per_w: f64) -> f64 {
        inlet_k + r_thermal_k_per_w * power_w
    }
}

/// The three models a simulation and its policies evaluate against.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub power: Arc<dyn PowerModel>,
    pub cooling: Arc<dyn CoolingModel>,
    pub thermal: Arc<dyn ThermalModel>,
}

impl Default for ModelSet {
    fn default() -> Self {
        Self::parametric(CoolingModelParams::default(), ThermalModelParams::default())
    }
}

impl ModelSet {
    pub fn parametric(cooling: CoolingModelParams, thermal: ThermalModelParams) -> Self {
        Self {
            power: Arc::new(ParametricPower::default()),
            cooling: Arc::new(PolynomialCop(cooling)),
            thermal: Arc::new(LinearRecirculation(thermal)),
        }
    }

    /// Draw of a host at the given demand and frequency, 0 when off.
    pub fn host_power(
        &self,
        spec: &HostSpec,
        active: bool,
        util: f64,
        freq_idx: usize,
    ) -> Result<f64> {
        if active {
            self.power.power_w(spec, util.clamp(0.0, 1.0), freq_idx)
        } else {
            Ok(0.0)
        }
    }

    /// Refresh every host's power only.
    pub fn evaluate_power(&self, state: &mut DataCentreState) -> Result<()> {
        for h in &mut state.hosts {
            h.power_w = self.host_power(&h.spec, h.active, h.util, h.freq_idx)?;
        }
        Ok(())
    }

    /// Inlets of every host at `setpoint_k` given the hosts' current power.
    pub fn inlets(&self, state: &DataCentreState, setpoint_k: f64) -> Vec<f64> {
        let mut out = vec![setpoint_k; state.hosts.len()];
        for members in rack_members(state).values() {
            let powers: Vec<f64> = members.iter().map(|&i| state.hosts[i].power_w).collect();
            for (&i, t) in members
                .iter()
                .zip(self.thermal.rack_inlets(setpoint_k, &powers))
            {
                out[i] = t;
            }
        }
        out
    }

    /// Full model pass: power, then inlet and CPU temperature, then cooling.
    /// Returns the total IT draw.
    pub fn evaluate(&self, state: &mut DataCentreState) -> Result<f64> {
        self.evaluate_power(state)?;
        let setpoint = state.cooling.setpoint_k;
        let inlets = self.inlets(state, setpoint);
        for (h, t_in) in state.hosts.iter_mut().zip(inlets) {
            h.inlet_temp_k = t_in;
            h.cpu_temp_k = self
                .thermal
                .cpu_temp(t_in, h.power_w, h.spec.r_thermal_k_per_w);
        }
        let p_it: f64 = state.hosts.iter().map(|h| h.power_w).sum();
        let (cop, p_cool) = self.cooling.cooling_power(p_it, setpoint)?;
        state.cooling.cop = cop;
        state.cooling.power_w = p_cool;
        Ok(p_it)
    }
}

/// Host indices grouped by rack, in host order within each rack.
pub fn rack_members(state: &DataCentreState) -> BTreeMap<RackId, Vec<usize>> {
    let mut out: BTreeMap<RackId, Vec<usize>> = BTreeMap::new();
    for (i, h) in state.hosts.iter().enumerate() {
        out.entry(h.spec.rack_id.clone()).or_default().push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn spec() -> HostSpec {
        HostSpec::reference("h", "r")
    }

    #[test]
    fn server_power_examples() {
        let p = PowerModelParams::default();
        for idx in 0..6 {
            assert_eq!(server_power(&p, 0.0, idx, &spec()).unwrap(), 75.0);
        }
        assert_eq!(server_power(&p, 1.0, 5, &spec()).unwrap(), 250.0);
        let low = server_power(&p, 1.0, 0, &spec()).unwrap();
        assert_relative_eq!(
            low,
            75.0 + 175.0 * (1.73f64 / 2.40).powi(2),
            epsilon = 1e-12
        );
        assert!((low - 165.93).abs() < 0.005);
    }

    #[test]
    fn server_power_rejects_bad_util() {
        let p = PowerModelParams::default();
        assert_eq!(
            server_power(&p, 1.2, 5, &spec()),
            Err(Error::Utilisation(1.2))
        );
        assert!(server_power(&p, -0.1, 5, &spec()).is_err());
    }

    #[test]
    fn cooling_examples() {
        let c = CoolingModelParams::default();
        let (cop, pc) = cooling_power(&c, 100_000.0, 291.0).unwrap();
        assert!((cop - 2.6389).abs() < 1e-4, "{cop}");
        assert!((pc - 37_894.0).abs() < 1.0, "{pc}");
        let (cop, pc) = cooling_power(&c, 100_000.0, 303.0).unwrap();
        assert!((cop - 6.5408).abs() < 1e-4, "{cop}");
        assert!((pc - 15_289.0).abs() < 1.0, "{pc}");
        assert_eq!(cooling_power(&c, 0.0, 300.0).unwrap().1, 0.0);
    }

    #[test]
    fn cooling_rejects_out_of_range_setpoint() {
        let c = CoolingModelParams::default();
        assert!(matches!(
            cooling_power(&c, 1.0, 280.0),
            Err(Error::SetpointRange { .. })
        ));
        assert!(cooling_power(&c, 1.0, 308.5).is_err());
    }

    #[test]
    fn cop_strictly_increasing_on_range() {
        let m = PolynomialCop(CoolingModelParams::default());
        let grid = m.setpoint_grid();
        assert_eq!(grid.len(), 47);
        assert_eq!(grid[0], 285.0);
        assert_eq!(*grid.last().unwrap(), 308.0);
        let cops: Vec<f64> = grid.iter().map(|s| m.cop(*s).unwrap()).collect();
        assert!(cops.windows(2).all(|w| w[0] < w[1]));
        let cool: Vec<f64> = grid
            .iter()
            .map(|s| m.cooling_power(1e5, *s).unwrap().1)
            .collect();
        assert!(cool.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn inlet_examples() {
        let t = ThermalModelParams::default();
        let racks: Vec<RackId> = (0..40)
            .map(|_| "r0".into())
            .chain((0..40).map(|_| "r1".into()))
            .collect();
        let zeros = vec![0.0; 80];
        assert!(inlet_temps(&t, 291.0, &zeros, &racks)
            .unwrap()
            .iter()
            .all(|x| *x == 291.0));

        let mut powers = vec![250.0; 40];
        powers.extend(vec![0.0; 40]);
        let inlets = inlet_temps(&t, 291.0, &powers, &racks).unwrap();
        assert!(inlets[..40].iter().all(|x| (x - 299.0).abs() < 1e-9));
        assert!(inlets[40..].iter().all(|x| *x == 291.0));

        assert!(inlet_temps(&t, 291.0, &[-1.0], &["r".into()]).is_err());
    }

    #[test]
    fn cpu_temp_examples() {
        assert_eq!(cpu_temp(0.15, 299.0, 0.0).unwrap(), 299.0);
        assert_relative_eq!(cpu_temp(0.15, 299.0, 250.0).unwrap(), 336.5, epsilon = 1e-9);
        assert_relative_eq!(cpu_temp(0.15, 291.0, 75.0).unwrap(), 302.25, epsilon = 1e-9);
    }

    #[test]
    fn pue_examples() {
        assert_relative_eq!(pue(100.0, 37.0, 0.0).unwrap(), 1.37, epsilon = 1e-12);
        assert_relative_eq!(pue(100.0, 16.0, 0.0).unwrap(), 1.16, epsilon = 1e-12);
        assert_eq!(pue(42.0, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(pue(0.0, 1.0, 0.0), Err(Error::PueUndefined));
    }

    #[test]
    fn default_params_validate() {
        PowerModelParams::default().validate().unwrap();
        CoolingModelParams::default().validate().unwrap();
        ThermalModelParams::default().validate().unwrap();
        let bad = CoolingModelParams {
            cop_a: -0.01,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn power_monotone(
            idle in 1.0f64..200.0,
            span in 1.0f64..300.0,
            u1 in 0.0f64..=1.0,
            u2 in 0.0f64..=1.0,
            i1 in 0usize..6,
            i2 in 0usize..6,
        ) {
            let p = PowerModelParams { p_idle_w: idle, p_max_w: idle + span };
            let s = spec();
            let (ulo, uhi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            let (flo, fhi) = if i1 <= i2 { (i1, i2) } else { (i2, i1) };
            let a = server_power(&p, ulo, flo, &s).unwrap();
            let b = server_power(&p, uhi, flo, &s).unwrap();
            let c = server_power(&p, uhi, fhi, &s).unwrap();
            prop_assert!(a <= b && b <= c);
            prop_assert!(a >= p.p_idle_w && c <= p.p_max_w + 1e-9);
        }

        #[test]
        fn inlet_rise_is_linear(powers in proptest::collection::vec(0.0f64..300.0, 1..40), sp in 285.0f64..308.0) {
            let t = ThermalModelParams::default();
            let racks: Vec<RackId> = powers.iter().map(|_| "r".into()).collect();
            let once = inlet_temps(&t, sp, &powers, &racks).unwrap();
            let doubled: Vec<f64> = powers.iter().map(|p| 2.0 * p).collect();
            let twice = inlet_temps(&t, sp, &doubled, &racks).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!(a >= &sp);
                prop_assert!(((b - sp) - 2.0 * (a - sp)).abs() < 1e-9);
            }
        }
    }
}
