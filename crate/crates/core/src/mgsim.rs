//! Lumped islanded-microgrid simulator: PV array behind a current-commanded
//! microinverter with perturb-and-observe MPPT, an energy storage system, a
//! diesel generator, a stepped load and a first-order frequency model.
//!
//! Time is kept in integer milliseconds so that schedules line up exactly with
//! the MPPT and dispatch steps.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// --- PV array ----------------------------------------------------------------

/// Single-knee I-V curve
/// `I(V) = g * I_sc * (1 - exp((V - V_oc) / V_t)) / (1 - exp(-V_oc / V_t))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvModel {
    pub v_oc: f64,
    pub i_sc: f64,
    /// Knee sharpness in volts; smaller is a squarer curve.
    pub v_t: f64,
    pub rated_w: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvConfig {
    pub v_oc: f64,
    pub v_t: f64,
    pub rated_kw: f64,
}

impl Default for PvConfig {
    fn default() -> Self {
        PvConfig { v_oc: 600.0, v_t: 36.0, rated_kw: 250.0 }
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Maximizer of a unimodal function on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

impl PvModel {
    /// Curve with `I_sc` chosen so the peak power at full irradiance is `rated_kw`.
    pub fn from_config(c: &PvConfig) -> Result<Self> {
        if !(c.v_oc > 0.0 && c.v_t > 0.0 && c.rated_kw > 0.0) {
            return Err(Error::Invalid("PV constants must be positive".into()));
        }
        let unit = PvModel { v_oc: c.v_oc, i_sc: 1.0, v_t: c.v_t, rated_w: 0.0 };
        let (_, _, p1) = unit.mpp(1.0);
        let rated_w = c.rated_kw * 1e3;
        Ok(PvModel { v_oc: c.v_oc, i_sc: rated_w / p1, v_t: c.v_t, rated_w })
    }

    fn denom(&self) -> f64 {
        -(-self.v_oc / self.v_t).exp_m1()
    }

    fn current(&self, v: f64, g: f64) -> f64 {
        g * self.i_sc * -((v - self.v_oc) / self.v_t).exp_m1() / self.denom()
    }

    /// Array current at terminal voltage `v` and irradiance scale `g`.
    pub fn pv_iv(&self, v: f64, g: f64) -> Result<f64> {
        if !(0.0..=self.v_oc).contains(&v) {
            return Err(Error::OutOfRangeVoltage(v));
        }
        Ok(self.current(v, g))
    }

    /// Terminal voltage at which the array delivers `i`; 0 at or past short circuit.
    pub fn voltage_at(&self, i: f64, g: f64) -> f64 {
        let isc = g * self.i_sc;
        if isc <= 0.0 || i >= isc {
            return 0.0;
        }
        if i <= 0.0 {
            return self.v_oc;
        }
        (self.v_oc + self.v_t * (-(i / isc) * self.denom()).ln_1p()).clamp(0.0, self.v_oc)
    }

    /// `(V, I)` when the inverter draws the reference current `i_ref`.
    pub fn operating_point(&self, i_ref: f64, g: f64) -> (f64, f64) {
        let i = i_ref.clamp(0.0, (g * self.i_sc).max(0.0));
        (self.voltage_at(i, g), i)
    }

    /// Maximum power point `(V, I, P)` by golden-section search.
    pub fn mpp(&self, g: f64) -> (f64, f64, f64) {
        let v = golden_max(|v| v * self.current(v, g), 0.0, self.v_oc);
        let i = self.current(v, g);
        (v, i, v * i)
    }
}

// --- MPPT --------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PnoVariant {
    /// No perturbation while power is not falling.
    #[default]
    Literal,
    /// Keep moving in the same voltage direction while power rises.
    Symmetric,
}

impl FromStr for PnoVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(PnoVariant::Literal),
            "symmetric" => Ok(PnoVariant::Symmetric),
            _ => Err(Error::Invalid(format!("unknown PnO variant `{s}`"))),
        }
    }
}

impl fmt::Display for PnoVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PnoVariant::Literal => "literal",
            PnoVariant::Symmetric => "symmetric",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpptState {
    pub p_prev: f64,
    pub v_prev: f64,
    pub i_ref: f64,
    pub step: f64,
    /// Upper clamp for `i_ref`, the array short-circuit current.
    pub i_max: f64,
    pub enabled: bool,
}

/// One perturb-and-observe iteration on measured voltage and current.
pub fn pno_step(s: MpptState, v_rt: f64, i_rt: f64, variant: PnoVariant) -> MpptState {
    if !s.enabled {
        return s;
    }
    let p_rt = v_rt * i_rt;
    let dp = p_rt - s.p_prev;
    let dv = v_rt - s.v_prev;
    let mut i_ref = s.i_ref;
    if dp < 0.0 {
        if dv > 0.0 {
            i_ref += s.step;
        } else {
            i_ref -= s.step;
        }
    } else if variant == PnoVariant::Symmetric {
        if dv > 0.0 {
            i_ref -= s.step;
        } else {
            i_ref += s.step;
        }
    }
    MpptState { p_prev: p_rt, v_prev: v_rt, i_ref: i_ref.clamp(0.0, s.i_max), ..s }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpptConfig {
    /// Current step as a fraction of `I_sc`.
    pub step_fraction: f64,
    /// Starting reference as a fraction of `I_sc`.
    pub initial_fraction: f64,
    pub variant: PnoVariant,
}

impl Default for MpptConfig {
    fn default() -> Self {
        MpptConfig { step_fraction: 0.005, initial_fraction: 0.5, variant: PnoVariant::Literal }
    }
}

// --- dispatch and frequency --------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchConfig {
    pub ess_power_kw: f64,
    pub ess_capacity_kwh: f64,
    pub ess_initial_kwh: f64,
    pub diesel_max_kw: f64,
    pub diesel_tau_s: f64,
    pub diesel_initial_kw: f64,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig {
            ess_power_kw: 100.0,
            ess_capacity_kwh: 100.0,
            ess_initial_kwh: 50.0,
            diesel_max_kw: 1000.0,
            diesel_tau_s: 2.0,
            diesel_initial_kw: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchState {
    pub diesel_kw: f64,
    pub ess_kwh: f64,
}

/// ESS first, then diesel through its first-order ramp. Returns
/// `(diesel_kw, ess_kw)` for the coming interval; ESS power is positive when
/// discharging. The state's diesel output moves to the returned value.
pub fn dispatch(load_kw: f64, pv_kw: f64, state: &mut DispatchState, c: &DispatchConfig, dt_s: f64) -> (f64, f64) {
    let residual = load_kw - pv_kw;
    let max_out = c.ess_power_kw.min(state.ess_kwh * 3600.0 / dt_s);
    let max_in = c.ess_power_kw.min((c.ess_capacity_kwh - state.ess_kwh) * 3600.0 / dt_s);
    let ess = residual.clamp(-max_in.max(0.0), max_out.max(0.0));
    let target = (residual - ess).clamp(0.0, c.diesel_max_kw);
    let keep = if c.diesel_tau_s > 0.0 { (-dt_s / c.diesel_tau_s).exp() } else { 0.0 };
    state.diesel_kw = target + (state.diesel_kw - target) * keep;
    (state.diesel_kw, ess)
}

pub fn ess_energy_update(kwh: f64, ess_kw: f64, dt_s: f64, capacity_kwh: f64) -> f64 {
    (kwh - ess_kw * dt_s / 3600.0).clamp(0.0, capacity_kwh)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub f_nominal: f64,
    pub s_base_kw: f64,
    /// Hz/s per unit of imbalance.
    pub k_f: f64,
    /// 1/s.
    pub damping: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { f_nominal: 60.0, s_base_kw: 1000.0, k_f: 2.0, damping: 1.0 }
    }
}

/// Exact step of `df/dt = k_f * imbalance / S_base - D * (f - f_nom)` with the
/// imbalance held over `dt`.
pub fn frequency_update(f: f64, imbalance_kw: f64, dt_s: f64, g: &GridConfig) -> f64 {
    let drive = g.k_f * imbalance_kw / g.s_base_kw;
    if g.damping == 0.0 {
        return f + drive * dt_s;
    }
    let decay = (-g.damping * dt_s).exp();
    g.f_nominal + (f - g.f_nominal) * decay + drive / g.damping * (1.0 - decay)
}

// --- scenario ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttackEffect {
    MpptOff,
    InverterOff,
    SensorPerturb { amplitude: f64, frequency_hz: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackWindow {
    pub start_s: f64,
    /// Open-ended when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
    pub effect: AttackEffect,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub time_s: f64,
    pub kw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Irradiance {
    Constant {
        value: f64,
    },
    /// `low` outside, `high` between `rise_end_s` and `fall_start_s`, linear ramps between.
    Trapezoid {
        low: f64,
        high: f64,
        rise_start_s: f64,
        rise_end_s: f64,
        fall_start_s: f64,
        fall_end_s: f64,
    },
}

impl Irradiance {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Irradiance::Constant { value } => value,
            Irradiance::Trapezoid { low, high, rise_start_s, rise_end_s, fall_start_s, fall_end_s } => {
                if t <= rise_start_s || t >= fall_end_s {
                    low
                } else if t < rise_end_s {
                    low + (high - low) * (t - rise_start_s) / (rise_end_s - rise_start_s)
                } else if t <= fall_start_s {
                    high
                } else {
                    high - (high - low) * (t - fall_start_s) / (fall_end_s - fall_start_s)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    pub mppt_dt_s: f64,
    pub dispatch_dt_s: f64,
    pub output_dt_s: f64,
    pub islanding_s: f64,
    pub irradiance: Irradiance,
    /// Total load from each step time on.
    pub load_schedule: Vec<LoadStep>,
    #[serde(default)]
    pub attacks: Vec<AttackWindow>,
    #[serde(default)]
    pub pv: PvConfig,
    #[serde(default)]
    pub mppt: MpptConfig,
    #[serde(default)]
    pub dispatch: DispatchConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

fn to_ms(seconds: f64, what: &str) -> Result<u64> {
    let ms = seconds * 1000.0;
    if !ms.is_finite() || ms < 0.0 || (ms - ms.round()).abs() > 1e-6 {
        return Err(Error::Invalid(format!("{what} = {seconds} s is not a whole number of milliseconds")));
    }
    Ok(ms.round() as u64)
}

struct Timing {
    duration: u64,
    mppt: u64,
    dispatch: u64,
    output: u64,
    islanding: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn timing(&self) -> Result<Timing> {
        let t = Timing {
            duration: to_ms(self.duration_s, "duration_s")?,
            mppt: to_ms(self.mppt_dt_s, "mppt_dt_s")?,
            dispatch: to_ms(self.dispatch_dt_s, "dispatch_dt_s")?,
            output: to_ms(self.output_dt_s, "output_dt_s")?,
            islanding: to_ms(self.islanding_s, "islanding_s")?,
        };
        if t.mppt == 0 || t.dispatch % t.mppt != 0 || t.dispatch == 0 || t.output % t.dispatch != 0 || t.output == 0 {
            return Err(Error::Invalid("timesteps must be positive and nest: mppt | dispatch | output".into()));
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.timing()?;
        if self.load_schedule.is_empty() {
            return Err(Error::Invalid("load schedule is empty".into()));
        }
        if self.load_schedule.windows(2).any(|w| w[1].time_s < w[0].time_s) {
            return Err(Error::Invalid("load schedule is not time-sorted".into()));
        }
        if self.load_schedule.iter().any(|l| !(l.kw >= 0.0)) {
            return Err(Error::Invalid("load must be non-negative".into()));
        }
        if self.attacks.windows(2).any(|w| w[1].start_s < w[0].start_s) {
            return Err(Error::Invalid("attack schedule is not time-sorted".into()));
        }
        for a in &self.attacks {
            if a.end_s.is_some_and(|e| e < a.start_s) {
                return Err(Error::Invalid("attack window ends before it starts".into()));
            }
            if let AttackEffect::SensorPerturb { amplitude, frequency_hz } = a.effect {
                if !(amplitude >= 0.0) || !(frequency_hz > 0.0) {
                    return Err(Error::Invalid("sensor perturbation needs amplitude >= 0 and frequency > 0".into()));
                }
            }
        }
        if !(self.mppt.step_fraction > 0.0) {
            return Err(Error::Invalid("MPPT step must be positive".into()));
        }
        if self.grid.s_base_kw <= 0.0 || self.grid.damping < 0.0 {
            return Err(Error::Invalid("grid base power must be positive and damping non-negative".into()));
        }
        let d = &self.dispatch;
        if !(0.0..=d.ess_capacity_kwh).contains(&d.ess_initial_kwh) || d.ess_power_kw < 0.0 || d.diesel_max_kw < 0.0 {
            return Err(Error::Invalid("inconsistent dispatch limits".into()));
        }
        Ok(())
    }

    fn load_at(&self, t: f64) -> f64 {
        self.load_schedule.iter().take_while(|l| l.time_s <= t).last().map_or(self.load_schedule[0].kw, |l| l.kw)
    }

    fn active(&self, t_ms: u64) -> impl Iterator<Item = &AttackEffect> {
        self.attacks
            .iter()
            .filter(move |a| {
                let start = (a.start_s * 1000.0).round() as u64;
                let end = a.end_s.map(|e| (e * 1000.0).round() as u64);
                t_ms >= start && end.map_or(true, |e| t_ms < e)
            })
            .map(|a| &a.effect)
    }
}

/// Common skeleton of the shipped scenarios: 60 s, islanded at 0, 250 kW
/// residential plus 250 kW industrial load stepping to 550 kW at 35 s.
pub fn base_scenario(name: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        duration_s: 60.0,
        mppt_dt_s: 0.005,
        dispatch_dt_s: 0.01,
        output_dt_s: 0.1,
        islanding_s: 0.0,
        irradiance: Irradiance::Constant { value: 1.0 },
        load_schedule: vec![LoadStep { time_s: 0.0, kw: 500.0 }, LoadStep { time_s: 35.0, kw: 800.0 }],
        attacks: Vec::new(),
        pv: PvConfig::default(),
        mppt: MpptConfig { variant: PnoVariant::Symmetric, ..MpptConfig::default() },
        dispatch: DispatchConfig::default(),
        grid: GridConfig::default(),
    }
}

pub const PRESETS: [&str; 5] = ["nominal", "mppt_dos", "inverter_dos", "input_sine", "input_sine_fast"];

pub fn preset(name: &str) -> Result<Scenario> {
    let mut s = base_scenario(name);
    let window = |start_s: f64, end_s: Option<f64>, effect| AttackWindow { start_s, end_s, effect };
    match name {
        "nominal" => {}
        "mppt_dos" => s.attacks.push(window(0.0, None, AttackEffect::MpptOff)),
        "inverter_dos" => {
            s.attacks.push(window(15.0, Some(30.0), AttackEffect::InverterOff));
            s.attacks.push(window(45.0, None, AttackEffect::InverterOff));
        }
        "input_sine" => {
            s.attacks.push(window(0.0, None, AttackEffect::SensorPerturb { amplitude: 0.1, frequency_hz: 0.5 }))
        }
        "input_sine_fast" => {
            s.attacks.push(window(0.0, None, AttackEffect::SensorPerturb { amplitude: 0.1, frequency_hz: 5.0 }))
        }
        _ => return Err(Error::Invalid(format!("unknown scenario `{name}`; expected one of {}", PRESETS.join(", ")))),
    }
    Ok(s)
}

// --- simulation --------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgState {
    pub time_s: f64,
    pub freq_hz: f64,
    pub pv_kw: f64,
    pub diesel_kw: f64,
    pub ess_kw: f64,
    pub ess_kwh: f64,
    pub load_kw: f64,
    pub inverter_online: bool,
    pub mppt_enabled: bool,
}

impl MgState {
    /// Generation minus load for the interval starting at this row.
    pub fn imbalance_kw(&self) -> f64 {
        self.pv_kw + self.diesel_kw + self.ess_kw - self.load_kw
    }
}

/// Step the scenario and return one row per output interval. Each row holds
/// the frequency at its start time and the powers held over the following
/// dispatch interval.
pub fn run_scenario(s: &Scenario) -> Result<Vec<MgState>> {
    s.validate()?;
    let tm = s.timing()?;
    let pv = PvModel::from_config(&s.pv)?;
    let mut mppt = MpptState {
        p_prev: 0.0,
        v_prev: 0.0,
        i_ref: s.mppt.initial_fraction.clamp(0.0, 1.0) * pv.i_sc,
        step: s.mppt.step_fraction * pv.i_sc,
        i_max: pv.i_sc,
        enabled: true,
    };
    let mut ds = DispatchState { diesel_kw: s.dispatch.diesel_initial_kw, ess_kwh: s.dispatch.ess_initial_kwh };
    let mut freq = s.grid.f_nominal;
    let dispatch_dt = tm.dispatch as f64 / 1000.0;
    let mut rows = Vec::with_capacity((tm.duration / tm.output) as usize);

    let mut t_ms = 0u64;
    while t_ms < tm.duration {
        let t = t_ms as f64 / 1000.0;
        let g = s.irradiance.at(t).max(0.0);
        let mut online = true;
        let mut perturb = 1.0;
        mppt.enabled = true;
        for effect in s.active(t_ms) {
            match *effect {
                AttackEffect::MpptOff => mppt.enabled = false,
                AttackEffect::InverterOff => online = false,
                AttackEffect::SensorPerturb { amplitude, frequency_hz } => {
                    perturb *= 1.0 + amplitude * (2.0 * PI * frequency_hz * t).sin()
                }
            }
        }
        let (v, i) = pv.operating_point(mppt.i_ref, g);
        let pv_kw = if online { v * i / 1000.0 } else { 0.0 };

        if t_ms % tm.dispatch == 0 {
            let load = s.load_at(t);
            let (diesel, ess) = dispatch(load, pv_kw, &mut ds, &s.dispatch, dispatch_dt);
            let row = MgState {
                time_s: t,
                freq_hz: freq,
                pv_kw,
                diesel_kw: diesel,
                ess_kw: ess,
                ess_kwh: ds.ess_kwh,
                load_kw: load,
                inverter_online: online,
                mppt_enabled: mppt.enabled,
            };
            if t_ms % tm.output == 0 {
                rows.push(row);
            }
            ds.ess_kwh = ess_energy_update(ds.ess_kwh, ess, dispatch_dt, s.dispatch.ess_capacity_kwh);
            freq = if t_ms + tm.dispatch > tm.islanding {
                frequency_update(freq, row.imbalance_kw(), dispatch_dt, &s.grid)
            } else {
                s.grid.f_nominal
            };
            if !freq.is_finite() {
                return Err(Error::NonFinite(format!("frequency at t = {t} s")));
            }
        }

        if online && mppt.enabled {
            mppt = pno_step(mppt, v * perturb, i * perturb, s.mppt.variant);
        }
        t_ms += tm.mppt;
    }
    Ok(rows)
}

pub const CSV_HEADER: [&str; 9] =
    ["time_s", "freq_hz", "pv_kw", "diesel_kw", "ess_kw", "ess_kwh", "load_kw", "inverter_online", "mppt_enabled"];

pub fn write_csv<W: Write>(rows: &[MgState], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{:.3}", r.time_s),
            format!("{:.6}", r.freq_hz),
            format!("{:.6}", r.pv_kw),
            format!("{:.6}", r.diesel_kw),
            format!("{:.6}", r.ess_kw),
            format!("{:.6}", r.ess_kwh),
            format!("{:.6}", r.load_kw),
            (r.inverter_online as u8).to_string(),
            (r.mppt_enabled as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Population variance of `pv_kw` over rows with `start <= t < end`.
pub fn pv_variance(rows: &[MgState], start_s: f64, end_s: f64) -> f64 {
    let xs: Vec<f64> = rows.iter().filter(|r| r.time_s >= start_s && r.time_s < end_s).map(|r| r.pv_kw).collect();
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}
