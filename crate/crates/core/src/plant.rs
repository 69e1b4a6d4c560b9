//! Linear discrete-time surrogate plant under PI control, with a fault
//! library and a set-point excitation hook.
//!
//! The model is written in deviation variables around an operating point:
//!
//! ```text
//! x[k+1] = A x[k] + B G[k] v[k] + d[k] + w[k]
//! y[k]   = C x[k] + s[k] + n[k]
//! ```
//!
//! `v` is the valve position produced from the controller command `u`, `G`
//! the diagonal of per-loop process gains (nominal 1), `d` additive state
//! disturbances, `s` sensor faults and `w`, `n` Gaussian noise. Recorded rows
//! are `[y + y_nominal, u + u_nominal]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{write_labels, write_matrix};
use crate::error::{FddError, Result};
use crate::prbs::PrbsPlan;
use crate::tensor::Tensor2;

/// Outputs whose magnitude exceeds this abort the simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// One PI loop: output `controlled` regulated by manipulated input `input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub name: String,
    pub controlled: usize,
    pub input: usize,
    pub kp: f64,
    pub ki: f64,
    /// Set-point in deviation units.
    #[serde(default)]
    pub setpoint: f64,
    /// Operating range of the set-point, used to size excitation.
    pub setpoint_range: f64,
    /// Optional valve limits in deviation units.
    #[serde(default)]
    pub limits: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// `n × n`, spectral radius below 1.
    pub a: Tensor2,
    /// `n × n_u`.
    pub b: Tensor2,
    /// `d_y × n`.
    pub c: Tensor2,
    pub loops: Vec<LoopConfig>,
    pub process_noise: Vec<f64>,
    pub measurement_noise: Vec<f64>,
    pub output_nominal: Vec<f64>,
    pub input_nominal: Vec<f64>,
    pub sample_time: f64,
    pub seed: u64,
}

impl PlantConfig {
    pub fn states(&self) -> usize {
        self.a.rows()
    }

    pub fn outputs(&self) -> usize {
        self.c.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    /// Recorded columns: outputs then manipulated inputs.
    pub fn record_width(&self) -> usize {
        self.outputs() + self.inputs()
    }

    pub fn loop_index(&self, name: &str) -> Result<usize> {
        self.loops
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| FddError::Config(format!("no control loop named {name:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states();
        if self.a.cols() != n || self.b.rows() != n || self.c.cols() != n {
            return Err(FddError::dim("state-space matrices disagree on the state dimension"));
        }
        let (ny, nu) = (self.outputs(), self.inputs());
        if self.process_noise.len() != n
            || self.measurement_noise.len() != ny
            || self.output_nominal.len() != ny
            || self.input_nominal.len() != nu
        {
            return Err(FddError::dim("noise or nominal vectors have the wrong length"));
        }
        if self.process_noise.iter().chain(&self.measurement_noise).any(|&s| !(s >= 0.0)) {
            return Err(FddError::Config("noise standard deviations must be nonnegative".into()));
        }
        if !(self.sample_time > 0.0) {
            return Err(FddError::Config("sample time must be positive".into()));
        }
        for l in &self.loops {
            if l.controlled >= ny || l.input >= nu {
                return Err(FddError::Config(format!("loop {} references a missing channel", l.name)));
            }
        }
        let rho = spectral_radius(&self.a);
        if !(rho < 1.0) {
            return Err(FddError::Config(format!("state matrix spectral radius {rho:.4} is not below 1")));
        }
        Ok(())
    }

    /// Eight-column default: six outputs, two PI loops.
    pub fn surrogate(seed: u64) -> Self {
        let a = Tensor2::from_rows(&[
            vec![0.90, 0.00, 0.05, 0.00, 0.00, 0.00],
            vec![0.00, 0.85, 0.00, 0.05, 0.00, 0.00],
            vec![0.04, 0.00, 0.92, 0.00, 0.00, 0.00],
            vec![0.00, 0.05, 0.00, 0.80, 0.00, 0.00],
            vec![0.03, 0.03, 0.00, 0.00, 0.88, 0.00],
            vec![0.00, 0.00, 0.00, 0.00, 0.00, 0.70],
        ])
        .unwrap();
        let b = Tensor2::from_rows(&[
            vec![0.50, 0.00],
            vec![0.00, 0.40],
            vec![0.10, 0.00],
            vec![0.00, 0.15],
            vec![0.00, 0.00],
            vec![0.00, 0.00],
        ])
        .unwrap();
        let mut c = Tensor2::zeros(6, 6);
        for i in 0..6 {
            c.set(i, i, 1.0);
        }
        Self {
            a,
            b,
            c,
            loops: vec![
                LoopConfig {
                    name: "sp1".into(),
                    controlled: 0,
                    input: 0,
                    kp: 0.6,
                    ki: 0.1,
                    setpoint: 0.0,
                    setpoint_range: 20.0,
                    limits: None,
                },
                LoopConfig {
                    name: "sp2".into(),
                    controlled: 1,
                    input: 1,
                    kp: 0.8,
                    ki: 0.15,
                    setpoint: 0.0,
                    setpoint_range: 50.0,
                    limits: None,
                },
            ],
            process_noise: vec![0.05; 6],
            measurement_noise: vec![0.05, 0.05, 0.02, 0.1, 0.02, 0.2],
            output_nominal: vec![50.0, 120.0, 3.2, 75.0, 0.5, 22.0],
            input_nominal: vec![40.0, 60.0],
            sample_time: 1.0,
            seed,
        }
    }
}

/// Estimates `ρ(A)` as `‖A^(2^m)‖^(1/2^m)` by repeated normalized squaring.
pub fn spectral_radius(a: &Tensor2) -> f64 {
    let n = a.rows();
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let squarings = 12;
    for _ in 0..squarings {
        let mut next = Tensor2::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let v = m.get(i, k);
                if v != 0.0 {
                    for j in 0..n {
                        next.set(i, j, next.get(i, j) + v * m.get(k, j));
                    }
                }
            }
        }
        log_scale *= 2.0;
        let norm = next.sum_squares().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        next.as_mut_slice().iter_mut().for_each(|v| *v /= norm);
        log_scale += norm.ln();
        m = next;
    }
    (log_scale / f64::powi(2.0, squarings)).exp()
}

/// Fault shapes. `FaultSpec::magnitude` is the step size, noise std, drift
/// slope per sample or deadband respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Step,
    RandomVariation,
    SlowDrift,
    Stiction,
}

/// Where a fault acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    /// Additive input to state `i`.
    Disturbance(usize),
    /// Additive bias on measured output `i`.
    Sensor(usize),
    /// Valve `j`: additive offset, or stiction.
    Actuator(usize),
    /// Multiplicative process gain of input `j` (nominal 1).
    ProcessGain(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: FaultTarget,
    pub magnitude: f64,
    pub onset: usize,
}

impl FaultSpec {
    pub fn new(kind: FaultKind, target: FaultTarget, magnitude: f64, onset: usize) -> Self {
        Self {
            kind,
            target,
            magnitude,
            onset,
        }
    }

    fn validate(&self, plant: &PlantConfig) -> Result<()> {
        if !self.magnitude.is_finite() {
            return Err(FddError::Config("fault magnitude must be finite".into()));
        }
        let ok = match self.target {
            FaultTarget::Disturbance(i) => i < plant.states(),
            FaultTarget::Sensor(i) => i < plant.outputs(),
            FaultTarget::Actuator(j) | FaultTarget::ProcessGain(j) => j < plant.inputs(),
        };
        if !ok {
            return Err(FddError::Config(format!("fault target {:?} out of range", self.target)));
        }
        if self.kind == FaultKind::Stiction && !matches!(self.target, FaultTarget::Actuator(_)) {
            return Err(FddError::Config("stiction applies to actuators only".into()));
        }
        if self.kind == FaultKind::Stiction && self.magnitude < 0.0 {
            return Err(FddError::Config("stiction deadband must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Memory carried by a fault between samples.
#[derive(Debug, Clone)]
pub struct FaultState {
    rng: ChaCha8Rng,
    /// Last valve position for stiction.
    held: Option<f64>,
}

impl FaultState {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            held: None,
        }
    }
}

/// Transforms a channel value at sample `t`.
///
/// Step adds `magnitude` from onset on, random variation adds zero-mean
/// Gaussian noise of std `magnitude`, slow drift adds `magnitude·(t - onset)`.
/// Stiction keeps the previous output until the command differs from it by at
/// least the deadband, then jumps to the command.
pub fn apply_fault(value: f64, t: usize, fault: &FaultSpec, state: &mut FaultState) -> f64 {
    if fault.kind == FaultKind::Stiction {
        let held = state.held.get_or_insert(value);
        if t >= fault.onset && (value - *held).abs() < fault.magnitude {
            return *held;
        }
        *held = value;
        return value;
    }
    if t < fault.onset {
        return value;
    }
    match fault.kind {
        FaultKind::Step => value + fault.magnitude,
        FaultKind::RandomVariation => {
            if fault.magnitude == 0.0 {
                return value;
            }
            let z: f64 = state.rng.sample(rand_distr::StandardNormal);
            value + fault.magnitude * z
        }
        FaultKind::SlowDrift => value + fault.magnitude * (t - fault.onset) as f64,
        FaultKind::Stiction => unreachable!(),
    }
}

/// Simulated record with per-sample labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDataset {
    pub data: Tensor2,
    pub labels: Vec<usize>,
    pub class: usize,
    pub fault: Option<FaultSpec>,
    pub prbs: Option<PrbsPlan>,
    pub seed: u64,
}

impl ScenarioDataset {
    /// Writes `<stem>.dat` (whitespace matrix), `<stem>.labels` and
    /// `<stem>.json` (metadata).
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        write_matrix(&dir.join(format!("{stem}.dat")), &self.data)?;
        write_labels(&dir.join(format!("{stem}.labels")), &self.labels)?;
        let meta = serde_json::json!({
            "class": self.class,
            "fault": self.fault,
            "prbs": self.prbs,
            "seed": self.seed,
            "rows": self.data.rows(),
            "columns": self.data.cols(),
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta).unwrap())?;
        Ok(())
    }
}

/// Runs the closed loop for `horizon` samples.
///
/// Samples from `fault.onset` on are labeled `class`, earlier ones 0. The
/// excitation from `prbs` is added to the set-point of the loop named by its
/// `target`.
pub fn simulate_scenario(
    plant: &PlantConfig,
    fault: Option<&FaultSpec>,
    class: usize,
    prbs: Option<&PrbsPlan>,
    horizon: usize,
) -> Result<ScenarioDataset> {
    plant.validate()?;
    if horizon == 0 {
        return Err(FddError::Config("horizon must be at least 1".into()));
    }
    if let Some(f) = fault {
        f.validate(plant)?;
    }
    let (n, ny, nu) = (plant.states(), plant.outputs(), plant.inputs());
    let excitation = match prbs {
        Some(p) => Some((plant.loop_index(&p.target)?, p.signal(horizon)?)),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(plant.seed);
    let mut fault_state = FaultState::new(plant.seed ^ 0xFA17_5EED);
    let process: Vec<Normal<f64>> = plant.process_noise.iter().map(|&s| Normal::new(0.0, s).unwrap()).collect();
    let measure: Vec<Normal<f64>> = plant.measurement_noise.iter().map(|&s| Normal::new(0.0, s).unwrap()).collect();

    let mut x = vec![0.0; n];
    let mut integral = vec![0.0; plant.loops.len()];
    let mut u = vec![0.0; nu];
    let mut data = Tensor2::zeros(horizon, ny + nu);
    let mut labels = vec![0; horizon];

    for k in 0..horizon {
        let mut y = vec![0.0; ny];
        plant.c.matvec_acc(&x, &mut y);
        for (yi, d) in y.iter_mut().zip(&measure) {
            *yi += d.sample(&mut rng);
        }
        if let Some(f @ FaultSpec { target: FaultTarget::Sensor(i), .. }) = fault {
            y[*i] = apply_fault(y[*i], k, f, &mut fault_state);
        }
        if let Some(v) = y.iter().find(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(FddError::SimulationDivergence { sample: k, value: *v });
        }

        let mut valve = vec![0.0; nu];
        for (li, l) in plant.loops.iter().enumerate() {
            let mut r = l.setpoint;
            if let Some((target, sig)) = &excitation {
                if *target == li {
                    r += sig[k];
                }
            }
            let e = r - y[l.controlled];
            let candidate = integral[li] + l.ki * e;
            let mut cmd = l.kp * e + candidate;
            let mut saturated = false;
            if let Some((lo, hi)) = l.limits {
                if cmd > hi || cmd < lo {
                    cmd = cmd.clamp(lo, hi);
                    saturated = true;
                }
            }
            if !saturated {
                integral[li] = candidate;
            }
            u[l.input] = cmd;
        }
        for j in 0..nu {
            valve[j] = u[j];
            if let Some(f @ FaultSpec { target: FaultTarget::Actuator(a), .. }) = fault {
                if *a == j {
                    valve[j] = apply_fault(valve[j], k, f, &mut fault_state);
                }
            }
        }
        let mut gains = vec![1.0; nu];
        if let Some(f @ FaultSpec { target: FaultTarget::ProcessGain(j), .. }) = fault {
            gains[*j] = apply_fault(1.0, k, f, &mut fault_state);
        }

        let row = data.row_mut(k);
        for i in 0..ny {
            row[i] = y[i] + plant.output_nominal[i];
        }
        for j in 0..nu {
            row[ny + j] = u[j] + plant.input_nominal[j];
        }
        if let Some(f) = fault {
            if k >= f.onset {
                labels[k] = class;
            }
        }

        let mut next = vec![0.0; n];
        plant.a.matvec_acc(&x, &mut next);
        let gv: Vec<f64> = valve.iter().zip(&gains).map(|(v, g)| v * g).collect();
        plant.b.matvec_acc(&gv, &mut next);
        for (xi, d) in next.iter_mut().zip(&process) {
            *xi += d.sample(&mut rng);
        }
        if let Some(f @ FaultSpec { target: FaultTarget::Disturbance(i), .. }) = fault {
            next[*i] = apply_fault(next[*i], k, f, &mut fault_state);
        }
        x = next;
    }
    Ok(ScenarioDataset {
        data,
        labels,
        class,
        fault: fault.copied(),
        prbs: prbs.cloned(),
        seed: plant.seed,
    })
}

/// A named class of the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub class: usize,
    pub name: String,
    /// `None` for normal operation. Onset is overridden per run.
    pub fault: Option<FaultSpec>,
}

/// Normal operation plus 12 faults; classes 3, 9 and 12 act on the gain or
/// valve of loop `sp2` and are the low signal-to-noise (incipient) analogs.
pub fn default_scenarios() -> Vec<Scenario> {
    use FaultKind::*;
    use FaultTarget::*;
    let f = |kind, target, magnitude| Some(FaultSpec::new(kind, target, magnitude, 0));
    let list = [
        ("normal", None),
        ("state0-step", f(Step, Disturbance(0), 0.15)),
        ("state4-step", f(Step, Disturbance(4), 0.08)),
        ("gain2-step", f(Step, ProcessGain(1), -0.6)),
        ("sensor4-bias", f(Step, Sensor(4), 0.3)),
        ("sensor0-bias", f(Step, Sensor(0), 0.6)),
        ("state3-noise", f(RandomVariation, Disturbance(3), 0.4)),
        ("state2-drift", f(SlowDrift, Disturbance(2), 0.002)),
        ("valve1-offset", f(Step, Actuator(0), 0.4)),
        ("gain2-noise", f(RandomVariation, ProcessGain(1), 0.8)),
        ("sensor5-noise", f(RandomVariation, Sensor(5), 0.8)),
        ("state5-step", f(Step, Disturbance(5), 0.3)),
        ("valve2-stiction", f(Stiction, Actuator(1), 0.15)),
    ];
    list.into_iter()
        .enumerate()
        .map(|(class, (name, fault))| Scenario {
            class,
            name: name.to_string(),
            fault,
        })
        .collect()
}

/// Default incipient-analog classes of [`default_scenarios`].
pub const DEFAULT_INCIPIENT: [usize; 3] = [3, 9, 12];

/// Per-channel `sqrt(Δμ² + Δσ²) / σ_normal` between a fault record and a
/// normal record.
pub fn channel_snr(normal: &Tensor2, faulty: &Tensor2) -> Result<Vec<f64>> {
    if normal.cols() != faulty.cols() {
        return Err(FddError::dim("records differ in width"));
    }
    let stats = |m: &Tensor2, j: usize| {
        let n = m.rows() as f64;
        let mean = (0..m.rows()).map(|i| m.get(i, j)).sum::<f64>() / n;
        let var = (0..m.rows()).map(|i| (m.get(i, j) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    Ok((0..normal.cols())
        .map(|j| {
            let (m0, s0) = stats(normal, j);
            let (m1, s1) = stats(faulty, j);
            ((m1 - m0).powi(2) + (s1 - s0).powi(2)).sqrt() / s0
        })
        .collect())
}

/// Mixes a base seed with two indices into a run seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(a.wrapping_mul(0x1_0000_0001).wrapping_add(b));
    rng.random()
}
