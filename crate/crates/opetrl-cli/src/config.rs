//! Line-based `key = value` configuration files.
//!
//! The format is one assignment per line with `#` starting comments. Two
//! fields are stored in decibel units and converted on load: `noise_dbm`
//! (receiver noise power, dBm) and `ref_gain_db` (channel power at the
//! reference distance, dB). Everything else is linear SI.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use opetrl_core::power::SaaFormula;
use opetrl_core::sim::{Policy, SimConfig};

/// A run configuration plus the training-episode budget, which only the
/// `train` subcommand consumes.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub sim: SimConfig,
    pub train_episodes: u32,
    /// Raw-data sizes cycled across training episodes (an experiment knob;
    /// empty trains at the configured size). The agent's normalized state
    /// cannot observe the absolute size, so cycling trades per-size
    /// specialization for coverage.
    pub train_raw_bits_cycle: Vec<f64>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            sim: SimConfig::default(),
            train_episodes: 200,
            train_raw_bits_cycle: Vec::new(),
        }
    }
}

fn db_to_linear(db: f64) -> f64 {
    10.0_f64.powf(db / 10.0)
}

fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10.0_f64.powf((dbm - 30.0) / 10.0)
}

fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

impl AppConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let sys = &mut self.sim.system;
        let parse_f64 = || -> Result<f64> {
            value.parse::<f64>().map_err(|_| anyhow!("`{key}` expects a number, got `{value}`"))
        };
        let parse_u32 = || -> Result<u32> {
            // Accept scientific notation for counts as well.
            let v = value
                .parse::<f64>()
                .map_err(|_| anyhow!("`{key}` expects a count, got `{value}`"))?;
            if v < 0.0 || v.fract() != 0.0 {
                bail!("`{key}` expects a non-negative integer, got `{value}`");
            }
            Ok(v as u32)
        };
        match key {
            // Channel and link.
            "bandwidth_hz" => sys.bandwidth_hz = parse_f64()?,
            "slot_s" => sys.slot_s = parse_f64()?,
            "distance_m" => sys.distance_m = parse_f64()?,
            "noise_dbm" => sys.noise_w = dbm_to_watts(parse_f64()?),
            "ref_gain_db" => sys.ref_gain = db_to_linear(parse_f64()?),
            "p_max_w" => sys.p_max_w = parse_f64()?,
            // Tasks and traffic.
            "deadline_slots" => sys.deadline_slots = parse_u32()?,
            "raw_bits" => sys.raw_bits = parse_f64()?,
            "feat_h" => sys.feat_h = parse_u32()?,
            "feat_w" => sys.feat_w = parse_u32()?,
            "quant_bits" => sys.quant_bits = parse_u32()?,
            "arrival_prob" => sys.arrival_prob = parse_f64()?,
            // Battery and solar.
            "batt_cap_j" => sys.batt_cap_j = parse_f64()?,
            "batt_init_j" => sys.batt_init_j = parse_f64()?,
            "solar_eff" => sys.solar_eff = parse_f64()?,
            "panel_area_m2" => sys.panel_area_m2 = parse_f64()?,
            "irradiance_wm2" => sys.irradiance_wm2 = parse_f64()?,
            "absorb_per_m" => sys.absorb_per_m = parse_f64()?,
            "cloud_thickness_m" => sys.cloud_thickness_m = parse_f64()?,
            // Compute.
            "chip_k" => sys.chip_k = parse_f64()?,
            "f_max_hz" => sys.f_max_hz = parse_f64()?,
            "flops" => sys.flops = parse_f64()?,
            "cores" => sys.cores = parse_u32()?,
            "vec_bits" => sys.vec_bits = parse_u32()?,
            "os_bits" => sys.os_bits = parse_u32()?,
            // Chance constraint.
            "saa_epsilon" => self.sim.saa.epsilon = parse_f64()?,
            "saa_theta" => self.sim.saa.theta = parse_f64()?,
            "saa_k" => {
                let k = parse_u32()?;
                self.sim.saa.k_samples = if k == 0 { None } else { Some(k as usize) };
            }
            "saa_formula" => {
                self.sim.saa.formula = match value {
                    "printed" => SaaFormula::Printed,
                    "corrected" => SaaFormula::Corrected,
                    other => bail!("unknown saa_formula `{other}` (printed|corrected)"),
                }
            }
            // Agent.
            "learn_rate" => self.sim.agent.learn_rate = parse_f64()?,
            "discount" => self.sim.agent.discount = parse_f64()?,
            "eps_start" => self.sim.agent.eps_start = parse_f64()?,
            "eps_end" => self.sim.agent.eps_end = parse_f64()?,
            "eps_decay_frac" => self.sim.agent.eps_decay_frac = parse_f64()?,
            "minibatch" => self.sim.agent.minibatch = parse_u32()? as usize,
            "target_sync" => self.sim.agent.target_sync_every = parse_u32()?,
            "deadline_penalty_j" => self.sim.agent.deadline_penalty_j = parse_f64()?,
            "success_bonus_j" => self.sim.agent.success_bonus_j = parse_f64()?,
            "max_tasks" => self.sim.agent.max_tasks = parse_u32()? as usize,
            "reward_unit_j" => self.sim.agent.reward_unit_j = parse_f64()?,
            // Run shape.
            "horizon_slots" => self.sim.horizon_slots = parse_u32()?,
            "episodes" => self.sim.episodes = parse_u32()?,
            "train_episodes" => self.train_episodes = parse_u32()?,
            "train_raw_bits_cycle" => {
                let mut cycle = Vec::new();
                for part in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    cycle.push(
                        part.parse::<f64>()
                            .map_err(|_| anyhow!("`{key}` expects numbers, got `{part}`"))?,
                    );
                }
                self.train_raw_bits_cycle = cycle;
            }
            "policy" => {
                self.sim.policy =
                    Policy::parse(value).ok_or_else(|| anyhow!("unknown policy `{value}`"))?
            }
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    /// Parses the text form, starting from defaults.
    pub fn from_text(text: &str) -> Result<AppConfig> {
        let mut cfg = AppConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", lineno + 1))?;
        }
        cfg.sim.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        AppConfig::from_text(&text)
            .with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies `key=value` override strings (the `--set` flag).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for kv in overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{kv}` is not of the form key=value"))?;
            self.set(key.trim(), value.trim())?;
        }
        self.sim.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(())
    }

    /// Renders the full configuration as the text format.
    pub fn to_text(&self) -> String {
        let sys = &self.sim.system;
        let mut s = String::new();
        let _ = writeln!(s, "# UAV split-inference simulator configuration.");
        let _ = writeln!(s, "# One `key = value` per line; `#` starts a comment.");
        let _ = writeln!(s, "# noise_dbm is in dBm and ref_gain_db in dB; both are");
        let _ = writeln!(s, "# converted to linear units on load.");
        let _ = writeln!(s);
        let _ = writeln!(s, "# Channel and link");
        let _ = writeln!(s, "bandwidth_hz = {}", sys.bandwidth_hz);
        let _ = writeln!(s, "slot_s = {}", sys.slot_s);
        let _ = writeln!(s, "distance_m = {}", sys.distance_m);
        let _ = writeln!(s, "noise_dbm = {}", watts_to_dbm(sys.noise_w));
        let _ = writeln!(s, "ref_gain_db = {}", linear_to_db(sys.ref_gain));
        let _ = writeln!(s, "p_max_w = {}", sys.p_max_w);
        let _ = writeln!(s);
        let _ = writeln!(s, "# Tasks and traffic");
        let _ = writeln!(s, "deadline_slots = {}", sys.deadline_slots);
        let _ = writeln!(s, "raw_bits = {}", sys.raw_bits);
        let _ = writeln!(s, "feat_h = {}", sys.feat_h);
        let _ = writeln!(s, "feat_w = {}", sys.feat_w);
        let _ = writeln!(s, "quant_bits = {}", sys.quant_bits);
        let _ = writeln!(s, "arrival_prob = {}", sys.arrival_prob);
        let _ = writeln!(s);
        let _ = writeln!(s, "# Battery and solar harvesting");
        let _ = writeln!(s, "batt_cap_j = {}", sys.batt_cap_j);
        let _ = writeln!(s, "batt_init_j = {}", sys.batt_init_j);
        let _ = writeln!(s, "solar_eff = {}", sys.solar_eff);
        let _ = writeln!(s, "panel_area_m2 = {}", sys.panel_area_m2);
        let _ = writeln!(s, "irradiance_wm2 = {}", sys.irradiance_wm2);
        let _ = writeln!(s, "absorb_per_m = {}", sys.absorb_per_m);
        let _ = writeln!(s, "cloud_thickness_m = {}", sys.cloud_thickness_m);
        let _ = writeln!(s);
        let _ = writeln!(s, "# Device compute");
        let _ = writeln!(s, "chip_k = {}", sys.chip_k);
        let _ = writeln!(s, "f_max_hz = {}", sys.f_max_hz);
        let _ = writeln!(s, "flops = {}", sys.flops);
        let _ = writeln!(s, "cores = {}", sys.cores);
        let _ = writeln!(s, "vec_bits = {}", sys.vec_bits);
        let _ = writeln!(s, "os_bits = {}", sys.os_bits);
        let _ = writeln!(s);
        let _ = writeln!(s, "# Chance constraint (sample average approximation)");
        let _ = writeln!(s, "saa_epsilon = {}", self.sim.saa.epsilon);
        let _ = writeln!(s, "saa_theta = {}", self.sim.saa.theta);
        let _ = writeln!(s, "saa_k = {}  # 0 sizes K from the bound", self.sim.saa.k_samples.unwrap_or(0));
        let formula = match self.sim.saa.formula {
            SaaFormula::Printed => "printed",
            SaaFormula::Corrected => "corrected",
        };
        let _ = writeln!(s, "saa_formula = {formula}");
        let _ = writeln!(s);
        let _ = writeln!(s, "# Mode-selection agent");
        let _ = writeln!(s, "learn_rate = {}", self.sim.agent.learn_rate);
        let _ = writeln!(s, "discount = {}", self.sim.agent.discount);
        let _ = writeln!(s, "eps_start = {}", self.sim.agent.eps_start);
        let _ = writeln!(s, "eps_end = {}", self.sim.agent.eps_end);
        let _ = writeln!(s, "eps_decay_frac = {}", self.sim.agent.eps_decay_frac);
        let _ = writeln!(s, "minibatch = {}", self.sim.agent.minibatch);
        let _ = writeln!(s, "target_sync = {}", self.sim.agent.target_sync_every);
        let _ = writeln!(s, "deadline_penalty_j = {}  # 0 derives 10x a full-window cap-power send", self.sim.agent.deadline_penalty_j);
        let _ = writeln!(s, "success_bonus_j = {}", self.sim.agent.success_bonus_j);
        let _ = writeln!(s, "max_tasks = {}", self.sim.agent.max_tasks);
        let _ = writeln!(s, "reward_unit_j = {}  # 0 derives one full-window cap-power send", self.sim.agent.reward_unit_j);
        let _ = writeln!(s);
        let _ = writeln!(s, "# Run shape");
        let _ = writeln!(s, "horizon_slots = {}", self.sim.horizon_slots);
        let _ = writeln!(s, "episodes = {}", self.sim.episodes);
        let _ = writeln!(s, "train_episodes = {}", self.train_episodes);
        let cycle: Vec<String> =
            self.train_raw_bits_cycle.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            s,
            "train_raw_bits_cycle = {}  # sizes cycled while training; empty disables",
            cycle.join(",")
        );
        let _ = writeln!(s, "policy = {}", self.sim.policy.name());
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .with_context(|| format!("writing config {}", path.display()))
    }
}
