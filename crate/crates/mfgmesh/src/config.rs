//! Experiment configuration: a flat `key = value` text format with `#`
//! comments, chosen so any language can parse it. Unset keys take the
//! standard experiment defaults; two defaults depend on other keys
//! (`nu` follows `L`, `exploitability_every` follows `obs_mode`).

use crate::env::{GridConfig, ObservationMode, TaskKind};
use crate::learner::{ArchitectureKind, Hyper, RewardSource};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`, got `{1}`")]
    BadLine(usize, String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` appears more than once")]
    DuplicateKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

/// A fully resolved experiment description. Field names are exactly the
/// config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub n_agents: usize,
    pub task: TaskKind,
    pub architecture: ArchitectureKind,
    pub obs_mode: ObservationMode,
    pub comm_radius_fraction: f64,
    pub vis_radius_fraction: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "C_p")]
    pub c_p: usize,
    #[serde(rename = "C_e")]
    pub c_e: usize,
    pub gamma: f64,
    pub tau_q: f64,
    pub cl: f64,
    pub batch_size: usize,
    pub adam_lr: f64,
    pub nu: usize,
    pub tau_comm_start: f64,
    pub tau_comm_end: f64,
    /// Run the exploitability probe every this many iterations; 0 turns
    /// the probe off entirely.
    pub exploitability_every: usize,
}

const KEYS: &[&str] = &[
    "seed",
    "trials",
    "grid_width",
    "grid_height",
    "n_agents",
    "task",
    "architecture",
    "obs_mode",
    "comm_radius_fraction",
    "vis_radius_fraction",
    "K",
    "M",
    "L",
    "E",
    "C_p",
    "C_e",
    "gamma",
    "tau_q",
    "cl",
    "batch_size",
    "adam_lr",
    "nu",
    "tau_comm_start",
    "tau_comm_end",
    "exploitability_every",
];

fn parse_num<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn task_from_str(key: &str, value: &str) -> Result<TaskKind, ConfigError> {
    Ok(match value {
        "cluster" => TaskKind::Cluster,
        "target_agreement" => TaskKind::TargetAgreement,
        "evade_shark" => TaskKind::EvadeShark,
        "push_object" => TaskKind::PushObject,
        "disperse" => TaskKind::Disperse,
        _ => {
            return Err(ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                expected:
                    "one of cluster, target_agreement, evade_shark, push_object, disperse",
            })
        }
    })
}

fn task_to_str(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Cluster => "cluster",
        TaskKind::TargetAgreement => "target_agreement",
        TaskKind::EvadeShark => "evade_shark",
        TaskKind::PushObject => "push_object",
        TaskKind::Disperse => "disperse",
    }
}

fn architecture_from_str(key: &str, value: &str) -> Result<ArchitectureKind, ConfigError> {
    Ok(match value {
        "networked" => ArchitectureKind::Networked,
        "centralised" => ArchitectureKind::Centralised,
        "independent" => ArchitectureKind::Independent,
        _ => {
            return Err(ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                expected: "one of networked, centralised, independent",
            })
        }
    })
}

fn architecture_to_str(a: ArchitectureKind) -> &'static str {
    match a {
        ArchitectureKind::Networked => "networked",
        ArchitectureKind::Centralised => "centralised",
        ArchitectureKind::Independent => "independent",
    }
}

fn obs_mode_from_str(key: &str, value: &str) -> Result<ObservationMode, ConfigError> {
    Ok(match value {
        "local_only" => ObservationMode::LocalOnly,
        "global_mean_field" => ObservationMode::GlobalMeanField,
        "estimated_mean_field" => ObservationMode::EstimatedMeanField,
        _ => {
            return Err(ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                expected: "one of local_only, global_mean_field, estimated_mean_field",
            })
        }
    })
}

fn obs_mode_to_str(m: ObservationMode) -> &'static str {
    match m {
        ObservationMode::LocalOnly => "local_only",
        ObservationMode::GlobalMeanField => "global_mean_field",
        ObservationMode::EstimatedMeanField => "estimated_mean_field",
    }
}

impl ExperimentConfig {
    /// Parses the `key = value` format. Every key is optional; order is
    /// free; `#` starts a comment anywhere on a line.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut seen: Vec<(String, String)> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(idx + 1, raw_line.trim().to_string()));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key));
            }
            if seen.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::DuplicateKey(key));
            }
            seen.push((key, value));
        }

        let mut cfg = ExperimentConfig::table_defaults();
        let mut nu_set = false;
        let mut explo_set = false;
        for (key, value) in &seen {
            let (key, v) = (key.as_str(), value.as_str());
            match key {
                "seed" => cfg.seed = parse_num(key, v, "an unsigned integer")?,
                "trials" => cfg.trials = parse_num(key, v, "an unsigned integer")?,
                "grid_width" => cfg.grid_width = parse_num(key, v, "an unsigned integer")?,
                "grid_height" => cfg.grid_height = parse_num(key, v, "an unsigned integer")?,
                "n_agents" => cfg.n_agents = parse_num(key, v, "an unsigned integer")?,
                "task" => cfg.task = task_from_str(key, v)?,
                "architecture" => cfg.architecture = architecture_from_str(key, v)?,
                "obs_mode" => cfg.obs_mode = obs_mode_from_str(key, v)?,
                "comm_radius_fraction" => {
                    cfg.comm_radius_fraction = parse_num(key, v, "a number")?
                }
                "vis_radius_fraction" => cfg.vis_radius_fraction = parse_num(key, v, "a number")?,
                "K" => cfg.k = parse_num(key, v, "an unsigned integer")?,
                "M" => cfg.m = parse_num(key, v, "an unsigned integer")?,
                "L" => cfg.l = parse_num(key, v, "an unsigned integer")?,
                "E" => cfg.e = parse_num(key, v, "an unsigned integer")?,
                "C_p" => cfg.c_p = parse_num(key, v, "an unsigned integer")?,
                "C_e" => cfg.c_e = parse_num(key, v, "an unsigned integer")?,
                "gamma" => cfg.gamma = parse_num(key, v, "a number")?,
                "tau_q" => cfg.tau_q = parse_num(key, v, "a number")?,
                "cl" => cfg.cl = parse_num(key, v, "a number")?,
                "batch_size" => cfg.batch_size = parse_num(key, v, "an unsigned integer")?,
                "adam_lr" => cfg.adam_lr = parse_num(key, v, "a number")?,
                "nu" => {
                    cfg.nu = parse_num(key, v, "an unsigned integer")?;
                    nu_set = true;
                }
                "tau_comm_start" => cfg.tau_comm_start = parse_num(key, v, "a number")?,
                "tau_comm_end" => cfg.tau_comm_end = parse_num(key, v, "a number")?,
                "exploitability_every" => {
                    cfg.exploitability_every = parse_num(key, v, "an unsigned integer")?;
                    explo_set = true;
                }
                _ => unreachable!("key membership checked above"),
            }
        }
        if !nu_set {
            cfg.nu = if cfg.l >= 2 { cfg.l - 1 } else { 1 };
        }
        if !explo_set {
            cfg.exploitability_every = if cfg.obs_mode.population_dependent() { 4 } else { 2 };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The standard experiment values before dependent defaults resolve.
    fn table_defaults() -> ExperimentConfig {
        ExperimentConfig {
            seed: 0,
            trials: 10,
            grid_width: 10,
            grid_height: 10,
            n_agents: 500,
            task: TaskKind::Cluster,
            architecture: ArchitectureKind::Networked,
            obs_mode: ObservationMode::LocalOnly,
            comm_radius_fraction: 0.5,
            vis_radius_fraction: 0.5,
            k: 100,
            m: 50,
            l: 50,
            e: 20,
            c_p: 1,
            c_e: 1,
            gamma: 0.9,
            tau_q: 0.03,
            cl: -1.0,
            batch_size: 32,
            adam_lr: 0.01,
            nu: 49,
            tau_comm_start: 0.001,
            tau_comm_end: 1.0,
            exploitability_every: 2,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| {
            Err(ConfigError::Invalid { key: key.to_string(), message })
        };
        if self.k == 0 {
            return bad("K", "at least one iteration is required".into());
        }
        if self.m == 0 {
            return bad("M", "collection needs at least one step per iteration".into());
        }
        if self.trials == 0 {
            return bad("trials", "at least one trial is required".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "batches cannot be empty".into());
        }
        if self.nu == 0 {
            return bad("nu", "the target-sync period must be at least 1".into());
        }
        if self.grid_width < 2 || self.grid_height < 2 {
            return bad("grid_width", "the grid must be at least 2 x 2".into());
        }
        if self.n_agents == 0 {
            return bad("n_agents", "the population cannot be empty".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", format!("{} is outside (0,1)", self.gamma));
        }
        if self.tau_q <= 0.0 {
            return bad("tau_q", format!("{} must be positive", self.tau_q));
        }
        if self.cl >= 0.0 {
            return bad("cl", format!("{} must be negative", self.cl));
        }
        if !(0.0..=1.0).contains(&self.comm_radius_fraction) {
            return bad(
                "comm_radius_fraction",
                format!("{} is outside [0,1]", self.comm_radius_fraction),
            );
        }
        if !(0.0..=1.0).contains(&self.vis_radius_fraction) {
            return bad(
                "vis_radius_fraction",
                format!("{} is outside [0,1]", self.vis_radius_fraction),
            );
        }
        if self.tau_comm_start <= 0.0 || self.tau_comm_end <= 0.0 {
            return bad("tau_comm_start", "adoption temperatures must be positive".into());
        }
        if self.architecture == ArchitectureKind::Centralised
            && self.obs_mode == ObservationMode::EstimatedMeanField
        {
            return bad(
                "obs_mode",
                "centralised runs always observe the exact distribution; use \
                 global_mean_field or local_only"
                    .into(),
            );
        }
        Ok(())
    }

    /// Canonical `key = value` text. Parsing it back yields `self`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("trials", self.trials.to_string());
        push("grid_width", self.grid_width.to_string());
        push("grid_height", self.grid_height.to_string());
        push("n_agents", self.n_agents.to_string());
        push("task", task_to_str(self.task).to_string());
        push("architecture", architecture_to_str(self.architecture).to_string());
        push("obs_mode", obs_mode_to_str(self.obs_mode).to_string());
        push("comm_radius_fraction", self.comm_radius_fraction.to_string());
        push("vis_radius_fraction", self.vis_radius_fraction.to_string());
        push("K", self.k.to_string());
        push("M", self.m.to_string());
        push("L", self.l.to_string());
        push("E", self.e.to_string());
        push("C_p", self.c_p.to_string());
        push("C_e", self.c_e.to_string());
        push("gamma", self.gamma.to_string());
        push("tau_q", self.tau_q.to_string());
        push("cl", self.cl.to_string());
        push("batch_size", self.batch_size.to_string());
        push("adam_lr", self.adam_lr.to_string());
        push("nu", self.nu.to_string());
        push("tau_comm_start", self.tau_comm_start.to_string());
        push("tau_comm_end", self.tau_comm_end.to_string());
        push("exploitability_every", self.exploitability_every.to_string());
        out
    }

    pub fn grid_config(&self) -> Result<GridConfig, ConfigError> {
        GridConfig::new(self.grid_width, self.grid_height, self.task, self.n_agents).map_err(
            |e| ConfigError::Invalid { key: "grid_width".to_string(), message: e.to_string() },
        )
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            architecture: self.architecture,
            obs_mode: self.obs_mode,
            comm_radius_fraction: self.comm_radius_fraction,
            vis_radius_fraction: self.vis_radius_fraction,
            k_iters: self.k,
            m_steps: self.m,
            l_steps: self.l,
            e_steps: self.e,
            c_p: self.c_p,
            c_e: self.c_e,
            gamma: self.gamma,
            tau_q: self.tau_q,
            cl: self.cl,
            batch_size: self.batch_size,
            adam_lr: self.adam_lr,
            nu: self.nu,
            tau_comm_start: self.tau_comm_start,
            tau_comm_end: self.tau_comm_end,
            reward_source: RewardSource::Task,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_full_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg.k, 100);
        assert_eq!(cfg.m, 50);
        assert_eq!(cfg.l, 50);
        assert_eq!(cfg.e, 20);
        assert_eq!(cfg.c_p, 1);
        assert_eq!(cfg.c_e, 1);
        assert_eq!(cfg.gamma, 0.9);
        assert_eq!(cfg.tau_q, 0.03);
        assert_eq!(cfg.cl, -1.0);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.adam_lr, 0.01);
        assert_eq!(cfg.nu, 49);
        assert_eq!(cfg.tau_comm_start, 0.001);
        assert_eq!(cfg.tau_comm_end, 1.0);
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.n_agents, 500);
        assert_eq!((cfg.grid_width, cfg.grid_height), (10, 10));
        assert_eq!(cfg.task, TaskKind::Cluster);
        assert_eq!(cfg.architecture, ArchitectureKind::Networked);
        assert_eq!(cfg.obs_mode, ObservationMode::LocalOnly);
        assert_eq!(cfg.exploitability_every, 2);
    }

    #[test]
    fn comments_whitespace_and_order_are_free() {
        let text = "
            # a comment line
            trials = 2   # trailing comment
            K=7

            task =  disperse
        ";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.k, 7);
        assert_eq!(cfg.task, TaskKind::Disperse);
    }

    #[test]
    fn unknown_key_error_names_the_key() {
        let err = ExperimentConfig::parse("taq_q = 0.03").unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey(k) if k == "taq_q"));
        assert!(err.to_string().contains("taq_q"));
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        let err = ExperimentConfig::parse("K = 5\nK = 6").unwrap_err();
        assert!(matches!(&err, ConfigError::DuplicateKey(k) if k == "K"));
        let err = ExperimentConfig::parse("just words").unwrap_err();
        assert!(matches!(err, ConfigError::BadLine(1, _)));
        let err = ExperimentConfig::parse("K = five").unwrap_err();
        assert!(matches!(&err, ConfigError::BadValue { key, .. } if key == "K"));
    }

    #[test]
    fn zero_iterations_fail_validation() {
        let err = ExperimentConfig::parse("K = 0").unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "K"));
    }

    #[test]
    fn dependent_defaults_follow_their_sources() {
        let cfg = ExperimentConfig::parse("L = 10").unwrap();
        assert_eq!(cfg.nu, 9);
        let cfg = ExperimentConfig::parse("L = 1").unwrap();
        assert_eq!(cfg.nu, 1);
        let cfg = ExperimentConfig::parse("L = 10\nnu = 3").unwrap();
        assert_eq!(cfg.nu, 3);
        let cfg = ExperimentConfig::parse("obs_mode = global_mean_field").unwrap();
        assert_eq!(cfg.exploitability_every, 4);
        let cfg = ExperimentConfig::parse("obs_mode = estimated_mean_field").unwrap();
        assert_eq!(cfg.exploitability_every, 4);
        let cfg = ExperimentConfig::parse("obs_mode = local_only").unwrap();
        assert_eq!(cfg.exploitability_every, 2);
        let cfg =
            ExperimentConfig::parse("obs_mode = global_mean_field\nexploitability_every = 0")
                .unwrap();
        assert_eq!(cfg.exploitability_every, 0);
    }

    #[test]
    fn centralised_with_estimates_is_rejected() {
        let err = ExperimentConfig::parse(
            "architecture = centralised\nobs_mode = estimated_mean_field",
        )
        .unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "obs_mode"));
    }

    #[test]
    fn range_checks_name_the_key() {
        for (text, key) in [
            ("gamma = 1.5", "gamma"),
            ("tau_q = 0", "tau_q"),
            ("cl = 0.5", "cl"),
            ("comm_radius_fraction = 1.2", "comm_radius_fraction"),
            ("vis_radius_fraction = -0.1", "vis_radius_fraction"),
            ("M = 0", "M"),
            ("trials = 0", "trials"),
            ("batch_size = 0", "batch_size"),
            ("nu = 0", "nu"),
            ("n_agents = 0", "n_agents"),
            ("grid_width = 1", "grid_width"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            match err {
                ConfigError::Invalid { key: k, .. } => assert_eq!(k, key, "for `{text}`"),
                other => panic!("expected Invalid for `{text}`, got {other:?}"),
            }
        }
    }

    #[test]
    fn echo_round_trips_exactly() {
        let texts = [
            "",
            "task = evade_shark\nobs_mode = estimated_mean_field\nn_agents = 32",
            "architecture = independent\nL = 7\ngamma = 0.95\nseed = 42",
        ];
        for text in texts {
            let cfg = ExperimentConfig::parse(text).unwrap();
            let again = ExperimentConfig::parse(&cfg.echo()).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn derived_structs_mirror_the_fields() {
        let cfg = ExperimentConfig::parse(
            "task = push_object\nn_agents = 6\ngrid_width = 4\ngrid_height = 5\nL = 9",
        )
        .unwrap();
        let grid = cfg.grid_config().unwrap();
        assert_eq!((grid.width, grid.height), (4, 5));
        assert_eq!(grid.task, TaskKind::PushObject);
        let hyper = cfg.hyper();
        assert_eq!(hyper.l_steps, 9);
        assert_eq!(hyper.nu, 8);
        assert_eq!(hyper.reward_source, RewardSource::Task);
    }
}
