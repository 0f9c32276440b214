//! Run configuration: flat `key = value` lines, `#` comments, unknown keys
//! rejected.
//!
//! ```text
//! hop_s = 0.064
//! classes = Alarm_bell_ringing,Blender,Cat
//! threshold_count = 50
//! psds1.rho_dtc = 0.7
//! loss.lambda_l1 = 5
//! window.search_max = 500
//! ```

use crate::assignment::LossWeights;
use crate::postproc::WindowSearch;
use crate::psds::{default_thresholds, PsdsParams};
use crate::{Error, Result};

/// Which PSDS preset (and matching fusion weight set) a run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Profile {
    Psds1,
    Psds2,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Psds1 => "psds1",
            Profile::Psds2 => "psds2",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psds1" => Ok(Profile::Psds1),
            "psds2" => Ok(Profile::Psds2),
            other => Err(Error::invalid("profile", format!("`{other}` (expected psds1 or psds2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Frame hop shared by every score grid.
    pub hop_s: Option<f64>,
    /// Class vocabulary; defaults to the sorted ground-truth labels.
    pub classes: Option<Vec<String>>,
    pub thresholds: Vec<f64>,
    pub psds1: PsdsParams,
    pub psds2: PsdsParams,
    pub loss: LossWeights,
    pub window: WindowSearch,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            hop_s: None,
            classes: None,
            thresholds: default_thresholds(50),
            psds1: PsdsParams::psds1(),
            psds2: PsdsParams::psds2(),
            loss: LossWeights::default(),
            window: WindowSearch::default(),
        }
    }
}

impl Config {
    pub fn params(&self, profile: Profile) -> &PsdsParams {
        match profile {
            Profile::Psds1 => &self.psds1,
            Profile::Psds2 => &self.psds2,
        }
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, line, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(source_name, line, format!("duplicate key `{key}`")));
            }
            cfg.set(key, value)
                .map_err(|msg| Error::parse(source_name, line, msg))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.hop_s {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid("config", "hop_s must be positive"));
            }
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::invalid("config", "thresholds must be non-empty and in (0, 1)"));
        }
        self.psds1.validate()?;
        self.psds2.validate()?;
        self.loss.validate()?;
        if self.window.search_max == 0 {
            return Err(Error::invalid("config", "window.search_max must be >= 1"));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let num = || value.parse::<f64>().map_err(|_| format!("`{value}` is not a number"));
        match key {
            "hop_s" => self.hop_s = Some(num()?),
            "classes" => {
                self.classes = Some(value.split(',').map(|s| s.trim().to_string()).collect())
            }
            "thresholds" => {
                self.thresholds = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
                    .collect::<std::result::Result<_, _>>()?
            }
            "threshold_count" => {
                let n: usize = value.parse().map_err(|_| format!("`{value}` is not a count"))?;
                self.thresholds = default_thresholds(n);
            }
            "loss.lambda_iou" => self.loss.lambda_iou = num()?,
            "loss.lambda_l1" => self.loss.lambda_l1 = num()?,
            "loss.cost_class_weight" => self.loss.cost_class_weight = num()?,
            "loss.no_object_weight" => self.loss.no_object_weight = num()?,
            "window.search_max" => {
                self.window.search_max = value.parse().map_err(|_| format!("`{value}` is not a count"))?
            }
            "window.tune_mean" => {
                self.window.tune_mean = value.parse().map_err(|_| format!("`{value}` is not true/false"))?
            }
            _ => {
                let (profile, field) = key
                    .split_once('.')
                    .ok_or_else(|| format!("unknown key `{key}`"))?;
                let params = match profile {
                    "psds1" => &mut self.psds1,
                    "psds2" => &mut self.psds2,
                    _ => return Err(format!("unknown key `{key}`")),
                };
                let v = num()?;
                match field {
                    "rho_dtc" => params.rho_dtc = v,
                    "rho_gtc" => params.rho_gtc = v,
                    "rho_cttc" => params.rho_cttc = v,
                    "alpha_ct" => params.alpha_ct = v,
                    "alpha_st" => params.alpha_st = v,
                    "e_max" => params.e_max = v,
                    _ => return Err(format!("unknown key `{key}`")),
                }
            }
        }
        Ok(())
    }

    /// Canonical text form listing every key; parsing it yields `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(h) = self.hop_s {
            out.push_str(&format!("hop_s = {h}\n"));
        }
        if let Some(c) = &self.classes {
            out.push_str(&format!("classes = {}\n", c.join(",")));
        }
        let th: Vec<String> = self.thresholds.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("thresholds = {}\n", th.join(",")));
        for (name, p) in [("psds1", &self.psds1), ("psds2", &self.psds2)] {
            out.push_str(&format!("{name}.rho_dtc = {}\n", p.rho_dtc));
            out.push_str(&format!("{name}.rho_gtc = {}\n", p.rho_gtc));
            out.push_str(&format!("{name}.rho_cttc = {}\n", p.rho_cttc));
            out.push_str(&format!("{name}.alpha_ct = {}\n", p.alpha_ct));
            out.push_str(&format!("{name}.alpha_st = {}\n", p.alpha_st));
            out.push_str(&format!("{name}.e_max = {}\n", p.e_max));
        }
        out.push_str(&format!("loss.lambda_iou = {}\n", self.loss.lambda_iou));
        out.push_str(&format!("loss.lambda_l1 = {}\n", self.loss.lambda_l1));
        out.push_str(&format!("loss.cost_class_weight = {}\n", self.loss.cost_class_weight));
        out.push_str(&format!("loss.no_object_weight = {}\n", self.loss.no_object_weight));
        out.push_str(&format!("window.search_max = {}\n", self.window.search_max));
        out.push_str(&format!("window.tune_mean = {}\n", self.window.tune_mean));
        out
    }
}
