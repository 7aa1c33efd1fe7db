//! Plain-text scenario configuration: sectioned `key = value` files and
//! `--set` style key-path overrides.
//!
//! ```text
//! [system]
//! theta_d = 0.4
//!
//! [classes]          # one section per class, in order
//! r1 = 0.05
//! r2 = 0.0
//!
//! [classes]
//! r1 = 0.0
//! r2 = 0.0
//!
//! [profile.1]        # 1-based class index
//! kind = clipped_gaussian
//! mean = 4.0
//! std = 2.0
//!
//! [profile.2]
//! kind = constant
//! mean = 2.0
//!
//! [controller]
//! policy = robust_fair
//!
//! [sim]
//! t_end = 250
//! seed = 42
//! ```
//!
//! Unknown sections and keys are rejected with their line number; omitted
//! keys fall back to the module defaults. Override paths mirror the file
//! layout: `system.theta_d`, `classes.1.r1`, `profile.2.mean`, `sim.seed`.

use std::fmt;

use crate::controller::{ObjectiveForm, Policy};
use crate::model::{ClassParams, HiddenState, ModelError};
use crate::scalar::Real;
use crate::sim::{DemandProfile, Scenario, DEFAULT_SEED};

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (Some(line), Some(key)) => write!(f, "line {line}: {key}: {}", self.message),
            (Some(line), None) => write!(f, "line {line}: {}", self.message),
            (None, Some(key)) => write!(f, "{key}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<ModelError> for ConfigError {
    fn from(err: ModelError) -> Self {
        let key = match &err {
            ModelError::InvalidParam { key, .. } => Some(key.clone()),
            _ => None,
        };
        ConfigError {
            line: None,
            key,
            message: match err {
                ModelError::InvalidParam { message, .. } => message,
                other => other.to_string(),
            },
        }
    }
}

fn err_at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        key: None,
        message: message.into(),
    }
}

fn err_key(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        key: Some(key.to_string()),
        message: message.into(),
    }
}

#[derive(Debug)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

fn tokenize(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err_at(line_no, "unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(err_at(line_no, "empty section name"));
            }
            sections.push(Section {
                name: name.to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err_at(line_no, format!("expected `key = value`, got `{line}`")))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| err_at(line_no, "key outside of any [section]"))?;
        section
            .entries
            .push((key.trim().to_string(), value.trim().to_string(), line_no));
    }
    Ok(sections)
}

fn parse_real<R: Real>(key: &str, value: &str) -> Result<R, ConfigError> {
    let v: f64 = value
        .parse()
        .map_err(|_| err_key(key, format!("expected a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(err_key(key, format!("must be finite, got `{value}`")));
    }
    Ok(R::of(v))
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .parse()
        .map_err(|_| err_key(key, format!("expected an integer, got `{value}`")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value
        .parse()
        .map_err(|_| err_key(key, format!("expected an integer, got `{value}`")))
}

/// `a, b, c` list of numbers.
fn parse_real_list<R: Real>(key: &str, value: &str) -> Result<Vec<R>, ConfigError> {
    value
        .split(',')
        .map(|part| parse_real(key, part.trim()))
        .collect()
}

/// `t:v, t:v, ...` breakpoint list.
fn parse_breakpoints<R: Real>(key: &str, value: &str) -> Result<Vec<(R, R)>, ConfigError> {
    value
        .split(',')
        .map(|part| {
            let (t, m) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| err_key(key, format!("expected `time:mean`, got `{part}`")))?;
            Ok((parse_real(key, t.trim())?, parse_real(key, m.trim())?))
        })
        .collect()
}

fn apply_system_key<R: Real>(
    scn: &mut Scenario<R>,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let path = format!("system.{key}");
    let sp = &mut scn.sp;
    let slot = match key {
        "mu_star" => &mut sp.mu_star,
        "q_c" => &mut sp.q_c,
        "q_max" => &mut sp.q_max,
        "p_min" => &mut sp.p_min,
        "p_max" => &mut sp.p_max,
        "nu_max" => &mut sp.nu_max,
        "lambda1" => &mut sp.lambda1,
        "lambda2" => &mut sp.lambda2,
        "theta_d" => &mut sp.theta_d,
        "t_d" => &mut sp.t_d,
        "t_i" => &mut sp.t_i,
        "dt" => &mut sp.dt,
        _ => return Err(err_key(&path, "unknown key")),
    };
    *slot = parse_real(&path, value)?;
    Ok(())
}

fn apply_controller_key<R: Real>(
    scn: &mut Scenario<R>,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let path = format!("controller.{key}");
    match key {
        "p_grid_size" => scn.cfg.p_grid_size = parse_usize(&path, value)?,
        "nu_grid_size" => scn.cfg.nu_grid_size = parse_usize(&path, value)?,
        "policy" => {
            scn.cfg.policy = Policy::parse(value).ok_or_else(|| {
                err_key(
                    &path,
                    format!("expected robust_fair or surge, got `{value}`"),
                )
            })?;
        }
        "objective" => {
            scn.cfg.objective = match value {
                "end_of_window" => ObjectiveForm::EndOfWindow,
                "start_of_window" => ObjectiveForm::StartOfWindow,
                _ => {
                    return Err(err_key(
                        &path,
                        format!("expected end_of_window or start_of_window, got `{value}`"),
                    ))
                }
            };
        }
        "fairness_guard" => scn.cfg.fairness_guard = parse_real(&path, value)?,
        "b1" => scn.cfg.b1 = parse_real(&path, value)?,
        "b2" => scn.cfg.b2 = parse_real(&path, value)?,
        "b3" => scn.cfg.b3 = parse_real(&path, value)?,
        _ => return Err(err_key(&path, "unknown key")),
    }
    Ok(())
}

fn apply_sim_key<R: Real>(
    scn: &mut Scenario<R>,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let path = format!("sim.{key}");
    match key {
        "t_end" => scn.t_end = parse_real(&path, value)?,
        "seed" => scn.seed = parse_u64(&path, value)?,
        "q0" => scn.initial.q = parse_real(&path, value)?,
        "alpha0" => scn.initial.alpha = parse_real(&path, value)?,
        "x0" => scn.initial.x = parse_real_list(&path, value)?,
        _ => return Err(err_key(&path, "unknown key")),
    }
    Ok(())
}

fn apply_class_key<R: Real>(
    scn: &mut Scenario<R>,
    index: usize,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let path = format!("classes.{}.{key}", index + 1);
    let class = scn.classes.get_mut(index).ok_or_else(|| {
        err_key(
            &path,
            format!("class index out of range (have {})", index + 1),
        )
    })?;
    match key {
        "r1" => class.r1 = parse_real(&path, value)?,
        "r2" => class.r2 = parse_real(&path, value)?,
        _ => return Err(err_key(&path, "unknown key")),
    }
    Ok(())
}

fn apply_profile_key<R: Real>(
    profile: &mut DemandProfile<R>,
    index: usize,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let path = format!("profile.{}.{key}", index + 1);
    match key {
        "kind" => {
            let mean = profile.mean_at(R::zero());
            let std = match profile {
                DemandProfile::ClippedGaussian { std, .. }
                | DemandProfile::Piecewise { std, .. } => *std,
                DemandProfile::Constant { .. } => R::zero(),
            };
            *profile = match value {
                "constant" => DemandProfile::Constant { mean },
                "clipped_gaussian" => DemandProfile::ClippedGaussian { mean, std },
                "piecewise" => DemandProfile::Piecewise {
                    breakpoints: match profile {
                        DemandProfile::Piecewise { breakpoints, .. } => breakpoints.clone(),
                        _ => vec![(R::zero(), mean)],
                    },
                    std,
                },
                _ => {
                    return Err(err_key(
                        &path,
                        format!("expected constant, clipped_gaussian or piecewise, got `{value}`"),
                    ))
                }
            };
        }
        "mean" => match profile {
            DemandProfile::Constant { mean } | DemandProfile::ClippedGaussian { mean, .. } => {
                *mean = parse_real(&path, value)?;
            }
            DemandProfile::Piecewise { .. } => {
                return Err(err_key(
                    &path,
                    "piecewise profiles take breakpoints, not mean",
                ));
            }
        },
        "std" => match profile {
            DemandProfile::ClippedGaussian { std, .. } | DemandProfile::Piecewise { std, .. } => {
                *std = parse_real(&path, value)?;
            }
            DemandProfile::Constant { .. } => {
                return Err(err_key(&path, "constant profiles have no std"));
            }
        },
        "breakpoints" => match profile {
            DemandProfile::Piecewise { breakpoints, .. } => {
                *breakpoints = parse_breakpoints(&path, value)?;
            }
            _ => {
                return Err(err_key(
                    &path,
                    "breakpoints only apply to piecewise profiles",
                ))
            }
        },
        _ => return Err(err_key(&path, "unknown key")),
    }
    Ok(())
}

fn attach_line(mut err: ConfigError, line: usize) -> ConfigError {
    err.line.get_or_insert(line);
    err
}

/// Parse a sectioned configuration into a validated scenario.
pub fn parse_config<R: Real>(text: &str, name: &str) -> Result<Scenario<R>, ConfigError> {
    let sections = tokenize(text)?;

    for section in &sections {
        let ok = matches!(
            section.name.as_str(),
            "system" | "controller" | "sim" | "classes"
        ) || section.name.starts_with("profile.");
        if !ok {
            return Err(err_at(
                section.line,
                format!("unknown section [{}]", section.name),
            ));
        }
    }

    // classes first: they fix the dimension everything else is checked against
    let mut classes: Vec<ClassParams<R>> = Vec::new();
    for section in sections.iter().filter(|s| s.name == "classes") {
        let mut class = ClassParams {
            r1: R::zero(),
            r2: R::zero(),
        };
        for (key, value, line) in &section.entries {
            let path = format!("classes.{}.{key}", classes.len() + 1);
            match key.as_str() {
                "r1" => class.r1 = parse_real(&path, value).map_err(|e| attach_line(e, *line))?,
                "r2" => class.r2 = parse_real(&path, value).map_err(|e| attach_line(e, *line))?,
                _ => return Err(attach_line(err_key(&path, "unknown key"), *line)),
            }
        }
        classes.push(class);
    }
    if classes.is_empty() {
        return Err(ConfigError {
            line: None,
            key: Some("classes".to_string()),
            message: "at least one [classes] section is required".to_string(),
        });
    }
    let n = classes.len();

    let mut profiles: Vec<Option<DemandProfile<R>>> = vec![None; n];
    for section in sections.iter().filter(|s| s.name.starts_with("profile.")) {
        let idx_str = &section.name["profile.".len()..];
        let index: usize = idx_str
            .parse()
            .map_err(|_| err_at(section.line, format!("bad profile index `{idx_str}`")))?;
        if index == 0 || index > n {
            return Err(err_at(
                section.line,
                format!("profile index {index} out of range for {n} classes"),
            ));
        }
        let mut profile = DemandProfile::Constant { mean: R::zero() };
        // kind first so later keys land on the right variant
        let mut entries = section.entries.clone();
        entries.sort_by_key(|(key, _, _)| if key == "kind" { 0 } else { 1 });
        for (key, value, line) in &entries {
            apply_profile_key(&mut profile, index - 1, key, value)
                .map_err(|e| attach_line(e, *line))?;
        }
        profiles[index - 1] = Some(profile);
    }
    let profiles: Vec<DemandProfile<R>> = profiles
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.ok_or_else(|| {
                err_key(
                    &format!("profile.{}", i + 1),
                    "missing [profile] section for this class",
                )
            })
        })
        .collect::<Result<_, _>>()?;

    let mut scn = Scenario {
        name: name.to_string(),
        classes,
        profiles,
        sp: Default::default(),
        cfg: Default::default(),
        t_end: R::of(250.0),
        seed: DEFAULT_SEED,
        initial: HiddenState::new(vec![R::zero(); n], R::zero(), R::one()),
    };

    for section in &sections {
        match section.name.as_str() {
            "system" => {
                for (key, value, line) in &section.entries {
                    apply_system_key(&mut scn, key, value).map_err(|e| attach_line(e, *line))?;
                }
            }
            "controller" => {
                for (key, value, line) in &section.entries {
                    apply_controller_key(&mut scn, key, value)
                        .map_err(|e| attach_line(e, *line))?;
                }
            }
            "sim" => {
                for (key, value, line) in &section.entries {
                    apply_sim_key(&mut scn, key, value).map_err(|e| attach_line(e, *line))?;
                }
            }
            _ => {}
        }
    }

    scn.validate()?;
    Ok(scn)
}

/// Apply one `path = value` override to an already-built scenario. The
/// scenario is re-validated by the caller once all overrides are in.
pub fn apply_override<R: Real>(
    scn: &mut Scenario<R>,
    path: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let mut parts = path.splitn(2, '.');
    let section = parts.next().unwrap_or_default();
    let rest = parts
        .next()
        .ok_or_else(|| err_key(path, "expected `section.key`"))?;
    match section {
        "system" => apply_system_key(scn, rest, value),
        "controller" => apply_controller_key(scn, rest, value),
        "sim" => apply_sim_key(scn, rest, value),
        "classes" => {
            let (idx, key) = rest
                .split_once('.')
                .ok_or_else(|| err_key(path, "expected classes.<i>.<key>"))?;
            let index: usize = idx.parse().map_err(|_| err_key(path, "bad class index"))?;
            if index == 0 {
                return Err(err_key(path, "class indices are 1-based"));
            }
            apply_class_key(scn, index - 1, key, value)
        }
        "profile" => {
            let (idx, key) = rest
                .split_once('.')
                .ok_or_else(|| err_key(path, "expected profile.<i>.<key>"))?;
            let index: usize = idx
                .parse()
                .map_err(|_| err_key(path, "bad profile index"))?;
            if index == 0 || index > scn.profiles.len() {
                return Err(err_key(
                    path,
                    format!(
                        "profile index out of range for {} classes",
                        scn.profiles.len()
                    ),
                ));
            }
            let mut profile = scn.profiles[index - 1].clone();
            apply_profile_key(&mut profile, index - 1, key, value)?;
            scn.profiles[index - 1] = profile;
            Ok(())
        }
        _ => Err(err_key(path, "unknown section")),
    }
}

/// Apply a list of `key=value` overrides and re-validate.
pub fn apply_overrides<R: Real>(
    scn: &mut Scenario<R>,
    overrides: &[(String, String)],
) -> Result<(), ConfigError> {
    for (path, value) in overrides {
        apply_override(scn, path, value)?;
    }
    scn.validate()?;
    Ok(())
}
