//! Tabular POMDP representation, validation and sink extension.
//!
//! Index conventions (the single place they are documented):
//!
//! * Steps are 1-based, as in `h ∈ 1..=H`. Transitions exist for
//!   `h ∈ 1..H`, observation matrices and rewards for `h ∈ 2..=H`; no
//!   observation is emitted at step 1.
//! * State, action and observation indices are 0-based positions into the
//!   label lists. After sink extension the sink state is index `S` and the
//!   sink observation is index `O`.
//! * Tables are stored step-major with the first entry holding the first
//!   step for which the table exists: `transitions[h - 1][a][next][cur]`,
//!   `emissions[h - 2][o][s]`, `rewards[h - 2][o]`. The model file uses
//!   exactly this nesting; sink rows are never serialized.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Tolerance for stochasticity checks on stored tables.
pub const VALIDATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PomdpModel {
    pub horizon: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    pub b1: Vec<f64>,
    /// `transitions[h - 1][a][next][cur] = T_h(next | cur, a)`.
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `emissions[h - 2][o][s] = Ob_h(o | s)`.
    pub emissions: Vec<Vec<Vec<f64>>>,
    /// `rewards[h - 2][o] = R_h(o)`.
    pub rewards: Vec<Vec<f64>>,
    /// Whether the tables carry the sink state and sink observation.
    pub sinks: bool,
}

/// On-disk model layout. Never contains sink rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub horizon: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    pub b1: Vec<f64>,
    #[serde(rename = "T")]
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "Ob")]
    pub emissions: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    pub rewards: Vec<Vec<f64>>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

impl PomdpModel {
    /// Wraps raw tables without sinks. Nothing is checked; call
    /// [`validate_model`] or [`PomdpModel::from_file`].
    pub fn from_file_unchecked(file: ModelFile) -> Self {
        PomdpModel {
            horizon: file.horizon,
            states: file.states,
            actions: file.actions,
            observations: file.observations,
            b1: file.b1,
            transitions: file.transitions,
            emissions: file.emissions,
            rewards: file.rewards,
            sinks: false,
        }
    }

    /// Validates the file contents and returns the sink-extended model.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        extend_with_sinks(&Self::from_file_unchecked(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }

    /// Strips sink rows and returns the serializable layout.
    pub fn to_file(&self) -> ModelFile {
        let s = self.states.len();
        let o = self.observations.len();
        let strip = |v: &Vec<f64>, n: usize| v[..n].to_vec();
        ModelFile {
            format_version: FORMAT_VERSION,
            horizon: self.horizon,
            states: self.states.clone(),
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            b1: strip(&self.b1, s),
            transitions: self
                .transitions
                .iter()
                .map(|step| {
                    step.iter()
                        .map(|m| m[..s].iter().map(|row| strip(row, s)).collect())
                        .collect()
                })
                .collect(),
            emissions: self
                .emissions
                .iter()
                .map(|m| m[..o].iter().map(|row| strip(row, s)).collect())
                .collect(),
            rewards: self.rewards.iter().map(|r| strip(r, o)).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Number of latent states, including the sink when present.
    pub fn n_states(&self) -> usize {
        self.states.len() + usize::from(self.sinks)
    }

    /// Number of observations, including the sink when present.
    pub fn n_obs(&self) -> usize {
        self.observations.len() + usize::from(self.sinks)
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Number of non-sink states `S`.
    pub fn base_states(&self) -> usize {
        self.states.len()
    }

    /// Number of non-sink observations `O`.
    pub fn base_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn sink_state(&self) -> Option<usize> {
        self.sinks.then_some(self.states.len())
    }

    pub fn sink_obs(&self) -> Option<usize> {
        self.sinks.then_some(self.observations.len())
    }

    /// `T_h(next | cur, a)` for `1 <= h < H`.
    #[inline]
    pub fn t(&self, h: usize, a: usize, next: usize, cur: usize) -> f64 {
        self.transitions[h - 1][a][next][cur]
    }

    /// `Ob_h(o | s)` for `2 <= h <= H`.
    #[inline]
    pub fn ob(&self, h: usize, o: usize, s: usize) -> f64 {
        self.emissions[h - 2][o][s]
    }

    /// `R_h(o)` for `2 <= h <= H`.
    #[inline]
    pub fn reward(&self, h: usize, o: usize) -> f64 {
        self.rewards[h - 2][o]
    }

    /// `T_h(a) · b`: the predicted next-state distribution.
    pub fn propagate(&self, h: usize, a: usize, b: &[f64]) -> Vec<f64> {
        let m = &self.transitions[h - 1][a];
        m.iter()
            .map(|row| row.iter().zip(b).map(|(t, p)| t * p).sum())
            .collect()
    }

    /// `Ob_h · d`: observation distribution induced by a state distribution.
    pub fn emit(&self, h: usize, d: &[f64]) -> Vec<f64> {
        self.emissions[h - 2]
            .iter()
            .map(|row| row.iter().zip(d).map(|(o, p)| o * p).sum())
            .collect()
    }

    /// Dense copy of `Ob_h` as rows over observations, columns over states.
    pub fn emission_matrix(&self, h: usize) -> &Vec<Vec<f64>> {
        &self.emissions[h - 2]
    }

    pub(crate) fn check_step(&self, h: usize, lo: usize, hi: usize, what: &str) -> Result<()> {
        if h < lo || h > hi {
            return Err(Error::Index(format!("{what}: step {h} outside {lo}..={hi}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    pub pass: bool,
}

impl ValidationReport {
    fn push(&mut self, severity: Severity, location: String, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            severity,
            location,
            message: message.into(),
        });
    }

    fn error(&mut self, location: String, message: impl Into<String>) {
        self.push(Severity::Error, location, message);
    }

    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }
}

/// Checks every shape and stochasticity invariant, reporting all failures.
pub fn validate_model(model: &PomdpModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let h_total = model.horizon;
    let ns = model.n_states();
    let no = model.n_obs();
    let na = model.n_actions();

    if h_total == 0 {
        report.error("horizon".into(), "horizon must be positive");
    }
    if model.states.is_empty() {
        report.error("states".into(), "no states");
    }
    if na == 0 {
        report.error("actions".into(), "no actions");
    }
    if model.observations.is_empty() {
        report.error("observations".into(), "no observations");
    }
    for (what, labels) in [
        ("states", &model.states),
        ("actions", &model.actions),
        ("observations", &model.observations),
    ] {
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            report.push(Severity::Warning, what.into(), "duplicate labels");
        }
    }

    check_distribution(&mut report, "b1".into(), &model.b1, ns);

    let steps = h_total.saturating_sub(1);
    if model.transitions.len() != steps {
        report.error(
            "T".into(),
            format!("expected {steps} steps, found {}", model.transitions.len()),
        );
    }
    for (hi, step) in model.transitions.iter().enumerate() {
        let h = hi + 1;
        if step.len() != na {
            report.error(format!("T[h={h}]"), format!("expected {na} actions, found {}", step.len()));
            continue;
        }
        for (a, m) in step.iter().enumerate() {
            if m.len() != ns || m.iter().any(|row| row.len() != ns) {
                report.error(format!("T[h={h}][a={a}]"), format!("expected {ns}x{ns} matrix"));
                continue;
            }
            for cur in 0..ns {
                let col: Vec<f64> = (0..ns).map(|next| m[next][cur]).collect();
                check_distribution(&mut report, format!("T[h={h}][a={a}][s={cur}]"), &col, ns);
            }
            if let Some(sink) = model.sink_state() {
                if (m[sink][sink] - 1.0).abs() > VALIDATION_TOL {
                    report.error(format!("T[h={h}][a={a}][sink]"), "sink state must be absorbing");
                }
            }
        }
    }

    if model.emissions.len() != steps {
        report.error(
            "Ob".into(),
            format!("expected {steps} steps, found {}", model.emissions.len()),
        );
    }
    for (hi, m) in model.emissions.iter().enumerate() {
        let h = hi + 2;
        if m.len() != no || m.iter().any(|row| row.len() != ns) {
            report.error(format!("Ob[h={h}]"), format!("expected {no}x{ns} matrix"));
            continue;
        }
        for s in 0..ns {
            let col: Vec<f64> = (0..no).map(|o| m[o][s]).collect();
            check_distribution(&mut report, format!("Ob[h={h}][s={s}]"), &col, no);
        }
        if let (Some(ss), Some(so)) = (model.sink_state(), model.sink_obs()) {
            if (m[so][ss] - 1.0).abs() > VALIDATION_TOL {
                report.error(format!("Ob[h={h}][sink]"), "sink state must emit the sink observation");
            }
        }
    }

    if model.rewards.len() != steps {
        report.error(
            "R".into(),
            format!("expected {steps} steps, found {}", model.rewards.len()),
        );
    }
    for (hi, r) in model.rewards.iter().enumerate() {
        let h = hi + 2;
        if r.len() != no {
            report.error(format!("R[h={h}]"), format!("expected {no} entries, found {}", r.len()));
            continue;
        }
        for (o, &v) in r.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                report.error(format!("R[h={h}][o={o}]"), format!("reward outside [0,1]: {v}"));
            }
        }
        if let Some(so) = model.sink_obs() {
            if r[so] != 0.0 {
                report.error(format!("R[h={h}][sink]"), "sink observation must carry zero reward");
            }
        }
    }

    let pass = report.errors().next().is_none();
    report.pass = pass;
    report
}

fn check_distribution(report: &mut ValidationReport, location: String, v: &[f64], len: usize) {
    if v.len() != len {
        report.error(location, format!("expected {len} entries, found {}", v.len()));
        return;
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        report.error(location, format!("negative or non-finite probability {bad}"));
        return;
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > VALIDATION_TOL {
        report.error(location, format!("probabilities sum to {sum}"));
    }
}

/// Adds the absorbing sink state and the sink observation. Idempotent.
pub fn extend_with_sinks(model: &PomdpModel) -> Result<PomdpModel> {
    let report = validate_model(model);
    if !report.pass {
        let first = report.errors().next().expect("failing report has an error");
        return Err(Error::InvalidModel(format!("{}: {}", first.location, first.message)));
    }
    if model.sinks {
        return Ok(model.clone());
    }
    let s = model.base_states();

    let mut b1 = model.b1.clone();
    b1.push(0.0);

    let transitions = model
        .transitions
        .iter()
        .map(|step| {
            step.iter()
                .map(|m| {
                    let mut out: Vec<Vec<f64>> = m
                        .iter()
                        .map(|row| {
                            let mut r = row.clone();
                            r.push(0.0);
                            r
                        })
                        .collect();
                    let mut sink_row = vec![0.0; s + 1];
                    sink_row[s] = 1.0;
                    out.push(sink_row);
                    out
                })
                .collect()
        })
        .collect();

    let emissions = model
        .emissions
        .iter()
        .map(|m| {
            let mut out: Vec<Vec<f64>> = m
                .iter()
                .map(|row| {
                    let mut r = row.clone();
                    r.push(0.0);
                    r
                })
                .collect();
            let mut sink_row = vec![0.0; s + 1];
            sink_row[s] = 1.0;
            out.push(sink_row);
            out
        })
        .collect();

    let rewards = model
        .rewards
        .iter()
        .map(|r| {
            let mut out = r.clone();
            out.push(0.0);
            out
        })
        .collect();

    Ok(PomdpModel {
        horizon: model.horizon,
        states: model.states.clone(),
        actions: model.actions.clone(),
        observations: model.observations.clone(),
        b1,
        transitions,
        emissions,
        rewards,
        sinks: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> PomdpModel {
        PomdpModel::from_file_unchecked(ModelFile {
            format_version: 1,
            horizon: 3,
            states: vec!["s0".into(), "s1".into()],
            actions: vec!["a0".into(), "a1".into()],
            observations: vec!["o0".into(), "o1".into()],
            b1: vec![0.5, 0.5],
            transitions: vec![
                vec![
                    vec![vec![0.9, 0.2], vec![0.1, 0.8]],
                    vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                ];
                2
            ],
            emissions: vec![vec![vec![0.7, 0.4], vec![0.3, 0.6]]; 2],
            rewards: vec![vec![1.0, 0.0]; 2],
        })
    }

    #[test]
    fn well_formed_model_passes() {
        let report = validate_model(&two_state());
        assert!(report.pass);
        assert!(report.issues.is_empty());
    }

    #[test]
    fn short_column_is_reported_with_indices() {
        let mut m = two_state();
        m.transitions[1][0][0][1] = 0.1; // column (h=2, a=0, s=1) now sums to 0.9
        let report = validate_model(&m);
        assert!(!report.pass);
        let issue = report.errors().next().unwrap();
        assert_eq!(issue.location, "T[h=2][a=0][s=1]");
    }

    #[test]
    fn negative_reward_is_reported() {
        let mut m = two_state();
        m.rewards[0][1] = -0.1;
        let report = validate_model(&m);
        assert!(!report.pass);
        assert!(report.errors().any(|i| i.message.contains("reward outside [0,1]")));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut m = two_state();
        m.emissions.pop();
        m.b1.push(0.0);
        let report = validate_model(&m);
        assert!(!report.pass);
        assert!(report.errors().any(|i| i.location == "Ob"));
        assert!(report.errors().any(|i| i.location == "b1"));
    }

    #[test]
    fn extension_adds_absorbing_sink() {
        let m = extend_with_sinks(&two_state()).unwrap();
        assert_eq!(m.n_states(), 3);
        assert_eq!(m.n_obs(), 3);
        for h in 1..3 {
            for a in 0..2 {
                assert_eq!(m.t(h, a, 2, 2), 1.0);
                assert_eq!(m.t(h, a, 2, 0), 0.0);
                assert_eq!(m.t(h, a, 0, 0), two_state().t(h, a, 0, 0));
            }
        }
        for h in 2..=3 {
            assert_eq!(m.ob(h, 2, 2), 1.0);
            assert_eq!(m.reward(h, 2), 0.0);
        }
        assert!(validate_model(&m).pass);
    }

    #[test]
    fn extension_is_idempotent() {
        let once = extend_with_sinks(&two_state()).unwrap();
        let twice = extend_with_sinks(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn file_round_trip_strips_sinks() {
        let m = extend_with_sinks(&two_state()).unwrap();
        let back = PomdpModel::from_file(m.to_file()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn extension_rejects_invalid_input() {
        let mut m = two_state();
        m.b1 = vec![0.7, 0.7];
        assert!(extend_with_sinks(&m).is_err());
    }
}
