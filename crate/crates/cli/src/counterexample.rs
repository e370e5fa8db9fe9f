//! `counterexample`: build a registered instance and run its certificates.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use mbrl_core::abstraction::{expected_latent_mle_loss, latent_mle_loss, optimal_latent_dynamics, search_encoders};
use mbrl_core::counterexamples::*;
use mbrl_core::diagnostics::{state_action_coverage, trajectory_coverage};
use mbrl_core::losses::{reward_prediction_loss_empirical, reward_prediction_loss_expected, LossReport};
use mbrl_core::mdp_core::{expected_return, occupancy, Policy};
use mbrl_core::sampling::sample_trajectories;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::HeadlineRow;

/// Monte-Carlo check: `|estimate − exact| ≤ 3·SE`.
const MC_SIGMAS: f64 = 3.0;

pub struct Params {
    pub samples: Option<usize>,
    pub trajectories: Option<usize>,
    pub seed: u64,
    pub horizon: Option<usize>,
    pub p_b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    fn from_report(r: &LossReport) -> Self {
        Self {
            estimate: r.loss,
            se: r.standard_error,
            n: r.n_effective,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub instance: String,
    pub parameters: BTreeMap<String, Value>,
    /// Values computed by exact dynamic programming or closed forms.
    pub exact: BTreeMap<String, f64>,
    /// Sample-based estimates; never exact.
    pub monte_carlo: BTreeMap<String, Estimate>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
    pub certificates: Vec<Certificate>,
    pub all_passed: bool,
}

impl Report {
    fn new(instance: &str, certificates: Vec<Certificate>) -> Self {
        Self {
            instance: instance.to_string(),
            parameters: BTreeMap::new(),
            exact: BTreeMap::new(),
            monte_carlo: BTreeMap::new(),
            details: Value::Null,
            certificates,
            all_passed: false,
        }
    }

    fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.parameters.insert(key.to_string(), value.into());
    }

    fn exact(&mut self, key: &str, value: f64) {
        self.exact.insert(key.to_string(), value);
    }

    /// Records an estimate and certifies it against the exact value.
    fn estimate(&mut self, key: &str, r: &LossReport, exact: f64) {
        let tolerance = MC_SIGMAS * r.standard_error;
        self.certificates.push(Certificate {
            name: format!("mc_{key}"),
            expected: exact,
            computed: r.loss,
            tolerance,
            passed: (r.loss - exact).abs() <= tolerance,
        });
        self.monte_carlo.insert(key.to_string(), Estimate::from_report(r));
    }

    fn check(&mut self, name: &str, expected: f64, computed: f64) {
        self.certificates.push(Certificate {
            name: name.to_string(),
            expected,
            computed,
            tolerance: 0.0,
            passed: expected == computed,
        });
    }

    fn finish(mut self) -> Self {
        self.all_passed = self.certificates.iter().all(|c| c.passed);
        self
    }

    pub fn headline(&self) -> Vec<HeadlineRow> {
        let mut rows: Vec<HeadlineRow> = self.exact.iter().map(|(k, v)| HeadlineRow::exact(k, *v)).collect();
        rows.extend(
            self.monte_carlo
                .iter()
                .map(|(k, e)| HeadlineRow::estimate(k, e.estimate, e.se)),
        );
        rows
    }
}

pub fn run(name: &str, p: &Params) -> Result<Report> {
    let report = match name {
        "prop1" => prop1(build_prop1()?, p)?,
        "prop1-variant" => {
            let mut r = prop1(build_prop1_variant(p.p_b)?, p)?;
            r.instance = name.to_string();
            r.param("p_b", p.p_b);
            let flip = prop1_flip_threshold(200, 1e-9)?;
            r.details = json!({ "flip_search": flip });
            r
        }
        "prop2" => prop2(p)?,
        "bisim-degenerate" => bisim(p)?,
        other => bail!("unknown instance {other:?}; expected one of {}", REGISTRY.join(", ")),
    };
    Ok(report.finish())
}

fn prop1(pair: ModelPair, p: &Params) -> Result<Report> {
    let n = p.samples.or(p.trajectories).unwrap_or(100_000);
    let mut r = Report::new("prop1", pair.certificates.clone());
    r.param("samples", n);
    r.param("seed", p.seed);
    let loss_truth = reward_prediction_loss_expected(&pair.truth, &pair.truth, &pair.pi_d)?.loss;
    let loss_wrong = reward_prediction_loss_expected(&pair.wrong, &pair.truth, &pair.pi_d)?.loss;
    let return_truth = expected_return(&pair.truth, &pair.pi_target)?;
    let return_wrong = expected_return(&pair.wrong, &pair.pi_target)?;
    let data_occ = occupancy(&pair.truth, &pair.pi_d)?;
    r.exact("loss_truth", loss_truth);
    r.exact("loss_wrong", loss_wrong);
    r.exact("return_truth", return_truth);
    r.exact("return_wrong", return_wrong);
    r.exact("ope_gap", (return_truth - return_wrong).abs());
    r.exact("coverage", state_action_coverage(&pair.truth, &pair.pi_target, &data_occ)?.ratio);
    if n > 0 {
        let data = sample_trajectories(&pair.truth, &pair.pi_d, n, p.seed)?;
        let mc_truth = reward_prediction_loss_empirical(&pair.truth, &data, p.seed)?;
        let mc_wrong = reward_prediction_loss_empirical(&pair.wrong, &data, p.seed)?;
        r.estimate("loss_truth", &mc_truth, loss_truth);
        r.estimate("loss_wrong", &mc_wrong, loss_wrong);
    }
    Ok(r)
}

fn prop2(p: &Params) -> Result<Report> {
    let horizon = p.horizon.unwrap_or(20);
    let n = p.trajectories.or(p.samples).unwrap_or(1000);
    let pair = build_prop2(horizon)?;
    let mut r = Report::new("prop2", pair.certificates.clone());
    r.param("horizon", horizon);
    r.param("trajectories", n);
    r.param("seed", p.seed);
    let data_occ = occupancy(&pair.truth, &pair.pi_d)?;
    let return_truth = expected_return(&pair.truth, &pair.pi_target)?;
    let return_wrong = expected_return(&pair.wrong, &pair.pi_target)?;
    r.exact("coverage", state_action_coverage(&pair.truth, &pair.pi_target, &data_occ)?.ratio);
    r.exact(
        "trajectory_coverage",
        trajectory_coverage(&pair.truth, &pair.pi_target, &pair.pi_d)?.ratio,
    );
    r.exact("distinguishing_probability", distinguishing_probability(horizon)?);
    r.exact("return_truth", return_truth);
    r.exact("return_wrong", return_wrong);
    r.exact("ope_gap", (return_wrong - return_truth).abs());
    if horizon <= MAX_PROP2_LOSS_HORIZON {
        r.exact("loss_truth", reward_prediction_loss_expected(&pair.truth, &pair.truth, &pair.pi_d)?.loss);
        r.exact("loss_wrong", reward_prediction_loss_expected(&pair.wrong, &pair.truth, &pair.pi_d)?.loss);
    }
    if n > 0 {
        r.exact("detection_probability", dataset_detection_probability(horizon, n as u64)?);
        let data = sample_trajectories(&pair.truth, &pair.pi_d, n, p.seed)?;
        let all_r = data.trajectories()?.iter().filter(|t| t.actions().all(|a| a == 1)).count();
        let mc_truth = reward_prediction_loss_empirical(&pair.truth, &data, p.seed)?;
        let mc_wrong = reward_prediction_loss_empirical(&pair.wrong, &data, p.seed)?;
        r.monte_carlo.insert("loss_truth".into(), Estimate::from_report(&mc_truth));
        r.monte_carlo.insert("loss_wrong".into(), Estimate::from_report(&mc_wrong));
        if all_r == 0 {
            // Without an all-R trajectory the models are indistinguishable on the sample.
            r.check("mc_losses_identical", mc_truth.loss, mc_wrong.loss);
        }
        r.details = json!({ "all_r_trajectories": all_r });
    }
    Ok(r)
}

fn bisim(p: &Params) -> Result<Report> {
    let n = p.trajectories.or(p.samples).unwrap_or(100_000);
    let inst = build_bisim_degenerate()?;
    let mut r = Report::new("bisim-degenerate", inst.certificates.clone());
    r.param("trajectories", n);
    r.param("seed", p.seed);
    let data_occ = occupancy(&inst.truth, &inst.pi_d)?;
    let lm_bisim = optimal_latent_dynamics(&inst.phi_bisim, &inst.truth, &data_occ)?;
    let lm_degenerate = optimal_latent_dynamics(&inst.phi_degenerate, &inst.truth, &data_occ)?;
    let loss_bisim = expected_latent_mle_loss(&lm_bisim, &inst.truth, &data_occ)?.loss;
    let loss_degenerate = expected_latent_mle_loss(&lm_degenerate, &inst.truth, &data_occ)?.loss;
    let lifted = mbrl_core::abstraction::lift_policy(&inst.phi_degenerate, &inst.pi_latent);
    let return_truth = expected_return(&inst.truth, &lifted)?;
    let return_bisim = expected_return(&lm_bisim.to_mdp()?, &inst.pi_latent)?;
    let return_degenerate = expected_return(&lm_degenerate.to_mdp()?, &inst.pi_latent)?;
    r.exact("latent_loss_bisim", loss_bisim);
    r.exact("latent_loss_degenerate", loss_degenerate);
    r.exact("merged_l_to_g", lm_degenerate.row(1, "m", 0)?.next.prob("g"));
    r.exact("return_truth", return_truth);
    r.exact("return_bisim_model", return_bisim);
    r.exact("return_degenerate_model", return_degenerate);
    r.exact("ope_gap_bisim", (return_truth - return_bisim).abs());
    r.exact("ope_gap_degenerate", (return_truth - return_degenerate).abs());
    let ranking = search_encoders(&inst.truth, &data_occ, 5)?;
    if n > 0 {
        let data = sample_trajectories(&inst.truth, &inst.pi_d, n, p.seed)?;
        r.estimate("latent_loss_bisim", &latent_mle_loss(&lm_bisim, &data)?, loss_bisim);
        r.estimate("latent_loss_degenerate", &latent_mle_loss(&lm_degenerate, &data)?, loss_degenerate);
    }
    r.details = json!({
        "policy": Policy::descriptor(&lifted),
        "ranking": ranking,
    });
    Ok(r)
}
