//! `sweep`: tables of headline quantities over a grid, plus an SVG plot.

use anyhow::{bail, Result};
use clap::ValueEnum;
use mbrl_core::counterexamples::{
    build_prop1, build_prop2, dataset_detection_probability, distinguishing_probability, MAX_PROP2_HORIZON,
};
use mbrl_core::diagnostics::{state_action_coverage, trajectory_coverage};
use mbrl_core::losses::{reward_prediction_loss_empirical, reward_prediction_loss_expected};
use mbrl_core::mdp_core::occupancy;
use mbrl_core::sampling::sample_trajectories;
use rayon::prelude::*;
use serde::Serialize;

use crate::svg::{line_plot, Axes, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    #[value(name = "prop2-detection-vs-H", alias = "prop2-detection-vs-h")]
    Prop2DetectionVsH,
    #[value(name = "prop1-loss-vs-n")]
    Prop1LossVsN,
    #[value(name = "coverage-vs-H", alias = "coverage-vs-h")]
    CoverageVsH,
}

impl Experiment {
    pub fn stem(self) -> &'static str {
        match self {
            Experiment::Prop2DetectionVsH => "prop2-detection-vs-H",
            Experiment::Prop1LossVsN => "prop1-loss-vs-n",
            Experiment::CoverageVsH => "coverage-vs-H",
        }
    }

    fn default_grid(self) -> Vec<usize> {
        match self {
            Experiment::Prop2DetectionVsH => (2..=20).collect(),
            Experiment::Prop1LossVsN => vec![100, 1_000, 10_000, 100_000],
            Experiment::CoverageVsH => (2..=20).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionRow {
    pub horizon: usize,
    pub trajectories: usize,
    /// `2^{−H}`, exact.
    pub distinguishing_probability: f64,
    /// `1 − (1 − 2^{−H})^n`, exact.
    pub detection_probability: f64,
    /// All-R trajectories in the seeded sample.
    pub sampled_all_r: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRow {
    pub n: usize,
    pub exact_truth: f64,
    pub exact_wrong: f64,
    pub mc_truth: f64,
    pub se_truth: f64,
    pub mc_wrong: f64,
    pub se_wrong: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageRow {
    pub horizon: usize,
    pub state_action: f64,
    pub trajectory: f64,
}

pub enum Table {
    Detection(Vec<DetectionRow>),
    Loss(Vec<LossRow>),
    Coverage(Vec<CoverageRow>),
}

/// Resolves `--grid` or `--from/--to` into grid points.
pub fn grid(exp: Experiment, from: Option<usize>, to: Option<usize>, explicit: &[usize]) -> Result<Vec<usize>> {
    let points: Vec<usize> = if !explicit.is_empty() {
        explicit.to_vec()
    } else if from.is_some() || to.is_some() {
        let d = exp.default_grid();
        let lo = from.unwrap_or(d[0]);
        let hi = to.unwrap_or(d[d.len() - 1]);
        (lo..=hi).collect()
    } else {
        exp.default_grid()
    };
    if points.is_empty() {
        bail!("empty sweep range");
    }
    let horizon_sweep = matches!(exp, Experiment::Prop2DetectionVsH | Experiment::CoverageVsH);
    if horizon_sweep {
        if let Some(&h) = points.iter().find(|&&h| !(2..=MAX_PROP2_HORIZON).contains(&h)) {
            bail!("horizon {h} outside 2..={MAX_PROP2_HORIZON}");
        }
    }
    Ok(points)
}

pub fn run(exp: Experiment, points: &[usize], trajectories: usize, seed: u64) -> Result<Table> {
    Ok(match exp {
        Experiment::Prop2DetectionVsH => Table::Detection(
            points
                .par_iter()
                .map(|&h| -> Result<DetectionRow> {
                    let pair = build_prop2(h)?;
                    let data = sample_trajectories(&pair.truth, &pair.pi_d, trajectories, seed)?;
                    let hits = data.trajectories()?.iter().filter(|t| t.actions().all(|a| a == 1)).count();
                    Ok(DetectionRow {
                        horizon: h,
                        trajectories,
                        distinguishing_probability: distinguishing_probability(h)?,
                        detection_probability: dataset_detection_probability(h, trajectories as u64)?,
                        sampled_all_r: hits,
                    })
                })
                .collect::<Result<_>>()?,
        ),
        Experiment::Prop1LossVsN => {
            let pair = build_prop1()?;
            let exact_truth = reward_prediction_loss_expected(&pair.truth, &pair.truth, &pair.pi_d)?.loss;
            let exact_wrong = reward_prediction_loss_expected(&pair.wrong, &pair.truth, &pair.pi_d)?.loss;
            Table::Loss(
                points
                    .par_iter()
                    .map(|&n| -> Result<LossRow> {
                        let data = sample_trajectories(&pair.truth, &pair.pi_d, n, seed)?;
                        let t = reward_prediction_loss_empirical(&pair.truth, &data, seed)?;
                        let w = reward_prediction_loss_empirical(&pair.wrong, &data, seed)?;
                        Ok(LossRow {
                            n,
                            exact_truth,
                            exact_wrong,
                            mc_truth: t.loss,
                            se_truth: t.standard_error,
                            mc_wrong: w.loss,
                            se_wrong: w.standard_error,
                        })
                    })
                    .collect::<Result<_>>()?,
            )
        }
        Experiment::CoverageVsH => Table::Coverage(
            points
                .par_iter()
                .map(|&h| -> Result<CoverageRow> {
                    let pair = build_prop2(h)?;
                    let d = occupancy(&pair.truth, &pair.pi_d)?;
                    Ok(CoverageRow {
                        horizon: h,
                        state_action: state_action_coverage(&pair.truth, &pair.pi_target, &d)?.ratio,
                        trajectory: trajectory_coverage(&pair.truth, &pair.pi_target, &pair.pi_d)?.ratio,
                    })
                })
                .collect::<Result<_>>()?,
        ),
    })
}

impl Table {
    pub fn csv(&self) -> Result<String> {
        match self {
            Table::Detection(r) => crate::output::rows_to_csv(r),
            Table::Loss(r) => crate::output::rows_to_csv(r),
            Table::Coverage(r) => crate::output::rows_to_csv(r),
        }
    }

    pub fn json(&self) -> Result<String> {
        match self {
            Table::Detection(r) => crate::output::to_json(r),
            Table::Loss(r) => crate::output::to_json(r),
            Table::Coverage(r) => crate::output::to_json(r),
        }
    }

    pub fn svg(&self) -> String {
        let f = |v: usize| v as f64;
        match self {
            Table::Detection(rows) => line_plot(
                "Probability that the data reveals the all-R branch",
                "horizon H",
                &rows.iter().map(|r| f(r.horizon)).collect::<Vec<_>>(),
                &[
                    Series {
                        name: "one trajectory",
                        ys: rows.iter().map(|r| r.distinguishing_probability).collect(),
                    },
                    Series {
                        name: "whole dataset",
                        ys: rows.iter().map(|r| r.detection_probability).collect(),
                    },
                ],
                Axes { log_x: false, log_y: true },
            ),
            Table::Loss(rows) => line_plot(
                "Reward-prediction loss vs sample size",
                "trajectories n",
                &rows.iter().map(|r| f(r.n)).collect::<Vec<_>>(),
                &[
                    Series {
                        name: "true model (MC)",
                        ys: rows.iter().map(|r| r.mc_truth).collect(),
                    },
                    Series {
                        name: "wrong model (MC)",
                        ys: rows.iter().map(|r| r.mc_wrong).collect(),
                    },
                    Series {
                        name: "true model (exact)",
                        ys: rows.iter().map(|r| r.exact_truth).collect(),
                    },
                    Series {
                        name: "wrong model (exact)",
                        ys: rows.iter().map(|r| r.exact_wrong).collect(),
                    },
                ],
                Axes { log_x: true, log_y: false },
            ),
            Table::Coverage(rows) => line_plot(
                "Coverage of the all-R policy under uniform data",
                "horizon H",
                &rows.iter().map(|r| f(r.horizon)).collect::<Vec<_>>(),
                &[
                    Series {
                        name: "state-action",
                        ys: rows.iter().map(|r| r.state_action).collect(),
                    },
                    Series {
                        name: "trajectory",
                        ys: rows.iter().map(|r| r.trajectory).collect(),
                    },
                ],
                Axes { log_x: false, log_y: true },
            ),
        }
    }
}
