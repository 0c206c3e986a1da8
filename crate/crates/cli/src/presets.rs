//! Fixed comparison presets. Their inputs are the reference central values
//! and errors, independent of any synthetic run.

use std::collections::BTreeMap;

use pvsearch_core::inference::{
    channel_rescale, combine_budget, confidence_limit, exclusion_curve, reference_budget, ErrorBudgetRow,
    ExclusionCurve,
};
use pvsearch_core::Channel;
use serde::{Deserialize, Serialize};

use crate::artifact::{units, Record};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::stages::{compute_budget, Stage};
use crate::svg::{Plot, Scale, Series};

/// Reference neutron-channel central value, statistical and systematic errors.
pub const NEUTRON_REFERENCE: (f64, f64, f64) = (5.31e-39, 12.38e-39, 5.88e-39);
/// Reference electron-channel central value, statistical and systematic errors.
pub const ELECTRON_REFERENCE: (f64, f64, f64) = (2.8e-36, 6.7e-36, 6.2e-36);

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Systematic budget recomputed next to the reference rows.
    #[value(name = "budget-table", alias = "table1")]
    BudgetTable,
    /// Electron and proton channel limits versus range.
    #[value(name = "channel-limits", alias = "fig5b")]
    ChannelLimits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub rows: Vec<ErrorBudgetRow>,
    pub reference_rows: Vec<ErrorBudgetRow>,
    pub syst_total: f64,
    pub reference_quadrature_total: f64,
    pub quoted_total: f64,
    /// `syst_total / quoted_total − 1`.
    pub relative_deviation: f64,
    pub confidence: f64,
    pub limit: f64,
}

pub fn compute_budget_table(cfg: &RunConfig) -> CliResult<BudgetComparison> {
    let (central, stat, quoted) = NEUTRON_REFERENCE;
    // The preset always uses the reference conversion, whatever the run config says.
    let mut cfg = cfg.clone();
    cfg.inference.anchored = true;
    cfg.inference.channel = "neutron".into();
    cfg.budget.g_central = Some(central);
    cfg.budget.phase_quadrature = Some(stat);
    let budget = compute_budget(&cfg, central, stat)?;
    let reference_rows = reference_budget();
    Ok(BudgetComparison {
        reference_quadrature_total: combine_budget(&reference_rows),
        relative_deviation: budget.syst_total / quoted - 1.0,
        limit: confidence_limit(central, stat, budget.syst_total, cfg.inference.confidence)?,
        confidence: cfg.inference.confidence,
        syst_total: budget.syst_total,
        quoted_total: quoted,
        rows: budget.rows,
        reference_rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelLimits {
    pub confidence: f64,
    pub lambda_ref_m: f64,
    pub electron_limit_at_ref: f64,
    pub electron: ExclusionCurve,
    pub proton: ExclusionCurve,
}

pub fn compute_channel_limits(cfg: &RunConfig) -> CliResult<ChannelLimits> {
    let (central, stat, syst) = ELECTRON_REFERENCE;
    let electron = Channel::electron_rb();
    let mut model = cfg.forward_model()?;
    model.channel = electron;
    let conf = cfg.inference.confidence;
    let limit = confidence_limit(central, stat, syst, conf)?;
    let a_ref = model.weighted_amplitude(cfg.lambda_ref()?)?;
    let e_curve = exclusion_curve(limit * a_ref.abs(), &cfg.lambda_grid()?, &model, conf)?;
    let p_curve = channel_rescale(&e_curve, &electron, &Channel::proton_rb())?;
    Ok(ChannelLimits {
        confidence: conf,
        lambda_ref_m: cfg.inference.lambda_ref_m,
        electron_limit_at_ref: limit,
        electron: e_curve,
        proton: p_curve,
    })
}

impl Stage<'_> {
    pub fn reproduce(&self, preset: Preset) -> CliResult<()> {
        match preset {
            Preset::BudgetTable => self.budget_table(),
            Preset::ChannelLimits => self.channel_limits(),
        }
    }

    fn budget_table(&self) -> CliResult<()> {
        let cmp = compute_budget_table(self.cfg)?;
        let mut body = String::from(
            "parameter,nominal,unit,uncertainty,delta_g_plus,delta_g_minus,reference_delta_g_plus,reference_delta_g_minus,upper_bound\n",
        );
        for (r, q) in cmp.rows.iter().zip(&cmp.reference_rows) {
            body.push_str(&format!(
                "{},{:.6e},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}\n",
                r.name, r.nominal, r.unit, r.uncertainty, r.delta_plus, r.delta_minus, q.delta_plus, q.delta_minus, r.upper_bound
            ));
        }
        let mut outputs = BTreeMap::new();
        outputs.insert("budget_table.csv".into(), self.ws.write_csv("budget_table.csv", &body)?);
        if !self.quiet {
            println!(
                "reproduce budget-table: systematic total {:.3e} (quoted {:.2e}, {:+.1}%), limit {:.3e}",
                cmp.syst_total,
                cmp.quoted_total,
                100.0 * cmp.relative_deviation,
                cmp.limit
            );
        }
        let record = Record {
            stage: "reproduce-budget-table".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.ws.config_hash.clone(),
            inputs: BTreeMap::new(),
            outputs,
            units: units(&[("rows.nominal", "rows.unit"), ("rows.uncertainty", "rows.unit")]),
            result: cmp,
        };
        self.ws.write_record("budget_table.json", &record)?;
        self.ws.stamp("reproduce-budget-table")
    }

    fn channel_limits(&self) -> CliResult<()> {
        let lim = compute_channel_limits(self.cfg)?;
        let mut body = String::from("lambda_m,g_limit_electron,g_limit_proton\n");
        for ((l, e), p) in lim.electron.lambdas.iter().zip(&lim.electron.g_limit).zip(&lim.proton.g_limit) {
            body.push_str(&format!("{l:.9e},{e:.9e},{p:.9e}\n"));
        }
        let mut outputs = BTreeMap::new();
        outputs.insert("channel_limits.csv".into(), self.ws.write_csv("channel_limits.csv", &body)?);
        if self.ws.svg {
            let plot = Plot {
                title: "Electron and proton channel limits",
                x_label: "lambda (m)",
                y_label: "g limit",
                x_scale: Scale::Log,
                y_scale: Scale::Log,
                series: vec![
                    Series { label: "e-N", x: &lim.electron.lambdas, y: &lim.electron.g_limit },
                    Series { label: "p-N", x: &lim.proton.lambdas, y: &lim.proton.g_limit },
                ],
            };
            outputs.insert("channel_limits.svg".into(), self.ws.write_text("channel_limits.svg", &plot.render())?);
        }
        if !self.quiet {
            println!(
                "reproduce channel-limits: e-N limit {:.3e} at {} m, p-N {:.3e}",
                lim.electron_limit_at_ref,
                lim.lambda_ref_m,
                lim.electron_limit_at_ref * Channel::electron_rb().zeta / Channel::proton_rb().zeta
            );
        }
        let record = Record {
            stage: "reproduce-channel-limits".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.ws.config_hash.clone(),
            inputs: BTreeMap::new(),
            outputs,
            units: units(&[("lambda_ref_m", "m"), ("electron.lambdas", "m"), ("proton.lambdas", "m")]),
            result: lim,
        };
        self.ws.write_record("channel_limits.json", &record)?;
        self.ws.stamp("reproduce-channel-limits")
    }
}
