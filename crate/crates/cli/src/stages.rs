//! Pipeline stages. Each has a pure `compute_*` half, usable in-process,
//! and a `run_*` half that reads upstream records and writes artifacts.

use std::collections::BTreeMap;

use pvsearch_core::field::{identical_blocks, uniform_times, FieldEngine, ConvergenceReport};
use pvsearch_core::harmonics::{
    block_statistics, fourier_coefficients, BlockEstimate, Demodulator, GaussianFit, Histogram,
};
use pvsearch_core::inference::{
    budget_csv, build_budget, combine_budget, confidence_limit, exclusion_curve, one_sided_z, weighted_amplitude,
    ConversionAnchor, ErrorBudgetRow, ExclusionCurve,
};
use pvsearch_core::response::{
    apply_response, bandwidth_3db, rejection_improvement, Regime, RejectionSummary, ResponseCurve,
};
use pvsearch_core::series::log_grid;
use pvsearch_core::spectrum::{welch, Psd};
use pvsearch_core::synth::{synthesize, total_attenuation, SyntheticRun};
use pvsearch_core::{Error as CoreError, FieldTimeSeries, ForceRange};
use serde::{Deserialize, Serialize};

use crate::artifact::{units, Record, Workspace};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::svg::{Plot, Scale, Series};

pub const FIELD_JSON: &str = "field.json";
pub const RESPONSE_JSON: &str = "response.json";
pub const SYNTH_JSON: &str = "synth.json";
pub const SYNTH_CSV: &str = "synth.csv";
pub const ANALYSIS_JSON: &str = "analysis.json";
pub const BUDGET_JSON: &str = "budget.json";
pub const LIMITS_JSON: &str = "limits.json";
pub const LIMITS_CSV: &str = "limits.csv";

/// Field-per-coupling coefficients of the retained harmonics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSummary {
    pub c: Vec<f64>,
    pub a1_t: f64,
    pub phi_rad: f64,
    pub weighted_amplitude_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub lambda_m: f64,
    pub channel: String,
    pub rotation_freq_hz: f64,
    pub modulation_freq_hz: f64,
    pub symmetry_order: usize,
    pub start_angle_rad: f64,
    pub record_samples: usize,
    pub record_sample_rate_hz: f64,
    /// Largest non-DC line of the emitted record; absent for a zero field.
    pub dominant_line_hz: Option<f64>,
    pub convergence: ConvergenceReport,
    /// One rotor period, uniformly sampled from t = 0.
    pub period_b_per_coupling_t: Vec<f64>,
    /// Absent when the field vanishes.
    pub template: Option<TemplateSummary>,
}

pub struct SimulateOutput {
    pub summary: FieldSummary,
    pub record: FieldTimeSeries,
    pub spectrum: Psd,
}

pub fn compute_simulate(cfg: &RunConfig) -> CliResult<SimulateOutput> {
    let model = cfg.forward_model()?;
    let lambda = ForceRange::new(cfg.simulate.lambda_m)?;
    let blocks = identical_blocks(&model.rotor, &model.block);
    let engine = FieldEngine::new(model.constants);

    let quad = cfg.source.quadrature;
    let convergence = engine.check_convergence(&model.rotor, &blocks, lambda, &model.channel, 0.0, &quad)?;
    if !convergence.converged {
        return Err(CoreError::NonConvergence { achieved: convergence.relative_change, requested: quad.refinement_tolerance }.into());
    }

    let period = engine.one_period(&model.rotor, &blocks, lambda, &model.channel, model.samples_per_period)?;
    let fs = cfg.simulate.sample_rate_hz;
    let n = (cfg.simulate.duration_s * fs).round() as usize;
    let record = engine.field_time_series(&model.rotor, &blocks, lambda, &model.channel, &uniform_times(fs, n))?;
    let spectrum = welch(&record.b_per_coupling, fs, n)?;
    let nonzero = record.b_per_coupling.iter().any(|b| *b != 0.0);
    let template = match fourier_coefficients(&period, model.harmonics) {
        Ok(t) => Some(TemplateSummary { weighted_amplitude_t: weighted_amplitude(&t), c: t.c, a1_t: t.a1, phi_rad: t.phi }),
        Err(CoreError::Degenerate(_)) if !nonzero => None,
        Err(e) => return Err(e.into()),
    };
    let dominant_line_hz = if nonzero { spectrum.peak(0.5 * fs / n as f64).map(|p| p.0) } else { None };
    let summary = FieldSummary {
        lambda_m: lambda.meters(),
        channel: model.channel.name().into(),
        rotation_freq_hz: period.rotation_freq,
        modulation_freq_hz: period.modulation_freq,
        symmetry_order: period.symmetry_order,
        start_angle_rad: period.start_angle,
        record_samples: n,
        record_sample_rate_hz: fs,
        dominant_line_hz,
        convergence,
        period_b_per_coupling_t: period.b_per_coupling,
        template,
    };
    Ok(SimulateOutput { summary, record, spectrum })
}

/// Rebuilds the one-period field series a downstream stage works from.
pub fn field_from_summary(cfg: &RunConfig, s: &FieldSummary) -> CliResult<FieldTimeSeries> {
    let n = s.period_b_per_coupling_t.len();
    Ok(FieldTimeSeries {
        times: uniform_times(n as f64 * s.rotation_freq_hz, n),
        b_per_coupling: s.period_b_per_coupling_t.clone(),
        lambda: ForceRange::new(s.lambda_m)?,
        channel: cfg.channel()?,
        rotation_freq: s.rotation_freq_hz,
        modulation_freq: s.modulation_freq_hz,
        start_angle: s.start_angle_rad,
        symmetry_order: s.symmetry_order,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicResponse {
    pub k: usize,
    pub freq_hz: f64,
    pub gain_v_per_t: f64,
    pub lag_rad: f64,
    pub delay_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub hsr_resonance_hz: f64,
    pub hsr_bandwidth_hz: f64,
    pub nmr_bandwidth_hz: f64,
    pub rejection: RejectionSummary,
    pub harmonics: Vec<HarmonicResponse>,
}

pub struct RespondOutput {
    pub summary: ResponseSummary,
    pub hsr: ResponseCurve,
    pub nmr: ResponseCurve,
    /// Output over one period per unit coupling.
    pub output_t: Vec<f64>,
    pub output_v: Vec<f64>,
}

pub fn compute_respond(cfg: &RunConfig, field: &FieldTimeSeries) -> CliResult<RespondOutput> {
    let sensor = cfg.sensor()?;
    let p = sensor.params;
    let hsr_bw = bandwidth_3db(Regime::Hsr, &p)?;
    let nmr_bw = bandwidth_3db(Regime::Nmr, &p)?;
    let harmonics = (1..=cfg.analysis.harmonics)
        .map(|k| {
            let f = k as f64 * field.modulation_freq;
            Ok(HarmonicResponse { k, freq_hz: f, gain_v_per_t: sensor.gain(f), lag_rad: sensor.lag(f), delay_s: sensor.time_delay(f)? })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let hsr = ResponseCurve::sweep(Regime::Hsr, &log_grid(0.1, 100.0, 400)?, &p)?;
    let f_nmr = p.nmr_resonance();
    let nmr_freqs: Vec<f64> =
        (0..=400).map(|i| f_nmr + (i as f64 / 200.0 - 1.0) * 5.0 * nmr_bw).filter(|f| *f > 0.0).collect();
    let nmr = ResponseCurve::sweep(Regime::Nmr, &nmr_freqs, &p)?;
    let out = apply_response(field, 1.0, &sensor)?;
    Ok(RespondOutput {
        summary: ResponseSummary {
            hsr_resonance_hz: p.hsr_resonance(),
            hsr_bandwidth_hz: hsr_bw,
            nmr_bandwidth_hz: nmr_bw,
            rejection: rejection_improvement(&p, 0.3e-9, 10e-9, 200)?,
            harmonics,
        },
        hsr,
        nmr,
        output_t: out.times,
        output_v: out.volts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub truth_coupling: f64,
    pub seed: u64,
    pub t0_s: f64,
    pub sample_rate_hz: f64,
    pub samples: usize,
    pub encoder_start_angle_rad: f64,
    pub rotation_freq_hz: f64,
    pub modulation_freq_hz: f64,
    pub symmetry_order: usize,
    pub white_psd_v_rthz: f64,
    pub total_attenuation: f64,
}

pub fn compute_synth(cfg: &RunConfig, field: &FieldTimeSeries) -> CliResult<(SynthSummary, SyntheticRun)> {
    let noise = cfg.noise_model()?;
    let run = synthesize(field, cfg.synth.g_true, &cfg.sensor()?, &noise, &cfg.synth_spec())?;
    let summary = SynthSummary {
        truth_coupling: run.truth_coupling,
        seed: run.seed,
        t0_s: run.t0,
        sample_rate_hz: run.sample_rate,
        samples: run.len(),
        encoder_start_angle_rad: run.encoder_start_angle,
        rotation_freq_hz: run.rotation_freq,
        modulation_freq_hz: run.modulation_freq,
        symmetry_order: run.symmetry_order,
        white_psd_v_rthz: noise.white_psd,
        total_attenuation: total_attenuation(&noise)?,
    };
    Ok((summary, run))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub blocks: usize,
    pub block_length_s: f64,
    pub harmonics: usize,
    /// Bare forward-model coupling at the simulated range.
    pub g_forward: f64,
    pub g_forward_stat: f64,
    /// c²-weighted field amplitude.
    pub b_hat_t: f64,
    pub b_stat_t: f64,
    /// `anchored` or `forward`.
    pub conversion: String,
    pub lambda_ref_m: f64,
    pub coupling_per_tesla: f64,
    /// Reported coupling and its statistical error.
    pub g: f64,
    pub g_stat: f64,
    pub histogram: Option<Histogram>,
    pub fit: Option<GaussianFit>,
}

/// Coupling per tesla of weighted field amplitude at the reference range.
pub fn coupling_per_tesla(cfg: &RunConfig) -> CliResult<f64> {
    if cfg.inference.anchored {
        let a = cfg.inference.anchor;
        Ok(a.g / a.b)
    } else {
        Ok(1.0 / cfg.forward_model()?.weighted_amplitude(cfg.lambda_ref()?)?)
    }
}

pub fn compute_analyze(
    cfg: &RunConfig,
    field: &FieldTimeSeries,
    run: &SyntheticRun,
) -> CliResult<(AnalysisSummary, Vec<BlockEstimate>)> {
    let template = fourier_coefficients(field, cfg.analysis.harmonics)?;
    let amplitude = weighted_amplitude(&template);
    let demod = Demodulator::new(template, cfg.sensor()?)?;
    let blocks = demod.analyze_run(run, cfg.analysis.block_length_s)?;
    let (mean, stat, histogram, fit) = match blocks.as_slice() {
        [] => return Err(CoreError::TooFewBlocks(0).into()),
        [only] => (only.g_hat, only.sigma, None, None),
        _ => {
            let s = block_statistics(&blocks)?;
            (s.mean, s.stat_sigma, Some(s.histogram), s.fit)
        }
    };
    let kappa = coupling_per_tesla(cfg)?;
    let (b_hat, b_stat) = (mean * amplitude, stat * amplitude.abs());
    let summary = AnalysisSummary {
        blocks: blocks.len(),
        block_length_s: blocks[0].duration,
        harmonics: cfg.analysis.harmonics,
        g_forward: mean,
        g_forward_stat: stat,
        b_hat_t: b_hat,
        b_stat_t: b_stat,
        conversion: if cfg.inference.anchored { "anchored" } else { "forward" }.into(),
        lambda_ref_m: cfg.inference.lambda_ref_m,
        coupling_per_tesla: kappa,
        g: b_hat * kappa,
        g_stat: b_stat * kappa.abs(),
        histogram,
        fit,
    };
    Ok((summary, blocks))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub lambda_ref_m: f64,
    pub g_central: f64,
    pub phase_quadrature: f64,
    pub rows: Vec<ErrorBudgetRow>,
    pub syst_total: f64,
}

pub fn compute_budget(cfg: &RunConfig, g_central: f64, phase_quadrature: f64) -> CliResult<BudgetSummary> {
    let mut ctx = cfg.budget_context(g_central.abs(), phase_quadrature)?;
    if !cfg.inference.anchored {
        ctx.anchor = ConversionAnchor { b: 1.0, g: coupling_per_tesla(cfg)? };
    }
    let rows = build_budget(&ctx)?;
    Ok(BudgetSummary {
        lambda_ref_m: ctx.lambda.meters(),
        g_central: ctx.g_central,
        phase_quadrature: ctx.phase_quadrature,
        syst_total: combine_budget(&rows),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitsSummary {
    pub channel: String,
    pub confidence: f64,
    pub z: f64,
    pub central: f64,
    pub stat: f64,
    pub syst: f64,
    pub lambda_ref_m: f64,
    pub limit_at_ref: f64,
    pub forward_amplitude_ref_t: f64,
    pub curve: ExclusionCurve,
}

/// Bound at the reference range, carried across λ by the forward model's shape.
pub fn compute_limits(cfg: &RunConfig, central: f64, stat: f64, syst: f64) -> CliResult<LimitsSummary> {
    let model = cfg.forward_model()?;
    let conf = cfg.inference.confidence;
    let limit = confidence_limit(central, stat, syst, conf)?;
    let a_ref = model.weighted_amplitude(cfg.lambda_ref()?)?;
    let curve = exclusion_curve(limit * a_ref.abs(), &cfg.lambda_grid()?, &model, conf)?;
    Ok(LimitsSummary {
        channel: model.channel.name().into(),
        confidence: conf,
        z: one_sided_z(conf),
        central,
        stat,
        syst,
        lambda_ref_m: cfg.inference.lambda_ref_m,
        limit_at_ref: limit,
        forward_amplitude_ref_t: a_ref,
        curve,
    })
}

/// Shared state for the file-backed stages.
pub struct Stage<'a> {
    pub cfg: &'a RunConfig,
    pub ws: &'a Workspace,
    pub quiet: bool,
}

fn csv_rows<'a>(header: &str, rows: impl Iterator<Item = String> + 'a) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

impl Stage<'_> {
    fn record<T>(&self, stage: &str, inputs: BTreeMap<String, String>, outputs: BTreeMap<String, String>, u: &[(&str, &str)], result: T) -> Record<T> {
        Record {
            stage: stage.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.ws.config_hash.clone(),
            inputs,
            outputs,
            units: units(u),
            result,
        }
    }

    fn say(&self, msg: String) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn svg(&self, name: &str, plot: Plot<'_>, outputs: &mut BTreeMap<String, String>) -> CliResult<()> {
        if self.ws.svg {
            outputs.insert(name.into(), self.ws.write_text(name, &plot.render())?);
        }
        Ok(())
    }

    fn load_field(&self) -> CliResult<(FieldTimeSeries, String)> {
        let (rec, hash) = self.ws.load_record::<FieldSummary>(FIELD_JSON, "simulate")?;
        Ok((field_from_summary(self.cfg, &rec.result)?, hash))
    }

    pub fn simulate(&self) -> CliResult<()> {
        let out = compute_simulate(self.cfg)?;
        let mut outputs = BTreeMap::new();
        let rec = &out.record;
        let body = csv_rows("t_s,b_per_coupling_T", rec.times.iter().zip(&rec.b_per_coupling).map(|(t, b)| format!("{t:.9e},{b:.9e}")));
        outputs.insert("field.csv".into(), self.ws.write_csv("field.csv", &body)?);
        let psd = &out.spectrum;
        let body = csv_rows("frequency_hz,psd_T2_per_Hz", psd.freqs.iter().zip(&psd.density).map(|(f, d)| format!("{f:.9e},{d:.9e}")));
        outputs.insert("field_spectrum.csv".into(), self.ws.write_csv("field_spectrum.csv", &body)?);
        let shown = rec.len().min((rec.sample_rate()? / rec.rotation_freq * 2.0).ceil() as usize).max(2);
        self.svg(
            "field.svg",
            Plot {
                title: "Field per unit coupling",
                x_label: "t (s)",
                y_label: "b (T)",
                x_scale: Scale::Linear,
                y_scale: Scale::Linear,
                series: vec![Series { label: "b", x: &rec.times[..shown], y: &rec.b_per_coupling[..shown] }],
            },
            &mut outputs,
        )?;
        let line = out.summary.dominant_line_hz;
        let record = self.record(
            "simulate",
            BTreeMap::new(),
            outputs,
            &[
                ("lambda_m", "m"),
                ("rotation_freq_hz", "Hz"),
                ("modulation_freq_hz", "Hz"),
                ("start_angle_rad", "rad"),
                ("record_sample_rate_hz", "Hz"),
                ("dominant_line_hz", "Hz"),
                ("period_b_per_coupling_t", "T"),
                ("template.a1_t", "T"),
                ("template.phi_rad", "rad"),
                ("template.weighted_amplitude_t", "T"),
            ],
            out.summary,
        );
        self.ws.write_record(FIELD_JSON, &record)?;
        self.say(format!(
            "simulate: {} samples, dominant line {}",
            rec.len(),
            line.map_or("none (zero field)".into(), |f| format!("{f:.2} Hz"))
        ));
        self.ws.stamp("simulate")
    }

    pub fn respond(&self) -> CliResult<()> {
        let (field, field_hash) = self.load_field()?;
        let out = compute_respond(self.cfg, &field)?;
        let mut outputs = BTreeMap::new();
        let nmr = out.nmr.to_csv();
        let body = out.hsr.to_csv() + nmr.split_once('\n').map_or("", |(_, rest)| rest);
        outputs.insert("response_curve.csv".into(), self.ws.write_csv("response_curve.csv", &body)?);
        let body = csv_rows("t_s,output_V_per_coupling", out.output_t.iter().zip(&out.output_v).map(|(t, v)| format!("{t:.9e},{v:.9e}")));
        outputs.insert("response_output.csv".into(), self.ws.write_csv("response_output.csv", &body)?);
        self.svg(
            "response.svg",
            Plot {
                title: "Normalized response",
                x_label: "frequency (Hz)",
                y_label: "A / A_peak",
                x_scale: Scale::Log,
                y_scale: Scale::Log,
                series: vec![Series { label: "HSR", x: &out.hsr.freqs, y: &out.hsr.amplitude }],
            },
            &mut outputs,
        )?;
        let s = &out.summary;
        self.say(format!(
            "respond: HSR width {:.2} Hz, NMR width {:.3e} Hz, rejection gain {:.1} dB",
            s.hsr_bandwidth_hz, s.nmr_bandwidth_hz, s.rejection.improvement_db
        ));
        let record = self.record(
            "respond",
            [(FIELD_JSON.to_string(), field_hash)].into(),
            outputs,
            &[
                ("hsr_resonance_hz", "Hz"),
                ("hsr_bandwidth_hz", "Hz"),
                ("nmr_bandwidth_hz", "Hz"),
                ("rejection.delta_b", "T"),
                ("rejection.improvement_db", "dB"),
                ("harmonics.freq_hz", "Hz"),
                ("harmonics.gain_v_per_t", "V/T"),
                ("harmonics.lag_rad", "rad"),
                ("harmonics.delay_s", "s"),
            ],
            out.summary,
        );
        self.ws.write_record(RESPONSE_JSON, &record)?;
        self.ws.stamp("respond")
    }

    pub fn synth(&self) -> CliResult<()> {
        let (field, field_hash) = self.load_field()?;
        let (_, response_hash) = self.ws.load_record::<ResponseSummary>(RESPONSE_JSON, "respond")?;
        let (summary, run) = compute_synth(self.cfg, &field)?;
        let mut outputs = BTreeMap::new();
        outputs.insert(SYNTH_CSV.into(), self.ws.write_csv(SYNTH_CSV, &run.to_csv())?);
        let shown = run.len().min((2.0 * run.sample_rate) as usize).max(2);
        let t: Vec<f64> = (0..shown).map(|i| run.time(i)).collect();
        self.svg(
            "synth.svg",
            Plot {
                title: "Synthetic output (first 2 s)",
                x_label: "t (s)",
                y_label: "output (V)",
                x_scale: Scale::Linear,
                y_scale: Scale::Linear,
                series: vec![Series { label: "output", x: &t, y: &run.output[..shown] }],
            },
            &mut outputs,
        )?;
        self.say(format!("synth: {} samples at {} Hz, g_true = {:e}", run.len(), run.sample_rate, run.truth_coupling));
        let record = self.record(
            "synth",
            [(FIELD_JSON.to_string(), field_hash), (RESPONSE_JSON.to_string(), response_hash)].into(),
            outputs,
            &[
                ("t0_s", "s"),
                ("sample_rate_hz", "Hz"),
                ("encoder_start_angle_rad", "rad"),
                ("rotation_freq_hz", "Hz"),
                ("modulation_freq_hz", "Hz"),
                ("white_psd_v_rthz", "V/sqrt(Hz)"),
            ],
            summary,
        );
        self.ws.write_record(SYNTH_JSON, &record)?;
        self.ws.stamp("synth")
    }

    pub fn analyze(&self) -> CliResult<()> {
        let (field, field_hash) = self.load_field()?;
        let (synth, synth_hash) = self.ws.load_record::<SynthSummary>(SYNTH_JSON, "synth")?;
        let (rows, csv_hash) = self.ws.load_csv(SYNTH_CSV, &synth)?;
        let s = &synth.result;
        if rows.len() != s.samples || rows.iter().any(|r| r.len() != 2) {
            return Err(CliError::stale(self.ws.path(SYNTH_CSV), "row count or width differs from the synth record"));
        }
        let run = SyntheticRun {
            t0: s.t0_s,
            sample_rate: s.sample_rate_hz,
            output: rows.iter().map(|r| r[1]).collect(),
            truth_coupling: s.truth_coupling,
            seed: s.seed,
            rotation_freq: s.rotation_freq_hz,
            modulation_freq: s.modulation_freq_hz,
            symmetry_order: s.symmetry_order,
            encoder_start_angle: s.encoder_start_angle_rad,
        };
        let (summary, blocks) = compute_analyze(self.cfg, &field, &run)?;
        let mut outputs = BTreeMap::new();
        let body = csv_rows(
            "block,start_s,duration_s,g_hat,sigma",
            blocks.iter().map(|b| format!("{},{:.9e},{:.9e},{:.9e},{:.9e}", b.block_index, b.start, b.duration, b.g_hat, b.sigma)),
        );
        outputs.insert("blocks.csv".into(), self.ws.write_csv("blocks.csv", &body)?);
        self.say(format!(
            "analyze: {} blocks, g = {:.3e} ± {:.3e} ({}), b = {:.3e} ± {:.3e} T",
            summary.blocks, summary.g, summary.g_stat, summary.conversion, summary.b_hat_t, summary.b_stat_t
        ));
        let record = self.record(
            "analyze",
            [
                (FIELD_JSON.to_string(), field_hash),
                (SYNTH_JSON.to_string(), synth_hash),
                (SYNTH_CSV.to_string(), csv_hash),
            ]
            .into(),
            outputs,
            &[
                ("block_length_s", "s"),
                ("b_hat_t", "T"),
                ("b_stat_t", "T"),
                ("lambda_ref_m", "m"),
                ("coupling_per_tesla", "1/T"),
            ],
            summary,
        );
        self.ws.write_record(ANALYSIS_JSON, &record)?;
        self.ws.stamp("analyze")
    }

    pub fn budget(&self) -> CliResult<()> {
        let (analysis, analysis_hash) = self.ws.load_record::<AnalysisSummary>(ANALYSIS_JSON, "analyze")?;
        let a = &analysis.result;
        let summary = compute_budget(self.cfg, a.g, a.g_stat)?;
        let mut outputs = BTreeMap::new();
        outputs.insert("budget.csv".into(), self.ws.write_csv("budget.csv", &budget_csv(&summary.rows))?);
        self.say(format!("budget: {} rows, systematic total {:.3e}", summary.rows.len(), summary.syst_total));
        let record = self.record(
            "budget",
            [(ANALYSIS_JSON.to_string(), analysis_hash)].into(),
            outputs,
            &[("lambda_ref_m", "m"), ("rows.nominal", "rows.unit"), ("rows.uncertainty", "rows.unit")],
            summary,
        );
        self.ws.write_record(BUDGET_JSON, &record)?;
        self.ws.stamp("budget")
    }

    pub fn limits(&self) -> CliResult<()> {
        let (analysis, analysis_hash) = self.ws.load_record::<AnalysisSummary>(ANALYSIS_JSON, "analyze")?;
        let (budget, budget_hash) = self.ws.load_record::<BudgetSummary>(BUDGET_JSON, "budget")?;
        let a = &analysis.result;
        let summary = compute_limits(self.cfg, a.g, a.g_stat, budget.result.syst_total)?;
        let mut outputs = BTreeMap::new();
        outputs.insert(LIMITS_CSV.into(), self.ws.write_csv(LIMITS_CSV, &summary.curve.to_csv())?);
        self.svg(
            "limits.svg",
            Plot {
                title: "Coupling limit versus range",
                x_label: "lambda (m)",
                y_label: "g limit",
                x_scale: Scale::Log,
                y_scale: Scale::Log,
                series: vec![Series { label: &summary.channel, x: &summary.curve.lambdas, y: &summary.curve.g_limit }],
            },
            &mut outputs,
        )?;
        self.say(format!(
            "limits: |g| <= {:.3e} at {} m ({:.0}% CL, {})",
            summary.limit_at_ref,
            summary.lambda_ref_m,
            100.0 * summary.confidence,
            summary.channel
        ));
        let record = self.record(
            "limits",
            [(ANALYSIS_JSON.to_string(), analysis_hash), (BUDGET_JSON.to_string(), budget_hash)].into(),
            outputs,
            &[("lambda_ref_m", "m"), ("forward_amplitude_ref_t", "T"), ("curve.lambdas", "m")],
            summary,
        );
        self.ws.write_record(LIMITS_JSON, &record)?;
        self.ws.stamp("limits")
    }

    pub fn pipeline(&self) -> CliResult<()> {
        self.simulate()?;
        self.respond()?;
        self.synth()?;
        self.analyze()?;
        self.budget()?;
        self.limits()
    }
}
