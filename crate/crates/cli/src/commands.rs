//! One function per subcommand. Each reads its inputs from the output tree
//! (or the configured survey file), calls into `fsu_demand` and stages its
//! outputs under a directory named after the command.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use fsu_demand::survey::{write_survey_csv, DatasetManifest};
use fsu_demand::{
    apply_measurement_model, build_demand_dataset, compare_elasticities_with, compute_elasticities,
    cramer_two_sample, fit_calibrated, fit_la_aids, generate, gini_significance_compare,
    grid_search_with, inequality, item_expenditures, ks_two_sample, parse_survey_csv,
    predict_shares, state_effects_for_parameters, uniformize_prices, AidsParameters,
    CalibrationSpec, Decision, DemandDataset, FitOptions, GiniDecision, GiniFormula, StateEffects,
    SurveySchema, TestResult,
};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SelectLoss};
use crate::error::CliError;
use crate::output::Stage;

pub const SIMULATE: &str = "simulate";
pub const INGEST: &str = "ingest";
pub const UNIFORMIZE: &str = "uniformize";
pub const FIT: &str = "fit";
pub const STATE_EFFECTS: &str = "state-effects";
pub const COMPARE_SHARES: &str = "compare-shares";
pub const MECOR_CV: &str = "mecor-cv";
pub const INEQUALITY: &str = "inequality";
pub const ELASTICITIES: &str = "elasticities";

const ORIGINAL: &str = "original";
const UNIFORM: &str = "uniform";

/// A validated config plus its hash, shared by every command of a run.
pub struct Context {
    pub config: PipelineConfig,
    pub config_hash: String,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Self, CliError> {
        config.validate()?;
        let config_hash = config.hash();
        Ok(Context {
            config,
            config_hash,
        })
    }

    fn root(&self) -> &Path {
        &self.config.output_dir
    }

    fn stage(&self, command: &str) -> Result<Stage, CliError> {
        Stage::open(self.root(), command)
    }

    fn exists(&self, rel: &str) -> bool {
        self.root().join(rel).is_file()
    }

    fn require(&self, rel: &str, producer: &'static str) -> Result<(), CliError> {
        if self.exists(rel) {
            Ok(())
        } else {
            Err(CliError::MissingArtifact {
                path: rel.to_string(),
                producer,
            })
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            share_basis: self.config.share_basis,
            weighted: self.config.weighted,
            reference_item: None,
        }
    }
}

fn dataset_rel(label: &str) -> String {
    match label {
        ORIGINAL => format!("{INGEST}/{ORIGINAL}.csv"),
        _ => format!("{UNIFORMIZE}/{UNIFORM}.csv"),
    }
}

fn params_rel(label: &str) -> String {
    format!("{FIT}/{label}_params.json")
}

fn effects_rel(label: &str) -> String {
    format!("{STATE_EFFECTS}/{label}.json")
}

fn producer_of_dataset(label: &str) -> &'static str {
    if label == ORIGINAL {
        INGEST
    } else {
        UNIFORMIZE
    }
}

fn load_dataset(ctx: &Context, stage: &mut Stage, label: &str) -> Result<DemandDataset, CliError> {
    let rel = dataset_rel(label);
    ctx.require(&rel, producer_of_dataset(label))?;
    let path = stage.input(&rel)?;
    Ok(DemandDataset::read_csv_file(path)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let value =
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(fsu_demand::Error::from)?;
    Ok(value)
}

fn load_params(ctx: &Context, stage: &mut Stage, label: &str) -> Result<AidsParameters, CliError> {
    let rel = params_rel(label);
    ctx.require(&rel, FIT)?;
    read_json(&stage.input(&rel)?)
}

fn load_effects(ctx: &Context, stage: &mut Stage, label: &str) -> Result<StateEffects, CliError> {
    let rel = effects_rel(label);
    ctx.require(&rel, STATE_EFFECTS)?;
    read_json(&stage.input(&rel)?)
}

/// Datasets present in the tree: always the original, plus the uniform one once built.
fn available_labels(ctx: &Context) -> Vec<&'static str> {
    let mut labels = vec![ORIGINAL];
    if ctx.exists(&dataset_rel(UNIFORM)) {
        labels.push(UNIFORM);
    }
    labels
}

pub fn cmd_simulate(ctx: &Context) -> Result<(), CliError> {
    let sim = ctx
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [simulate] section".into()))?;
    let mut stage = ctx.stage(SIMULATE)?;
    let (mut data, truth) = generate(sim)?;
    stage.seed("simulate", sim.seed);
    if let Some(m) = &ctx.config.measurement {
        let seed = ctx
            .config
            .measurement_seed()
            .expect("simulate section present");
        data = apply_measurement_model(&data, &m.spec(), m.noise(), seed)?;
        stage.seed("measurement", seed);
    }
    stage.write_with("survey.csv", |w| {
        Ok(write_survey_csv(&data.to_records(), &data.items, w)?)
    })?;
    stage.write_json("ground_truth.json", &truth)?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

pub fn cmd_ingest(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(INGEST)?;
    let path: PathBuf = match &ctx.config.input {
        Some(p) => {
            stage.external_input(p)?;
            p.clone()
        }
        None => {
            let rel = format!("{SIMULATE}/survey.csv");
            ctx.require(&rel, SIMULATE)?;
            stage.input(&rel)?
        }
    };
    let items = ctx.config.item_list();
    let schema = SurveySchema {
        columns: ctx.config.columns.clone(),
        items: items.clone(),
    };
    let parsed = parse_survey_csv(&path, &schema)?;
    let (data, report) = build_demand_dataset(&parsed.records, &items)?;
    stage.write_with(&format!("{ORIGINAL}.csv"), |w| Ok(data.write_csv(w)?))?;
    stage.write_json(
        &format!("{ORIGINAL}.json"),
        &DatasetManifest {
            items: data.items.clone(),
            n_rows: data.len(),
            build: Some(report),
            strategy: None,
            rejected_rows: parsed.rejects.len(),
        },
    )?;
    stage.write_with("rejects.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["line", "hhid", "reason"])
            .map_err(fsu_demand::Error::from)?;
        for r in &parsed.rejects {
            c.write_record([r.line.to_string(), r.hhid.clone(), r.reason.clone()])
                .map_err(fsu_demand::Error::from)?;
        }
        c.flush().map_err(|e| CliError::io("rejects.csv", e))
    })?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

pub fn cmd_uniformize(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(UNIFORMIZE)?;
    let data = load_dataset(ctx, &mut stage, ORIGINAL)?;
    let uniform = uniformize_prices(&data, ctx.config.strategy);
    stage.write_with(&format!("{UNIFORM}.csv"), |w| Ok(uniform.write_csv(w)?))?;
    stage.write_json(
        &format!("{UNIFORM}.json"),
        &DatasetManifest {
            items: uniform.items.clone(),
            n_rows: uniform.len(),
            build: None,
            strategy: Some(ctx.config.strategy),
            rejected_rows: 0,
        },
    )?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitSummary {
    n_households: usize,
    r_squared: Vec<f64>,
    max_restriction_violation: f64,
}

pub fn cmd_fit(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(FIT)?;
    let options = ctx.fit_options();
    let mut summary = BTreeMap::new();
    for label in available_labels(ctx) {
        let data = load_dataset(ctx, &mut stage, label)?;
        let report = fit_la_aids(&data, &options)?;
        stage.write_json(&format!("{label}_params.json"), &report.parameters)?;
        stage.write_with(&format!("{label}_residuals.csv"), |w| {
            Ok(report.write_residuals_csv(&data, w)?)
        })?;
        summary.insert(
            label,
            FitSummary {
                n_households: data.len(),
                r_squared: report.r_squared.clone(),
                max_restriction_violation: report
                    .parameters
                    .restriction_residuals()
                    .max_violation(),
            },
        );
    }
    stage.write_json("summary.json", &summary)?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

fn write_effects_csv<W: Write>(fx: &StateEffects, w: W) -> Result<(), CliError> {
    let mut c = csv::Writer::from_writer(w);
    let mut header = vec!["state".to_string(), "observations".to_string()];
    header.extend(fx.items.iter().map(|i| format!("effect_{i}")));
    c.write_record(&header).map_err(fsu_demand::Error::from)?;
    for (state, effect) in &fx.effects {
        let mut row = vec![state.clone(), fx.observations[state].to_string()];
        row.extend(effect.iter().map(f64::to_string));
        c.write_record(&row).map_err(fsu_demand::Error::from)?;
    }
    c.flush().map_err(|e| CliError::io("state effects", e))
}

pub fn cmd_state_effects(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(STATE_EFFECTS)?;
    for label in available_labels(ctx) {
        let data = load_dataset(ctx, &mut stage, label)?;
        let params = load_params(ctx, &mut stage, label)?;
        let fx = state_effects_for_parameters(&params, &data, ctx.config.weighted)?;
        stage.write_json(&format!("{label}.json"), &fx)?;
        stage.write_with(&format!("{label}.csv"), |w| write_effects_csv(&fx, w))?;
    }
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

/// One row of the per-item share comparison.
#[derive(Debug, Clone, Serialize)]
pub struct KsRow {
    pub item: String,
    pub d_without_state_effects: f64,
    pub p_without_state_effects: f64,
    pub decision_without_state_effects: Decision,
    pub d_with_state_effects: f64,
    pub p_with_state_effects: f64,
    pub decision_with_state_effects: Decision,
}

#[derive(Debug, Serialize)]
struct CramerReport {
    without_state_effects: TestResult,
    with_state_effects: TestResult,
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

fn decision_label(d: Decision) -> &'static str {
    match d {
        Decision::Accept => "accept",
        Decision::Reject => "reject",
    }
}

pub fn cmd_compare_shares(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(COMPARE_SHARES)?;
    let level = ctx.config.level;
    let mut plain = Vec::new();
    let mut shifted = Vec::new();
    let mut items = Vec::new();
    for label in [ORIGINAL, UNIFORM] {
        let data = load_dataset(ctx, &mut stage, label)?;
        let params = load_params(ctx, &mut stage, label)?;
        let fx = load_effects(ctx, &mut stage, label)?;
        plain.push(predict_shares(&params, &data, None)?);
        shifted.push(predict_shares(&params, &data, Some(&fx))?);
        items = data.items;
    }

    let mut rows = Vec::with_capacity(items.len());
    for (k, item) in items.iter().enumerate() {
        let without = ks_two_sample(&column(&plain[0], k), &column(&plain[1], k), level)?;
        let with = ks_two_sample(&column(&shifted[0], k), &column(&shifted[1], k), level)?;
        rows.push(KsRow {
            item: item.clone(),
            d_without_state_effects: without.statistic,
            p_without_state_effects: without.p_value,
            decision_without_state_effects: without.decision,
            d_with_state_effects: with.statistic,
            p_with_state_effects: with.p_value,
            decision_with_state_effects: with.decision,
        });
    }
    stage.write_json("ks_table.json", &rows)?;
    stage.write_with("ks_table.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "item",
            "d_without",
            "p_without",
            "decision_without",
            "d_with",
            "p_with",
            "decision_with",
        ])
        .map_err(fsu_demand::Error::from)?;
        for r in &rows {
            c.write_record([
                r.item.clone(),
                r.d_without_state_effects.to_string(),
                r.p_without_state_effects.to_string(),
                decision_label(r.decision_without_state_effects).to_string(),
                r.d_with_state_effects.to_string(),
                r.p_with_state_effects.to_string(),
                decision_label(r.decision_with_state_effects).to_string(),
            ])
            .map_err(fsu_demand::Error::from)?;
        }
        c.flush().map_err(|e| CliError::io("ks_table.csv", e))
    })?;

    let perms = ctx.config.cramer_permutations;
    let seed = ctx.config.cramer_seed();
    let cramer = CramerReport {
        without_state_effects: cramer_two_sample(&plain[0], &plain[1], perms, seed, level)?,
        with_state_effects: cramer_two_sample(&shifted[0], &shifted[1], perms, seed, level)?,
    };
    stage.seed("cramer", seed);
    stage.write_json("cramer.json", &cramer)?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct CorrectedFit<'a> {
    selected_by: SelectLoss,
    spec: CalibrationSpec,
    parameters: &'a AidsParameters,
}

pub fn cmd_mecor_cv(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(MECOR_CV)?;
    let data = load_dataset(ctx, &mut stage, ORIGINAL)?;
    let options = ctx.fit_options();
    let seed = ctx.config.cv_seed();
    let result = grid_search_with(
        &data,
        &ctx.config.grid_specs(),
        ctx.config.folds,
        seed,
        &options,
    )?;
    stage.seed("cv", seed);
    stage.write_with("cv_grid.csv", |w| Ok(result.write_csv(w)?))?;
    stage.write_json("cv_result.json", &result)?;
    let best = match ctx.config.select_loss {
        SelectLoss::L1 => result.best_l1,
        SelectLoss::L2 => result.best_l2,
    }
    .ok_or_else(|| fsu_demand::Error::Estimation("every grid point failed".into()))?;
    let fit = fit_calibrated(&data, &best, &options)?;
    stage.write_json(
        "corrected_params.json",
        &CorrectedFit {
            selected_by: ctx.config.select_loss,
            spec: best,
            parameters: &fit.parameters,
        },
    )?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

/// A row of the Gini table: raw Gini of each dataset and the significance gap.
#[derive(Debug, Clone, Serialize)]
pub struct GiniRow {
    pub item: String,
    pub gini_original: f64,
    pub gini_uniform: f64,
    pub phi_gap: f64,
    pub decision: GiniDecision,
    pub t_original: f64,
    pub t_uniform: f64,
}

pub fn cmd_inequality(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(INEQUALITY)?;
    let original = load_dataset(ctx, &mut stage, ORIGINAL)?;
    let uniform = load_dataset(ctx, &mut stage, UNIFORM)?;
    let weights = |d: &DemandDataset| -> Option<Vec<f64>> {
        ctx.config
            .weighted
            .then(|| d.households.iter().map(|h| h.weight).collect())
    };
    let (w_o, w_u) = (weights(&original), weights(&uniform));

    let mut rows = Vec::with_capacity(original.n_items());
    for item in &original.items {
        let e_o = item_expenditures(&original, item)?;
        let e_u = item_expenditures(&uniform, item)?;
        for (label, sample, w) in [(ORIGINAL, &e_o, &w_o), (UNIFORM, &e_u, &w_u)] {
            let curve = inequality::lorenz_curve_weighted(sample, w.as_deref())?;
            stage.write_with(&format!("lorenz/{label}_{item}.csv"), |f| {
                Ok(curve.write_csv(f)?)
            })?;
        }
        let g_o = inequality::gini_index_with(&e_o, w_o.as_deref(), GiniFormula::Standard)?;
        let g_u = inequality::gini_index_with(&e_u, w_u.as_deref(), GiniFormula::Standard)?;
        let cmp = gini_significance_compare(&e_o, &e_u, ctx.config.cross_ecdf)?;
        rows.push(GiniRow {
            item: item.clone(),
            gini_original: g_o.gini,
            gini_uniform: g_u.gini,
            phi_gap: cmp.phi_gap,
            decision: cmp.decision,
            t_original: cmp.t1,
            t_uniform: cmp.t2,
        });
    }
    stage.write_with("gini_table.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["item", "data1", "data2", "phi_gap", "decision"])
            .map_err(fsu_demand::Error::from)?;
        for r in &rows {
            let decision = match r.decision {
                GiniDecision::Same => "same",
                GiniDecision::Different => "different",
            };
            c.write_record([
                r.item.clone(),
                r.gini_original.to_string(),
                r.gini_uniform.to_string(),
                r.phi_gap.to_string(),
                decision.to_string(),
            ])
            .map_err(fsu_demand::Error::from)?;
        }
        c.flush().map_err(|e| CliError::io("gini_table.csv", e))
    })?;
    stage.write_json("gini_table.json", &rows)?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

pub fn cmd_elasticities(ctx: &Context) -> Result<(), CliError> {
    let mut stage = ctx.stage(ELASTICITIES)?;
    let mut sets = Vec::new();
    for label in [ORIGINAL, UNIFORM] {
        let data = load_dataset(ctx, &mut stage, label)?;
        let params = load_params(ctx, &mut stage, label)?;
        let set = compute_elasticities(&params, &data.mean_shares(ctx.config.weighted))?;
        stage.write_with(&format!("marshallian_{label}.csv"), |w| {
            Ok(set.write_matrix_csv(&set.marshallian, w)?)
        })?;
        stage.write_with(&format!("hicksian_{label}.csv"), |w| {
            Ok(set.write_matrix_csv(&set.hicksian, w)?)
        })?;
        sets.push(set);
    }
    let cmp = compare_elasticities_with(&sets[0], &sets[1], ctx.config.elasticity_threshold)?;
    stage.write_with("expenditure.csv", |w| {
        Ok(cmp.write_expenditure_csv(&sets[0], &sets[1], w)?)
    })?;
    stage.write_json("summary.json", &cmp)?;
    stage.commit(&ctx.config_hash)?;
    Ok(())
}

/// Every stage in dependency order; `simulate` runs only when no input file is configured.
pub fn cmd_run(ctx: &Context) -> Result<(), CliError> {
    if ctx.config.input.is_none() {
        cmd_simulate(ctx)?;
    }
    cmd_ingest(ctx)?;
    cmd_uniformize(ctx)?;
    cmd_fit(ctx)?;
    cmd_state_effects(ctx)?;
    cmd_compare_shares(ctx)?;
    cmd_mecor_cv(ctx)?;
    cmd_inequality(ctx)?;
    cmd_elasticities(ctx)?;
    Ok(())
}
