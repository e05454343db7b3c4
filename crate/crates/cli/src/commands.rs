use std::path::PathBuf;
use std::process::ExitCode;

use indexmap::IndexMap;
use serde_json::json;

use uppkit::ces::{
    compensating_variation, fit_nested_ces, identify_eta, revenue_diversion, second_choice_diversion, shares,
    CesEconomy, EconomyFile, FitConfig, FitData, ShareTable, Weighting,
};
use uppkit::effects::{analyze, cmcr, guppi, merging_elasticities, naive_cmcr, naive_guppi, AnalysisOptions};
use uppkit::harness::{generate_spatial_fixture, run_accuracy_experiment, DemandModel, HarnessConfig, SpatialConfig, SPATIAL_COVARIATES};
use uppkit::market::{load_market, validate_merger, Format, LoadedMarket, PassthroughMode};
use uppkit::passthrough::{inputs_from_market, passthrough_matrix, resolve_passthrough};
use uppkit::simulation::{ces_guppi, consistency_check, simulate, SimulationConfig, SimulationProblem};
use uppkit::table::{money, pct, Table};
use uppkit::{Error, MergerSpec, ProductId, Result};

use crate::manifest::RunManifest;
use crate::output::{emit, Report};
use crate::{Cli, Command, MarketArgs, ModelChoice, PassthroughChoice, WeightingChoice, EXIT_NONCONVERGENCE, EXIT_VALIDATION};

const DEFAULT_HARNESS_SEED: u64 = 7;

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let (name, inputs, seed) = describe(cli);
    let report = match &cli.command {
        Command::Guppi { market, naive } => cmd_guppi(market, *naive)?,
        Command::Cmcr { market } => cmd_cmcr(market)?,
        Command::Welfare { market, passthrough, eta } => cmd_welfare(market, *passthrough, *eta)?,
        Command::Simulate { market, economy, eta } => cmd_simulate(market, economy.as_ref(), *eta)?,
        Command::Passthrough { market, eta } => cmd_passthrough(market, *eta)?,
        Command::SecondChoice { economy, remove } => cmd_second_choice(economy, remove)?,
        Command::Fit {
            input,
            synthetic: _,
            weighting,
            fix_mu,
        } => cmd_fit(input.as_ref(), *weighting, *fix_mu, seed)?,
        Command::Harness {
            model,
            n,
            consumers,
            trials,
        } => cmd_harness(*model, *n, *consumers, trials.as_ref(), seed.unwrap_or(DEFAULT_HARNESS_SEED))?,
        Command::Validate { market } => cmd_validate(market)?,
    };
    let manifest = RunManifest::new(name, cli, inputs, seed);
    emit(&cli.global, &manifest, &report)?;
    Ok(ExitCode::from(report.exit))
}

/// Command name, input files and the seed recorded in the manifest.
fn describe(cli: &Cli) -> (&'static str, Vec<PathBuf>, Option<u64>) {
    let seed = cli.global.seed;
    match &cli.command {
        Command::Guppi { market, .. } => ("guppi", vec![market.market.clone()], None),
        Command::Cmcr { market } => ("cmcr", vec![market.market.clone()], None),
        Command::Welfare { market, .. } => ("welfare", vec![market.market.clone()], None),
        Command::Simulate { market, economy, .. } => {
            let mut inputs = vec![market.market.clone()];
            inputs.extend(economy.clone());
            ("simulate", inputs, None)
        }
        Command::Passthrough { market, .. } => ("passthrough", vec![market.market.clone()], None),
        Command::SecondChoice { economy, .. } => ("second-choice", vec![economy.clone()], None),
        Command::Fit { input, .. } => match input {
            Some(p) => ("fit", vec![p.clone()], None),
            None => ("fit", Vec::new(), Some(seed.unwrap_or(SpatialConfig::default().seed))),
        },
        Command::Harness { .. } => ("harness", Vec::new(), Some(seed.unwrap_or(DEFAULT_HARNESS_SEED))),
        Command::Validate { market } => ("validate", vec![market.market.clone()], None),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// The market file and the merger it describes after command-line overrides.
fn load(args: &MarketArgs) -> Result<(LoadedMarket, MergerSpec)> {
    let (loaded, merger) = load_optional(args)?;
    let merger = merger.ok_or_else(|| invalid("the market file has no merger block; pass --merge A,B"))?;
    Ok((loaded, merger))
}

fn load_optional(args: &MarketArgs) -> Result<(LoadedMarket, Option<MergerSpec>)> {
    let loaded = load_market(&args.market, Format::infer(&args.market))?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let mut merger = match (&args.merge, &loaded.merger) {
        (Some(pair), file) => {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| invalid(format!("--merge expects A,B, got `{pair}`")))?;
            let mut m = MergerSpec::new(a.trim(), b.trim());
            if let Some(f) = file {
                m.passthrough = f.passthrough.clone();
            }
            m
        }
        (None, Some(m)) => m.clone(),
        (None, None) => {
            if !args.efficiency.is_empty() {
                return Err(invalid("--efficiency needs a merger"));
            }
            return Ok((loaded, None));
        }
    };
    for e in &args.efficiency {
        match e.split_once('=') {
            Some((id, v)) => {
                let v = parse_f64(v)?;
                merger.efficiencies.insert(ProductId::new(id.trim()), v);
            }
            None => {
                let v = parse_f64(e)?;
                for id in merger.merging_products(&loaded.market) {
                    merger.efficiencies.insert(id, v);
                }
            }
        }
    }
    let violations = validate_merger(&loaded.market, &merger);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok((loaded, Some(merger)))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| invalid(format!("`{s}` is not a number")))
}

fn firm_of(loaded: &LoadedMarket, id: &ProductId) -> String {
    loaded.market.product(id).map(|p| p.firm.to_string()).unwrap_or_default()
}

fn margin_of(loaded: &LoadedMarket, id: &ProductId) -> f64 {
    loaded.market.product(id).map_or(f64::NAN, |p| p.margin)
}

fn cmd_guppi(args: &MarketArgs, naive: bool) -> Result<Report> {
    let (loaded, merger) = load(args)?;
    let (market, d) = (&loaded.market, &loaded.diversion);
    let eps = merging_elasticities(market, d, &merger)?;
    let g = guppi(market, d, &merger)?;
    let n = if naive { Some(naive_guppi(market, d, &merger)?) } else { None };
    let mut headers = vec!["product", "firm", "margin", "eps", "GUPPI"];
    if naive {
        headers.push("naive GUPPI");
    }
    let mut table = Table::new(headers);
    let mut rows = Vec::new();
    for (id, &value) in &g {
        let mut row = vec![id.to_string(), firm_of(&loaded, id), pct(margin_of(&loaded, id)), format!("{:.3}", eps[id]), pct(value)];
        let naive_value = n.as_ref().map(|n| n[id]);
        if let Some(v) = naive_value {
            row.push(pct(v));
        }
        table.push(row);
        rows.push(json!({
            "product": id,
            "firm": firm_of(&loaded, id),
            "margin": margin_of(&loaded, id),
            "efficiency": merger.efficiency(id),
            "eps": eps[id],
            "guppi": value,
            "naive_guppi": naive_value,
        }));
    }
    Ok(Report::new(json!({ "products": rows }), table))
}

fn cmd_cmcr(args: &MarketArgs) -> Result<Report> {
    let (loaded, merger) = load(args)?;
    let (market, d) = (&loaded.market, &loaded.diversion);
    let c = cmcr(market, d, &merger)?;
    let mut notes = Vec::new();
    let naive = match naive_cmcr(market, d, &merger) {
        Ok(v) => Some(v),
        Err(Error::Unsupported(msg)) => {
            notes.push(msg);
            None
        }
        Err(e) => return Err(e),
    };
    if c.ill_conditioned() {
        notes.push(format!("CMCR system is ill-conditioned (condition number {:.3e})", c.condition));
    }
    let mut headers = vec!["product", "firm", "margin", "post margin", "CMCR"];
    if naive.is_some() {
        headers.push("naive CMCR");
    }
    let mut table = Table::new(headers);
    let mut rows = Vec::new();
    for (id, &value) in &c.cmcr {
        let mut row = vec![
            id.to_string(),
            firm_of(&loaded, id),
            pct(margin_of(&loaded, id)),
            pct(c.post_margins[id]),
            pct(-value),
        ];
        let naive_value = naive.as_ref().map(|n| n[id]);
        // The naive formula already reports the reduction as a positive number.
        if let Some(v) = naive_value {
            row.push(pct(v));
        }
        table.push(row);
        rows.push(json!({
            "product": id,
            "margin": margin_of(&loaded, id),
            "post_margin": c.post_margins[id],
            "cmcr": value,
            "naive_cmcr": naive_value,
        }));
    }
    let mut report = Report::new(json!({ "products": rows, "condition": c.condition }), table);
    report.footer.push("CMCR shown as the required percentage cost reduction".to_owned());
    report.notes = notes;
    Ok(report)
}

fn cmd_welfare(args: &MarketArgs, choice: Option<PassthroughChoice>, eta: Option<f64>) -> Result<Report> {
    let (loaded, mut merger) = load(args)?;
    match choice {
        Some(PassthroughChoice::Identity) => merger.passthrough = PassthroughMode::Identity,
        Some(PassthroughChoice::Ces) => merger.passthrough = PassthroughMode::CesClosedForm,
        None => {}
    }
    let (m, caveats) = resolve_passthrough(&loaded, &merger, eta)?;
    let report = analyze(
        &loaded.market,
        &loaded.diversion,
        &merger,
        AnalysisOptions {
            naive: false,
            passthrough: Some(m),
            caveats,
        },
    )?;
    let mut out = Report::new(serde_json::to_value(&report).expect("report serializes"), report.table());
    if let Some(c) = &report.currency {
        out.footer.push(format!("amounts in {c}"));
    }
    out.notes = report.caveats.clone();
    Ok(out)
}

/// Mean `η` identified from the merging products' margins and the shares.
fn identified_eta(loaded: &LoadedMarket, merger: &MergerSpec, table: &ShareTable, notes: &mut Vec<String>) -> Result<f64> {
    let eps = merging_elasticities(&loaded.market, &loaded.diversion, merger)?;
    let id = identify_eta(table, &eps)?;
    if id.inconsistent {
        notes.push(format!(
            "per-product eta values spread by {:.3}; margins and shares are not jointly consistent with CES",
            id.spread
        ));
    }
    Ok(id.mean)
}

fn simulation_economy(
    loaded: &LoadedMarket,
    merger: &MergerSpec,
    economy: Option<&PathBuf>,
    eta: Option<f64>,
    notes: &mut Vec<String>,
) -> Result<CesEconomy> {
    match economy {
        Some(path) => {
            let file = EconomyFile::load(path)?;
            match eta.or(file.eta) {
                Some(e) => file.economy(Some(e)),
                None => {
                    // Shares do not depend on eta, so any admissible value serves to compute them.
                    let table = shares(&file.economy(Some(2.0))?);
                    let e = identified_eta(loaded, merger, &table, notes)?;
                    file.economy(Some(e))
                }
            }
        }
        None => {
            let s = loaded
                .expenditure_shares
                .as_ref()
                .ok_or_else(|| invalid("simulation needs expenditure shares in the market file or --economy FILE"))?;
            let table = s.to_share_table()?;
            let e = match eta {
                Some(e) => e,
                None => identified_eta(loaded, merger, &table, notes)?,
            };
            CesEconomy::from_shares(&table, e)
        }
    }
}

fn cmd_simulate(args: &MarketArgs, economy: Option<&PathBuf>, eta: Option<f64>) -> Result<Report> {
    let (loaded, merger) = load(args)?;
    let mut notes = Vec::new();
    let economy = simulation_economy(&loaded, &merger, economy, eta, &mut notes)?;
    let eta = economy.eta;
    let problem = SimulationProblem::new(economy, loaded.market.clone(), &merger)?;
    let g = ces_guppi(&problem)?;
    let consistency = consistency_check(&problem)?;
    let result = simulate(&problem, &SimulationConfig::default())?;
    let cv = compensating_variation(problem.economy(), &result.price_changes())?;

    let mut table = Table::new(["product", "firm", "margin", "GUPPI", "price change", "post share", "post margin", "post eps"]);
    for (p, g) in result.products.iter().zip(&g) {
        table.push([
            p.product.to_string(),
            firm_of(&loaded, &p.product),
            pct(margin_of(&loaded, &p.product)),
            pct(*g),
            pct(p.price_change),
            pct(p.post_share),
            pct(p.post_margin),
            format!("{:.3}", p.post_eps),
        ]);
    }
    let mut report = Report::new(
        json!({
            "eta": eta,
            "guppi": problem.products().iter().zip(&g).map(|(id, v)| (id.to_string(), *v)).collect::<IndexMap<_, _>>(),
            "simulation": result,
            "compensating_variation": cv,
            "consistency": consistency,
        }),
        table,
    );
    report.footer.push(format!("eta {eta:.4}"));
    report.footer.push(format!("first-order consumer harm {}", money(result.first_order_harm())));
    report.footer.push(format!("compensating variation {}", money(cv.total)));
    report.footer.push(format!(
        "solver {} after {} iterations, residual {:.2e}",
        result.method, result.iterations, result.residual_norm
    ));
    if let Some(c) = &loaded.market.currency {
        report.footer.push(format!("amounts in {c}"));
    }
    notes.extend(result.warnings.iter().cloned());
    notes.extend(consistency.warnings.iter().cloned());
    if result.non_unique {
        notes.push("restarts reached a different equilibrium; the reported one is not unique".to_owned());
    }
    report.notes = notes;
    if !result.converged {
        report.notes.push("simulation did not converge".to_owned());
        report.exit = EXIT_NONCONVERGENCE;
    }
    Ok(report)
}

fn cmd_passthrough(args: &MarketArgs, eta: Option<f64>) -> Result<Report> {
    let (loaded, merger) = load(args)?;
    let s = loaded
        .expenditure_shares
        .as_ref()
        .ok_or_else(|| Error::Unsupported("CES pass-through needs expenditure shares in the market file".to_owned()))?;
    let table = s.to_share_table()?;
    let mut notes = Vec::new();
    let eta = match eta {
        Some(e) => e,
        None => identified_eta(&loaded, &merger, &table, &mut notes)?,
    };
    let inputs = inputs_from_market(&loaded.market, &loaded.diversion, &merger, &table, eta)?;
    let m = passthrough_matrix(&inputs)?;
    let mut headers = vec!["M".to_owned()];
    headers.extend(m.order.iter().map(ToString::to_string));
    let mut out = Table::new(headers);
    for (r, id) in m.order.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend((0..m.order.len()).map(|c| format!("{:.4}", m.matrix[(r, c)])));
        out.push(row);
    }
    let mut report = Report::new(json!({ "inputs": inputs, "passthrough": m }), out);
    report.footer.push(format!("eta {eta:.4}"));
    report.notes = notes;
    Ok(report)
}

/// Signed difference in percentage points, without a negative zero.
fn points(x: f64) -> String {
    let p = 100.0 * x;
    if p.abs() < 0.005 {
        "0.00pp".to_owned()
    } else {
        format!("{p:+.2}pp")
    }
}

fn cmd_second_choice(path: &PathBuf, remove: &str) -> Result<Report> {
    let file = EconomyFile::load(path)?;
    // Diversion ratios do not depend on eta.
    let economy = file.economy(Some(file.eta.unwrap_or(2.0)))?;
    let removed = ProductId::new(remove);
    if !economy.products().contains(&removed) {
        return Err(Error::UnknownProduct(remove.to_owned()));
    }
    let second = second_choice_diversion(&economy, &removed)?;
    let marginal = revenue_diversion(&shares(&economy))?;
    let mut table = Table::new(["product", "second choice", "marginal", "difference"]);
    let mut rows = Vec::new();
    for (k, &s) in &second {
        let m = marginal.get(&removed, k).unwrap_or(f64::NAN);
        table.push([k.to_string(), pct(s), pct(m), points(s - m)]);
        rows.push(json!({ "product": k, "second_choice": s, "marginal": m }));
    }
    let mut report = Report::new(json!({ "removed": removed, "diversion": rows }), table);
    report.footer.push(format!("diversion from {removed}"));
    if economy.consumers.len() > 1 {
        report
            .notes
            .push("with several consumers second-choice and marginal diversion generally differ".to_owned());
    }
    Ok(report)
}

fn cmd_fit(input: Option<&PathBuf>, weighting: WeightingChoice, fix_mu: Option<f64>, seed: Option<u64>) -> Result<Report> {
    let (data, truth) = match input {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            let data: FitData = serde_json::from_str(&text).map_err(|e| Error::Schema {
                field: "fit data".to_owned(),
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
            (data, None)
        }
        None => {
            let config = SpatialConfig {
                seed: seed.unwrap_or(SpatialConfig::default().seed),
                ..SpatialConfig::default()
            };
            let f = generate_spatial_fixture(&config)?;
            (f.data, Some((f.true_theta.to_vec(), f.true_mu)))
        }
    };
    let mut config = FitConfig {
        weighting: match weighting {
            WeightingChoice::Unweighted => Weighting::Unweighted,
            WeightingChoice::Revenue => Weighting::Revenue,
        },
        ..FitConfig::default()
    };
    if let Some(mu) = fix_mu {
        config.initial_mu = mu;
        config.fix_mu = true;
    }
    let fit = fit_nested_ces(&data, &config)?;
    let names: Vec<String> = if data.covariate_names.len() == fit.theta.len() {
        data.covariate_names.clone()
    } else if truth.is_some() {
        SPATIAL_COVARIATES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..fit.theta.len()).map(|i| format!("theta{i}")).collect()
    };
    let mut headers = vec!["parameter", "estimate"];
    if truth.is_some() {
        headers.push("true");
    }
    let mut table = Table::new(headers);
    for (i, (name, v)) in names.iter().zip(&fit.theta).enumerate() {
        let mut row = vec![name.clone(), format!("{v:.6}")];
        if let Some((t, _)) = &truth {
            row.push(format!("{:.6}", t[i]));
        }
        table.push(row);
    }
    let mut row = vec!["mu".to_owned(), format!("{:.6}", fit.mu)];
    if let Some((_, mu)) = &truth {
        row.push(format!("{mu:.6}"));
    }
    table.push(row);
    let mut report = Report::new(
        json!({
            "covariates": names,
            "fit": fit,
            "true_theta": truth.as_ref().map(|t| t.0.clone()),
            "true_mu": truth.as_ref().map(|t| t.1),
        }),
        table,
    );
    report.footer.push(format!(
        "{} after {} iterations ({}), residual standard error {:.4e}",
        if fit.converged { "converged" } else { "stopped" },
        fit.iterations,
        fit.status,
        fit.residual_standard_error
    ));
    if !fit.converged {
        report.exit = EXIT_NONCONVERGENCE;
    }
    Ok(report)
}

fn cmd_harness(model: ModelChoice, n: usize, consumers: usize, trials: Option<&PathBuf>, seed: u64) -> Result<Report> {
    let model = match model {
        ModelChoice::Ces => DemandModel::Ces,
        ModelChoice::Logit => DemandModel::Logit,
    };
    let config = HarnessConfig {
        consumers,
        ..HarnessConfig::new(model, n, seed)
    };
    let result = run_accuracy_experiment(&config)?;
    if let Some(path) = trials {
        result.save_csv(path)?;
    }
    let s = &result.summary;
    let mut table = Table::new(["statistic", "value"]);
    table.push(["model".to_owned(), s.model.to_string()]);
    table.push(["seed".to_owned(), s.seed.to_string()]);
    table.push(["markets".to_owned(), s.n_markets.to_string()]);
    table.push(["failed markets".to_owned(), s.n_failed.to_string()]);
    table.push(["merging products".to_owned(), s.n_records.to_string()]);
    table.push(["true >= predicted".to_owned(), pct(s.fraction_true_ge_predicted)]);
    table.push(["median relative error".to_owned(), pct(s.median_relative_error)]);
    table.push(["mean true price change".to_owned(), pct(s.mean_true_pdd)]);
    table.push(["mean predicted price change".to_owned(), pct(s.mean_predicted_pdd)]);
    let mut report = Report::new(serde_json::to_value(&result).expect("result serializes"), table);
    report.csv = Some(result.to_csv_string());
    report.notes = result
        .failures
        .iter()
        .map(|f| format!("trial {} failed: {}", f.trial_id, f.reason))
        .collect();
    Ok(report)
}

fn cmd_validate(args: &MarketArgs) -> Result<Report> {
    let violations = match load_optional(args) {
        Ok(_) => Vec::new(),
        Err(Error::Invalid(v)) => v,
        Err(e) => return Err(e),
    };
    let mut table = Table::new(["subject", "problem", "value"]);
    for v in &violations {
        table.push([
            v.subject.clone(),
            v.rule.describe().to_owned(),
            v.value.map(|x| x.to_string()).unwrap_or_default(),
        ]);
    }
    let mut report = Report::new(json!({ "valid": violations.is_empty(), "violations": violations }), table);
    if violations.is_empty() {
        report.footer.push("no violations".to_owned());
    } else {
        report.footer.push(format!("{} violation(s)", violations.len()));
        report.exit = EXIT_VALIDATION;
    }
    Ok(report)
}
