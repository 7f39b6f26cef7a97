use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use propensity_core::eval::read_scored;
use propensity_core::formats::{format_sig, read_curve_csv, write_curve_csv};
use propensity_core::ingest::{
    groups_to_records, is_selected, parse_log_with_rank_max, read_pairs, write_pairs, write_records,
};
use propensity_core::simulator::RelevanceModel;
use propensity_core::{
    bootstrap_compare, em_fit, extract, fit, group_pairs, ipw_weight, ratio_estimate, ratio_matrix,
    simulate_raw_groups, EmConfig, EstimationReport, EvalReport, ExtractionConfig, KnotSpec, Method, MleConfig,
    Parametrization, SelectionMode, SimConfig, DEFAULT_BOOTSTRAP, DEFAULT_EVAL_RANKS, DEFAULT_RANK_MAX,
};
use serde::Serialize;

use crate::args::{EstimateArgs, EvaluateArgs, ExtractArgs, MethodArg, Mode, SimulateArgs, WeightsArgs};
use crate::config::FileConfig;
use crate::failure::{CmdResult, Failure};

fn open(path: &Path) -> CmdResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

fn create(path: Option<&Path>) -> CmdResult<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::io(p, e))?))),
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn write_with(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CmdResult {
    let mut w = create(path)?;
    let shown = path.map_or_else(|| Path::new("<stdout>").to_path_buf(), Path::to_path_buf);
    match f(&mut w).and_then(|()| w.flush()) {
        Err(e) if path.is_none() && e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|e| Failure::io(&shown, e)),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    write_with(Some(path), |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

pub fn simulate(args: SimulateArgs, file: &FileConfig) -> CmdResult {
    let c = &file.simulate;
    let defaults = SimConfig::default();
    let relevance = RelevanceModel::default();
    let cfg = SimConfig {
        rank_max: args.rank_max.or(c.rank_max).unwrap_or(defaults.rank_max),
        n_pairs_target: args.pairs.or(c.pairs).unwrap_or(defaults.n_pairs_target),
        rank_spread_divisor: args
            .rank_spread_divisor
            .or(c.rank_spread_divisor)
            .unwrap_or(defaults.rank_spread_divisor),
        relevance: RelevanceModel {
            base_ctr_scale: args.base_ctr_scale.or(c.base_ctr_scale).unwrap_or(relevance.base_ctr_scale),
            base_ctr_exponent: args
                .base_ctr_exponent
                .or(c.base_ctr_exponent)
                .unwrap_or(relevance.base_ctr_exponent),
            noise_sigma: args.noise_sigma.or(c.noise_sigma).unwrap_or(relevance.noise_sigma),
        },
        seed: args.seed.or(c.seed).unwrap_or(defaults.seed),
    };
    if cfg.n_pairs_target == 0 {
        return Err(Failure::Usage("--pairs must be positive".into()));
    }

    let raw = simulate_raw_groups(&cfg)?;
    let selected: Vec<_> = raw
        .groups
        .iter()
        .filter(|g| is_selected(g, SelectionMode::ExactlyTwoRanksOneClick))
        .cloned()
        .collect();

    write_with(args.output.as_deref(), |w| write_pairs(w, &selected))?;
    if let Some(path) = &args.curve {
        write_with(Some(path), |w| write_curve_csv(w, &raw.truth))?;
    }
    if let Some(path) = &args.raw {
        write_with(Some(path), |w| write_pairs(w, &raw.groups))?;
    }
    if let Some(path) = &args.impressions {
        let records = groups_to_records(&raw.groups);
        write_with(Some(path), |w| write_records(w, &records))?;
    }
    eprintln!(
        "retained {} of {} attempted pairs ({} shown at two ranks)",
        selected.len(),
        raw.attempted,
        raw.groups.len()
    );
    Ok(())
}

pub fn extract_cmd(args: ExtractArgs, file: &FileConfig) -> CmdResult {
    let c = &file.extract;
    let flag = |set: bool, conf: Option<bool>| set || conf.unwrap_or(false);
    let mode = args.mode.or(c.mode).unwrap_or(Mode::Strict);
    let cfg = ExtractionConfig {
        require_same_day: !flag(args.allow_cross_day, c.allow_cross_day),
        require_same_price: !flag(args.allow_price_change, c.allow_price_change),
        exclude_auctions: !flag(args.include_auctions, c.include_auctions),
        platform_filter: args.platform.or(c.platform),
        sort_type_filter: args.sort_type.clone().or_else(|| c.sort_type.clone()),
        selection_mode: match mode {
            Mode::Strict => SelectionMode::ExactlyTwoRanksOneClick,
            Mode::Relaxed => SelectionMode::AtLeastTwoRanksOnePlusClicks,
        },
    };
    let rank_max = args.rank_max.or(c.rank_max).unwrap_or(DEFAULT_RANK_MAX);

    let records = parse_log_with_rank_max(open(&args.input)?, rank_max).map_err(|e| Failure::in_file(&args.input, e))?;
    let (groups, summary) = if flag(args.skip_selection, c.skip_selection) {
        group_pairs(&records, &cfg)
    } else {
        extract(&records, &cfg)
    };
    write_with(args.output.as_deref(), |w| write_pairs(w, &groups))?;
    if let Some(path) = &args.summary {
        write_json(path, &summary)?;
    }
    eprintln!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct ReportJson<'a> {
    method: String,
    final_log_likelihood: f64,
    iterations: usize,
    converged: bool,
    n_pairs_used: usize,
    n_interpolated_ranks: usize,
    log_likelihood_trace: &'a [f64],
}

fn usage_unless(ok: bool, message: &str) -> CmdResult {
    if ok {
        Ok(())
    } else {
        Err(Failure::Usage(message.into()))
    }
}

pub fn estimate(args: EstimateArgs, file: &FileConfig) -> CmdResult {
    let c = &file.estimate;
    let method = args.method.or(c.method).unwrap_or(MethodArg::Interp);

    // Explicit flags must fit the method; values from the config file that
    // belong to other methods are ignored.
    let is = |m: MethodArg| method == m;
    usage_unless(args.knots.is_none() || is(MethodArg::Interp), "--knots only applies to --method interp")?;
    usage_unless(args.smoothing.is_none() || is(MethodArg::Em), "--smoothing only applies to --method em")?;
    usage_unless(
        args.min_rank_observations.is_none() || is(MethodArg::Direct),
        "--min-rank-observations only applies to --method direct",
    )?;
    usage_unless(
        (args.rank_i.is_none() && args.rank_j.is_none() && !args.matrix) || is(MethodArg::Ratio),
        "--rank-i, --rank-j and --matrix only apply to --method ratio",
    )?;
    usage_unless(
        !is(MethodArg::Ratio) || (args.report.is_none() && args.max_iterations.is_none() && args.tolerance.is_none()),
        "--method ratio takes no --report, --max-iterations or --tolerance",
    )?;

    let pairs = read_pairs(open(&args.input)?).map_err(|e| Failure::in_file(&args.input, e))?;

    if is(MethodArg::Ratio) {
        return estimate_ratio(&args, &pairs);
    }

    let knots = args.knots.clone().or_else(|| c.knots.clone());
    let rank_max = args
        .rank_max
        .or(c.rank_max)
        .or_else(|| knots.as_ref().and_then(|k| k.last().copied()))
        .unwrap_or(DEFAULT_RANK_MAX);
    let max_iterations = args.max_iterations.or(c.max_iterations);
    let tolerance = args.tolerance.or(c.tolerance);

    let report: EstimationReport = match method {
        MethodArg::Direct | MethodArg::Interp => {
            let defaults = MleConfig::default();
            let parametrization = if is(MethodArg::Direct) {
                Parametrization::Direct
            } else {
                let spec = match knots {
                    Some(k) => KnotSpec::new(k, rank_max)?,
                    None => KnotSpec::default_for(rank_max),
                };
                Parametrization::Interpolated(spec)
            };
            let cfg = MleConfig {
                parametrization,
                rank_max,
                max_iterations: max_iterations.unwrap_or(defaults.max_iterations),
                gradient_tolerance: tolerance.unwrap_or(defaults.gradient_tolerance),
                min_rank_observations: args
                    .min_rank_observations
                    .or(c.min_rank_observations)
                    .unwrap_or(defaults.min_rank_observations),
            };
            fit(&pairs, &cfg)?
        }
        MethodArg::Em => {
            let defaults = EmConfig::default();
            let cfg = EmConfig {
                max_iterations: max_iterations.unwrap_or(defaults.max_iterations),
                ll_tolerance: tolerance.unwrap_or(defaults.ll_tolerance),
                smoothing: args.smoothing.or(c.smoothing).unwrap_or(defaults.smoothing),
                rank_max,
            };
            em_fit(&pairs, &cfg)?
        }
        MethodArg::Ratio => unreachable!("handled above"),
    };

    write_with(args.output.as_deref(), |w| write_curve_csv(w, &report.curve))?;
    if let Some(path) = &args.report {
        write_json(
            path,
            &ReportJson {
                method: report.curve.method().to_string(),
                final_log_likelihood: report.final_log_likelihood,
                iterations: report.iterations,
                converged: report.converged,
                n_pairs_used: report.n_pairs_used,
                n_interpolated_ranks: report.n_interpolated_ranks,
                log_likelihood_trace: &report.trace,
            },
        )?;
    }
    if !report.converged {
        eprintln!(
            "warning: estimation did not converge after {} iterations; the curve is the last iterate",
            report.iterations
        );
    }
    Ok(())
}

fn estimate_ratio(args: &EstimateArgs, pairs: &[propensity_core::PairGroup]) -> CmdResult {
    let rows = match (args.rank_i, args.rank_j, args.matrix) {
        (Some(i), Some(j), false) => vec![ratio_estimate(pairs, i, j)?],
        (None, None, true) => ratio_matrix(pairs, None),
        _ => {
            return Err(Failure::Usage(
                "--method ratio needs either both --rank-i and --rank-j, or --matrix".into(),
            ))
        }
    };
    write_with(args.output.as_deref(), |w| {
        writeln!(w, "rank_i,rank_j,ratio,n_pairs")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.rank_i, r.rank_j, format_sig(r.ratio, 9), r.n_pairs)?;
        }
        Ok(())
    })
}

pub fn weights(args: WeightsArgs) -> CmdResult {
    let curve = read_curve_csv(open(&args.curve)?, Method::Direct).map_err(|e| Failure::in_file(&args.curve, e))?;
    let reader = open(&args.input)?;
    let bad_line = |line: usize, message: &str| Failure::Data(format!("{}: line {line}: {message}", args.input.display()));

    let mut rows = Vec::new();
    let mut out_of_range = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Failure::io(&args.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| bad_line(line_no, &e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| bad_line(line_no, "expected a JSON object"))?;
        let rank = obj
            .get("rank")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| bad_line(line_no, "missing or non-integer `rank`"))?;
        match u32::try_from(rank).ok().filter(|&r| r >= 1).map(|r| ipw_weight(&curve, r)) {
            Some(Ok(w)) => {
                obj.insert("weight".into(), serde_json::json!(w));
                rows.push(value);
            }
            _ => out_of_range.push(line_no.to_string()),
        }
    }
    if !out_of_range.is_empty() {
        return Err(Failure::Data(format!(
            "{}: ranks outside the curve (1..={}) at lines {}",
            args.input.display(),
            curve.rank_max(),
            out_of_range.join(", ")
        )));
    }
    write_with(args.output.as_deref(), |w| {
        for v in &rows {
            serde_json::to_writer(&mut *w, v)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

pub fn evaluate(args: EvaluateArgs, file: &FileConfig) -> CmdResult {
    let c = &file.evaluate;
    let ranks = args
        .ranks
        .clone()
        .or_else(|| c.ranks.clone())
        .unwrap_or_else(|| DEFAULT_EVAL_RANKS.to_vec());
    let n_bootstrap = args.bootstrap.or(c.bootstrap).unwrap_or(DEFAULT_BOOTSTRAP);
    let seed = args.seed.or(c.seed).unwrap_or(0);
    usage_unless(!ranks.is_empty() && ranks.iter().all(|&r| r >= 1), "--ranks must list ranks >= 1")?;
    usage_unless(n_bootstrap >= 1, "--bootstrap must be positive")?;

    let impressions = read_scored(open(&args.input)?).map_err(|e| Failure::in_file(&args.input, e))?;
    let pair_specs = if args.pairs.is_empty() {
        c.pairs.clone().unwrap_or_default()
    } else {
        args.pairs.clone()
    };
    let pairs: Vec<(String, String)> = if pair_specs.is_empty() {
        let models: BTreeSet<&String> = impressions.iter().flat_map(|i| i.model_scores.keys()).collect();
        let models: Vec<&String> = models.into_iter().collect();
        let mut out = Vec::new();
        for (k, a) in models.iter().enumerate() {
            for b in &models[k + 1..] {
                out.push(((*a).clone(), (*b).clone()));
            }
        }
        if out.is_empty() {
            return Err(Failure::Data("need scores from at least two models to compare".into()));
        }
        out
    } else {
        pair_specs
            .iter()
            .map(|s| match s.split_once(':') {
                Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
                _ => Err(Failure::Usage(format!("--pair expects `model_a:model_b`, got `{s}`"))),
            })
            .collect::<CmdResult<_>>()?
    };

    let mut reports = Vec::with_capacity(pairs.len());
    for (a, b) in &pairs {
        let report = bootstrap_compare(&impressions, &ranks, a, b, n_bootstrap, seed)?;
        for row in report.rows.iter().filter(|r| r.redrawn > 0) {
            eprintln!(
                "rank {}, {a}:{b}: redrew {} single-class resamples",
                row.rank, row.redrawn
            );
        }
        reports.push(report);
    }
    let merged = EvalReport::merge(reports).expect("at least one model pair");
    write_with(args.output.as_deref(), |w| merged.write_csv(w))
}
