//! The subcommands. Each prints a `key=value` summary that starts with the
//! command name and config hash and ends with the query ledger.

use std::io::Write;

use anyhow::Result;
use qcontrib::amplify::{build_u_p, EpsPrimeBudget, FpaaSchedule};
use qcontrib::complexity::{
    advantage_condition, classical_budget, homogeneous_regime, quantum_budget, sweep, write_sweep_csv, AdvantageMode,
    RegimeParams, UP_TO_CONSTANTS,
};
use qcontrib::estimator::{
    derive_n, estimate_all_groups_ae, estimate_exact, estimate_surrogate, AeSettings, ContributionEstimate,
    EstimatorConfig, EstimatorMode, Perturbation,
};
use qcontrib::exact::{enumerate_exact, RiskQuery, RiskReport};
use qcontrib::fixed::FixedPointFormat;
use qcontrib::io::{fmt_real, load_portfolio, write_kv, write_ledger, write_reals, write_risk_csv, write_risk_report};
use qcontrib::ledger::QueryLedger;
use qcontrib::mc::{classical_sample_budget, estimate_cvar_contribs, estimate_var, FactorSampling, McConfig, McEstimate};
use qcontrib::model::{DiscreteSN, Portfolio};
use qcontrib::oracles::{apply_u_xi, build_u_gev, PayloadSpec, TailOracleSpec};
use qcontrib::Error;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{
    BudgetArgs, Command, Estimator, ExactArgs, InstanceArgs, McArgs, McSettings, PerturbationArg, QsimArgs,
    QsimSettings, ReportArgs, Sampling,
};
use crate::output::{config_hash, write_file, write_group_table};

/// Outcome of a run that completed without error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(String),
}

pub fn run<W: Write>(command: Command, out: &mut W) -> Result<Verdict> {
    match command {
        Command::Exact(a) => exact(&a, out),
        Command::Mc(a) => mc(&a, out),
        Command::Qsim(a) => qsim(&a, out),
        Command::Budget(a) => budget(&a, out),
        Command::Report(a) => report(&a, out),
    }
}

/// A loaded portfolio with its discretized factor.
struct Instance {
    portfolio: Portfolio,
    content: String,
    disc: DiscreteSN,
}

impl Instance {
    fn load(args: &InstanceArgs) -> Result<Self> {
        let (portfolio, content) = load_portfolio(&args.portfolio)?;
        let disc = DiscreteSN::new(args.grid_size as usize, args.halfwidth)?;
        Ok(Self { portfolio, content, disc })
    }

    fn exact(&self, args: &InstanceArgs) -> Result<RiskReport> {
        Ok(enumerate_exact(&self.portfolio, &self.disc, query(args)?)?)
    }
}

fn query(args: &InstanceArgs) -> Result<RiskQuery> {
    Ok(match (args.alpha, args.threshold) {
        (Some(a), Some(v)) => RiskQuery::both(a, v),
        (Some(a), None) => RiskQuery::level(a),
        (None, Some(v)) => RiskQuery::threshold(v),
        (None, None) => return Err(Error::Invalid("give --alpha, --threshold or both".into()).into()),
    })
}

fn header<W: Write, A: serde::Serialize>(out: &mut W, command: &str, args: &A, content: &str) -> Result<()> {
    write_kv(out, "command", command)?;
    write_kv(out, "config_hash", config_hash(command, args, content)?)?;
    Ok(())
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

fn exact<W: Write>(args: &ExactArgs, out: &mut W) -> Result<Verdict> {
    let inst = Instance::load(&args.instance)?;
    let report = inst.exact(&args.instance)?;
    header(out, "exact", args, &inst.content)?;
    write_risk_report(&report, out)?;
    write_ledger(out, "ledger", &QueryLedger::new())?;
    if let Some(path) = &args.instance.csv {
        write_file(path, |w| Ok(write_risk_csv(&report, w)?))?;
    }
    Ok(Verdict::Pass)
}

fn mc_config(settings: &McSettings, seed: u64, disc: &DiscreteSN) -> McConfig {
    let sampling = match settings.sampling {
        Sampling::Exact => FactorSampling::Exact,
        Sampling::InverseCdf => FactorSampling::InverseCdf,
        Sampling::Discrete => FactorSampling::Discrete(disc.clone()),
    };
    McConfig::new(seed, settings.samples).with_batch(settings.batch).with_sampling(sampling)
}

fn write_mc<W: Write>(out: &mut W, est: &McEstimate) -> Result<()> {
    write_kv(out, "mc.threshold", fmt_real(est.threshold))?;
    write_kv(out, "mc.samples", est.samples)?;
    write_kv(out, "mc.tail_hits", est.tail_hits)?;
    write_kv(out, "mc.tail_fraction", fmt_real(est.tail_fraction()))?;
    write_kv(out, "mc.cvar", fmt_real(est.cvar))?;
    write_reals(out, "mc.estimate", &est.estimates)?;
    write_reals(out, "mc.standard_error", &est.standard_errors)?;
    Ok(())
}

fn mc<W: Write>(args: &McArgs, out: &mut W) -> Result<Verdict> {
    let inst = Instance::load(&args.instance)?;
    let cfg = mc_config(&args.mc, args.seed, &inst.disc);
    let mut ledger = QueryLedger::new();
    let (var, v) = match (args.instance.alpha, args.instance.threshold) {
        (alpha, Some(v)) => (alpha.map(|a| estimate_var(&inst.portfolio, a, &cfg)).transpose()?, v),
        (Some(a), None) => {
            let var = estimate_var(&inst.portfolio, a, &cfg)?;
            let v = var.value;
            (Some(var), v)
        }
        (None, None) => return Err(Error::Invalid("give --alpha, --threshold or both".into()).into()),
    };
    let est = estimate_cvar_contribs(&inst.portfolio, v, &cfg)?;
    header(out, "mc", args, &inst.content)?;
    write_kv(out, "seed", args.seed)?;
    if let Some(var) = &var {
        ledger += var.ledger;
        write_kv(out, "mc.var_level", fmt_real(var.alpha))?;
        write_kv(out, "mc.var", fmt_real(var.value))?;
    }
    ledger += est.ledger;
    write_mc(out, &est)?;
    write_ledger(out, "ledger", &ledger)?;
    if let Some(path) = &args.instance.csv {
        write_file(path, |w| {
            write_group_table(
                w,
                &[("estimate", &est.estimates), ("standard_error", &est.standard_errors)],
                None,
                &ledger,
            )
        })?;
    }
    Ok(Verdict::Pass)
}

/// Everything the quantum pipeline produces for one configuration.
struct QsimRun {
    truth: RiskReport,
    estimate: ContributionEstimate,
    budget: EpsPrimeBudget,
    sigma_from_user: bool,
    schedule: FpaaSchedule,
    n: u64,
    /// Ledger of one amplified preparation plus one payload call.
    per_call: QueryLedger,
}

impl QsimRun {
    fn errors(&self) -> Vec<f64> {
        self.estimate.values.iter().zip(&self.truth.cvar_contribs).map(|(e, t)| (e - t).abs()).collect()
    }

    fn within(&self) -> Vec<bool> {
        self.errors().iter().map(|&e| e <= self.budget.eps).collect()
    }
}

/// Exact baseline → tail marking → amplification → payload → estimation.
fn run_qsim(inst: &Instance, args: &InstanceArgs, q: &QsimSettings, seed: u64) -> Result<QsimRun> {
    let format = FixedPointFormat::new(q.total_bits, q.fraction_bits, !q.unsigned)?;
    let truth = inst.exact(args)?;
    let n_gr = inst.portfolio.group_count();
    let oracle = build_u_gev(&TailOracleSpec::new(
        inst.portfolio.clone(),
        inst.disc.clone(),
        truth.cvar_threshold,
        format,
    )?)?;
    let sigma_max = q.sigma_max.unwrap_or_else(|| max(&truth.tail_sigmas));
    let budget = EpsPrimeBudget::new(q.eps, max(&truth.cvar_contribs), max(&truth.group_exposures), sigma_max, n_gr)?;
    let up = build_u_p(&oracle, truth.tail_prob, &budget, q.max_length)?;
    let payload = PayloadSpec::new(&inst.portfolio, format)?;
    let n = derive_n(sigma_max, n_gr, q.delta, q.eps)?;

    let mut per_call = QueryLedger::new();
    let state = up.prepare(&mut per_call);
    let eps_prime = (1.0 - state.marked_probability()).max(0.0);
    if let Some(path) = &q.state_csv {
        write_file(path, |w| Ok(state.write_csv(w)?))?;
    }
    if let Some(path) = &q.schedule_json {
        write_file(path, |w| {
            serde_json::to_writer_pretty(&mut *w, up.schedule())?;
            Ok(writeln!(w)?)
        })?;
    }

    let estimate = match q.estimator {
        Estimator::Exact => estimate_exact(&state, &payload, q.eps, &mut per_call)?,
        Estimator::Surrogate => {
            let view = apply_u_xi(&state, &payload, &mut per_call)?;
            let cfg = EstimatorConfig { mode: EstimatorMode::Surrogate, n, delta: q.delta, eps: q.eps, sigma_max, n_gr };
            let perturbation = match q.perturbation {
                PerturbationArg::Uniform => Perturbation::Uniform,
                PerturbationArg::TruncatedGaussian => Perturbation::TruncatedGaussian,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            estimate_surrogate(&view.means(), &view.variances(), eps_prime, &cfg, perturbation, &per_call, &mut rng)?
        }
        Estimator::PerGroupAe => {
            apply_u_xi(&state, &payload, &mut per_call)?;
            let settings = AeSettings { shots: q.shots, ..AeSettings::default() };
            // Union bound over the groups.
            let delta = q.delta / n_gr as f64;
            let results = estimate_all_groups_ae(&up, &payload, |_| q.eps, delta, settings, seed)?;
            ContributionEstimate::from_ae(&results, eps_prime, q.eps)
        }
    };
    Ok(QsimRun {
        truth,
        estimate,
        budget,
        sigma_from_user: q.sigma_max.is_some(),
        schedule: up.schedule().clone(),
        n,
        per_call,
    })
}

fn write_qsim<W: Write>(out: &mut W, run: &QsimRun, q: &QsimSettings) -> Result<()> {
    let mode = run.estimate.mode;
    write_kv(out, "qsim.estimator", mode)?;
    write_kv(out, "qsim.eps", fmt_real(q.eps))?;
    write_kv(out, "qsim.delta", fmt_real(q.delta))?;
    write_kv(out, "qsim.sigma_max", fmt_real(run.budget.sigma_max))?;
    write_kv(out, "qsim.sigma_max_source", if run.sigma_from_user { "user" } else { "exact" })?;
    write_kv(out, "qsim.c_max", fmt_real(run.budget.c_max))?;
    write_kv(out, "qsim.e_max", fmt_real(run.budget.e_max))?;
    write_kv(out, "qsim.threshold", fmt_real(run.truth.cvar_threshold))?;
    write_kv(out, "qsim.tail_prob", fmt_real(run.truth.tail_prob))?;
    write_kv(out, "qsim.eps_prime", fmt_real(run.estimate.eps_prime))?;
    write_kv(out, "qsim.eps_prime_cap", fmt_real(run.budget.cap()))?;
    write_kv(out, "qsim.fpaa_length", run.schedule.length)?;
    write_kv(out, "qsim.fpaa_delta", fmt_real(run.schedule.delta))?;
    write_kv(out, "qsim.n", run.n)?;
    write_reals(out, "qsim.estimate", &run.estimate.values)?;
    write_reals(out, "qsim.corrected", &run.estimate.corrected)?;
    write_reals(out, "qsim.truth", &run.truth.cvar_contribs)?;
    write_reals(out, "qsim.abs_error", &run.errors())?;
    for (k, ok) in run.within().iter().enumerate() {
        write_kv(out, &format!("qsim.within_eps.{k}"), ok)?;
    }
    write_kv(out, "qsim.all_within_eps", run.within().iter().all(|&b| b))?;
    write_ledger(out, "qsim.per_call", &run.per_call)?;
    Ok(())
}

fn qsim_verdict(run: &QsimRun) -> Verdict {
    let misses: Vec<String> = run
        .within()
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(k, _)| format!("group {k} missed eps = {} by {:.3e}", run.budget.eps, run.errors()[k] - run.budget.eps))
        .collect();
    if misses.is_empty() { Verdict::Pass } else { Verdict::Fail(misses.join("; ")) }
}

fn qsim<W: Write>(args: &QsimArgs, out: &mut W) -> Result<Verdict> {
    let inst = Instance::load(&args.instance)?;
    let run = run_qsim(&inst, &args.instance, &args.qsim, args.seed)?;
    header(out, "qsim", args, &inst.content)?;
    write_kv(out, "seed", args.seed)?;
    write_qsim(out, &run, &args.qsim)?;
    write_ledger(out, "ledger", &run.estimate.ledger)?;
    if let Some(path) = &args.instance.csv {
        write_file(path, |w| {
            write_group_table(
                w,
                &[
                    ("estimate", &run.estimate.values),
                    ("corrected", &run.estimate.corrected),
                    ("truth", &run.truth.cvar_contribs),
                    ("abs_error", &run.errors()),
                ],
                Some(("mode", &run.estimate.mode.to_string())),
                &run.estimate.ledger,
            )
        })?;
    }
    Ok(if args.qsim.check { qsim_verdict(&run) } else { Verdict::Pass })
}

/// Whether each Monte Carlo estimate lies within three standard errors of
/// its exact value.
fn mc_within(est: &McEstimate, truth: &[f64]) -> Vec<bool> {
    est.estimates
        .iter()
        .zip(&est.standard_errors)
        .zip(truth)
        .map(|((&e, &se), &t)| (e - t).abs() <= 3.0 * se + 1e-12 * t.abs().max(1.0))
        .collect()
}

fn report<W: Write>(args: &ReportArgs, out: &mut W) -> Result<Verdict> {
    let inst = Instance::load(&args.instance)?;
    let run = run_qsim(&inst, &args.instance, &args.qsim, args.seed)?;
    let cfg = mc_config(&args.mc, args.seed, &inst.disc);
    let est = estimate_cvar_contribs(&inst.portfolio, run.truth.cvar_threshold, &cfg)?;

    header(out, "report", args, &inst.content)?;
    write_kv(out, "seed", args.seed)?;
    write_risk_report(&run.truth, out)?;
    write_mc(out, &est)?;
    // Only the discrete factor law is the law the exact enumeration uses.
    let mc_check = args.mc.sampling == Sampling::Discrete;
    let mc_ok = mc_within(&est, &run.truth.cvar_contribs);
    if mc_check {
        for (k, ok) in mc_ok.iter().enumerate() {
            write_kv(out, &format!("mc.within_3se.{k}"), ok)?;
        }
    }
    write_kv(out, "mc.check", if mc_check { "discrete-law" } else { "skipped (factor law differs from the exact model)" })?;
    write_qsim(out, &run, &args.qsim)?;
    write_ledger(out, "ledger.classical", &est.ledger)?;
    write_ledger(out, "ledger.quantum", &run.estimate.ledger)?;
    if let Some(path) = &args.instance.csv {
        write_file(path, |w| {
            writeln!(w, "group,exposure,truth,mc_estimate,mc_standard_error,qsim_estimate,qsim_corrected,qsim_abs_error")?;
            let errors = run.errors();
            for k in 0..run.truth.cvar_contribs.len() {
                writeln!(
                    w,
                    "{k},{},{},{},{},{},{},{}",
                    fmt_real(run.truth.group_exposures[k]),
                    fmt_real(run.truth.cvar_contribs[k]),
                    fmt_real(est.estimates[k]),
                    fmt_real(est.standard_errors[k]),
                    fmt_real(run.estimate.values[k]),
                    fmt_real(run.estimate.corrected[k]),
                    fmt_real(errors[k])
                )?;
            }
            Ok(())
        })?;
    }

    let mut failures = Vec::new();
    if mc_check {
        failures.extend(
            mc_ok
                .iter()
                .enumerate()
                .filter(|(_, &ok)| !ok)
                .map(|(k, _)| format!("group {k} Monte Carlo estimate is more than 3 standard errors from exact")),
        );
    }
    if let Verdict::Fail(reason) = qsim_verdict(&run) {
        failures.push(reason);
    }
    Ok(if failures.is_empty() { Verdict::Pass } else { Verdict::Fail(failures.join("; ")) })
}

fn regime_params(args: &BudgetArgs) -> Result<RegimeParams> {
    let (n_gr, n_obl) = (args.n_gr as usize, args.n_obl as usize);
    if let Some(ratio) = args.cmax_over_eps {
        let (Some(pbar), Some(ebar)) = (args.pbar, args.ebar) else {
            return Err(Error::Invalid("--cmax-over-eps needs --pbar and --ebar".into()).into());
        };
        return Ok(homogeneous_regime(pbar, ebar, ratio, args.p, n_gr, n_obl, args.delta));
    }
    let missing: Vec<&str> = [
        ("--sigma-max", args.sigma_max),
        ("--eps", args.eps),
        ("--c-max", args.c_max),
        ("--e-max", args.e_max),
    ]
    .iter()
    .filter(|(_, v)| v.is_none())
    .map(|(name, _)| *name)
    .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!("missing {} (or use --cmax-over-eps with --pbar and --ebar)", missing.join(", "))).into());
    }
    Ok(RegimeParams {
        sigma_max: args.sigma_max.unwrap_or_default(),
        eps: args.eps.unwrap_or_default(),
        p: args.p,
        n_gr,
        n_obl,
        delta: args.delta,
        c_max: args.c_max.unwrap_or_default(),
        e_max: args.e_max.unwrap_or_default(),
        pbar_def: args.pbar,
        ebar: args.ebar,
    })
}

fn budget<W: Write>(args: &BudgetArgs, out: &mut W) -> Result<Verdict> {
    let params = regime_params(args)?;
    let quantum = quantum_budget(&params)?;
    let classical = classical_budget(&params)?;
    let samples = classical_sample_budget(params.sigma_max, params.eps, params.p, params.n_gr, params.delta)?;
    let general = advantage_condition(&params, AdvantageMode::General, args.advantage_threshold)?;
    let regime = params
        .pbar_def
        .map(|_| advantage_condition(&params, AdvantageMode::Regime, args.advantage_threshold))
        .transpose()?;

    header(out, "budget", args, "")?;
    write_kv(out, "sigma_max", fmt_real(params.sigma_max))?;
    write_kv(out, "eps", fmt_real(params.eps))?;
    write_kv(out, "c_max", fmt_real(params.c_max))?;
    write_kv(out, "e_max", fmt_real(params.e_max))?;
    write_kv(out, "quantum.usn_calls", fmt_real(quantum.primary))?;
    write_kv(out, "quantum.arith_cry_calls", fmt_real(quantum.per_obligor))?;
    write_kv(out, "classical.normal_draws", fmt_real(classical.primary))?;
    write_kv(out, "classical.arith_bernoulli_draws", fmt_real(classical.per_obligor))?;
    write_kv(out, "classical.samples", samples.samples)?;
    for (name, adv) in std::iter::once(("general", &general)).chain(regime.as_ref().map(|r| ("regime", r))) {
        write_kv(out, &format!("advantage.{name}.lhs"), fmt_real(adv.lhs))?;
        write_kv(out, &format!("advantage.{name}.rhs"), fmt_real(adv.rhs))?;
        write_kv(out, &format!("advantage.{name}.threshold"), fmt_real(adv.threshold))?;
        write_kv(out, &format!("advantage.{name}.quantum_favored"), adv.quantum_favored)?;
        write_kv(out, &format!("advantage.{name}.note"), &adv.note)?;
    }
    write_kv(out, "note", UP_TO_CONSTANTS)?;
    write_ledger(out, "ledger", &QueryLedger::new())?;

    if !args.sweep_eps.is_empty() || !args.sweep_n_gr.is_empty() {
        let eps = if args.sweep_eps.is_empty() { vec![params.eps] } else { args.sweep_eps.clone() };
        let n_gr: Vec<usize> =
            if args.sweep_n_gr.is_empty() { vec![params.n_gr] } else { args.sweep_n_gr.iter().map(|&g| g as usize).collect() };
        let rows = sweep(&params, &eps, &n_gr, args.advantage_threshold)?;
        match &args.csv {
            Some(path) => write_file(path, |w| Ok(write_sweep_csv(&rows, w)?))?,
            None => {
                writeln!(out)?;
                write_sweep_csv(&rows, &mut *out)?;
            }
        }
    }
    Ok(Verdict::Pass)
}
