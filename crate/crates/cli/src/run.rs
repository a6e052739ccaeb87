use std::path::PathBuf;

use dichotomy_core::dichotomy::{DichotomyReport, FredholmReport, Verdict};
use dichotomy_core::system::{DelaySystem, SystemSpec};
use dichotomy_core::Error as CoreError;
use serde::Serialize;

use crate::config::{Command, ConfigError, Numerics, Resolved};
use crate::output::{decay_csv, table_csv, OutputDir, OutputError};
use crate::stages::{self, GreenResult, PairingResult, SolveResult, SpectrumResult, WeightCheck};
use crate::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: CoreError,
    },
    #[error("{0}")]
    Output(#[from] OutputError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric { .. } => 3,
            RunError::Output(_) => 4,
        }
    }
}

/// Structured form of a failed numeric stage.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub stage: &'static str,
    pub kind: &'static str,
    pub message: String,
}

impl ErrorReport {
    pub fn new(command: Command, stage: &'static str, err: &CoreError) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.name(),
            stage,
            kind: err.kind(),
            message: err.to_string(),
        }
    }
}

/// Common wrapper of every stage report.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: &'static str,
    command: &'static str,
    stage: &'static str,
    system: &'a SystemSpec,
    numerics: &'a Numerics,
    result: &'a T,
    warnings: &'a [String],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// One acceptance check of the `all` summary.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub value: Option<f64>,
    pub limit: String,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, pass: bool, value: f64, limit: impl Into<String>) -> Self {
        Self {
            name,
            status: if pass { Status::Pass } else { Status::Fail },
            value: Some(value),
            limit: limit.into(),
            detail: String::new(),
        }
    }

    fn skipped(name: &'static str, why: impl Into<String>) -> Self {
        Self {
            name,
            status: Status::Skipped,
            value: None,
            limit: String::new(),
            detail: why.into(),
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub schema_version: &'static str,
    pub passed: bool,
    pub verdict: Option<Verdict>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

/// What a successful run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub verdict: Option<Verdict>,
    pub summary: Option<Summary>,
}

struct Runner<'a> {
    cfg: &'a Resolved,
    command: Command,
    out: OutputDir,
    warnings: Vec<String>,
}

fn numeric<T>(stage: &'static str, r: dichotomy_core::Result<T>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Numeric { stage, source })
}

impl Runner<'_> {
    fn sys(&self) -> &DelaySystem {
        &self.cfg.system
    }

    fn num(&self) -> &Numerics {
        &self.cfg.numerics
    }

    fn emit<T: Serialize>(&mut self, stage: &'static str, result: &T, warnings: &[String]) -> Result<(), RunError> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            command: self.command.name(),
            stage,
            system: &self.cfg.spec,
            numerics: &self.cfg.numerics,
            result,
            warnings,
        };
        self.out.write_json(&format!("{stage}.json"), &env)?;
        self.warnings.extend(warnings.iter().cloned());
        Ok(())
    }

    fn csv(&mut self, name: &str, text: String) -> Result<(), RunError> {
        if self.cfg.output.csv {
            self.out.write(name, &text)?;
        }
        Ok(())
    }

    fn spectrum(&mut self) -> Result<SpectrumResult, RunError> {
        let mut w = Vec::new();
        let res = numeric("spectrum", stages::spectrum(self.sys(), &mut w))?;
        self.emit("spectrum", &res, &w)?;
        Ok(res)
    }

    fn green(&mut self) -> Result<GreenResult, RunError> {
        let mut w = Vec::new();
        let res = numeric("green", stages::green(self.sys(), self.num(), &mut w))?;
        self.emit("green", &res, &w)?;
        let n = self.sys().dim();
        let mut header = vec!["t".to_string(), "branch".to_string()];
        for i in 0..n {
            for j in 0..n {
                header.push(format!("g_{}_{}", i + 1, j + 1));
            }
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = res.branches.iter().enumerate().flat_map(|(b, br)| {
            let k = &br.kernel;
            k.grid.nodes().zip(&k.samples).map(move |(t, g)| {
                let mut row = vec![t, b as f64];
                row.extend(g.transpose().iter().copied());
                row
            })
        });
        let text = table_csv(&header, rows);
        self.csv("green.csv", text)?;
        Ok(res)
    }

    fn solve(&mut self) -> Result<SolveResult, RunError> {
        let mut w = Vec::new();
        let res = numeric("solve", stages::solve(self.sys(), self.num(), &mut w))?;
        self.emit("solve", &res, &w)?;
        if let Some(v) = &res.v {
            let n = v.dim();
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|i| format!("v_{i}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows = v.grid().nodes().enumerate().map(|(i, t)| {
                let mut row = vec![t];
                row.extend(v.node_value(i).iter().copied());
                row
            });
            let text = table_csv(&header, rows);
            self.csv("solve.csv", text)?;
        }
        Ok(res)
    }

    fn pairing(&mut self) -> Result<PairingResult, RunError> {
        let res = numeric("pairing-check", stages::pairing(self.sys(), self.num()))?;
        self.emit("pairing-check", &res, &[])?;
        Ok(res)
    }

    fn dichotomy(&mut self) -> Result<DichotomyReport, RunError> {
        let mut w = Vec::new();
        let keep = self.cfg.output.p_matrices;
        let res = numeric("dichotomy", stages::dichotomy(self.sys(), self.num(), keep, &mut w))?;
        self.emit("dichotomy", &res, &w)?;
        self.csv("decay.csv", decay_csv(&res))?;
        Ok(res)
    }

    fn fredholm(&mut self) -> Result<FredholmReport, RunError> {
        let res = numeric("fredholm", stages::fredholm(self.sys(), self.num()))?;
        self.emit("fredholm", &res, &[])?;
        Ok(res)
    }

    fn weights(&mut self) -> Result<WeightCheck, RunError> {
        let res = stages::weight_check(self.sys(), self.num().seed);
        self.emit("weights", &res, &[])?;
        Ok(res)
    }

    fn all(&mut self) -> Result<Summary, RunError> {
        let weights = self.weights()?;
        let spectrum = self.spectrum()?;
        let green = self.green()?;
        let solve = self.solve()?;
        let pairing = self.pairing()?;
        let dich = self.dichotomy()?;
        let fred = dich.fredholm.clone().expect("verify ran with Fredholm diagnostics");
        self.emit("fredholm", &fred, &[])?;
        let checks = checks(&weights, &spectrum, &green, &solve, &pairing, &dich, &fred);
        let passed = checks.iter().all(|c| c.status != Status::Fail);
        let mut files: Vec<String> = self
            .out
            .written()
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect();
        files.push("summary.json".into());
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            passed,
            verdict: Some(dich.verdict),
            checks,
            files,
            warnings: self.warnings.clone(),
        };
        self.out.write_json("summary.json", &summary)?;
        Ok(summary)
    }
}

fn checks(
    weights: &WeightCheck,
    spectrum: &SpectrumResult,
    green: &GreenResult,
    solve: &SolveResult,
    pairing: &PairingResult,
    dich: &DichotomyReport,
    fred: &FredholmReport,
) -> Vec<Check> {
    let mut out = vec![
        Check::new(
            "weight_derivative",
            weights.max_derivative_residual <= 1e-8,
            weights.max_derivative_residual,
            "<= 1e-8",
        ),
        Check::new(
            "weight_shift",
            weights.max_shift_relative_error <= 1e-14,
            weights.max_shift_relative_error,
            "<= 1e-14 (relative)",
        ),
        Check::new(
            "hyperbolic",
            spectrum.hyperbolic,
            spectrum.branches.iter().map(|b| b.report.axis_margin).fold(f64::INFINITY, f64::min),
            "both limits hyperbolic",
        ),
    ];
    let jump = green.branches.iter().map(|b| b.kernel.jump_error).fold(0.0, f64::max);
    out.push(Check::new("green_jump", jump <= 1e-6, jump, "<= 1e-6"));
    let rates: Vec<f64> = green.branches.iter().filter_map(|b| b.rate_error).collect();
    out.push(if rates.is_empty() {
        Check::skipped("green_decay_rate", "no characteristic root located near the fitted rate")
    } else {
        let worst = rates.iter().copied().fold(0.0, f64::max);
        Check::new("green_decay_rate", worst <= 0.1, worst, "relative error <= 0.1")
    });
    let inv = &solve.inverse;
    out.push(Check::new(
        "inverse_residual",
        inv.relative_residual <= 1e-3,
        inv.relative_residual,
        "<= 1e-3 sup|h|",
    ));
    out.push(Check::new(
        "inverse_vs_integrator",
        inv.integrator_agreement <= 1e-4,
        inv.integrator_agreement,
        "<= 1e-4",
    ));
    let leak = &solve.whole_line.leakage;
    out.push(Check::new("whole_line_leakage", leak.ok(), leak.max(), format!("<= {:.3e}", leak.limit)));
    out.push(match &green.neumann {
        Some(n) => Check::new(
            "neumann_series",
            n.ratio < 1.0 && n.decay_over_a1 >= 0.9,
            n.ratio,
            "ratio < 1 and fitted decay >= 0.9 a1",
        )
        .detail(format!("fitted decay / a1 = {}", n.decay_over_a1)),
        None => Check::skipped(
            "neumann_series",
            green.neumann_skipped.clone().unwrap_or_default(),
        ),
    });
    let ratio_ok = pairing.mean_ratio.is_none_or(|r| (3.0..=5.0).contains(&r));
    out.push(
        Check::new(
            "adjoint_pairing",
            pairing.max_residual <= 1e-4 && ratio_ok,
            pairing.max_residual,
            "<= 1e-4, step-halving ratio in [3, 5]",
        )
        .detail(format!("mean ratio {:?}", pairing.mean_ratio)),
    );
    if dich.base_times.is_empty() {
        for name in ["idempotence", "projector_bound", "commutation", "theoretical_bound"] {
            out.push(Check::skipped(name, "empty s_list"));
        }
    } else {
        let idem = dich.base_times.iter().map(|b| b.projector.idempotence).fold(0.0, f64::max);
        out.push(Check::new("idempotence", idem <= 1e-3, idem, "<= 1e-3"));
        let pb = dich.base_times.iter().map(|b| b.p_norm).fold(0.0, f64::max);
        out.push(Check::new(
            "projector_bound",
            dich.base_times.iter().all(|b| b.p_bound_ok),
            pb,
            format!("|P(s)phi| <= gamma0 |phi|, gamma0 = {}", dich.gamma0.gamma0),
        ));
        let comm = dich.base_times.iter().map(|b| b.max_commutation).fold(0.0, f64::max);
        out.push(Check::new("commutation", comm <= 1e-2, comm, "<= 1e-2 |T(t,s)|"));
        let theory = dich.base_times.iter().map(|b| b.theory_ratio).fold(0.0, f64::max);
        out.push(Check::new("theoretical_bound", theory <= 1.0, theory, "<= 1"));
    }
    out.push(Check::new(
        "dichotomy_verdict",
        dich.verdict == Verdict::Dichotomy,
        dich.gamma0.lambda_theory,
        "verdict = dichotomy",
    ));
    out.push(
        Check::new(
            "fredholm",
            fred.hypotheses_met && fred.range_orth_residual <= 1e-6,
            fred.index as f64,
            "ker = ker* = 0, index 0, range residual <= 1e-6",
        )
        .detail(format!(
            "dim ker {}, dim ker* {}, range residual {}",
            fred.dim_ker, fred.dim_ker_adjoint, fred.range_orth_residual
        )),
    );
    out
}

/// Execute `command` for a validated config, writing reports under `dir`.
pub fn run(cfg: &Resolved, command: Command, dir: &std::path::Path) -> Result<RunOutcome, RunError> {
    let mut runner = Runner {
        cfg,
        command,
        out: OutputDir::create(dir)?,
        warnings: Vec::new(),
    };
    let mut verdict = None;
    let mut summary = None;
    match command {
        Command::Spectrum => {
            runner.spectrum()?;
        }
        Command::Green => {
            runner.green()?;
        }
        Command::Solve => {
            runner.solve()?;
        }
        Command::PairingCheck => {
            runner.pairing()?;
        }
        Command::Dichotomy => {
            verdict = Some(runner.dichotomy()?.verdict);
        }
        Command::Fredholm => {
            runner.fredholm()?;
        }
        Command::All => {
            let s = runner.all()?;
            verdict = s.verdict;
            summary = Some(s);
        }
    }
    Ok(RunOutcome {
        files: runner.out.written().to_vec(),
        verdict,
        summary,
    })
}
