//! Pipelines behind each command.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::biorth::{
    biorthogonality_defect, boundedness_constant, classify_perturbation, norming_constant_exact,
    uniform_minimality_constant, BiorthSystem,
};
use crate::error::{Error, Result};
use crate::io::{read_system, write_system, write_vectors_csv};
use crate::pathology::{
    build_pathological_system, check_eps_schedule, check_phi_count, eps_tail_squares, geometric_eps,
    linear_lambdas, log_grid, omega_stats, operator_t, orthonormalize, permutation_from_f,
    t_asymptotics_check, unb_experiment, verify_pathological_system, UnbRow, EPS_TAIL_LIMIT, ROUGH_EPS,
    UNB_COLUMNS,
};
use crate::perturbations::{construct_flattened, verify_flattened, BlockPartition};
use crate::representing::{
    available_rounds, build_norming_indices, build_representing_indices, reconstruct, strong_partition,
};
use crate::subspace::TruncatedVector;

use super::config::{Command, ExperimentConfig, Schedule};
use super::report::{emit_report, write_json, Cell, Check, Failure, Manifest, Table};

/// Artifacts and asserted invariants of a finished pipeline.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub artifacts: Vec<PathBuf>,
    pub checks: Vec<Check>,
}

impl RunOutput {
    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        let c = Check::new(name, pass, detail);
        if !c.pass {
            log::warn!("check {} failed: {}", c.name, c.detail);
        }
        self.checks.push(c);
    }

    fn table(&mut self, t: &Table, dir: &Path, stem: &str) -> Result<()> {
        self.artifacts.extend(emit_report(t, dir, stem)?);
        Ok(())
    }

    fn text(&mut self, path: PathBuf, body: &str) -> Result<()> {
        fs::write(&path, body)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn json<T: serde::Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        write_json(&path, value)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn system(&mut self, dir: PathBuf, sys: &BiorthSystem) -> Result<()> {
        write_system(&dir, sys)?;
        for f in ["X.csv", "F.csv", "system.txt"] {
            self.artifacts.push(dir.join(f));
        }
        Ok(())
    }
}

/// Attaches the failing operation to a library error.
struct Stage {
    module: &'static str,
}

impl Stage {
    fn at<T>(&self, operation: &str, r: Result<T>) -> std::result::Result<T, Failure> {
        r.map_err(|e| Failure {
            module: self.module.to_string(),
            operation: operation.to_string(),
            invariant: e.invariant().map(str::to_string),
            detail: e.to_string(),
        })
    }
}

fn load_system(cfg: &ExperimentConfig, stage: &Stage) -> std::result::Result<BiorthSystem, Failure> {
    match &cfg.input {
        Some(dir) => stage.at("read_system", read_system(dir)),
        None => stage.at(
            "near_canonical",
            BiorthSystem::near_canonical(cfg.truncation, cfg.coupling, cfg.decay, cfg.seed, cfg.tol),
        ),
    }
}

fn build_system(cfg: &ExperimentConfig, out: &mut RunOutput) -> std::result::Result<(), Failure> {
    let st = Stage { module: "biorth" };
    let sys = load_system(cfg, &st)?;
    let defect = biorthogonality_defect(&sys);
    let um = st.at("uniform_minimality_constant", uniform_minimality_constant(&sys))?;
    let nc = st.at("norming_constant_exact", norming_constant_exact(&sys))?;
    let mut t = Table::new(&[
        "len",
        "ambient_dim",
        "defect",
        "boundedness",
        "uniform_minimality",
        "norming",
    ]);
    t.push(vec![
        sys.len().into(),
        sys.ambient_dim().into(),
        defect.into(),
        boundedness_constant(&sys).into(),
        um.into(),
        nc.into(),
    ]);
    st.at("write_system", out.system(cfg.output.join("system"), &sys))?;
    st.at("emit_report", out.table(&t, &cfg.output, "diagnostics"))?;
    out.check(
        "biorthogonality_defect_within_tol",
        defect <= sys.tol().biorth_tol,
        format!("defect {defect:e}"),
    );
    Ok(())
}

fn perturb(cfg: &ExperimentConfig, out: &mut RunOutput) -> std::result::Result<(), Failure> {
    let st = Stage {
        module: "perturbations",
    };
    let xsys = load_system(cfg, &st)?;
    let partition = if cfg.auto_strong {
        let rs = Stage {
            module: "representing",
        };
        let ri = rs.at(
            "build_representing_indices",
            build_representing_indices(&xsys, cfg.depth),
        )?;
        let rounds = available_rounds(&ri.r);
        if rounds == 0 {
            return Err(Failure {
                module: "representing".into(),
                operation: "strong_partition".into(),
                invariant: Some("at_least_one_round".into()),
                detail: format!("r = {:?} supports no complete round; raise depth", ri.r),
            });
        }
        let trace = rs.at("strong_partition", strong_partition(&ri, rounds))?;
        st.at(
            "write_indices",
            out.text(cfg.output.join("indices.txt"), &ri.to_text()),
        )?;
        rs.at("padded_to", trace.padded_to(xsys.len()))?.partition
    } else {
        let path = cfg
            .partition
            .as_ref()
            .expect("validated: partition or auto_strong");
        let text = st.at("read_partition", fs::read_to_string(path).map_err(Error::from))?;
        st.at("parse_partition", BlockPartition::from_text(&text))?
    };
    let z = st.at(
        "construct_flattened",
        construct_flattened(&xsys, &partition, cfg.seed),
    )?;
    let rep = st.at("verify_flattened", verify_flattened(&z, &xsys, &partition))?;
    let class = st.at(
        "classify_perturbation",
        classify_perturbation(&z, &xsys, xsys.tol().span_tol),
    )?;

    let mut t = Table::new(&["block", "vector_gap", "dual_gap", "slack"]);
    for b in &rep.blocks {
        t.push(vec![
            b.block.into(),
            b.vector_gap.into(),
            b.dual_gap.into(),
            b.slack.into(),
        ]);
    }
    st.at(
        "write_partition",
        out.text(cfg.output.join("partition.txt"), &partition.to_text()),
    )?;
    st.at("write_system", out.system(cfg.output.join("flattened"), &z))?;
    st.at("emit_report", out.table(&t, &cfg.output, "blocks"))?;
    let summary = serde_json::json!({
        "defect": rep.defect,
        "pass": rep.pass,
        "worst_gap": rep.worst_gap(),
        "worst_slack": rep.worst_slack(),
        "classification": class.name(),
        "boundedness": boundedness_constant(&z),
    });
    st.at(
        "write_report",
        out.json(cfg.output.join("verification.json"), &summary),
    )?;
    out.check(
        "flattened_conditions_hold",
        rep.pass,
        format!(
            "defect {:e}, worst gap {:e}, worst slack {:e}",
            rep.defect,
            rep.worst_gap(),
            rep.worst_slack()
        ),
    );
    out.check("classified_as_block", class.is_block(), class.name());
    Ok(())
}

fn represent(cfg: &ExperimentConfig, out: &mut RunOutput) -> std::result::Result<(), Failure> {
    let st = Stage {
        module: "representing",
    };
    let sys = load_system(cfg, &st)?;
    let ri = st.at(
        "build_representing_indices",
        build_representing_indices(&sys, cfg.depth),
    )?;
    let nc = st.at("norming_constant_exact", norming_constant_exact(&sys))?;
    let ni = st.at(
        "build_norming_indices",
        build_norming_indices(&sys, cfg.depth, nc / 2.0),
    )?;

    let mut t = Table::new(&["sample", "m", "r", "error", "ls_distance", "bound"]);
    let (mut below_ls, mut bound_ok) = (0.0f64, true);
    for s in 0..cfg.samples {
        let x = TruncatedVector::random_unit(sys.ambient_dim(), cfg.seed, s as u64);
        for m in 1..ri.depth() {
            let rec = st.at("reconstruct", reconstruct(&x, &sys, &ri, m))?;
            below_ls = below_ls.max(rec.ls_distance - rec.error);
            bound_ok &= rec.error <= rec.bound * (1.0 + 1e-12) + 1e-12;
            t.push(vec![
                (s + 1).into(),
                m.into(),
                ri.r_of(m).unwrap_or(0).into(),
                rec.error.into(),
                rec.ls_distance.into(),
                rec.bound.into(),
            ]);
        }
    }
    st.at(
        "write_indices",
        out.text(cfg.output.join("indices.txt"), &ri.to_text()),
    )?;
    st.at(
        "write_indices",
        out.text(cfg.output.join("norming_indices.txt"), &ni.to_text()),
    )?;
    st.at("emit_report", out.table(&t, &cfg.output, "reconstruction"))?;
    // fixing the head coefficients can only lose against the free fit
    out.check(
        "error_at_least_free_least_squares",
        below_ls <= 1e-12,
        format!("max (ls - error) = {below_ls:e}"),
    );
    out.check(
        "reconstruction_within_bound",
        bound_ok,
        "error <= 2D + delta ||h* - h||",
    );
    Ok(())
}

fn schedule_f(s: Schedule, n: usize) -> Vec<f64> {
    match s {
        Schedule::Linear => (1..=n).map(|v| v as f64).collect(),
        Schedule::Log => (1..=n).map(|v| 4.0 * (1.0 + v as f64).ln()).collect(),
    }
}

fn pathology(cfg: &ExperimentConfig, out: &mut RunOutput) -> std::result::Result<(), Failure> {
    let st = Stage { module: "pathology" };
    let n = cfg.truncation;
    let eps = cfg
        .eps
        .clone()
        .unwrap_or_else(|| geometric_eps(n, cfg.eps_scale, cfg.eps_ratio));
    st.at("check_eps_schedule", check_eps_schedule(&eps))?;
    if eps.len() < n {
        return Err(Failure {
            module: "pathology".into(),
            operation: "build_pathological_system".into(),
            invariant: None,
            detail: format!("{} eps values for truncation {n}", eps.len()),
        });
    }
    let table = cfg.table_size.max(n);
    let spec = st.at(
        "permutation_from_f",
        permutation_from_f(&schedule_f(cfg.f_schedule, table), table),
    )?;
    let bad_count = check_phi_count(&spec);
    out.check(
        "phi_count_two_point_identity",
        bad_count.is_none(),
        match bad_count {
            Some(m) => format!("fails at m = {m}"),
            None => format!("holds on 1..={table}"),
        },
    );
    let cmax = cfg.c_values.iter().copied().max().unwrap_or(1);
    let grid = log_grid(1, (table / cmax).max(1), 10);
    let stats = st.at("omega_stats", omega_stats(&spec, &cfg.c_values, &grid))?;
    out.check("omega_at_most_two_phi", true, format!("on 1..={table}"));

    let ps = st.at(
        "build_pathological_system",
        build_pathological_system(&spec, &eps, n, cfg.tol),
    )?;
    let sc = st.at("verify_pathological_system", verify_pathological_system(&ps))?;
    let t = st.at("operator_t", operator_t(&ps.e_hats))?;
    let zs = orthonormalize(&ps.e_hats);
    let decay = st.at("t_asymptotics_check", t_asymptotics_check(&t.t, &zs, &ps.eps))?;

    st.at(
        "write_permutation",
        out.text(cfg.output.join("permutation.txt"), &spec.to_text(table)),
    )?;
    st.at("write_system", out.system(cfg.output.join("system"), &ps.sys))?;
    let eh = cfg.output.join("system").join("E_hat.csv");
    st.at("write_e_hats", write_vectors_csv(&eh, &ps.e_hats))?;
    out.artifacts.push(eh);

    let mut om = Table::new(&["m", "omega", "two_phi"]);
    for r in &stats.rows {
        om.push(vec![r.m.into(), r.omega.into(), r.two_phi.into()]);
    }
    st.at("emit_report", out.table(&om, &cfg.output, "omega"))?;
    let mut ra = Table::new(&["c", "n", "ratio"]);
    for (c, series) in &stats.ratios {
        for &(k, v) in series {
            ra.push(vec![(*c).into(), k.into(), v.into()]);
        }
    }
    st.at("emit_report", out.table(&ra, &cfg.output, "omega_ratios"))?;
    let mut dt = Table::new(&["n", "measured", "bound"]);
    for r in &decay.rows {
        dt.push(vec![r.n.into(), r.measured.into(), r.bound.into()]);
    }
    st.at("emit_report", out.table(&dt, &cfg.output, "decay"))?;
    let summary = serde_json::json!({
        "system_check": sc,
        "norm_t": t.norm_t,
        "norm_t_inv": t.norm_t_inv,
        "eps_sum_squares": eps_tail_squares(&eps)[0],
        "decay_last": decay.last(),
    });
    st.at(
        "write_report",
        out.json(cfg.output.join("summary.json"), &summary),
    )?;

    out.check(
        "system_postconditions",
        sc.passes(ps.sys.tol()),
        format!("{sc:?}"),
    );
    out.check(
        "t_norms_at_most_two",
        eps_tail_squares(&eps)[0] > EPS_TAIL_LIMIT || (t.norm_t <= 2.0 + 1e-9 && t.norm_t_inv <= 2.0 + 1e-9),
        format!("||T|| = {}, ||T^-1|| = {}", t.norm_t, t.norm_t_inv),
    );
    out.check(
        "decay_within_twice_bound",
        decay.within(2.0),
        "||T z_n - z_n|| <= 2 bound",
    );
    Ok(())
}

fn unb(cfg: &ExperimentConfig, out: &mut RunOutput) -> std::result::Result<(), Failure> {
    let st = Stage { module: "pathology" };
    let top = cfg.sizes.iter().copied().max().unwrap_or(cfg.truncation);
    let lambdas = match cfg.lambda {
        Schedule::Linear => linear_lambdas(top),
        Schedule::Log => (1..=top).map(|m| (1.0 + m as f64).ln()).collect(),
    };
    let rep = st.at(
        "unb_experiment",
        unb_experiment(&lambdas, cfg.m_bound, &cfg.sizes, cfg.seed, &cfg.tol),
    )?;
    for run in &rep.runs {
        let mut t = Table::new(&UNB_COLUMNS);
        for r in &run.rows {
            t.push(unb_cells(r));
        }
        st.at(
            "emit_report",
            out.table(&t, &cfg.output, &format!("unb_{}", run.truncation)),
        )?;
        let n = run.truncation;
        out.check(
            &format!("ratio_non_decreasing_{n}"),
            run.ratios_non_decreasing,
            format!("{} rows", run.rows.len()),
        );
        out.check(
            &format!("omega_bracket_{n}"),
            run.omega_bracket_holds,
            "c1 ln(m - n0) <= |Omega| <= 2 phi",
        );
        out.check(
            &format!("rough_capacity_{n}"),
            run.capacity_holds,
            format!("n0 = {}", run.n0),
        );
        out.check(
            &format!("rough_tail_defect_{n}"),
            run.tail_defect <= ROUGH_EPS,
            format!("{:e}", run.tail_defect),
        );
        out.check(
            &format!("identity_control_{n}"),
            run.control_is_identity(),
            "q(m) = m",
        );
    }
    st.at(
        "write_report",
        out.json(cfg.output.join("unb_summary.json"), &rep),
    )?;
    Ok(())
}

fn unb_cells(r: &UnbRow) -> Vec<Cell> {
    vec![
        r.m.into(),
        r.q.into(),
        r.lambda.into(),
        r.ratio.into(),
        r.omega.into(),
        r.two_phi.into(),
        r.c1log.into(),
    ]
}

/// Runs the pipeline of `cmd`, returning its artifacts and checks or the first hard failure.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> std::result::Result<RunOutput, Failure> {
    let mut out = RunOutput::default();
    fs::create_dir_all(&cfg.output).map_err(|e| Failure {
        module: "cli".into(),
        operation: "create_output".into(),
        invariant: None,
        detail: format!("{}: {e}", cfg.output.display()),
    })?;
    match cmd {
        Command::BuildSystem => build_system(cfg, &mut out)?,
        Command::Perturb => perturb(cfg, &mut out)?,
        Command::Represent => represent(cfg, &mut out)?,
        Command::Pathology => pathology(cfg, &mut out)?,
        Command::Unb => unb(cfg, &mut out)?,
    }
    Ok(out)
}

/// Runs `cmd`, writes `manifest.json` (and `failure.json` on failure) and returns the exit code.
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> i32 {
    let start = Instant::now();
    let result = run(cmd, cfg);
    let (artifacts, checks, failure) = match result {
        Ok(o) => {
            let first_bad = o.checks.iter().find(|c| !c.pass).map(|c| Failure {
                module: cmd.module().into(),
                operation: cmd.name().into(),
                invariant: Some(c.name.clone()),
                detail: c.detail.clone(),
            });
            (o.artifacts, o.checks, first_bad)
        }
        Err(f) => (Vec::new(), Vec::new(), Some(f)),
    };
    let manifest = Manifest {
        tool: "mbasis-lab",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name().into(),
        seed: cfg.seed,
        config: cfg.to_map(),
        artifacts: artifacts
            .iter()
            .map(|p| p.strip_prefix(&cfg.output).unwrap_or(p).display().to_string())
            .collect(),
        checks,
        passed: failure.is_none(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if fs::create_dir_all(&cfg.output).is_ok() {
        if let Err(e) = write_json(&cfg.output.join("manifest.json"), &manifest) {
            eprintln!("error: cannot write manifest: {e}");
        }
    }
    match failure {
        None => 0,
        Some(f) => {
            eprintln!(
                "error: {}::{} failed{}: {}",
                f.module,
                f.operation,
                f.invariant
                    .as_deref()
                    .map(|i| format!(" ({i})"))
                    .unwrap_or_default(),
                f.detail
            );
            if let Err(e) = write_json(&cfg.output.join("failure.json"), &f) {
                eprintln!("error: cannot write failure record: {e}");
            }
            1
        }
    }
}
