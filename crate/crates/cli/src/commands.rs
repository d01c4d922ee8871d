use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use impulse_game::bsde::evaluate_cost;
use impulse_game::forward::{simulate_paths, ImpulseSchedule, PolicyPair};
use impulse_game::model::{sample_points, validate_assumptions, Config};
use impulse_game::qvi::{
    extract_policies, sniff, solve_qvi, solve_truncated_family, write_grid_csv, PolicyGrid, SchemeOrdering, ValueGrid,
};
use impulse_game::verify::{
    grid_from_config, mc_from_config, orderings, run_suite, truncation_convergence, value_gap,
};
use impulse_game::Error;
use serde::Deserialize;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{load_config, Cli, Command, Failure};

/// Output directory plus the manifest being assembled.
struct Run {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn new(out: &Path, command: &str, config: Option<&Config>) -> Result<Self, Failure> {
        fs::create_dir_all(out)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", out.display())))?;
        Ok(Run {
            out: out.to_path_buf(),
            manifest: RunManifest::new(command, config),
            started: Instant::now(),
        })
    }

    fn emit(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> impulse_game::Result<()>) -> Result<(), Failure> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        drop(w);
        self.manifest.add(&self.out, &path)?;
        Ok(())
    }

    fn emit_json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        self.emit(name, |w| Ok(writeln!(w, "{text}")?))
    }

    fn finish(mut self) -> Result<(), Failure> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(self.out.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let out = &cli.common.out;
    if let Command::Export { files } = &cli.command {
        let mut run = Run::new(out, "export", None)?;
        export(&mut run, files)?;
        return run.finish();
    }
    let cfg = load_config(&cli.common)?;
    let mut run = Run::new(out, cli.command.name(), Some(&cfg))?;
    run.emit_json("config.json", &cfg.raw)?;
    let verdict = match &cli.command {
        Command::Validate => validate(&mut run, &cfg),
        Command::Solve => solve(&mut run, &cfg),
        Command::Truncate => truncate(&mut run, &cfg),
        Command::Simulate => simulate(&mut run, &cfg),
        Command::Evaluate => evaluate(&mut run, &cfg),
        Command::Verify => verify(&mut run, &cfg),
        Command::Export { .. } => unreachable!(),
    };
    match verdict {
        Ok(None) => run.finish(),
        Ok(Some(msg)) => {
            run.finish()?;
            Err(Failure::Validation(msg))
        }
        Err(e) => Err(e),
    }
}

/// `Some(message)` when the command ran but its checks failed.
type Verdict = Result<Option<String>, Failure>;

fn validate(run: &mut Run, cfg: &Config) -> Verdict {
    let grid = &cfg.grid;
    let pts = sample_points(&cfg.problem, &grid.lo, &grid.hi, cfg.solver.validation_samples, cfg.mc.seed);
    let report = validate_assumptions(&cfg.problem, &pts, cfg.solver.validation_tol);
    run.emit_json("validation.json", &report)?;
    for c in &report.checks {
        println!(
            "{:<20} {:>12.4e}  {:<5} {}",
            c.name,
            c.worst_violation,
            if c.pass { "pass" } else { "FAIL" },
            c.anchor
        );
    }
    Ok((!report.passed()).then(|| {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} ({})", c.name, c.anchor))
            .collect();
        format!("assumption checks failed: {}", failed.join(", "))
    }))
}

fn solve_with_policies(cfg: &Config, ordering: SchemeOrdering) -> Result<(ValueGrid, PolicyGrid), Failure> {
    let grid = grid_from_config(cfg)?;
    let v = solve_qvi(&cfg.problem, &grid, ordering, cfg.solver.tol)?;
    let p = extract_policies(&cfg.problem, &v, cfg.solver.tol.max(1e-9))?;
    Ok((v, p))
}

fn solve(run: &mut Run, cfg: &Config) -> Verdict {
    let mut solved = Vec::new();
    let mut summary = Vec::new();
    for ordering in orderings(&cfg.solver.ordering)? {
        let (v, p) = solve_with_policies(cfg, ordering)?;
        let name = ordering.name();
        run.emit(&format!("value_{name}.csv"), |w| write_grid_csv(&v, Some(&p), w))?;
        run.emit(&format!("value_{name}.bin"), |w| v.write_binary(w))?;
        run.emit(&format!("policy_{name}.bin"), |w| p.write_binary(w))?;
        let (lo, hi) = v.range();
        let at_x0 = v.value_at(cfg.mc.t0, &cfg.mc.x0);
        println!("{name:<6} v(t0, x0) = {at_x0:.6e}   range [{lo:.4e}, {hi:.4e}]");
        summary.push(json!({ "ordering": name, "value_at_x0": at_x0, "min": lo, "max": hi }));
        solved.push((ordering, v));
    }
    let mut doc = json!({ "orderings": summary });
    if let [(SchemeOrdering::Lower, lower), (SchemeOrdering::Upper, upper)] = solved.as_slice() {
        let gap = value_gap(upper, lower)?;
        println!("gap    sup|upper − lower| = {:.4e} at t = {}, x = {:?}", gap.gap, gap.t, gap.x);
        doc["gap"] = serde_json::to_value(&gap).map_err(|e| Error::Io(e.to_string()))?;
    }
    run.emit_json("solve.json", &doc)?;
    Ok(None)
}

fn truncate(run: &mut Run, cfg: &Config) -> Verdict {
    let grid = grid_from_config(cfg)?;
    let ordering = orderings(&cfg.solver.ordering)?[0];
    let k = cfg.solver.k;
    let family = solve_truncated_family(&cfg.problem, &grid, ordering, k)?;
    for v in &family {
        let level = v.level.unwrap_or(0);
        run.emit(&format!("value_{}_k{level:02}.bin", ordering.name()), |w| v.write_binary(w))?;
    }
    let out = truncation_convergence(&cfg.problem, &grid, ordering, k, cfg.solver.tol)?;
    run.emit("truncation.csv", |w| {
        writeln!(w, "k,gap,gap_sqrt_k")?;
        for (j, g) in out.gaps.iter().enumerate() {
            writeln!(w, "{j},{g:e},{:e}", g * (j as f64).sqrt())?;
        }
        Ok(())
    })?;
    run.emit_json("truncation.json", &out)?;
    println!("{:>3}  {:>12}  {:>12}", "k", "g(k)", "g(k)·√k");
    for (j, g) in out.gaps.iter().enumerate() {
        println!("{j:>3}  {g:>12.4e}  {:>12.4e}", g * (j as f64).sqrt());
    }
    println!("monotone violation {:.3e}, rate constant {:.4e}", out.monotone_violation, out.rate_constant);
    let tol = 1e-10;
    let ok = out.monotone_violation <= tol && out.gap_increase <= tol && out.min_difference >= -tol;
    Ok((!ok).then(|| "truncated values are not monotone in k".to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    #[serde(default)]
    action: usize,
    #[serde(default)]
    schedule: Vec<(f64, usize)>,
}

/// The `policy` section if present, else feedback policies extracted from the
/// grid solution of the first requested ordering.
fn policies(cfg: &Config) -> Result<PolicyPair, Failure> {
    if let Some(section) = cfg.raw.get("policy").filter(|v| !v.is_null()) {
        let p: PolicySection = serde_json::from_value(section.clone())
            .map_err(|e| Error::Config(format!("`policy`: {e}")))?;
        if p.action >= cfg.problem.actions.len() {
            return Err(Error::Config(format!("policy action {} is not in the action set", p.action)).into());
        }
        let sched = ImpulseSchedule::from_pairs(&cfg.problem, &p.schedule)?;
        return Ok(PolicyPair::schedule(sched, p.action));
    }
    let (_, p) = solve_with_policies(cfg, orderings(&cfg.solver.ordering)?[0])?;
    Ok(Arc::new(p).policy_pair())
}

fn simulate(run: &mut Run, cfg: &Config) -> Verdict {
    let pol = policies(cfg)?;
    let m = &cfg.mc;
    let bundle = simulate_paths(&cfg.problem, m.t0, &m.x0, &pol, m.paths, m.steps, m.seed)?;
    run.emit("paths.csv", |w| bundle.write_csv(&cfg.problem, w))?;
    let counts = bundle.impulse_counts();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64;
    println!("{} paths, {} steps, mean interventions {mean:.4}", m.paths, m.steps);
    Ok(None)
}

fn evaluate(run: &mut Run, cfg: &Config) -> Verdict {
    let pol = policies(cfg)?;
    let est = evaluate_cost(&cfg.problem, cfg.mc.t0, &cfg.mc.x0, &pol, &mc_from_config(cfg))?;
    run.emit("diagnostics.csv", |w| est.write_diagnostics_csv(w))?;
    run.emit_json("estimate.json", &json!({ "value": est.value, "stderr": est.stderr }))?;
    println!("J = {:.6e} ± {:.2e}", est.value, est.stderr);
    Ok(None)
}

fn verify(run: &mut Run, cfg: &Config) -> Verdict {
    let report = run_suite(cfg)?;
    run.emit("report.json", |w| Ok(writeln!(w, "{}", report.to_json())?))?;
    print!("{}", report.table());
    Ok((!report.passed()).then(|| {
        let failed: Vec<&str> = report
            .tests
            .iter()
            .filter(|t| !t.pass && !t.advisory)
            .map(|t| t.name.as_str())
            .collect();
        format!("verification failed: {}", failed.join(", "))
    }))
}

fn export(run: &mut Run, files: &[PathBuf]) -> Result<(), Failure> {
    let files = if files.is_empty() {
        let mut found: Vec<PathBuf> = fs::read_dir(&run.out)
            .map_err(|e| Failure::Usage(format!("cannot list {}: {e}", run.out.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        found.sort();
        found
    } else {
        files.to_vec()
    };
    for path in &files {
        let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match sniff(&bytes) {
            Some("value") => {
                let v = ValueGrid::read_binary(bytes.as_slice())?;
                let sibling = path.with_file_name(format!("{}.bin", stem.replacen("value_", "policy_", 1)));
                let policy = match fs::read(&sibling) {
                    Ok(b) if stem.starts_with("value_") => Some(PolicyGrid::read_binary(b.as_slice())?),
                    _ => None,
                };
                let policy = policy.filter(|p| p.grid == v.grid && p.ordering == v.ordering);
                run.emit(&format!("{stem}.csv"), |w| write_grid_csv(&v, policy.as_ref(), w))?;
            }
            // Policy dumps are folded into their value dump's CSV.
            Some(_) => {}
            None => return Err(Failure::Usage(format!("{} is not a grid dump", path.display()))),
        }
    }
    Ok(())
}
