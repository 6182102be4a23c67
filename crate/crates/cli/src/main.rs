//! `rpc-lab <subcommand> [--config FILE] [--key value ...]`

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use rpc_core::agent::{
    load_checkpoint_for, save_checkpoint, train, write_metrics, ActMode, AgentError, AgentParams,
    CheckpointError,
};
use rpc_core::bounds::{lemma1_draws, lemma2_draws, BoundsError, DrawSummary};
use rpc_core::config::{ConfigError, RunConfig};
use rpc_core::evalharness::{
    bitrate_sweep, coord_kl_sparsity, collect_transitions, pearson, pgd_dyn_attack, pgd_obs_attack,
    robust_sweep, rollout, voi_scatter, write_report, EvalError,
};
use rpc_core::hrl::{cem_optimize, HrlError};

const SUBCOMMANDS: [(&str, &str); 10] = [
    ("train", "train one agent; writes checkpoint.bin and metrics.jsonl"),
    ("eval-dropout", "return under observation dropout, one row per dropout_ps entry"),
    ("eval-pgd-obs", "return under observation attacks, one row per epsilons entry"),
    ("eval-pgd-dyn", "value and return drop under state attacks on n_states visited states"),
    ("eval-robust", "return on the mass_scales × friction_scales grid"),
    ("sweep-bitrate", "train variants × budgets × seeds and summarise returns"),
    ("voi", "value and cost of information on voi_states visited transitions"),
    ("sparsity", "per-coordinate KL of the latent, sorted, over voi_states transitions"),
    ("verify-bounds", "check both return bounds on `draws` random tabular problems"),
    ("hrl", "cross-entropy search over latent plans on a trained agent"),
];

/// Relative output directories are placed under this variable when set.
const OUT_ROOT_VAR: &str = "RPC_LAB_OUT";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Hrl(#[from] HrlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} bound violation(s)")]
    Violations(usize),
}

fn usage() -> String {
    let mut s = String::from("usage: rpc-lab <subcommand> [--config FILE] [--key value ...]\n\nsubcommands:\n");
    for (name, help) in SUBCOMMANDS {
        s.push_str(&format!("  {name:<14} {help}\n"));
    }
    s.push_str(&format!(
        "\nEvery config key is also a flag. Outputs go to `out_dir`; relative\npaths are resolved under ${OUT_ROOT_VAR} when it is set.\n"
    ));
    s
}

/// Split off `--config FILE` and read the rest as key flags.
fn load_config(args: &[String]) -> Result<RunConfig, CliError> {
    let mut file = None;
    let mut flags = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let path = it.next().ok_or_else(|| ConfigError::FlagWithoutValue(a.clone()))?;
            file = Some(PathBuf::from(path));
        } else if let Some(path) = a.strip_prefix("--config=") {
            file = Some(PathBuf::from(path));
        } else {
            flags.push(a.clone());
        }
    }
    let mut config = RunConfig::load(file.as_deref(), &flags)?;
    if let Ok(root) = std::env::var(OUT_ROOT_VAR) {
        if config.out_dir.is_relative() {
            config.out_dir = Path::new(&root).join(&config.out_dir);
        }
    }
    Ok(config)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Run {
    config: RunConfig,
    out: PathBuf,
}

impl Run {
    fn start(config: RunConfig) -> Result<Self, CliError> {
        let out = config.out_dir.clone();
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        let resolved = out.join("config.resolved");
        std::fs::write(&resolved, config.resolved()).map_err(io_err(&resolved))?;
        Ok(Self { config, out })
    }

    fn report<T: serde::Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        write_report(&self.out.join("reports"), name, rows)?;
        println!("wrote {}", self.out.join("reports").join(format!("{name}.jsonl")).display());
        Ok(())
    }

    fn agent(&self) -> Result<AgentParams, CliError> {
        let path = self.config.require_checkpoint()?;
        Ok(load_checkpoint_for(path, &self.config.train_config().arch())?)
    }
}

fn cmd_train(run: &Run) -> Result<(), CliError> {
    let tc = run.config.train_config();
    let out = train(&tc)?;
    let ckpt = run.out.join("checkpoint.bin");
    save_checkpoint(&out.params, &ckpt)?;
    write_metrics(&run.out.join("metrics.jsonl"), &out.metrics)?;
    run.report("train", &out.evals)?;
    let last = out.evals.last().map(|e| e.mean_return);
    println!(
        "trained {} steps: final cost {:.3} bits/step, lambda {:.4}, last eval {}",
        tc.total_steps,
        out.final_cost_bits(0.1),
        out.params.lambda(),
        last.map_or("n/a".into(), |r| format!("{r:.3}")),
    );
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn cmd_eval_dropout(run: &Run) -> Result<(), CliError> {
    let params = run.agent()?;
    let c = &run.config;
    let spec = c.env_spec();
    let mut rows = Vec::new();
    for &p in &c.dropout_ps {
        let r = rollout(&params, &spec, ActMode::Reactive, p, c.episodes, c.seed)?;
        println!("p={p:<6} return {:.3} ± {:.3}  bits/step {:.3}", r.mean_return, r.return_std, r.mean_info_bits);
        rows.push(r);
    }
    run.report("eval-dropout", &rows)
}

fn cmd_eval_pgd_obs(run: &Run) -> Result<(), CliError> {
    let params = run.agent()?;
    let c = &run.config;
    let spec = c.env_spec();
    let mut rows = vec![rollout(&params, &spec, ActMode::Reactive, 0.0, c.episodes, c.seed)?];
    for &eps in &c.epsilons {
        rows.push(pgd_obs_attack(&params, &spec, eps, c.episodes, c.seed)?);
    }
    for r in &rows {
        println!("ε={:<6} return {:.3}", r.condition.epsilon, r.mean_return);
    }
    run.report("eval-pgd-obs", &rows)
}

fn cmd_eval_pgd_dyn(run: &Run) -> Result<(), CliError> {
    let params = run.agent()?;
    let c = &run.config;
    let spec = c.env_spec();
    let mut rows = Vec::new();
    for &eps in &c.epsilons {
        let part = pgd_dyn_attack(&params, &spec, eps, c.n_states, c.seed)?;
        let n = part.len() as f64;
        println!(
            "ε={eps:<6} mean value drop {:.4}  mean return drop {:.4}",
            part.iter().map(|r| r.value_drop).sum::<f64>() / n,
            part.iter().map(|r| r.return_drop).sum::<f64>() / n,
        );
        rows.extend(part);
    }
    run.report("eval-pgd-dyn", &rows)
}

fn cmd_eval_robust(run: &Run) -> Result<(), CliError> {
    let params = run.agent()?;
    let c = &run.config;
    let grid = robust_sweep(&params, &c.env_spec(), &c.mass_scales, &c.friction_scales, c.episodes, c.seed)?;
    let rows: Vec<Value> = grid
        .iter()
        .zip(&c.mass_scales)
        .flat_map(|(row, &m)| {
            row.iter().zip(&c.friction_scales).map(move |(r, &f)| {
                println!("mass ×{m:<5} friction ×{f:<5} return {:.3}", r.mean_return);
                json!({ "mass_scale": m, "friction_scale": f, "report": r })
            })
        })
        .collect();
    run.report("eval-robust", &rows)
}

fn cmd_sweep_bitrate(run: &Run) -> Result<(), CliError> {
    let c = &run.config;
    let rows = bitrate_sweep(&c.train_config(), &c.variants, &c.budgets, &c.seeds, c.last_evals)?;
    for r in &rows {
        println!(
            "{:<10} {:>6} bits  median {:.3} [{:.3}, {:.3}]  measured {:.3} bits",
            r.variant, r.budget_bits, r.median_return, r.q25_return, r.q75_return, r.mean_bits
        );
    }
    run.report("sweep-bitrate", &rows)
}

fn cmd_voi(run: &Run) -> Result<(), CliError> {
    let params = run.agent()?;
    let c = &run.config;
    let pts = voi_scatter(&params, &c.env_spec(), c.voi_states, c.seed)?;
    let voi: Vec<f64> = pts.iter().map(|p| p.voi).collect();
    let coi: Vec<f64> = pts.iter().map(|p| p.coi_nats).collect();
    println!("{} transitions, pearson(voi, coi) = {:.4}", pts.len(), pearson(&voi, &coi));
    run.report("voi", &pts)
}

fn cmd_sparsity(run: &Run) -> Result<(), CliError> {
    let params = run.agent()?;
    let c = &run.config;
    let states = collect_transitions(&params, &c.env_spec(), c.voi_states, c.seed)?;
    let bits = coord_kl_sparsity(&params, &states)?;
    let rows: Vec<Value> = bits
        .iter()
        .enumerate()
        .map(|(rank, b)| json!({ "rank": rank, "bits": b }))
        .collect();
    println!("per-coordinate bits, descending: {bits:.4?}");
    run.report("sparsity", &rows)
}

fn draw_rows(bound: &str, s: &DrawSummary) -> Vec<Value> {
    s.rows
        .iter()
        .enumerate()
        .map(|(i, (lhs, rhs, margin))| {
            println!("{bound} draw {i:>3}: lhs {lhs:.6} rhs {rhs:.6} margin {margin:.6}");
            json!({ "bound": bound, "draw": i, "lhs": lhs, "rhs": rhs, "margin": margin })
        })
        .collect()
}

fn cmd_verify_bounds(run: &Run) -> Result<(), CliError> {
    let c = &run.config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let gap = lemma2_draws(&mut rng, c.draws)?;
    let lower = lemma1_draws(&mut rng, c.draws)?;
    let mut rows = draw_rows("open_loop_gap", &gap);
    rows.extend(draw_rows("open_loop_lower", &lower));
    for (name, s) in [("open_loop_gap", &gap), ("open_loop_lower", &lower)] {
        println!(
            "{name}: {} draws, {} violations, min margin {:.6}",
            s.draws, s.violations, s.min_margin
        );
    }
    run.report("verify-bounds", &rows)?;
    match gap.violations + lower.violations {
        0 => Ok(()),
        n => Err(CliError::Violations(n)),
    }
}

fn cmd_hrl(run: &Run) -> Result<(), CliError> {
    let params = run.agent()?;
    let c = &run.config;
    let res = cem_optimize(&params, &c.env_spec(), c.hrl_k, c.segment_horizon, &c.cem(), c.hrl_env_seed)?;
    for it in &res.curve {
        println!("iteration {:>3}: best {:.3} (this round {:.3})", it.iteration, it.best_return, it.iteration_best);
    }
    println!("best plan return {:.3}: {:?}", res.best_return, res.best.z_list);
    run.report("hrl", &res.curve)
}

fn dispatch(name: &str, args: &[String]) -> Result<(), CliError> {
    if !SUBCOMMANDS.iter().any(|(n, _)| *n == name) {
        return Err(CliError::Usage(format!("unknown subcommand `{name}`")));
    }
    let run = Run::start(load_config(args)?)?;
    match name {
        "train" => cmd_train(&run),
        "eval-dropout" => cmd_eval_dropout(&run),
        "eval-pgd-obs" => cmd_eval_pgd_obs(&run),
        "eval-pgd-dyn" => cmd_eval_pgd_dyn(&run),
        "eval-robust" => cmd_eval_robust(&run),
        "sweep-bitrate" => cmd_sweep_bitrate(&run),
        "voi" => cmd_voi(&run),
        "sparsity" => cmd_sparsity(&run),
        "verify-bounds" => cmd_verify_bounds(&run),
        "hrl" => cmd_hrl(&run),
        _ => unreachable!("checked against SUBCOMMANDS"),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(name) = args.first() else {
        eprint!("{}", usage());
        return ExitCode::from(2);
    };
    if name == "help" || name == "--help" || name == "-h" {
        print!("{}", usage());
        return ExitCode::SUCCESS;
    }
    match dispatch(name, &args[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
