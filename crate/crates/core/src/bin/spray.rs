use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spray_core::config::SimConfig;
use spray_core::scenario::{run_scenario, sweep_r2};
use spray_core::suites::{gronwall_suite, lemma_suite, projection_suite};

#[derive(Parser)]
#[command(name = "spray", version, about = "Thin-spray fluid/kinetic simulator and estimate checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write diagnostics.
    Run(ConfigArgs),
    /// Bidisperse runs over decreasing small radii against the limit system.
    #[command(name = "sweep-r2")]
    SweepR2 {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated, strictly decreasing.
        #[arg(long = "r2_list", value_delimiter = ',', default_values_t = [0.4, 0.2, 0.1])]
        r2_list: Vec<f64>,
    },
    /// Moment inequality, Grönwall and blow-up property suites.
    #[command(name = "check-lemmas")]
    CheckLemmas {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long = "blowup_cases", default_value_t = 50)]
        blowup_cases: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Spectral projector self-tests on random fields.
    #[command(name = "project-test")]
    ProjectTest {
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        fields: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

macro_rules! config_args {
    ($($field:ident),+ $(,)?) => {
        /// `--config FILE` followed by per-key overrides.
        #[derive(Args)]
        struct ConfigArgs {
            /// Flat `key = value` file.
            #[arg(long)]
            config: Option<PathBuf>,
            $(
                #[arg(long = stringify!($field))]
                $field: Option<String>,
            )+
        }

        impl ConfigArgs {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )+
                out
            }
        }
    };
}

config_args!(
    dim,
    n,
    dt,
    t_final,
    scenario,
    r2,
    tau,
    eps,
    particle_count,
    particle_budget,
    seed,
    fluid,
    fluid_amplitude,
    spray,
    spray_density,
    spray_sigma,
    spray_offset,
    rho_init,
    nu,
    output_dir,
    stride,
    snapshot_stride,
    lemma_stride,
    budget_c,
);

impl ConfigArgs {
    fn build(&self) -> spray_core::Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::from_file(path)?,
            None => SimConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json(value: &impl serde::Serialize) -> spray_core::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> spray_core::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let out = run_scenario(args.build()?)?;
            print_json(&out.summary)?;
            Ok(out.summary.pass.all())
        }
        Command::SweepR2 { config, r2_list } => {
            let res = sweep_r2(&config.build()?, &r2_list)?;
            print_json(&res)?;
            Ok(res.delta_decreasing && res.mismatch_non_increasing)
        }
        Command::CheckLemmas { cases, blowup_cases, seed } => {
            let lemma = lemma_suite(3, cases, seed)?;
            let gronwall = gronwall_suite(blowup_cases, seed)?;
            let pass = lemma.failures == 0
                && gronwall.failures == 0
                && gronwall.closed_form_error <= 1e-6
                && gronwall.comparison_pass;
            print_json(&serde_json::json!({ "moment_lemma": lemma, "gronwall": gronwall, "pass": pass }))?;
            Ok(pass)
        }
        Command::ProjectTest { dim, n, fields, seed, tol } => {
            let rep = projection_suite(dim, n, fields, seed)?;
            let pass = rep.pass(tol);
            print_json(&serde_json::json!({ "projection": rep, "tolerance": tol, "pass": pass }))?;
            Ok(pass)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
