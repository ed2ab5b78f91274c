//! Subcommand execution.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use nalgebra::DVector;
use serde::Serialize;

use sflm_core::diagnostics::{morans_i_permutation_test, moran_scatter, Alternative};
use sflm_core::estimator::{fit_sflm, SflmFit};
use sflm_core::fpca::{fit_fpca, select_truncation_pve};
use sflm_core::functional_data::SampleGrid;
use sflm_core::io;
use sflm_core::model_selection::{
    enumerate_and_rank, CandidateModel, Hyperparams, SelectionResult,
};
use sflm_core::simulation::{replicate_detail, run_replications, summarize, SimConfig};
use sflm_core::spatial_weights::SpatialWeights;

use crate::manifest::{self, Manifest};
use crate::{
    Cli, CliError, Command, FitArgs, MoranArgs, RerunArgs, SelectArgs, SimulateArgs, SmoothArgs,
    WeightSourceArgs,
};

pub fn execute(cli: Cli, raw_args: &[String]) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let out_dir = resolve_out_dir(cli.out.as_deref());

    if let Command::Rerun(args) = &cli.command {
        return rerun(args, &out_dir, cli.threads);
    }

    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;

    let command_name = cli.command.name();
    pool.install(|| match &cli.command {
        Command::Simulate(args) => simulate(args, &out_dir),
        Command::Fit(args) => fit(args, &out_dir),
        Command::Select(args) => select(args, &out_dir),
        Command::Moran(args) => moran(args, &out_dir),
        Command::Smooth(args) => smooth(args, &out_dir),
        Command::Rerun(_) => unreachable!("handled above"),
    })?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command_name.to_string(),
        args: manifest::computation_args(raw_args),
        out_dir: out_dir.display().to_string(),
        threads: cli.threads,
    };
    manifest::write(&out_dir.join("manifest.json"), &manifest)
}

fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(env_dir) = std::env::var_os("SFLM_OUT_DIR") {
        return PathBuf::from(env_dir);
    }
    PathBuf::from(".")
}

fn rerun(args: &RerunArgs, out_dir: &Path, threads: usize) -> Result<(), CliError> {
    let recorded = manifest::read(&args.manifest)?;
    if recorded.command == "rerun" {
        return Err(CliError::Usage("manifest records a rerun; nothing to replay".into()));
    }
    let mut argv: Vec<String> = vec!["sflm".into()];
    argv.extend(recorded.args.iter().cloned());
    argv.push("--out".into());
    argv.push(out_dir.display().to_string());
    argv.push("--threads".into());
    argv.push(threads.to_string());
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| CliError::Usage(format!("manifest does not parse: {e}")))?;
    execute(cli, &argv[1..])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("cannot encode {}: {e}", path.display())))?;
    fs::write(path, json + "\n")
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

impl WeightSourceArgs {
    /// Builds the row-normalized weight matrix, enforcing exactly one source.
    fn build(&self, expected_n: Option<usize>) -> Result<SpatialWeights, CliError> {
        let sources =
            usize::from(self.rook.is_some()) + usize::from(self.knn.is_some()) + usize::from(self.weights.is_some());
        if sources != 1 {
            return Err(CliError::Usage(
                "give exactly one weight source: --rook R C, --knn K --coords FILE, or --weights FILE"
                    .into(),
            ));
        }
        let w = if let Some(dims) = &self.rook {
            SpatialWeights::build_rook_grid(dims[0], dims[1])?
        } else if let Some(k) = self.knn {
            let coords_path = self.coords.as_ref().ok_or_else(|| {
                CliError::Usage("--knn requires --coords FILE".into())
            })?;
            let coords = io::read_coords_csv(coords_path)?;
            SpatialWeights::build_knn_inverse_distance(
                &coords,
                k,
                self.cutoff.unwrap_or(f64::INFINITY),
            )?
        } else {
            io::read_edge_list_csv(self.weights.as_ref().expect("checked above"))?
        };
        if let Some(n) = expected_n {
            if w.n() != n {
                return Err(CliError::Usage(format!(
                    "weight source has {} units but the data has {n}",
                    w.n()
                )));
            }
        }
        let w = w.row_normalize();
        let isolated = w.zero_weight_rows();
        if !isolated.is_empty() {
            eprintln!("note: {} unit(s) have no neighbours: {:?}", isolated.len(), isolated);
        }
        Ok(w)
    }
}

fn simulate(args: &SimulateArgs, out_dir: &Path) -> Result<(), CliError> {
    let mut cfg = SimConfig::new(args.rows, args.cols, args.rho, args.gamma, args.reps, args.seed);
    cfg.pve = args.pve;
    cfg.noise_scale = args.noise_scale;
    cfg.n_terms = args.n_terms;
    cfg.grid_size = args.grid_size;

    let run = run_replications(&cfg)?;
    for (rep, msg) in &run.failures {
        eprintln!("note: replication {rep} failed: {msg}");
    }
    let summary = summarize(&cfg, &run);
    write_json(&out_dir.join("summary.json"), &summary)?;

    if args.per_rep {
        let path = out_dir.join("replications.csv");
        io::write_rep_records_csv(&path, &run.records)?;
        println!("wrote {}", path.display());
    }
    if args.emit_data {
        let detail = replicate_detail(&cfg, 0)?;
        let curves = out_dir.join("curves.csv");
        io::write_curves_csv(&curves, &detail.predictors)?;
        println!("wrote {}", curves.display());
        let response = out_dir.join("response.csv");
        let y: Vec<f64> = detail.response.iter().copied().collect();
        io::write_response_csv(&response, &y)?;
        println!("wrote {}", response.display());
    }
    if let Some(rep) = args.beta_curves {
        let detail = replicate_detail(&cfg, rep)?;
        let path = out_dir.join("beta_curves.csv");
        let mut text = String::from("t,beta_true,beta_sflm,beta_flm\n");
        let grid = SampleGrid::uniform(cfg.grid_size)?;
        for (i, &t) in grid.points().iter().enumerate() {
            text.push_str(&format!(
                "{},{},{},{}\n",
                io::fmt_real(t),
                io::fmt_real(detail.beta_true[i]),
                io::fmt_real(detail.sflm.beta_hat[i]),
                io::fmt_real(detail.flm.beta_hat[i]),
            ));
        }
        fs::write(&path, text)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn fit(args: &FitArgs, out_dir: &Path) -> Result<(), CliError> {
    if args.pve.is_some() && args.m.is_some() {
        return Err(CliError::Usage("give either --pve or --m, not both".into()));
    }
    let curves = io::read_curves_csv(&args.curves)?;
    let y = io::read_response_csv(&args.response)?;
    if y.len() != curves.n_units() {
        return Err(CliError::Usage(format!(
            "response has {} rows but curves have {} units",
            y.len(),
            curves.n_units()
        )));
    }
    let w = args.weight_source.build(Some(curves.n_units()))?;
    let basis = fit_fpca(&curves)?;
    let m = match args.m {
        Some(m) => m,
        None => select_truncation_pve(basis.eigenvalues(), args.pve.unwrap_or(0.70))?,
    };
    let y = DVector::from_column_slice(&y);
    let fit = fit_sflm(&y, &basis, &w, m, !args.no_intercept)?;
    if !fit.converged {
        eprintln!("note: spatial parameter stopped on the boundary of [0, 1)");
    }
    write_fit_outputs(&fit, out_dir)
}

fn write_fit_outputs(fit: &SflmFit, out_dir: &Path) -> Result<(), CliError> {
    let fit_path = out_dir.join("fit.json");
    io::serialize_fit(fit, &fit_path)?;
    println!("wrote {}", fit_path.display());
    let beta_path = out_dir.join("beta.csv");
    let pairs: Vec<(f64, f64)> = fit
        .grid
        .iter()
        .copied()
        .zip(fit.beta_hat.iter().copied())
        .collect();
    io::write_pairs_csv(&beta_path, "t,beta", &pairs)?;
    println!("wrote {}", beta_path.display());
    Ok(())
}

/// One line of the ranked candidate table.
#[derive(Debug, Serialize)]
struct SelectionRow {
    m: usize,
    weights_id: String,
    /// Concentrated log-likelihood of the maximum-likelihood fit.
    loglik: Option<f64>,
    log_marginal: f64,
    ratio: f64,
    probability: f64,
}

#[derive(Debug, Serialize)]
struct SelectionReport {
    reference: CandidateModel,
    best: CandidateModel,
    rows: Vec<SelectionRow>,
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>, CliError> {
    let text = text.trim();
    let parse_one = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("cannot parse {what} entry `{s}`")))
    };
    let values: Vec<usize> = if let Some((lo, hi)) = text.split_once("..") {
        let lo = parse_one(lo)?;
        let hi = parse_one(hi)?;
        if lo > hi {
            return Err(CliError::Usage(format!("empty {what} range `{text}`")));
        }
        (lo..=hi).collect()
    } else {
        text.split(',').map(parse_one).collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(CliError::Usage(format!("no {what} values given")));
    }
    Ok(values)
}

fn select(args: &SelectArgs, out_dir: &Path) -> Result<(), CliError> {
    let curves = io::read_curves_csv(&args.curves)?;
    let y = io::read_response_csv(&args.response)?;
    let coords = io::read_coords_csv(&args.coords)?;
    let n = curves.n_units();
    if y.len() != n || coords.len() != n {
        return Err(CliError::Usage(format!(
            "curves ({n}), response ({}), and coordinates ({}) disagree on the unit count",
            y.len(),
            coords.len()
        )));
    }
    let ks = parse_usize_list(&args.ks, "--ks")?;
    let ms = parse_usize_list(&args.ms, "--ms")?;
    let cutoff = args.cutoff.unwrap_or(f64::INFINITY);

    let hyper = match &args.hyper {
        Some(text) => {
            let parts: Vec<&str> = text.split(',').collect();
            if parts.len() != 4 {
                return Err(CliError::Usage("--hyper needs four values a,b,g,d".into()));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("cannot parse hyperparameter `{s}`")))
            };
            Hyperparams {
                a: parse(parts[0])?,
                b: parse(parts[1])?,
                g: parse(parts[2])?,
                d: parse(parts[3])?,
            }
        }
        None => Hyperparams::defaults(n),
    };
    hyper.validate()?;

    let mut weight_sets = Vec::new();
    for &k in &ks {
        let w = SpatialWeights::build_knn_inverse_distance(&coords, k, cutoff)?.row_normalize();
        weight_sets.push((format!("k={k}"), w));
    }

    let reference = match &args.reference {
        Some(text) => {
            let (m_txt, k_txt) = text.split_once(',').ok_or_else(|| {
                CliError::Usage("--reference needs two values m,k".into())
            })?;
            let m = m_txt.trim().parse::<usize>().map_err(|_| {
                CliError::Usage(format!("cannot parse reference m `{m_txt}`"))
            })?;
            let k = k_txt.trim().parse::<usize>().map_err(|_| {
                CliError::Usage(format!("cannot parse reference k `{k_txt}`"))
            })?;
            CandidateModel {
                m,
                weights_id: format!("k={k}"),
            }
        }
        None => CandidateModel {
            m: *ms.iter().min().expect("nonempty"),
            weights_id: format!("k={}", ks.iter().min().expect("nonempty")),
        },
    };

    let basis = fit_fpca(&curves)?;
    let y = DVector::from_column_slice(&y);
    let result: SelectionResult =
        enumerate_and_rank(&y, basis.scores(), &ms, &weight_sets, &hyper, &reference)?;

    // The table reports both evidence and the profile log-likelihood of the
    // matching maximum-likelihood fit.
    let mut rows = Vec::with_capacity(result.candidates.len());
    for score in &result.candidates {
        let w = &weight_sets
            .iter()
            .find(|(id, _)| *id == score.model.weights_id)
            .expect("candidate weights exist")
            .1;
        let loglik = fit_sflm(&y, &basis, w, score.model.m, true)
            .ok()
            .map(|f| f.loglik);
        rows.push(SelectionRow {
            m: score.model.m,
            weights_id: score.model.weights_id.clone(),
            loglik,
            log_marginal: score.log_marginal,
            ratio: score.ratio,
            probability: score.probability,
        });
    }
    let report = SelectionReport {
        reference: result.candidates[result.reference].model.clone(),
        best: result.best_model().clone(),
        rows,
    };
    write_json(&out_dir.join("selection.json"), &report)?;

    let csv_path = out_dir.join("selection.csv");
    let mut text = String::from("m,weights_id,loglik,log_marginal,ratio,probability\n");
    for row in &report.rows {
        let loglik = row.loglik.map(io::fmt_real).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.m,
            row.weights_id,
            loglik,
            io::fmt_real(row.log_marginal),
            io::fmt_real(row.ratio),
            io::fmt_real(row.probability),
        ));
    }
    fs::write(&csv_path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", csv_path.display())))?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn moran(args: &MoranArgs, out_dir: &Path) -> Result<(), CliError> {
    let y = io::read_response_csv(&args.response)?;
    let w = args.weight_source.build(Some(y.len()))?;
    let alternative = if args.two_sided {
        Alternative::TwoSided
    } else {
        Alternative::Greater
    };
    let result = morans_i_permutation_test(&y, &w, args.permutations, args.seed, alternative)?;
    write_json(&out_dir.join("moran.json"), &result)?;
    if args.scatter {
        let pairs = moran_scatter(&y, &w)?;
        let path = out_dir.join("scatter.csv");
        io::write_pairs_csv(&path, "z,lag", &pairs)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn smooth(args: &SmoothArgs, out_dir: &Path) -> Result<(), CliError> {
    let raw = io::read_raw_observations_csv(&args.raw)?;
    let grid = SampleGrid::uniform(args.grid_size)?;
    let ds = sflm_core::functional_data::smooth_curves(&raw, &grid, args.bandwidth)?;
    let path = out_dir.join("curves.csv");
    io::write_curves_csv(&path, &ds)?;
    println!("wrote {}", path.display());
    Ok(())
}
