use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lognet::analysis::{self, ApEnConfig, EntropyStudy, SweepConfig, APEN_GRID_M, APEN_GRID_R};
use lognet::chaos::MapParams;
use lognet::dataio::{self, LabeledDataset};
use lognet::matrix::fmt_f64;
use lognet::memory_report;
use lognet::network::{self, Architecture, NetworkModel};
use lognet::reservoir::FillMethod;
use lognet::rpso::{self, OptimizationResult, ReservoirFitness, Swarm, SwarmCheckpoint};
use serde::Serialize;

use crate::config::{Manifest, ParamsSection, RunConfig};
use crate::error::CliError;

const PARAM_NAMES: [&str; 6] = ["A", "B", "a1", "a2", "a3", "a4"];
const CHECKPOINT: &str = "checkpoint.json";

struct Run {
    config: RunConfig,
    manifest: Manifest,
}

impl Run {
    fn start(command: &str, config: RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&config.out_dir).map_err(|e| CliError::io(&config.out_dir, e))?;
        let manifest = Manifest::new(command, &config);
        manifest.write(&config.out_dir)?;
        Ok(Self { config, manifest })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn model_path(&self) -> PathBuf {
        if self.config.model.is_absolute() {
            self.config.model.clone()
        } else {
            self.config.out_dir.join(&self.config.model)
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::io(&path, e))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.out(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    fn comment(&self) -> String {
        self.manifest.comment()
    }

    fn datasets(&self) -> Result<(LabeledDataset, LabeledDataset), CliError> {
        let (train, test) = dataio::load_mnist_dir(&self.config.data_dir)?;
        let limit = |d: LabeledDataset, n: Option<usize>| match n {
            Some(n) => d.truncated(n),
            None => d,
        };
        Ok((
            limit(train, self.config.data.train_limit),
            limit(test, self.config.data.test_limit),
        ))
    }
}

fn finish<W: Write>(mut out: W, path: &Path) -> Result<(), CliError> {
    out.flush().map_err(|e| CliError::io(path, e))
}

fn io_err(path: PathBuf) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::io(&path, e)
}

/// Stage one: search map parameters on the optimization subset, scoring on the full base.
pub fn optimize(config: RunConfig, resume: bool) -> Result<(), CliError> {
    let run = Run::start("optimize", config)?;
    let cfg = &run.config;
    let swarm_cfg = cfg.optimize.swarm(cfg.seed)?;
    let method = cfg.reservoir.method()?;
    let architecture = cfg.reservoir.architecture()?;
    let (train, _) = run.datasets()?;
    let subset = dataio::make_split(&train, &cfg.optimize.split(cfg.seed))?;
    let mut train_config = cfg.train.config(cfg.seed)?;
    train_config.max_epochs = cfg.optimize.max_epochs;
    let mut objective = ReservoirFitness {
        method,
        architecture,
        train_config,
        activation: cfg.reservoir.activation,
        train: &subset,
        validation: &train,
    };

    let checkpoint_path = run.out(CHECKPOINT);
    let mut swarm = if resume && checkpoint_path.exists() {
        let text = fs::read_to_string(&checkpoint_path).map_err(io_err(checkpoint_path.clone()))?;
        let cp: SwarmCheckpoint = serde_json::from_str(&text)
            .map_err(|e| lognet::Error::Format(format!("{}: {e}", checkpoint_path.display())))?;
        if cp.config != swarm_cfg {
            return Err(CliError::Config(
                "checkpoint was written with a different swarm configuration".into(),
            ));
        }
        eprintln!("resuming after round {}", cp.iteration);
        Swarm::from_checkpoint(cp)?
    } else {
        Swarm::initialize(swarm_cfg, &mut objective)?
    };
    save_checkpoint(&swarm, &checkpoint_path)?;
    while !swarm.is_finished() {
        swarm.round(&mut objective);
        save_checkpoint(&swarm, &checkpoint_path)?;
        let (_, best) = swarm.best();
        eprintln!(
            "round {:>4}/{}  best {best:.4}",
            swarm.iteration, swarm.config.iterations
        );
    }
    let (best_position, best_fitness) = swarm.best();
    let result = OptimizationResult {
        best_position: best_position.to_vec(),
        best_fitness,
        trace: swarm.trace.clone(),
        history: swarm.history.clone(),
    };

    let mut out = run.create("trace.csv")?;
    rpso::write_trace_csv(&result.trace, &PARAM_NAMES, Some(&run.comment()), &mut out)
        .map_err(io_err(run.out("trace.csv")))?;
    finish(out, &run.out("trace.csv"))?;

    let mut out = run.create("evaluations.csv")?;
    write_history(&result, &run.comment(), &mut out).map_err(io_err(run.out("evaluations.csv")))?;
    finish(out, &run.out("evaluations.csv"))?;

    let params = MapParams::from_vector(&result.best_position)?;
    let fragment = BestFragment {
        reservoir: BestReservoir {
            method: method.id(),
            architecture: architecture.to_string(),
            params: params.into(),
        },
    };
    let text = format!(
        "# {}\n# validation accuracy {}\n{}",
        run.comment(),
        fmt_f64(result.best_fitness),
        toml::to_string(&fragment).expect("fragment serializes")
    );
    run.write_text("best.toml", &text)?;
    println!("best validation accuracy {:.4}", result.best_fitness);
    println!("parameters written to {}", run.out("best.toml").display());
    Ok(())
}

#[derive(Serialize)]
struct BestFragment {
    reservoir: BestReservoir,
}

#[derive(Serialize)]
struct BestReservoir {
    method: u8,
    architecture: String,
    params: ParamsSection,
}

fn save_checkpoint(swarm: &Swarm, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string(&swarm.checkpoint()).expect("checkpoint serializes");
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io_err(tmp.clone()))?;
    fs::rename(&tmp, path).map_err(io_err(path.to_path_buf()))
}

fn write_history<W: Write>(
    result: &OptimizationResult,
    comment: &str,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "# {comment}")?;
    writeln!(
        out,
        "iteration,particle,fitness,wall_time_secs,{}",
        PARAM_NAMES.join(",")
    )?;
    for r in &result.history {
        let fitness = r.fitness.map_or_else(|| "failed".to_string(), fmt_f64);
        let position: Vec<String> = r.position.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(
            out,
            "{},{},{fitness},{:.6},{}",
            r.iteration,
            r.particle,
            r.wall_time_secs,
            position.join(",")
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    architecture: String,
    method: u8,
    params: ParamsSection,
    train_size: usize,
    test_size: usize,
    accuracy: f64,
    correct: usize,
    per_class_accuracy: Vec<f64>,
    confusion: Vec<Vec<usize>>,
    epochs_run: usize,
    epoch_losses: Vec<f64>,
}

/// Stage two: train on the full base and evaluate on the test set.
pub fn train(config: RunConfig) -> Result<(), CliError> {
    let run = Run::start("train", config)?;
    let cfg = &run.config;
    let reservoir = cfg.reservoir.config()?;
    let architecture = cfg.reservoir.architecture()?;
    let train_config = cfg.train.config(cfg.seed)?;
    let (train, test) = run.datasets()?;
    let model = network::train(&train, &architecture, &reservoir, &train_config)?;
    let confusion = network::confusion(&model, &test)?;
    let model_path = run.model_path();
    model.save(&model_path)?;

    let per_class_accuracy = confusion
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[i] as f64 / total as f64
            }
        })
        .collect();
    let metrics = Metrics {
        architecture: architecture.to_string(),
        method: reservoir.method.id(),
        params: reservoir.params.into(),
        train_size: train.len(),
        test_size: test.len(),
        accuracy: confusion.accuracy(),
        correct: confusion.correct(),
        per_class_accuracy,
        confusion: confusion.counts.clone(),
        epochs_run: model.training.epochs_run,
        epoch_losses: model.training.epoch_losses.clone(),
    };
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    run.write_text("metrics.json", &(text + "\n"))?;
    println!(
        "{} method {}: test accuracy {:.4} ({}/{})",
        architecture,
        reservoir.method.id(),
        metrics.accuracy,
        metrics.correct,
        metrics.test_size
    );
    println!("model written to {}", model_path.display());
    Ok(())
}

/// Bifurcation, Poincaré pairs, entropy grid and the entropy/accuracy table over one sweep.
pub fn analyze(config: RunConfig) -> Result<(), CliError> {
    let run = Run::start("analyze", config)?;
    let cfg = &run.config;
    let a = &cfg.analyze;
    let method = cfg.reservoir.method()?;
    let architecture = cfg.reservoir.architecture()?;
    let base = cfg.reservoir.params.map_params();
    let sweep = SweepConfig {
        parameter: a.parameter,
        lo: a.lo,
        hi: a.hi,
        step: a.step,
        base,
        samples: a.samples,
        method,
    };
    sweep
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let comment = run.comment();

    let bifurcation = analysis::bifurcation_sweep(&sweep)?;
    let mut out = run.create("bifurcation.csv")?;
    bifurcation
        .write_csv(Some(&comment), &mut out)
        .map_err(io_err(run.out("bifurcation.csv")))?;
    finish(out, &run.out("bifurcation.csv"))?;

    let mut out = run.create("poincare.csv")?;
    writeln!(out, "# {comment}").map_err(io_err(run.out("poincare.csv")))?;
    writeln!(out, "{},n,x,y", a.parameter.name()).map_err(io_err(run.out("poincare.csv")))?;
    for value in sweep.values() {
        let params = sweep
            .params_at(value)
            .with_preliminary(lognet::chaos::PRELIMINARY_ITERATIONS);
        match analysis::poincare_pairs(&params, a.poincare_count) {
            Ok(pairs) => {
                for (i, s) in pairs.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{}",
                        fmt_f64(value),
                        i + 1,
                        fmt_f64(s.x),
                        fmt_f64(s.y)
                    )
                    .map_err(io_err(run.out("poincare.csv")))?;
                }
            }
            Err(lognet::Error::Overflow { .. }) => {
                writeln!(out, "# overflowed at {}", fmt_f64(value))
                    .map_err(io_err(run.out("poincare.csv")))?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    finish(out, &run.out("poincare.csv"))?;

    let (train, test) = run.datasets()?;
    let study = EntropyStudy {
        architecture,
        train: cfg.train.config(cfg.seed)?,
        train_set: &train,
        test_set: &test,
        series_len: a.series_len,
    };
    let rows = analysis::entropy_accuracy_table(&sweep, &study)?;

    let mut out = run.create("apen_grid.csv")?;
    write_apen_grid(&rows, a.parameter.name(), &comment, &mut out)
        .map_err(io_err(run.out("apen_grid.csv")))?;
    finish(out, &run.out("apen_grid.csv"))?;

    let mut out = run.create("entropy_accuracy.csv")?;
    analysis::write_entropy_accuracy_csv(&rows, a.parameter, Some(&comment), &mut out)
        .map_err(io_err(run.out("entropy_accuracy.csv")))?;
    finish(out, &run.out("entropy_accuracy.csv"))?;

    let headline = ApEnConfig {
        m: a.apen_m,
        r: a.apen_r,
    };
    let mut summary = String::new();
    let _ = writeln!(summary, "# {comment}");
    let _ = writeln!(summary, "points {}", rows.len());
    let _ = writeln!(
        summary,
        "overflowed {}",
        rows.iter().filter(|r| r.overflowed).count()
    );
    for m in APEN_GRID_M {
        for r in APEN_GRID_R {
            let rho = analysis::entropy_accuracy_correlation(&rows, m, r);
            let mark = if m == headline.m && r == headline.r {
                "  *"
            } else {
                ""
            };
            let _ = writeln!(summary, "spearman m={m} r={r} {}{mark}", format_rho(rho));
        }
    }
    if !APEN_GRID_M.contains(&headline.m) || !APEN_GRID_R.contains(&headline.r) {
        // headline pair outside the grid: compute it directly
        let (apen, acc): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .zip(sweep.values())
            .filter(|(row, _)| !row.overflowed)
            .map(|(row, value)| {
                let rc = cfg.reservoir.config_for(
                    method,
                    sweep.params_at(value),
                    architecture.reservoir,
                );
                let series = analysis::filling_series(&rc, a.series_len)?;
                Ok((
                    analysis::approximate_entropy(&series, headline)?,
                    row.accuracy,
                ))
            })
            .collect::<Result<Vec<_>, lognet::Error>>()?
            .into_iter()
            .unzip();
        let rho = analysis::spearman(&apen, &acc);
        let _ = writeln!(
            summary,
            "spearman m={} r={} {}  *",
            headline.m,
            headline.r,
            format_rho(rho)
        );
    }
    run.write_text("summary.txt", &summary)?;
    print!(
        "{}",
        summary
            .lines()
            .skip(1)
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
    Ok(())
}

fn format_rho(rho: Option<f64>) -> String {
    rho.map_or_else(|| "undefined".to_string(), |r| format!("{r:.4}"))
}

fn write_apen_grid<W: Write>(
    rows: &[analysis::EntropyAccuracyRow],
    name: &str,
    comment: &str,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "# {comment}")?;
    let mut header = vec![name.to_string()];
    for m in APEN_GRID_M {
        for r in APEN_GRID_R {
            header.push(format!("m{m}_r{r}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = std::iter::once(row.value)
            .chain(row.apen.iter().flatten().copied())
            .map(fmt_f64)
            .collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Weight-storage footprint of a saved model.
pub fn report(config: RunConfig, model: Option<PathBuf>) -> Result<(), CliError> {
    let run = Run::start("report", config)?;
    let path = model.unwrap_or_else(|| run.model_path());
    let model = NetworkModel::load(&path).map_err(|e| match e {
        lognet::Error::Io(source) => CliError::io(&path, source),
        other => other.into(),
    })?;
    let r = &run.config.report;
    let report = memory_report::footprint(&model, r.mode, r.bytes_per_value);
    let mut out = run.create("footprint.csv")?;
    report
        .write_csv(Some(&run.comment()), &mut out)
        .map_err(io_err(run.out("footprint.csv")))?;
    finish(out, &run.out("footprint.csv"))?;
    run.write_text("footprint.txt", &format!("{report}\n"))?;
    println!("{report}");
    Ok(())
}

/// Methods × architectures accuracy table.
pub fn grid(config: RunConfig) -> Result<(), CliError> {
    let run = Run::start("grid", config)?;
    let cfg = &run.config;
    let methods = cfg
        .grid
        .methods
        .iter()
        .map(|&id| FillMethod::from_id(id).map_err(|e| CliError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let architectures = cfg
        .grid
        .architectures
        .iter()
        .map(|s| {
            s.parse::<Architecture>()
                .map_err(|e| CliError::Config(format!("grid.architectures: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (train, test) = run.datasets()?;
    let subset = if cfg.grid.optimize {
        Some(dataio::make_split(&train, &cfg.optimize.split(cfg.seed))?)
    } else {
        None
    };
    let train_config = cfg.train.config(cfg.seed)?;

    let mut cells = Vec::new();
    for &method in &methods {
        for arch in &architectures {
            let params = match &subset {
                Some(subset) => {
                    let mut search_config = train_config.clone();
                    search_config.max_epochs = cfg.optimize.max_epochs;
                    let mut objective = ReservoirFitness {
                        method,
                        architecture: *arch,
                        train_config: search_config,
                        activation: cfg.reservoir.activation,
                        train: subset,
                        validation: &train,
                    };
                    let result = rpso::optimize(&mut objective, &cfg.optimize.swarm(cfg.seed)?)?;
                    MapParams::from_vector(&result.best_position)?
                }
                None => cfg.reservoir.params.map_params(),
            };
            let rc = cfg.reservoir.config_for(method, params, arch.reservoir);
            let accuracy = match network::train(&train, arch, &rc, &train_config) {
                Ok(model) => Some(network::evaluate(&model, &test)?),
                Err(lognet::Error::Overflow { .. } | lognet::Error::Divergence { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            eprintln!(
                "method {} {arch}: {}",
                method.id(),
                accuracy.map_or("failed".into(), |a| format!("{a:.4}"))
            );
            cells.push((method, *arch, params, accuracy));
        }
    }

    let comment = run.comment();
    let mut csv = format!(
        "# {comment}\nmethod,architecture,accuracy,{}\n",
        PARAM_NAMES.join(",")
    );
    for (method, arch, params, accuracy) in &cells {
        let values: Vec<String> = params.to_vector().iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(
            csv,
            "{},{arch},{},{}",
            method.id(),
            accuracy.map_or_else(|| "failed".into(), fmt_f64),
            values.join(",")
        );
    }
    run.write_text("grid.csv", &csv)?;

    let mut md = format!("<!-- {comment} -->\n\n| Method |");
    for arch in &architectures {
        let _ = write!(md, " {arch} |");
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(architectures.len()));
    md.push('\n');
    for &method in &methods {
        let _ = write!(md, "| {} |", method.id());
        for arch in &architectures {
            let acc = cells
                .iter()
                .find(|(m, a, _, _)| *m == method && a == arch)
                .and_then(|c| c.3);
            let _ = write!(
                md,
                " {} |",
                acc.map_or_else(|| "failed".into(), |a| format!("{:.2}%", a * 100.0))
            );
        }
        md.push('\n');
    }
    run.write_text("grid.md", &md)?;
    print!("{md}");
    Ok(())
}
