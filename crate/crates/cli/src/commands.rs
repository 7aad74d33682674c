use std::fs;
use std::path::{Path, PathBuf};

use bgsindy::baselines::{stlsq, train_stridge, StRidgeConfig, StlsqConfig};
use bgsindy::library::LibrarySpec;
use bgsindy::model::DiscoveredModel;
use bgsindy::pipeline::{
    dataset_hash, parse_grid, preprocess, reduced_libraries, reference_models_for, run_discovery, run_sweep,
    validate_models, DiscoveryConfig, Manifest, RunReport, SweepConfig,
};
use bgsindy::sampling::SampleStrategy;
use bgsindy::simulate::{generate as simulate, BenchmarkConfig, BenchmarkId, IntegrateOptions};
use bgsindy::{Dataset, Error};
use serde::Serialize;
use serde_json::json;

use crate::{
    BaselineArgs, DiscoverArgs, DiscoveryArgs, Failure, GenerateArgs, Method, ReportArgs, StrategyArg, SweepArgs,
    ValidateArgs, EXIT_NUMERICAL, EXIT_STRUCTURE,
};

type Outcome = Result<u8, Failure>;

/// Below this the residual-ratio rule fires on round-off sized changes.
const TAU_WARN: f64 = 1.05;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    Dataset::load(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Writes files into a run directory and records their hashes.
struct Writer {
    dir: PathBuf,
    manifest: Manifest,
}

impl Writer {
    fn new(dir: &Path, manifest: Manifest) -> Result<Self, Failure> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        fs::write(self.dir.join(name), bytes)?;
        self.manifest.record_output(name, bytes);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.bytes(name, text.as_bytes())
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> bgsindy::Result<()>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.bytes(name, &buf)
    }

    fn finish(self, name: &str) -> Result<(), Failure> {
        self.manifest.save(self.dir.join(name))?;
        Ok(())
    }
}

fn benchmark_of(data: &Dataset) -> Option<BenchmarkId> {
    let name = data.metadata().get("benchmark")?.as_str()?;
    BenchmarkId::parse(name)
        .ok()
        .filter(|id| *id != BenchmarkId::CustomModel)
}

/// Preset for the data's benchmark, then the config file, then flags.
fn resolve_discovery(args: &DiscoveryArgs, data: &Dataset) -> Result<DiscoveryConfig, Failure> {
    let mut cfg = match (&args.config, benchmark_of(data)) {
        (Some(path), _) => {
            DiscoveryConfig::load(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
        }
        (None, Some(id)) => DiscoveryConfig::preset(id)?,
        (None, None) => match &args.library_spec {
            Some(_) => DiscoveryConfig::new(LibrarySpec::polynomial_1d(0, 1)),
            None => {
                return Err(Failure::config(
                    "data has no benchmark record; pass --config or --library-spec",
                ))
            }
        },
    };
    if let Some(path) = &args.library_spec {
        cfg.library = read_json(path)?;
    }
    if let Some(tau) = args.tau {
        cfg.pruner.tau = tau;
    }
    if let Some(n) = args.samples {
        cfg.samples = Some(n);
        if cfg.strategy == Some(SampleStrategy::All) {
            cfg.strategy = None;
        }
    }
    if let Some(s) = args.strategy {
        cfg.strategy = Some(match s {
            StrategyArg::All => SampleStrategy::All,
            StrategyArg::UniformRandom => SampleStrategy::UniformRandom,
            StrategyArg::LatinHypercube => SampleStrategy::LatinHypercube,
        });
        if s == StrategyArg::All {
            cfg.samples = None;
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    if cfg.pruner.tau < TAU_WARN {
        log::warn!(
            "tau = {} is close to 1: almost any residual increase triggers the stop rule, so selection happens at or near the full library",
            cfg.pruner.tau
        );
    }
    Ok(cfg)
}

pub fn generate(a: GenerateArgs) -> Outcome {
    let id = BenchmarkId::parse(&a.benchmark)?;
    let mut cfg = match &a.config {
        Some(p) => BenchmarkConfig::load(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        None => BenchmarkConfig::default_for(id)?,
    };
    if cfg.benchmark != id {
        return Err(Failure::config(format!(
            "config is for {} but {} was requested",
            cfg.benchmark.name(),
            id.name()
        )));
    }
    if a.full_resolution {
        cfg = cfg.full_resolution();
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(t) = a.t_end {
        cfg.t_end = t;
    }
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    let name = a.name.clone().unwrap_or_else(|| id.name().to_string());
    fs::create_dir_all(&a.out)?;
    let data = match simulate(&cfg) {
        Ok(d) => d,
        Err(Error::Instability { message, partial }) => {
            if let Some(p) = partial {
                p.save(a.out.join(format!("{name}.partial")))?;
            }
            return Err(Failure {
                code: EXIT_NUMERICAL,
                message,
            });
        }
        Err(e) => return Err(e.into()),
    };
    data.save(a.out.join(&name))?;
    let mut manifest = Manifest::new("generate", &cfg, vec![])?;
    manifest.outputs.insert(format!("{name}.bin"), dataset_hash(&data));
    manifest.save(a.out.join(format!("{name}.manifest.json")))?;
    println!("wrote {} {:?}", a.out.join(&name).display(), data.shape());
    Ok(0)
}

pub fn discover(a: DiscoverArgs) -> Outcome {
    let data = load_data(&a.data)?;
    let cfg = resolve_discovery(&a.discovery, &data)?;
    let report = run_discovery(&data, &cfg, !a.no_integrate)?;
    let mut manifest = Manifest::new("discover", &cfg, vec![cfg.seed])?;
    manifest.inputs.insert("data".into(), report.data_hash.clone());
    let mut w = Writer::new(&a.out, manifest)?;
    w.json("config.json", &cfg)?;
    w.json("report.json", &report)?;
    for f in &report.fields {
        let field = &f.model.target_field;
        w.json(&format!("model_{field}.json"), &f.model)?;
        w.json(&format!("trace_{field}.json"), &f.trace)?;
        w.csv(&format!("trace_{field}.csv"), |buf| f.trace.write_csv(buf))?;
    }
    w.csv("residuals.csv", |buf| report.write_residual_csv(buf))?;
    w.finish("manifest.json")?;
    for eq in &report.equations {
        println!("{eq}");
    }
    if let Some(v) = &report.validation {
        if !v.structure_ok {
            log::warn!("discovered structure differs from the reference equations");
        }
    }
    Ok(0)
}

pub fn baseline(a: BaselineArgs) -> Outcome {
    let data = load_data(&a.data)?;
    let cfg = resolve_discovery(&a.discovery, &data)?;
    let prepared = preprocess(&data, &cfg)?;
    let libraries = reduced_libraries(&prepared, &cfg)?;
    let (params, models) = match a.method {
        Method::Stlsq => {
            let mut p: StlsqConfig = match &a.params {
                Some(path) => read_json(path)?,
                None => StlsqConfig::default(),
            };
            if let Some(t) = a.threshold {
                p.threshold = t;
            }
            if !(p.threshold >= 0.0) {
                return Err(Failure::config("threshold must be >= 0"));
            }
            let models = libraries
                .iter()
                .map(|r| stlsq(&r.library, &p))
                .collect::<bgsindy::Result<Vec<_>>>()?;
            (serde_json::to_value(&p)?, models)
        }
        Method::Stridge => {
            let p: StRidgeConfig = match &a.params {
                Some(path) => read_json(path)?,
                None => StRidgeConfig::default(),
            };
            let models = libraries
                .iter()
                .map(|r| train_stridge(&r.library, &p))
                .collect::<bgsindy::Result<Vec<_>>>()?;
            (serde_json::to_value(&p)?, models)
        }
    };
    for m in &models {
        if m.empty {
            log::warn!(
                "every coefficient of the {} equation was thresholded away",
                m.target_field
            );
        }
    }
    match &a.out {
        Some(dir) => {
            let run = json!({ "discovery": cfg, "params": params });
            let mut manifest = Manifest::new("baseline", &run, vec![cfg.seed])?;
            manifest.inputs.insert("data".into(), dataset_hash(&data));
            let mut w = Writer::new(dir, manifest)?;
            let method = match a.method {
                Method::Stlsq => "stlsq",
                Method::Stridge => "stridge",
            };
            for m in &models {
                w.json(&format!("{method}_{}.json", m.target_field), m)?;
            }
            w.finish(&format!("{method}_manifest.json"))?;
            for m in &models {
                println!("{}", m.equation());
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&models)?),
    }
    Ok(0)
}

/// A model file, or every model of a discovery report.
fn load_models(path: &Path) -> Result<Vec<DiscoveredModel>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    if let Ok(m) = DiscoveredModel::from_json(&text) {
        return Ok(vec![m]);
    }
    RunReport::from_json(&text)
        .map(|r| r.models())
        .map_err(|_| Failure::config(format!("{}: neither a model nor a run report", path.display())))
}

pub fn validate(a: ValidateArgs) -> Outcome {
    let mut models = Vec::new();
    for p in &a.model {
        models.extend(load_models(p)?);
    }
    let data = load_data(&a.reference)?;
    let references = if a.reference_model.is_empty() {
        reference_models_for(&data)?
            .ok_or_else(|| Failure::config("reference data has no benchmark record; pass --reference-model"))?
    } else {
        let mut refs = Vec::new();
        for p in &a.reference_model {
            refs.extend(load_models(p)?);
        }
        refs
    };
    let data_for_l2 = (!a.no_integrate).then_some(&data);
    let v = validate_models(&models, &references, data_for_l2, &IntegrateOptions::default())?;
    let text = serde_json::to_string_pretty(&v)? + "\n";
    match &a.out {
        Some(p) => fs::write(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(e) = &v.integration_error {
        eprintln!("error: {e}");
        return Ok(EXIT_NUMERICAL);
    }
    if !v.structure_ok {
        for f in v.fields.iter().filter(|f| !f.structure.matches) {
            let names =
                |d: &[bgsindy::metrics::TermDiff]| d.iter().map(|t| t.term.clone()).collect::<Vec<_>>().join(", ");
            eprintln!(
                "{}: missing [{}] spurious [{}]",
                f.field,
                names(&f.structure.missing),
                names(&f.structure.spurious)
            );
        }
        return Ok(EXIT_STRUCTURE);
    }
    Ok(0)
}

pub fn sweep(a: SweepArgs) -> Outcome {
    let data = match &a.data {
        Some(p) => load_data(p)?,
        None => simulate(&BenchmarkConfig::default_for(BenchmarkId::parse(&a.benchmark)?)?)?,
    };
    let mut discovery = match &a.config {
        Some(p) => DiscoveryConfig::load(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        None => {
            let id =
                benchmark_of(&data).ok_or_else(|| Failure::config("data has no benchmark record; pass --config"))?;
            let mut c = DiscoveryConfig::preset(id)?;
            c.smoothing = Some(DiscoveryConfig::denoising());
            c
        }
    };
    if let Some(tau) = a.tau {
        discovery.pruner.tau = tau;
    }
    let noise = parse_grid(&a.noise)?;
    let samples = a
        .samples
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::config(format!("cannot parse sample counts '{}'", a.samples)))?;
    if a.replicates == 0 {
        return Err(Failure::config("replicates must be positive"));
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.replicates).collect();
    let cfg = SweepConfig {
        discovery,
        field: a.field.clone(),
        noise,
        samples,
        seeds: seeds.clone(),
    };
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    let result = run_sweep(&data, &cfg)?;
    let mut manifest = Manifest::new("sweep", &cfg, seeds)?;
    manifest.inputs.insert("data".into(), dataset_hash(&data));
    let mut w = Writer::new(&a.out, manifest)?;
    w.json("sweep.json", &result)?;
    w.csv("heatmap.csv", |buf| result.write_heatmap_csv(buf))?;
    w.csv("cells.csv", |buf| result.write_cells_csv(buf))?;
    w.finish("manifest.json")?;
    let mut out = Vec::new();
    result.write_heatmap_csv(&mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(0)
}

#[derive(Serialize)]
struct FieldSummary {
    field: String,
    equation: String,
    terms: usize,
    residual: f64,
    selected_iteration: usize,
    triggered: bool,
    residual_history: Vec<f64>,
    removed_terms: Vec<String>,
    structure_ok: Option<bool>,
    coefficient_error: Option<f64>,
    relative_l2: Option<f64>,
}

pub fn report(a: ReportArgs) -> Outcome {
    let path = a.run.join("report.json");
    let report = RunReport::load(&path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let summaries: Vec<FieldSummary> = report
        .fields
        .iter()
        .map(|f| {
            let field = f.model.target_field.clone();
            let v = report
                .validation
                .as_ref()
                .and_then(|v| v.fields.iter().find(|x| x.field == field));
            FieldSummary {
                equation: f.model.equation(),
                terms: f.model.len(),
                residual: f.model.residual,
                selected_iteration: f.trace.selected_iteration,
                triggered: f.trace.triggered,
                residual_history: f.trace.residuals(),
                removed_terms: f
                    .trace
                    .iterations
                    .iter()
                    .filter_map(|it| it.removed_term.clone())
                    .collect(),
                structure_ok: v.map(|v| v.structure.matches),
                coefficient_error: v.and_then(|v| v.coefficient_error),
                relative_l2: v.and_then(|v| v.relative_l2),
                field,
            }
        })
        .collect();
    let summary = json!({
        "version": report.version,
        "config_hash": report.config_hash,
        "data_hash": report.data_hash,
        "fields": summaries,
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(a.run.join("summary.json"), &text)?;

    let mut w = csv::Writer::from_path(a.run.join("summary.csv")).map_err(|e| Failure::config(e.to_string()))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    w.write_record([
        "field",
        "equation",
        "terms",
        "residual",
        "structure_ok",
        "coefficient_error",
        "relative_l2",
    ])
    .map_err(|e| Failure::config(e.to_string()))?;
    for s in &summaries {
        w.write_record([
            s.field.clone(),
            s.equation.clone(),
            s.terms.to_string(),
            s.residual.to_string(),
            s.structure_ok.map_or(String::new(), |b| b.to_string()),
            opt(s.coefficient_error),
            opt(s.relative_l2),
        ])
        .map_err(|e| Failure::config(e.to_string()))?;
    }
    w.flush()?;
    print!("{text}");
    Ok(0)
}
