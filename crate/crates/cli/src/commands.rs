use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use aupat::analytics::{analyse_fixtures, fixture_checks, sha256_hex, FixtureSet};
use aupat::au_model::{parse_annotations, write_annotations, AuRegistry, DatasetTable};
use aupat::experiments::{
    eval_unseen, exp1_multi_au, exp2_single_au, exp3_pattern_pretrain, exp4_all_patterns, make_folds, parse_predictions_csv,
    predictions_csv, ExperimentConfig, ExperimentData, ExperimentError, FoldPlan, ModelRun, RunManifest,
};
use aupat::metrics::pooled_report;
use aupat::nn::{load_checkpoint, save_checkpoint, ModelState};
use aupat::pattern_mining::{
    base_rates, base_rates_csv, census, histogram, histogram_csv, patterns_report_csv, task_tops_csv, top_pattern_per_task,
    PatternCodebook, DEFAULT_BIN_EDGES,
};
use aupat::synthgen::{bp4d_like_spec, desk_spec, generate, read_images, write_images, SynthSpec};
use serde::Serialize;
use serde_json::json;

use crate::{config, Classify, Experiment, Failure, Profile, RunArgs, EXIT_DATA, EXIT_TOLERANCE};

type CmdResult = Result<u8, Failure>;

/// Collects files written into one output directory with their digests.
struct OutputDir {
    path: PathBuf,
    created_unix: u64,
    outputs: BTreeMap<String, String>,
}

impl OutputDir {
    /// `parent/<label>-<unix seconds>`, suffixed if that name is taken.
    fn create(parent: &Path, label: &str) -> Result<Self, Failure> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).usage()?;
        let mut path = parent.join(format!("{label}-{created_unix}"));
        let mut n = 2;
        while path.exists() {
            path = parent.join(format!("{label}-{created_unix}-{n}"));
            n += 1;
        }
        fs::create_dir(&path).with_context(|| format!("creating {}", path.display())).usage()?;
        Ok(Self { path, created_unix, outputs: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let p = self.path.join(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display())).usage()?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_manifest<T: Serialize>(&self, manifest: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(manifest).context("serialising manifest").usage()?;
        let p = self.path.join("manifest.json");
        fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display())).usage()
    }
}

/// Manifest for the non-experiment commands.
#[derive(Serialize)]
struct ToolManifest<'a> {
    command: &'a str,
    created_unix: u64,
    version: &'a str,
    args: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).with_context(|| format!("reading {}", path.display())).data()
}

/// Registry from the `AU<code>` columns after `subject,task,frame`.
fn registry_from_header(text: &str, path: &Path) -> Result<AuRegistry, Failure> {
    let header = text.lines().next().ok_or_else(|| anyhow!("{}: empty file", path.display())).data()?;
    let codes = header
        .trim_end()
        .split(',')
        .skip(3)
        .map(|c| c.strip_prefix("AU").and_then(|n| n.parse::<u16>().ok()).ok_or_else(|| anyhow!("{}: bad AU column {c:?}", path.display())))
        .collect::<Result<Vec<u16>, _>>()
        .data()?;
    AuRegistry::new(codes).with_context(|| format!("{}: AU columns", path.display())).data()
}

fn load_annotations(path: &Path) -> Result<(DatasetTable, String), Failure> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| anyhow!("{} is not UTF-8", path.display())).data()?;
    let registry = registry_from_header(&text, path)?;
    let table = parse_annotations(&text, &registry).with_context(|| format!("parsing {}", path.display())).data()?;
    Ok((table, sha256_hex(text.as_bytes())))
}

pub fn analyze(annotations: &Path, out: &Path) -> CmdResult {
    let (table, digest) = load_annotations(annotations)?;
    let cen = census(&table).data()?;
    let rates = base_rates(&table).data()?;
    let mut edges = DEFAULT_BIN_EDGES.to_vec();
    let max_count = cen.ranked().first().map(|e| e.1).unwrap_or(0);
    if max_count > *edges.last().unwrap() {
        *edges.last_mut().unwrap() = max_count;
    }
    let hist = histogram(&cen, &edges).data()?;
    let tops = top_pattern_per_task(&table);

    let mut dir = OutputDir::create(out, "analyze")?;
    dir.write("base_rates.csv", base_rates_csv(&rates).as_bytes())?;
    dir.write("patterns.csv", patterns_report_csv(&cen).as_bytes())?;
    dir.write("histogram.csv", histogram_csv(&edges, &hist).as_bytes())?;
    dir.write("task_tops.csv", task_tops_csv(&tops, table.task_emotions()).as_bytes())?;
    dir.write_manifest(&ToolManifest {
        command: "analyze",
        created_unix: dir.created_unix,
        version: env!("CARGO_PKG_VERSION"),
        args: json!({ "annotations": annotations }),
        inputs: BTreeMap::from([(annotations.display().to_string(), digest)]),
        outputs: &dir.outputs,
    })?;

    println!("{} frames, {} subjects, {} distinct patterns", table.len(), table.subjects().len(), cen.distinct());
    println!("{:<8}{:>8}  pattern", "rank", "count");
    for (i, (p, c)) in cen.ranked().iter().take(10).enumerate() {
        println!("{:<8}{:>8}  {p}", i + 1, c);
    }
    println!("occurrences  % of patterns");
    for (w, h) in edges.windows(2).zip(&hist) {
        println!("{:>5}-{:<6}{:>8.2}", w[0], w[1], h);
    }
    println!("wrote {}", dir.path.display());
    Ok(0)
}

pub fn paper_tables(fixtures: &Path, std_with_ones: bool, out: &Path) -> CmdResult {
    let fx = FixtureSet::load(fixtures).with_context(|| format!("loading fixtures from {}", fixtures.display())).data()?;
    let an = analyse_fixtures(&fx, std_with_ones).data()?;
    let checks = fixture_checks(&fx, &an);

    let mut ones =
        String::from("au,fixture_f1_micro,fixture_f1_binary,closed_f1_binary,fixture_f1_macro,closed_f1_macro,fixture_auc,closed_auc\n");
    for (row, closed) in fx.ones_experiment1.iter().zip(&an.ones_closed_form.rows) {
        ones.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.au, row.f1_micro, row.f1_binary, closed.f1_binary.value, row.f1_macro, closed.f1_macro.value, row.auc, closed.auc.value
        ));
    }
    let mut hist = String::from("bin_lo,bin_hi,fixture_percent,computed_percent\n");
    for (bin, got) in fx.bp4d_histogram.iter().zip(&an.histogram) {
        hist.push_str(&format!("{},{},{},{}\n", bin.lo, bin.hi, bin.percent, got));
    }
    let lines: Vec<String> = checks.iter().map(|c| c.to_string()).collect();

    let mut dir = OutputDir::create(out, "paper-tables")?;
    dir.write("bp4d_correlations.csv", an.bp4d_correlations.to_csv().as_bytes())?;
    dir.write("disfa_correlations.csv", an.disfa_correlations.to_csv().as_bytes())?;
    dir.write("bp4d_std.csv", an.bp4d_std.to_csv().as_bytes())?;
    dir.write("disfa_std.csv", an.disfa_std.to_csv().as_bytes())?;
    dir.write("ones_consistency.csv", ones.as_bytes())?;
    dir.write("histogram.csv", hist.as_bytes())?;
    dir.write("checks.txt", (lines.join("\n") + "\n").as_bytes())?;
    dir.write_manifest(&ToolManifest {
        command: "paper-tables",
        created_unix: dir.created_unix,
        version: env!("CARGO_PKG_VERSION"),
        args: json!({ "fixtures": fixtures, "std_with_ones": std_with_ones }),
        inputs: fx.hashes.clone(),
        outputs: &dir.outputs,
    })?;

    for l in &lines {
        println!("{l}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks within tolerance; wrote {}", checks.len() - failed, checks.len(), dir.path.display());
    Ok(if failed == 0 { 0 } else { EXIT_TOLERANCE })
}

pub fn gen_data(profile: Profile, seed: u64, noise: Option<f64>, subjects: Option<usize>, frames: Option<usize>, out: &Path) -> CmdResult {
    let mut spec = match profile {
        Profile::Desk => desk_spec(seed),
        Profile::Bp4d => bp4d_like_spec(seed),
    };
    if let Some(v) = noise {
        spec.noise_std = v;
    }
    if let Some(v) = subjects {
        spec.n_subjects = v;
    }
    if let Some(v) = frames {
        spec.frames_per_subject = v;
    }
    spec.validate().usage()?;
    let ds = generate(&spec).usage()?;
    let keys: Vec<String> = ds.table.frames().iter().map(|f| f.key()).collect();
    let mut images = Vec::new();
    write_images(&mut images, &keys, &ds.images).usage()?;

    let mut dir = OutputDir::create(out, "data")?;
    dir.write("annotations.csv", write_annotations(&ds.table).as_bytes())?;
    dir.write("images.bin", &images)?;
    dir.write("spec.json", serde_json::to_string_pretty(&spec).context("serialising spec").usage()?.as_bytes())?;
    dir.write_manifest(&ToolManifest {
        command: "gen-data",
        created_unix: dir.created_unix,
        version: env!("CARGO_PKG_VERSION"),
        args: json!({ "profile": format!("{profile:?}").to_lowercase(), "seed": seed, "spec": spec }),
        inputs: BTreeMap::new(),
        outputs: &dir.outputs,
    })?;
    println!("{} frames of {} subjects, {}px images; wrote {}", ds.table.len(), spec.n_subjects, spec.image_side, dir.path.display());
    Ok(0)
}

fn experiment_failure(e: ExperimentError) -> Failure {
    let code = match e {
        ExperimentError::Data(_) | ExperimentError::Mining(_) | ExperimentError::Metric(_) | ExperimentError::Protocol(_) => EXIT_DATA,
        _ => crate::EXIT_USAGE,
    };
    Failure { code, error: e.into() }
}

/// Data for a run: a `gen-data` directory or the desk profile generated in memory.
fn load_run_data(args: &RunArgs, seed: u64) -> Result<(ExperimentData, serde_json::Value), Failure> {
    let Some(dir) = &args.data else {
        let spec = desk_spec(seed);
        let ds = generate(&spec).usage()?;
        let data = ExperimentData::from_synth(&ds).map_err(experiment_failure)?;
        let desc = json!({ "source": "synthetic", "registry": spec.registry.codes(), "spec": spec });
        return Ok((data, desc));
    };
    let ann = dir.join("annotations.csv");
    let (table, ann_digest) = load_annotations(&ann)?;
    let spec_bytes = read_input(&dir.join("spec.json"))?;
    let spec: SynthSpec = serde_json::from_slice(&spec_bytes).context("parsing spec.json").data()?;
    let img_bytes = read_input(&dir.join("images.bin"))?;
    let side = spec.image_side;
    let mut by_key: BTreeMap<String, Vec<f64>> =
        read_images(&img_bytes[..], side).context("reading images.bin").data()?.into_iter().map(|(k, img)| (k, img.to_f64())).collect();
    let inputs = table
        .frames()
        .iter()
        .map(|f| by_key.remove(&f.key()).ok_or_else(|| anyhow!("images.bin has no image for frame {}", f.key())))
        .collect::<Result<Vec<_>, _>>()
        .data()?;
    let desc = json!({
        "source": "directory",
        "path": dir.canonicalize().unwrap_or_else(|_| dir.clone()),
        "registry": table.registry().codes(),
        "inputs": {
            "annotations.csv": ann_digest,
            "spec.json": sha256_hex(&spec_bytes),
            "images.bin": sha256_hex(&img_bytes),
        },
    });
    let data = ExperimentData::new(table, inputs, [1, side, side]).map_err(experiment_failure)?;
    Ok((data, desc))
}

fn ckpt_name(kind: &str, fold: usize) -> String {
    format!("{kind}_fold{fold}.ckpt")
}

/// Pattern classifiers and codebook saved by an exp3 run on the same fold plan.
fn load_pretrained(args: &RunArgs, exp: &str, plan: &FoldPlan) -> Result<(Vec<ModelState>, PatternCodebook), Failure> {
    let hint = "run `aupat run exp3` with the same data, seed and folds, then pass its output directory with --pretrained";
    let dir = args.pretrained.as_ref().ok_or_else(|| anyhow!("{exp} needs pretrained pattern classifiers; {hint}")).usage()?;
    let text =
        fs::read_to_string(dir.join("manifest.json")).with_context(|| format!("no exp3 manifest in {}; {hint}", dir.display())).usage()?;
    let manifest: RunManifest = serde_json::from_str(&text).context("parsing pretrained manifest").usage()?;
    if manifest.experiment != "exp3" {
        return Err(anyhow!("{} holds a {} run, not exp3; {hint}", dir.display(), manifest.experiment)).usage();
    }
    if manifest.fold_plan_hash != plan.hash() {
        return Err(anyhow!("the exp3 run in {} used a different fold plan; {hint}", dir.display())).usage();
    }
    let codebook =
        PatternCodebook::from_ordered(manifest.codebook.clone().ok_or_else(|| anyhow!("exp3 manifest lacks a codebook")).usage()?);
    let models = (0..plan.k())
        .map(|f| {
            let p = dir.join(ckpt_name("pattern", f));
            let file = fs::File::open(&p).with_context(|| format!("missing checkpoint {}; {hint}", p.display()))?;
            load_checkpoint(std::io::BufReader::new(file)).with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>, _>>()
        .usage()?;
    Ok((models, codebook))
}

fn write_run(dir: &mut OutputDir, name: &str, run: &ModelRun) -> Result<(), Failure> {
    dir.write(&format!("metrics_{name}.csv"), run.report.to_csv().as_bytes())?;
    dir.write(&format!("predictions_{name}.csv"), predictions_csv(&run.folds).as_bytes())?;
    println!("== {name} ==\n{}", run.report.to_text());
    Ok(())
}

fn write_checkpoints(dir: &mut OutputDir, kind: &str, models: &[ModelState]) -> Result<(), Failure> {
    for (f, m) in models.iter().enumerate() {
        let mut bytes = Vec::new();
        save_checkpoint(&mut bytes, m).usage()?;
        dir.write(&ckpt_name(kind, f), &bytes)?;
    }
    Ok(())
}

pub fn run(exp: Experiment, args: &RunArgs) -> CmdResult {
    let cfg: ExperimentConfig = config::resolve(args)?;
    let (data, data_desc) = load_run_data(args, cfg.seed)?;
    let plan = make_folds(&data.table.subjects(), cfg.folds, cfg.seed).map_err(experiment_failure)?;
    let name = exp.name();
    let pretrained = match exp {
        Experiment::Exp4 | Experiment::Unseen => Some(load_pretrained(args, name, &plan)?),
        _ => None,
    };

    let mut dir = OutputDir::create(&args.out, name)?;
    let mut codebook = None;
    let mut flags = Vec::new();
    match exp {
        Experiment::Exp1 => write_run(&mut dir, "exp1", &exp1_multi_au(&data, &cfg, &plan).map_err(experiment_failure)?)?,
        Experiment::Exp2 => write_run(&mut dir, "exp2", &exp2_single_au(&data, &cfg, &plan).map_err(experiment_failure)?)?,
        Experiment::Exp3 => {
            let out = exp3_pattern_pretrain(&data, &cfg, &plan).map_err(experiment_failure)?;
            println!("codebook: {} patterns cover {} of {} frames", out.codebook.len(), out.in_codebook.len(), data.table.len());
            write_run(&mut dir, "exp3_direct", &out.direct)?;
            write_run(&mut dir, "exp3_pattern", &out.pattern)?;
            write_run(&mut dir, "exp3_split", &out.split)?;
            write_checkpoints(&mut dir, "pattern", &out.pattern_models)?;
            write_checkpoints(&mut dir, "split", &out.split_models)?;
            codebook = Some(out.codebook.patterns().to_vec());
            flags = out.flags;
        }
        Experiment::Exp4 => {
            let (models, _) = pretrained.expect("loaded above");
            let out = exp4_all_patterns(&data, &cfg, &plan, &models).map_err(experiment_failure)?;
            write_run(&mut dir, "exp4_direct", &out.direct)?;
            write_run(&mut dir, "exp4_split", &out.split)?;
            write_checkpoints(&mut dir, "split", &out.split_models)?;
        }
        Experiment::Unseen => {
            let (models, book) = pretrained.expect("loaded above");
            let run = eval_unseen(&data, &plan, &models, &book).map_err(experiment_failure)?;
            write_run(&mut dir, "unseen", &run)?;
            codebook = Some(book.patterns().to_vec());
        }
    }
    for f in &flags {
        println!("flag: {f}");
    }
    let manifest = RunManifest {
        experiment: name.to_string(),
        created_unix: dir.created_unix,
        seed: cfg.seed,
        config: cfg.clone(),
        data: data_desc,
        codebook,
        folds: plan.folds.clone(),
        fold_plan_hash: plan.hash(),
        fixture_hashes: BTreeMap::new(),
        outputs: dir.outputs.clone(),
        flags,
    };
    dir.write_manifest(&manifest)?;
    println!("wrote {}", dir.path.display());
    Ok(0)
}

pub fn report(run_dir: &Path) -> CmdResult {
    let text =
        fs::read_to_string(run_dir.join("manifest.json")).with_context(|| format!("reading manifest in {}", run_dir.display())).data()?;
    let manifest: RunManifest = serde_json::from_str(&text).context("parsing manifest.json").data()?;
    let codes: Vec<u16> = serde_json::from_value(manifest.data["registry"].clone()).context("manifest lacks the AU registry").data()?;
    let registry = AuRegistry::new(codes).data()?;
    for (name, digest) in &manifest.outputs {
        let bytes = read_input(&run_dir.join(name))?;
        if &sha256_hex(&bytes) != digest {
            return Err(anyhow!("{name} does not match the digest recorded in the manifest")).data();
        }
    }
    let mut mismatched = Vec::new();
    for name in manifest.outputs.keys().filter_map(|n| n.strip_prefix("predictions_")?.strip_suffix(".csv")) {
        let preds = fs::read_to_string(run_dir.join(format!("predictions_{name}.csv"))).context("reading predictions").data()?;
        let folds = parse_predictions_csv(&preds).map_err(experiment_failure)?;
        let recomputed = pooled_report(&folds, &registry).data()?;
        let stored = fs::read_to_string(run_dir.join(format!("metrics_{name}.csv"))).context("reading stored metrics").data()?;
        let same = recomputed.to_csv() == stored;
        println!(
            "== {name} ({}) ==\n{}",
            if same { "matches stored metrics" } else { "DIFFERS from stored metrics" },
            recomputed.to_text()
        );
        if !same {
            mismatched.push(name.to_string());
        }
    }
    if !mismatched.is_empty() {
        return Err(anyhow!("recomputed metrics differ for {}", mismatched.join(", "))).data();
    }
    Ok(0)
}
