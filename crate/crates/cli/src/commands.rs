use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use orient_core::nn::checkpoint;
use orient_core::nn::gradcheck::{check_all_layers, check_network, check_qcqp, GradCheck};
use orient_core::nn::{Model, Pooling, Prediction, TrainStyle};
use orient_core::pipeline::{self, split_medians};
use orient_core::recon_eval::{self, FSC_THRESHOLD};
use orient_core::loss_schedule::schedule_table;
use orient_core::simulator::{generate_dataset, MrcData, ProjectionStack};
use orient_core::so3::{SymmetryGroup, SymmetryKind};
use orient_core::table::{fmt_sig, read_orientations, write_orientations, OrientationRecord, Split};
use orient_core::uncertainty::{quantile_filter, Statistic};
use orient_core::{Quat, Real, UnitQuaternion};

use crate::config::{Precision, RunConfig};
use crate::manifest::{sha256_file, Manifest};
use crate::{AblateArgs, Cli, Command, EvaluateArgs, FilterArgs, GradcheckArgs, InferArgs, ModelArgs};
use crate::{ReconstructArgs, ScheduleArgs, SimulateArgs, TrainArgs};
use crate::Failure;

type Res<T = ()> = Result<T, Failure>;

fn parse<V: std::str::FromStr>(flag: &str, s: &str) -> Res<V>
where
    V::Err: std::fmt::Display,
{
    s.parse().map_err(|e| Failure::Usage(format!("--{flag} {s}: {e}")))
}

fn open(path: &Path) -> Res<File> {
    File::open(path).map_err(|e| Failure::Runtime(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn to_f64<T: Real>(q: &UnitQuaternion<T>) -> Quat {
    UnitQuaternion::from_array_unchecked(q.to_array().map(|v| v.to_f64().unwrap_or(f64::NAN)))
}

pub fn run(cli: Cli) -> Res {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(Failure::io)?;
    let f64_mode = cfg.precision == Precision::F64;
    match cli.command {
        Command::Simulate(a) if f64_mode => simulate::<f64>(cfg, a, out),
        Command::Simulate(a) => simulate::<f32>(cfg, a, out),
        Command::Train(a) if f64_mode => train::<f64>(cfg, a, out),
        Command::Train(a) => train::<f32>(cfg, a, out),
        Command::Infer(a) => infer(cfg, a, out),
        Command::Filter(a) => filter(cfg, a, out),
        Command::Reconstruct(a) if f64_mode => reconstruct::<f64>(cfg, a, out),
        Command::Reconstruct(a) => reconstruct::<f32>(cfg, a, out),
        Command::Evaluate(a) => evaluate(cfg, a, out),
        Command::Gradcheck(a) => gradcheck(cfg, a, out),
        Command::ScheduleDump(a) => schedule_dump(cfg, a, out),
        Command::Ablate(a) if f64_mode => ablate::<f64>(cfg, a, out),
        Command::Ablate(a) => ablate::<f32>(cfg, a, out),
    }
}

fn simulate<T: Real>(mut cfg: RunConfig, a: SimulateArgs, out: &Path) -> Res {
    if let Some(n) = a.n {
        cfg.simulate.n_images = n;
    }
    if let Some(s) = &a.snr {
        cfg.simulate.snr = if s == "clean" { None } else { Some(parse("snr", s)?) };
    }
    if let Some(d) = a.d {
        // keep the physical box of the 128-pixel original
        cfg.phantom.pixel_size = cfg.phantom.pixel_size * cfg.phantom.d as f64 / d as f64;
        cfg.phantom.d = d;
        cfg.encoder.input_side = d;
    }
    if let Some(s) = &a.symmetry {
        cfg.simulate.symmetry = parse("symmetry", s)?;
    }
    if a.no_ctf {
        cfg.simulate.ctf = None;
    }
    if let Some(s) = a.shift_max {
        cfg.simulate.shift_max = s;
    }
    let volume = cfg.phantom.volume::<T>(cfg.simulate.symmetry)?;
    let stack = generate_dataset(&volume, &cfg.simulate, cfg.seed)?;
    stack.write_dir(out)?;
    MrcData::from_real(volume.d, volume.d, volume.d, volume.pixel_size, false, &volume.data)
        .write_path(&out.join("volume.mrc"))?;
    cfg.write(out)?;
    eprintln!("simulated {} images of side {}", stack.len(), stack.d);
    Manifest::new("simulate", cfg.seed).finish(out, &["stack.mrc", "orient.csv", "volume.mrc", "config.json"])
}

fn apply_model_args(cfg: &mut RunConfig, a: &ModelArgs) -> Res {
    if let Some(s) = &a.head {
        cfg.encoder.head = parse("head", s)?;
    }
    if let Some(s) = &a.blur {
        cfg.encoder.blur = parse("blur", s)?;
    }
    if let Some(s) = &a.pool {
        cfg.encoder.pooling = parse::<Pooling>("pool", s)?;
    }
    if let Some(s) = &a.style {
        cfg.train.style = parse("style", s)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr_max = lr;
    }
    if let Some(s) = &a.pairs {
        cfg.train.pair_scheme = parse("pairs", s)?;
    }
    Ok(())
}

fn read_stack<T: Real>(dir: &Path, cfg: &RunConfig) -> Res<ProjectionStack<T>> {
    let stack = ProjectionStack::read(&dir.join("stack.mrc"), &dir.join("orient.csv"))?;
    if stack.d != cfg.encoder.input_side {
        return Err(Failure::Usage(format!(
            "images are {} pixels but the encoder expects {}",
            stack.d, cfg.encoder.input_side
        )));
    }
    Ok(stack)
}

fn train<T: Real>(mut cfg: RunConfig, a: TrainArgs, out: &Path) -> Res {
    apply_model_args(&mut cfg, &a.model)?;
    let stack = read_stack::<T>(&a.data, &cfg)?;
    let epochs = cfg.train.epochs;
    let fitted = pipeline::fit(&stack, &cfg.encoder, &cfg.train, cfg.simulate.symmetry, |r| {
        eprintln!(
            "epoch {}/{epochs}  loss {:.4}  val loss {:.4}  median error train {:.3} val {:.3}",
            r.epoch, r.train_loss, r.val_loss, r.train_med_err, r.val_med_err
        )
    })?;
    checkpoint::save(&fitted.model, &out.join("model.ofm"))?;
    fitted.history.write_csv(create(&out.join("history.csv"))?)?;
    let mut names = vec!["model.ofm", "history.csv", "config.json"];
    if let Some(p) = &fitted.pairs {
        p.write_csv(create(&out.join("pairs.csv"))?)?;
        names.push("pairs.csv");
    }
    cfg.write(out)?;
    let mut m = Manifest::new("train", cfg.seed);
    m.input("stack", &a.data.join("stack.mrc"))?;
    m.input("orient", &a.data.join("orient.csv"))?;
    m.finish(out, &names)
}

fn infer(cfg: RunConfig, a: InferArgs, out: &Path) -> Res {
    // run in the precision the model was trained in
    let (_, header) = checkpoint::load::<f64>(&a.model)?;
    if header.scalar == "f32" {
        infer_as::<f32>(cfg, a, out)
    } else {
        infer_as::<f64>(cfg, a, out)
    }
}

fn infer_as<T: Real>(mut cfg: RunConfig, a: InferArgs, out: &Path) -> Res {
    let (mut model, header): (Model<T>, _) = checkpoint::load(&a.model)?;
    cfg.encoder = header.config;
    let stack = read_stack::<T>(&a.data, &cfg)?;
    let preds = pipeline::predict(&mut model, &stack)?;
    // the encoder estimates orientations only; shifts are carried over
    let records: Vec<OrientationRecord> = stack
        .records
        .iter()
        .zip(&preds)
        .map(|(r, p)| OrientationRecord { q: to_f64(&p.q), ..*r })
        .collect();
    write_orientations(create(&out.join("orient.csv"))?, &records)?;
    let mut names = vec!["orient.csv", "config.json"];
    if preds.iter().all(|p| p.stats.is_some()) {
        write_uncertainty(&out.join("uncertainty.csv"), &records, &preds)?;
        names.push("uncertainty.csv");
    }
    cfg.write(out)?;
    let mut m = Manifest::new("infer", cfg.seed);
    m.input("model", &a.model)?;
    m.input("stack", &a.data.join("stack.mrc"))?;
    m.input("orient", &a.data.join("orient.csv"))?;
    m.finish(out, &names)
}

/// One row of `uncertainty.csv`.
#[derive(Debug, Clone, Copy)]
struct UncertaintyRow {
    index: usize,
    lambda_max: f64,
    trace_stat: f64,
    degenerate: bool,
}

impl UncertaintyRow {
    fn filter_value(&self, which: Statistic) -> f64 {
        if self.degenerate {
            return f64::INFINITY;
        }
        match which {
            Statistic::LambdaMax => self.lambda_max,
            Statistic::Trace => self.trace_stat,
        }
    }
}

fn write_uncertainty<T: Real>(path: &Path, records: &[OrientationRecord], preds: &[Prediction<T>]) -> Res {
    let rows: Vec<UncertaintyRow> = records
        .iter()
        .zip(preds)
        .filter_map(|(r, p)| {
            p.stats.map(|s| UncertaintyRow {
                index: r.index,
                lambda_max: s.lambda_max.to_f64().unwrap_or(f64::NAN),
                trace_stat: s.trace_stat.to_f64().unwrap_or(f64::NAN),
                degenerate: s.degenerate,
            })
        })
        .collect();
    write_uncertainty_rows(path, &rows)
}

fn write_uncertainty_rows(path: &Path, rows: &[UncertaintyRow]) -> Res {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["index", "lambda_max", "trace_stat", "degenerate"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            fmt_sig(r.lambda_max),
            fmt_sig(r.trace_stat),
            u8::from(r.degenerate).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(Failure::io)
}

fn read_uncertainty(path: &Path) -> Res<Vec<UncertaintyRow>> {
    let bad = |e: String| Failure::Runtime(format!("{}: {e}", path.display()));
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| bad("short row".into()));
        out.push(UncertaintyRow {
            index: field(0)?.parse().map_err(|e| bad(format!("{e}")))?,
            lambda_max: field(1)?.parse().map_err(|e| bad(format!("{e}")))?,
            trace_stat: field(2)?.parse().map_err(|e| bad(format!("{e}")))?,
            degenerate: field(3)? == "1",
        });
    }
    Ok(out)
}

fn read_table(path: &Path) -> Res<Vec<OrientationRecord>> {
    Ok(read_orientations(open(path)?)?)
}

fn filter(mut cfg: RunConfig, a: FilterArgs, out: &Path) -> Res {
    if let Some(k) = a.keep {
        cfg.filter.keep_fraction = k;
    }
    if let Some(s) = &a.statistic {
        cfg.filter.statistic = parse("statistic", s)?;
    }
    let split: Option<Split> = a.split.as_deref().map(|s| parse("split", s)).transpose()?;
    let mrc = MrcData::read_path(&a.data.join("stack.mrc"))?;
    let preds = read_table(&a.pred.join("orient.csv"))?;
    let unc = read_uncertainty(&a.pred.join("uncertainty.csv"))?;
    if preds.len() != mrc.nz || unc.len() != mrc.nz {
        return Err(Failure::Runtime(format!(
            "{} images, {} predictions and {} uncertainty rows",
            mrc.nz,
            preds.len(),
            unc.len()
        )));
    }
    if preds.iter().zip(&unc).any(|(p, u)| p.index != u.index) {
        return Err(Failure::Runtime("prediction and uncertainty rows are not aligned".into()));
    }
    let candidates: Vec<usize> = match split {
        None => (0..preds.len()).collect(),
        Some(s) => {
            if preds.iter().any(|p| p.split.is_none()) {
                return Err(Failure::Usage("--split needs split labels in the predictions".into()));
            }
            (0..preds.len()).filter(|&k| preds[k].split == Some(s)).collect()
        }
    };
    let values: Vec<f64> = candidates.iter().map(|&k| unc[k].filter_value(cfg.filter.statistic)).collect();
    let mask = quantile_filter(&values, cfg.filter.keep_fraction)?;
    let kept: Vec<usize> = candidates.iter().zip(&mask).filter(|(_, &m)| m).map(|(&k, _)| k).collect();
    let images: Vec<f32> = kept.iter().flat_map(|&k| mrc.section::<f32>(k)).collect();
    MrcData::from_real(mrc.nx, mrc.ny, kept.len(), mrc.pixel_size, true, &images).write_path(&out.join("stack.mrc"))?;
    let rows: Vec<OrientationRecord> = kept.iter().map(|&k| preds[k]).collect();
    write_orientations(create(&out.join("orient.csv"))?, &rows)?;
    let unc_rows: Vec<UncertaintyRow> = kept.iter().map(|&k| unc[k]).collect();
    write_uncertainty_rows(&out.join("uncertainty.csv"), &unc_rows)?;
    eprintln!("kept {} of {} images", kept.len(), candidates.len());
    cfg.write(out)?;
    let mut m = Manifest::new("filter", cfg.seed);
    m.input("stack", &a.data.join("stack.mrc"))?;
    m.input("pred_orient", &a.pred.join("orient.csv"))?;
    m.input("uncertainty", &a.pred.join("uncertainty.csv"))?;
    // evaluation matches this directory against the source stack
    if let Some(prev) = Manifest::read(&a.pred)? {
        if let Some(src) = prev.inputs.get("stack") {
            m.inputs.insert("source_stack".into(), src.clone());
        }
    }
    m.finish(out, &["stack.mrc", "orient.csv", "uncertainty.csv", "config.json"])
}

fn reconstruct<T: Real>(cfg: RunConfig, a: ReconstructArgs, out: &Path) -> Res {
    let orient_path = a.orient.clone().unwrap_or_else(|| a.data.join("orient.csv"));
    let mrc = MrcData::read_path(&a.data.join("stack.mrc"))?;
    let rows = read_table(&orient_path)?;
    if rows.len() != mrc.nz {
        return Err(Failure::Runtime(format!("{} orientation rows for {} images", rows.len(), mrc.nz)));
    }
    let split: Option<Split> = a.split.as_deref().map(|s| parse("split", s)).transpose()?;
    let chosen: Vec<usize> = (0..rows.len())
        .filter(|&k| split.is_none_or(|s| rows[k].split == Some(s)))
        .collect();
    if chosen.is_empty() {
        return Err(Failure::Usage("no images selected".into()));
    }
    let images: Vec<Vec<T>> = chosen.iter().map(|&k| mrc.section(k)).collect();
    let quats: Vec<UnitQuaternion<T>> = chosen
        .iter()
        .map(|&k| UnitQuaternion::from_array_unchecked(rows[k].q.to_array().map(orient_core::scalar::c)))
        .collect();
    let shifts: Vec<[f64; 2]> = chosen.iter().map(|&k| rows[k].shift).collect();
    let vol = recon_eval::reconstruct(&images, &quats, &shifts, mrc.nx, mrc.pixel_size)?;
    MrcData::from_real(vol.d, vol.d, vol.d, vol.pixel_size, false, &vol.data).write_path(&out.join("volume.mrc"))?;
    eprintln!("reconstructed from {} images", chosen.len());
    cfg.write(out)?;
    let mut m = Manifest::new("reconstruct", cfg.seed);
    m.input("stack", &a.data.join("stack.mrc"))?;
    m.input("orient", &orient_path)?;
    m.finish(out, &["volume.mrc", "config.json"])
}

/// A directory's own manifest must agree with the files it lists.
fn verify_outputs(dir: &Path, files: &[&str]) -> Res<Option<Manifest>> {
    let Some(m) = Manifest::read(dir)? else {
        return Ok(None);
    };
    for f in files {
        if let Some(expected) = m.outputs.get(*f) {
            if *expected != sha256_file(&dir.join(f))? {
                return Err(Failure::Runtime(format!("{} changed since its manifest was written", dir.join(f).display())));
            }
        }
    }
    Ok(Some(m))
}

fn evaluate(cfg: RunConfig, a: EvaluateArgs, out: &Path) -> Res {
    verify_outputs(&a.truth, &["stack.mrc", "orient.csv"])?;
    let pm = verify_outputs(&a.pred, &["orient.csv", "uncertainty.csv"])?;
    let truth_stack = sha256_file(&a.truth.join("stack.mrc"))?;
    if let Some(pm) = &pm {
        let source = pm.inputs.get("source_stack").or_else(|| pm.inputs.get("stack"));
        if source.is_some_and(|s| *s != truth_stack) {
            return Err(Failure::Runtime(format!(
                "{} was produced from a different stack than {}",
                a.pred.display(),
                a.truth.display()
            )));
        }
    }
    let truth = read_table(&a.truth.join("orient.csv"))?;
    let by_index: BTreeMap<usize, &OrientationRecord> = truth.iter().map(|r| (r.index, r)).collect();
    let preds = read_table(&a.pred.join("orient.csv"))?;
    let mut matched = Vec::with_capacity(preds.len());
    for p in &preds {
        let t = by_index
            .get(&p.index)
            .ok_or_else(|| Failure::Runtime(format!("prediction for unknown image {}", p.index)))?;
        matched.push((p, *t));
    }
    let group = SymmetryGroup::<f64>::new(cfg.simulate.symmetry);
    let errors: Vec<f64> = matched.iter().map(|(p, t)| group.distance(&p.q, &t.q)).collect();
    let median = |v: &[f64]| (!v.is_empty()).then(|| recon_eval::median(v.to_vec()));
    let mut report: Vec<(String, String)> = vec![
        ("n_images".into(), preds.len().to_string()),
        ("median_error_all".into(), median(&errors).map(fmt_sig).unwrap_or_default()),
    ];
    for s in [Split::Train, Split::Val, Split::Test] {
        let e: Vec<f64> = matched
            .iter()
            .zip(&errors)
            .filter(|((_, t), _)| t.split == Some(s))
            .map(|(_, e)| *e)
            .collect();
        if let Some(m) = median(&e) {
            report.push((format!("median_error_{}", s.name()), fmt_sig(m)));
        }
    }
    let mut names = vec!["report.csv", "config.json"];
    let unc_path = a.pred.join("uncertainty.csv");
    if unc_path.exists() {
        let unc = read_uncertainty(&unc_path)?;
        if unc.len() != preds.len() || unc.iter().zip(&preds).any(|(u, p)| u.index != p.index) {
            return Err(Failure::Runtime("uncertainty rows do not match the predictions".into()));
        }
        // correlate on the test split when there is one
        let has_test = matched.iter().any(|(_, t)| t.split == Some(Split::Test));
        let sel: Vec<usize> = (0..preds.len())
            .filter(|&k| !has_test || matched[k].1.split == Some(Split::Test))
            .collect();
        let e: Vec<f64> = sel.iter().map(|&k| errors[k]).collect();
        let lm: Vec<f64> = sel.iter().map(|&k| unc[k].lambda_max).collect();
        let tr: Vec<f64> = sel.iter().map(|&k| unc[k].trace_stat).collect();
        if sel.len() >= 10 {
            let rep = recon_eval::uncertainty_report(&e, &lm, &tr)?;
            let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
            report.push(("spearman_lambda_max".into(), opt(rep.spearman_lambda_max)));
            report.push(("spearman_trace".into(), opt(rep.spearman_trace)));
            rep.write_csv(create(&out.join("scatter.csv"))?)?;
            names.push("scatter.csv");
        }
    }
    let mut m = Manifest::new("evaluate", cfg.seed);
    m.input("truth_stack", &a.truth.join("stack.mrc"))?;
    m.input("truth_orient", &a.truth.join("orient.csv"))?;
    m.input("pred_orient", &a.pred.join("orient.csv"))?;
    if let (Some(vp), Some(rp)) = (&a.volume, &a.reference) {
        for p in [vp, rp] {
            if let Some(dir) = p.parent() {
                verify_outputs(dir, &[p.file_name().and_then(|n| n.to_str()).unwrap_or_default()])?;
            }
        }
        let load = |p: &PathBuf| -> Res<orient_core::simulator::Volume<f64>> {
            let mrc = MrcData::read_path(p)?;
            if mrc.nx != mrc.ny || mrc.ny != mrc.nz {
                return Err(Failure::Runtime(format!("{} is not a cubic volume", p.display())));
            }
            Ok(orient_core::simulator::Volume::from_data(mrc.nx, mrc.pixel_size, mrc.to_real())?)
        };
        let (v, r) = (load(vp)?, load(rp)?);
        let curve = recon_eval::fsc(&v, &r)?;
        let res = recon_eval::resolution_at(&curve, FSC_THRESHOLD, v.pixel_size)?;
        curve.write_csv(create(&out.join("fsc.csv"))?)?;
        names.push("fsc.csv");
        report.push(("resolution_angstrom".into(), fmt_sig(res.angstrom)));
        report.push(("resolution_limited".into(), u8::from(res.limited).to_string()));
        m.input("volume", vp)?;
        m.input("reference", rp)?;
    }
    let mut w = csv::Writer::from_writer(create(&out.join("report.csv"))?);
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["metric", "value"]).map_err(csv_err)?;
    for (k, v) in &report {
        w.write_record([k, v]).map_err(csv_err)?;
        eprintln!("{k} {v}");
    }
    w.flush().map_err(Failure::io)?;
    cfg.write(out)?;
    m.finish(out, &names)
}

fn gradcheck(cfg: RunConfig, a: GradcheckArgs, out: &Path) -> Res {
    let mut checks: Vec<GradCheck> = check_all_layers(cfg.seed)?;
    checks.push(check_qcqp(cfg.seed, a.qcqp_cases)?);
    checks.push(check_network(cfg.seed, a.probes)?);
    let mut w = csv::Writer::from_writer(create(&out.join("gradcheck.csv"))?);
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["check", "max_rel_error", "tolerance", "passed"]).map_err(csv_err)?;
    for c in &checks {
        println!(
            "{:<18} {:>12.3e}  (< {:.0e})  {}",
            c.name,
            c.max_rel_error,
            c.tolerance,
            if c.passed() { "ok" } else { "FAILED" }
        );
        w.write_record([
            c.name.clone(),
            fmt_sig(c.max_rel_error),
            fmt_sig(c.tolerance),
            u8::from(c.passed()).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(Failure::io)?;
    cfg.write(out)?;
    Manifest::new("gradcheck", cfg.seed).finish(out, &["gradcheck.csv", "config.json"])?;
    match checks.iter().filter(|c| !c.passed()).count() {
        0 => Ok(()),
        n => Err(Failure::Runtime(format!("{n} gradient checks failed"))),
    }
}

fn schedule_dump(mut cfg: RunConfig, a: ScheduleArgs, out: &Path) -> Res {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr_max = lr;
    }
    let n_train = (cfg.simulate.split_fractions[0] * cfg.simulate.n_images as f64).round() as usize;
    let steps = a.steps_per_epoch.unwrap_or_else(|| n_train.div_ceil(cfg.train.batch_size.max(1)));
    let rows = schedule_table(cfg.train.epochs, steps, cfg.train.lr_max)?;
    let mut w = csv::Writer::from_writer(create(&out.join("schedule.csv"))?);
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["step", "lr", "momentum", "beta1", "beta2"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([r.step.to_string(), fmt_sig(r.lr), fmt_sig(r.momentum), fmt_sig(r.beta1), fmt_sig(r.beta2)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(Failure::io)?;
    cfg.write(out)?;
    Manifest::new("schedule-dump", cfg.seed).finish(out, &["schedule.csv", "config.json"])
}

fn ablation_variants(axis: &str) -> Res<&'static [&'static str]> {
    Ok(match axis {
        "head" => &["quat", "sixd", "qcqp"],
        "style" => &["single", "siamese", "siamese_aux"],
        "blur" => &["none", "gaussian", "lowpass"],
        "pool" => &["gem", "max", "max_plus_avg"],
        other => return Err(Failure::Usage(format!("unknown ablation axis {other}"))),
    })
}

fn ablate<T: Real>(mut cfg: RunConfig, a: AblateArgs, out: &Path) -> Res {
    apply_model_args(&mut cfg, &a.model)?;
    let variants = ablation_variants(&a.axis)?;
    if cfg.ablate.seeds.is_empty() {
        return Err(Failure::Usage("ablate needs at least one seed".into()));
    }
    let stack = read_stack::<T>(&a.data, &cfg)?;
    let symmetry: SymmetryKind = cfg.simulate.symmetry;
    let mut w = csv::Writer::from_writer(create(&out.join("ablation.csv"))?);
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["axis", "variant", "seed", "split", "median_error"]).map_err(csv_err)?;
    for variant in variants {
        let mut run = cfg.clone();
        match a.axis.as_str() {
            "head" => run.encoder.head = parse("head", variant)?,
            "style" => run.train.style = parse("style", variant)?,
            "blur" => run.encoder.blur = parse("blur", variant)?,
            _ => run.encoder.pooling = parse("pool", variant)?,
        }
        let mut per_split: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        for &seed in &cfg.ablate.seeds {
            run.train.seed = seed;
            eprintln!("{} = {variant}, seed {seed}", a.axis);
            let mut fitted = pipeline::fit(&stack, &run.encoder, &run.train, symmetry, |_| {})?;
            let preds = pipeline::predict(&mut fitted.model, &stack)?;
            let medians = split_medians(&preds, &stack, symmetry, run.train.style == TrainStyle::Siamese)?;
            for (split, m) in medians {
                w.write_record([a.axis.as_str(), variant, &seed.to_string(), split.name(), &fmt_sig(m)])
                    .map_err(csv_err)?;
                per_split.entry(split.name()).or_default().push(m);
            }
        }
        for split in ["train", "val", "test"] {
            if let Some(v) = per_split.remove(split) {
                let m = recon_eval::median(v);
                eprintln!("{variant:>14} {split:>5} median over seeds {m:.4}");
                w.write_record([a.axis.as_str(), variant, "median", split, &fmt_sig(m)]).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(Failure::io)?;
    cfg.write(out)?;
    let mut m = Manifest::new("ablate", cfg.seed);
    m.input("stack", &a.data.join("stack.mrc"))?;
    m.input("orient", &a.data.join("orient.csv"))?;
    m.finish(out, &["ablation.csv", "config.json"])
}
