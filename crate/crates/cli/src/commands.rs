use std::cell::{Cell, RefCell};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use caranet::data::{load_sample, render_synthetic, resize_sample, write_image, Manifest, Sample, Split};
use caranet::metrics::{evaluate_model, MetricReport};
use caranet::model::CaraNet;
use caranet::size::{compare_curves, filter_small, interval_average, points_from_report, watershed, SizeCurve};
use caranet::train::{epoch_means, load_checkpoint, save_checkpoint, train, Adam, StepRecord};
use caranet::{Error, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::svg;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub struct Generate {
    pub config: RunConfig,
    pub out: PathBuf,
}

pub fn generate(cmd: Generate) -> Result<()> {
    let Generate { mut config, out } = cmd;
    let spec = &config.data.synthetic;
    spec.validate()?;
    let (manifest, files) = render_synthetic(spec)?;
    let sums: String = files
        .iter()
        .map(|(p, bytes)| format!("{}  {}\n", sha256_hex(bytes), p.display()))
        .collect();

    let sums_path = out.join("SHA256SUMS");
    let current = fs::read_to_string(&sums_path).ok().is_some_and(|old| {
        old == sums
            && files
                .iter()
                .all(|(p, bytes)| fs::read(out.join(p)).is_ok_and(|disk| sha256_hex(&disk) == sha256_hex(bytes)))
    });
    if current {
        println!("up-to-date: {} (sha256 verified)", out.display());
    } else {
        for sub in ["images", "masks"] {
            create_dir(&out.join(sub))?;
        }
        for (p, bytes) in &files {
            write_file(&out.join(p), bytes)?;
        }
        write_file(&sums_path, &sums)?;
        println!("wrote {}", out.display());
    }

    config.data.manifest = Some(out.join("manifest.tsv"));
    config.absolutize()?;
    config.write_resolved(&out)?;

    let n = manifest.entries.len();
    let n_train = manifest.split(Split::Train).count();
    println!("{n} samples ({n_train} train, {} test)", n - n_train);
    print!("{}", ratio_histogram(&manifest, config.data.synthetic.ratio_range, 5));
    Ok(())
}

/// Text histogram of size ratios over `bins` equal intervals of `range`.
pub fn ratio_histogram(manifest: &Manifest, range: (f64, f64), bins: usize) -> String {
    let (lo, hi) = range;
    let mut counts = vec![0usize; bins];
    for e in &manifest.entries {
        let i = if hi > lo {
            (((e.size_ratio - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }
    let mut s = String::from("size ratio histogram:\n");
    for (i, c) in counts.iter().enumerate() {
        let a = lo + (hi - lo) * i as f64 / bins as f64;
        let b = lo + (hi - lo) * (i + 1) as f64 / bins as f64;
        let _ = writeln!(s, "  {:>6.2}% - {:>6.2}%  {c:>5}  {}", a * 100.0, b * 100.0, "#".repeat((c * 40).div_ceil(manifest.entries.len().max(1))));
    }
    s
}

fn manifest_path(config: &RunConfig) -> Result<&Path> {
    config
        .data
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Data("no manifest given (set data.manifest or pass --manifest)".into()))
}

/// Load every sample of `split`, listing all failures together.
fn load_split(manifest: &Manifest, split: Split, extent: (usize, usize)) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for e in manifest.split(split) {
        match load_sample(&e.id, manifest.resolve(&e.image), manifest.resolve(&e.mask)) {
            Ok(s) if s.extent() == extent => samples.push(s),
            Ok(s) => match resize_sample(&s, extent) {
                Ok(r) => samples.push(r),
                Err(err) => failures.push(format!("  {}: {err}", e.id)),
            },
            Err(err) => failures.push(format!("  {}: {err}", e.id)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Data(format!(
            "{} of {} {split} samples failed to load:\n{}",
            failures.len(),
            failures.len() + samples.len(),
            failures.join("\n")
        )));
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("manifest has no {split} samples")));
    }
    Ok(samples)
}

pub struct Train {
    pub config: RunConfig,
    pub out: PathBuf,
}

pub fn train_cmd(cmd: Train) -> Result<()> {
    let Train { mut config, out } = cmd;
    config.model.validate()?;
    config.train.validate()?;
    config.absolutize()?;
    let manifest = Manifest::read(manifest_path(&config)?)?;
    let data = load_split(&manifest, Split::Train, config.model.input_size)?;
    create_dir(&out)?;
    config.write_resolved(&out)?;

    let mut model = CaraNet::<f32>::new(config.model.clone())?;
    let mut opt = Adam::new(config.train.adam(), &model.params);
    println!(
        "training {} model ({} parameters) on {} samples for {} epochs",
        model.config.variant(),
        model.params.numel(),
        data.len(),
        config.train.epochs
    );

    let csv_path = out.join("loss.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{}", StepRecord::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;
    let last_step = Cell::new(0usize);
    let every = config.train.checkpoint_every;
    let epoch_log: RefCell<Vec<StepRecord>> = RefCell::new(Vec::new());

    let result = train(
        &mut model,
        &mut opt,
        &data,
        &config.train,
        |rec| {
            last_step.set(rec.step);
            epoch_log.borrow_mut().push(*rec);
            writeln!(csv, "{}", rec.csv_line()).map_err(|e| Error::io(&csv_path, e))
        },
        |epoch, m, o| {
            let mean = epoch_means(&epoch_log.borrow()).last().copied().unwrap_or(f64::NAN);
            epoch_log.borrow_mut().clear();
            println!("epoch {epoch}: mean loss {mean:.6}");
            if every > 0 && epoch % every == 0 {
                save_checkpoint(out.join(format!("epoch_{epoch:03}.ckpt")), m, &o.state)?;
            }
            Ok(())
        },
    );
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    drop(csv);
    match result {
        Ok(_) => {}
        Err(Error::Numerical(msg)) => {
            return Err(Error::Numerical(format!("training aborted after step {}: {msg}", last_step.get())))
        }
        Err(Error::NonFinite(msg)) => {
            return Err(Error::Numerical(format!(
                "training aborted after step {}: non-finite value in {msg}",
                last_step.get()
            )))
        }
        Err(e) => return Err(e),
    }
    save_checkpoint(out.join("final.ckpt"), &model, &opt.state)?;
    println!("wrote {}", out.join("final.ckpt").display());
    Ok(())
}

pub struct Eval {
    pub config: RunConfig,
    pub out: PathBuf,
}

pub fn eval(cmd: Eval) -> Result<()> {
    let Eval { mut config, out } = cmd;
    config.absolutize()?;
    let ckpt = config
        .eval
        .checkpoint
        .clone()
        .ok_or_else(|| Error::InvalidArgument("no checkpoint given (set eval.checkpoint or pass --checkpoint)".into()))?;
    let manifest = Manifest::read(manifest_path(&config)?)?;
    let (model, _) = load_checkpoint(&ckpt)?;
    config.model = model.config.clone();
    let split = config.eval.split;
    let samples = load_split(&manifest, split, model.config.input_size)?;

    let (report, preds) = evaluate_model(&model, &samples)?;
    let pred_dir = out.join("predictions");
    create_dir(&pred_dir)?;
    for (s, p) in samples.iter().zip(&preds) {
        write_image(p, pred_dir.join(format!("{}.pgm", s.id)))?;
    }
    report.write(out.join("report.csv"))?;
    config.write_resolved(&out)?;
    if let Some(m) = report.means() {
        println!(
            "{} {split} samples: mDice {} mIoU {} F {} S {} E {} MAE {}",
            report.rows.len(),
            m.dice,
            m.iou,
            m.f_beta_w,
            m.s_alpha,
            m.e_phi_max,
            m.mae
        );
    }
    Ok(())
}

pub struct Analyze {
    pub config: RunConfig,
    pub out: PathBuf,
}

fn label_of(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

fn observed_range(report: &MetricReport) -> (f64, f64) {
    let lo = report.rows.iter().map(|r| r.size_ratio).fold(f64::INFINITY, f64::min);
    let hi = report.rows.iter().map(|r| r.size_ratio).fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1e-6)
    }
}

pub fn analyze(cmd: Analyze) -> Result<()> {
    let Analyze { mut config, out } = cmd;
    config.eval.validate()?;
    config.absolutize()?;
    let paths = config.eval.reports.clone();
    if paths.is_empty() || paths.len() > 2 {
        return Err(Error::InvalidArgument(format!("analyze takes one or two reports, got {}", paths.len())));
    }
    create_dir(&out)?;
    let reports = paths.iter().map(MetricReport::read).collect::<Result<Vec<_>>>()?;
    if let Some((i, _)) = reports.iter().enumerate().find(|(_, r)| r.rows.is_empty()) {
        return Err(Error::Data(format!("{} has no sample rows", paths[i].display())));
    }
    let tags = ["a", "b"];
    let labels: Vec<String> = paths.iter().map(|p| label_of(p)).collect();
    let mut curves: Vec<SizeCurve> = Vec::new();
    for (i, report) in reports.iter().enumerate() {
        let (lo, hi) = config.eval.range.unwrap_or_else(|| observed_range(report));
        let curve = interval_average(&points_from_report(report), lo, hi, config.eval.intervals)?;
        write_file(&out.join(format!("curve_{}.csv", tags[i])), curve.to_csv())?;
        write_file(&out.join(format!("curve_{}.svg", tags[i])), svg::curve_svg(&curve, &labels[i]))?;
        let populated = curve.populated().count();
        let shed = if populated >= config.eval.watershed_window {
            match watershed(&curve, config.eval.watershed_window, config.eval.watershed_tol)? {
                Some(t) => format!("watershed at size ratio {t}"),
                None => "no stable region".to_string(),
            }
        } else {
            format!("too few populated intervals ({populated}) for a watershed")
        };
        println!(
            "{}: {} samples, {populated} populated intervals, {} dropped, {shed}",
            labels[i],
            report.rows.len(),
            curve.dropped
        );
        curves.push(curve);
    }
    if let [a, b] = &curves[..] {
        let cmp = compare_curves(a, b)?;
        write_file(&out.join("comparison.csv"), cmp.to_csv())?;
        write_file(
            &out.join("comparison_sums.csv"),
            format!("sum_positive,sum_negative\n{},{}\n", cmp.sum_positive, cmp.sum_negative),
        )?;
        write_file(&out.join("comparison.svg"), svg::comparison_svg(a, b, &cmp, [&labels[0], &labels[1]]))?;
        println!("difference sums: red {} blue {}", cmp.sum_positive, cmp.sum_negative);
    }
    if let Some(cutoff) = config.eval.cutoff {
        for (i, report) in reports.iter().enumerate() {
            let small = filter_small(report, cutoff)?;
            small.write(out.join(format!("small_{}.csv", tags[i])))?;
            println!(
                "{}: {} samples with size ratio <= {cutoff}, mDice {}",
                labels[i],
                small.rows.len(),
                small.mean_dice()
            );
        }
    }
    config.write_resolved(&out)?;
    Ok(())
}
