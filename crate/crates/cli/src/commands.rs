use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hsicube::autograd::Checkpoint;
use hsicube::calib::{
    align_reference, apply_linear_calibration, load_reference_csv, reflectance_calibrate, solve_linear_calibration,
    CalibrationInputs,
};
use hsicube::hypercube::WavelengthAxis;
use hsicube::error::Error;
use hsicube::hypercube::{load_cube, save_cube, CubeFormat, HyperCube};
use hsicube::mask::{remove_background, MaskSummary};
use hsicube::metrics::EvalReport;
use hsicube::model::{build_plb_model, class_mean_cubes, evaluate, train, Model, Variant};
use hsicube::spectral::{
    central_difference, red_edge_position, savitzky_golay_derivative, screen_bands, Spectrum, RED_EDGE_HI_NM,
    RED_EDGE_LO_NM,
};
use hsicube::synth::{generate_dataset, load_manifest_cubes, read_manifest, write_dataset, SynthConfig};

use crate::args::{base_config, AblateArgs, BandsArgs, CalibrateArgs, EvalArgs, MaskArgs, RedEdgeArgs, SynthArgs, TrainArgs};
use crate::dataset::prepare;
use crate::{CliError, CliResult};

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) {
    let _ = writeln!(out, "{}", line.as_ref());
}

fn detect(path: &Path) -> CliResult<CubeFormat> {
    CubeFormat::detect(path)
        .ok_or_else(|| Error::Format(format!("no .desc or .hdr sidecar next to {}", path.display())).into())
}

fn output_format(requested: Option<&str>, input: CubeFormat) -> CliResult<CubeFormat> {
    match requested {
        Some(f) => f.parse().map_err(|e: Error| CliError::Usage(e.to_string())),
        None => Ok(input),
    }
}

fn is_manifest(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Named spectra sources: a cube stands for itself, a manifest for the
/// per-class means of its cubes.
fn gather_cubes(inputs: &[PathBuf]) -> CliResult<Vec<(String, HyperCube)>> {
    let mut out = Vec::new();
    for p in inputs {
        if is_manifest(p) {
            let cubes = load_manifest_cubes(&read_manifest(p)?)?;
            let mut present: Vec<usize> = cubes.iter().map(|(_, l)| *l).collect();
            present.sort_unstable();
            present.dedup();
            for (label, cube) in present.into_iter().zip(class_mean_cubes(&cubes)?) {
                out.push((format!("{}#class{label}", p.display()), cube));
            }
        } else {
            out.push((p.display().to_string(), load_cube(p, detect(p)?)?));
        }
    }
    Ok(out)
}

fn mean_spectrum(name: &str, cube: &HyperCube) -> CliResult<Spectrum> {
    let mean = cube.mean_spectrum();
    if mean.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateData(format!("{name} has no foreground pixels")).into());
    }
    Ok(Spectrum::new(cube.axis().values().to_vec(), mean)?)
}

fn curve_csv(s: &Spectrum, lo: f64, hi: f64) -> String {
    let mut text = String::from("wavelength_nm,value\n");
    for (w, v) in s.wavelengths().iter().zip(s.values()) {
        if *w >= lo && *w <= hi {
            text.push_str(&format!("{w},{v}\n"));
        }
    }
    text
}

/// Rows of `wavelength_nm,radiance,counts,dark_counts`, matched to `axis`
/// within `tol_nm` and returned band-ordered as `(L, DC, DC0)`.
fn linear_reference(path: &Path, axis: &WavelengthAxis, tol_nm: f64) -> CliResult<[Vec<f64>; 3]> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && f[0].parse::<f64>().is_err() {
            continue;
        }
        let nums: Vec<f64> = f
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Format(format!("{} line {}: bad number", path.display(), i + 1)))?;
        let row: [f64; 4] = nums
            .try_into()
            .map_err(|_| Error::Format(format!("{} line {}: expected 4 fields", path.display(), i + 1)))?;
        rows.push(row);
    }
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for &w in axis.values() {
        let r = rows
            .iter()
            .filter(|r| (r[0] - w).abs() <= tol_nm)
            .min_by(|a, b| (a[0] - w).abs().total_cmp(&(b[0] - w).abs()))
            .ok_or_else(|| Error::Coverage(format!("{} has no row within {tol_nm} nm of {w} nm", path.display())))?;
        for (o, v) in out.iter_mut().zip(&r[1..]) {
            o.push(*v);
        }
    }
    Ok(out)
}

pub fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> CliResult<()> {
    let input_format = detect(&a.input)?;
    let cube = load_cube(&a.input, input_format)?;
    let reflectance = match a.method.as_str() {
        "reflectance" => {
            let reference = a
                .reference
                .as_ref()
                .ok_or_else(|| CliError::Usage("--method reflectance needs --reference".into()))?;
            let rows = load_reference_csv(reference)?;
            let (dn, rp) = align_reference(cube.axis(), &rows, a.tol_nm)?;
            reflectance_calibrate(&CalibrationInputs::new(cube, dn, rp)?)?
        }
        "linear" => {
            let table = a
                .linear
                .as_ref()
                .ok_or_else(|| CliError::Usage("--method linear needs --linear".into()))?;
            let [l, dc, dc0] = linear_reference(table, cube.axis(), a.tol_nm)?;
            let cal = solve_linear_calibration(&l, &dc, &dc0)?;
            let plane = cube.height() * cube.width();
            let mut data = cube.data().to_vec();
            for p in 0..plane {
                if !cube.mask()[p] {
                    continue;
                }
                let counts: Vec<f64> = (0..cube.bands()).map(|b| data[b * plane + p]).collect();
                for (b, v) in apply_linear_calibration(&cal, &counts)?.into_iter().enumerate() {
                    data[b * plane + p] = v;
                }
            }
            HyperCube::new(cube.height(), cube.width(), data, cube.axis().clone())?
        }
        other => return Err(CliError::Usage(format!("--method must be reflectance or linear, got '{other}'"))),
    };
    save_cube(&reflectance, &a.output, output_format(a.format.as_deref(), input_format)?)?;
    say(out, "band,wavelength_nm,mean_reflectance");
    for (b, (w, m)) in reflectance
        .axis()
        .values()
        .iter()
        .zip(reflectance.mean_spectrum())
        .enumerate()
    {
        say(out, format!("{b},{w},{m}"));
    }
    Ok(())
}

pub fn cmd_mask(a: &MaskArgs, out: &mut dyn Write) -> CliResult<()> {
    let ratio = match a.ratio {
        Some(r) => r,
        None => base_config(a.config.as_deref())?.ratio,
    };
    let input_format = detect(&a.input)?;
    let cube = load_cube(&a.input, input_format)?;
    let masked = remove_background(&cube, ratio)?;
    save_cube(&masked, &a.output, output_format(a.format.as_deref(), input_format)?)?;
    let s = MaskSummary::of(&masked);
    say(out, s.to_string());
    Ok(())
}

pub fn cmd_bands(a: &BandsArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    a.screen.apply(&mut cfg);
    let sg = cfg.sg()?;
    let sources = gather_cubes(&a.input)?;
    let cubes: Vec<HyperCube> = sources.iter().map(|(_, c)| c.clone()).collect();
    let sel = screen_bands(&cubes, &cfg.screening)?;
    write_file(&a.output, &sel.to_csv())?;
    if let Some(dir) = &a.curves {
        let mut index = String::from("curve,source\n");
        for (i, (name, cube)) in sources.iter().enumerate() {
            let s = mean_spectrum(name, cube)?;
            let d1 = savitzky_golay_derivative(&s, &sg.with_deriv(1))?;
            let d2 = savitzky_golay_derivative(&s, &sg.with_deriv(2))?;
            for (tag, curve) in [("mean", &s), ("d1", &d1), ("d2", &d2)] {
                write_file(&dir.join(format!("{tag}_{i}.csv")), &curve_csv(curve, f64::MIN, f64::MAX))?;
            }
            index.push_str(&format!("{i},{name}\n"));
        }
        write_file(&dir.join("sources.csv"), &index)?;
    }
    let nm: Vec<String> = sel.wavelengths_nm().iter().map(|w| format!("{w:.1}")).collect();
    say(out, format!("{} bands selected: {}", sel.len(), nm.join(", ")));
    Ok(())
}

pub fn cmd_rededge(a: &RedEdgeArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut text = String::from("source,red_edge_nm\n");
    for (i, (name, cube)) in gather_cubes(&a.input)?.iter().enumerate() {
        let s = mean_spectrum(name, cube)?;
        let pos = red_edge_position(&s, RED_EDGE_LO_NM, RED_EDGE_HI_NM)?;
        text.push_str(&format!("{name},{pos}\n"));
        say(out, format!("{name}: red edge at {pos:.1} nm"));
        if let Some(dir) = &a.curves {
            let d1 = central_difference(&s, 1)?;
            write_file(
                &dir.join(format!("rededge_{i}.csv")),
                &curve_csv(&d1, RED_EDGE_LO_NM, RED_EDGE_HI_NM),
            )?;
        }
    }
    write_file(&a.output, &text)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.model.seed = v;
    }
    if let Some(v) = a.tiles_per_class {
        cfg.tiles_per_class = v;
    }
    if let Some(v) = a.tile_size {
        cfg.tile_size = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_sigma = v;
    }
    if let Some(v) = a.background_fraction {
        cfg.background_fraction = v;
    }
    let synth = SynthConfig {
        noise_sigma: cfg.noise_sigma,
        background_fraction: cfg.background_fraction,
        seed: cfg.model.seed,
        ..SynthConfig::default()
    };
    let tiles = generate_dataset(&synth, cfg.tiles_per_class, cfg.tile_size)?;
    let manifest = write_dataset(&tiles, &a.output, &a.genotype)?;
    let axis = synth.axis()?;
    let templates: Vec<Vec<f64>> = (0..synth.num_classes())
        .map(|c| synth.template(c))
        .collect::<Result<_, _>>()?;
    let mut text = String::from("wavelength_nm");
    for c in 0..templates.len() {
        text.push_str(&format!(",class{c}"));
    }
    text.push('\n');
    for (b, w) in axis.values().iter().enumerate() {
        text.push_str(&w.to_string());
        for t in &templates {
            text.push_str(&format!(",{}", t[b]));
        }
        text.push('\n');
    }
    write_file(&a.output.join("templates.csv"), &text)?;
    say(out, format!("{} tiles written; manifest {}", tiles.len(), manifest.display()));
    Ok(())
}

fn default_log(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".epochs.csv");
    PathBuf::from(s)
}

fn join_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = a.model.resolve()?;
    let data = prepare(&a.input, &mut cfg, None)?;
    let mut model = Model::new(&cfg.model)?;
    say(
        out,
        format!(
            "{} model, {} parameters; {} train / {} test samples on bands {:?}",
            cfg.model.kind,
            model.num_params(),
            data.train.len(),
            data.test.len(),
            data.bands
        ),
    );
    let test = (!data.test.is_empty()).then_some(data.test.as_slice());
    let r = train(&mut model, &data.train, test)?;
    let wavelengths: Vec<f64> = data.bands.iter().map(|&b| data.axis.values()[b]).collect();
    let meta = vec![
        ("data.bands".to_string(), join_list(&data.bands)),
        ("data.wavelengths_nm".to_string(), join_list(&wavelengths)),
        ("data.test_fraction".to_string(), cfg.test_fraction.to_string()),
        ("data.split_seed".to_string(), cfg.model.seed.to_string()),
    ];
    model.to_checkpoint(&meta).save(&a.output)?;
    write_file(a.log.as_deref().unwrap_or(&default_log(&a.output)), &r.epoch_log_csv())?;
    if let (Some(path), Some(rep)) = (&a.report, &r.test) {
        write_file(path, &rep.to_json())?;
    }
    let acc = |e: &Option<EvalReport>| e.as_ref().map_or("n/a".to_string(), |e| format!("{:.4}", e.accuracy));
    say(
        out,
        format!(
            "final loss {:.4}; train accuracy {}; test accuracy {}; {:.1}s",
            r.epoch_losses.last().copied().unwrap_or(f64::NAN),
            acc(&r.train),
            acc(&r.test),
            r.wall_clock_secs
        ),
    );
    Ok(())
}

fn meta_value<'a>(ck: &'a Checkpoint, key: &str) -> CliResult<&'a str> {
    ck.meta(key)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks '{key}' metadata")).into())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let bands: Vec<usize> = meta_value(&ck, "data.bands")?
        .split(',')
        .map(|v| v.parse().map_err(|_| Error::Format(format!("bad band index '{v}' in checkpoint"))))
        .collect::<Result<_, _>>()?;
    let mut cfg = base_config(None)?;
    cfg.model = model.cfg.clone();
    cfg.test_fraction = meta_value(&ck, "data.test_fraction")?
        .parse()
        .map_err(|_| Error::Format("bad test fraction in checkpoint".into()))?;
    cfg.model.seed = meta_value(&ck, "data.split_seed")?
        .parse()
        .map_err(|_| Error::Format("bad split seed in checkpoint".into()))?;
    let data = prepare(&a.input, &mut cfg, Some(bands))?;
    if data.num_classes > model.cfg.num_classes {
        return Err(Error::DegenerateData(format!(
            "manifest has {} classes, checkpoint was trained on {}",
            data.num_classes, model.cfg.num_classes
        ))
        .into());
    }
    let samples = match a.split.as_str() {
        "test" => data.test,
        "train" => data.train,
        "all" => data.train.into_iter().chain(data.test).collect(),
        other => return Err(CliError::Usage(format!("--split must be test, train or all, got '{other}'"))),
    };
    if samples.is_empty() {
        return Err(Error::DegenerateData(format!("the {} split has no samples", a.split)).into());
    }
    let rep = evaluate(&model, &samples)?;
    write_file(&a.output, &rep.to_json())?;
    if let Some(p) = &a.confusion {
        write_file(p, &rep.matrix.to_csv())?;
    }
    say(out, format!("accuracy {:.4} on {} {} samples", rep.accuracy, samples.len(), a.split));
    Ok(())
}

fn slug(v: Variant) -> String {
    v.name().to_lowercase()
}

fn macro_avg(rep: &EvalReport, f: impl Fn(&hsicube::metrics::ClassMetrics) -> f64) -> f64 {
    rep.per_class.iter().map(f).sum::<f64>() / rep.per_class.len() as f64
}

pub fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = a.model.resolve()?;
    let data = prepare(&a.input, &mut cfg, None)?;
    if data.test.is_empty() {
        return Err(Error::DegenerateData("ablation needs a non-empty held-out split".into()).into());
    }
    let mut csv = String::from("variant,accuracy,macro_precision,macro_recall,macro_f1,delta_vs_ours\n");
    let mut ours = None;
    for v in Variant::ALL {
        let mut model = build_plb_model(&v.apply(&cfg.model))?;
        let r = train(&mut model, &data.train, None)?;
        let rep = evaluate(&model, &data.test)?;
        write_file(&a.output.join(format!("report_{}.json", slug(v))), &rep.to_json())?;
        write_file(&a.output.join(format!("epochs_{}.csv", slug(v))), &r.epoch_log_csv())?;
        let base = *ours.get_or_insert(rep.accuracy);
        csv.push_str(&format!(
            "{v},{},{},{},{},{}\n",
            rep.accuracy,
            macro_avg(&rep, |c| c.precision),
            macro_avg(&rep, |c| c.recall),
            macro_avg(&rep, |c| c.f1),
            rep.accuracy - base
        ));
        say(out, format!("{v}: accuracy {:.4}", rep.accuracy));
    }
    write_file(&a.output.join("comparison.csv"), &csv)
}
