//! Pipeline stages. Each reads its inputs from files, writes its artifacts
//! plus a `<stage>_manifest.toml` into the output directory, and returns a
//! summary for printing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deepact::dbn::{
    fine_tune, load_model, pretrain_greedy, save_model, sweep_cell, DbnModel, EpochStats, LabeledSet,
    SweepCell, SweepConfig, UnlabeledFeatures,
};
use deepact::hmm::{decode_dataset, label_sequences, save_hmm, stream_segments, DecodeOptions, HmmModel};
use deepact::ingest::{inject_noise, load_dataset, make_windows, split_indices, Standardizer};
use deepact::metrics::{multiclass_accuracy, report, ConfusionMatrix};
use deepact::spectral::{SpectralExtractor, SpectrumOptions};
use deepact::{Error, Result};
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::features::{FeatureRow, FeatureTable, Split};
use crate::manifest::{checksum, Manifest, RunInfo};

pub const FEATURES_FILE: &str = "features.csv";
pub const MODEL_FILE: &str = "model.dbn";
pub const HMM_FILE: &str = "hmm.txt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn record_output(info: &mut RunInfo, path: &Path) -> Result<()> {
    let name = path.file_name().expect("file path").to_string_lossy().into_owned();
    info.outputs.insert(name, checksum(path)?);
    Ok(())
}

fn finish(info: RunInfo, cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let path = out.join(format!("{}_manifest.toml", info.command));
    let mut config = cfg.clone();
    // Relative paths would re-resolve against the manifest's directory.
    if let Ok(abs) = std::path::absolute(&config.dataset.path) {
        config.dataset.path = abs;
    }
    Manifest { run: info, config }
    .write(&path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub n: usize,
    pub feature_len: usize,
    pub classes: Vec<String>,
    pub samples: usize,
    pub skipped_rows: usize,
    pub windows: usize,
    pub unlabeled_windows: usize,
    /// Windows per class in train and test.
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub recordings: usize,
}

impl IngestSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "N\t{}\nL\t{}\nclasses\t{}\nsamples\t{}\nskipped_rows\t{}\nwindows\t{}\nunlabeled_windows\t{}\nrecordings\t{}\nclass\ttrain\ttest\n",
            self.n,
            self.feature_len,
            self.classes.len(),
            self.samples,
            self.skipped_rows,
            self.windows,
            self.unlabeled_windows,
            self.recordings,
        );
        for (i, c) in self.classes.iter().enumerate() {
            let _ = writeln!(s, "{c}\t{}\t{}", self.train_counts[i], self.test_counts[i]);
        }
        s
    }
}

/// Loads the dataset, windows it, extracts spectra, assigns the split and
/// writes `features.csv` and `ingest_summary.tsv`.
pub fn cmd_ingest(cfg: &RunConfig, out: &Path) -> Result<IngestSummary> {
    cfg.validate()?;
    create_dir(out)?;
    let format = cfg.format()?;
    let geom = cfg.geometry()?;
    let data = load_dataset(&cfg.dataset.path, format, &cfg.load_options()?)?;
    let samples = inject_noise(
        &data.samples,
        cfg.pipeline.noise_sigma,
        cfg.dataset.saturation,
        cfg.noise_seed(),
    )?;
    let windows = make_windows(&samples, geom.n, geom.stride)?;
    if windows.is_empty() {
        return Err(Error::EmptyInput(cfg.dataset.path.clone()));
    }
    let extractor = SpectralExtractor::new(
        geom.n,
        SpectrumOptions {
            hann: cfg.features.hann,
            log_magnitude: cfg.features.log_magnitude,
        },
    )?;
    let split = split_indices(&windows, cfg.split_policy()?, cfg.split.test_fraction, cfg.split_seed())?;
    let mut is_test = vec![false; windows.len()];
    for &i in &split.test {
        is_test[i] = true;
    }
    let mut rows = Vec::with_capacity(windows.len());
    for (w, test) in windows.iter().zip(is_test) {
        let f = extractor.feature(w)?;
        rows.push(FeatureRow {
            label: f.label,
            origin: f.origin,
            split: if test { Split::Test } else { Split::Train },
            values: f.values,
        });
    }
    let table = FeatureTable {
        n: geom.n,
        stride: geom.stride,
        classes: data.classes.clone(),
        rows,
    };
    let features_path = out.join(FEATURES_FILE);
    table.write(&features_path)?;

    let m = data.classes.len();
    let mut train_counts = vec![0; m];
    let mut test_counts = vec![0; m];
    for r in &table.rows {
        if let Some(l) = r.label {
            match r.split {
                Split::Train => train_counts[l] += 1,
                Split::Test => test_counts[l] += 1,
            }
        }
    }
    let mut streams: Vec<_> = table.rows.iter().map(|r| r.origin.stream).collect();
    streams.sort();
    streams.dedup();
    let summary = IngestSummary {
        n: geom.n,
        feature_len: table.feature_len(),
        classes: data.classes,
        samples: samples.len(),
        skipped_rows: data.skipped.len(),
        windows: table.rows.len(),
        unlabeled_windows: table.rows.iter().filter(|r| r.label.is_none()).count(),
        train_counts,
        test_counts,
        recordings: streams.len(),
    };
    let summary_path = out.join("ingest_summary.tsv");
    write_text(&summary_path, &summary.render())?;

    let mut info = RunInfo::new("ingest");
    info.seeds.insert("split".into(), cfg.split_seed().to_string());
    info.seeds.insert("noise".into(), cfg.noise_seed().to_string());
    info.inputs.insert("dataset".into(), checksum(&cfg.dataset.path)?);
    record_output(&mut info, &features_path)?;
    record_output(&mut info, &summary_path)?;
    finish(info, cfg, out)?;
    Ok(summary)
}

/// Standardized train matrix (all train rows, labeled or not) and the
/// labeled subset with its labels.
struct TrainData {
    standardizer: Standardizer,
    all: Array2<f64>,
    labeled: Array2<f64>,
    labels: Vec<usize>,
}

fn train_data(table: &FeatureTable) -> Result<TrainData> {
    let train: Vec<&FeatureRow> = table.rows_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Invalid("the feature file has no training rows".into()));
    }
    let raw: Vec<&[f64]> = train.iter().map(|r| r.values.as_slice()).collect();
    let standardizer = Standardizer::fit(&raw)?;
    let mut all = deepact::dbn::rows_to_matrix(&raw)?;
    for mut row in all.rows_mut() {
        standardizer.apply_in_place(row.as_slice_mut().expect("standard layout"))?;
    }
    let keep: Vec<usize> = (0..train.len()).filter(|&i| train[i].label.is_some()).collect();
    if keep.is_empty() {
        return Err(Error::Invalid("the training split has no labeled rows".into()));
    }
    let labeled = all.select(ndarray::Axis(0), &keep);
    let labels = keep.iter().map(|&i| train[i].label.expect("filtered")).collect();
    Ok(TrainData {
        standardizer,
        all,
        labeled,
        labels,
    })
}

fn standardized_test(table: &FeatureTable, model: &DbnModel) -> Result<(Array2<f64>, Vec<usize>, Vec<FeatureRow>)> {
    let rows: Vec<FeatureRow> = table
        .rows_in(Split::Test)
        .filter(|r| r.label.is_some())
        .cloned()
        .collect();
    if rows.is_empty() {
        return Err(Error::Invalid("the test split has no labeled rows".into()));
    }
    let std_rows = rows
        .iter()
        .map(|r| model.standardize(&r.values))
        .collect::<Result<Vec<_>>>()?;
    let labels = rows.iter().map(|r| r.label.expect("filtered")).collect();
    Ok((deepact::dbn::rows_to_matrix(&std_rows)?, labels, rows))
}

fn check_compatible(model: &DbnModel, table: &FeatureTable) -> Result<()> {
    if model.input_dim() != table.feature_len() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: table.feature_len(),
            context: "feature length L (model input)",
        });
    }
    if model.class_labels != table.classes {
        return Err(Error::Invalid(format!(
            "model classes {:?} differ from feature classes {:?}",
            model.class_labels, table.classes
        )));
    }
    Ok(())
}

/// Estimates the HMM from adjacent labeled windows of the training split.
pub fn estimate_hmm(table: &FeatureTable, smoothing: f64) -> Result<HmmModel> {
    let train: Vec<&FeatureRow> = table.rows_in(Split::Train).collect();
    let origins: Vec<_> = train.iter().map(|r| r.origin).collect();
    let labels: Vec<_> = train.iter().map(|r| r.label).collect();
    let sequences = label_sequences(&origins, &labels, table.stride as u64)?;
    HmmModel::estimate(&sequences, table.classes.clone(), smoothing)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub manifest_path: PathBuf,
    pub pretrained: bool,
    pub widths: Vec<usize>,
    pub train_rows: usize,
    pub final_epoch: Option<EpochStats>,
}

/// Pretrains (unless disabled) and fine-tunes a network on the training
/// split of a feature file.
pub fn cmd_train(cfg: &RunConfig, features: &Path, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    create_dir(out)?;
    let table = FeatureTable::read(features)?;
    let data = train_data(&table)?;
    let mut log = String::from("stage\tlayer\tepoch\tvalue\n");
    let pretrain = cfg.pretrain_config()?;
    let mut model = if cfg.pipeline.pretrain {
        let pre = pretrain_greedy(&UnlabeledFeatures::new(data.all.clone()), &cfg.model.layers, &pretrain)?;
        for (layer, hist) in pre.histories.iter().enumerate() {
            for (epoch, v) in hist.iter().enumerate() {
                let _ = writeln!(log, "pretrain\t{layer}\t{epoch}\t{v:?}");
            }
        }
        pre.model
    } else {
        DbnModel::random(table.feature_len(), &cfg.model.layers, cfg.init_seed())?
    };
    model.init_head(table.classes.clone())?;
    let ft = cfg.finetune_config();
    let tuned = fine_tune(model, data.labeled.view(), &data.labels, &ft)?;
    for (epoch, s) in tuned.history.iter().enumerate() {
        let _ = writeln!(log, "finetune_loss\t-\t{epoch}\t{:?}", s.loss);
        let _ = writeln!(log, "finetune_accuracy\t-\t{epoch}\t{:?}", s.accuracy);
    }
    let mut model = tuned.model;
    model.standardizer = Some(data.standardizer);

    let model_path = out.join(MODEL_FILE);
    save_model(&model, &model_path)?;
    let log_path = out.join("train_log.tsv");
    write_text(&log_path, &log)?;

    let mut info = RunInfo::new("train");
    info.pretrained = Some(cfg.pipeline.pretrain);
    if cfg.pipeline.pretrain {
        info.seeds.insert("pretrain".into(), pretrain.seed.to_string());
    } else {
        info.seeds.insert("init".into(), cfg.init_seed().to_string());
    }
    info.seeds.insert("finetune".into(), ft.seed.to_string());
    info.inputs.insert("features".into(), checksum(features)?);
    record_output(&mut info, &model_path)?;
    record_output(&mut info, &log_path)?;
    if cfg.pipeline.hmm {
        let hmm_path = out.join(HMM_FILE);
        save_hmm(&estimate_hmm(&table, cfg.pipeline.smoothing)?, &hmm_path)?;
        record_output(&mut info, &hmm_path)?;
    }
    let manifest_path = finish(info, cfg, out)?;
    Ok(TrainSummary {
        model_path,
        manifest_path,
        pretrained: cfg.pipeline.pretrain,
        widths: model.widths(),
        train_rows: data.labels.len(),
        final_epoch: tuned.history.last().copied(),
    })
}

fn positive_class(cfg: &RunConfig, classes: &[String]) -> Result<Option<usize>> {
    match &cfg.pipeline.positive_class {
        Some(name) => classes
            .iter()
            .position(|c| c == name)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("positive class `{name}` is not one of {classes:?}"))),
        None if classes.len() == 2 => Ok(Some(1)),
        None => Ok(None),
    }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub confusion: ConfusionMatrix,
    pub hit_rate: f64,
    pub macro_accuracy: f64,
    pub positive: Option<usize>,
    pub report: String,
}

/// Frame-wise evaluation on the labeled test rows.
pub fn cmd_eval(cfg: &RunConfig, model_path: &Path, features: &Path, out: &Path) -> Result<EvalSummary> {
    create_dir(out)?;
    let model = load_model(model_path)?;
    let table = FeatureTable::read(features)?;
    check_compatible(&model, &table)?;
    let (x, labels, _) = standardized_test(&table, &model)?;
    let pred = model.predict_batch(x.view())?;
    let mut cm = ConfusionMatrix::new(table.classes.clone());
    for (t, p) in labels.iter().zip(&pred) {
        cm.add(*t, *p)?;
    }
    let positive = positive_class(cfg, &table.classes)?;
    let mut text = report(&cm, positive);
    if cfg.pipeline.hmm {
        let d = decode_table(cfg, &model, &table)?;
        let _ = writeln!(text, "framewise_accuracy\t{:.4}", d.framewise_accuracy);
        let _ = writeln!(text, "viterbi_accuracy\t{:.4}", d.viterbi_accuracy);
    }
    let report_path = out.join("eval_report.tsv");
    write_text(&report_path, &text)?;
    let mut info = RunInfo::new("eval");
    info.inputs.insert("model".into(), checksum(model_path)?);
    info.inputs.insert("features".into(), checksum(features)?);
    record_output(&mut info, &report_path)?;
    finish(info, cfg, out)?;
    let hit_rate = cm.hit_rate().unwrap_or(0.0);
    let macro_accuracy = if cm.classes() >= 2 {
        multiclass_accuracy(&cm)?
    } else {
        hit_rate
    };
    Ok(EvalSummary {
        confusion: cm,
        hit_rate,
        macro_accuracy,
        positive,
        report: text,
    })
}

#[derive(Debug, Clone)]
pub struct DecodeSummary {
    pub hmm: HmmModel,
    pub segments: usize,
    pub windows: usize,
    pub framewise_accuracy: f64,
    pub viterbi_accuracy: f64,
    /// `user recording start label framewise viterbi` per test window.
    pub records: String,
}

fn decode_table(cfg: &RunConfig, model: &DbnModel, table: &FeatureTable) -> Result<DecodeSummary> {
    let hmm = estimate_hmm(table, cfg.pipeline.smoothing)?;
    let (x, labels, rows) = standardized_test(table, model)?;
    let origins: Vec<_> = rows.iter().map(|r| r.origin).collect();
    let segments = stream_segments(&origins);
    let decoded = decode_dataset(
        x.view(),
        model,
        &hmm,
        &segments,
        DecodeOptions {
            uniform_priors: cfg.pipeline.uniform_priors,
        },
    )?;
    let mut records = String::from("user\trecording\tstart\tlabel\tframewise\tviterbi\n");
    let (mut fw_hits, mut vt_hits) = (0usize, 0usize);
    for seg in &decoded {
        for (k, i) in seg.rows.clone().enumerate() {
            let (f, v) = (seg.framewise[k], seg.viterbi[k]);
            fw_hits += (f == labels[i]) as usize;
            vt_hits += (v == labels[i]) as usize;
            let o = origins[i];
            let _ = writeln!(
                records,
                "{}\t{}\t{}\t{}\t{}\t{}",
                o.stream.user, o.stream.recording, o.start, table.classes[labels[i]], table.classes[f], table.classes[v]
            );
        }
    }
    let n = labels.len() as f64;
    Ok(DecodeSummary {
        hmm,
        segments: decoded.len(),
        windows: labels.len(),
        framewise_accuracy: fw_hits as f64 / n,
        viterbi_accuracy: vt_hits as f64 / n,
        records,
    })
}

/// Estimates the HMM from the training split and decodes every recording of
/// the test split.
pub fn cmd_decode(cfg: &RunConfig, model_path: &Path, features: &Path, out: &Path) -> Result<DecodeSummary> {
    create_dir(out)?;
    let model = load_model(model_path)?;
    let table = FeatureTable::read(features)?;
    check_compatible(&model, &table)?;
    let summary = decode_table(cfg, &model, &table)?;
    let hmm_path = out.join(HMM_FILE);
    save_hmm(&summary.hmm, &hmm_path)?;
    let records_path = out.join("decode.tsv");
    write_text(&records_path, &summary.records)?;
    let report_path = out.join("decode_report.tsv");
    write_text(
        &report_path,
        &format!(
            "segments\t{}\nwindows\t{}\nframewise_accuracy\t{:?}\nviterbi_accuracy\t{:?}\n",
            summary.segments, summary.windows, summary.framewise_accuracy, summary.viterbi_accuracy
        ),
    )?;
    let mut info = RunInfo::new("decode");
    info.inputs.insert("model".into(), checksum(model_path)?);
    info.inputs.insert("features".into(), checksum(features)?);
    for p in [&hmm_path, &records_path, &report_path] {
        record_output(&mut info, p)?;
    }
    finish(info, cfg, out)?;
    Ok(summary)
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains one model per `(depth, width)` cell of the configured grid and
/// writes `sweep.tsv`.
pub fn cmd_sweep(cfg: &RunConfig, features: &Path, out: &Path) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    create_dir(out)?;
    if cfg.sweep.depths.is_empty() || cfg.sweep.widths.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let table = FeatureTable::read(features)?;
    let data = train_data(&table)?;
    let test_rows: Vec<Vec<f64>> = table
        .rows_in(Split::Test)
        .filter(|r| r.label.is_some())
        .map(|r| data.standardizer.apply(&r.values))
        .collect::<Result<_>>()?;
    let test_labels: Vec<usize> = table.rows_in(Split::Test).filter_map(|r| r.label).collect();
    if test_labels.is_empty() {
        return Err(Error::Invalid("the test split has no labeled rows".into()));
    }
    let test_x = deepact::dbn::rows_to_matrix(&test_rows)?;
    let sweep_cfg = SweepConfig {
        pretrain: cfg.pipeline.pretrain.then(|| cfg.pretrain_config()).transpose()?,
        finetune: cfg.finetune_config(),
        seed: cfg.sweep_seed(),
    };
    let grid: Vec<(usize, usize)> = cfg
        .sweep
        .depths
        .iter()
        .flat_map(|&d| cfg.sweep.widths.iter().map(move |&w| (d, w)))
        .collect();
    let train = LabeledSet {
        x: data.labeled.view(),
        labels: &data.labels,
    };
    let test = LabeledSet {
        x: test_x.view(),
        labels: &test_labels,
    };
    let cells = with_threads(cfg.pipeline.threads, || {
        grid.par_iter()
            .enumerate()
            .map(|(i, &(d, w))| sweep_cell(train, test, &table.classes, d, w, i, &sweep_cfg))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut text = String::from("depth\twidth\ttrain_accuracy\ttest_accuracy\tseed\n");
    for c in &cells {
        let _ = writeln!(text, "{}\t{}\t{:?}\t{:?}\t{}", c.depth, c.width, c.train_accuracy, c.test_accuracy, c.seed);
    }
    let path = out.join("sweep.tsv");
    write_text(&path, &text)?;
    let mut info = RunInfo::new("sweep");
    info.pretrained = Some(cfg.pipeline.pretrain);
    info.seeds.insert("sweep".into(), sweep_cfg.seed.to_string());
    info.inputs.insert("features".into(), checksum(features)?);
    record_output(&mut info, &path)?;
    finish(info, cfg, out)?;
    Ok(cells)
}

/// Human-readable summary of a model, HMM or feature file.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if bytes.starts_with(deepact::dbn::MODEL_MAGIC) {
        let m = deepact::dbn::decode_model(&bytes)?;
        let params: usize = m
            .layers
            .iter()
            .map(|l| l.weights.len() + l.visible_bias.len() + l.hidden_bias.len())
            .sum::<usize>()
            + m.head.as_ref().map_or(0, |h| h.weights.len() + h.bias.len());
        let mut s = format!(
            "kind\tdbn\ninput_dim\t{}\ndepth\t{}\nwidths\t{:?}\nclasses\t{}\nparameters\t{params}\nstandardizer\t{}\n",
            m.input_dim(),
            m.depth(),
            m.widths(),
            m.classes(),
            m.standardizer.is_some()
        );
        for (i, c) in m.class_labels.iter().enumerate() {
            let _ = writeln!(s, "class\t{i}\t{c}");
        }
        return Ok(s);
    }
    let text = String::from_utf8_lossy(&bytes);
    if text.starts_with("deepact-hmm") {
        let h = deepact::hmm::decode_hmm(&text)?;
        let mut s = format!("kind\thmm\nstates\t{}\n", h.states());
        for (i, c) in h.class_labels.iter().enumerate() {
            let _ = writeln!(
                s,
                "state\t{c}\tpi\t{:.4}\tprior\t{:.4}\tstay\t{:.4}",
                h.pi[i],
                h.class_priors[i],
                h.psi[[i, i]]
            );
        }
        return Ok(s);
    }
    if text.starts_with("# deepact-features") {
        let t = FeatureTable::read(path)?;
        return Ok(format!(
            "kind\tfeatures\nN\t{}\nstride\t{}\nL\t{}\nrows\t{}\ntrain\t{}\ntest\t{}\nclasses\t{}\n",
            t.n,
            t.stride,
            t.feature_len(),
            t.rows.len(),
            t.rows_in(Split::Train).count(),
            t.rows_in(Split::Test).count(),
            t.classes.join(",")
        ));
    }
    Err(Error::Format(format!("{}: unrecognized file", path.display())))
}
