//! Directory datasets, accuracy metrics and the baseline comparison report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::model::{ClassificationResult, Model};
use crate::par;
use crate::preprocess::prepare_input;
use crate::tensor::Tensor;
use crate::train::SampleSource;

const CLASSES: usize = EmotionLabel::COUNT;
const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// A file that could not be used, with the reason.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Images found under `root/<label>/`, in lexicographic path order.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    root: PathBuf,
    records: Vec<(PathBuf, EmotionLabel)>,
    skipped: Vec<SkippedFile>,
}

impl LabeledDataset {
    /// Scan `root` for label directories. Files whose header cannot be read
    /// as JPEG or PNG are skipped and listed in [`LabeledDataset::skipped`].
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Dataset(format!("{} is not a directory", root.display())));
        }
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for label in EmotionLabel::ALL {
            let dir = root.join(label.name());
            if !dir.is_dir() {
                continue;
            }
            let mut files = Vec::new();
            collect_images(&dir, &mut files)?;
            files.sort();
            for path in files {
                match probe_image(&path) {
                    Ok(()) => records.push((path, label)),
                    Err(reason) => {
                        log::warn!("skipping {}: {reason}", path.display());
                        skipped.push(SkippedFile { path, reason });
                    }
                }
            }
        }
        if records.is_empty() {
            return Err(Error::Dataset(format!(
                "no readable images under {} (expected subdirectories named {})",
                root.display(),
                EmotionLabel::ALL.map(|l| l.name()).join(", ")
            )));
        }
        if !skipped.is_empty() {
            log::warn!("{} unreadable files skipped under {}", skipped.len(), root.display());
        }
        Ok(Self {
            root: root.to_path_buf(),
            records,
            skipped,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[(PathBuf, EmotionLabel)] {
        &self.records
    }

    pub fn skipped(&self) -> &[SkippedFile] {
        &self.skipped
    }

    pub fn counts(&self) -> [u64; CLASSES] {
        let mut counts = [0; CLASSES];
        for (_, label) in &self.records {
            counts[label.index()] += 1;
        }
        counts
    }
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn probe_image(path: &Path) -> std::result::Result<(), String> {
    image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

impl SampleSource for LabeledDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn label(&self, index: usize) -> usize {
        self.records[index].1.index()
    }

    fn load(&self, index: usize) -> Result<Tensor> {
        let path = &self.records[index].0;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        prepare_input(&bytes, None).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
    }
}

/// Top-1/top-3 accuracy and the confusion matrix (rows true, columns predicted).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalMetrics {
    pub confusion: [[u64; CLASSES]; CLASSES],
    pub top3_hits: u64,
}

impl EvalMetrics {
    pub fn record(&mut self, truth: EmotionLabel, prediction: &ClassificationResult) {
        self.confusion[truth.index()][prediction.top().0.index()] += 1;
        self.top3_hits += u64::from(prediction.ranked.iter().take(3).any(|&(l, _)| l == truth));
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..CLASSES).map(|c| self.confusion[c][c]).sum()
    }

    /// Zero for an empty set.
    pub fn top1(&self) -> f64 {
        ratio(self.correct(), self.total())
    }

    pub fn top3(&self) -> f64 {
        ratio(self.top3_hits, self.total())
    }

    pub fn class_counts(&self) -> [u64; CLASSES] {
        self.confusion.map(|row| row.iter().sum())
    }

    /// Per-class recall; `None` for classes absent from the set.
    pub fn per_class(&self) -> [Option<f64>; CLASSES] {
        std::array::from_fn(|c| {
            let n: u64 = self.confusion[c].iter().sum();
            (n > 0).then(|| self.confusion[c][c] as f64 / n as f64)
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: EvalMetrics,
    /// Images that failed to decode or preprocess; excluded from the metrics.
    pub failures: Vec<SkippedFile>,
}

const EVAL_BATCH: usize = 32;

/// Preprocess and classify every record. Deterministic.
pub fn evaluate(model: &Model, data: &LabeledDataset) -> Result<Evaluation> {
    if model.spec().classes != CLASSES {
        return Err(Error::InvalidArgument(format!(
            "evaluation needs a {CLASSES}-class model, got {}",
            model.spec().classes
        )));
    }
    let mut metrics = EvalMetrics::default();
    let mut failures = Vec::new();
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(data.len());
        let loaded = par::map_indexed(end - start, |i| data.load(start + i));
        let mut inputs = Vec::new();
        let mut truths = Vec::new();
        for (i, result) in loaded.into_iter().enumerate() {
            let (path, label) = &data.records[start + i];
            match result {
                Ok(t) => {
                    inputs.push(t);
                    truths.push(*label);
                }
                Err(e) => {
                    log::warn!("excluding {}: {e}", path.display());
                    failures.push(SkippedFile {
                        path: path.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        if inputs.is_empty() {
            continue;
        }
        for (truth, prediction) in truths.iter().zip(model.predict_batch(&inputs, 3)?) {
            metrics.record(*truth, &prediction);
        }
    }
    if metrics.total() == 0 {
        return Err(Error::Dataset(format!(
            "all {} images failed preprocessing",
            failures.len()
        )));
    }
    Ok(Evaluation { metrics, failures })
}

/// One published comparison row. The accuracy is kept as printed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Baseline {
    pub model: &'static str,
    pub accuracy: &'static str,
}

impl Baseline {
    pub fn value(&self) -> f64 {
        self.accuracy.parse().expect("published accuracies are decimal")
    }
}

/// Peak AffectNet accuracies of the reference model and prior work.
pub const BASELINES: [Baseline; 8] = [
    Baseline { model: "Our Model", accuracy: "0.5509" },
    Baseline { model: "VGGNet Variant", accuracy: "0.58" },
    Baseline { model: "MobileNet Variant", accuracy: "0.58" },
    Baseline { model: "SVR", accuracy: "0.277" },
    Baseline { model: "CNN", accuracy: "0.470" },
    Baseline { model: "2Att-CNN", accuracy: "0.487" },
    Baseline { model: "2Att-Mt", accuracy: "0.539" },
    Baseline { model: "2Att-2Mt", accuracy: "0.635" },
];

pub const REPORT_TITLE: &str = "ACCURACY COMPARISONS ACROSS DIFFERENT MODELS";

/// Comparison table, highest accuracy first, one `<model> <accuracy>` row per
/// model. The evaluated model (if any) is printed to four decimals and placed
/// after published rows of equal accuracy; a confusion matrix and per-class
/// accuracies follow.
pub fn render_comparison_report(evaluated: Option<(&str, &EvalMetrics)>, baselines: &[Baseline]) -> String {
    let mut rows: Vec<(String, f64, String)> = baselines
        .iter()
        .map(|b| (b.model.to_string(), b.value(), b.accuracy.to_string()))
        .collect();
    if let Some((name, m)) = evaluated {
        rows.push((name.to_string(), m.top1(), format!("{:.4}", m.top1())));
    }
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut out = format!("{REPORT_TITLE}\n");
    for (name, _, accuracy) in &rows {
        writeln!(out, "{name} {accuracy}").unwrap();
    }
    let Some((name, m)) = evaluated else {
        return out;
    };

    writeln!(out, "\n{name}: top-1 {:.4}, top-3 {:.4}, {} images", m.top1(), m.top3(), m.total()).unwrap();
    writeln!(out, "\nconfusion matrix (rows true, columns predicted)").unwrap();
    let width = m.confusion.iter().flatten().map(|v| v.to_string().len()).max().unwrap_or(1).max(8);
    write!(out, "{:>9}", "").unwrap();
    for l in EmotionLabel::ALL {
        write!(out, " {:>width$}", l.name()).unwrap();
    }
    out.push('\n');
    for l in EmotionLabel::ALL {
        write!(out, "{:>9}", l.name()).unwrap();
        for v in m.confusion[l.index()] {
            write!(out, " {v:>width$}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "\nper-class accuracy").unwrap();
    for (l, acc) in EmotionLabel::ALL.iter().zip(m.per_class()) {
        match acc {
            Some(a) => writeln!(out, "{:>9} {a:.4}", l.name()).unwrap(),
            None => writeln!(out, "{:>9} n/a", l.name()).unwrap(),
        }
    }
    out
}
