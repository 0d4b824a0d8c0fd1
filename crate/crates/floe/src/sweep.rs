//! Seeded experiment sweeps: vary one axis (exposure weight, margin,
//! exposed-anomaly count, exposed-type count, or the detector itself),
//! train fresh models per repetition, evaluate on a fixed test split, and
//! aggregate means with 95% confidence intervals.
//!
//! Every run's seed derives from (base seed, point index, repetition), so
//! sweeps are reproducible and individual runs can be re-executed in
//! isolation — the CLI uses that for resume.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{select_types, subsample_anomalies, Dataset, DatasetSplits};
use crate::detector::{train_detector, DetectorConfig, DetectorKind};
use crate::error::{Error, Result};
use crate::eval::{auc, mean_and_ci95, ScoredSet};
use crate::rng::{derive_seed, seeded_rng};

/// The swept axis with its grid.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Lambda(Vec<f64>),
    Gamma(Vec<f64>),
    ExposedCount(Vec<usize>),
    ExposedTypeCount(Vec<usize>),
    Detector(Vec<DetectorKind>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Lambda(_) => "lambda",
            SweepAxis::Gamma(_) => "gamma",
            SweepAxis::ExposedCount(_) => "exposed_count",
            SweepAxis::ExposedTypeCount(_) => "exposed_type_count",
            SweepAxis::Detector(_) => "detector",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Lambda(v) | SweepAxis::Gamma(v) => v.len(),
            SweepAxis::ExposedCount(v) | SweepAxis::ExposedTypeCount(v) => v.len(),
            SweepAxis::Detector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, idx: usize) -> String {
        match self {
            SweepAxis::Lambda(v) | SweepAxis::Gamma(v) => format!("{}", v[idx]),
            SweepAxis::ExposedCount(v) | SweepAxis::ExposedTypeCount(v) => format!("{}", v[idx]),
            SweepAxis::Detector(v) => v[idx].name().to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub repetitions: usize,
}

/// Outcome of one training run within a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub point: usize,
    pub rep: usize,
    pub seed: u64,
    pub auc: Option<f64>,
    /// AUC restricted to anomaly types exposed during training
    /// (type-count sweeps only).
    pub auc_exposed: Option<f64>,
    /// AUC restricted to anomaly types held out of training.
    pub auc_unexposed: Option<f64>,
    pub error: Option<String>,
}

/// One fully resolved run. `run` is a pure function of the job and the
/// splits, so jobs can execute in any order or process.
#[derive(Debug, Clone)]
pub struct SweepJob {
    pub point: usize,
    pub rep: usize,
    pub label: String,
    pub seed: u64,
    config: DetectorConfig,
    selection: Selection,
}

#[derive(Debug, Clone)]
enum Selection {
    All,
    Count(usize),
    Types(usize),
}

/// Expands a sweep into its runs.
pub fn sweep_jobs(spec: &SweepSpec, base: &DetectorConfig) -> Result<Vec<SweepJob>> {
    if spec.axis.is_empty() {
        return Err(Error::usage("sweep axis has no values"));
    }
    if spec.repetitions == 0 {
        return Err(Error::usage("sweep needs at least one repetition"));
    }
    let mut jobs = Vec::with_capacity(spec.axis.len() * spec.repetitions);
    for point in 0..spec.axis.len() {
        for rep in 0..spec.repetitions {
            let seed = derive_seed(base.train.seed, (point as u64) * 65_536 + rep as u64 + 1);
            let mut config = base.clone();
            config.train.seed = seed;
            let selection = match &spec.axis {
                SweepAxis::Lambda(v) => {
                    config.train.lambda = v[point];
                    Selection::All
                }
                SweepAxis::Gamma(v) => {
                    config.train.gamma = v[point];
                    Selection::All
                }
                SweepAxis::ExposedCount(v) => Selection::Count(v[point]),
                SweepAxis::ExposedTypeCount(v) => Selection::Types(v[point]),
                SweepAxis::Detector(v) => {
                    config.kind = v[point];
                    Selection::All
                }
            };
            jobs.push(SweepJob {
                point,
                rep,
                label: spec.axis.label(point),
                seed,
                config,
                selection,
            });
        }
    }
    Ok(jobs)
}

impl SweepJob {
    /// Trains and evaluates this run. Failures (divergence, impossible
    /// configurations) are recorded in the returned record, not raised.
    pub fn run(&self, splits: &DatasetSplits) -> RunRecord {
        let mut record = RunRecord {
            point: self.point,
            rep: self.rep,
            seed: self.seed,
            auc: None,
            auc_exposed: None,
            auc_unexposed: None,
            error: None,
        };
        match self.execute(splits) {
            Ok((all, exposed, unexposed)) => {
                record.auc = Some(all);
                record.auc_exposed = exposed;
                record.auc_unexposed = unexposed;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    }

    fn execute(&self, splits: &DatasetSplits) -> Result<(f64, Option<f64>, Option<f64>)> {
        // Materialize the training view for this run.
        let (train, exposed_types): (Dataset, Option<Vec<String>>) = match &self.selection {
            Selection::All => (splits.train.clone(), None),
            Selection::Count(n) => (
                subsample_anomalies(&splits.train, *n, derive_seed(self.seed, 2))?,
                None,
            ),
            Selection::Types(n) => {
                let tags = splits.train.present_types();
                if *n > tags.len() {
                    return Err(Error::usage(format!(
                        "cannot expose {n} anomaly types, only {} exist",
                        tags.len()
                    )));
                }
                let mut rng = seeded_rng(derive_seed(self.seed, 3));
                let chosen: Vec<String> =
                    rand::seq::index::sample(&mut rng, tags.len(), *n)
                        .into_iter()
                        .map(|i| tags[i].clone())
                        .collect();
                (select_types(&splits.train, &chosen)?, Some(chosen))
            }
        };

        let (detector, _history) = train_detector(
            &self.config,
            splits.train.dimension(),
            &train.normal_features(),
            &train.anomaly_features(),
            &splits.validation.normal_features(),
        )?;
        let scored: ScoredSet = detector.score_dataset(&splits.test)?;
        let overall = auc(&scored)?;

        let (auc_exposed, auc_unexposed) = if let Some(chosen) = exposed_types {
            let all_types = splits.test.present_types();
            let unexposed: Vec<String> = all_types
                .iter()
                .filter(|t| !chosen.contains(t))
                .cloned()
                .collect();
            let on = |types: &[String]| -> Result<Option<f64>> {
                if types.is_empty() {
                    return Ok(None);
                }
                let subset = scored.restrict_to_types(types);
                if subset.entries.iter().any(|e| e.label.is_anomaly()) {
                    Ok(Some(auc(&subset)?))
                } else {
                    Ok(None)
                }
            };
            (on(&chosen)?, on(&unexposed)?)
        } else {
            (None, None)
        };
        Ok((overall, auc_exposed, auc_unexposed))
    }
}

/// Aggregated results at one axis value.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub runs: Vec<RunRecord>,
    pub mean_auc: f64,
    pub ci95: Option<f64>,
    pub mean_exposed: Option<(f64, Option<f64>)>,
    pub mean_unexposed: Option<(f64, Option<f64>)>,
    pub failed: usize,
}

impl SweepPoint {
    /// Completed run-level AUCs, in repetition order.
    pub fn run_aucs(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.auc).collect()
    }

    pub fn run_unexposed_aucs(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.auc_unexposed).collect()
    }

    pub fn run_exposed_aucs(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.auc_exposed).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

/// Builds the report from completed run records (order-insensitive).
pub fn aggregate(spec: &SweepSpec, records: Vec<RunRecord>) -> SweepReport {
    let mut points = Vec::with_capacity(spec.axis.len());
    for point in 0..spec.axis.len() {
        let mut runs: Vec<RunRecord> =
            records.iter().filter(|r| r.point == point).cloned().collect();
        runs.sort_by_key(|r| r.rep);
        let aucs: Vec<f64> = runs.iter().filter_map(|r| r.auc).collect();
        let (mean_auc, ci95) = mean_and_ci95(&aucs);
        let exposed: Vec<f64> = runs.iter().filter_map(|r| r.auc_exposed).collect();
        let unexposed: Vec<f64> = runs.iter().filter_map(|r| r.auc_unexposed).collect();
        let failed = runs.iter().filter(|r| r.error.is_some()).count();
        points.push(SweepPoint {
            label: spec.axis.label(point),
            mean_auc,
            ci95,
            mean_exposed: (!exposed.is_empty()).then(|| mean_and_ci95(&exposed)),
            mean_unexposed: (!unexposed.is_empty()).then(|| mean_and_ci95(&unexposed)),
            failed,
            runs,
        });
    }
    SweepReport {
        axis: spec.axis.name().to_string(),
        points,
    }
}

/// Runs a whole sweep with up to `workers` threads. Run results are
/// deterministic per job; aggregation order is fixed by (point, rep).
pub fn run_sweep(
    spec: &SweepSpec,
    base: &DetectorConfig,
    splits: &DatasetSplits,
    workers: usize,
) -> Result<SweepReport> {
    let jobs = sweep_jobs(spec, base)?;
    let records = run_jobs(&jobs, splits, workers);
    Ok(aggregate(spec, records))
}

/// Executes jobs across a small thread pool, returning one record per job.
pub fn run_jobs(jobs: &[SweepJob], splits: &DatasetSplits, workers: usize) -> Vec<RunRecord> {
    let workers = workers.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= jobs.len() {
                    break;
                }
                let record = jobs[idx].run(splits);
                results.lock().expect("sweep results lock")[idx] = Some(record);
            });
        }
    });

    results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .map(|r| r.expect("every job produces a record"))
        .collect()
}

impl SweepReport {
    /// Table export, one row per axis value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis,value,runs,failed,mean_auc,ci95,mean_exposed_auc,ci95_exposed,mean_unexposed_auc,ci95_unexposed\n",
        );
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            let (me, cie) = match p.mean_exposed {
                Some((m, c)) => (Some(m), c),
                None => (None, None),
            };
            let (mu, ciu) = match p.mean_unexposed {
                Some((m, c)) => (Some(m), c),
                None => (None, None),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.axis,
                p.label,
                p.runs.len() - p.failed,
                p.failed,
                if p.run_aucs().is_empty() { String::new() } else { p.mean_auc.to_string() },
                fmt_opt(p.ci95),
                fmt_opt(me),
                fmt_opt(cie),
                fmt_opt(mu),
                fmt_opt(ciu),
            ));
        }
        out
    }

    /// Minimal SVG line plot: mean AUC per axis value with a shaded 95%
    /// confidence band, plus exposed/unexposed series when present.
    pub fn to_svg(&self) -> String {
        let (w, h) = (640.0, 400.0);
        let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 50.0);
        let plot_w = w - ml - mr;
        let plot_h = h - mt - mb;
        let n = self.points.len().max(1);

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut series_values = |f: &dyn Fn(&SweepPoint) -> Option<(f64, Option<f64>)>| {
            for p in &self.points {
                if let Some((m, c)) = f(p) {
                    let c = c.unwrap_or(0.0);
                    lo = lo.min(m - c);
                    hi = hi.max(m + c);
                }
            }
        };
        series_values(&|p| (!p.run_aucs().is_empty()).then_some((p.mean_auc, p.ci95)));
        series_values(&|p| p.mean_exposed);
        series_values(&|p| p.mean_unexposed);
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        let pad = ((hi - lo) * 0.1).max(0.01);
        lo -= pad;
        hi += pad;

        let x = |i: usize| ml + plot_w * (i as f64 + 0.5) / n as f64;
        let y = |v: f64| mt + plot_h * (1.0 - (v - lo) / (hi - lo));

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        ));
        svg.push_str(&format!(
            "<rect x=\"{ml}\" y=\"{mt}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#444\"/>\n"
        ));

        let mut draw_series =
            |f: &dyn Fn(&SweepPoint) -> Option<(f64, Option<f64>)>, color: &str, name: &str| {
                let pts: Vec<(usize, f64, f64)> = self
                    .points
                    .iter()
                    .enumerate()
                    .filter_map(|(i, p)| f(p).map(|(m, c)| (i, m, c.unwrap_or(0.0))))
                    .collect();
                if pts.is_empty() {
                    return;
                }
                if pts.iter().any(|&(_, _, c)| c > 0.0) {
                    let mut band = String::from("<polygon points=\"");
                    for &(i, m, c) in &pts {
                        band.push_str(&format!("{:.2},{:.2} ", x(i), y(m + c)));
                    }
                    for &(i, m, c) in pts.iter().rev() {
                        band.push_str(&format!("{:.2},{:.2} ", x(i), y(m - c)));
                    }
                    band.push_str(&format!("\" fill=\"{color}\" opacity=\"0.15\"/>\n"));
                    svg.push_str(&band);
                }
                let mut line = String::from("<polyline points=\"");
                for &(i, m, _) in &pts {
                    line.push_str(&format!("{:.2},{:.2} ", x(i), y(m)));
                }
                line.push_str(&format!(
                    "\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n"
                ));
                svg.push_str(&line);
                for &(i, m, _) in &pts {
                    svg.push_str(&format!(
                        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                        x(i),
                        y(m)
                    ));
                }
                let _ = name;
            };

        draw_series(
            &|p| (!p.run_aucs().is_empty()).then_some((p.mean_auc, p.ci95)),
            "#1f77b4",
            "all",
        );
        draw_series(&|p| p.mean_exposed, "#ff7f0e", "exposed");
        draw_series(&|p| p.mean_unexposed, "#2ca02c", "unexposed");

        for (i, p) in self.points.iter().enumerate() {
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
                x(i),
                h - mb + 18.0,
                p.label
            ));
        }
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{v:.3}</text>\n",
                ml - 6.0,
                y(v) + 4.0
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            ml + plot_w / 2.0,
            h - 12.0,
            self.axis
        ));
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">AUC</text>\n",
            mt + plot_h / 2.0,
            mt + plot_h / 2.0
        ));
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, LabeledSample, SplitSpec};
    use crate::rng::standard_normal;

    fn benchmark_splits(seed: u64) -> DatasetSplits {
        let mut rng = seeded_rng(seed);
        let mut samples = Vec::new();
        for _ in 0..300 {
            samples.push(LabeledSample::normal(vec![
                standard_normal(&mut rng),
                standard_normal(&mut rng),
            ]));
        }
        for tag in ["near", "far"] {
            let shift = if tag == "near" { 1.5 } else { 4.0 };
            for _ in 0..40 {
                samples.push(LabeledSample::anomaly(
                    tag,
                    vec![
                        shift + 0.4 * standard_normal(&mut rng),
                        shift + 0.4 * standard_normal(&mut rng),
                    ],
                ));
            }
        }
        let ds = Dataset::new(samples, 2).unwrap();
        split(
            &ds,
            &SplitSpec::Fractions {
                train: 0.5,
                validation: 0.1,
                test: 0.4,
                seed: 1,
            },
        )
        .unwrap()
    }

    fn quick_base() -> DetectorConfig {
        let mut base = DetectorConfig::new(DetectorKind::RnvpOe);
        base.train.max_epochs = 3;
        base.train.batch_size = 64;
        base.train.anomaly_batch_size = 64;
        base.train.seed = 7;
        base.flow.hidden_width = 8;
        base.flow.coupling_layers = 2;
        base
    }

    #[test]
    fn job_count_and_labels() {
        let spec = SweepSpec {
            axis: SweepAxis::Lambda(vec![0.0, 0.1, 1.0, 10.0]),
            repetitions: 3,
        };
        let jobs = sweep_jobs(&spec, &quick_base()).unwrap();
        assert_eq!(jobs.len(), 12);
        assert_eq!(jobs[0].label, "0");
        assert_eq!(jobs[11].label, "10");
        // Seeds are all distinct.
        let mut seeds: Vec<u64> = jobs.iter().map(|j| j.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);
    }

    #[test]
    fn sweep_runs_and_aggregates() {
        let splits = benchmark_splits(3);
        let spec = SweepSpec {
            axis: SweepAxis::ExposedCount(vec![0, 8]),
            repetitions: 2,
        };
        let report = run_sweep(&spec, &quick_base(), &splits, 2).unwrap();
        assert_eq!(report.axis, "exposed_count");
        assert_eq!(report.points.len(), 2);
        for p in &report.points {
            assert_eq!(p.runs.len(), 2);
            assert_eq!(p.failed, 0);
            let aucs = p.run_aucs();
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            assert_eq!(p.mean_auc, mean);
            assert!(p.ci95.is_some());
        }
        let csv = report.to_csv();
        assert!(csv.starts_with("axis,value,"));
        assert_eq!(csv.lines().count(), 3);
        let svg = report.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn zero_count_point_equals_plain_flow() {
        let splits = benchmark_splits(5);
        let spec = SweepSpec {
            axis: SweepAxis::ExposedCount(vec![0]),
            repetitions: 1,
        };
        let report = run_sweep(&spec, &quick_base(), &splits, 1).unwrap();

        // Reproduce the same run with the plain detector and the same seed.
        let job_seed = report.points[0].runs[0].seed;
        let mut plain = quick_base();
        plain.kind = DetectorKind::Rnvp;
        plain.train.seed = job_seed;
        let (detector, _) = train_detector(
            &plain,
            2,
            &splits.train.normal_features(),
            &[],
            &splits.validation.normal_features(),
        )
        .unwrap();
        let scored = detector.score_dataset(&splits.test).unwrap();
        let plain_auc = auc(&scored).unwrap();
        assert_eq!(report.points[0].runs[0].auc, Some(plain_auc));
    }

    #[test]
    fn type_sweep_reports_exposed_and_unexposed() {
        let splits = benchmark_splits(7);
        let spec = SweepSpec {
            axis: SweepAxis::ExposedTypeCount(vec![1, 2]),
            repetitions: 2,
        };
        let report = run_sweep(&spec, &quick_base(), &splits, 2).unwrap();
        // With 1 of 2 types exposed both breakdowns exist.
        let p1 = &report.points[0];
        assert!(p1.mean_exposed.is_some());
        assert!(p1.mean_unexposed.is_some());
        // With all types exposed there is nothing unexposed.
        let p2 = &report.points[1];
        assert!(p2.mean_exposed.is_some());
        assert!(p2.mean_unexposed.is_none());
    }

    #[test]
    fn failed_runs_are_recorded_not_fatal() {
        let splits = benchmark_splits(9);
        let mut base = quick_base();
        base.kind = DetectorKind::Bclass;
        let spec = SweepSpec {
            axis: SweepAxis::ExposedCount(vec![0, 4]),
            repetitions: 1,
        };
        // Classifier training on zero anomalies is impossible; the zero
        // point records the failure and the other point still runs.
        let report = run_sweep(&spec, &base, &splits, 1).unwrap();
        assert_eq!(report.points[0].failed, 1);
        assert!(report.points[0].runs[0].error.is_some());
        assert_eq!(report.points[1].failed, 0);
        assert!(report.points[1].runs[0].auc.is_some());
    }

    #[test]
    fn reruns_are_bit_identical() {
        let splits = benchmark_splits(11);
        let spec = SweepSpec {
            axis: SweepAxis::Gamma(vec![10.0, 100.0]),
            repetitions: 2,
        };
        let a = run_sweep(&spec, &quick_base(), &splits, 2).unwrap();
        let b = run_sweep(&spec, &quick_base(), &splits, 1).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.runs, pb.runs);
        }
    }
}
