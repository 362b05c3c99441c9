//! Training, evaluation, STC benchmarking and end-to-end gradient checks.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asap::{plan_centers, FpsSeed, SequencePlan, StcStrategy};
use crate::autodiff::gradcheck::{check, sample_entries, GradCheckReport, FD_STEP};
use crate::autodiff::{Adam, ParamStore, Tape, Tensor};
use crate::data::{last_window_assignment, tiling_windows, windows, SequenceRecord, Window};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointFrame};
use crate::metrics::{compute_iou, ConfusionMatrix, IouReport};
use crate::model::{argmax_rows, Architecture, Network, WindowPlan};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of sequences (taken from the end) held out for validation.
    pub eval_split: f64,
    /// Stride between training windows.
    pub train_stride: usize,
    /// Also evaluate the training sequences after every epoch.
    pub track_train_miou: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            lr: 1e-3,
            seed: 0,
            eval_split: 0.0,
            train_stride: 1,
            track_train_miou: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean window loss over the epoch.
    pub loss: f64,
    pub train_miou: Option<f64>,
    pub val_miou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// Parameters of the epoch with the best validation mIoU; the last epoch
    /// without a validation set.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut s = String::from("epoch,loss,train_miou,val_miou\n");
        for e in &self.history {
            s.push_str(&format!(
                "{},{:.9},{},{}\n",
                e.epoch,
                e.loss,
                opt(e.train_miou),
                opt(e.val_miou)
            ));
        }
        s
    }

    /// Writes `best.ckpt`, `last.ckpt` and `train_log.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.best.save(dir.join("best.ckpt"))?;
        self.params.save(dir.join("last.ckpt"))?;
        let log = dir.join("train_log.csv");
        fs::write(&log, self.log_csv()).map_err(|e| Error::io(&log, e))
    }
}

/// Windows of a set of sequences with their cached geometry.
pub struct PreparedSet<'a> {
    seqs: &'a [SequenceRecord],
    items: Vec<(usize, Window, WindowPlan)>,
}

impl<'a> PreparedSet<'a> {
    /// One entry per window; `stride = None` tiles with the last-window rule.
    pub fn new(arch: &Architecture, seqs: &'a [SequenceRecord], stride: Option<usize>) -> Result<Self> {
        let t = arch.sequence_length();
        let mut items = Vec::new();
        for (si, s) in seqs.iter().enumerate() {
            let ws = match stride {
                Some(st) => windows(s.num_frames(), t, st)?,
                None => tiling_windows(s.num_frames(), t)?,
            };
            for w in ws {
                let frames = window_frames(s, w);
                let plan = arch.plan(&frames)?;
                items.push((si, w, plan));
            }
        }
        Ok(PreparedSet { seqs, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn window_frames(s: &SequenceRecord, w: Window) -> Vec<&PointFrame> {
    s.frames[w.range()].iter().collect()
}

/// Confusion matrix over every labeled point; each frame is predicted by
/// the last window containing it.
pub fn evaluate_prepared(arch: &Architecture, params: &ParamStore, set: &PreparedSet) -> Result<ConfusionMatrix> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut cm = ConfusionMatrix::new(arch.num_classes());
    for (si, s) in set.seqs.iter().enumerate() {
        let items: Vec<&(usize, Window, WindowPlan)> = set.items.iter().filter(|it| it.0 == si).collect();
        let ws: Vec<Window> = items.iter().map(|it| it.1).collect();
        let assign = last_window_assignment(s.num_frames(), &ws)?;
        let mut preds: Vec<Option<Vec<usize>>> = vec![None; s.num_frames()];
        for (wi, (_, w, plan)) in items.iter().enumerate() {
            if !assign.iter().any(|&(a, _)| a == wi) {
                continue;
            }
            let frames = window_frames(s, *w);
            let mut tape = Tape::new();
            let logits = arch.forward(&mut tape, params, &frames, plan)?;
            for (pos, y) in logits.iter().enumerate() {
                let f = w.start + pos;
                if assign[f] == (wi, pos) {
                    preds[f] = Some(argmax_rows(tape.value(*y)));
                }
            }
        }
        for (f, p) in s.frames.iter().zip(preds) {
            if let (Some(labels), Some(p)) = (&f.labels, p) {
                cm.add_all(labels, &p, None)?;
            }
        }
    }
    if cm.total() == 0 {
        return Err(Error::InvalidArgument("evaluation set has no labeled points".into()));
    }
    Ok(cm)
}

pub fn evaluate(arch: &Architecture, params: &ParamStore, seqs: &[SequenceRecord]) -> Result<(ConfusionMatrix, IouReport)> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    arch.check_data(seqs)?;
    arch.check_params(params)?;
    let set = PreparedSet::new(arch, seqs, None)?;
    let cm = evaluate_prepared(arch, params, &set)?;
    let report = compute_iou(&cm);
    Ok((cm, report))
}

/// `(train, validation)`; validation takes `round(n * fraction)` sequences
/// from the end, leaving at least one for training.
pub fn split_sequences(seqs: &[SequenceRecord], fraction: f64) -> Result<(&[SequenceRecord], &[SequenceRecord])> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("eval split {fraction} must be in [0, 1)")));
    }
    let n_val = ((seqs.len() as f64) * fraction).round() as usize;
    let n_val = n_val.min(seqs.len().saturating_sub(1));
    Ok(seqs.split_at(seqs.len() - n_val))
}

pub fn train(arch: &Architecture, seqs: &[SequenceRecord], opts: &TrainOptions) -> Result<TrainOutcome> {
    train_from(arch, seqs, opts, arch.init_params(opts.seed)?)
}

/// Trains starting from `params`.
pub fn train_from(
    arch: &Architecture,
    seqs: &[SequenceRecord],
    opts: &TrainOptions,
    mut params: ParamStore,
) -> Result<TrainOutcome> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("no training sequences".into()));
    }
    if !(opts.lr >= 0.0) || !opts.lr.is_finite() || opts.train_stride == 0 {
        return Err(Error::Config("lr must be finite and non-negative, stride positive".into()));
    }
    arch.check_data(seqs)?;
    arch.check_params(&params)?;
    let (train_seqs, val_seqs) = split_sequences(seqs, opts.eval_split)?;
    let train_set = PreparedSet::new(arch, train_seqs, Some(opts.train_stride))?;
    let val_set = if val_seqs.is_empty() {
        None
    } else {
        Some(PreparedSet::new(arch, val_seqs, None)?)
    };
    let train_eval = if opts.track_train_miou {
        Some(PreparedSet::new(arch, train_seqs, None)?)
    } else {
        None
    };

    let mut order_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    order_rng.set_stream(1);
    let mut adam = Adam::new(opts.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let (si, w, plan) = &train_set.items[i];
            let frames = window_frames(&train_seqs[*si], *w);
            let mut tape = Tape::new();
            let loss = arch.window_loss(&mut tape, &params, &frames, plan)?;
            loss_sum += tape.value(loss).item();
            tape.backward(loss)?;
            params.zero_grads();
            params.accumulate_grads(&tape)?;
            adam.step(&mut params)?;
        }
        let val_miou = match &val_set {
            Some(v) => Some(compute_iou(&evaluate_prepared(arch, &params, v)?).miou),
            None => None,
        };
        let train_miou = match &train_eval {
            Some(v) => Some(compute_iou(&evaluate_prepared(arch, &params, v)?).miou),
            None => None,
        };
        let score = val_miou.unwrap_or(f64::INFINITY);
        if score >= best_val {
            best_val = score;
            best = params.clone();
            best_epoch = epoch;
        }
        history.push(EpochLog {
            epoch,
            loss: loss_sum / order.len().max(1) as f64,
            train_miou,
            val_miou,
        });
    }
    Ok(TrainOutcome {
        params,
        best,
        best_epoch,
        history,
    })
}

/// Sampling cost and neighbourhood occupancy of one STC strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct StcBenchRow {
    pub strategy: StcStrategy,
    pub windows: usize,
    pub frames: usize,
    /// FPS runs per window at level 0.
    pub fps_calls_per_window: f64,
    pub seconds_per_frame: f64,
    /// Mean level-0 neighbourhood size per frame.
    pub mean_occupancy: f64,
    pub min_frame_occupancy: f64,
}

/// Times center sampling and correlation for both strategies over the tiled
/// windows of `seqs`. Only geometry is touched; no parameters are needed.
pub fn bench_stc(arch: &Architecture, seqs: &[SequenceRecord]) -> Result<Vec<StcBenchRow>> {
    let Network::Asap(base) = &arch.network else {
        return Err(Error::Config("bench-stc needs an asap architecture".into()));
    };
    let mut rows = Vec::new();
    for strategy in [StcStrategy::NearestMatch, StcStrategy::ConstantCenters] {
        let mut cfg = base.clone();
        cfg.stc = strategy;
        let mut level0 = cfg.clone();
        level0.levels.truncate(1);
        level0.fp_units.truncate(1);
        let (mut n_windows, mut n_frames, mut fps, mut secs) = (0, 0, 0usize, 0.0);
        let mut occ = Vec::new();
        for s in seqs {
            for w in tiling_windows(s.num_frames(), cfg.sequence_length)? {
                let coords: Vec<&[Point3]> = s.frames[w.range()].iter().map(|f| f.coords.as_slice()).collect();
                let t0 = Instant::now();
                let centers = plan_centers(&level0, &coords, FpsSeed::Canonical)?;
                secs += t0.elapsed().as_secs_f64();
                fps += centers.fps_calls;
                let plan = SequencePlan::build(&level0, &coords, FpsSeed::Canonical)?;
                occ.extend(plan.occupancy());
                n_windows += 1;
                n_frames += w.len;
            }
        }
        if n_windows == 0 {
            return Err(Error::InvalidArgument("no windows to benchmark".into()));
        }
        rows.push(StcBenchRow {
            strategy,
            windows: n_windows,
            frames: n_frames,
            fps_calls_per_window: fps as f64 / n_windows as f64,
            seconds_per_frame: secs / n_frames as f64,
            mean_occupancy: occ.iter().sum::<f64>() / occ.len() as f64,
            min_frame_occupancy: occ.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[StcBenchRow]) -> String {
    let mut s = String::from("strategy,windows,frames,fps_calls_per_window,seconds_per_frame,mean_occupancy,min_frame_occupancy\n");
    for r in rows {
        let name = match r.strategy {
            StcStrategy::NearestMatch => "nearest_match",
            StcStrategy::ConstantCenters => "constant_centers",
        };
        s.push_str(&format!(
            "{name},{},{},{:.3},{:.9},{:.4},{:.4}\n",
            r.windows, r.frames, r.fps_calls_per_window, r.seconds_per_frame, r.mean_occupancy, r.min_frame_occupancy
        ));
    }
    s
}

/// A random labeled window of `t` frames with `n` points each, spread so
/// that the architecture's radii see a few neighbours per center.
pub fn random_window(arch: &Architecture, n: usize, t: usize, seed: u64) -> Result<Vec<PointFrame>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = arch
        .file
        .levels
        .iter()
        .flat_map(|l| l.radii.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let side = r * (n as f64 / 4.0).sqrt();
    let c = arch.input_feature_width();
    let k = arch.num_classes();
    let base: Vec<Point3> = (0..n)
        .map(|_| [rng.gen::<f64>() * side, rng.gen::<f64>() * side, rng.gen::<f64>() * r])
        .collect();
    (0..t)
        .map(|f| {
            let coords = base
                .iter()
                .map(|p| [p[0] + rng.gen_range(-0.3..0.3) * r, p[1] + rng.gen_range(-0.3..0.3) * r, p[2]])
                .collect();
            let feats = Tensor::new(vec![n, c], (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
            PointFrame::new(coords, feats, Some(labels), f)
        })
        .collect()
}

/// Finite-difference check of the full window loss on a random instance,
/// over `count` randomly chosen parameter entries.
pub fn grad_check(arch: &Architecture, seed: u64, n: usize, t: usize, count: usize) -> Result<GradCheckReport> {
    let frames = random_window(arch, n, t, seed)?;
    let refs: Vec<&PointFrame> = frames.iter().collect();
    let plan = arch.plan(&refs)?;
    let params = arch.init_params(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let entries = sample_entries(&params, count, &mut rng);
    check(&params, &entries, FD_STEP, |tape, p| arch.window_loss(tape, p, &refs, &plan))
}
