//! Retrieval plus refinement: the final prediction is the retrieved bank
//! future plus the offsets predicted by the cross-modal network.

use std::fs;
use std::path::PathBuf;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{TrajectoryBank, UpdateOutcome};
use crate::config::{DataSource, ExperimentConfig, PredictorKind};
use crate::error::{Error, Result};
use crate::metrics::{ade, evaluate, ConstantVelocity, EvalReport, Predictor};
use crate::neural::{loss_target, loss_tra_graph, Adam, AdamConfig, LossChoice, ShenetParams};
use crate::report;
use crate::smoothing::ControlRule;
use crate::trajdata::{self, Dataset, Point, SceneRaster, Trajectory};

/// Bank plus refinement network.
#[derive(Clone, Debug)]
pub struct ShenetModel {
    pub bank: TrajectoryBank,
    pub params: ShenetParams,
}

impl ShenetModel {
    pub fn new(bank: TrajectoryBank, params: ShenetParams) -> Result<Self> {
        let c = params.config();
        if bank.t_pas() != c.t_pas || bank.t_fut() != c.t_fut {
            return Err(Error::config(format!(
                "bank windows are {}+{}, model expects {}+{}",
                bank.t_pas(),
                bank.t_fut(),
                c.t_pas,
                c.t_fut
            )));
        }
        Ok(Self { bank, params })
    }

    /// Top-`k` candidates, each shifted by the network's offsets, in
    /// retrieval order. Requires a frozen bank.
    pub fn predict(&self, past: &[Point], raster: &SceneRaster, k: usize) -> Result<Vec<Vec<Point>>> {
        if !self.bank.is_frozen() {
            return Err(Error::State("inference requires a frozen bank".into()));
        }
        self.refine(past, raster, k)
    }

    fn refine(&self, past: &[Point], raster: &SceneRaster, k: usize) -> Result<Vec<Vec<Point>>> {
        let hits = self.bank.topk_search(past, k)?;
        let offsets = self.params.offsets(past, raster)?;
        Ok(hits.into_iter().map(|h| add_offsets(&h.candidate_future, &offsets)).collect())
    }
}

fn add_offsets(candidate: &[Point], offsets: &[Point]) -> Vec<Point> {
    candidate.iter().zip(offsets).map(|(c, o)| [c[0] + o[0], c[1] + o[1]]).collect()
}

impl Predictor for ShenetModel {
    fn predict(&self, past: &[Point], scene: &SceneRaster, k: usize) -> Result<Vec<Vec<Point>>> {
        ShenetModel::predict(self, past, scene, k)
    }
}

/// The bank's top-`k` futures without refinement.
pub struct RawRetrieval<'a> {
    pub bank: &'a TrajectoryBank,
}

impl Predictor for RawRetrieval<'_> {
    fn predict(&self, past: &[Point], _scene: &SceneRaster, k: usize) -> Result<Vec<Vec<Point>>> {
        Ok(self.bank.topk_search(past, k)?.into_iter().map(|h| h.candidate_future).collect())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossChoice,
    pub cs_control: ControlRule,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            adam: AdamConfig::default(),
            loss: LossChoice::Mse,
            cs_control: ControlRule::MidTrajectoryPoint,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    /// Mean loss of the most recent epoch.
    pub running_loss: f64,
    pub bank_additions: usize,
    /// Number of re-clustering events.
    pub merges: usize,
    /// Raw additions consumed by re-clustering.
    pub merged_in: usize,
    /// Averaged entries produced by re-clustering.
    pub clusters_out: usize,
    /// Mean train ADE after the final epoch.
    pub converged_train_error: Option<f64>,
    pub epoch_losses: Vec<f64>,
    /// Per-step losses of the first epoch.
    pub first_epoch_steps: Vec<f64>,
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric { context, msg } => Error::Numeric { context: format!("training step {step}, {context}"), msg },
        other => other,
    }
}

/// Per-example training with interleaved bank updates. The bank must not be
/// frozen and stays unfrozen.
pub fn train(model: &mut ShenetModel, trainset: &[Trajectory], raster: &SceneRaster, opts: &TrainOptions) -> Result<TrainState> {
    if model.bank.is_frozen() {
        return Err(Error::State("training needs an unfrozen bank".into()));
    }
    if trainset.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut state = TrainState::default();
    if opts.epochs == 0 {
        return Ok(state);
    }
    let mut adam = Adam::new(&model.params, opts.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..trainset.len()).collect();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let traj = &trainset[i];
            let loss = train_step(model, &mut adam, traj, raster, opts, state.step).map_err(|e| at_step(e, state.step))?;
            if epoch == 0 {
                state.first_epoch_steps.push(loss);
            }
            total += loss;
            state.step += 1;

            let pred = model.refine(&traj.past(), raster, 1).map_err(|e| at_step(e, state.step))?.remove(0);
            match model.bank.maybe_update(traj, &pred)? {
                UpdateOutcome::Unchanged => {}
                UpdateOutcome::Added => state.bank_additions += 1,
                UpdateOutcome::AddedAndMerged { merged, clusters } => {
                    state.bank_additions += 1;
                    state.merges += 1;
                    state.merged_in += merged;
                    state.clusters_out += clusters;
                }
            }
        }
        state.epoch = epoch + 1;
        state.running_loss = total / trainset.len() as f64;
        state.epoch_losses.push(state.running_loss);
        info!("epoch {} loss {:.6} bank {}", state.epoch, state.running_loss, model.bank.len());
    }
    state.converged_train_error = Some(mean_train_error(model, trainset, raster)?);
    Ok(state)
}

fn train_step(
    model: &mut ShenetModel,
    adam: &mut Adam,
    traj: &Trajectory,
    raster: &SceneRaster,
    opts: &TrainOptions,
    step: usize,
) -> Result<f64> {
    let past = traj.past();
    let candidate = model.bank.search(&past)?.candidate_future;
    let target = loss_target(&traj.future(), opts.loss, opts.cs_control)?;
    let (loss, vars, grads) = {
        let mut s = crate::neural::Session::new(&model.params).with_dropout(opts.seed ^ (step as u64).wrapping_mul(0x9E37_79B9));
        let off = s.forward(&past, raster)?;
        let cand = s.constant_points(&candidate);
        let pred = s.graph.add(cand, off);
        let l = loss_tra_graph(&mut s.graph, pred, &target)?;
        let loss = s.value(l).data[0];
        if !loss.is_finite() {
            return Err(Error::Numeric { context: "loss".into(), msg: format!("loss is {loss}") });
        }
        let grads = s.graph.backward(l)?;
        (loss, s.param_vars().to_vec(), grads)
    };
    model.params.store_grads(&vars, &grads);
    adam.step(&mut model.params);
    Ok(loss)
}

/// Mean ADE of top-1 refined predictions over `set`.
pub fn mean_train_error(model: &ShenetModel, set: &[Trajectory], raster: &SceneRaster) -> Result<f64> {
    let mut total = 0.0;
    for t in set {
        let pred = model.refine(&t.past(), raster, 1)?.remove(0);
        total += ade(&pred, &t.future())?;
    }
    Ok(total / set.len() as f64)
}

/// Loaded train/test split and scene.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub scene: SceneRaster,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let d = &cfg.data;
    let mut dataset = match d.source {
        DataSource::Synthetic => {
            trajdata::generate_synthetic_scene(d.n_groups, d.per_group, d.noise_sigma, d.seed, d.t_pas, d.t_fut)?
        }
        DataSource::File => trajdata::load_trajectory_file(cfg.resolve(&d.path), d.t_pas, d.t_fut, d.stride)?,
    };
    let (train, test) = if !d.test_path.is_empty() {
        let test = trajdata::load_trajectory_file(cfg.resolve(&d.test_path), d.t_pas, d.t_fut, d.stride)?;
        (dataset.trajectories().to_vec(), test.trajectories().to_vec())
    } else {
        dataset.split_by_fraction(d.test_fraction, d.seed)?;
        (dataset.train(), dataset.test())
    };
    let scene = if d.scene_path.is_empty() { dataset.scene().clone() } else { SceneRaster::load(cfg.resolve(&d.scene_path))? };
    if train.is_empty() {
        return Err(Error::Data("no training trajectories".into()));
    }
    Ok(ExperimentData { train, test, scene })
}

fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        epochs: cfg.train.epochs,
        adam: cfg.adam(),
        loss: cfg.train.loss,
        cs_control: cfg.train.cs_control,
        seed: cfg.train.seed,
    }
}

/// Build a fresh bank and network and train them with update threshold
/// `theta`.
pub fn fit_with_theta(cfg: &ExperimentConfig, data: &ExperimentData, theta: f64) -> Result<(ShenetModel, TrainState)> {
    let bank = TrajectoryBank::build(&data.train, &cfg.bank_params(theta))?;
    let s = &data.scene;
    let params = ShenetParams::init(&cfg.model_config(s.n_cls(), s.h(), s.w(), cfg.data.t_fut), cfg.model.seed)?;
    let mut model = ShenetModel::new(bank, params)?;
    let state = train(&mut model, &data.train, s, &train_options(cfg))?;
    Ok((model, state))
}

/// Threshold from a pilot run with updates disabled:
/// `theta_fraction × converged training error`.
pub fn pilot_theta(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<(f64, f64)> {
    let (_, pilot) = fit_with_theta(cfg, data, f64::INFINITY)?;
    let err = pilot.converged_train_error.unwrap_or(f64::INFINITY);
    Ok((cfg.bank.theta_fraction * err, err))
}

/// Train with the configured threshold, or the pilot-derived one when unset.
/// Returns the model with its bank frozen.
pub fn fit(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<(ShenetModel, TrainState, f64)> {
    let theta = match cfg.bank.theta {
        Some(t) => t,
        None => {
            let (theta, err) = pilot_theta(cfg, data)?;
            info!("pilot training error {err:.6}, theta {theta:.6}");
            theta
        }
    };
    let (mut model, state) = fit_with_theta(cfg, data, theta)?;
    model.bank.freeze();
    Ok((model, state, theta))
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub state: Option<TrainState>,
    pub theta: Option<f64>,
    pub output_dir: PathBuf,
}

pub fn loss_curve_csv(state: &TrainState) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in state.epoch_losses.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    s
}

/// Load data, fit the configured predictor, evaluate on the test split and
/// write the bank, checkpoint, report CSV/JSON, loss curve and plot.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = load_data(cfg)?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out)?;
    let opts = cfg.eval_options();
    let k = cfg.eval.top_k;
    let (report, state, theta) = match cfg.train.predictor {
        PredictorKind::ConstantVelocity => {
            let r = evaluate(&data.test, &data.scene, &ConstantVelocity { t_fut: cfg.data.t_fut }, k, &opts)?;
            (r, None, None)
        }
        PredictorKind::RawRetrieval => {
            let bank = TrajectoryBank::build(&data.train, &cfg.bank_params(f64::INFINITY))?.frozen();
            bank.save(out.join("bank.json"))?;
            let r = evaluate(&data.test, &data.scene, &RawRetrieval { bank: &bank }, k, &opts)?;
            (r, None, None)
        }
        PredictorKind::Shenet => {
            let (model, state, theta) = fit(cfg, &data)?;
            model.bank.save(out.join("bank.json"))?;
            model.params.save(out.join("checkpoint.json"))?;
            fs::write(out.join("loss_curve.csv"), loss_curve_csv(&state))?;
            let r = evaluate(&data.test, &data.scene, &model, k, &opts)?;
            (r, Some(state), Some(theta))
        }
    };
    report.write(out.join("eval.csv"), out.join("eval.json"))?;
    fs::write(out.join("report.svg"), report::render_svg(&report, cfg.eval.report_samples))?;
    Ok(ExperimentOutcome { report, state, theta, output_dir: out })
}

/// Load a dataset for the CLI's data-only verbs.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = load_data(cfg)?;
    Dataset::from_train_test(
        Dataset::new(data.train, data.scene.clone())?,
        Dataset::new(data.test, data.scene)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::BankParams;
    use crate::neural::ModelConfig;
    use crate::trajdata::generate_synthetic_scene;

    fn small_model_config() -> ModelConfig {
        ModelConfig {
            attention: crate::neural::AttentionBlockConfig {
                d_model: 8,
                n_heads: 2,
                n_layers_traj: 1,
                n_layers_cross: 1,
                dropout: 0.0,
            },
            d_ff: 8,
            ..ModelConfig::default()
        }
    }

    fn setup(n: usize, theta: f64, beta: usize) -> (ShenetModel, Vec<Trajectory>, SceneRaster) {
        let ds = generate_synthetic_scene(3, n, 0.05, 1, 8, 12).unwrap();
        let bank = TrajectoryBank::build(ds.trajectories(), &BankParams { k: 3, theta, beta, ..BankParams::default() }).unwrap();
        let params = ShenetParams::init(&small_model_config(), 2).unwrap();
        (ShenetModel::new(bank, params).unwrap(), ds.trajectories().to_vec(), ds.scene().clone())
    }

    fn zero_head(p: &mut ShenetParams) {
        for name in ["head.out.weight", "head.out.bias"] {
            p.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn unfrozen_bank_rejected_for_inference() {
        let (model, trajs, scene) = setup(4, f64::INFINITY, 10);
        assert!(matches!(model.predict(&trajs[0].past(), &scene, 1), Err(Error::State(_))));
    }

    #[test]
    fn zero_head_returns_retrieved_future() {
        let (mut model, trajs, scene) = setup(4, f64::INFINITY, 10);
        zero_head(&mut model.params);
        model.bank.freeze();
        let past = trajs[5].past();
        let preds = model.predict(&past, &scene, 3).unwrap();
        let hits = model.bank.topk_search(&past, 3).unwrap();
        assert_eq!(preds.len(), 3);
        for (p, h) in preds.iter().zip(&hits) {
            assert_eq!(p, &h.candidate_future);
        }
    }

    #[test]
    fn perfect_retrieval_gives_zero_ade() {
        let (mut model, trajs, scene) = setup(4, f64::INFINITY, 10);
        zero_head(&mut model.params);
        let entries = vec![crate::bank::BankEntry {
            past: trajs[0].past(),
            future: trajs[0].future(),
            origin: crate::bank::EntryOrigin::InitialCluster,
        }];
        model.bank = TrajectoryBank::from_entries(entries, &BankParams::default()).unwrap().frozen();
        let p = model.predict(&trajs[0].past(), &scene, 1).unwrap();
        assert_eq!(ade(&p[0], &trajs[0].future()).unwrap(), 0.0);
    }

    #[test]
    fn prediction_minus_candidate_is_offset() {
        let (mut model, trajs, scene) = setup(4, f64::INFINITY, 10);
        model.bank.freeze();
        let past = trajs[2].past();
        let off = model.params.offsets(&past, &scene).unwrap();
        let preds = model.predict(&past, &scene, 2).unwrap();
        for (p, h) in preds.iter().zip(model.bank.topk_search(&past, 2).unwrap()) {
            for ((a, c), o) in p.iter().zip(&h.candidate_future).zip(&off) {
                assert!((a[0] - c[0] - o[0]).abs() < 1e-12 && (a[1] - c[1] - o[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (mut model, trajs, scene) = setup(4, f64::INFINITY, 10);
        let before = model.params.flat();
        let state = train(&mut model, &trajs, &scene, &TrainOptions { epochs: 0, ..TrainOptions::default() }).unwrap();
        assert_eq!(state, TrainState::default());
        assert_eq!(model.params.flat(), before);
        assert!(matches!(train(&mut model, &[], &scene, &TrainOptions::default()), Err(Error::Data(_))));
    }

    #[test]
    fn single_example_loss_decreases() {
        let (mut model, trajs, scene) = setup(4, f64::INFINITY, 10);
        let one = vec![trajs[7].clone()];
        let mut losses = Vec::new();
        for _ in 0..10 {
            let s = train(&mut model, &one, &scene, &TrainOptions { epochs: 1, ..TrainOptions::default() }).unwrap();
            losses.push(s.running_loss);
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn theta_zero_adds_every_example() {
        let (mut model, trajs, scene) = setup(4, 0.0, usize::MAX);
        let before = model.bank.len();
        let state = train(&mut model, &trajs, &scene, &TrainOptions { epochs: 2, ..TrainOptions::default() }).unwrap();
        assert_eq!(state.bank_additions, 2 * trajs.len());
        assert_eq!(model.bank.len(), before + 2 * trajs.len());
        assert_eq!(state.merges, 0);
    }

    #[test]
    fn bank_size_accounting_with_merges() {
        let (mut model, trajs, scene) = setup(5, 0.0, 4);
        let before = model.bank.len();
        let state = train(&mut model, &trajs, &scene, &TrainOptions { epochs: 1, ..TrainOptions::default() }).unwrap();
        assert!(state.merges > 0);
        assert_eq!(model.bank.len(), before + state.bank_additions - (state.merged_in - state.clusters_out));
    }

    #[test]
    fn cs_loss_matches_mse_on_straight_data() {
        // zero-noise straight group: smoothed targets equal the raw ones
        let ds = generate_synthetic_scene(1, 6, 0.0, 3, 8, 12).unwrap();
        let trajs = ds.trajectories().to_vec();
        let run = |loss| {
            let bank = TrajectoryBank::build(&trajs, &BankParams { k: 1, ..BankParams::default() }).unwrap();
            let mut m = ShenetModel::new(bank, ShenetParams::init(&small_model_config(), 4).unwrap()).unwrap();
            let s = train(&mut m, &trajs, ds.scene(), &TrainOptions { epochs: 2, loss, ..TrainOptions::default() }).unwrap();
            (s.first_epoch_steps, m.params.flat())
        };
        let (a, pa) = run(LossChoice::Mse);
        let (b, pb) = run(LossChoice::Cs);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
        assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-6));
    }

    #[test]
    fn evaluation_is_repeatable_after_freeze() {
        let (mut model, trajs, scene) = setup(4, f64::INFINITY, 10);
        train(&mut model, &trajs, &scene, &TrainOptions { epochs: 1, ..TrainOptions::default() }).unwrap();
        model.bank.freeze();
        let opts = crate::metrics::EvalOptions::default();
        let a = evaluate(&trajs, &scene, &model, 2, &opts).unwrap();
        let b = evaluate(&trajs, &scene, &model, 2, &opts).unwrap();
        assert_eq!(a, b);
    }
}
