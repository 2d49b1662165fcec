//! Episode execution: environments, policies, suites and trajectory filtering.

mod sidecar;
mod synthetic;
mod wire;

pub use sidecar::{read_sidecar, write_sidecar, SidecarError, SIDECAR_MAGIC};
pub use synthetic::{SyntheticEnv, SyntheticEnvModel, SyntheticError};
pub use wire::{Message, WireConnection, WireEnvironment, WirePolicy, PROTOCOL_VERSION};

use crate::canon;
use crate::image::{corrupt, mask_view, Image, NoiseParams};
use crate::patch::ScenePatch;
use crate::perturbation::{Dimension, PerturbationParams, PerturbationVector};
use crate::rng::SeedKey;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const ACTION_DIM: usize = 7;
pub const DEFAULT_MAX_STEPS: u32 = 600;

/// Six end-effector pose deltas followed by the gripper command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Action([f64; ACTION_DIM]);

impl Action {
    pub fn new(values: [f64; ACTION_DIM]) -> Result<Self, HarnessError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(HarnessError::Protocol(format!("non-finite action {values:?}")))
        }
    }

    pub fn zero() -> Self {
        Self([0.0; ACTION_DIM])
    }

    pub fn values(&self) -> &[f64; ACTION_DIM] {
        &self.0
    }

    pub fn pose(&self) -> &[f64] {
        &self.0[..6]
    }

    pub fn gripper(&self) -> f64 {
        self.0[6]
    }
}

impl TryFrom<Vec<f64>> for Action {
    type Error = HarnessError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; ACTION_DIM] = v
            .try_into()
            .map_err(|v: Vec<f64>| HarnessError::Protocol(format!("action has {} values, expected 7", v.len())))?;
        Self::new(arr)
    }
}

impl From<Action> for Vec<f64> {
    fn from(a: Action) -> Vec<f64> {
        a.0.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub views: BTreeMap<String, Image>,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: Vec<f64>,
    pub action: Action,
}

/// Everything an environment needs to set up one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTask {
    pub task_id: String,
    pub instruction: String,
    pub scene_patch: ScenePatch,
    pub perturbation: PerturbationVector,
}

impl EpisodeTask {
    pub fn new(task_id: impl Into<String>, perturbation: PerturbationVector) -> Self {
        Self {
            task_id: task_id.into(),
            instruction: String::new(),
            scene_patch: ScenePatch::default(),
            perturbation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub trial: u32,
    pub perturbation: PerturbationVector,
    pub success: bool,
    pub steps: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("no message within {0:?}")]
    Timeout(std::time::Duration),
    #[error("connection closed")]
    Closed,
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("environment: {0}")]
    Env(String),
    #[error("trials_per_task must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Canon(#[from] canon::CanonError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

/// A failed episode together with what was recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("episode {}#{} failed after {} steps: {error}", partial.task_id, partial.trial, partial.steps)]
pub struct TransportFailure {
    pub partial: EpisodeRecord,
    #[source]
    pub error: HarnessError,
}

pub enum Step {
    Observation(Observation),
    Done { success: bool },
}

pub trait Environment {
    fn reset(&mut self, task: &EpisodeTask, seed: u64) -> Result<Observation, HarnessError>;
    fn step(&mut self, action: &Action) -> Result<Step, HarnessError>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self, task: &EpisodeTask, seed: u64) -> Result<Observation, HarnessError> {
        (**self).reset(task, seed)
    }
    fn step(&mut self, action: &Action) -> Result<Step, HarnessError> {
        (**self).step(action)
    }
}

pub trait Policy {
    fn reset(&mut self, _task: &EpisodeTask) -> Result<(), HarnessError> {
        Ok(())
    }
    fn act(&mut self, obs: &Observation) -> Result<Action, HarnessError>;
    fn finish(&mut self, _success: bool, _steps: u32) -> Result<(), HarnessError> {
        Ok(())
    }
}

/// Always outputs the zero action.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _obs: &Observation) -> Result<Action, HarnessError> {
        Ok(Action::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub max_steps: u32,
    pub record_trajectory: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            record_trajectory: false,
        }
    }
}

/// Runs one episode until the environment reports completion or
/// `max_steps` actions have been applied.
pub fn run_episode(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    task: &EpisodeTask,
    config: EpisodeConfig,
    seed: u64,
) -> Result<EpisodeRecord, TransportFailure> {
    let mut record = EpisodeRecord {
        task_id: task.task_id.clone(),
        model: String::new(),
        trial: 0,
        perturbation: task.perturbation.clone(),
        success: false,
        steps: 0,
        seed,
        trajectory: config.record_trajectory.then(Vec::new),
        error: None,
    };
    let result = (|| {
        policy.reset(task)?;
        let mut obs = env.reset(task, seed)?;
        while record.steps < config.max_steps {
            let action = policy.act(&obs)?;
            if let Some(t) = record.trajectory.as_mut() {
                t.push(TrajectoryStep {
                    state: obs.state.clone(),
                    action,
                });
            }
            record.steps += 1;
            match env.step(&action)? {
                Step::Observation(next) => obs = next,
                Step::Done { success } => {
                    record.success = success;
                    break;
                }
            }
        }
        policy.finish(record.success, record.steps)
    })();
    match result {
        Ok(()) => Ok(record),
        Err(error) => {
            record.success = false;
            record.error = Some(error.to_string());
            Err(TransportFailure { partial: record, error })
        }
    }
}

/// Applies a task's sensor-noise spec and a fixed set of blacked-out views
/// to every observation an environment produces.
pub struct ObservationFilter<E> {
    inner: E,
    black: BTreeSet<String>,
    noise: Option<NoiseParams>,
    seed: u64,
    frame: u64,
}

impl<E: Environment> ObservationFilter<E> {
    pub fn new(inner: E, black: BTreeSet<String>) -> Self {
        Self {
            inner,
            black,
            noise: None,
            seed: 0,
            frame: 0,
        }
    }

    fn filter(&mut self, obs: Observation) -> Result<Observation, HarnessError> {
        let mut views = obs.views;
        if let Some(p) = &self.noise {
            let frame_seed = SeedKey::new(self.seed).str("frame").u64(self.frame).finish();
            for img in views.values_mut() {
                *img = corrupt(img, p, frame_seed).map_err(|e| HarnessError::Env(e.to_string()))?;
            }
        }
        self.frame += 1;
        if !self.black.is_empty() {
            views = mask_view(&views, &self.black).map_err(|e| HarnessError::Env(e.to_string()))?;
        }
        Ok(Observation {
            views,
            state: obs.state,
        })
    }
}

impl<E: Environment> Environment for ObservationFilter<E> {
    fn reset(&mut self, task: &EpisodeTask, seed: u64) -> Result<Observation, HarnessError> {
        self.noise = task.perturbation.spec(Dimension::Noise).and_then(|s| match &s.params {
            PerturbationParams::Noise(p) => Some(p.clone()),
            _ => None,
        });
        self.seed = seed;
        self.frame = 0;
        let obs = self.inner.reset(task, seed)?;
        self.filter(obs)
    }

    fn step(&mut self, action: &Action) -> Result<Step, HarnessError> {
        match self.inner.step(action)? {
            Step::Observation(obs) => Ok(Step::Observation(self.filter(obs)?)),
            done => Ok(done),
        }
    }
}

/// Seed of trial `trial` of `task_id` under `base_seed`.
pub fn trial_seed(base_seed: u64, task_id: &str, trial: u32) -> u64 {
    SeedKey::new(base_seed)
        .str("trial")
        .str(task_id)
        .u64(u64::from(trial))
        .finish()
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub trials_per_task: u32,
    pub parallelism: usize,
    pub episode: EpisodeConfig,
    pub base_seed: u64,
    pub model: String,
}

/// Runs every `(task, trial)` pair on a bounded worker pool. Records come back
/// in task order then trial order, whatever the parallelism. Transport
/// failures become failed records carrying the error text.
pub fn run_suite<E, P>(
    tasks: &[EpisodeTask],
    config: &SuiteConfig,
    make_env: E,
    make_policy: P,
) -> Result<Vec<EpisodeRecord>, HarnessError>
where
    E: Fn(&EpisodeTask) -> Result<Box<dyn Environment>, HarnessError> + Sync,
    P: Fn(&EpisodeTask) -> Result<Box<dyn Policy>, HarnessError> + Sync,
{
    use rayon::prelude::*;
    if config.trials_per_task == 0 {
        return Err(HarnessError::NoTrials);
    }
    let jobs: Vec<(usize, u32)> = (0..tasks.len())
        .flat_map(|t| (0..config.trials_per_task).map(move |k| (t, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Env(e.to_string()))?;
    let run_one = |&(t, trial): &(usize, u32)| -> EpisodeRecord {
        let task = &tasks[t];
        let seed = trial_seed(config.base_seed, &task.task_id, trial);
        let outcome = make_env(task).and_then(|env| make_policy(task).map(|p| (env, p)));
        let mut record = match outcome {
            Ok((mut env, mut policy)) => match run_episode(env.as_mut(), policy.as_mut(), task, config.episode, seed) {
                Ok(r) => r,
                Err(f) => {
                    log::warn!("{f}");
                    f.partial
                }
            },
            Err(e) => EpisodeRecord {
                task_id: task.task_id.clone(),
                model: String::new(),
                trial,
                perturbation: task.perturbation.clone(),
                success: false,
                steps: 0,
                seed,
                trajectory: None,
                error: Some(e.to_string()),
            },
        };
        record.trial = trial;
        record.model = config.model.clone();
        record
    };
    Ok(pool.install(|| jobs.par_iter().map(run_one).collect()))
}

fn is_noop_component(d: f64, eps: f64) -> bool {
    if eps == 0.0 {
        d == 0.0
    } else {
        d.abs() < eps
    }
}

/// Keeps successful episodes and drops no-op steps from their trajectories.
///
/// A step is a no-op when every pose delta is below `noop_epsilon` in
/// magnitude (exactly zero when the epsilon is zero) and the gripper command
/// equals the previous step's.
pub fn filter_trajectories(records: &[EpisodeRecord], noop_epsilon: f64) -> Vec<EpisodeRecord> {
    records
        .iter()
        .filter(|r| r.success)
        .map(|r| {
            let mut out = r.clone();
            if let Some(traj) = &r.trajectory {
                let mut prev_gripper = traj.first().map(|s| s.action.gripper());
                let kept = traj
                    .iter()
                    .filter(|s| {
                        let same_gripper = prev_gripper == Some(s.action.gripper());
                        prev_gripper = Some(s.action.gripper());
                        !(same_gripper && s.action.pose().iter().all(|d| is_noop_component(*d, noop_epsilon)))
                    })
                    .cloned()
                    .collect();
                out.trajectory = Some(kept);
            }
            out
        })
        .collect()
}

/// One suite's records as persisted on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteDocument {
    pub records: Vec<EpisodeRecord>,
}

/// Writes `<stem>.records` and, when any record has a trajectory, the
/// columnar sidecar `<stem>.traj` (trajectories are then left out of the text).
pub fn save_suite(path: &Path, records: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let has_traj = records.iter().any(|r| r.trajectory.is_some());
    let doc = SuiteDocument {
        records: records
            .iter()
            .map(|r| EpisodeRecord {
                trajectory: None,
                ..r.clone()
            })
            .collect(),
    };
    canon::write_file(path, &doc)?;
    if has_traj {
        let bytes = write_sidecar(records)?;
        std::fs::write(path.with_extension("traj"), bytes)?;
    }
    Ok(())
}

pub fn load_suite(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let doc: SuiteDocument = canon::read_file(path)?;
    let mut records = doc.records;
    let side = path.with_extension("traj");
    if side.exists() {
        let trajs = read_sidecar(&std::fs::read(&side)?)?;
        if trajs.len() != records.len() {
            return Err(SidecarError::Mismatch {
                records: records.len(),
                sidecar: trajs.len(),
            }
            .into());
        }
        for (r, t) in records.iter_mut().zip(trajs) {
            r.trajectory = t;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{params_for, NoiseKind};
    use crate::perturbation::{PerturbationSpec, SeverityLevel};

    /// Two fixed views, done after two steps.
    struct Camera(u32);

    impl Camera {
        fn obs() -> Observation {
            let data: Vec<u8> = (0..16 * 16 * 3).map(|i| (i * 7 % 251) as u8).collect();
            let img = Image::new(16, 16, data).unwrap();
            let mut views = BTreeMap::new();
            views.insert("agentview".to_string(), img.clone());
            views.insert("wrist".to_string(), img);
            Observation {
                views,
                state: vec![0.0],
            }
        }
    }

    impl Environment for Camera {
        fn reset(&mut self, _task: &EpisodeTask, _seed: u64) -> Result<Observation, HarnessError> {
            self.0 = 0;
            Ok(Self::obs())
        }
        fn step(&mut self, _action: &Action) -> Result<Step, HarnessError> {
            self.0 += 1;
            Ok(if self.0 == 2 {
                Step::Done { success: true }
            } else {
                Step::Observation(Self::obs())
            })
        }
    }

    #[test]
    fn observation_filter_applies_noise_and_masks() {
        let p = params_for(NoiseKind::GaussianBlur, SeverityLevel::new(3).unwrap());
        let spec = PerturbationSpec {
            dimension: Dimension::Noise,
            sub_dimension: None,
            level: Some(p.level),
            params: PerturbationParams::Noise(p.clone()),
            seed: 0,
        };
        let task = EpisodeTask::new("n", PerturbationVector::new(vec![spec]).unwrap());
        let black: BTreeSet<String> = ["wrist".to_string()].into();
        let mut env = ObservationFilter::new(Camera(0), black);
        let obs = env.reset(&task, 11).unwrap();
        let raw = Camera::obs().views["agentview"].clone();
        let frame_seed = SeedKey::new(11).str("frame").u64(0).finish();
        assert_eq!(obs.views["agentview"], corrupt(&raw, &p, frame_seed).unwrap());
        assert_ne!(obs.views["agentview"], raw);
        assert!(obs.views["wrist"].data().iter().all(|&b| b == 0));

        let clean = EpisodeTask::new("c", PerturbationVector::unperturbed());
        let mut env = ObservationFilter::new(Camera(0), BTreeSet::new());
        assert_eq!(env.reset(&clean, 11).unwrap(), Camera::obs());
    }

    fn act(pose: [f64; 6], g: f64) -> Action {
        Action::new([pose[0], pose[1], pose[2], pose[3], pose[4], pose[5], g]).unwrap()
    }

    fn record(success: bool, traj: Vec<Action>) -> EpisodeRecord {
        EpisodeRecord {
            task_id: "t".into(),
            model: String::new(),
            trial: 0,
            perturbation: PerturbationVector::unperturbed(),
            success,
            steps: traj.len() as u32,
            seed: 0,
            trajectory: Some(
                traj.into_iter()
                    .enumerate()
                    .map(|(i, a)| TrajectoryStep {
                        state: vec![i as f64],
                        action: a,
                    })
                    .collect(),
            ),
            error: None,
        }
    }

    #[test]
    fn certain_outcomes() {
        let task = EpisodeTask::new("t", PerturbationVector::unperturbed());
        let cfg = EpisodeConfig {
            max_steps: 40,
            record_trajectory: false,
        };
        let mut env = SyntheticEnv::new(SyntheticEnvModel::constant(1.0).unwrap());
        let r = run_episode(&mut env, &mut ZeroPolicy, &task, cfg, 3).unwrap();
        assert!(r.success);
        assert_eq!(r.steps, 1);
        let mut env = SyntheticEnv::new(SyntheticEnvModel::constant(0.0).unwrap());
        let r = run_episode(&mut env, &mut ZeroPolicy, &task, cfg, 3).unwrap();
        assert!(!r.success);
        assert_eq!(r.steps, 40);
    }

    #[test]
    fn suite_is_ordered_and_parallelism_independent() {
        let tasks: Vec<EpisodeTask> = ["a", "b", "c"]
            .iter()
            .map(|id| EpisodeTask::new(*id, PerturbationVector::from_dimensions(&[Dimension::Light]).unwrap()))
            .collect();
        let model = SyntheticEnvModel::constant(0.5).unwrap();
        let run = |parallelism| {
            let cfg = SuiteConfig {
                trials_per_task: 2,
                parallelism,
                episode: EpisodeConfig {
                    max_steps: 5,
                    record_trajectory: true,
                },
                base_seed: 11,
                model: "m".into(),
            };
            run_suite(
                &tasks,
                &cfg,
                |_| Ok(Box::new(SyntheticEnv::new(model.clone())) as Box<dyn Environment>),
                |_| Ok(Box::new(ZeroPolicy) as Box<dyn Policy>),
            )
            .unwrap()
        };
        let one = run(1);
        assert_eq!(one.len(), 6);
        let order: Vec<(String, u32)> = one.iter().map(|r| (r.task_id.clone(), r.trial)).collect();
        assert_eq!(order[0], ("a".to_string(), 0));
        assert_eq!(order[5], ("c".to_string(), 1));
        let eight = run(8);
        assert_eq!(canon::to_string(&one).unwrap(), canon::to_string(&eight).unwrap());
    }

    #[test]
    fn zero_trials_is_rejected() {
        let cfg = SuiteConfig {
            trials_per_task: 0,
            parallelism: 1,
            episode: EpisodeConfig::default(),
            base_seed: 0,
            model: String::new(),
        };
        let r = run_suite(
            &[],
            &cfg,
            |_| Ok(Box::new(SyntheticEnv::new(SyntheticEnvModel::constant(1.0).unwrap())) as Box<dyn Environment>),
            |_| Ok(Box::new(ZeroPolicy) as Box<dyn Policy>),
        );
        assert!(matches!(r, Err(HarnessError::NoTrials)));
    }

    #[test]
    fn noop_filtering() {
        let z = [0.0; 6];
        let m = [0.1, 0.0, 0.0, 0.0, 0.0, 0.0];
        let traj = vec![
            act(m, -1.0),
            act(z, -1.0),
            act(m, -1.0),
            act([1e-4, 0.0, 0.0, 0.0, 0.0, 0.0], -1.0),
            act(m, 1.0),
            act(z, 1.0),
            act(m, 1.0),
            act(m, 1.0),
            act(z, -1.0),
            act(m, -1.0),
        ];
        let out = filter_trajectories(&[record(true, traj.clone()), record(false, traj.clone())], 1e-3);
        assert_eq!(out.len(), 1);
        let kept = out[0].trajectory.as_ref().unwrap();
        assert_eq!(kept.len(), 7);
        // Surviving steps keep their original order.
        let states: Vec<f64> = kept.iter().map(|s| s.state[0]).collect();
        assert_eq!(states, [0.0, 2.0, 4.0, 6.0, 7.0, 8.0, 9.0]);

        let exact = filter_trajectories(&[record(true, traj)], 0.0);
        assert_eq!(exact[0].trajectory.as_ref().unwrap().len(), 8);
        assert!(filter_trajectories(&[record(false, vec![act(z, 0.0)])], 1.0).is_empty());
    }

    #[test]
    fn suite_files_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.records");
        let mut plain = record(true, vec![]);
        plain.trajectory = None;
        let records = vec![record(true, vec![act([0.5; 6], 1.0), act([0.25; 6], -1.0)]), plain];
        save_suite(&path, &records).unwrap();
        assert!(path.with_extension("traj").exists());
        assert_eq!(load_suite(&path).unwrap(), records);
    }

    #[test]
    fn action_documents_are_checked() {
        assert!(serde_json::from_str::<Action>("[1,2,3]").is_err());
        assert!(serde_json::from_str::<Action>("[0,0,0,0,0,0,1]").is_ok());
    }
}
