mod common;

use perturbench_core::builder::{stratify, ModelOutcomes};
use perturbench_core::harness::{
    load_suite, run_episode, run_suite, save_suite, EpisodeConfig, EpisodeTask, HarnessError, Message, Observation,
    SuiteConfig, SyntheticEnv, SyntheticEnvModel, WireConnection, WireEnvironment, WirePolicy, ZeroPolicy,
};
use perturbench_core::image::Image;
use perturbench_core::perturbation::Dimension;
use perturbench_core::report::{analyze, level_curves};
use perturbench_core::rng::SeedKey;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::Command;
use std::sync::mpsc;
use std::time::{Duration, Instant};

fn suite_config(trials: u32, parallelism: usize) -> SuiteConfig {
    SuiteConfig {
        trials_per_task: trials,
        parallelism,
        episode: EpisodeConfig::default(),
        base_seed: 17,
        model: "synthetic".into(),
    }
}

fn synthetic(
    model: &SyntheticEnvModel,
) -> impl Fn(&EpisodeTask) -> Result<Box<dyn perturbench_core::harness::Environment>, HarnessError> + Sync + '_ {
    move |_| Ok(Box::new(SyntheticEnv::new(model.clone())))
}

fn zero(_: &EpisodeTask) -> Result<Box<dyn perturbench_core::harness::Policy>, HarnessError> {
    Ok(Box::new(ZeroPolicy))
}

#[test]
fn suites_do_not_depend_on_parallelism() {
    let model = SyntheticEnvModel::constant(0.75).unwrap();
    let tasks: Vec<EpisodeTask> = (0..40)
        .map(|k| EpisodeTask::new(format!("task_{k}"), common::vector(&[])))
        .collect();
    let serial = run_suite(&tasks, &suite_config(100, 1), synthetic(&model), zero).unwrap();
    let parallel = run_suite(&tasks, &suite_config(100, 8), synthetic(&model), zero).unwrap();
    assert_eq!(serial, parallel);
    let rate = serial.iter().filter(|r| r.success).count() as f64 / serial.len() as f64;
    assert!((rate - 0.75).abs() <= 0.03, "rate {rate}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.json");
    save_suite(&path, &serial).unwrap();
    assert_eq!(load_suite(&path).unwrap(), serial);
}

#[test]
fn negative_interactions_give_negative_gaps() {
    let dims = [
        Dimension::Camera,
        Dimension::Robot,
        Dimension::Language,
        Dimension::Light,
        Dimension::Background,
        Dimension::Layout,
    ];
    let model = SyntheticEnvModel::Pairwise {
        base: 0.95,
        effects: dims.iter().map(|d| (*d, -0.15)).collect(),
        interactions: dims
            .iter()
            .enumerate()
            .flat_map(|(k, a)| dims[k + 1..].iter().map(move |b| ((*a, *b), -0.1)))
            .collect(),
    };
    let mut conditions = vec![vec![]];
    conditions.extend(dims.iter().map(|d| vec![*d]));
    for (k, a) in dims.iter().enumerate() {
        conditions.extend(dims[k + 1..].iter().map(|b| vec![*a, *b]));
    }
    let tasks: Vec<EpisodeTask> = conditions
        .iter()
        .enumerate()
        .map(|(k, c)| EpisodeTask::new(format!("cond_{k}"), common::vector(c)))
        .collect();
    let records = run_suite(&tasks, &suite_config(1000, 8), synthetic(&model), zero).unwrap();
    let analysis = analyze(&records, &dims).unwrap();
    assert_eq!(analysis.len(), 1);
    let a = &analysis[0];
    assert_eq!(a.pairs.len(), 15);
    for p in &a.pairs {
        assert!(p.gap.delta < 0.0, "{} x {}: {}", p.dim_i, p.dim_j, p.gap.delta);
    }
    for i in 0..6 {
        for j in 0..6 {
            let g = a.heatmap.gap[i][j];
            assert_eq!(g.is_none(), i == j);
            assert!(g.is_none_or(|g| g < 0.0));
        }
    }
}

#[test]
fn harder_strata_have_lower_rates() {
    // Variant difficulty d in 0..5; reference model k solves it when k >= d.
    let mut rng = SeedKey::new(4).rng();
    let difficulty: Vec<usize> = (0..100).map(|_| rng.index(5)).collect();
    let mut outcomes = ModelOutcomes::new();
    for k in 0..4 {
        let solved = difficulty
            .iter()
            .enumerate()
            .map(|(v, d)| (format!("v{v}"), k + 1 > *d))
            .collect();
        outcomes.insert(format!("ref_{k}"), solved);
    }
    let strata = stratify(&outcomes, 4).unwrap();
    let mut records = Vec::new();
    for (v, d) in difficulty.iter().enumerate() {
        let wins = 40 - 8 * *d as u64;
        records.extend(common::records(
            "probe",
            &format!("v{v}"),
            &[Dimension::Light],
            wins,
            40,
        ));
    }
    let curves = level_curves(&records, &strata).unwrap();
    assert_eq!(curves.len(), 1);
    let rates: Vec<f64> = curves[0].rates.iter().flatten().map(|c| c.percent).collect();
    assert!(rates.len() >= 4);
    assert!(rates.windows(2).all(|w| w[1] < w[0]), "{rates:?}");
}

fn frame() -> Image {
    let data = (0..16 * 12 * 3).map(|i| (i * 7 % 251) as u8).collect();
    Image::new(16, 12, data).unwrap()
}

fn read_message(reader: &mut impl BufRead) -> Option<Message> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    Some(serde_json::from_str(&line).unwrap())
}

fn send(stream: &mut TcpStream, m: &Message) {
    let mut line = serde_json::to_vec(m).unwrap();
    line.push(b'\n');
    stream.write_all(&line).unwrap();
}

/// Simulator stub: answers three actions, then reports success.
fn serve_env(listener: TcpListener, sent: mpsc::Sender<BTreeMap<String, String>>) {
    let (mut stream, _) = listener.accept().unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut steps = 0;
    while let Some(m) = read_message(&mut reader) {
        let reply = match m {
            Message::Hello { version } => Message::Hello { version },
            Message::Reset { .. } | Message::Action { .. } => {
                if matches!(m, Message::Action { .. }) {
                    steps += 1;
                }
                if steps == 3 {
                    Message::Done { success: true, steps }
                } else {
                    let mut views = BTreeMap::new();
                    views.insert("agentview".to_string(), frame());
                    let obs = Message::observation(&Observation {
                        views,
                        state: vec![steps as f64, 0.5],
                    })
                    .unwrap();
                    if let Message::Obs { views, .. } = &obs {
                        sent.send(views.clone()).unwrap();
                    }
                    obs
                }
            }
            other => panic!("simulator stub got {other:?}"),
        };
        send(&mut stream, &reply);
    }
}

/// Policy stub: records every observation it is shown and moves forward.
fn serve_policy(listener: TcpListener, seen: mpsc::Sender<BTreeMap<String, String>>, done: mpsc::Sender<(bool, u32)>) {
    let (mut stream, _) = listener.accept().unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    while let Some(m) = read_message(&mut reader) {
        match m {
            Message::Hello { version } => send(&mut stream, &Message::Hello { version }),
            Message::Reset { instruction, .. } => assert_eq!(instruction, "put the bowl on the plate"),
            Message::Obs { views, .. } => {
                seen.send(views).unwrap();
                send(
                    &mut stream,
                    &Message::Action {
                        values: vec![0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
                    },
                );
            }
            Message::Done { success, steps } => done.send((success, steps)).unwrap(),
            other => panic!("policy stub got {other:?}"),
        }
    }
}

#[test]
fn wire_episode_forwards_observations_unchanged() {
    let env_listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let policy_listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let env_addr = env_listener.local_addr().unwrap();
    let policy_addr = policy_listener.local_addr().unwrap();
    let (sent_tx, sent_rx) = mpsc::channel();
    let (seen_tx, seen_rx) = mpsc::channel();
    let (done_tx, done_rx) = mpsc::channel();
    std::thread::spawn(move || serve_env(env_listener, sent_tx));
    std::thread::spawn(move || serve_policy(policy_listener, seen_tx, done_tx));

    let timeout = Duration::from_secs(5);
    let mut env = WireEnvironment::new(WireConnection::tcp(env_addr, timeout).unwrap());
    let mut policy = WirePolicy::new(WireConnection::tcp(policy_addr, timeout).unwrap());
    let mut task = EpisodeTask::new("libero_object_0", common::vector(&[]));
    task.instruction = "put the bowl on the plate".into();
    let config = EpisodeConfig {
        max_steps: 10,
        record_trajectory: true,
    };
    let record = run_episode(&mut env, &mut policy, &task, config, 1).unwrap();
    assert!(record.success);
    assert_eq!(record.steps, 3);
    let trajectory = record.trajectory.unwrap();
    assert_eq!(trajectory.len(), 3);
    assert_eq!(trajectory[1].state, vec![1.0, 0.5]);
    assert_eq!(trajectory[0].action.gripper(), 1.0);
    assert_eq!(done_rx.recv_timeout(timeout).unwrap(), (true, 3));

    let sent: Vec<_> = sent_rx.try_iter().collect();
    let seen: Vec<_> = seen_rx.try_iter().collect();
    assert_eq!(sent.len(), 3);
    assert_eq!(seen, sent);
}

#[test]
fn silent_simulator_times_out_with_partial_record() {
    let timeout = Duration::from_millis(300);
    let start = Instant::now();
    let conn = WireConnection::spawn(Command::new("sleep").arg("30"), timeout).unwrap();
    let mut env = WireEnvironment::new(conn);
    let task = EpisodeTask::new("hung", common::vector(&[]));
    let failure = run_episode(&mut env, &mut ZeroPolicy, &task, EpisodeConfig::default(), 5).unwrap_err();
    assert!(matches!(failure.error, HarnessError::Timeout(_)), "{}", failure.error);
    assert!(!failure.partial.success);
    assert_eq!(failure.partial.task_id, "hung");
    assert!(failure.partial.error.is_some());
    drop(env);
    assert!(start.elapsed() < Duration::from_secs(3), "took {:?}", start.elapsed());

    let records = run_suite(
        &[task],
        &suite_config(2, 2),
        |_| {
            let conn = WireConnection::spawn(Command::new("sleep").arg("30"), timeout)?;
            Ok(Box::new(WireEnvironment::new(conn)))
        },
        zero,
    )
    .unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| !r.success && r.error.is_some()));
}
