#![allow(dead_code)]

use perturbench_core::builder::Generators;
use perturbench_core::geometry::Vec3;
use perturbench_core::harness::EpisodeRecord;
use perturbench_core::language::RewriteLexicon;
use perturbench_core::perturbation::{Dimension, PerturbationSpec, PerturbationVector};
use perturbench_core::rng::CounterRng;
use perturbench_core::scene::fixtures::{object, scene_in};
use perturbench_core::scene::{Goal, ObjectPlacement, Predicate, PredicateName, SceneSpec, Suite, SurfaceRole};
use perturbench_core::scene_perturb::{Aabb, Distractor, DistractorRegistry, Texture, TextureRegistry};

pub fn workspace() -> Aabb {
    Aabb {
        min: [-0.4, -0.4, 0.8],
        max: [0.4, 0.4, 1.2],
    }
}

pub fn generators() -> Generators {
    let distractors = (0..12)
        .map(|k| Distractor {
            category: format!("distractor_{k}"),
            half_extents: [0.02 + 0.002 * k as f64, 0.025, 0.04],
        })
        .collect();
    let mut textures = Vec::new();
    for role in SurfaceRole::ALL {
        for k in 0..6 {
            textures.push(Texture {
                texture_id: format!("{}_{k}", role.as_str()),
                role,
            });
        }
    }
    Generators {
        distractors: DistractorRegistry::new(distractors).unwrap(),
        textures: TextureRegistry::new(textures).unwrap(),
        workspace: workspace(),
        rewriter: Box::new(RewriteLexicon::builtin()),
    }
}

/// Ten base tasks per suite.
pub fn base_tasks(per_suite: usize) -> Vec<SceneSpec> {
    Suite::ALL
        .iter()
        .flat_map(|&s| (0..per_suite).map(move |k| scene_in(&format!("{}_{k}", s.label().to_lowercase()), s)))
        .collect()
}

pub fn vector(dims: &[Dimension]) -> PerturbationVector {
    PerturbationVector::new(dims.iter().map(|d| PerturbationSpec::nominal(*d)).collect()).unwrap()
}

/// `wins` successes and `trials - wins` failures for one condition.
pub fn records(model: &str, task: &str, dims: &[Dimension], wins: u64, trials: u64) -> Vec<EpisodeRecord> {
    let v = vector(dims);
    (0..trials)
        .map(|k| EpisodeRecord {
            task_id: task.to_string(),
            model: model.to_string(),
            trial: k as u32,
            perturbation: v.clone(),
            success: k < wins,
            steps: 1,
            seed: k,
            trajectory: None,
            error: None,
        })
        .collect()
}

fn random_vec(rng: &mut CounterRng, lo: f64, hi: f64) -> Vec3 {
    [rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)]
}

fn random_object(rng: &mut CounterRng, id: &str) -> ObjectPlacement {
    let categories = ["bowl", "plate", "mug", "basket", "ketchup"];
    let mut o = object(
        id,
        categories[rng.index(categories.len())],
        random_vec(rng, -0.4, 0.4),
        random_vec(rng, 0.01, 0.1),
    );
    o.orientation = random_vec(rng, -3.0, 3.0);
    o.is_target = rng.coin();
    o.is_confounder = rng.coin();
    o
}

/// A random edit of `base`; `fresh` numbers newly added objects.
pub fn mutate_scene(base: &SceneSpec, rng: &mut CounterRng, fresh: &mut u64) -> SceneSpec {
    let mut s = base.clone();
    if rng.coin() {
        s.camera.position = random_vec(rng, -2.0, 2.0);
    }
    if rng.coin() {
        for row in &mut s.camera.rotation {
            *row = random_vec(rng, -1.0, 1.0);
        }
    }
    if rng.coin() {
        s.camera.fov_deg = rng.uniform(30.0, 90.0);
    }
    if rng.coin() {
        s.lights.diffuse = random_vec(rng, 0.0, 1.0);
    }
    if rng.coin() {
        s.lights.direction = random_vec(rng, -1.0, 1.0);
    }
    if rng.coin() {
        s.lights.specular = rng.uniform(0.0, 1.0);
    }
    if rng.coin() {
        s.lights.shadows = !s.lights.shadows;
    }
    for role in SurfaceRole::ALL {
        match rng.below(3) {
            0 => {
                s.textures.remove(&role);
            }
            1 => {
                s.textures.insert(role, format!("tex_{}", rng.below(50)));
            }
            _ => {}
        }
    }
    if rng.coin() {
        let n = 1 + rng.index(8);
        s.robot_init.qpos = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
    }
    if rng.coin() {
        s.robot_init.gripper = rng.uniform(0.0, 0.04);
    }
    if rng.coin() {
        s.task.instruction = format!("instruction {}", rng.below(1000));
    }
    if rng.coin() {
        let id = s.objects.first().map_or("bowl_1".to_string(), |o| o.object_id.clone());
        s.task.goal = Goal::single(Predicate::new(PredicateName::PickedUp, &[&id]));
    }
    if rng.coin() {
        s.task.suite = Suite::ALL[rng.index(4)];
    }
    let removals = rng.below(3);
    for _ in 0..removals {
        if !s.objects.is_empty() {
            let k = rng.index(s.objects.len());
            s.objects.remove(k);
        }
    }
    for o in &mut s.objects {
        if rng.below(3) == 0 {
            let id = o.object_id.clone();
            let replacement = random_object(rng, &id);
            match rng.below(6) {
                0 => o.category = replacement.category,
                1 => o.position = replacement.position,
                2 => o.orientation = replacement.orientation,
                3 => o.half_extents = replacement.half_extents,
                4 => o.is_target = !o.is_target,
                _ => o.is_confounder = !o.is_confounder,
            }
        }
    }
    for _ in 0..rng.below(3) {
        *fresh += 1;
        let id = format!("object_{fresh}");
        let k = rng.index(s.objects.len() + 1);
        s.objects.insert(k, random_object(rng, &id));
    }
    if rng.below(4) == 0 {
        rng.shuffle(&mut s.objects);
    }
    s
}
