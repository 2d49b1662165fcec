//! Key-path edit lists between two scenes.
//!
//! Key paths address the leaves of a [`SceneSpec`]:
//!
//! | path | value |
//! |------|-------|
//! | `camera.position`, `camera.rotation`, `camera.look_center`, `camera.fov_deg` | vector / matrix / scalar |
//! | `lights.diffuse`, `lights.direction`, `lights.specular`, `lights.shadows` | |
//! | `textures.<role>` | texture id, `null` when absent |
//! | `robot_init.qpos`, `robot_init.gripper` | |
//! | `task.instruction`, `task.goal`, `task.suite` | |
//! | `objects.<id>` | whole object; `null` old value adds, `null` new value removes |
//! | `objects.<id>.<field>` | one field of an existing object |
//! | `object_order` | list of ids; applied after every other edit |
//!
//! Vectors and matrices are atomic leaves. Edits carry the value they replace
//! so a patch applied to the wrong base is rejected instead of silently merged.

use crate::canon;
use crate::scene::{ObjectPlacement, SceneSpec, SurfaceRole};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};

pub const OBJECT_ORDER: &str = "object_order";

const OBJECT_FIELDS: [&str; 6] = [
    "category",
    "half_extents",
    "is_confounder",
    "is_target",
    "orientation",
    "position",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub key_path: String,
    pub old_value: Value,
    pub new_value: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenePatch {
    pub edits: Vec<Edit>,
}

impl ScenePatch {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn key_paths(&self) -> impl Iterator<Item = &str> {
        self.edits.iter().map(|e| e.key_path.as_str())
    }

    pub fn to_canonical(&self) -> String {
        canon::to_string(self).expect("patches contain only finite JSON values")
    }

    pub fn from_canonical(text: &str) -> Result<Self, canon::CanonError> {
        canon::from_str(text)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PatchError {
    #[error("scenes `{base}` and `{modified}` are not comparable")]
    Incomparable { base: String, modified: String },
    #[error("stale patch at `{key_path}`: expected {expected}, found {found}")]
    Stale {
        key_path: String,
        expected: String,
        found: String,
    },
    #[error("unknown key path `{0}`")]
    UnknownPath(String),
    #[error("invalid value for `{key_path}`: {message}")]
    InvalidValue { key_path: String, message: String },
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("scene values are always representable")
}

fn object_leaves(obj: &ObjectPlacement) -> [(&'static str, Value); 6] {
    [
        ("category", json(&obj.category)),
        ("half_extents", json(&obj.half_extents)),
        ("is_confounder", json(&obj.is_confounder)),
        ("is_target", json(&obj.is_target)),
        ("orientation", json(&obj.orientation)),
        ("position", json(&obj.position)),
    ]
}

/// Every non-object leaf of a scene keyed by path.
fn scalar_leaves(s: &SceneSpec) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    let c = &s.camera;
    m.insert("camera.position".into(), json(&c.position));
    m.insert("camera.rotation".into(), json(&c.rotation));
    m.insert("camera.look_center".into(), json(&c.look_center));
    m.insert("camera.fov_deg".into(), json(&c.fov_deg));
    let l = &s.lights;
    m.insert("lights.diffuse".into(), json(&l.diffuse));
    m.insert("lights.direction".into(), json(&l.direction));
    m.insert("lights.specular".into(), json(&l.specular));
    m.insert("lights.shadows".into(), json(&l.shadows));
    for role in SurfaceRole::ALL {
        let v = s.textures.get(&role).map(json).unwrap_or(Value::Null);
        m.insert(format!("textures.{}", role.as_str()), v);
    }
    m.insert("robot_init.qpos".into(), json(&s.robot_init.qpos));
    m.insert("robot_init.gripper".into(), json(&s.robot_init.gripper));
    m.insert("task.instruction".into(), json(&s.task.instruction));
    m.insert("task.goal".into(), json(&s.task.goal));
    m.insert("task.suite".into(), json(&s.task.suite));
    m
}

fn object_order(s: &SceneSpec) -> Vec<String> {
    s.objects.iter().map(|o| o.object_id.clone()).collect()
}

/// Value equality that treats `1` and `1.0` as the same number.
fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => x == y,
            _ => x == y,
        },
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(a, b)| same(a, b)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same(v, w)))
        }
        _ => a == b,
    }
}

/// Edits that turn `base` into `modified`, sorted by key path.
pub fn diff(base: &SceneSpec, modified: &SceneSpec) -> Result<ScenePatch, PatchError> {
    if base.scene_id != modified.scene_id {
        return Err(PatchError::Incomparable {
            base: base.scene_id.clone(),
            modified: modified.scene_id.clone(),
        });
    }
    let mut edits = Vec::new();

    let before = scalar_leaves(base);
    let after = scalar_leaves(modified);
    for (path, old) in &before {
        let new = &after[path];
        if !same(old, new) {
            edits.push(Edit {
                key_path: path.clone(),
                old_value: old.clone(),
                new_value: new.clone(),
            });
        }
    }

    let base_ids: BTreeSet<&str> = base.objects.iter().map(|o| o.object_id.as_str()).collect();
    let mod_ids: BTreeSet<&str> = modified.objects.iter().map(|o| o.object_id.as_str()).collect();
    for id in base_ids.union(&mod_ids) {
        match (base.object(id), modified.object(id)) {
            (Some(a), Some(b)) => {
                for ((field, old), (_, new)) in object_leaves(a).into_iter().zip(object_leaves(b)) {
                    if !same(&old, &new) {
                        edits.push(Edit {
                            key_path: format!("objects.{id}.{field}"),
                            old_value: old,
                            new_value: new,
                        });
                    }
                }
            }
            (a, b) => edits.push(Edit {
                key_path: format!("objects.{id}"),
                old_value: a.map(json).unwrap_or(Value::Null),
                new_value: b.map(json).unwrap_or(Value::Null),
            }),
        }
    }

    // Order produced by removals and appended additions; record the target
    // order only when that is not already what `modified` holds.
    let mut implied: Vec<String> = object_order(base)
        .into_iter()
        .filter(|id| mod_ids.contains(id.as_str()))
        .collect();
    implied.extend(
        mod_ids
            .iter()
            .filter(|id| !base_ids.contains(*id))
            .map(|id| id.to_string()),
    );
    let wanted = object_order(modified);
    if implied != wanted {
        edits.push(Edit {
            key_path: OBJECT_ORDER.into(),
            old_value: json(&object_order(base)),
            new_value: json(&wanted),
        });
    }

    edits.sort_by(|a, b| a.key_path.cmp(&b.key_path));
    Ok(ScenePatch { edits })
}

fn stale(path: &str, expected: &Value, found: &Value) -> PatchError {
    PatchError::Stale {
        key_path: path.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

fn decode<T: serde::de::DeserializeOwned>(path: &str, v: &Value) -> Result<T, PatchError> {
    serde_json::from_value(v.clone()).map_err(|e| PatchError::InvalidValue {
        key_path: path.to_string(),
        message: e.to_string(),
    })
}

fn set_scalar(s: &mut SceneSpec, path: &str, v: &Value) -> Result<(), PatchError> {
    match path {
        "camera.position" => s.camera.position = decode(path, v)?,
        "camera.rotation" => s.camera.rotation = decode(path, v)?,
        "camera.look_center" => s.camera.look_center = decode(path, v)?,
        "camera.fov_deg" => s.camera.fov_deg = decode(path, v)?,
        "lights.diffuse" => s.lights.diffuse = decode(path, v)?,
        "lights.direction" => s.lights.direction = decode(path, v)?,
        "lights.specular" => s.lights.specular = decode(path, v)?,
        "lights.shadows" => s.lights.shadows = decode(path, v)?,
        "robot_init.qpos" => s.robot_init.qpos = decode(path, v)?,
        "robot_init.gripper" => s.robot_init.gripper = decode(path, v)?,
        "task.instruction" => s.task.instruction = decode(path, v)?,
        "task.goal" => s.task.goal = decode(path, v)?,
        "task.suite" => s.task.suite = decode(path, v)?,
        _ => {
            let role = path
                .strip_prefix("textures.")
                .and_then(|r| r.parse::<SurfaceRole>().ok())
                .ok_or_else(|| PatchError::UnknownPath(path.to_string()))?;
            if v.is_null() {
                s.textures.remove(&role);
            } else {
                s.textures.insert(role, decode(path, v)?);
            }
        }
    }
    Ok(())
}

fn set_object_field(obj: &mut ObjectPlacement, path: &str, field: &str, v: &Value) -> Result<(), PatchError> {
    match field {
        "category" => obj.category = decode(path, v)?,
        "half_extents" => obj.half_extents = decode(path, v)?,
        "is_confounder" => obj.is_confounder = decode(path, v)?,
        "is_target" => obj.is_target = decode(path, v)?,
        "orientation" => obj.orientation = decode(path, v)?,
        "position" => obj.position = decode(path, v)?,
        _ => return Err(PatchError::UnknownPath(path.to_string())),
    }
    Ok(())
}

fn apply_object_edit(s: &mut SceneSpec, edit: &Edit, rest: &str) -> Result<(), PatchError> {
    let path = edit.key_path.as_str();
    match rest.split_once('.') {
        Some((id, field)) => {
            if !OBJECT_FIELDS.contains(&field) {
                return Err(PatchError::UnknownPath(path.to_string()));
            }
            let obj = s
                .objects
                .iter_mut()
                .find(|o| o.object_id == id)
                .ok_or_else(|| PatchError::UnknownPath(path.to_string()))?;
            let current = object_leaves(obj)
                .into_iter()
                .find(|(f, _)| *f == field)
                .map(|(_, v)| v)
                .expect("field list checked above");
            if !same(&current, &edit.old_value) {
                return Err(stale(path, &edit.old_value, &current));
            }
            set_object_field(obj, path, field, &edit.new_value)
        }
        None => {
            let id = rest;
            let pos = s.objects.iter().position(|o| o.object_id == id);
            let current = pos.map(|i| json(&s.objects[i])).unwrap_or(Value::Null);
            if !same(&current, &edit.old_value) {
                return Err(stale(path, &edit.old_value, &current));
            }
            if let Some(i) = pos {
                s.objects.remove(i);
            }
            if !edit.new_value.is_null() {
                let obj: ObjectPlacement = decode(path, &edit.new_value)?;
                if obj.object_id != id {
                    return Err(PatchError::InvalidValue {
                        key_path: path.to_string(),
                        message: format!("object id `{}` does not match path", obj.object_id),
                    });
                }
                s.objects.push(obj);
            }
            Ok(())
        }
    }
}

/// Applies `patch` to a copy of `base`.
pub fn apply(base: &SceneSpec, patch: &ScenePatch) -> Result<SceneSpec, PatchError> {
    let mut s = base.clone();
    let mut order_edit = None;
    for edit in &patch.edits {
        let path = edit.key_path.as_str();
        if path == OBJECT_ORDER {
            let current = json(&object_order(base));
            if !same(&current, &edit.old_value) {
                return Err(stale(path, &edit.old_value, &current));
            }
            order_edit = Some(edit);
        } else if let Some(rest) = path.strip_prefix("objects.") {
            apply_object_edit(&mut s, edit, rest)?;
        } else {
            let current = scalar_leaves(&s)
                .remove(path)
                .ok_or_else(|| PatchError::UnknownPath(path.to_string()))?;
            if !same(&current, &edit.old_value) {
                return Err(stale(path, &edit.old_value, &current));
            }
            set_scalar(&mut s, path, &edit.new_value)?;
        }
    }
    if let Some(edit) = order_edit {
        let wanted: Vec<String> = decode(OBJECT_ORDER, &edit.new_value)?;
        let mut reordered = Vec::with_capacity(s.objects.len());
        for id in &wanted {
            let i = s
                .objects
                .iter()
                .position(|o| &o.object_id == id)
                .ok_or_else(|| PatchError::InvalidValue {
                    key_path: OBJECT_ORDER.into(),
                    message: format!("unknown object `{id}`"),
                })?;
            reordered.push(s.objects.swap_remove(i));
        }
        if !s.objects.is_empty() {
            return Err(PatchError::InvalidValue {
                key_path: OBJECT_ORDER.into(),
                message: "order does not list every object".into(),
            });
        }
        s.objects = reordered;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fixtures::{object, scene};

    #[test]
    fn identical_scenes_give_empty_patch() {
        let s = scene();
        assert!(diff(&s, &s).unwrap().is_empty());
        assert_eq!(apply(&s, &ScenePatch::default()).unwrap(), s);
    }

    #[test]
    fn single_field_change() {
        let s = scene();
        let mut t = s.clone();
        t.lights.specular = 1.5;
        let p = diff(&s, &t).unwrap();
        assert_eq!(p.key_paths().collect::<Vec<_>>(), vec!["lights.specular"]);
        assert_eq!(p.edits[0].old_value, json(&0.5));
        assert_eq!(apply(&s, &p).unwrap(), t);
    }

    #[test]
    fn two_light_fields_sorted_by_path() {
        let s = scene();
        let mut t = s.clone();
        t.lights.specular = 1.5;
        t.lights.diffuse = [1.0, 0.0, 0.0];
        let p = diff(&s, &t).unwrap();
        assert_eq!(
            p.key_paths().collect::<Vec<_>>(),
            vec!["lights.diffuse", "lights.specular"]
        );
    }

    #[test]
    fn different_scene_ids_are_incomparable() {
        let s = scene();
        let mut t = s.clone();
        t.scene_id = "other".into();
        assert!(matches!(diff(&s, &t), Err(PatchError::Incomparable { .. })));
    }

    #[test]
    fn stale_and_unknown_paths_are_rejected() {
        let s = scene();
        let bad = ScenePatch {
            edits: vec![Edit {
                key_path: "lights.specular".into(),
                old_value: json(&9.0),
                new_value: json(&1.0),
            }],
        };
        assert!(matches!(apply(&s, &bad), Err(PatchError::Stale { .. })));
        let unknown = ScenePatch {
            edits: vec![Edit {
                key_path: "lights.colour".into(),
                old_value: Value::Null,
                new_value: json(&1.0),
            }],
        };
        assert!(matches!(apply(&s, &unknown), Err(PatchError::UnknownPath(_))));
    }

    #[test]
    fn integer_literals_match_float_fields() {
        let s = scene();
        let p: ScenePatch =
            serde_json::from_str(r#"{"edits":[{"key_path":"robot_init.gripper","old_value":0,"new_value":1}]}"#)
                .unwrap();
        assert_eq!(apply(&s, &p).unwrap().robot_init.gripper, 1.0);
    }

    #[test]
    fn object_add_remove_and_reorder() {
        let s = scene();
        let mut t = s.clone();
        t.objects.remove(1);
        t.objects
            .insert(0, object("zz_box", "box", [0.3, 0.3, 0.85], [0.02, 0.02, 0.02]));
        t.objects[1].position[0] += 0.01;
        let p = diff(&s, &t).unwrap();
        assert!(p.key_paths().any(|k| k == OBJECT_ORDER));
        assert_eq!(apply(&s, &p).unwrap(), t);
    }

    #[test]
    fn base_is_untouched() {
        let s = scene();
        let copy = s.clone();
        let mut t = s.clone();
        t.task.instruction = "x".into();
        let _ = apply(&s, &diff(&s, &t).unwrap()).unwrap();
        assert_eq!(s, copy);
    }
}
