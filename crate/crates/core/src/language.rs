//! Instruction rewrites, the blank-instruction ablation and goal replacement.

use crate::patch::{self, PatchError, ScenePatch};
use crate::rng::SeedKey;
use crate::scene::{SceneSpec, TaskSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

/// Placeholder every template must contain exactly once.
pub const SLOT: &str = "{instruction}";
/// Environment variable naming the rewriter cache directory.
pub const CACHE_ENV: &str = "PERTURBENCH_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    /// Longer, conversational phrasing with an irrelevant clause.
    Distraction,
    /// Objects and actions described by what they are or do.
    CommonSense,
    /// The instruction wrapped in an extra reasoning step.
    Reasoning,
}

impl RewriteMode {
    pub const ALL: [RewriteMode; 3] = [
        RewriteMode::Distraction,
        RewriteMode::CommonSense,
        RewriteMode::Reasoning,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RewriteMode::Distraction => "R1",
            RewriteMode::CommonSense => "R2",
            RewriteMode::Reasoning => "R3",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewriteMode::Distraction => "distraction",
            RewriteMode::CommonSense => "common_sense",
            RewriteMode::Reasoning => "reasoning",
        }
    }
}

impl FromStr for RewriteMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RewriteMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown rewrite mode `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LanguageError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("no phrase of `{0}` is covered by the lexicon")]
    Coverage(String),
    #[error("lexicon has no {0} templates")]
    NoTemplates(&'static str),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("object `{0}` is not in the scene")]
    MissingObject(String),
    #[error("`{0}` is already the target")]
    NoOp(String),
    #[error("scene has no target object")]
    NoTarget,
    #[error("instruction `{instruction}` does not mention `{phrase}`")]
    PhraseNotFound { instruction: String, phrase: String },
    #[error("rewrite left the instruction unchanged")]
    Unchanged,
    #[error("rewriter request failed: {0}")]
    Http(String),
    #[error("rewriter cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error(transparent)]
    Patch(#[from] PatchError),
}

/// Phrase substitutions and clause templates for the rule-based rewriter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewriteLexicon {
    /// Lower-case phrase to its alternative descriptions.
    pub synonyms: BTreeMap<String, Vec<String>>,
    pub distraction: Vec<String>,
    pub reasoning: Vec<String>,
}

const DEFAULT_LEXICON: &str = "\
[synonyms]
push\tpropel\tshove
pick up\tlift\tgrab hold of
put\tplace\tset down
open\topen up\tswing open
close\tshut
turn on\tswitch on\tactivate
plate\tflat surface used for holding food
to the front of the stove\ttoward the area designated for cooking heat adjustment
stove\tappliance used for cooking with heat
bowl\tround dish used for serving food
basket\twoven container for carrying things
mug\tcup with a handle for hot drinks
drawer\tsliding storage compartment
cabinet\tcupboard used for storage
alphabet soup\tcan of soup with letter-shaped pasta
tomato sauce\tjar of cooked tomato puree
ketchup\tbottle of tomato condiment
cream cheese\tbox of soft spreadable cheese
butter\tpack of dairy spread
milk\tcarton of dairy drink
orange juice\tcarton of citrus drink
wine bottle\tglass vessel holding wine

[distraction]
before turning on the burner, {instruction}
while the kitchen is still quiet, {instruction}
{instruction}, and take your time since nothing else is urgent
if you have a moment after looking around the table, {instruction}

[reasoning]
make sure {instruction} ends up done
first work out which object the task is about, then {instruction}
think about where everything should be at the end, and {instruction}
";

fn slot_count(t: &str) -> usize {
    t.matches(SLOT).count()
}

impl RewriteLexicon {
    /// Built-in lexicon covering common tabletop objects and actions.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("built-in lexicon is well formed")
    }

    /// Parses `[synonyms]` rows (`phrase<TAB>alt<TAB>...`) and one template
    /// per line under `[distraction]` and `[reasoning]`.
    pub fn parse(text: &str) -> Result<Self, LanguageError> {
        #[derive(Clone, Copy)]
        enum Section {
            None,
            Synonyms,
            Distraction,
            Reasoning,
        }
        let mut lex = Self::default();
        let mut section = Section::None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| LanguageError::Lexicon { line: line_no, message };
            let line = raw.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            match line.trim() {
                "[synonyms]" => section = Section::Synonyms,
                "[distraction]" => section = Section::Distraction,
                "[reasoning]" => section = Section::Reasoning,
                s if s.starts_with('[') => return Err(err(format!("unknown section {s}"))),
                s => match section {
                    Section::None => return Err(err("row outside any section".into())),
                    Section::Synonyms => {
                        let mut cols = s.split('\t').map(str::trim).filter(|c| !c.is_empty());
                        let phrase = cols.next().unwrap_or_default().to_lowercase();
                        let alts: Vec<String> = cols.map(String::from).collect();
                        if alts.is_empty() {
                            return Err(err(format!("`{phrase}` has no replacement")));
                        }
                        lex.synonyms.entry(phrase).or_default().extend(alts);
                    }
                    Section::Distraction | Section::Reasoning => {
                        if slot_count(s) != 1 {
                            return Err(err(format!("template needs exactly one {SLOT}")));
                        }
                        let list = if matches!(section, Section::Distraction) {
                            &mut lex.distraction
                        } else {
                            &mut lex.reasoning
                        };
                        list.push(s.to_string());
                    }
                },
            }
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, LanguageError> {
        let text = std::fs::read_to_string(path).map_err(|e| LanguageError::Lexicon {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

fn at_boundary(bytes: &[u8], i: usize) -> bool {
    i == 0 || i >= bytes.len() || !is_word_byte(bytes[i - 1]) || !is_word_byte(bytes[i])
}

/// Non-overlapping whole-word matches of any phrase, scanning left to right
/// and taking the longest phrase at each position. Returns `(start, end, phrase)`.
fn find_phrases<'a>(text: &str, phrases: impl Iterator<Item = &'a str> + Clone) -> Vec<(usize, usize, &'a str)> {
    let lower = text.to_lowercase();
    // Lower-casing may change byte lengths outside ASCII; fall back to no matches there.
    if lower.len() != text.len() {
        return Vec::new();
    }
    let bytes = lower.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let starts_word = i == 0 || !is_word_byte(bytes[i - 1]);
        let best = if starts_word && text.is_char_boundary(i) {
            phrases
                .clone()
                .filter(|p| !p.is_empty() && lower[i..].starts_with(p))
                .filter(|p| at_boundary(bytes, i + p.len()))
                .max_by_key(|p| p.len())
        } else {
            None
        };
        match best {
            Some(p) => {
                out.push((i, i + p.len(), p));
                i += p.len();
            }
            None => i += 1,
        }
    }
    out
}

fn fill(template: &str, instruction: &str) -> String {
    let (pre, post) = template.split_once(SLOT).expect("templates hold one slot");
    format!("{pre}{instruction}{post}")
}

/// Deterministic rule-based rewrite.
pub fn rewrite(
    instruction: &str,
    mode: RewriteMode,
    lexicon: &RewriteLexicon,
    seed: u64,
) -> Result<String, LanguageError> {
    if instruction.trim().is_empty() {
        return Err(LanguageError::EmptyInstruction);
    }
    let mut rng = SeedKey::new(seed)
        .str("rewrite")
        .str(mode.as_str())
        .str(instruction)
        .rng();
    let out = match mode {
        RewriteMode::Distraction | RewriteMode::Reasoning => {
            let (templates, name) = if mode == RewriteMode::Distraction {
                (&lexicon.distraction, "distraction")
            } else {
                (&lexicon.reasoning, "reasoning")
            };
            if templates.is_empty() {
                return Err(LanguageError::NoTemplates(name));
            }
            fill(&templates[rng.index(templates.len())], instruction)
        }
        RewriteMode::CommonSense => {
            let hits = find_phrases(instruction, lexicon.synonyms.keys().map(String::as_str));
            if hits.is_empty() {
                return Err(LanguageError::Coverage(instruction.to_string()));
            }
            let mut s = String::with_capacity(instruction.len() * 2);
            let mut last = 0;
            for (start, end, phrase) in hits {
                let alts = &lexicon.synonyms[phrase];
                s.push_str(&instruction[last..start]);
                s.push_str(&alts[rng.index(alts.len())]);
                last = end;
            }
            s.push_str(&instruction[last..]);
            s
        }
    };
    if out == instruction {
        return Err(LanguageError::Unchanged);
    }
    Ok(out)
}

/// The blank-instruction ablation.
pub fn blank(_instruction: &str) -> String {
    String::new()
}

/// Natural-language phrase for an object category: `alphabet_soup` -> `alphabet soup`.
pub fn object_phrase(category: &str) -> String {
    category.replace('_', " ")
}

fn replace_phrase(text: &str, phrase: &str, with: &str) -> Option<String> {
    let hits = find_phrases(text, std::iter::once(phrase));
    if hits.is_empty() {
        return None;
    }
    let mut s = String::with_capacity(text.len());
    let mut last = 0;
    for (start, end, _) in hits {
        s.push_str(&text[last..start]);
        s.push_str(with);
        last = end;
    }
    s.push_str(&text[last..]);
    Some(s)
}

/// Points the task at a different object: goal arguments and the instruction's
/// object phrase change together.
pub fn replace_goal(task: &TaskSpec, scene: &SceneSpec, new_target_id: &str) -> Result<TaskSpec, LanguageError> {
    let new = scene
        .object(new_target_id)
        .ok_or_else(|| LanguageError::MissingObject(new_target_id.to_string()))?;
    let old = scene.target().ok_or(LanguageError::NoTarget)?;
    if old.object_id == new_target_id {
        return Err(LanguageError::NoOp(new_target_id.to_string()));
    }
    let old_phrase = object_phrase(&old.category).to_lowercase();
    let new_phrase = object_phrase(&new.category);
    let instruction =
        replace_phrase(&task.instruction, &old_phrase, &new_phrase).ok_or_else(|| LanguageError::PhraseNotFound {
            instruction: task.instruction.clone(),
            phrase: old_phrase.clone(),
        })?;
    let mut goal = task.goal.clone();
    for p in &mut goal.0 {
        for a in &mut p.args {
            if *a == old.object_id {
                *a = new_target_id.to_string();
            }
        }
    }
    Ok(TaskSpec {
        instruction,
        goal,
        suite: task.suite,
    })
}

/// [`replace_goal`] applied to a whole scene, moving the target flag as well.
pub fn replace_goal_in_scene(scene: &SceneSpec, new_target_id: &str) -> Result<(SceneSpec, ScenePatch), LanguageError> {
    let task = replace_goal(&scene.task, scene, new_target_id)?;
    let mut out = scene.clone();
    out.task = task;
    for o in &mut out.objects {
        o.is_target = o.object_id == new_target_id;
    }
    let p = patch::diff(scene, &out)?;
    Ok((out, p))
}

/// Instruction with the scene-level patch that installs it.
pub fn rewrite_scene(scene: &SceneSpec, rewritten: &str) -> Result<(SceneSpec, ScenePatch), LanguageError> {
    let mut out = scene.clone();
    out.task.instruction = rewritten.to_string();
    let p = patch::diff(scene, &out)?;
    Ok((out, p))
}

/// Anything that can produce a rewrite.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, instruction: &str, mode: RewriteMode, seed: u64) -> Result<String, LanguageError>;
}

impl Rewriter for RewriteLexicon {
    fn rewrite(&self, instruction: &str, mode: RewriteMode, seed: u64) -> Result<String, LanguageError> {
        rewrite(instruction, mode, self, seed)
    }
}

#[derive(Debug, Serialize)]
struct RewriteRequest<'a> {
    instruction: &'a str,
    mode: RewriteMode,
}

#[derive(Debug, Serialize, Deserialize)]
struct RewriteResponse {
    rewritten: String,
}

/// Client for an external rewriting service with a content-addressed cache.
///
/// Requests are `POST {"instruction", "mode"}` and responses `{"rewritten"}`.
/// Cached responses live at `<cache>/<sha256 of request>.json`.
#[derive(Debug)]
pub struct RewriterClient {
    url: String,
    cache_dir: Option<PathBuf>,
    http: reqwest::blocking::Client,
    cache_lock: Mutex<()>,
}

impl RewriterClient {
    pub fn new(
        url: impl Into<String>,
        cache_dir: Option<PathBuf>,
        timeout: std::time::Duration,
    ) -> Result<Self, LanguageError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LanguageError::Http(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            cache_dir,
            http,
            cache_lock: Mutex::new(()),
        })
    }

    /// Cache directory from `PERTURBENCH_CACHE`, if set.
    pub fn from_env(url: impl Into<String>, timeout: std::time::Duration) -> Result<Self, LanguageError> {
        let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from);
        Self::new(url, dir, timeout)
    }

    pub fn cache_key(instruction: &str, mode: RewriteMode) -> String {
        let body = serde_json::to_vec(&RewriteRequest { instruction, mode }).expect("plain strings serialize");
        hex::encode(Sha256::digest(&body))
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn cache_error(path: &Path, e: impl std::fmt::Display) -> LanguageError {
        LanguageError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    fn cached(&self, key: &str) -> Result<Option<String>, LanguageError> {
        let Some(path) = self.cache_path(key) else {
            return Ok(None);
        };
        let _guard = self.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
        match std::fs::read(&path) {
            Ok(bytes) => {
                let r: RewriteResponse = serde_json::from_slice(&bytes).map_err(|e| Self::cache_error(&path, e))?;
                Ok(Some(r.rewritten))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Self::cache_error(&path, e)),
        }
    }

    fn store(&self, key: &str, rewritten: &str) -> Result<(), LanguageError> {
        let Some(path) = self.cache_path(key) else {
            return Ok(());
        };
        let _guard = self.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = path.parent().expect("cache files live in a directory");
        std::fs::create_dir_all(dir).map_err(|e| Self::cache_error(dir, e))?;
        let body = serde_json::to_vec(&RewriteResponse {
            rewritten: rewritten.to_string(),
        })
        .expect("plain strings serialize");
        // Write then rename so readers never see a partial file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body).map_err(|e| Self::cache_error(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Self::cache_error(&path, e))
    }

    pub fn request(&self, instruction: &str, mode: RewriteMode) -> Result<String, LanguageError> {
        if instruction.trim().is_empty() {
            return Err(LanguageError::EmptyInstruction);
        }
        let key = Self::cache_key(instruction, mode);
        if let Some(hit) = self.cached(&key)? {
            return Ok(hit);
        }
        let resp = self
            .http
            .post(&self.url)
            .json(&RewriteRequest { instruction, mode })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| LanguageError::Http(e.to_string()))?;
        let body: RewriteResponse = resp.json().map_err(|e| LanguageError::Http(e.to_string()))?;
        if body.rewritten.trim().is_empty() || body.rewritten.contains(SLOT) {
            return Err(LanguageError::Http(format!("unusable rewrite `{}`", body.rewritten)));
        }
        self.store(&key, &body.rewritten)?;
        Ok(body.rewritten)
    }
}

impl Rewriter for RewriterClient {
    fn rewrite(&self, instruction: &str, mode: RewriteMode, _seed: u64) -> Result<String, LanguageError> {
        self.request(instruction, mode)
    }
}
