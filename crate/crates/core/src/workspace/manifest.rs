//! Run manifest in the conventional `manifest.yaml` layout.
//!
//! Parsing walks the YAML tree by hand rather than deriving `Deserialize`
//! so that a missing field is reported by name, invariant failures name
//! the rule they broke, and keys this version does not know about are kept
//! in [`Manifest::extra`] and written back out on serialization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};

use super::WorkspaceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
    Pipeline,
}

impl Level {
    fn parse(v: &Value) -> Option<Self> {
        let s = match v {
            Value::Number(n) => n.to_string(),
            Value::String(s) => s.trim().to_ascii_lowercase(),
            _ => return None,
        };
        match s.trim_start_matches('l') {
            "1" => Some(Self::L1),
            "2" => Some(Self::L2),
            "3" => Some(Self::L3),
            "pipeline" => Some(Self::Pipeline),
            _ => None,
        }
    }

    fn to_value(self) -> Value {
        match self {
            Self::L1 => Value::from(1),
            Self::L2 => Value::from(2),
            Self::L3 => Value::from(3),
            Self::Pipeline => Value::from("pipeline"),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::L1 => f.write_str("L1"),
            Self::L2 => f.write_str("L2"),
            Self::L3 => f.write_str("L3"),
            Self::Pipeline => f.write_str("pipeline"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Pointwise,
    Pairwise,
    Listwise,
    Setwise,
}

impl Scope {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pointwise" => Some(Self::Pointwise),
            "pairwise" => Some(Self::Pairwise),
            "listwise" => Some(Self::Listwise),
            "setwise" => Some(Self::Setwise),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pointwise => "pointwise",
            Self::Pairwise => "pairwise",
            Self::Listwise => "listwise",
            Self::Setwise => "setwise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderPin {
    pub name: String,
    pub model: String,
    pub version: String,
    pub precision: String,
    pub device: String,
    #[serde(default)]
    pub notes: String,
    /// Companion file describing a synthetic annotator (`name: synthetic`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    /// HTTP endpoint for a live provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl ProviderPin {
    pub fn is_synthetic(&self) -> bool {
        self.name.eq_ignore_ascii_case("synthetic")
    }

    pub fn label(&self) -> String {
        format!("{}/{}@{}", self.name, self.model, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature_estimation: f64,
    pub temperature_final: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub collection: u64,
    pub shuffling: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactIds {
    pub rubric_id: String,
    pub label_map_id: String,
    pub schema_id: String,
    pub prompts_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inputs {
    pub items_path: String,
    pub audit_set_path: String,
    pub gold_items_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    pub logs_dir: String,
    pub dumps_dir: String,
    pub aggregates_dir: String,
    pub methods_table_tex: String,
    pub materials_bundle: String,
    /// Item metadata keys dropped before items enter the materials bundle.
    pub deidentify_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageRef {
    pub policy_id: String,
    pub reviewers_roster: String,
    /// Per-item agreement below this escalates.
    pub kappa_floor: f64,
    /// Top-two log-probability gap (nats) below this escalates.
    pub margin_floor: f64,
    pub escalate_schema_failures: bool,
}

pub const DEFAULT_KAPPA_FLOOR: f64 = 0.4;
pub const DEFAULT_MARGIN_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub title: String,
    pub run_id: String,
    pub data_root: String,
    pub out_root: String,
    pub level: Level,
    pub scope: Scope,
    pub artifact_ids: ArtifactIds,
    pub randomize_options: bool,
    pub p: usize,
    pub s: usize,
    pub m: usize,
    pub providers: Vec<ProviderPin>,
    pub decoding: Decoding,
    pub seeds: Seeds,
    pub inputs: Inputs,
    pub outputs: Outputs,
    pub triage: TriageRef,
    /// Unrecognized keys by dotted path (`section.key`, or `section` for
    /// unknown top-level sections).
    pub extra: BTreeMap<String, Value>,
}

impl Manifest {
    /// Replace the `<run_id>` placeholder used in output paths.
    pub fn expand(&self, path: &str) -> String {
        path.replace("<run_id>", &self.run_id)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&Value::Mapping(self.to_mapping())).expect("manifest values are always representable")
    }

    fn to_mapping(&self) -> Mapping {
        let mut sections: BTreeMap<&str, Mapping> = BTreeMap::new();
        let mut put = |section: &'static str, key: &str, v: Value| {
            sections.entry(section).or_default().insert(Value::from(key), v);
        };
        put("project", "title", self.title.clone().into());
        put("project", "run_id", self.run_id.clone().into());
        put("project", "data_root", self.data_root.clone().into());
        put("project", "out_root", self.out_root.clone().into());

        put("design", "level", self.level.to_value());
        put("design", "scope", self.scope.as_str().into());
        put("design", "rubric_id", self.artifact_ids.rubric_id.clone().into());
        put("design", "label_map_id", self.artifact_ids.label_map_id.clone().into());
        put("design", "schema_id", self.artifact_ids.schema_id.clone().into());
        put("design", "prompts_id", self.artifact_ids.prompts_id.clone().into());
        put("design", "randomize_options", self.randomize_options.into());
        put("design", "P", (self.p as u64).into());
        put("design", "S", (self.s as u64).into());
        put("design", "M", (self.m as u64).into());

        let providers: Vec<Value> = self
            .providers
            .iter()
            .map(|p| serde_yaml::to_value(p).expect("provider pin serializes"))
            .collect();
        put("environment", "providers", Value::Sequence(providers));
        let mut temps = Mapping::new();
        temps.insert("estimation".into(), self.decoding.temperature_estimation.into());
        temps.insert("final".into(), self.decoding.temperature_final.into());
        let mut decoding = Mapping::new();
        decoding.insert("temperature".into(), Value::Mapping(temps));
        decoding.insert("top_p".into(), self.decoding.top_p.into());
        decoding.insert("max_tokens".into(), u64::from(self.decoding.max_tokens).into());
        put("environment", "decoding", Value::Mapping(decoding));
        let mut seeds = Mapping::new();
        seeds.insert("collection".into(), self.seeds.collection.into());
        seeds.insert("shuffling".into(), self.seeds.shuffling.into());
        put("environment", "seeds", Value::Mapping(seeds));

        put("inputs", "items_path", self.inputs.items_path.clone().into());
        put("inputs", "audit_set_path", self.inputs.audit_set_path.clone().into());
        if let Some(g) = &self.inputs.gold_items_path {
            put("inputs", "gold_items_path", g.clone().into());
        }

        put("outputs", "logs_dir", self.outputs.logs_dir.clone().into());
        put("outputs", "dumps_dir", self.outputs.dumps_dir.clone().into());
        put("outputs", "aggregates_dir", self.outputs.aggregates_dir.clone().into());
        put("outputs", "methods_table_tex", self.outputs.methods_table_tex.clone().into());
        put("outputs", "materials_bundle", self.outputs.materials_bundle.clone().into());
        if !self.outputs.deidentify_fields.is_empty() {
            let fields = self.outputs.deidentify_fields.iter().cloned().map(Value::from).collect();
            put("outputs", "deidentify_fields", Value::Sequence(fields));
        }

        put("triage", "policy_id", self.triage.policy_id.clone().into());
        put("triage", "reviewers_roster", self.triage.reviewers_roster.clone().into());
        put("triage", "kappa_floor", self.triage.kappa_floor.into());
        put("triage", "margin_floor", self.triage.margin_floor.into());
        put("triage", "escalate_schema_failures", self.triage.escalate_schema_failures.into());

        let mut root = Mapping::new();
        let mut extra_sections: BTreeMap<String, Value> = BTreeMap::new();
        for (path, v) in &self.extra {
            match path.split_once('.') {
                Some((section, key)) if KNOWN_SECTIONS.contains(&section) => {
                    let section = KNOWN_SECTIONS.iter().find(|s| **s == section).unwrap();
                    sections.entry(section).or_default().insert(Value::from(key), v.clone());
                }
                _ => {
                    extra_sections.insert(path.clone(), v.clone());
                }
            }
        }
        for name in KNOWN_SECTIONS {
            if let Some(m) = sections.remove(name) {
                root.insert(Value::from(name), Value::Mapping(m));
            }
        }
        for (k, v) in extra_sections {
            root.insert(Value::from(k), v);
        }
        root
    }
}

const KNOWN_SECTIONS: [&str; 6] = ["project", "design", "environment", "inputs", "outputs", "triage"];

/// Cursor over one mapping that remembers which keys were consumed.
struct Section<'a> {
    path: String,
    map: &'a Mapping,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(path: impl Into<String>, map: &'a Mapping) -> Self {
        Self { path: path.into(), map, used: BTreeSet::new() }
    }

    fn of(parent: &mut Section<'a>, key: &str) -> Result<Self, WorkspaceError> {
        let path = parent.child(key);
        match parent.get(key) {
            Some(Value::Mapping(m)) => Ok(Self::new(path, m)),
            Some(_) => Err(WorkspaceError::MalformedDocument(format!("`{path}` must be a mapping"))),
            None => Err(WorkspaceError::MissingField(key.to_string())),
        }
    }

    fn child(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a Value> {
        self.used.insert(key.to_string());
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn required(&mut self, key: &str) -> Result<&'a Value, WorkspaceError> {
        self.get(key).ok_or_else(|| WorkspaceError::MissingField(key.to_string()))
    }

    fn string(&mut self, key: &str) -> Result<String, WorkspaceError> {
        let path = self.child(key);
        scalar_string(self.required(key)?).ok_or_else(|| WorkspaceError::MalformedDocument(format!("`{path}` must be a scalar")))
    }

    fn optional_string(&mut self, key: &str) -> Result<Option<String>, WorkspaceError> {
        let path = self.child(key);
        match self.get(key) {
            None => Ok(None),
            Some(v) => scalar_string(v)
                .map(Some)
                .ok_or_else(|| WorkspaceError::MalformedDocument(format!("`{path}` must be a scalar"))),
        }
    }

    fn integer(&mut self, key: &str) -> Result<i64, WorkspaceError> {
        let path = self.child(key);
        self.required(key)?
            .as_i64()
            .ok_or_else(|| WorkspaceError::MalformedDocument(format!("`{path}` must be an integer")))
    }

    fn real(&mut self, key: &str) -> Result<f64, WorkspaceError> {
        let path = self.child(key);
        self.required(key)?
            .as_f64()
            .ok_or_else(|| WorkspaceError::MalformedDocument(format!("`{path}` must be a number")))
    }

    fn optional_real(&mut self, key: &str) -> Result<Option<f64>, WorkspaceError> {
        let path = self.child(key);
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| WorkspaceError::MalformedDocument(format!("`{path}` must be a number"))),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<bool, WorkspaceError> {
        let path = self.child(key);
        self.required(key)?
            .as_bool()
            .ok_or_else(|| WorkspaceError::MalformedDocument(format!("`{path}` must be true or false")))
    }

    /// Unconsumed keys, keyed by dotted path.
    fn leftovers(&self, out: &mut BTreeMap<String, Value>) {
        for (k, v) in self.map {
            let key = scalar_string(k).unwrap_or_default();
            if !self.used.contains(&key) {
                out.insert(self.child(&key), v.clone());
            }
        }
    }
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn positive(name: &str, v: i64) -> Result<usize, WorkspaceError> {
    if v < 1 {
        return Err(WorkspaceError::InvariantViolation(format!("{name} ≥ 1")));
    }
    Ok(v as usize)
}

fn seed(section: &mut Section<'_>, key: &str) -> Result<u64, WorkspaceError> {
    let v = section.integer(key)?;
    u64::try_from(v).map_err(|_| WorkspaceError::InvariantViolation(format!("seeds.{key} ≥ 0")))
}

fn parse_provider(v: &Value, index: usize) -> Result<ProviderPin, WorkspaceError> {
    let Value::Mapping(map) = v else {
        return Err(WorkspaceError::MalformedDocument(format!("providers[{index}] must be a mapping")));
    };
    let mut s = Section::new(format!("providers[{index}]"), map);
    let pin = ProviderPin {
        name: s.string("name")?,
        model: s.string("model")?,
        version: s.string("version")?,
        precision: s.string("precision")?,
        device: s.string("device")?,
        notes: s.optional_string("notes")?.unwrap_or_default(),
        config: s.optional_string("config")?,
        endpoint: s.optional_string("endpoint")?,
    };
    for (field, value) in [
        ("name", &pin.name),
        ("model", &pin.model),
        ("version", &pin.version),
        ("precision", &pin.precision),
        ("device", &pin.device),
    ] {
        if value.trim().is_empty() {
            return Err(WorkspaceError::InvariantViolation(format!("providers[{index}].{field} non-empty")));
        }
    }
    Ok(pin)
}

/// Parse and check a manifest. Cross-artifact rules (ids resolve, template
/// count, `max_tokens` for categorical L1) are checked when the workspace
/// is loaded, since they need the artifacts themselves.
pub fn parse_manifest(source: &str) -> Result<Manifest, WorkspaceError> {
    let doc: Value = serde_yaml::from_str(source).map_err(|e| WorkspaceError::MalformedDocument(e.to_string()))?;
    let Value::Mapping(root_map) = &doc else {
        return Err(WorkspaceError::MalformedDocument("manifest root must be a mapping".into()));
    };
    let mut root = Section::new("", root_map);
    let mut extra = BTreeMap::new();

    let mut project = Section::of(&mut root, "project")?;
    let title = project.optional_string("title")?.unwrap_or_default();
    let run_id = project.string("run_id")?;
    let data_root = project.optional_string("data_root")?.unwrap_or_else(|| "data/".into());
    let out_root = project.optional_string("out_root")?.unwrap_or_else(|| "runs/<run_id>/".into());
    project.leftovers(&mut extra);

    let mut design = Section::of(&mut root, "design")?;
    let level_value = design.required("level")?;
    let level = Level::parse(level_value)
        .ok_or_else(|| WorkspaceError::InvariantViolation("level ∈ {1, 2, 3, pipeline}".into()))?;
    let scope_text = design.string("scope")?;
    let scope = Scope::parse(&scope_text)
        .ok_or_else(|| WorkspaceError::InvariantViolation("scope ∈ {pointwise, pairwise, listwise, setwise}".into()))?;
    let artifact_ids = ArtifactIds {
        rubric_id: design.string("rubric_id")?,
        label_map_id: design.string("label_map_id")?,
        schema_id: design.string("schema_id")?,
        prompts_id: design.string("prompts_id")?,
    };
    let randomize_options = design.boolean("randomize_options")?;
    let p = positive("P", design.integer("P")?)?;
    let s = positive("S", design.integer("S")?)?;
    let m = positive("M", design.integer("M")?)?;
    design.leftovers(&mut extra);

    let mut env = Section::of(&mut root, "environment")?;
    let providers = match env.required("providers")? {
        Value::Sequence(seq) => seq.iter().enumerate().map(|(i, v)| parse_provider(v, i)).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(WorkspaceError::MalformedDocument("`environment.providers` must be a list".into())),
    };
    if providers.len() < m {
        return Err(WorkspaceError::InvariantViolation(format!("providers ≥ M ({} < {m})", providers.len())));
    }
    let mut dec = Section::of(&mut env, "decoding")?;
    let mut temps = Section::of(&mut dec, "temperature")?;
    let decoding = Decoding {
        temperature_estimation: temps.real("estimation")?,
        temperature_final: temps.real("final")?,
        top_p: dec.real("top_p")?,
        max_tokens: {
            let v = dec.integer("max_tokens")?;
            u32::try_from(v).ok().filter(|&v| v >= 1).ok_or_else(|| WorkspaceError::InvariantViolation("max_tokens ≥ 1".into()))?
        },
    };
    temps.leftovers(&mut extra);
    dec.leftovers(&mut extra);
    if !(decoding.temperature_estimation >= 0.0) || !(decoding.temperature_final >= 0.0) {
        return Err(WorkspaceError::InvariantViolation("temperature ≥ 0".into()));
    }
    if !(decoding.top_p > 0.0 && decoding.top_p <= 1.0) {
        return Err(WorkspaceError::InvariantViolation("top_p ∈ (0, 1]".into()));
    }
    let mut seeds_section = Section::of(&mut env, "seeds")?;
    let seeds = Seeds {
        collection: seed(&mut seeds_section, "collection")?,
        shuffling: seed(&mut seeds_section, "shuffling")?,
    };
    seeds_section.leftovers(&mut extra);
    env.leftovers(&mut extra);

    let mut inputs_section = Section::of(&mut root, "inputs")?;
    let inputs = Inputs {
        items_path: inputs_section.string("items_path")?,
        audit_set_path: inputs_section.string("audit_set_path")?,
        gold_items_path: inputs_section.optional_string("gold_items_path")?,
    };
    inputs_section.leftovers(&mut extra);

    let mut out = Section::of(&mut root, "outputs")?;
    let deidentify_fields = match out.get("deidentify_fields") {
        None => Vec::new(),
        Some(Value::Sequence(seq)) => seq
            .iter()
            .map(|v| scalar_string(v).ok_or_else(|| WorkspaceError::MalformedDocument("`outputs.deidentify_fields` must list strings".into())))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(WorkspaceError::MalformedDocument("`outputs.deidentify_fields` must be a list".into())),
    };
    let outputs = Outputs {
        logs_dir: out.string("logs_dir")?,
        dumps_dir: out.string("dumps_dir")?,
        aggregates_dir: out.string("aggregates_dir")?,
        methods_table_tex: out.string("methods_table_tex")?,
        materials_bundle: out.string("materials_bundle")?,
        deidentify_fields,
    };
    out.leftovers(&mut extra);

    let mut tri = Section::of(&mut root, "triage")?;
    let triage = TriageRef {
        policy_id: tri.string("policy_id")?,
        reviewers_roster: tri.string("reviewers_roster")?,
        kappa_floor: tri.optional_real("kappa_floor")?.unwrap_or(DEFAULT_KAPPA_FLOOR),
        margin_floor: tri.optional_real("margin_floor")?.unwrap_or(DEFAULT_MARGIN_FLOOR),
        escalate_schema_failures: match tri.get("escalate_schema_failures") {
            None => true,
            Some(v) => v
                .as_bool()
                .ok_or_else(|| WorkspaceError::MalformedDocument("`triage.escalate_schema_failures` must be true or false".into()))?,
        },
    };
    if !(triage.margin_floor >= 0.0) {
        return Err(WorkspaceError::InvariantViolation("margin_floor ≥ 0".into()));
    }
    tri.leftovers(&mut extra);
    root.leftovers(&mut extra);

    Ok(Manifest {
        title,
        run_id,
        data_root,
        out_root,
        level,
        scope,
        artifact_ids,
        randomize_options,
        p,
        s,
        m,
        providers,
        decoding,
        seeds,
        inputs,
        outputs,
        triage,
        extra,
    })
}
