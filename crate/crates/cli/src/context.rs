//! Loaded workspace plus the resolved output locations of one run.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use annokit::annotators::live::LiveGateway;
use annokit::annotators::{AnnotatorGateway, SyntheticAnnotator, SyntheticGateway};
use annokit::orchestrator::{Pass, RunStore};
use annokit::workspace::{Item, Workspace};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CmdError, CmdResult};
use crate::GlobalArgs;

pub struct Context {
    pub ws: Workspace,
    pub manifest_path: PathBuf,
    /// Base directory for every output path (the manifest directory unless
    /// `--out` is given).
    pub out_base: PathBuf,
}

impl Context {
    pub fn load(global: &GlobalArgs) -> CmdResult<Self> {
        let mut ws = Workspace::load(&global.manifest).map_err(|e| CmdError::config(e).context(format!("loading {}", global.manifest.display())))?;
        if let Some(id) = &global.run_id {
            ws.manifest.run_id = id.clone();
        }
        let out_base = global.out.clone().unwrap_or_else(|| ws.root.clone());
        let ctx = Self { ws, manifest_path: global.manifest.clone(), out_base };
        if let Some(seed) = global.seed_override {
            if ctx.store().is_sealed(Pass::Estimation) || ctx.store().is_sealed(Pass::Final) {
                return Err(CmdError::config_msg(format!(
                    "--seed-override refused: run `{}` is sealed; start a new run id instead",
                    ctx.run_id()
                )));
            }
            let mut ctx = ctx;
            ctx.ws.manifest.seeds.collection = seed;
            return Ok(ctx);
        }
        Ok(ctx)
    }

    pub fn run_id(&self) -> &str {
        &self.ws.manifest.run_id
    }

    /// The same workspace pointed at a different run id.
    pub fn for_run(&self, run_id: &str) -> Self {
        let mut ws = self.ws.clone();
        ws.manifest.run_id = run_id.to_string();
        Self { ws, manifest_path: self.manifest_path.clone(), out_base: self.out_base.clone() }
    }

    fn out(&self, relative: &str) -> PathBuf {
        self.out_base.join(self.ws.manifest.expand(relative))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out(&self.ws.manifest.out_root)
    }

    pub fn agg_dir(&self) -> PathBuf {
        self.out(&self.ws.manifest.outputs.aggregates_dir)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.run_dir().join("reports")
    }

    pub fn methods_tex_path(&self) -> PathBuf {
        self.out(&self.ws.manifest.outputs.methods_table_tex)
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.out(&self.ws.manifest.outputs.materials_bundle)
    }

    pub fn audit_ref_path(&self) -> PathBuf {
        self.run_dir().join("audit_ref.json")
    }

    pub fn drift_log_path(&self) -> PathBuf {
        self.out_base.join("drift_log.yaml")
    }

    pub fn store(&self) -> RunStore {
        RunStore::new(
            self.run_id(),
            self.run_dir(),
            self.out(&self.ws.manifest.outputs.dumps_dir),
            self.out(&self.ws.manifest.outputs.logs_dir),
        )
    }

    pub fn input(&self, relative: &str) -> PathBuf {
        self.ws.resolve(relative)
    }

    pub fn items(&self) -> CmdResult<Vec<Item>> {
        Ok(self.ws.items()?)
    }

    /// Gold labels by item id: the item's own `gold_label`, else the
    /// optional gold file (`{"item_id": …, "gold_label": …}` per line).
    pub fn gold(&self, items: &[Item]) -> CmdResult<BTreeMap<String, String>> {
        #[derive(Deserialize)]
        struct GoldRow {
            item_id: String,
            gold_label: Value,
        }
        let mut gold: BTreeMap<String, String> = BTreeMap::new();
        if let Some(rel) = &self.ws.manifest.inputs.gold_items_path {
            let path = self.input(rel);
            if path.is_file() {
                let text = std::fs::read_to_string(&path)?;
                for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let row: GoldRow = serde_json::from_str(line)
                        .map_err(|e| CmdError::config_msg(format!("{}:{}: {e}", path.display(), i + 1)))?;
                    if let Some(s) = value_label(&row.gold_label) {
                        gold.insert(row.item_id, s);
                    }
                }
            }
        }
        for item in items {
            if let Some(s) = item.gold_label.as_ref().and_then(value_label) {
                gold.insert(item.item_id.clone(), s);
            }
        }
        Ok(gold)
    }
}

fn value_label(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GatewayKind {
    /// Synthetic pins run offline, other pins go to their endpoint.
    Auto,
    Synthetic,
    Live,
}

/// One gateway per model, built before any cell runs so that missing
/// configuration fails cleanly.
pub fn build_gateways(ctx: &Context, kind: GatewayKind, items: &[Item]) -> CmdResult<Vec<Box<dyn AnnotatorGateway>>> {
    let m = &ctx.ws.manifest;
    let labels = &ctx.ws.label_map;
    let mut truth: Option<HashMap<String, usize>> = None;
    let mut out: Vec<Box<dyn AnnotatorGateway>> = Vec::new();
    for pin in m.providers.iter().take(m.m) {
        let synthetic = match kind {
            GatewayKind::Auto => pin.is_synthetic(),
            GatewayKind::Synthetic => true,
            GatewayKind::Live => false,
        };
        if !synthetic {
            let g = LiveGateway::from_pin(pin).map_err(|e| CmdError::config(e).context(format!("provider {}", pin.label())))?;
            out.push(Box::new(g));
            continue;
        }
        let cfg = pin
            .config
            .as_ref()
            .ok_or_else(|| CmdError::config_msg(format!("provider {} has no synthetic `config` file", pin.label())))?;
        let annotator = load_synthetic(&ctx.input(cfg))?;
        if truth.is_none() {
            let gold = ctx.gold(items)?;
            let mut t = HashMap::new();
            for item in items {
                let label = gold
                    .get(&item.item_id)
                    .ok_or_else(|| CmdError::config_msg(format!("synthetic annotation needs a gold label for item `{}`", item.item_id)))?;
                let idx = labels.index_of(label).ok_or_else(|| CmdError::config_msg(format!("gold label `{label}` is not in the label map")))?;
                t.insert(item.item_id.clone(), idx);
            }
            truth = Some(t);
        }
        let g = SyntheticGateway::new(pin.label(), annotator, labels.clone(), truth.clone().expect("set above"))
            .map_err(|e| CmdError::config(e).context(format!("provider {}", pin.label())))?;
        out.push(Box::new(g));
    }
    Ok(out)
}

pub fn load_synthetic(path: &Path) -> CmdResult<SyntheticAnnotator> {
    let text = std::fs::read_to_string(path).map_err(|e| CmdError::config(e).context(format!("reading {}", path.display())))?;
    let a: SyntheticAnnotator = serde_json::from_str(&text).map_err(|e| CmdError::config(e).context(format!("parsing {}", path.display())))?;
    a.check().map_err(|e| CmdError::config(e).context(format!("checking {}", path.display())))?;
    Ok(a)
}
