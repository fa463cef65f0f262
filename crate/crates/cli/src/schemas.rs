//! JSON schemas of every config file and `--json` report. The copies under
//! `schemas/v1/` are checked against these by a test.

use std::path::Path;

use schemars::{schema_for, Schema};
use vidinpaint_core::data::GpVideoSpec;
use vidinpaint_core::oracle_check::{OracleCheckConfig, OracleReport};
use vidinpaint_core::train::TrainConfig;
use vidinpaint_core::{SamplerConfig, SamplingScheme};

use crate::reports::*;

pub const VERSION: u32 = 1;

/// `(name, schema)` pairs; file names are `<name>.schema.json`.
pub fn all() -> Vec<(&'static str, Schema)> {
    let mut out = vec![
        ("data_config", schema_for!(DataConfig)),
        ("masks_config", schema_for!(MasksConfig)),
        ("train_config", schema_for!(TrainConfig)),
        ("sampler_config", schema_for!(SamplerConfig)),
        ("gp_spec", schema_for!(GpVideoSpec)),
        ("scheme", schema_for!(SamplingScheme)),
        ("eval_manifest", schema_for!(EvalManifest)),
        ("oracle_check_config", schema_for!(OracleCheckConfig)),
        ("gen_data_report", schema_for!(GenDataReport)),
        ("gen_masks_report", schema_for!(GenMasksReport)),
        ("plan_report", schema_for!(PlanReport)),
        ("train_report", schema_for!(TrainReport)),
        ("inpaint_report", schema_for!(InpaintReport)),
        ("inpaint_trace", schema_for!(InpaintTrace)),
        ("eval_report", schema_for!(EvalReport)),
        ("oracle_report", schema_for!(OracleReport)),
    ];
    for (name, s) in &mut out {
        s.insert(
            "$id".into(),
            format!("https://vidinpaint.invalid/schemas/v{VERSION}/{name}.schema.json").into(),
        );
    }
    out
}

pub fn render(schema: &Schema) -> String {
    let mut s = serde_json::to_string_pretty(schema).expect("schema serialises");
    s.push('\n');
    s
}

pub fn find(name: &str) -> Option<Schema> {
    all().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
}

pub fn write_all(dir: &Path) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![];
    for (name, s) in all() {
        let file = format!("{name}.schema.json");
        std::fs::write(dir.join(&file), render(&s))?;
        files.push(file);
    }
    Ok(files)
}
