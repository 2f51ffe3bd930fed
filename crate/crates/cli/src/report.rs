//! Output structures shared by the JSON and text renderers.

use ebound::bounds::{Analysis, DeviationRow, PartBounds};
use ebound::cfg::HarnessId;
use ebound::evo::Direction;
use ebound::hcir::SizeMetric;
use ebound::simkernel::EnergyTrace;
use serde_json::json;

pub fn metric_text(metric: SizeMetric) -> &'static str {
    match metric {
        SizeMetric::IntValue => "N = value of the size argument",
        SizeMetric::ArrayLength => "N = length of the input array",
    }
}

pub fn analyze_json(analysis: &Analysis) -> serde_json::Value {
    let pair = &analysis.pair;
    let bound = |r: &ebound::solver::SolveResult| {
        json!({
            "text": r.render(),
            "valid_from": r.valid_from,
            "warnings": r.warnings,
        })
    };
    json!({
        "kind": "analysis",
        "function": pair.function,
        "metric": metric_text(pair.metric.metric),
        "ub": bound(&pair.ub),
        "lb": bound(&pair.lb),
        "model_hash": pair.model_hash,
        "ea_config_hash": pair.ea_config_hash,
    })
}

pub fn analyze_text(analysis: &Analysis, direction: Option<Direction>) -> String {
    let pair = &analysis.pair;
    let mut out = String::new();
    out.push_str(&format!("function: {}\n", pair.function));
    out.push_str(&format!("metric:   {}\n", metric_text(pair.metric.metric)));
    if direction.is_none() || direction == Some(Direction::Upper) {
        out.push_str(&format!("ub(N) = {}   [pJ]\n", pair.ub.render()));
        for w in &pair.ub.warnings {
            out.push_str(&format!("  note: {w}\n"));
        }
    }
    if direction.is_none() || direction == Some(Direction::Lower) {
        out.push_str(&format!("lb(N) = {}   [pJ]\n", pair.lb.render()));
        for w in &pair.lb.warnings {
            out.push_str(&format!("  note: {w}\n"));
        }
    }
    out.push_str(&format!(
        "model {}  ea-config {}\n",
        &pair.model_hash[..12],
        &pair.ea_config_hash[..12]
    ));
    out
}

pub struct BlockRow {
    pub part: HarnessId,
    pub name: String,
    pub function: String,
    pub inputs: Vec<String>,
    pub upper_pj: String,
    pub lower_pj: String,
    pub upper_witness: Vec<u32>,
    pub lower_witness: Vec<u32>,
    pub generations: u32,
    pub oracle: Option<(String, String)>,
}

pub fn block_rows(
    analysis: &Analysis,
    oracle: &std::collections::BTreeMap<HarnessId, (String, String)>,
) -> Vec<BlockRow> {
    analysis
        .block_bounds
        .iter()
        .map(|(id, PartBounds { upper, lower })| {
            let part = analysis.harness.part(*id);
            BlockRow {
                part: *id,
                name: part.name.clone(),
                function: part.function.clone(),
                inputs: part.inputs.iter().map(|l| l.to_string()).collect(),
                upper_pj: format!("{}", upper.value),
                lower_pj: format!("{}", lower.value),
                upper_witness: upper.witness.clone(),
                lower_witness: lower.witness.clone(),
                generations: upper.generations_run.max(lower.generations_run),
                oracle: oracle.get(id).cloned(),
            }
        })
        .collect()
}

pub fn blocks_text(rows: &[BlockRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:<10} {:<24} {:>14} {:>14} {:>6}\n",
        "function", "block", "gen set", "lower", "upper", "gens"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:<10} {:<24} {:>14} {:>14} {:>6}\n",
            r.function,
            r.name,
            format!("{{{}}}", r.inputs.join(", ")),
            r.lower_pj,
            r.upper_pj,
            r.generations,
        ));
        if let Some((omin, omax)) = &r.oracle {
            out.push_str(&format!(
                "{:<14} {:<10} {:<24} {:>14} {:>14} {:>6}\n",
                "", "", "  (oracle)", omin, omax, ""
            ));
        }
    }
    out
}

pub fn blocks_json(rows: &[BlockRow], cfg_doc: serde_json::Value) -> serde_json::Value {
    json!({
        "kind": "blocks",
        "blocks": rows.iter().map(|r| json!({
            "function": r.function,
            "name": r.name,
            "gen": r.inputs,
            "lower_pj": r.lower_pj,
            "upper_pj": r.upper_pj,
            "lower_witness": r.lower_witness,
            "upper_witness": r.upper_witness,
            "generations": r.generations,
            "oracle": r.oracle.as_ref().map(|(lo, hi)| json!({"min": lo, "max": hi})),
        })).collect::<Vec<_>>(),
        "cfg": cfg_doc,
    })
}

pub fn simulate_text(trace: &EnergyTrace, block_names: &[(usize, String)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("total:        {}\n", trace.total));
    out.push_str(&format!("instructions: {}\n", trace.instruction_count));
    out.push_str(&format!("result (r0):  {}\n", trace.result));
    out.push_str("block counts:\n");
    for (idx, name) in block_names {
        let count = trace.block_counts.get(idx).copied().unwrap_or(0);
        out.push_str(&format!("  {name:<12} {count}\n"));
    }
    out
}

pub fn simulate_json(trace: &EnergyTrace, block_names: &[(usize, String)]) -> serde_json::Value {
    json!({
        "kind": "trace",
        "total_pj": format!("{}", trace.total),
        "instructions": trace.instruction_count,
        "result": trace.result,
        "block_counts": block_names.iter().map(|(idx, name)| {
            json!({"block": name, "count": trace.block_counts.get(idx).copied().unwrap_or(0)})
        }).collect::<Vec<_>>(),
    })
}

pub struct FunctionBoundsOut {
    pub program: String,
    pub metric: String,
    pub ub: String,
    pub lb: String,
}

pub fn bench_json(
    seed: u64,
    model_hash: &str,
    functions: &[FunctionBoundsOut],
    rows: &[DeviationRow],
) -> serde_json::Value {
    json!({
        "kind": "bench",
        "seed": seed,
        "model_hash": model_hash,
        "functions": functions.iter().map(|f| json!({
            "program": f.program,
            "metric": f.metric,
            "ub": f.ub,
            "lb": f.lb,
        })).collect::<Vec<_>>(),
        "rows": rows,
    })
}

pub fn bench_text(
    seed: u64,
    model_hash: &str,
    functions: &[FunctionBoundsOut],
    rows: &[DeviationRow],
) -> String {
    let mut out = String::new();
    out.push_str(&format!("bench  seed={seed}  model={}\n\n", &model_hash[..12]));
    out.push_str("inferred energy bound functions [pJ]:\n");
    for f in functions {
        out.push_str(&format!(
            "  {:<14} ({})\n      ub = {}\n      lb = {}\n",
            f.program, f.metric, f.ub, f.lb
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<14} {:>3} {:<4} {:<7} {:>12} {:>12} {:>12} {:>8} {:>8}\n",
        "program", "N", "App", "data", "Est(pJ)", "Prof(pJ)", "Obs(pJ)", "D%", "PrD%"
    ));
    for r in rows {
        let app = match r.direction {
            Direction::Upper => "U",
            Direction::Lower => "L",
        };
        out.push_str(&format!(
            "{:<14} {:>3} {:<4} {:<7} {:>12.3} {:>12.3} {:>12.3} {:>+8.1} {:>+8.1}\n",
            r.program, r.n, app, r.data, r.est_pj, r.prof_pj, r.obs_pj, r.d_pct, r.prd_pct
        ));
    }
    out
}

/// Renders a saved JSON document (from `--json` runs) as text.
pub fn render_saved(doc: &serde_json::Value) -> String {
    match doc.get("kind").and_then(|k| k.as_str()) {
        Some("bench") => {
            let seed = doc["seed"].as_u64().unwrap_or(0);
            let model = doc["model_hash"].as_str().unwrap_or("????????????");
            let functions: Vec<FunctionBoundsOut> = doc["functions"]
                .as_array()
                .map(|fs| {
                    fs.iter()
                        .map(|f| FunctionBoundsOut {
                            program: f["program"].as_str().unwrap_or("?").to_string(),
                            metric: f["metric"].as_str().unwrap_or("?").to_string(),
                            ub: f["ub"].as_str().unwrap_or("?").to_string(),
                            lb: f["lb"].as_str().unwrap_or("?").to_string(),
                        })
                        .collect()
                })
                .unwrap_or_default();
            let rows: Vec<DeviationRow> =
                serde_json::from_value(doc["rows"].clone()).unwrap_or_default();
            bench_text(seed, model, &functions, &rows)
        }
        Some("analysis") => {
            let mut out = String::new();
            out.push_str(&format!(
                "function: {}\nmetric:   {}\n",
                doc["function"].as_str().unwrap_or("?"),
                doc["metric"].as_str().unwrap_or("?")
            ));
            out.push_str(&format!(
                "ub(N) = {}   [pJ]\nlb(N) = {}   [pJ]\n",
                doc["ub"]["text"].as_str().unwrap_or("?"),
                doc["lb"]["text"].as_str().unwrap_or("?")
            ));
            out
        }
        _ => serde_json::to_string_pretty(doc).unwrap_or_default(),
    }
}
