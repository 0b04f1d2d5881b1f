use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hypergcl::config::{hex_digest, RunConfigFile};
use hypergcl::data::Dataset;
use hypergcl::graph::ViewKind;
use hypergcl::netcl::NegativeStrategy;
use hypergcl::oracles::OracleReport;
use hypergcl::trainer::{prepare, run_ablation, run_seeds, sweep_global_nodes, Component, RunResult, SeedRun, TrainConfig};
use hypergcl::verify::run_suite;
use hypergcl::views;
use serde_json::json;

use crate::{plot, Exit, EXIT_USAGE, EXIT_VERIFY_FAILED};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULT_FILE: &str = "result.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "sweep.svg";
pub const VERIFY_CSV: &str = "verify.csv";

struct Loaded {
    cfg: TrainConfig,
    data: Dataset,
    seeds: Vec<u64>,
    hash: String,
}

fn load(config: &Path, seed_list: Option<Vec<u64>>, strategy: Option<NegativeStrategy>) -> Result<Loaded> {
    let mut file = RunConfigFile::load(config)?;
    if let Some(seeds) = seed_list {
        file.trainer.seeds = seeds;
    }
    if let Some(s) = strategy {
        file.netcl.strategy = s;
    }
    file.validate()?;
    let data = file.load_dataset(Path::new("data"))?;
    log::info!(
        "dataset {}: {} nodes, {} edges, {} features, {} classes",
        data.name,
        data.num_nodes(),
        data.graph.num_edges(),
        data.features.dim(),
        data.num_classes()
    );
    Ok(Loaded {
        cfg: file.train_config(),
        seeds: file.trainer.seeds.clone(),
        hash: file.hash(),
        data,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn model_label(cfg: &TrainConfig) -> String {
    match cfg.strategy {
        NegativeStrategy::Distance => "HyperGCL_dis".into(),
        NegativeStrategy::Similarity => "HyperGCL_sim".into(),
    }
}

pub fn build_views(config: &Path, out_dir: &Path) -> Result<()> {
    let l = load(config, None, None)?;
    let views = views::build_views(
        &l.data.graph,
        &l.data.features,
        &l.cfg.attribute_view,
        &l.cfg.global_view,
        l.cfg.view_seed,
    )?;
    create_dir(out_dir)?;
    let mut entries = serde_json::Map::new();
    let mut digest_input = l.hash.clone();
    for kind in ViewKind::ALL {
        let h = views.get(kind);
        let text = h.to_text();
        let file = format!("{}.hg", kind.tag());
        fs::write(out_dir.join(&file), &text).with_context(|| format!("writing {file}"))?;
        let sha = hex_digest(text.as_bytes());
        digest_input.push_str(&sha);
        entries.insert(
            kind.tag().into(),
            json!({
                "file": file,
                "hyperedges": h.num_hyperedges(),
                "incidences": h.num_incidences(),
                "sha256": sha,
            }),
        );
    }
    let manifest = json!({
        "dataset": l.data.name,
        "num_nodes": l.data.num_nodes(),
        "config_hash": l.hash,
        "views": entries,
        "manifest_hash": hex_digest(digest_input.as_bytes()),
    });
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    println!(
        "#N={} #E^a={} #E^l={} #E^g={}",
        l.data.num_nodes(),
        views.attribute.num_hyperedges(),
        views.local.num_hyperedges(),
        views.global.num_hyperedges()
    );
    Ok(())
}

fn write_curves(path: &Path, runs: &[SeedRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "epoch",
        "loss_total",
        "loss_attribute_local",
        "loss_global_local",
        "loss_attribute_global",
        "loss_supervised",
        "val_accuracy",
    ])?;
    for run in runs {
        for r in &run.curve {
            w.write_record([
                run.seed.to_string(),
                r.epoch.to_string(),
                r.loss.total.to_string(),
                r.loss.attribute_local.to_string(),
                r.loss.global_local.to_string(),
                r.loss.attribute_global.to_string(),
                r.loss.supervised.to_string(),
                r.val_accuracy.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn train(config: &Path, seed_list: Option<Vec<u64>>, strategy: Option<NegativeStrategy>, out_dir: &Path) -> Result<()> {
    let l = load(config, seed_list, strategy)?;
    let prepared = prepare(&l.data, &l.cfg)?;
    let label = model_label(&l.cfg);
    let (mut result, runs, best) = run_seeds(&l.data, &prepared, &l.cfg, &l.seeds, &label, &l.hash)?;
    create_dir(out_dir)?;
    write_curves(&out_dir.join(CURVES_FILE), &runs)?;
    result.curves_path = Some(CURVES_FILE.into());
    write_json(&out_dir.join(RESULT_FILE), &result)?;
    if let Some(model) = best {
        model.store.to_checkpoint(&l.hash).write(out_dir.join(CHECKPOINT_FILE))?;
    }
    for r in &runs {
        log::info!(
            "seed {}: test {:.2} (best val {:.2} at epoch {}, {} epochs)",
            r.seed,
            r.test_accuracy,
            r.best_val_accuracy,
            r.best_epoch,
            r.epochs_run
        );
    }
    println!("{} on {}: {}", result.label, l.data.name, result.table_cell());
    Ok(())
}

pub fn parse_components(names: &[String]) -> Result<Vec<Component>> {
    let mut out = Vec::new();
    for name in names.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let expanded: Vec<Component> = match name.to_ascii_lowercase().as_str() {
            "main" => Component::MAIN.to_vec(),
            "all" => Component::ALL.to_vec(),
            _ => match name.parse() {
                Ok(c) => vec![c],
                Err(e) => {
                    eprintln!("error: {e}");
                    return Err(Exit(EXIT_USAGE).into());
                }
            },
        };
        for c in expanded {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

pub fn ablate(
    config: &Path,
    components: &[String],
    seed_list: Option<Vec<u64>>,
    strategy: Option<NegativeStrategy>,
    out_dir: &Path,
) -> Result<()> {
    let components = parse_components(components)?;
    let l = load(config, seed_list, strategy)?;
    let prepared = prepare(&l.data, &l.cfg)?;
    let (full, _, _) = run_seeds(&l.data, &prepared, &l.cfg, &l.seeds, &model_label(&l.cfg), &l.hash)?;
    let mut rows = vec![full];
    for c in components {
        log::info!("ablation: without {c}");
        rows.push(run_ablation(&l.data, &l.cfg, c, &l.seeds, &l.hash)?);
    }
    create_dir(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join(ABLATION_CSV))?;
    w.write_record(["label", "mean", "std", "num_seeds"])?;
    for r in &rows {
        w.write_record([r.label.clone(), r.mean.to_string(), r.std.to_string(), r.seeds.len().to_string()])?;
    }
    w.flush()?;
    write_json(&out_dir.join(ABLATION_JSON), &rows)?;
    let width = rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0);
    for r in &rows {
        println!("{:<width$}  {}", r.label, r.table_cell());
    }
    Ok(())
}

/// Parses `a..b` / `a..=b` / `a-b` (inclusive) or a comma list.
pub fn parse_ng_range(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    let bounds = s.split_once("..=").or_else(|| s.split_once("..")).or_else(|| s.split_once('-'));
    let values: Vec<usize> = match bounds {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
            if a > b {
                bail!("empty n_g range {s}");
            }
            (a..=b).collect()
        }
        None => s.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>()?,
    };
    if values.is_empty() {
        bail!("empty n_g range");
    }
    Ok(values)
}

pub fn sweep(
    config: &Path,
    ng_range: &str,
    seed_list: Option<Vec<u64>>,
    strategy: Option<NegativeStrategy>,
    out_dir: &Path,
) -> Result<()> {
    let values = parse_ng_range(ng_range).map_err(|e| {
        eprintln!("error: bad --ng-range: {e}");
        anyhow::Error::from(Exit(EXIT_USAGE))
    })?;
    let l = load(config, seed_list, strategy)?;
    let results: Vec<(usize, RunResult)> = sweep_global_nodes(&l.data, &l.cfg, &values, &l.seeds, &l.hash)?;
    create_dir(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join(SWEEP_CSV))?;
    w.write_record(["n_g", "mean", "std", "num_seeds"])?;
    for (n_g, r) in &results {
        w.write_record([n_g.to_string(), r.mean.to_string(), r.std.to_string(), r.seeds.len().to_string()])?;
    }
    w.flush()?;
    let points: Vec<(usize, f64)> = results.iter().map(|(n, r)| (*n, r.mean)).collect();
    plot::sweep_chart(&out_dir.join(SWEEP_SVG), &points, &l.data.name)?;
    for (n_g, r) in &results {
        println!("n_g={n_g}  {}", r.table_cell());
    }
    Ok(())
}

pub fn verify(out_dir: &Path) -> Result<()> {
    let reports = run_suite();
    create_dir(out_dir)?;
    let path: PathBuf = out_dir.join(VERIFY_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(OracleReport::CSV_HEADER)?;
    for r in &reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    let failed: Vec<&OracleReport> = reports.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        eprintln!("FAIL {}: expected {} got {} (tolerance {})", r.case_id, r.expected, r.actual, r.tolerance);
    }
    println!("{} / {} oracle cases passed; report at {}", reports.len() - failed.len(), reports.len(), path.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Exit(EXIT_VERIFY_FAILED).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ng_range_forms() {
        assert_eq!(parse_ng_range("0..6").unwrap(), (0..=6).collect::<Vec<_>>());
        assert_eq!(parse_ng_range("2-4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_ng_range("3").unwrap(), vec![3]);
        assert_eq!(parse_ng_range("1,5").unwrap(), vec![1, 5]);
        assert!(parse_ng_range("5..2").is_err());
        assert!(parse_ng_range("x").is_err());
    }

    #[test]
    fn component_lists() {
        assert!(parse_components(&[]).unwrap().is_empty());
        assert_eq!(parse_components(&["main".into()]).unwrap().len(), 6);
        assert_eq!(parse_components(&["lc".into(), "lc".into()]).unwrap(), vec![Component::Lc]);
        assert!(parse_components(&["bogus".into()]).is_err());
    }
}
