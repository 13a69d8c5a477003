use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use chrono::{Duration, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use stsc_core::data::{
    clean_missing, clean_outliers, format_timestamp, generate_synthetic, load_distances_csv, load_sensors_csv,
    load_speed_csv, write_atomic, write_sensors_csv, write_speed_csv, SensorNetwork, SpeedMatrix, STEP_MINUTES,
};
use stsc_core::dataset::{
    build_dataset, build_sample, load_dataset, resolve_targets, save_dataset, stack_x, stack_y, DatasetSplit, Sample,
    HORIZON,
};
use stsc_core::eval::{
    actual_future, evaluate_horizons, grouped_mae, historical_average, kruskal_wallis, metric_chart_svg, metrics_csv,
    multiple_comparison, persistence, rows_to_tensor, target_history, KnnRegressor, Metric, MetricsReport, MlpBaseline,
    HORIZONS_MIN,
};
use stsc_core::model::{
    assemble_cross_connected, build_dae_x, build_dae_y, build_lfmm, load_checkpoint, predict, pretrain_dae,
    save_checkpoint, train_cross, Checkpoint, CrossModel, ModelKind, Phase,
};
use stsc_core::neighbors::{rankings_csv, select_neighbors, NeighborQuery};
use stsc_core::{Error, Result};

use crate::config::{Layout, RunConfig};

pub const TECH_PROPOSED: &str = "proposed";
pub const TECH_PERSISTENCE: &str = "persistence";
pub const TECH_HISTORICAL: &str = "historical-average";
pub const TECH_KNN: &str = "knn";
pub const TECH_MLP: &str = "mlp";

pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_SENSOR_FILE: &str = "per_sensor_mae.csv";
pub const STATS_FILE: &str = "stats.json";
pub const MCT_FILE: &str = "mct.csv";
pub const SUMMARY_FILE: &str = "summary.jsonl";

/// Shared state of one CLI invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub layout: Layout,
}

impl Ctx {
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed);
        r.set_stream(stream);
        r
    }

    /// Appends one JSON line to the run summary.
    pub fn record(&self, command: &str, started: Instant, details: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(&self.layout.out)?;
        let line = json!({
            "command": command,
            "seconds": (started.elapsed().as_secs_f64() * 1000.0).round() / 1000.0,
            "details": details,
        });
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.layout.file(SUMMARY_FILE))?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    fn network(&self) -> Result<SensorNetwork> {
        let sensors = load_sensors_csv(&self.layout.sensors)?;
        let overrides = match &self.layout.distances {
            Some(p) => load_distances_csv(p)?,
            None => Vec::new(),
        };
        SensorNetwork::build(sensors, &overrides)
    }

    fn cleaned(&self) -> Result<SpeedMatrix> {
        load_speed_csv(&self.layout.cleaned())
    }

    fn dataset(&self) -> Result<DatasetSplit> {
        load_dataset(&self.layout.dataset_dir())
    }
}

fn epoch_logger(tag: &'static str, total: usize) -> impl FnMut(usize, f64) {
    move |epoch, loss| log::info!("[{tag}] epoch {}/{total} loss {loss:.6}", epoch + 1)
}

pub fn synth(ctx: &Ctx) -> Result<serde_json::Value> {
    let (matrix, network) = generate_synthetic(&ctx.cfg.synth)?;
    write_atomic(&ctx.layout.speeds, &write_speed_csv(&matrix))?;
    write_atomic(&ctx.layout.sensors, &write_sensors_csv(network.sensors()))?;
    log::info!(
        "synthetic data: {} sensors x {} days -> {}",
        matrix.n_sensors(),
        matrix.days(),
        ctx.layout.speeds.display()
    );
    Ok(json!({"sensors": matrix.n_sensors(), "days": matrix.days(), "missing": matrix.missing_count()}))
}

pub fn clean(ctx: &Ctx) -> Result<serde_json::Value> {
    let raw = load_speed_csv(&ctx.layout.speeds)?;
    let missing = raw.missing_count();
    let (filled, dropped) = clean_missing(&raw, &ctx.cfg.cleaning)?;
    let cleaned = clean_outliers(&filled, &ctx.cfg.cleaning)?;
    write_atomic(&ctx.layout.cleaned(), &write_speed_csv(&cleaned))?;
    let report = json!({
        "missing_cells": missing,
        "dropped_sensors": dropped,
        "kept_sensors": cleaned.n_sensors(),
    });
    write_atomic(
        &ctx.layout.file("cleaning_report.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    for d in &dropped {
        log::warn!(
            "dropped sensor {} ({:.1}% missing)",
            d.sensor_id,
            100.0 * d.missing_fraction
        );
    }
    Ok(report)
}

/// Latest anchor time of the matrix with a full history window.
fn default_anchor(matrix: &SpeedMatrix, cfg: &RunConfig) -> Result<NaiveDateTime> {
    let slots = cfg.dataset.anchor_slots();
    let slot = *slots
        .last()
        .ok_or_else(|| Error::Config("no valid anchor slots for the dataset settings".into()))?;
    let day = matrix
        .days()
        .checked_sub(1)
        .ok_or_else(|| Error::EmptyDataset("speed matrix has no days".into()))?;
    Ok(matrix.time_at(SpeedMatrix::index(day, slot)))
}

pub fn neighbors(ctx: &Ctx, at: Option<NaiveDateTime>, sensor: Option<&str>) -> Result<serde_json::Value> {
    let matrix = ctx.cleaned()?;
    let network = ctx.network()?;
    let anchor = match at {
        Some(t) => t,
        None => default_anchor(&matrix, &ctx.cfg)?,
    };
    let targets = match sensor {
        Some(s) => vec![s.to_string()],
        None => resolve_targets(&matrix, &network, &ctx.cfg.dataset)?,
    };
    let ncfg = &ctx.cfg.dataset.neighbors;
    let rankings = targets
        .iter()
        .map(|t| {
            select_neighbors(
                &matrix,
                &network,
                &NeighborQuery::new(t.clone(), anchor, ncfg),
                &ncfg.topsis,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&ctx.layout.file("neighbors.csv"), &rankings_csv(&rankings)?)?;
    let mut selected = BTreeMap::new();
    for r in &rankings {
        log::info!(
            "{} @ {}: {}",
            r.target,
            format_timestamp(anchor),
            r.selected_ids().join(" ")
        );
        selected.insert(r.target.clone(), r.selected_ids());
    }
    Ok(json!({"anchor": format_timestamp(anchor), "selected": selected}))
}

pub fn dataset(ctx: &Ctx) -> Result<serde_json::Value> {
    let matrix = ctx.cleaned()?;
    let network = ctx.network()?;
    let split = build_dataset(&matrix, &network, &ctx.cfg.dataset)?;
    save_dataset(&ctx.layout.dataset_dir(), &split)?;
    let padded = split.train.iter().chain(&split.test).filter(|s| s.padded).count();
    Ok(json!({
        "train": split.train.len(),
        "test": split.test.len(),
        "padded": padded,
        "min": split.params.min,
        "max": split.params.max,
    }))
}

/// Evenly spaced subset of at most `cap` samples.
fn capped(samples: &[Sample], cap: Option<usize>) -> Vec<Sample> {
    match cap {
        Some(c) if c < samples.len() => (0..c).map(|i| samples[i * samples.len() / c].clone()).collect(),
        _ => samples.to_vec(),
    }
}

pub fn pretrain_x(ctx: &Ctx) -> Result<serde_json::Value> {
    let split = ctx.dataset()?;
    let train = capped(&split.train, ctx.cfg.training.pretrain_x_sample_cap);
    let x = stack_x(&train)?;
    drop(train);
    let spec = &ctx.cfg.model;
    let mut dae = build_dae_x(spec, &mut ctx.rng(1))?;
    let tc = &ctx.cfg.training.pretrain;
    let curve = pretrain_dae(
        &mut dae,
        &x,
        tc,
        Phase::PretrainX,
        &mut epoch_logger("pretrain-x", tc.epochs),
    )?;
    save_checkpoint(
        &ctx.layout.checkpoint("dae_x"),
        &Checkpoint::from_dae(ModelKind::DaeX, spec, &dae, Some(split.params)),
    )?;
    Ok(json!({"samples": x.batch(), "loss": curve}))
}

pub fn pretrain_y(ctx: &Ctx) -> Result<serde_json::Value> {
    let split = ctx.dataset()?;
    let y = stack_y(&split.train)?;
    let spec = &ctx.cfg.model;
    let mut dae = build_dae_y(spec, &mut ctx.rng(2))?;
    let tc = &ctx.cfg.training.pretrain;
    let curve = pretrain_dae(
        &mut dae,
        &y,
        tc,
        Phase::PretrainY,
        &mut epoch_logger("pretrain-y", tc.epochs),
    )?;
    save_checkpoint(
        &ctx.layout.checkpoint("dae_y"),
        &Checkpoint::from_dae(ModelKind::DaeY, spec, &dae, Some(split.params)),
    )?;
    Ok(json!({"samples": y.batch(), "loss": curve}))
}

pub fn train(ctx: &Ctx) -> Result<serde_json::Value> {
    let split = ctx.dataset()?;
    let dae_x = load_checkpoint(&ctx.layout.checkpoint("dae_x"))?.into_dae()?;
    let dae_y = load_checkpoint(&ctx.layout.checkpoint("dae_y"))?.into_dae()?;
    let spec = &ctx.cfg.model;
    let lfmm = build_lfmm(spec, &dae_x.latent_shape, &dae_y.latent_shape, &mut ctx.rng(3))?;
    let mut model = assemble_cross_connected(spec, &dae_x, &dae_y, lfmm, false)?;
    let x = stack_x(&split.train)?;
    let y = stack_y(&split.train)?;
    let plan = ctx.cfg.training.phases;
    let curves = train_cross(
        &mut model,
        &x,
        &y,
        &ctx.cfg.training.cross,
        plan,
        &mut |phase, epoch, loss| {
            let (tag, total) = match phase {
                Phase::Cross => ("train/lfmm", plan.lfmm_epochs),
                _ => ("train/finetune", plan.finetune_epochs),
            };
            log::info!("[{tag}] epoch {}/{total} loss {loss:.6}", epoch + 1);
        },
    )?;
    save_checkpoint(
        &ctx.layout.checkpoint("cross"),
        &Checkpoint::from_cross(&model, Some(split.params)),
    )?;
    Ok(json!({"samples": x.batch(), "lfmm_loss": curves.lfmm, "finetune_loss": curves.finetune}))
}

fn load_cross(ctx: &Ctx) -> Result<(CrossModel, stsc_core::dataset::NormalizationParams)> {
    let path = ctx.layout.checkpoint("cross");
    let ck = load_checkpoint(&path)?;
    let params = ck
        .normalization
        .ok_or_else(|| Error::State(format!("{} stores no normalization parameters", path.display())))?;
    Ok((ck.into_cross()?, params))
}

pub fn predict_at(ctx: &Ctx, at: NaiveDateTime, sensor: &str, horizon: Option<u32>) -> Result<serde_json::Value> {
    let (mut model, params) = load_cross(ctx)?;
    let matrix = ctx.cleaned()?;
    let network = ctx.network()?;
    let sample = build_sample(&matrix, &network, sensor, at, &ctx.cfg.dataset, &params)?;
    let out = predict(
        &mut model,
        &stack_x(&[sample])?,
        &params,
        ctx.cfg.cleaning.valid_speed_range,
    )?;
    let steps: Vec<usize> = match horizon {
        Some(h) => vec![stsc_core::eval::horizon_index(h)?],
        None => (0..HORIZON).collect(),
    };
    let mut rows = Vec::new();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for i in steps {
        let ts = at + Duration::minutes(i64::from(STEP_MINUTES) * (i as i64 + 1));
        writeln!(lock, "{},{sensor},{:.2}", format_timestamp(ts), out[0][i])?;
        rows.push(json!({"timestamp": format_timestamp(ts), "speed_mph": out[0][i]}));
    }
    Ok(json!({"sensor": sensor, "at": format_timestamp(at), "predictions": rows}))
}

type Forecasts = Vec<Vec<f64>>;

/// Normalized-space kNN and MLP baselines over target-sensor histories.
fn learned_baselines(ctx: &Ctx, split: &DatasetSplit) -> Result<(Forecasts, Forecasts)> {
    let params = &split.params;
    let train_x: Vec<Vec<f64>> = split.train.iter().map(target_history).collect();
    let train_y: Vec<Vec<f64>> = split.train.iter().map(|s| s.y.clone()).collect();
    let test_x: Vec<Vec<f64>> = split.test.iter().map(target_history).collect();
    let denorm = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| params.denormalize(v)).collect())
            .collect()
    };

    let k = ctx.cfg.evaluation.knn_k.min(train_x.len());
    if k < ctx.cfg.evaluation.knn_k {
        log::warn!(
            "knn_k {} exceeds the {} training samples; using k = {k}",
            ctx.cfg.evaluation.knn_k,
            train_x.len()
        );
    }
    let knn = KnnRegressor::new(train_x.clone(), train_y.clone(), k)?;
    let knn_pred = denorm(knn.predict_many(&test_x)?);

    let mc = &ctx.cfg.evaluation.mlp;
    let mut mlp = MlpBaseline::new(train_x[0].len(), HORIZON, &mc.hidden, &mut ctx.rng(4))?;
    mlp.train(
        &rows_to_tensor(&train_x)?,
        &rows_to_tensor(&train_y)?,
        &mc.training,
        &mut epoch_logger("mlp", mc.training.epochs),
    )?;
    let out = mlp.predict(&rows_to_tensor(&test_x)?)?;
    let mlp_pred = denorm(out.data().chunks(HORIZON).map(<[f64]>::to_vec).collect());
    Ok((knn_pred, mlp_pred))
}

pub fn evaluate(ctx: &Ctx) -> Result<serde_json::Value> {
    let split = ctx.dataset()?;
    if split.test.is_empty() {
        return Err(Error::EmptyDataset("the test split is empty".into()));
    }
    let matrix = ctx.cleaned()?;
    let (mut model, params) = load_cross(ctx)?;
    let test = &split.test;
    let actual = test
        .iter()
        .map(|s| actual_future(&matrix, &s.target, s.anchor))
        .collect::<Result<Vec<_>>>()?;
    let proposed = predict(&mut model, &stack_x(test)?, &params, ctx.cfg.cleaning.valid_speed_range)?;
    drop(model);
    let pers = test
        .iter()
        .map(|s| persistence(&matrix, &s.target, s.anchor))
        .collect::<Result<Vec<_>>>()?;
    let hist = test
        .iter()
        .map(|s| historical_average(&matrix, &s.target, s.anchor))
        .collect::<Result<Vec<_>>>()?;
    let (knn, mlp) = learned_baselines(ctx, &split)?;

    let techniques: [(&str, &Vec<Vec<f64>>); 5] = [
        (TECH_PROPOSED, &proposed),
        (TECH_PERSISTENCE, &pers),
        (TECH_HISTORICAL, &hist),
        (TECH_KNN, &knn),
        (TECH_MLP, &mlp),
    ];
    let reports = techniques
        .iter()
        .map(|(name, pred)| evaluate_horizons(name, &actual, pred))
        .collect::<Result<Vec<MetricsReport>>>()?;
    write_atomic(&ctx.layout.file(METRICS_FILE), &metrics_csv(&reports)?)?;
    for m in Metric::ALL {
        write_atomic(
            &ctx.layout.file(&format!("metrics_{}.svg", m.name())),
            metric_chart_svg(&reports, m).as_bytes(),
        )?;
    }

    let keys: Vec<String> = test.iter().map(|s| s.target.clone()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["technique", "sensor_id", "horizon_min", "mae"])
        .map_err(csv_err)?;
    for (name, pred) in techniques {
        for h in HORIZONS_MIN {
            for (sensor, mae) in grouped_mae(&keys, &actual, pred, h)? {
                w.write_record([name.to_string(), sensor, h.to_string(), format!("{mae:.6}")])
                    .map_err(csv_err)?;
            }
        }
    }
    write_atomic(
        &ctx.layout.file(PER_SENSOR_FILE),
        &w.into_inner().map_err(|e| Error::Io(e.into_error()))?,
    )?;

    for r in &reports {
        let cells: Vec<String> = r
            .rows
            .iter()
            .map(|row| format!("{}m {:.3}", row.horizon_min, row.metrics.mae))
            .collect();
        log::info!("{:<20} MAE {}", r.technique, cells.join("  "));
    }
    Ok(serde_json::to_value(&reports)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

type SensorMae = BTreeMap<String, f64>;

/// horizon -> [(technique, per-sensor MAE)]
pub type PerSensorTable = BTreeMap<u32, Vec<(String, Vec<f64>)>>;

/// Per-technique, per-sensor MAE table written by `evaluate`.
pub fn read_per_sensor(path: &Path) -> Result<PerSensorTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => csv_err(e),
    })?;
    // horizon -> technique -> sensor -> mae
    let mut table: BTreeMap<u32, Vec<(String, SensorMae)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Parse {
            line: i + 2,
            message: format!("bad {what} in {}", path.display()),
        };
        if rec.len() != 4 {
            return Err(bad("record"));
        }
        let h: u32 = rec[2].parse().map_err(|_| bad("horizon"))?;
        let mae: f64 = rec[3].parse().map_err(|_| bad("mae"))?;
        let techs = table.entry(h).or_default();
        match techs.iter_mut().find(|(t, _)| t == &rec[0]) {
            Some((_, m)) => {
                m.insert(rec[1].to_string(), mae);
            }
            None => techs.push((rec[0].to_string(), BTreeMap::from([(rec[1].to_string(), mae)]))),
        }
    }
    Ok(table
        .into_iter()
        .map(|(h, techs)| {
            (
                h,
                techs.into_iter().map(|(t, m)| (t, m.into_values().collect())).collect(),
            )
        })
        .collect())
}

pub fn stats(ctx: &Ctx, horizon: Option<u32>) -> Result<serde_json::Value> {
    let table = read_per_sensor(&ctx.layout.file(PER_SENSOR_FILE))?;
    let horizons = match horizon {
        Some(h) => vec![h],
        None => ctx.cfg.evaluation.stats_horizons_min.clone(),
    };
    let alpha = ctx.cfg.evaluation.alpha;
    let mut results = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "horizon_min",
        "technique_a",
        "technique_b",
        "lower",
        "mean_rank_difference",
        "upper",
        "p_adjusted",
    ])
    .map_err(csv_err)?;
    for h in horizons {
        let groups = table
            .get(&h)
            .ok_or_else(|| Error::NotFound(format!("no per-sensor MAE rows for horizon {h} min")))?;
        let names: Vec<&str> = groups.iter().map(|(t, _)| t.as_str()).collect();
        let values: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
        let kwt = kruskal_wallis(&values)?;
        let mct = multiple_comparison(&kwt, alpha)?;
        log::info!("horizon {h} min: H = {:.3}, p = {:.3e}", kwt.h, kwt.p_value);
        for p in &mct.pairs {
            w.write_record([
                h.to_string(),
                names[p.i].to_string(),
                names[p.j].to_string(),
                format!("{:.6}", p.lower),
                format!("{:.6}", p.difference),
                format!("{:.6}", p.upper),
                format!("{:.6e}", p.p_adjusted),
            ])
            .map_err(csv_err)?;
        }
        results.push(json!({"horizon_min": h, "techniques": names, "kruskal_wallis": kwt, "dunn": mct}));
    }
    let value = json!({ "alpha": alpha, "tests": results });
    write_atomic(&ctx.layout.file(STATS_FILE), &serde_json::to_vec_pretty(&value)?)?;
    write_atomic(
        &ctx.layout.file(MCT_FILE),
        &w.into_inner().map_err(|e| Error::Io(e.into_error()))?,
    )?;
    Ok(value)
}
