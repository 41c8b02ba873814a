use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde_json::json;
use walkdir::WalkDir;
use xneutr_core::embedstore::DEFAULT_LAYERS;
use xneutr_core::neutralize::{aggregate_drop, DEFAULT_TRIALS, MIN_SUPPORT};
use xneutr_core::report::{
    read_matrix_csv, render_heatmap_svg, render_report, write_matrix_csv, ReportFigure,
};
use xneutr_core::synthetic::synthetic_corpus;
use xneutr_core::treebank::write_conllu;
use xneutr_core::{
    centroid_similarity, cross_lingual_matrix, cross_neutralization_matrix, cross_task_matrix,
    evaluate, gold_centroids, init_probe, make_control_labels, predicted_centroids,
    random_baseline, select_config, selectivity, self_neutralization_drops, train_for_steps,
    CrossTaskDirection, GridEntry, LabelSet, NeutralizationMatrix, NeutralizationRun, PairCombiner,
    ProbeConfig, SyntheticSpec, Task,
};

use crate::manifest::usage;
use crate::pipeline::{
    build_run, ensure_probe, run_name, warn_missing_centroids, write_atomic, write_json, Ctx,
    Dataset, Extraction,
};

fn per_class_json(labels: &LabelSet, report: &xneutr_core::EvalReport) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = (0..labels.len())
        .filter(|&c| report.support[c] > 0)
        .map(|c| {
            (
                labels.name(c).to_owned(),
                json!({ "accuracy": report.per_class_accuracy[c], "support": report.support[c] }),
            )
        })
        .collect();
    map.into()
}

pub fn train(ctx: &Ctx) -> anyhow::Result<()> {
    let x = ctx.extraction(ctx.task()?)?;
    let data = Dataset::load(&ctx.manifest, "")?;
    let config = data.config(&x);
    let train_fs = data.features(0, &x)?;
    let val_fs = data.features(1, &x)?;
    let test_fs = data.features(2, &x)?;
    let probe = ensure_probe(ctx, &config, &data.paths, &train_fs, &val_fs, true)?;
    let val = evaluate(&probe.model, &val_fs)?;
    let test = evaluate(&probe.model, &test_fs)?;
    let labels = LabelSet::for_task(x.task);
    write_json(
        &probe.dir.join("report.json"),
        &json!({
            "config": config.to_string(),
            "split": "test",
            "accuracy": test.overall_accuracy,
            "validation_accuracy": val.overall_accuracy,
            "examples": test_fs.len(),
            "per_class": per_class_json(&labels, &test),
        }),
    )?;
    println!(
        "accuracy={:.4} probe={}",
        test.overall_accuracy,
        probe.dir.join("probe.bin").display()
    );
    Ok(())
}

pub fn centroids(ctx: &Ctx) -> anyhow::Result<()> {
    let x = ctx.extraction(ctx.task()?)?;
    let data = Dataset::load(&ctx.manifest, "")?;
    let config = data.config(&x);
    let train_fs = data.features(0, &x)?;
    let val_fs = data.features(1, &x)?;
    let probe = ensure_probe(ctx, &config, &data.paths, &train_fs, &val_fs, false)?;
    let labels = LabelSet::for_task(x.task);
    let predicted = predicted_centroids(&probe.model, &val_fs)?;
    let gold = gold_centroids(&val_fs, labels.len())?;
    let similarity: serde_json::Map<String, serde_json::Value> =
        centroid_similarity(&predicted, &gold)
            .into_iter()
            .map(|(c, s)| (labels.name(c).to_owned(), json!(s)))
            .collect();
    let path = probe.dir.join("centroids.json");
    write_json(
        &path,
        &json!({
            "config": config.to_string(),
            "split": "validation",
            "labels": labels.labels(),
            "predicted": predicted,
            "gold": gold,
            "gold_vs_predicted_cosine": similarity,
        }),
    )?;
    println!("centroids={}", path.display());
    Ok(())
}

fn min_support(ctx: &Ctx) -> anyhow::Result<u64> {
    ctx.manifest.parsed_or("min_support", MIN_SUPPORT)
}

fn matrix_path(ctx: &Ctx, experiment: &str, stem: &str) -> PathBuf {
    ctx.out
        .join("matrices")
        .join(experiment)
        .join(format!("{stem}.csv"))
}

/// CSV plus its heatmap next to it.
fn emit_matrix(ctx: &Ctx, m: NeutralizationMatrix, path: &Path, title: &str) -> anyhow::Result<()> {
    let m = ctx
        .manifest
        .metadata()
        .into_iter()
        .fold(m, |m, (k, v)| m.with_metadata(&k, v));
    let mut csv = Vec::new();
    write_matrix_csv(&m, &mut csv)?;
    write_atomic(path, &csv)?;
    write_atomic(
        &path.with_extension("svg"),
        render_heatmap_svg(&m, title).as_bytes(),
    )?;
    println!("matrix={}", path.display());
    Ok(())
}

fn describe(m: NeutralizationMatrix, run: &NeutralizationRun, seed: u64) -> NeutralizationMatrix {
    m.with_metadata("encoder", &run.config.encoder_id)
        .with_metadata("treebank", &run.config.treebank_id)
        .with_metadata("task", run.config.task)
        .with_metadata("seed", seed)
}

fn zero_suffix(ctx: &Ctx) -> anyhow::Result<&'static str> {
    Ok(if ctx.manifest.flag("zero_centroids")? {
        "_zero"
    } else {
        ""
    })
}

pub fn neutralize(ctx: &mut Ctx) -> anyhow::Result<()> {
    let experiment = ctx.manifest.get("experiment").unwrap_or("xn").to_owned();
    ctx.manifest.set("experiment", &experiment)?;
    let seed: u64 = ctx.manifest.parsed_or("seed", 0)?;
    let support = min_support(ctx)?;
    let zero = zero_suffix(ctx)?;
    match experiment.as_str() {
        "xn" => {
            let x = ctx.extraction(ctx.task()?)?;
            let data = Dataset::load(&ctx.manifest, "")?;
            let run = build_run(ctx, &data, &x)?;
            warn_missing_centroids(&run, support);
            let m = describe(cross_neutralization_matrix(&run, support)?, &run, seed);
            let stem = format!(
                "{}_{}_{}{zero}",
                data.encoder,
                data.treebank,
                run_name(&run.config)
            );
            let title = format!("{} {} {}", data.encoder, data.treebank, run.config.task);
            emit_matrix(ctx, m, &matrix_path(ctx, "xn", &stem), &title)
        }
        "xl-xn" => {
            let x = ctx.extraction(ctx.task()?)?;
            let source = Dataset::load(&ctx.manifest, "")?;
            let target = Dataset::load(&ctx.manifest, "target_")?;
            if source.encoder != target.encoder {
                return Err(usage(format!(
                    "cross-lingual runs need one encoder, got {} and {}",
                    source.encoder, target.encoder
                )));
            }
            let (a, b) = ctx.pool.install(|| {
                rayon::join(
                    || build_run(ctx, &source, &x),
                    || build_run(ctx, &target, &x),
                )
            });
            let (a, b) = (a?, b?);
            warn_missing_centroids(&a, support);
            let m = describe(cross_lingual_matrix(&a, &b, support)?, &a, seed)
                .with_metadata("target_treebank", &target.treebank);
            let stem = format!(
                "{}_{}_to_{}_{}{zero}",
                source.encoder,
                source.treebank,
                target.treebank,
                run_name(&a.config)
            );
            let title = format!(
                "{} {} to {}",
                source.encoder, source.treebank, target.treebank
            );
            emit_matrix(ctx, m, &matrix_path(ctx, "xl-xn", &stem), &title)
        }
        "xt-xn" => {
            let direction: CrossTaskDirection = ctx.manifest.required("direction")?;
            if ctx.manifest.get("task").is_some() {
                return Err(usage("xt-xn uses both tasks; drop the task key"));
            }
            let layer = ctx.manifest.required("layer")?;
            let pooling = ctx.manifest.required("pooling")?;
            if let Some(c) = ctx.manifest.parsed::<PairCombiner>("combiner")? {
                if c != PairCombiner::Concat {
                    return Err(usage(format!(
                        "cross-task runs need the concat combiner, got {c}"
                    )));
                }
            }
            let pos_x = Extraction {
                task: Task::Pos,
                layer,
                pooling,
                combiner: None,
            };
            let dep_x = Extraction {
                task: Task::Dep,
                layer,
                pooling,
                combiner: Some(PairCombiner::Concat),
            };
            let data = Dataset::load(&ctx.manifest, "")?;
            let (pos, dep) = ctx.pool.install(|| {
                rayon::join(
                    || build_run(ctx, &data, &pos_x),
                    || build_run(ctx, &data, &dep_x),
                )
            });
            let (pos, dep) = (pos?, dep?);
            let neutralizer = match direction {
                CrossTaskDirection::PosNeutralizesDep => &pos,
                CrossTaskDirection::DepNeutralizesPos => &dep,
            };
            warn_missing_centroids(neutralizer, support);
            let m = cross_task_matrix(direction, &pos, &dep, support)?
                .with_metadata("encoder", &data.encoder)
                .with_metadata("treebank", &data.treebank)
                .with_metadata("task", "pos,dep")
                .with_metadata("seed", seed);
            let stem = format!(
                "{}_{}_{}_L{layer}_{pooling}{zero}",
                data.encoder,
                data.treebank,
                direction.as_str()
            );
            let title = format!("{} {} {}", data.encoder, data.treebank, direction.as_str());
            emit_matrix(ctx, m, &matrix_path(ctx, "xt-xn", &stem), &title)
        }
        other => Err(usage(format!(
            "unknown experiment {other:?}; expected xn, xl-xn or xt-xn"
        ))),
    }
}

pub fn random(ctx: &Ctx) -> anyhow::Result<()> {
    let x = ctx.extraction(ctx.task()?)?;
    let seed: u64 = ctx.manifest.parsed_or("seed", 0)?;
    let trials: usize = ctx.manifest.parsed_or("trials", DEFAULT_TRIALS)?;
    let support = min_support(ctx)?;
    let data = Dataset::load(&ctx.manifest, "")?;
    let run = build_run(ctx, &data, &x)?;
    let m = describe(random_baseline(&run, seed, trials, support)?, &run, seed);
    let stem = format!(
        "{}_{}_{}",
        data.encoder,
        data.treebank,
        run_name(&run.config)
    );
    let title = format!(
        "{} {} {} random",
        data.encoder, data.treebank, run.config.task
    );
    emit_matrix(ctx, m, &matrix_path(ctx, "random-baseline", &stem), &title)
}

pub fn selectivity_cmd(ctx: &Ctx) -> anyhow::Result<()> {
    let x = ctx.extraction(Task::Pos)?;
    if ctx.manifest.get("task").is_some_and(|t| t != "pos") {
        return Err(usage("selectivity is defined for the pos task"));
    }
    let control_seed: u64 = ctx.manifest.parsed_or("control_seed", 0)?;
    let data = Dataset::load(&ctx.manifest, "")?;
    let config = data.config(&x);
    let train_fs = data.features(0, &x)?;
    let val_fs = data.features(1, &x)?;
    let test_fs = data.features(2, &x)?;
    let probe = ensure_probe(ctx, &config, &data.paths, &train_fs, &val_fs, false)?;

    let control_features = |split: usize, fs: &xneutr_core::FeatureSet| {
        let relabeled = make_control_labels(&data.splits[split].0, control_seed);
        let mut out = fs.clone();
        out.gold_labels = relabeled
            .iter()
            .flat_map(|s| s.words.iter().map(|w| w.upos.index() as u32))
            .collect();
        out
    };
    let cfg = ctx.train_config()?;
    let control = init_probe(
        train_fs.dim,
        cfg.hidden_for(train_fs.dim),
        LabelSet::pos().len(),
        cfg.seed,
    );
    let (control, _) =
        train_for_steps(control, &control_features(0, &train_fs), &cfg, probe.steps)?;
    let probe_report = evaluate(&probe.model, &test_fs)?;
    let control_report = evaluate(&control, &control_features(2, &test_fs))?;
    let value = selectivity(&probe_report, &control_report);
    let path = probe.dir.join("selectivity.json");
    write_json(
        &path,
        &json!({
            "config": config.to_string(),
            "probe_accuracy": probe_report.overall_accuracy,
            "control_accuracy": control_report.overall_accuracy,
            "selectivity": value,
            "control_seed": control_seed,
            "steps": probe.steps,
        }),
    )?;
    println!(
        "probe={:.4} control={:.4} selectivity={:.4}",
        probe_report.overall_accuracy, control_report.overall_accuracy, value
    );
    Ok(())
}

pub fn select_config_cmd(ctx: &Ctx) -> anyhow::Result<()> {
    use rayon::prelude::*;

    let task = ctx.task()?;
    let data = Dataset::load(&ctx.manifest, "")?;
    let grid = ProbeConfig::grid(&data.encoder, &data.treebank, task);
    let entries: Vec<anyhow::Result<GridEntry>> = ctx.pool.install(|| {
        grid.par_iter()
            .map(|config| {
                let x = Extraction {
                    task,
                    layer: config.layer,
                    pooling: config.pooling,
                    combiner: config.combiner,
                };
                let train_fs = data.features(0, &x)?;
                let val_fs = data.features(1, &x)?;
                let probe = ensure_probe(ctx, config, &data.paths, &train_fs, &val_fs, false)?;
                let report = evaluate(&probe.model, &val_fs)?;
                let centroids = predicted_centroids(&probe.model, &val_fs)?;
                let drops = self_neutralization_drops(&probe.model, &val_fs, &centroids)?;
                Ok(GridEntry {
                    config: config.clone(),
                    val_accuracy: report.overall_accuracy,
                    aggregate_drop: aggregate_drop(&drops, &report.support),
                })
            })
            .collect()
    });
    let entries = entries.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let chosen = select_config(&entries)?;

    let dir = ctx.out.join("selection");
    let mut grid_csv =
        String::from("layer,pooling,combiner,val_accuracy,aggregate_drop,selected\n");
    for e in &entries {
        grid_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.config.layer,
            e.config.pooling,
            e.config.combiner.map_or("", |c| c.as_str()),
            e.val_accuracy,
            e.aggregate_drop.map(|d| d.to_string()).unwrap_or_default(),
            e.config == chosen
        ));
    }
    let grid_path = dir.join(format!(
        "grid_{}_{}_{}.csv",
        data.encoder, data.treebank, task
    ));
    write_atomic(&grid_path, grid_csv.as_bytes())?;

    // one row per (encoder, treebank, task), merged with earlier selections
    let table_path = dir.join("config_selection.csv");
    let header = "encoder,treebank,task,layer,pooling";
    let key = format!("{},{},{},", data.encoder, data.treebank, task);
    let mut rows: Vec<String> = std::fs::read_to_string(&table_path)
        .unwrap_or_default()
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty() && !l.starts_with(&key))
        .map(str::to_owned)
        .collect();
    rows.push(format!("{key}{},{}", chosen.layer, chosen.pooling));
    rows.sort();
    let table = format!("{header}\n{}\n", rows.join("\n"));
    write_atomic(&table_path, table.as_bytes())?;
    println!(
        "selected={},{} table={}",
        chosen.layer,
        chosen.pooling,
        table_path.display()
    );
    Ok(())
}

pub fn report(ctx: &Ctx) -> anyhow::Result<()> {
    let mut figures = Vec::new();
    let matrices = ctx.out.join("matrices");
    let mut paths: Vec<PathBuf> = WalkDir::new(&matrices)
        .into_iter()
        .filter_map(Result::ok)
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    for path in paths {
        let file = std::fs::File::open(&path)?;
        let matrix = match read_matrix_csv(BufReader::new(file)) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        let meta = |k: &str| {
            matrix
                .metadata
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
        };
        let mut section = meta("experiment").unwrap_or_else(|| "matrices".into());
        if matrix.baseline {
            section = "random-baseline".into();
        }
        let caption = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        figures.push(ReportFigure {
            section,
            caption,
            csv_path: path.to_string_lossy().into_owned(),
            matrix,
        });
    }
    let path = ctx.out.join("report").join("index.html");
    write_atomic(&path, render_report(&figures).as_bytes())?;
    println!("figures={} report={}", figures.len(), path.display());
    Ok(())
}

pub fn synth(ctx: &Ctx) -> anyhow::Result<()> {
    let m = &ctx.manifest;
    let classes: usize = m.parsed_or("synth_classes", 5)?;
    if !(2..=17).contains(&classes) {
        return Err(usage("synth_classes must be between 2 and 17"));
    }
    let mut spec = SyntheticSpec::orthogonal(
        classes,
        m.parsed_or("synth_dim", 32)?,
        m.parsed_or("synth_scale", 1.0)?,
        m.parsed_or("synth_sigma", 0.05)?,
        m.parsed_or("synth_words_per_class", 2000)?,
        m.parsed_or("seed", 0)?,
    );
    if let Some(layers) = m.get("synth_layers") {
        spec.layer_ids = layers
            .split(',')
            .map(|l| {
                l.trim()
                    .parse::<u32>()
                    .map_err(|_| usage(format!("bad layer id {l:?}")))
            })
            .collect::<anyhow::Result<_>>()?;
    } else {
        spec.layer_ids = DEFAULT_LAYERS.to_vec();
    }
    if spec.embed_dim < classes {
        return Err(usage("synth_dim must be at least synth_classes"));
    }
    let sentence_len: usize = m.parsed_or("synth_sentence_len", 12)?;
    if sentence_len == 0 {
        return Err(usage("synth_sentence_len must be positive"));
    }
    let encoder = m.get("encoder").unwrap_or("synthetic");
    let treebank = m.get("treebank").unwrap_or("synth");
    let corpus = synthetic_corpus(&spec, sentence_len, encoder, treebank)?;

    let dir = ctx.out.join("synth");
    let mut manifest = format!("encoder = {encoder}\ntreebank = {treebank}\n");
    for part in &corpus {
        let conllu = format!("{treebank}-{}.conllu", part.split);
        let store = format!("{treebank}-{}.xnstore", part.split);
        let mut text = Vec::new();
        write_conllu(&part.sentences, &mut text)?;
        write_atomic(&dir.join(&conllu), &text)?;
        std::fs::create_dir_all(&dir)?;
        part.store.write(&dir.join(&store))?;
        manifest.push_str(&format!(
            "{}_conllu = {conllu}\n{}_store = {store}\n",
            part.split, part.split
        ));
    }
    let path = dir.join(format!("{treebank}.manifest"));
    write_atomic(&path, manifest.as_bytes())?;
    println!("manifest={}", path.display());
    Ok(())
}
