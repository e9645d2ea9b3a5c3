//! The five batch commands. Each one is a pure function of (files on disk,
//! resolved config): it validates first, writes nothing on invalid input,
//! and persists the resolved config next to its outputs so any run can be
//! reproduced by feeding that file back.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use ringqcnn::circuit::CircuitPlan;
use ringqcnn::data::{
    expand_labels, generate_synthetic, split_patients, write_atomic, Manifest, SliceSample, Split,
};
use ringqcnn::error::{Error, Result};
use ringqcnn::eval::{aggregate_patient, MetricsReport, PatientPrediction};
use ringqcnn::model::{forward, Checkpoint, ModelParams};
use ringqcnn::noise::{add_image_noise, AngleNoise, NoiseSpec};
use ringqcnn::preprocess::{
    angle_scale, fuse_modalities, pca_fit, pca_transform, select_top_k, slice_vector, Modality,
    SliceVolume,
};
use ringqcnn::rng::{stream, tag};
use ringqcnn::train::{train, SplitSamples};

use crate::config::{RunConfig, SourceModality};
use crate::features::{read_features, write_features, FeatureRow};

pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const PCA_FILE: &str = "pca.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SCENARIOS_FILE: &str = "noise_scenarios.csv";

fn prepare_out_dir(config: &RunConfig) -> Result<PathBuf> {
    let out = config.out_dir.clone();
    fs::create_dir_all(&out)
        .map_err(|e| Error::data(format!("creating {}: {e}", out.display())))?;
    Ok(out)
}

/// Generate a synthetic dataset under the output directory.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let synth = config.synth_config();
    synth.validate()?;
    let out = prepare_out_dir(config)?;
    generate_synthetic(&synth, &out)?;
    config.save(&out.join(RUN_CONFIG_FILE))?;

    let manifest = Manifest::load(&out)?;
    let n1 = manifest.patients.iter().filter(|p| p.label == 1).count();
    println!(
        "synthesized {} patients ({} of class 1) x {} slices of {}x{} into {}",
        manifest.patients.len(),
        n1,
        synth.slices_per_patient,
        synth.height,
        synth.width,
        out.display()
    );
    Ok(())
}

/// One patient's volumes with optional image noise already applied, plus the
/// volume slice selection should score.
struct PatientVolumes {
    vols: Vec<SliceVolume>,
    score_index: usize,
}

fn load_patient_volumes(
    manifest: &Manifest,
    patient_pos: usize,
    config: &RunConfig,
    spec: &NoiseSpec,
) -> Result<PatientVolumes> {
    let id = &manifest.patients[patient_pos].id;
    let wanted: Vec<Modality> = match config.modality {
        SourceModality::Synth => vec![Modality::Synth],
        SourceModality::T1Gd => vec![Modality::T1Gd],
        SourceModality::Fused => Modality::ALL_ACQUIRED.to_vec(),
    };
    let mut vols = Vec::with_capacity(wanted.len());
    for m in &wanted {
        let vol = manifest.volume(id, *m)?;
        let vol = if config.image_sigma > 0.0 {
            let mut rng = spec.image_rng(&[patient_pos as u64, m.index()]);
            let noisy = vol
                .slices()
                .iter()
                .map(|s| add_image_noise(s, config.image_sigma, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            SliceVolume::new(id.clone(), *m, noisy)?
        } else {
            vol
        };
        vols.push(vol);
    }
    // When fusing, slice selection scores the post-contrast T1 volume.
    let score_index = match config.modality {
        SourceModality::Fused => wanted
            .iter()
            .position(|m| *m == Modality::T1Gd)
            .expect("acquired set includes t1gd"),
        _ => 0,
    };
    Ok(PatientVolumes { vols, score_index })
}

/// Run the full feature pipeline over a dataset and write the feature table
/// plus the fitted projection.
pub fn cmd_preprocess(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let manifest = Manifest::load(&config.data_dir)?;
    let splits = split_patients(&manifest, config.fractions(), config.seed)?;
    let spec = NoiseSpec::new(config.image_sigma, 0.0, config.seed)?;

    // Raw flattened vectors in row order: patients in manifest order, each
    // patient's selected slices in descending energy order.
    struct RawRow {
        patient_id: String,
        slice_index: usize,
        split: Split,
        label: u8,
        vector: Vec<f64>,
    }
    let mut raw_rows: Vec<RawRow> = Vec::new();
    let target = (config.input_size, config.input_size);

    for (pos, patient) in manifest.patients.iter().enumerate() {
        let split = splits[&patient.id];
        let pv = load_patient_volumes(&manifest, pos, config, &spec)?;
        let ranking = select_top_k(
            &pv.vols[pv.score_index],
            config.k_slices,
            (config.score_size, config.score_size),
        )
        .map_err(|e| e.prefixed(&format!("selecting slices for {}", patient.id)))?;

        let labeled = expand_labels(&patient.id, patient.label, &ranking.selected);
        match config.modality {
            SourceModality::Fused => {
                let four: &[SliceVolume; 4] = pv
                    .vols
                    .as_slice()
                    .try_into()
                    .expect("fused mode loads exactly four volumes");
                let fused = fuse_modalities(four, &ranking.selected)?;
                for (ls, image) in labeled.iter().zip(fused.slices()) {
                    raw_rows.push(RawRow {
                        patient_id: ls.patient_id.clone(),
                        slice_index: ls.slice_index,
                        split,
                        label: ls.label,
                        vector: slice_vector(image, target)?,
                    });
                }
            }
            _ => {
                for ls in &labeled {
                    let image = &pv.vols[0].slices()[ls.slice_index];
                    raw_rows.push(RawRow {
                        patient_id: ls.patient_id.clone(),
                        slice_index: ls.slice_index,
                        split,
                        label: ls.label,
                        vector: slice_vector(image, target)?,
                    });
                }
            }
        }
    }

    let train_vectors: Vec<Vec<f64>> = raw_rows
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.vector.clone())
        .collect();
    if train_vectors.is_empty() {
        return Err(Error::data(
            "no training-split rows to fit the projection on".to_string(),
        ));
    }
    let pca = pca_fit(&train_vectors, config.pca_var, config.d_max)?;

    let rows = raw_rows
        .iter()
        .map(|r| {
            let projected = pca_transform(&pca, &r.vector)?;
            let scaled = angle_scale(&projected, config.clip)?;
            Ok(FeatureRow {
                patient_id: r.patient_id.clone(),
                slice_index: r.slice_index,
                split: r.split,
                label: r.label,
                values: scaled.values().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let out = prepare_out_dir(config)?;
    write_features(&out.join(FEATURES_FILE), &rows)?;
    pca.save(&out.join(PCA_FILE))?;
    config.save(&out.join(RUN_CONFIG_FILE))?;

    let captured: f64 = pca.explained_variance_ratio.iter().sum();
    println!(
        "wrote {} feature rows for {} patients to {}",
        rows.len(),
        manifest.patients.len(),
        out.join(FEATURES_FILE).display()
    );
    println!(
        "projection kept d = {} components capturing {:.1}% of training variance",
        pca.d,
        100.0 * captured
    );
    Ok(())
}

fn rows_to_samples(rows: &[FeatureRow], which: Split) -> Result<Vec<SliceSample>> {
    rows.iter()
        .filter(|r| r.split == which)
        .map(|r| {
            Ok(SliceSample {
                patient_id: r.patient_id.clone(),
                slice_index: r.slice_index,
                label: r.label,
                features: ringqcnn::preprocess::FeatureVector::new(r.values.clone())
                    .map_err(|e| e.prefixed(&format!("{} slice {}", r.patient_id, r.slice_index)))?,
            })
        })
        .collect()
}

/// Train on the feature table in the output directory; write the checkpoint
/// and per-epoch history.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let out = config.out_dir.clone();
    let rows = read_features(&out.join(FEATURES_FILE))?;
    let d = rows[0].values.len();
    let plan = CircuitPlan::build(d, config.levels)
        .map_err(|e| e.prefixed(&format!("planning circuit for d = {d}")))?;
    println!(
        "trainable parameters: {}",
        ModelParams::count(d, config.levels)
    );

    let data = SplitSamples {
        train: rows_to_samples(&rows, Split::Train)?,
        val: rows_to_samples(&rows, Split::Val)?,
    };
    let train_config = config.train_config();
    let (params, history) = train(&data, &plan, &train_config)?;

    let checkpoint = Checkpoint {
        params,
        clip: config.clip,
        seed: config.seed,
    };
    fs::create_dir_all(&out).map_err(|e| Error::data(format!("creating {}: {e}", out.display())))?;
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_atomic(&out.join(HISTORY_FILE), history.to_csv().as_bytes())?;
    config.save(&out.join(RUN_CONFIG_FILE))?;

    let best = &history.records[history.best_epoch - 1];
    println!(
        "stopped after epoch {}; kept epoch {} (val loss {:.4}, val acc {:.4})",
        history.stop_epoch, history.best_epoch, best.val_loss, best.val_acc
    );
    println!("checkpoint written to {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

/// Score the test split patient by patient and write prediction and metric
/// tables. Returns the report so scenario sweeps can tabulate it.
pub fn cmd_eval(config: &RunConfig) -> Result<MetricsReport> {
    config.validate()?;
    let out = config.out_dir.clone();
    let rows = read_features(&out.join(FEATURES_FILE))?;
    let checkpoint = Checkpoint::load(&out.join(CHECKPOINT_FILE))?;
    let params = &checkpoint.params;
    let plan = CircuitPlan::build(params.d(), params.levels())?;

    let test_rows: Vec<&FeatureRow> = rows.iter().filter(|r| r.split == Split::Test).collect();
    if test_rows.is_empty() {
        return Err(Error::data("feature table has no test rows".to_string()));
    }
    if test_rows[0].values.len() != params.d() {
        return Err(Error::contract(format!(
            "feature width {} does not match checkpoint d = {}",
            test_rows[0].values.len(),
            params.d()
        )));
    }

    // Per-patient slice probabilities, patients in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut by_patient: BTreeMap<String, (u8, Vec<f64>)> = BTreeMap::new();
    for (i, row) in test_rows.iter().enumerate() {
        let features = ringqcnn::preprocess::FeatureVector::new(row.values.clone())
            .map_err(|e| e.prefixed(&format!("{} slice {}", row.patient_id, row.slice_index)))?;
        let mut noise = AngleNoise::new(
            config.gate_sigma,
            stream(config.seed, &[tag::GATE_NOISE_PREDICT, i as u64]),
        )?;
        let output = forward(&features, params, &plan, noise.as_mut())?;
        let entry = by_patient
            .entry(row.patient_id.clone())
            .or_insert_with(|| {
                order.push(row.patient_id.clone());
                (row.label, Vec::new())
            });
        if entry.0 != row.label {
            return Err(Error::data(format!(
                "patient {} appears with labels {} and {}",
                row.patient_id, entry.0, row.label
            )));
        }
        entry.1.push(output.probs[1]);
    }

    let preds: Vec<PatientPrediction> = order
        .iter()
        .map(|id| {
            let (label, probs) = &by_patient[id];
            aggregate_patient(id, *label, probs)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::compute(&preds)?;

    let mut pred_csv = String::from("patient_id,label,mean_prob_class1,predicted\n");
    for p in &preds {
        pred_csv.push_str(&format!(
            "{},{},{},{}\n",
            p.patient_id, p.label, p.mean_prob_class1, p.predicted
        ));
    }
    write_atomic(&out.join(PREDICTIONS_FILE), pred_csv.as_bytes())?;
    write_atomic(&out.join(METRICS_FILE), report.metrics_csv().as_bytes())?;
    write_atomic(&out.join(ROC_FILE), report.roc_csv().as_bytes())?;
    config.save(&out.join(RUN_CONFIG_FILE))?;

    print!("{}", report.confusion_table());
    println!(
        "patient accuracy {:.4}, auc {:.4} over {} patients",
        report.rates.accuracy,
        report.auc,
        preds.len()
    );
    Ok(report)
}

/// One row of the scenario comparison table.
pub struct ScenarioResult {
    pub name: &'static str,
    pub report: MetricsReport,
}

/// Run preprocess, train, and eval under the four noise conditions, sharing
/// the base seed, and write one combined comparison table.
pub fn cmd_noise_exp(config: &RunConfig) -> Result<Vec<ScenarioResult>> {
    config.validate()?;
    let out = prepare_out_dir(config)?;

    let scenarios: [(&'static str, f64, f64); 4] = [
        ("clean", 0.0, 0.0),
        ("image", config.noise_image_sigma, 0.0),
        ("gate", 0.0, config.noise_gate_sigma),
        ("hybrid", config.noise_image_sigma, config.noise_gate_sigma),
    ];

    let mut results = Vec::with_capacity(scenarios.len());
    for (name, image_sigma, gate_sigma) in scenarios {
        println!(
            "scenario {name}: image sigma {image_sigma}, gate sigma {gate_sigma}"
        );
        let mut sub = config.clone();
        sub.image_sigma = image_sigma;
        sub.gate_sigma = gate_sigma;
        sub.out_dir = out.join(name);
        cmd_preprocess(&sub)?;
        cmd_train(&sub)?;
        let report = cmd_eval(&sub)?;
        results.push(ScenarioResult { name, report });
    }

    let mut csv = String::from("scenario,accuracy,auc,precision_1,recall_1,f1_1\n");
    for r in &results {
        let c1 = &r.report.rates.per_class[1];
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name, r.report.rates.accuracy, r.report.auc, c1.precision, c1.recall, c1.f1
        ));
    }
    write_atomic(&out.join(SCENARIOS_FILE), csv.as_bytes())?;
    config.save(&out.join(RUN_CONFIG_FILE))?;

    println!("scenario table written to {}", out.join(SCENARIOS_FILE).display());
    Ok(results)
}
