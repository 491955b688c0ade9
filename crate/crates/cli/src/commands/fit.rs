use krom_core::edmd::{select_ridge, RidgeScore};
use krom_core::krom::make_bilinear;
use krom_core::model_io::{koopman_to_json, localized_to_json};
use krom_core::plants::{ingest, SnapshotArchive};
use krom_core::{fit as edmd_fit, Dictionary, FitOptions, KoopmanModel, LocalizedKrom};
use serde::Serialize;

use super::{data_dir, model_file_name, models_dir, write_atomic, write_json, KROM_FILE};
use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelReport {
    pub label: f64,
    /// Training pairs.
    pub m: usize,
    pub fit_residual: f64,
    /// One-step RMS error on the held-out episodes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_error: Option<f64>,
    pub spectral_radius: Option<f64>,
    /// Eigenvalues with modulus above one, beyond round-off.
    pub unstable_eigenvalues: Option<usize>,
    /// Leading eigenvalues as `[re, im]`, by decreasing modulus.
    pub leading_eigenvalues: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub q: usize,
    pub max_order: usize,
    pub k: usize,
    pub kind: ModelKind,
    pub knots: Vec<f64>,
    pub ridge: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge_scores: Option<Vec<RidgeScore>>,
    pub training_episodes: usize,
    pub held_out_episodes: usize,
    pub labels: Vec<LabelReport>,
}

/// Fits one Koopman matrix per control label found in `out/data`, plus the
/// interpolating model over the configured knots.
pub fn fit(cfg: &ExperimentConfig) -> CliResult<FitReport> {
    let archive = ingest(&data_dir(cfg))?;
    if let Some(q) = cfg.dictionary.q {
        if q != archive.q {
            return Err(CliError::config(format!(
                "dictionary.q: {q} does not match the {} observables in the data",
                archive.q
            )));
        }
    }
    let dict = Dictionary::new(archive.q, cfg.dictionary.max_order)?;
    let (train, test): (SnapshotArchive, Option<SnapshotArchive>) = if cfg.data.held_out > 0 {
        let (a, b) = archive.split_episodes(cfg.data.held_out)?;
        (a, Some(b))
    } else {
        (archive, None)
    };

    let present = train.labels();
    if let Some(u) = cfg.data.labels.iter().find(|u| !present.contains(u)) {
        return Err(CliError::Data(format!("no training pairs recorded at control {u}")));
    }

    let (ridge, ridge_scores) = match &cfg.model.ridge_ladder {
        Some(ladder) => {
            let folds = train.leave_one_episode_out()?;
            let (best, scores) = select_ridge(&dict, &folds, ladder, cfg.model.svd_tol)?;
            log::info!("ridge {best} selected by leave-one-episode-out validation");
            (best, Some(scores))
        }
        None => (cfg.model.ridge, None),
    };
    let options = FitOptions {
        svd_tol: cfg.model.svd_tol,
        ridge,
    };

    let held_sets = match &test {
        Some(t) => t.to_snapshots()?,
        None => Vec::new(),
    };
    clear_models(cfg)?;
    let mut models: Vec<KoopmanModel> = Vec::new();
    let mut reports = Vec::new();
    for set in train.to_snapshots()? {
        let model = edmd_fit(&dict, &set, options)?;
        let held_out_error = held_sets
            .iter()
            .find(|s| s.control_label() == set.control_label())
            .map(|s| model.one_step_error(s))
            .transpose()?;
        reports.push(label_report(&model, set.len(), held_out_error));
        write_atomic(
            &models_dir(cfg).join(model_file_name(model.control_label())),
            koopman_to_json(&model)?.as_bytes(),
        )?;
        models.push(model);
    }

    let knots = cfg.knots();
    if cfg.model.kind != ModelKind::Switched {
        let at_knots: Vec<KoopmanModel> = knots
            .iter()
            .map(|u| models.iter().find(|m| m.control_label() == *u).cloned().expect("labels checked"))
            .collect();
        let krom = match cfg.model.kind {
            ModelKind::Bilinear => LocalizedKrom::from(make_bilinear(&at_knots[0], &at_knots[1])?),
            _ => LocalizedKrom::from_models(&at_knots)?,
        };
        write_atomic(&models_dir(cfg).join(KROM_FILE), localized_to_json(&krom)?.as_bytes())?;
    }

    let report = FitReport {
        q: dict.q(),
        max_order: dict.max_order(),
        k: dict.k(),
        kind: cfg.model.kind,
        knots,
        ridge,
        ridge_scores,
        training_episodes: train.episodes.len(),
        held_out_episodes: test.as_ref().map_or(0, |t| t.episodes.len()),
        labels: reports,
    };
    write_json(&cfg.output.join("fit_report.json"), &report)?;
    Ok(report)
}

/// Removes model files of an earlier fit so that stale labels cannot leak in.
fn clear_models(cfg: &ExperimentConfig) -> CliResult<()> {
    let Ok(entries) = std::fs::read_dir(models_dir(cfg)) else {
        return Ok(());
    };
    for path in entries.filter_map(|e| e.ok().map(|e| e.path())) {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name == KROM_FILE || (name.starts_with("model_u") && name.ends_with(".json")) {
            std::fs::remove_file(&path)?;
        }
    }
    Ok(())
}

fn label_report(model: &KoopmanModel, m: usize, held_out_error: Option<f64>) -> LabelReport {
    let mut eig = match model.spectrum() {
        Ok(e) => e,
        Err(e) => {
            log::warn!("spectrum of the u = {} model unavailable: {e}", model.control_label());
            Vec::new()
        }
    };
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let known = !eig.is_empty();
    LabelReport {
        label: model.control_label(),
        m,
        fit_residual: model.fit_residual(),
        held_out_error,
        spectral_radius: known.then(|| eig[0].norm()),
        unstable_eigenvalues: known.then(|| eig.iter().filter(|z| z.norm() > 1.0 + 1e-9).count()),
        leading_eigenvalues: eig.iter().take(6).map(|z| [z.re, z.im]).collect(),
    }
}
