use krom_core::control::{
    run_closed_loop, Admissible, ClosedLoopRecord, GradientOptions, LoopModel, LoopOptions, LoopSummary, MpcProblem,
    Reference, StageCost,
};
use krom_core::krom::{PiecewiseBilinear, RomPlant};
use krom_core::plants::Plant;
use krom_core::{LocalizedKrom, SwitchedKrom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{load_krom, load_label_models, sim_plant, write_atomic, write_json};
use crate::config::{ExperimentConfig, LoopPlant, MpcConfig, ReferenceSpec};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcReport {
    pub seed: u64,
    pub steps: usize,
    pub plant_steps: usize,
    pub horizon: usize,
    #[serde(flatten)]
    pub summary: LoopSummary,
    /// Tracking error of the last recorded sample.
    pub final_tracking_error: f64,
    /// Every applied control equals the first entry of its horizon solution.
    pub first_entry_audit: bool,
    #[serde(skip)]
    pub record: ClosedLoopRecord,
}

fn reference(spec: &ReferenceSpec, h: f64, steps: usize) -> CliResult<Reference> {
    let r = match spec {
        ReferenceSpec::Constant { values } => Reference::constant(values.clone()),
        ReferenceSpec::Sinusoid {
            offset,
            amplitude,
            omega,
        } => Reference::sinusoid(*offset, *amplitude, *omega, h, steps),
        ReferenceSpec::Table { rows } => Reference::table(rows.clone()),
    };
    r.map_err(|e| CliError::config(format!("mpc.reference: {e}")))
}

fn problem(spec: &MpcConfig, h: f64, q: usize) -> CliResult<MpcProblem> {
    // the reference must outlast the last horizon of the loop
    let reference = reference(&spec.reference, h, spec.steps + spec.horizon + 2)?;
    let cost = StageCost::tracking(spec.components.clone(), spec.weights.clone(), reference)
        .map_err(|e| CliError::config(format!("mpc: {e}")))?;
    cost.check_dimension(q).map_err(|e| CliError::config(format!("mpc.components: {e}")))?;
    MpcProblem::new(spec.horizon, cost, spec.admissible.clone(), h).map_err(|e| CliError::config(format!("mpc: {e}")))
}

/// Closes the receding-horizon loop around the configured plant (or around
/// the reduced model itself) and writes the record and its summary.
pub fn mpc(cfg: &ExperimentConfig) -> CliResult<MpcReport> {
    let spec = cfg.mpc.as_ref().ok_or_else(|| CliError::config("mpc: section missing"))?;

    let switched;
    let krom: LocalizedKrom;
    let model = match &spec.admissible {
        Admissible::Labels { labels } => {
            let members: Vec<_> = load_label_models(cfg)?
                .into_iter()
                .filter(|m| labels.contains(&m.control_label()))
                .collect();
            if members.len() != labels.len() {
                return Err(CliError::Data("fitted models do not cover every admissible label".into()));
            }
            switched = SwitchedKrom::new(members)?;
            LoopModel::Switched(&switched)
        }
        Admissible::Interval { lo, hi } => {
            krom = load_krom(cfg)?;
            let (clo, chi) = krom.covered();
            if *lo < clo || *hi > chi {
                return Err(CliError::config(format!(
                    "mpc.admissible: [{lo}, {hi}] is not covered by the fitted model [{clo}, {chi}]"
                )));
            }
            LoopModel::Continuous(&krom)
        }
    };
    let (h, q) = match model {
        LoopModel::Switched(s) => (s.h(), s.dictionary().q()),
        LoopModel::Continuous(m) => (m.h(), m.dictionary().q()),
    };
    let prob = problem(spec, h, q)?;

    let initial_control = spec.initial_control.unwrap_or(match &spec.admissible {
        Admissible::Labels { labels } => labels[0],
        Admissible::Interval { lo, hi } => 0.5 * (lo + hi),
    });
    let opts = LoopOptions {
        latency_compensation: spec.latency_compensation,
        initial_control,
        gradient: GradientOptions {
            gtol: spec.gtol,
            max_iter: spec.max_iter,
            ..GradientOptions::default()
        },
        record_timing: spec.record_timing,
        ..LoopOptions::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let record = match spec.plant {
        LoopPlant::Plant => {
            let plant = sim_plant(cfg, "mpc")?;
            let x0 = plant.initial_state(&spec.initial, &mut rng, "mpc.initial")?;
            run_closed_loop(plant.as_plant(), &x0, model, &prob, spec.steps, &opts)?
        }
        LoopPlant::Model => {
            let models = load_label_models(cfg)?;
            let twin = RomPlant::new(LocalizedKrom::from_models(&models)?);
            let z0 = match &spec.initial {
                crate::config::InitialSpec::State(z) if z.len() == q => z.clone(),
                _ => return Err(CliError::config(format!("mpc.initial: a model plant needs {q} observables"))),
            };
            let x0 = twin.initial_state(&z0)?;
            if let Admissible::Interval { lo, hi } = &spec.admissible {
                let (clo, chi) = twin.control_bounds();
                if *lo < clo || *hi > chi {
                    return Err(CliError::config("mpc.admissible: bounds exceed the model plant's interval"));
                }
            }
            run_closed_loop(&twin, &x0, model, &prob, spec.steps, &opts)?
        }
    };

    let dir = cfg.output.join("mpc");
    let mut csv = Vec::new();
    record.write_csv(&mut csv)?;
    write_atomic(&dir.join("closed_loop.csv"), &csv)?;

    let final_tracking_error = record.rows.last().map_or(f64::NAN, |r| {
        let step = (r.t / h).round() as usize;
        let target = prob.cost.reference().at(step);
        prob.cost
            .components()
            .iter()
            .zip(target)
            .map(|(&c, &t)| (r.z[c] - t).abs())
            .fold(0.0, f64::max)
    });
    let report = MpcReport {
        seed: cfg.seed,
        steps: spec.steps,
        plant_steps: record.plant_steps,
        horizon: spec.horizon,
        summary: record.summary(&prob),
        final_tracking_error,
        first_entry_audit: record.rows.iter().all(|r| r.horizon.first() == Some(&r.u_applied)),
        record,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}
