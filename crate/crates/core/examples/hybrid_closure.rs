//! Learn a random-feature correction to an imperfect Lorenz '63 model and
//! compare forecast validity of the nominal, data-only and hybrid models.
//!
//! `cargo run --release --example hybrid_closure`

use mel::dynamics::{nominal_rhs, L63Params, Lorenz63, ModelError, ModelErrorSpec, SharedField};
use mel::features::sample_feature_map;
use mel::integrate::{integrate_uniform, sample_attractor_ics, IntegratorConfig};
use mel::markovian::{fit_markovian, HybridModel, Mode};
use mel::metrics::{validity_time_partial, DEFAULT_GAMMA};
use std::sync::Arc;

fn main() -> mel::Result<()> {
    let params = L63Params::default();
    let truth = Lorenz63::new(params);
    let error = ModelError::from_spec(&ModelErrorSpec::Parametric { eps: 0.05 }, 3, &params)?;
    let nominal: SharedField = Arc::new(nominal_rhs(truth, error)?);

    let (dt, cfg, model_cfg) = (0.001, IntegratorConfig::truth(), IntegratorConfig::model());
    let bounds = [(-15.0, 15.0), (-20.0, 20.0), (5.0, 40.0)];
    let ics = sample_attractor_ics(&truth, 4, 10.0, &bounds, 0, &cfg)?;
    let train = integrate_uniform(&truth, &ics[0], 20.0, dt, &cfg)?;
    let norm_scale = train.mean_norm();

    let map = sample_feature_map(3, 100, 0.05, 1.0, 1)?;
    let hybrid = fit_markovian(&train, Some(nominal.clone()), &map, 1e-6, Mode::ContinuousTime, &model_cfg)?;
    let data_only = fit_markovian(&train, None, &map, 1e-6, Mode::ContinuousTime, &model_cfg)?;
    let physics = HybridModel::nominal_only(Mode::ContinuousTime, nominal, model_cfg)?;

    for (k, x0) in ics[1..].iter().enumerate() {
        let test = integrate_uniform(&truth, x0, 10.0, dt, &cfg)?;
        let score = |m: &HybridModel| -> mel::Result<f64> {
            let pred = m.forecast(test.first_state(), test.horizon(), dt)?;
            validity_time_partial(&test, &pred, DEFAULT_GAMMA, norm_scale)
        };
        println!(
            "segment {k}: validity nominal {:.3}, data-only {:.3}, hybrid {:.3}",
            score(&physics)?,
            score(&data_only)?,
            score(&hybrid)?
        );
    }
    println!("hybrid training objective {:.3e}", hybrid.training_objective());
    Ok(())
}
