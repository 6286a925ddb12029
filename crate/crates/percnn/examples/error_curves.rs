//! Accumulative error curves: roll a physics-exact network and a frozen
//! (persistence) baseline forward against the reference solution and write
//! both curves as CSV and SVG. The network is the hand-built viscous
//! advection–diffusion model, so its curve stays near zero while
//! persistence drifts with the dynamics.

use percnn::model::rollout;
use percnn::solver::{generate_trajectory, smooth_random_ic, subsample};
use percnn::{accumulative_rmse, error_curve, FilterRole, ModelConfig, ModelParams,
    PdeSystem, Trajectory};

fn advection_diffusion_model(nu: f64, spacing: &[f64], dt: f64) -> (ModelConfig, ModelParams) {
    let mut config = ModelConfig::new(2, 2, 4, dt);
    config.filter_size = 1;
    config.layer_filter_sizes = Some(vec![5, 1]);
    config.roles = Some(vec![
        vec![
            FilterRole::FixedDx { channel: 0 },
            FilterRole::FixedDy { channel: 0 },
            FilterRole::FixedDx { channel: 1 },
            FilterRole::FixedDy { channel: 1 },
        ],
        vec![FilterRole::Free; 4],
    ]);
    let mut params = ModelParams::init(&config, spacing, 0).unwrap();
    let w = params.pi_weights[1].data_mut();
    w.fill(0.0);
    for (feature, channel) in [(0usize, 0usize), (1, 1), (2, 0), (3, 1)] {
        w[feature * 2 + channel] = -1.0;
    }
    params.pi_biases[1].data_mut().fill(0.0);
    let agg = params.agg_w.data_mut();
    agg.fill(0.0);
    agg[0] = 1.0;
    agg[1] = 1.0;
    agg[4 + 2] = 1.0;
    agg[4 + 3] = 1.0;
    params.agg_b.data_mut().fill(0.0);
    params.diff_coef.as_mut().unwrap().data_mut().fill(nu);
    (config, params)
}

fn main() {
    let nu = 0.005;
    let extents = [33usize, 33];
    let spacing = [1.0 / 32.0, 1.0 / 32.0];
    let sys = PdeSystem::burgers(nu);
    let ic = smooth_random_ic(2, &extents, &spacing, 21, 0.3);
    let reference = generate_trajectory(&sys, &ic, 120, 1e-3).expect("stable integration");

    // duplicate the reference initial state as a full-resolution measurement
    let m0 = subsample(
        &Trajectory::new(vec![reference.fields[0].clone()], 1e-3, 0.0).unwrap(),
        &[1, 1],
        1,
    )
    .unwrap();
    let (config, params) = advection_diffusion_model(nu, &spacing, 1e-3);
    let predicted = rollout(&m0, &params, &config, 120).expect("stable rollout");

    // persistence: the initial state, frozen
    let frozen = Trajectory::new(vec![reference.fields[0].clone(); 121], 1e-3, 0.0).unwrap();

    let model_curve = error_curve(&predicted, &reference, 60).unwrap();
    let frozen_curve = error_curve(&frozen, &reference, 60).unwrap();
    println!(
        "final accumulative error — physics-exact network: {:.4e}, persistence: {:.4e}",
        model_curve.rmse.last().unwrap(),
        frozen_curve.rmse.last().unwrap()
    );
    assert_eq!(
        accumulative_rmse(&predicted, &reference, 120).unwrap(),
        *model_curve.rmse.last().unwrap()
    );

    let dir = std::env::temp_dir().join("percnn-example-curves");
    std::fs::create_dir_all(&dir).unwrap();
    for (name, curve) in [("network", &model_curve), ("persistence", &frozen_curve)] {
        let mut csv = std::fs::File::create(dir.join(format!("{name}.csv"))).unwrap();
        curve.write_csv(&mut csv).unwrap();
        let mut svg = std::fs::File::create(dir.join(format!("{name}.svg"))).unwrap();
        curve.write_svg(&mut svg, &format!("{name} rollout error")).unwrap();
    }
    println!("curves written under {}", dir.display());
}
