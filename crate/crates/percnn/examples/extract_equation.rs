//! Read a network back as an equation: build a model whose recurrent block
//! is, by construction, the viscous advection–diffusion rule
//! `u_t = −u·u_x − v·u_y + ν·Δu` (frozen derivative stencils multiplied by
//! free pointwise factors), expand it symbolically, and verify the expansion
//! against the network's own forward pass.

use percnn::{
    equation_report, expand_with_derivatives, prune, verify_extraction, FilterRole, ModelConfig,
    ModelParams,
};

fn advection_diffusion_model(nu: f64) -> (ModelConfig, ModelParams) {
    let mut config = ModelConfig::new(2, 2, 4, 2.5e-4);
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
    let mut params = ModelParams::init(&config, &[1.0, 1.0], 0).unwrap();
    // pair each derivative with −(advecting velocity): features become
    // (−u·u_x, −v·u_y, −u·v_x, −v·v_y)
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
    let (config, params) = advection_diffusion_model(0.005);
    let exprs = expand_with_derivatives(&params, &config).expect("interpretable model");

    // the symbolic expansion is checked against the network itself:
    // max |Π-block(state) − polynomial(state)| over random states
    let deviation = verify_extraction(&exprs, &params, &config, 50, 42).unwrap();
    println!("max deviation between network and its polynomial: {deviation:.3e}");
    assert!(deviation < 1e-10);

    let pruned: Vec<_> = exprs.iter().map(|e| prune(e, 1e-4)).collect();
    print!("{}", equation_report(&pruned));
}
