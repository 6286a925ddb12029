//! The product block represents polynomials exactly: construct parameters by
//! hand so that three parallel pointwise layers multiply out to the
//! two-species reaction terms R(u) = (−uv² + f(1−u), uv² − (f+κ)v) and
//! check the network output equals the closed form to machine precision.

use percnn::rng::Xoshiro256;
use percnn::{elementwise_product, Field, ModelConfig, ModelParams};

/// Three layers of pointwise affine maps whose elementwise product spans
/// {uv², u, v, 1}; the aggregation then takes the reaction-term combination.
fn reaction_model(feed: f64, kappa: f64) -> (ModelConfig, ModelParams) {
    let mut config = ModelConfig::new(2, 3, 4, 0.01);
    config.filter_size = 1;
    let mut params = ModelParams::init(&config, &[1.0, 1.0], 0).unwrap();
    // layer factors per feature: (u,v,v) -> uv²; (u,1,1) -> u; (v,1,1) -> v;
    // (1,1,1) -> 1
    let selector = [
        [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 1.0, 0.0)], // uv²
        [(1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, 1.0)], // u
        [(0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, 1.0)], // v
        [(0.0, 0.0, 1.0), (0.0, 0.0, 1.0), (0.0, 0.0, 1.0)], // 1
    ];
    for layer in 0..3 {
        let w = params.pi_weights[layer].data_mut();
        w.fill(0.0);
        for (feature, factors) in selector.iter().enumerate() {
            let (wu, wv, _) = factors[layer];
            w[feature * 2] = wu;
            w[feature * 2 + 1] = wv;
        }
        let b = params.pi_biases[layer].data_mut();
        for (feature, factors) in selector.iter().enumerate() {
            b[feature] = factors[layer].2;
        }
    }
    // R_u = −1·uv² − f·u + 0·v + f·1 ; R_v = +1·uv² + 0·u − (f+κ)·v + 0
    let agg = params.agg_w.data_mut();
    agg.fill(0.0);
    agg[0] = -1.0;
    agg[1] = -feed;
    agg[3] = feed;
    agg[4] = 1.0;
    agg[6] = -(feed + kappa);
    params.agg_b.data_mut().fill(0.0);
    // isolate the product block: no diffusion contribution
    params.diff_coef.as_mut().unwrap().data_mut().fill(0.0);
    (config, params)
}

fn main() {
    let (feed, kappa) = (0.025, 0.055);
    let (config, params) = reaction_model(feed, kappa);

    let mut rng = Xoshiro256::seed_from_u64(17);
    let state = Field::from_fn(2, &[16, 16], &[1.0, 1.0], |_, _| rng.uniform_in(-1.0, 1.0));
    let got = percnn::model::pi_block_residual(&state, &params, &config).unwrap();
    let want = Field::from_fn(2, &[16, 16], &[1.0, 1.0], |c, idx| {
        let u = state.value_at(0, idx);
        let v = state.value_at(1, idx);
        if c == 0 {
            -u * v * v + feed * (1.0 - u)
        } else {
            u * v * v - (feed + kappa) * v
        }
    });
    let worst = got
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max |network − closed-form reaction| on random states: {worst:.3e}");
    assert!(worst < 1e-12);

    // the same machinery in miniature: two layers multiplying to u·v
    let u = Field::from_fn(1, &[2, 2], &[1.0, 1.0], |_, idx| (idx[0] + 1) as f64);
    let v = Field::from_fn(1, &[2, 2], &[1.0, 1.0], |_, idx| (idx[1] as f64) - 0.5);
    let prod = elementwise_product(&[&u, &v]).unwrap();
    println!(
        "elementwise product of two factors at (1,1): {} * {} = {}",
        u.value_at(0, &[1, 1]),
        v.value_at(0, &[1, 1]),
        prod.value_at(0, &[1, 1])
    );
}
