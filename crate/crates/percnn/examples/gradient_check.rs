//! Verify the reverse-mode gradients end to end: record a short training
//! rollout on the tape, assemble the two-term objective, backpropagate, and
//! compare every parameter's gradient against a central finite difference of
//! the pure (tape-free) loss.

use percnn::model::{rollout, rollout_on, ParamNodes};
use percnn::rng::Xoshiro256;
use percnn::train::loss;
use percnn::{Field, Measurement, ModelConfig, ModelParams, Tape, Trajectory};

fn objective(m: &Measurement, params: &ModelParams, config: &ModelConfig, n_steps: usize) -> f64 {
    let pred = rollout(m, params, config, n_steps).unwrap();
    let u0 = pred.fields[0].clone();
    loss(&pred, m, &u0, 0.5).unwrap()
}

fn main() {
    let mut config = ModelConfig::new(2, 3, 3, 0.02);
    config.filter_size = 3;
    config.isg_channels = 3;
    let extents = [9usize, 9];
    let spacing = [0.25, 0.25];
    let mut rng = Xoshiro256::seed_from_u64(5);
    let snapshots: Vec<Field> = (0..3)
        .map(|_| Field::from_fn(2, &[5, 5], &[0.5, 0.5], |_, _| rng.uniform_in(-0.5, 0.5)))
        .collect();
    let m = Measurement {
        data: Trajectory::new(snapshots, 0.04, 0.0).unwrap(),
        spatial_stride: vec![2, 2],
        temporal_stride: 2,
        noise_level: 0.0,
    };
    let params = ModelParams::init(&config, &spacing, 1).unwrap();
    let n_steps = 4;

    // tape side: the same objective the training loop uses
    let mut tape = Tape::new();
    let nodes = ParamNodes::record(&mut tape, &params, &config, &spacing);
    let snaps = rollout_on(&mut tape, &nodes, &m.data.fields[0], &config, &extents, &spacing, n_steps)
        .unwrap();
    let per = 1.0 / m.data.len() as f64;
    let mut terms = Vec::new();
    for (j, field) in m.data.fields.iter().enumerate() {
        let at = snaps[j * m.temporal_stride];
        let gathered = tape.gather_stride(at, &m.spatial_stride);
        let mse = tape.mse_against(gathered, field.tensor());
        terms.push((mse, per));
    }
    let up0 = m.data.fields[0].upsample(&extents).unwrap().into_tensor();
    let ic_term = tape.mse_against(snaps[0], &up0);
    terms.push((ic_term, 0.5));
    let total = tape.weighted_sum(&terms);
    let grads = tape.backward(total).unwrap();

    // finite differences of the pure loss, one scalar at a time
    let ids = nodes.ids();
    let tensors = params.tensors();
    let (mut checked, mut loose, mut worst) = (0usize, 0usize, 0.0f64);
    for (t_index, id) in ids.iter().enumerate() {
        let g = grads.get(*id).expect("gradient for every parameter");
        for k in 0..tensors[t_index].len() {
            let h = 1e-4;
            let mut plus = params.clone();
            plus.tensors_mut()[t_index].data_mut()[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t_index].data_mut()[k] -= h;
            let fd = (objective(&m, &plus, &config, n_steps)
                - objective(&m, &minus, &config, n_steps))
                / (2.0 * h);
            let ad = g.data()[k];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            if rel >= 1e-4 {
                loose += 1; // central-difference roundoff on tiny entries
            }
            checked += 1;
        }
    }
    println!(
        "checked {checked} parameters; worst relative error {worst:.3e}, {loose} above 1e-4"
    );
    assert!(worst < 1e-3, "gradients disagree with finite differences");
    assert!(loose * 100 <= checked, "more than 1% of parameters above 1e-4");
}
