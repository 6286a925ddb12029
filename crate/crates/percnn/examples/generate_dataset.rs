//! Generate a reference solution and turn it into the kind of sparse, noisy
//! measurement the training pipeline consumes: integrate a two-species
//! reaction–diffusion system, stride-subsample in space and time, then add
//! relative Gaussian noise.

use percnn::solver::{add_noise, generate_trajectory, perturbed_uniform_ic, subsample};
use percnn::{DatasetKind, PdeSystem};

fn main() {
    // 33x33 nodes over [-50, 50]^2, 200 half-unit time steps
    let extents = [33usize, 33];
    let spacing = [100.0 / 32.0, 100.0 / 32.0];
    let sys = PdeSystem::gray_scott_2d(0.2, 0.1, 0.055, 0.025);
    let ic = perturbed_uniform_ic(&extents, &spacing, 7, 0.02);
    let clean = generate_trajectory(&sys, &ic, 200, 0.5).expect("stable integration");
    println!(
        "integrated {} snapshots of {} cells each",
        clean.len(),
        clean.fields[0].cells()
    );

    // every 4th node, every 20th step, 5% noise
    let m = subsample(&clean, &[4, 4], 20).expect("strides divide the grid");
    let noisy = add_noise(&m, 0.05, 11);
    println!(
        "measurement: {} snapshots of {:?} nodes, noise level {}",
        noisy.data.len(),
        noisy.data.fields[0].extents(),
        noisy.noise_level
    );

    let dir = std::env::temp_dir().join("percnn-example-dataset");
    std::fs::create_dir_all(&dir).unwrap();
    percnn::write_trajectory(&dir.join("clean.pcnf"), &clean, DatasetKind::GrayScott2d).unwrap();
    percnn::write_trajectory(&dir.join("measurement.pcnf"), &noisy.data, DatasetKind::GrayScott2d)
        .unwrap();
    let (back, kind) = percnn::read_trajectory(&dir.join("clean.pcnf")).unwrap();
    assert_eq!(back.len(), clean.len());
    println!("round-tripped {} snapshots of kind {:?} via {}", back.len(), kind, dir.display());
}
