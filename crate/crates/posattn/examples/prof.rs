use posattn::attention::StudentParams;
use posattn::core::{make_positional_encoding, ActivationKind, EncodingScheme};
use posattn::stream::Purpose;
use posattn::teachers::{cycle_adjacency, gcn_regular_teacher, unit_norm_rows};
use posattn::trainer::{batch_gradients, batch_loss, sample_inputs, train, InputDist, TrainConfig};
use std::time::Instant;

fn main() {
    let teacher = gcn_regular_teacher(
        &cycle_adjacency(20),
        unit_norm_rows(5, 4, 1),
        ActivationKind::Relu,
    )
    .unwrap();
    let encoding = make_positional_encoding(20, EncodingScheme::RandomOrthogonal, 1).unwrap();
    let mut params = StudentParams::zeros(5, 4, encoding.clone());
    params.w_v = teacher.v_star.scale(0.5);

    let reps = 500;
    let t0 = Instant::now();
    let mut xs = Vec::new();
    for t in 0..reps as u64 {
        xs = sample_inputs(4, 20, 100, InputDist::Gaussian, 1, Purpose::Inputs, t).unwrap();
    }
    println!("sample_inputs: {:?}/step", t0.elapsed() / reps);

    let ys: Vec<_> = xs
        .iter()
        .map(|x| posattn::teachers::teacher_forward(&teacher, x).unwrap())
        .collect();
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = batch_loss(&params, ActivationKind::Relu, &xs, &ys).unwrap();
    }
    println!("batch_loss: {:?}/step", t0.elapsed() / reps);

    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = batch_gradients(&params, ActivationKind::Relu, &xs, &ys).unwrap();
    }
    println!("batch_gradients: {:?}/step", t0.elapsed() / reps);

    let cfg = TrainConfig {
        eta: 0.15,
        t_steps: 500,
        n: 100,
        seed: 1,
        noise_scale: 1.0,
        record_every: 250,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let _ = train(&teacher, encoding, &cfg).unwrap();
    println!("train: {:?}/step", t0.elapsed() / 500);
}
