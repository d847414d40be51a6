//! Integrate the Lorenz and Goldbeter systems and sample them uniformly.

use domlab::dynamics::{rk4_integrate, sample_uniform, ChannelScaling, Goldbeter, Lorenz};
use domlab::numerics::Vector;

fn main() {
    let lorenz = rk4_integrate(&Lorenz::default(), &Vector::from_vec(vec![1.0, 1.0, 1.0]), 1e-3, 30_000).unwrap();
    let u = sample_uniform(&lorenz, 0.01, 1000, 20.0).unwrap();
    let scaling = ChannelScaling::fit(&u.data);
    println!("Lorenz: {} samples on ({}, {}]", u.m(), u.t_start, u.end_time());
    println!("  channel means {:?}", scaling.mean);
    println!("  channel stds  {:?}", scaling.std);

    let x0 = Vector::from_vec(vec![0.6, 0.5, 0.4, 0.3, 0.4]);
    let gold = rk4_integrate(&Goldbeter::default(), &x0, 0.01, 100_000).unwrap();
    let last = gold.states.last().unwrap();
    println!("Goldbeter state at t = {}: {:.4?}", gold.end(), last.as_slice());

    let head: String = u.to_csv("lorenz", &["x", "y", "z"]).lines().take(5).collect::<Vec<_>>().join("\n");
    println!("{head}");
}
