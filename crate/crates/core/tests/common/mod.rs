#![allow(dead_code)]

use std::path::Path;

use selfopt::harness::RunConfig;
use selfopt::tasks::{self, FamilyId, TaskFamily, TaskInstance};

pub const FAMILIES: [FamilyId; 4] = [
    FamilyId::NoisyQuadratic,
    FamilyId::LinearRegression,
    FamilyId::LogisticRegression,
    FamilyId::TinyMlpClassification,
];

/// Worst relative error of the analytic gradient against central
/// differences over `points` random points of one sampled task.
pub fn worst_fd_error(family: FamilyId, task_seed: u64, points: u64) -> f64 {
    let task = tasks::sample_problem(&TaskFamily::new(family, 3, 8).with_noise(0.0), task_seed);
    (0..points).map(|p| fd_error(&task, p)).fold(0.0, f64::max)
}

pub fn fd_error(task: &TaskInstance, point: u64) -> f64 {
    let x = tasks::init_params(task, 1000 + point);
    let batch = 7 + point;
    let g = tasks::gradient(task, &x, batch).unwrap();
    let h = 1e-5;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (tasks::loss(task, &xp, batch).unwrap() - tasks::loss(task, &xm, batch).unwrap()) / (2.0 * h);
        num += (fd - g[i]).powi(2);
        den += g[i].powi(2).max(fd * fd);
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// A run small enough to train in a second or two.
pub fn small_config(out: &Path, total: u64, workers: usize) -> RunConfig {
    let text = format!(
        r#"
master_seed = 11
workers = {workers}
checkpoint_every = 1
out_dir = "{}"

[pbt]
pop_size = 3
tournament_interval = 10
eval_tasks = 3
eval_steps = 30
trunc_choices = [5, 10]
total_outer_steps = {total}
theta_init_scale = 0.5

[pbt.pool]
size = 2
horizon = 40

[es]
n_pairs = 3

[[tasks]]
id = "NoisyQuadratic"
dim_min = 2
dim_max = 5
noise_scale = 0.01

[[tasks]]
id = "LinearRegression"
dim_min = 2
dim_max = 5
"#,
        out.display()
    );
    RunConfig::from_toml(&text).unwrap()
}
