//! Parallel versus sequential execution of the data-parallel kernels.
//!
//! Every group runs the same workload under `Exec::Sequential` and
//! `Exec::Parallel`; both paths produce bit-identical results.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hawkes_emv::emv::{component_spec, component_weights, update_branching, BranchingMatrix, Which};
use hawkes_emv::eval::{loglik_many, pre_acc, DEFAULT_WARMUP_FRAC};
use hawkes_emv::kernels::KernelParams;
use hawkes_emv::simulate::{sample_many, synthetic_case};
use hawkes_emv::{EventSequence, Exec};
use std::hint::black_box;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

/// Case 1 realisations pooled over `r` seeds.
fn case1(r: u64) -> Vec<EventSequence> {
    let gt = synthetic_case(1).unwrap();
    gt.sample_many(&(0..r).collect::<Vec<_>>(), Exec::Parallel).unwrap()
}

fn elbo_and_gradient(c: &mut Criterion) {
    let seqs = case1(20);
    let p: Vec<BranchingMatrix> = seqs.iter().map(|s| BranchingMatrix::uniform(s, 6.0)).collect();
    let w = component_weights(Which::Phi, &p);
    let params = KernelParams::new(1.0, 0.5).unwrap();
    let mut group = c.benchmark_group("phi_elbo_and_gradient");
    for (name, exec) in POLICIES {
        let problem = component_spec(Which::Phi, &seqs, 6, 6.0, 1e-6, exec)
            .unwrap()
            .build(&params)
            .unwrap();
        let s: Vec<f64> = vec![0.1; 6];
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let f = problem.elbo_diag(black_box(&s), &w);
                let g = problem.grad_diag(&s, &w);
                black_box((f, g))
            })
        });
    }
    group.finish();
}

fn e_step(c: &mut Criterion) {
    let truth = synthetic_case(4).unwrap();
    let seqs = case1(8);
    let mut group = c.benchmark_group("e_step");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                seqs.iter()
                    .map(|s| update_branching(&truth, s, exec).unwrap())
                    .collect::<Vec<_>>()
            })
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let truth = synthetic_case(2).unwrap();
    let seeds: Vec<u64> = (0..32).collect();
    let mut group = c.benchmark_group("simulate_32_seeds");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_many(&truth, 100.0, black_box(&seeds), exec).unwrap())
        });
    }
    group.finish();
}

fn likelihood(c: &mut Criterion) {
    let truth = synthetic_case(1).unwrap();
    let seqs = case1(32);
    let mut group = c.benchmark_group("loglik_32_seqs");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loglik_many(&truth, black_box(&seqs), exec).unwrap())
        });
    }
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let truth = synthetic_case(1).unwrap();
    let seq = &case1(1)[0];
    let mut group = c.benchmark_group("pre_acc");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pre_acc(&truth, seq, 0.5, DEFAULT_WARMUP_FRAC, 100, 0, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, elbo_and_gradient, e_step, simulation, likelihood, prediction);
criterion_main!(benches);
