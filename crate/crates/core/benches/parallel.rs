use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wavestack::channels::sample_iid_rayleigh;
use wavestack::config::ExperimentConfig;
use wavestack::exec::with_threads;
use wavestack::fim::diversity_gain_curve;
use wavestack::optim::{random_phases, ClassificationProblem, EnergyReadout, PhaseChain, Problem};
use wavestack::runner;
use wavestack::sim::{GeometrySpec, SimStack};

// 1 thread is the sequential baseline; 0 is the full global pool.
const POOLS: [(&str, usize); 2] = [("sequential", 1), ("parallel", 0)];

fn diversity(c: &mut Criterion) {
    let mut g = c.benchmark_group("diversity_monte_carlo");
    g.sample_size(10);
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::new(name, 2000), |b| {
            b.iter(|| with_threads(threads, || diversity_gain_curve(&[0.0, 0.4, 0.8], 1.0, 2000, 0.01, 1).unwrap()))
        });
    }
    g.finish();
}

fn classification(c: &mut Criterion) {
    let spec = GeometrySpec {
        layers: 3,
        grid_nx: 12,
        grid_ny: 12,
        tx_ports: 64,
        rx_ports: 6,
        ..GeometrySpec::default()
    };
    let geometry = spec.build().unwrap();
    let tx = SimStack::random(geometry.clone(), 1).unwrap();
    let rx = SimStack::random(geometry, 2).unwrap();
    let n = tx.atoms();
    let h = sample_iid_rayleigh(n, n, 3).unwrap().matrix;
    let chain = PhaseChain::from_stacks(&tx, &h, Some(&rx)).unwrap();
    let inputs = sample_iid_rayleigh(64, 512, 4).unwrap().matrix;
    let labels = (0..512).map(|k| k % 6).collect();
    let problem = ClassificationProblem::new(chain, inputs, labels, EnergyReadout::new(6, 6).unwrap()).unwrap();
    let theta = random_phases(problem.num_phases(), 5);

    let mut g = c.benchmark_group("classification_gradient");
    g.sample_size(10);
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::new(name, 512), |b| {
            b.iter(|| with_threads(threads, || problem.evaluate(&theta).unwrap()))
        });
    }
    g.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let config = ExperimentConfig::parse_str("kind = papr\nseeds = 1,2,3,4,5,6,7,8\npapr.symbols = 4000\n").unwrap();
    let mut g = c.benchmark_group("papr_seed_sweep");
    g.sample_size(10);
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::new(name, 8), |b| b.iter(|| runner::execute(&config, None, threads).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, diversity, classification, seed_sweep);
criterion_main!(benches);
