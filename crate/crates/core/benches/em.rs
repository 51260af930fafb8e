use activemix::eval::{run_benchmark, BenchmarkConfig, CorpusSource};
use activemix::active::{SessionConfig, Strategy};
use activemix::exec::Execution;
use activemix::model::{e_step_with, fit_em, init_from_labels, m_step_with, EmOptions, Hyperparams, LabelStore};
use activemix::synthetic::{generate, SyntheticSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn setup(n_docs: usize, n_terms: usize) -> (activemix::corpus::Corpus, LabelStore, Hyperparams) {
    let data = generate(&SyntheticSpec {
        n_docs,
        n_terms,
        pi: vec![0.8, 0.2],
        mean_doc_len: 60.0,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let assignments = data.clusters.iter().enumerate().map(|(i, &z)| (i % 20 == 0).then_some(z)).collect();
    let labels = LabelStore::from_assignments(assignments, LabelStore::binary_names(), vec![0, 1]).unwrap();
    (data.corpus, labels, Hyperparams::binary(n_terms))
}

fn steps(c: &mut Criterion) {
    let (corpus, labels, h) = setup(20_000, 2_000);
    let params = init_from_labels(&corpus, &labels, &h, 0).unwrap();
    let post = e_step_with(&corpus, &labels, &params, Execution::Sequential);
    let mut g = c.benchmark_group("em_step");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("e_step", name), |b| b.iter(|| e_step_with(&corpus, &labels, &params, exec)));
        g.bench_function(BenchmarkId::new("m_step", name), |b| {
            b.iter(|| m_step_with(&corpus, &labels, &post, &h, h.lambda(), exec).unwrap())
        });
    }
    g.finish();
}

fn fit(c: &mut Criterion) {
    let (corpus, labels, h) = setup(5_000, 1_000);
    let init = init_from_labels(&corpus, &labels, &h, 0).unwrap();
    let mut g = c.benchmark_group("fit_em");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = EmOptions {
            execution: exec,
            ..EmOptions::default()
        };
        g.bench_function(name, |b| b.iter(|| fit_em(&corpus, &labels, &h, init.clone(), &opts).unwrap()));
    }
    g.finish();
}

fn grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("benchmark_grid");
    g.sample_size(10);
    for (name, exec) in MODES {
        let config = BenchmarkConfig {
            version: 1,
            source: CorpusSource::Synthetic(SyntheticSpec {
                n_docs: 1000,
                ..SyntheticSpec::default()
            }),
            positive_rate: None,
            strategies: vec![Strategy::Uncertainty, Strategy::Random],
            runs: 4,
            first_seed: 0,
            iterations: 5,
            doc_error_p: 0.0,
            keyword_error_p: 0.0,
            session: SessionConfig::default(),
            execution: exec,
        };
        g.bench_function(name, |b| b.iter(|| run_benchmark(&config).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, steps, fit, grid);
criterion_main!(benches);
