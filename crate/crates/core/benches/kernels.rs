//! Serial versus rayon execution of the data-parallel kernels on a synthetic
//! benchmark of 200 drugs and 3000 pairs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rxcycle::config::Config;
use rxcycle::cycle::{score_backbone, Workspace};
use rxcycle::data::split_dataset;
use rxcycle::ontology::IngredientGraph;
use rxcycle::par::Exec;
use rxcycle::rx_parse::Lexicon;
use rxcycle::synth::{synth_generate, SynthSpec};

const EXECS: [(&str, Exec); 2] = [("serial", Exec::Serial), ("parallel", Exec::Parallel)];

fn kernels(c: &mut Criterion) {
    let spec = SynthSpec {
        n_drugs: 200,
        n_pairs: 3000,
        ..SynthSpec::default()
    };
    let synth = synth_generate(&spec).expect("generator");
    let ontology = IngredientGraph::parse(&synth.ontology_edges, &synth.drug_map).expect("ontology");
    let lexicon = Lexicon::parse(&synth.lexicon);
    let pairs = split_dataset(&synth.pairs, 0.65, 0).expect("split");
    let config = Config::default();
    let ws = Workspace::prepare(pairs, &lexicon, Some(&ontology), None, 64, 0, Exec::Parallel).expect("workspace");
    let backbone = ws.new_backbone(&config).expect("backbone");
    let scores = score_backbone(&ws, &backbone, Exec::Parallel);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, exec) in EXECS {
        group.bench_with_input(BenchmarkId::new("distance_matrix", name), &exec, |b, &exec| {
            b.iter(|| ontology.distance_matrix(&ws.drugs, exec))
        });
        group.bench_with_input(BenchmarkId::new("score_backbone", name), &exec, |b, &exec| {
            b.iter(|| score_backbone(&ws, &backbone, exec))
        });
        group.bench_with_input(BenchmarkId::new("build_graph", name), &exec, |b, &exec| {
            b.iter(|| ws.graph(&config, &scores, exec).expect("graph"))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
