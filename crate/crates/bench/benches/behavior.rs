use criterion::{black_box, criterion_group, criterion_main, Criterion};
use dvd_bench::random_sequences;
use dvd_core::eval_behavior::classify;
use dvd_core::toolset::ToolKind;

fn classes(c: &mut Criterion) {
    let seqs: Vec<Vec<ToolKind>> = random_sequences(10_000, 12, 3, 3)
        .into_iter()
        .map(|s| s.into_iter().map(|i| ToolKind::ALL[i]).collect())
        .collect();
    c.bench_function("classify_10k", |b| {
        b.iter(|| {
            for s in &seqs {
                black_box(classify(s));
            }
        })
    });
}

criterion_group!(benches, classes);
criterion_main!(benches);
