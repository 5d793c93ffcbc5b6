use biasprompt::metrics::{bleu4, meteor, token_f1};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

const GOLD: &str = "they are all lazy and they never do any real work";
const PRED: &str = "those people are lazy and never do real work at all";

fn bench_metrics(c: &mut Criterion) {
    c.bench_function("token_f1", |b| b.iter(|| token_f1(black_box(PRED), black_box(GOLD))));
    c.bench_function("bleu4", |b| b.iter(|| bleu4(black_box(PRED), black_box(GOLD))));
    c.bench_function("meteor", |b| b.iter(|| meteor(black_box(PRED), black_box(GOLD))));
}

criterion_group!(benches, bench_metrics);
criterion_main!(benches);
