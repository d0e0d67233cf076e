use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prop_probe::corpus::Article;
use prop_probe::evaluation::{confusion_with, Prediction};
use prop_probe::gateway::FinishReason;
use prop_probe::parsing::parse_batch;
use prop_probe::prompting::{plan_corpus, PromptPattern, TokenBudget};
use prop_probe::techniques::{all_techniques, Technique};
use prop_probe::{Execution, GoldLabels};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn subset(rng: &mut ChaCha8Rng) -> BTreeSet<Technique> {
    all_techniques().iter().copied().filter(|_| rng.random_bool(0.25)).collect()
}

fn completions(n: usize) -> Vec<(String, FinishReason)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|_| {
            let mut lines: Vec<String> = subset(&mut rng).iter().map(|t| format!("- {t}")).collect();
            if rng.random_bool(0.1) {
                lines.push("Invented_Technique".into());
            }
            (lines.join("\n"), FinishReason::Stop)
        })
        .collect()
}

fn articles(n: usize) -> Vec<Article> {
    let paragraph = "The minister said the plan was a disaster for everyone. Critics disagreed! ".repeat(12);
    (0..n)
        .map(|i| Article {
            id: i.to_string(),
            text: vec![paragraph.as_str(); 8 + i % 5].join("\n\n"),
        })
        .collect()
}

fn bench_parse(c: &mut Criterion) {
    let mut group = c.benchmark_group("parse_batch");
    for n in [1_000, 20_000] {
        let input = completions(n);
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &input, |b, input| {
                b.iter(|| parse_batch(PromptPattern::Base, black_box(input), mode))
            });
        }
    }
    group.finish();
}

fn bench_confusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("confusion");
    for n in [1_000, 50_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gold: Vec<GoldLabels> = (0..n)
            .map(|i| GoldLabels {
                article_id: i.to_string(),
                labels: subset(&mut rng),
            })
            .collect();
        let pred: Vec<Prediction> = (0..n)
            .map(|i| Prediction {
                article_id: i.to_string(),
                labels: subset(&mut rng),
            })
            .collect();
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &(&gold, &pred), |b, (g, p)| {
                b.iter(|| confusion_with(black_box(g), black_box(p), mode).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_chunking(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan_corpus");
    let budget = TokenBudget::new(2048, 128, 820).unwrap();
    for n in [100, 1_000] {
        let input = articles(n);
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &input, |b, input| {
                b.iter(|| plan_corpus(black_box(input), &budget, mode))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_parse, bench_confusion, bench_chunking);
criterion_main!(benches);
