//! Acceptance suite. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any criterion fails.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use biasprompt::corpus::{self, DropReport, FilterRule, Split};
use biasprompt::decoding::{
    self, label_tokens, Constraint, IdentifyOutcome, LabelTrie, SamplerParams, SpanState,
};
use biasprompt::metrics::{bleu4, meteor, token_f1};
use biasprompt::model::{spawn_server, LogitProvider, LogitRequest, MockFallback, MockModel, ServeOptions};
use biasprompt::runner::{self, Experiment, ExperimentConfig, VariantSelection};
use biasprompt::sampling::{sample_oracle, FewShotConfig, Strategy as FewShot};
use biasprompt::templating::{expand_descriptions, Task, TemplateClass};
use biasprompt::tokenization::{load_tokenizer, Tokenizer, Vocabulary, WordTokenizer};
use biasprompt::{Dimension, Document, TokenId};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fixture_tokenizer() -> Box<dyn Tokenizer> {
    load_tokenizer("word:vocab.txt", &fixtures()).unwrap()
}

fn fixture_docs() -> Vec<Document> {
    corpus::load_records(fixtures().join("dataset.jsonl")).unwrap()
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:.2?}, limit {limit:?}"))
}

// 1

fn template_combinatorics() -> Outcome {
    let start = Instant::now();
    let expected = [
        (Task::Identification, [24, 12, 72]),
        (Task::Extraction, [36, 18, 108]),
        (Task::Rephrasing, [12, 6, 36]),
    ];
    let classes = [TemplateClass::Statement, TemplateClass::Question, TemplateClass::Completion];
    let mut summary = Vec::new();
    for (task, counts) in expected {
        for (class, want) in classes.iter().zip(counts) {
            let descs = expand_descriptions(task, *class).map_err(|e| e.to_string())?;
            ensure(descs.len() == want, || format!("{task}/{class}: {} descriptions, want {want}", descs.len()))?;
            let distinct: HashSet<&str> = descs.iter().map(|d| d.rendered.as_str()).collect();
            ensure(distinct.len() == want, || format!("{task}/{class}: duplicate rendered strings"))?;
            summary.push(want.to_string());
        }
    }
    let diag = expand_descriptions(Task::Diagnosis, TemplateClass::Question).map_err(|e| e.to_string())?;
    ensure(diag.len() == 2, || format!("diagnosis/question: {} descriptions", diag.len()))?;
    ensure(diag[0].rendered != diag[1].rendered, || "diagnosis descriptions coincide".into())?;
    within(start.elapsed(), Duration::from_secs(1), "expansion")?;
    Ok(format!("{} + diagnosis 2, all distinct", summary.join("/")))
}

// 2

/// Independent greedy search over the label list: at each step the allowed
/// tokens are the next tokens of all labels extending the prefix, plus EOS
/// after the first step (only on a complete label when `eos_only_complete`).
fn brute_force_identify(
    model: &dyn LogitProvider,
    prompt: &[TokenId],
    labels: &[(Dimension, Vec<TokenId>)],
    eos: TokenId,
    eos_only_complete: bool,
) -> IdentifyOutcome {
    let max_len = labels.iter().map(|(_, l)| l.len()).max().unwrap() + 1;
    let mut prefix: Vec<TokenId> = Vec::new();
    let mut ended = false;
    for _ in 0..max_len {
        let mut allowed: BTreeSet<TokenId> = labels
            .iter()
            .filter(|(_, l)| l.len() > prefix.len() && l.starts_with(&prefix))
            .map(|(_, l)| l[prefix.len()])
            .collect();
        let complete = labels.iter().any(|(_, l)| *l == prefix);
        if !prefix.is_empty() && (!eos_only_complete || complete) {
            allowed.insert(eos);
        }
        let mut ctx = prompt.to_vec();
        ctx.extend_from_slice(&prefix);
        let scores = model.next_logits(&LogitRequest::full(ctx.into())).unwrap().scores;
        let mut best = None;
        for t in allowed {
            let s = scores[&t];
            match best {
                Some((_, bs)) if s <= bs => {}
                _ => best = Some((t, s)),
            }
        }
        let token = best.unwrap().0;
        if token == eos {
            ended = true;
            break;
        }
        prefix.push(token);
    }
    match labels.iter().find(|(_, l)| *l == prefix) {
        Some((d, _)) if ended => IdentifyOutcome::Label(*d),
        _ => IdentifyOutcome::IncompletePrefix(prefix.into()),
    }
}

fn trie_oracle() -> Outcome {
    let start = Instant::now();
    let tok = fixture_tokenizer();
    let vocab = tok.vocab();
    let eos = vocab.eos_id();
    let v = vocab.size();
    let labels: Vec<(Dimension, Vec<TokenId>)> =
        label_tokens(tok.as_ref(), true).unwrap().into_iter().map(|(d, s)| (d, s.into_inner())).collect();
    let trie = LabelTrie::build(tok.as_ref(), true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut label_hits = 0;
    for case in 0..50u64 {
        let fallback = if case % 5 == 4 {
            MockFallback::Floor
        } else {
            MockFallback::Hashed { salt: rng.gen(), window: rng.gen_range(1..4), eos_bias: rng.gen_range(-3.0..3.0) }
        };
        let mut model = MockModel::new(v, eos).with_fallback(fallback);
        let prompt: Vec<TokenId> = (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0..v as TokenId)).collect();
        for _ in 0..rng.gen_range(0..4) {
            let (_, label) = &labels[rng.gen_range(0..labels.len())];
            let cut = rng.gen_range(0..label.len());
            let mut suffix = prompt.clone();
            suffix.extend_from_slice(&label[..cut]);
            model = model.with_rule(suffix, [(label[cut], 9.0), (eos, rng.gen_range(-9.0..12.0))]);
        }
        let eos_only = case % 2 == 1;
        let (got, _) = decoding::identify(&model, &prompt, &trie, eos, eos_only).map_err(|e| e.to_string())?;
        let want = brute_force_identify(&model, &prompt, &labels, eos, eos_only);
        ensure(got == want, || format!("case {case}: identify gave {got:?}, oracle {want:?}"))?;
        label_hits += usize::from(got.label().is_some());
    }
    within(start.elapsed(), Duration::from_secs(5), "50 cases")?;
    Ok(format!("50/50 cases agree ({label_hits} complete labels)"))
}

// 3

fn doc_strategy(docs: Vec<Vec<TokenId>>) -> impl proptest::strategy::Strategy<Value = (Vec<TokenId>, u64, u64)> {
    let n = docs.len();
    let from_fixture = (0..n).prop_map(move |i| docs[i].clone());
    let repetitive = proptest::collection::vec(300u32..306, 1..30);
    (prop_oneof![from_fixture, repetitive], any::<u64>(), any::<u64>())
}

fn fixture_token_docs(tok: &dyn Tokenizer) -> Vec<Vec<TokenId>> {
    fixture_docs().iter().map(|d| tok.tokenize(&d.text).unwrap().into_inner()).collect()
}

fn span_soundness() -> Outcome {
    let tok = fixture_tokenizer();
    let v = tok.vocab().size();
    let eos = tok.vocab().eos_id();
    let mut runner = runner(1000);
    let cases = Cell::new(0usize);
    let result = runner.run(&doc_strategy(fixture_token_docs(tok.as_ref())), |(doc, seed, salt)| {
        let model = MockModel::hashed(v, eos, salt);
        let params = SamplerParams { rng_seed: seed, ..SamplerParams::default() };
        let g = decoding::extract_span(&model, &doc, eos, &params, &doc)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let out = g.tokens.ids();
        prop_assert!(!out.is_empty());
        prop_assert!(doc.windows(out.len()).any(|w| w == out), "{out:?} is not a span of {doc:?}");
        cases.set(cases.get() + 1);
        Ok(())
    });
    result.map_err(|e| e.to_string())?;

    let vocab = Vocabulary::with_byte_fallback(&[" read", " those", " opinion", " pieces", " and", " were", " awful"])
        .unwrap();
    let t = WordTokenizer::new(vocab);
    let id = |w: &str| t.vocab().id_of(w.as_bytes()).unwrap();
    let doc = t.tokenize(" read those opinion pieces and those opinion pieces were awful").unwrap().into_inner();
    let want = BTreeSet::from([t.vocab().eos_id(), id(" pieces")]);
    for prefix in [vec![" opinion"], vec![" those", " opinion"]] {
        let mut span = SpanState::new(&doc, t.vocab().eos_id()).map_err(|e| e.to_string())?;
        for w in &prefix {
            span.advance(id(w));
        }
        let allowed = span.allowed().ok_or("span state allows the full vocabulary")?;
        ensure(allowed == want, || format!("after {prefix:?}: allowed {allowed:?}, want {want:?}"))?;
    }
    Ok(format!("{} cases, 0 violations; after \"opinion\" the allowed set is {{EOS, \"pieces\"}}", cases.get()))
}

// 4

fn constrained_soundness() -> Outcome {
    let tok = fixture_tokenizer();
    let v = tok.vocab().size();
    let eos = tok.vocab().eos_id();
    let defaults = SamplerParams::default();
    let max_rank = Cell::new(0usize);
    let max_rank_free = Cell::new(0usize);
    let mut runner = runner(1000);
    let result = runner.run(&doc_strategy(fixture_token_docs(tok.as_ref())), |(doc, seed, salt)| {
        let model = MockModel::hashed(v, eos, salt);
        let params = SamplerParams { rng_seed: seed, ..defaults };
        let vx: HashSet<TokenId> = doc.iter().copied().collect();
        let g = decoding::extract_constrained(&model, &doc, eos, &params, &doc)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        for t in g.tokens.ids() {
            prop_assert!(vx.contains(t), "token {t} not in the document");
        }
        for s in &g.steps {
            prop_assert!(s.rank <= defaults.top_k);
            max_rank.set(max_rank.get().max(s.rank));
        }
        let free = decoding::extract_unconstrained(&model, &doc, eos, &params, doc.len())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        for s in &free.steps {
            prop_assert!(s.rank <= defaults.top_k && s.allowed == v);
            max_rank_free.set(max_rank_free.get().max(s.rank));
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    ensure(defaults.top_k == 50, || format!("default top_k is {}", defaults.top_k))?;
    Ok(format!("1000 cases, all tokens in V_x; max sampled rank {} (constrained), {} (full vocabulary)", max_rank.get(), max_rank_free.get()))
}

// 5

fn diagnosis_math() -> Outcome {
    let mut runner = runner(1000);
    let result = runner.run(&(-50.0f64..50.0, -50.0f64..50.0), |(yes, no)| {
        let a = decoding::p_bias_from_logits(yes, no).unwrap();
        let b = decoding::p_bias_from_logits(no, yes).unwrap();
        prop_assert!((a.p_bias + b.p_bias - 1.0).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.p_bias));
        prop_assert_eq!(a.predicted, a.p_bias > 0.5);
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let tie = decoding::p_bias_from_logits(1.25, 1.25).unwrap();
    ensure(tie.p_bias == 0.5 && !tie.predicted, || format!("tie gave {tie:?}"))?;
    let model = MockModel::new(10, 0).with_rule(vec![], [(3, 2.0), (4, 2.0)]);
    let r = decoding::diagnose(&model, &[1, 2], (3, 4)).unwrap();
    ensure(r.p_bias == 0.5 && !r.predicted, || format!("equal verbalizer logits gave {r:?}"))?;
    Ok("1000 pairs sum to 1 within 1e-9; 0.5 predicts No; swap complements".into())
}

// 6

/// Sentence BLEU-4 computed from explicit n-gram lists.
fn bleu_oracle(pred: &[&str], gold: &[&str]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=4 {
        let grams = |s: &[&str]| -> Vec<Vec<String>> {
            if s.len() < n {
                return vec![];
            }
            (0..=s.len() - n).map(|i| s[i..i + n].iter().map(|w| w.to_string()).collect()).collect()
        };
        let p = grams(pred);
        let mut g = grams(gold);
        let mut matched = 0usize;
        for gram in &p {
            if let Some(pos) = g.iter().position(|x| x == gram) {
                g.remove(pos);
                matched += 1;
            }
        }
        let num = if matched == 0 { 1e-9 } else { matched as f64 };
        log_p += (num / (p.len().max(1)) as f64).ln();
    }
    let (c, r) = (pred.len() as f64, gold.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_p / 4.0).exp()
}

fn metrics_oracle() -> Outcome {
    let words = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pick = |rng: &mut ChaCha8Rng, max: usize| -> Vec<&str> {
            (0..rng.gen_range(0..max)).map(|_| words[rng.gen_range(0..words.len())]).collect()
        };
        let p = pick(&mut rng, 14);
        let mut g = pick(&mut rng, 14);
        if g.is_empty() {
            g.push("the");
        }
        let got = bleu4(&p.join(" "), &g.join(" "));
        let want = bleu_oracle(&p, &g);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-9, || format!("bleu4({p:?}, {g:?}) = {got}, oracle {want}"))?;
    }
    let m = meteor("the cat", "the cat");
    ensure((m - 0.9375).abs() < 1e-12, || format!("meteor identity = {m}"))?;
    let f = token_f1("a b c", "b c d");
    ensure((f - 2.0 / 3.0).abs() < 1e-12, || format!("token_f1 = {f}"))?;
    Ok(format!("100 BLEU pairs, max |diff| {worst:.1e}; METEOR 0.9375; token F1 2/3"))
}

// 7

fn oracle_balance() -> Outcome {
    let data = corpus::task_data(Task::Identification, &fixture_docs());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sets = 0;
    while sets < 500 {
        let eval = &data.eval[rng.gen_range(0..data.eval.len())];
        let dim = eval.dimension.ok_or("eval document without a dimension")?;
        let members: Vec<Dimension> = dim.coarse().dimensions().collect();
        let min_pool = members
            .iter()
            .map(|&d| data.train.iter().filter(|x| x.dimension == Some(d)).count())
            .min()
            .unwrap();
        let n = [5, 10, 20][rng.gen_range(0..3)];
        if n > members.len() * min_pool {
            continue;
        }
        let cfg = FewShotConfig { n, strategy: FewShot::Oracle, seed: rng.gen(), resample_index: rng.gen_range(0..3) };
        let got = sample_oracle(&data.train, &cfg, eval).map_err(|e| e.to_string())?;
        let again = sample_oracle(&data.train, &cfg, eval).map_err(|e| e.to_string())?;
        ensure(got == again, || "sampling is not deterministic".into())?;
        ensure(got.len() == n, || format!("{} examples, want {n}", got.len()))?;
        let ids: HashSet<&str> = got.iter().map(|d| d.id.as_str()).collect();
        ensure(ids.len() == n, || "repeated example in one set".into())?;
        let mut counts: BTreeMap<Dimension, usize> = members.iter().map(|&d| (d, 0)).collect();
        for d in &got {
            let dd = d.dimension.unwrap();
            *counts.get_mut(&dd).ok_or_else(|| format!("{dd} is outside the {dim} coarse category"))? += 1;
        }
        let spread = counts.values().max().unwrap() - counts.values().min().unwrap();
        ensure(spread <= 1, || format!("per-dimension counts {counts:?}"))?;
        sets += 1;
    }
    Ok("500 sets balanced within 1, distinct, deterministic".into())
}

// 8

fn record(id: &str, text: &str, label: &str, rationale: Option<&str>, split: &str) -> String {
    let mut v = serde_json::json!({"id": id, "text": text, "label": label, "split": split});
    if let Some(r) = rationale {
        v["rationale"] = r.into();
    }
    v.to_string()
}

const CAD_EVAL: [(Task, usize); 4] =
    [(Task::Diagnosis, 1209), (Task::Identification, 580), (Task::Extraction, 496), (Task::Rephrasing, 437)];

const CAD_IDENTIFICATION: [(Dimension, usize, usize); 11] = [
    (Dimension::Sexuality, 13, 19),
    (Dimension::Gender, 233, 101),
    (Dimension::Race, 82, 72),
    (Dimension::Religion, 70, 45),
    (Dimension::Age, 16, 1),
    (Dimension::Nationality, 41, 31),
    (Dimension::Ethnicity, 10, 8),
    (Dimension::Disability, 185, 81),
    (Dimension::Profession, 63, 59),
    (Dimension::PoliticalAffiliation, 267, 138),
    (Dimension::PerceivedNegativeGroups, 28, 25),
];

fn cad_check(path: &Path) -> Result<String, String> {
    let mut docs = corpus::load_records(path).map_err(|e| e.to_string())?;
    if let Some(r) = std::env::var_os("BIAS_CAD_REPHRASES_PATH") {
        corpus::load_rephrases(Path::new(&r), &mut docs).map_err(|e| e.to_string())?;
    }
    for (task, want) in CAD_EVAL {
        let got = corpus::task_data(task, &docs).eval.len();
        ensure(got == want, || format!("CAD {task} eval size {got}, want {want}"))?;
    }
    let ident = corpus::task_data(Task::Identification, &docs);
    let train = corpus::dimension_counts(&ident.train);
    let eval = corpus::dimension_counts(&ident.eval);
    for (d, tr, ev) in CAD_IDENTIFICATION {
        let (gt, ge) = (train.get(&d).copied().unwrap_or(0), eval.get(&d).copied().unwrap_or(0));
        ensure((gt, ge) == (tr, ev), || format!("CAD {d}: train/eval {gt}/{ge}, want {tr}/{ev}"))?;
    }
    let diag = corpus::task_data(Task::Diagnosis, &docs);
    let (ey, en) = corpus::diagnosis_counts(&diag.eval);
    let (ty, tn) = corpus::diagnosis_counts(&diag.train);
    ensure((ey, en) == (596, 613), || format!("CAD diagnosis eval yes/no {ey}/{en}, want 596/613"))?;
    ensure((ty, tn) == (892, 891), || format!("CAD diagnosis train yes/no {ty}/{tn}, want 892/891"))?;
    Ok("CAD sizes and distributions match".into())
}

fn data_filtering() -> Outcome {
    let long = vec!["word"; 151].join(" ");
    let short150 = vec!["word"; 150].join(" ");
    let lines = [
        record("keep", "you people are all lazy", "race", Some("all lazy"), "train"),
        record("no-rationale", "you people are all lazy", "race", None, "eval"),
        record("empty-rationale", "you people are all lazy", "race", Some(""), "eval"),
        record("not-in-text", "you people are all lazy", "race", Some("all stupid"), "eval"),
        record("neutral", "nice day", "Neutral", Some("nice"), "eval"),
        record("other", "go away idiot", "PersonDirectedAbuse", Some("idiot"), "eval"),
        record("too-long", &format!("{long} bad"), "gender", Some("bad"), "train"),
        record("long-eval", &format!("{long} bad"), "gender", Some("bad"), "eval"),
        record("edge-150", &format!("{short150}"), "age", Some("word"), "train"),
    ];
    let docs = corpus::parse_records(&lines.join("\n")).map_err(|e| e.to_string())?;
    let (kept, report) = corpus::filter_cad(docs);
    let kept_ids: Vec<&str> = kept.iter().map(|d| d.id.as_str()).collect();
    ensure(kept_ids == ["keep", "long-eval", "edge-150"], || format!("kept {kept_ids:?}"))?;
    let want: BTreeMap<FilterRule, Vec<String>> = [
        (FilterRule::MissingRationale, vec!["no-rationale", "empty-rationale"]),
        (FilterRule::RationaleNotInText, vec!["not-in-text"]),
        (FilterRule::NotTargetDimension, vec!["neutral", "other"]),
        (FilterRule::TrainTooLong, vec!["too-long"]),
    ]
    .into_iter()
    .map(|(r, ids)| (r, ids.into_iter().map(String::from).collect()))
    .collect();
    ensure(report == DropReport { kept: 3, dropped: want }, || format!("drop report {report:?}"))?;

    let bad = record("x", "t", "Astrology", Some("t"), "eval");
    ensure(corpus::parse_records(&bad).is_err(), || "unknown label accepted".into())?;

    let fixture = fixture_docs();
    let (_, fixture_report) = corpus::filter_cad(fixture.clone());
    for rule in
        [FilterRule::MissingRationale, FilterRule::RationaleNotInText, FilterRule::NotTargetDimension, FilterRule::TrainTooLong]
    {
        ensure(fixture_report.count(rule) > 0, || format!("fixture never triggers {rule:?}"))?;
    }
    let diag = corpus::task_data(Task::Diagnosis, &fixture);
    ensure(
        diag.train.iter().all(|d| d.split == Split::Train && d.word_count() <= corpus::MAX_TRAIN_WORDS),
        || "diagnosis train pool has an over-long document".into(),
    )?;

    let cad = match std::env::var_os("BIAS_CAD_PATH") {
        Some(p) => cad_check(Path::new(&p))?,
        None => "CAD check skipped (BIAS_CAD_PATH not set)".into(),
    };
    Ok(format!("each rule exercised on synthetic and fixture data; {cad}"))
}

// 9 and 10

const TASKS: [&str; 4] = ["diagnosis", "identification", "extraction", "rephrasing"];

struct RunFiles {
    files: BTreeMap<String, Vec<u8>>,
}

fn load_config(task: &str) -> ExperimentConfig {
    ExperimentConfig::load(fixtures().join(format!("e2e-{task}.toml"))).unwrap()
}

fn run_one(mut cfg: ExperimentConfig, provider: Option<Arc<dyn LogitProvider>>, out: &Path) -> Result<RunFiles, String> {
    cfg.out = out.to_path_buf();
    let exp = match provider {
        Some(p) => Experiment::with_provider(cfg, fixture_tokenizer(), p),
        None => Experiment::prepare(cfg),
    }
    .map_err(|e| e.to_string())?;
    let (record, stats) = runner::run_experiment(&exp, out).map_err(|e| e.to_string())?;
    runner::write_outputs(&record, &stats, out).map_err(|e| e.to_string())?;
    let mut files = BTreeMap::new();
    for name in ["record.json", "report.csv", "report.md"] {
        files.insert(name.to_string(), std::fs::read(out.join(name)).map_err(|e| e.to_string())?);
    }
    Ok(RunFiles { files })
}

fn full_run(parallel: bool, threads: usize) -> Result<(BTreeMap<String, RunFiles>, Duration), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut out = BTreeMap::new();
    for task in TASKS {
        let mut cfg = load_config(task);
        cfg.parallel = parallel;
        let files = pool.install(|| run_one(cfg, None, &dir.path().join(task)))?;
        out.insert(task.to_string(), files);
    }
    Ok((out, start.elapsed()))
}

fn compare(a: &BTreeMap<String, RunFiles>, b: &BTreeMap<String, RunFiles>, what: &str) -> Result<(), String> {
    for (task, fa) in a {
        for (name, bytes) in &fa.files {
            ensure(b[task].files.get(name) == Some(bytes), || format!("{what}: {task}/{name} differs"))?;
        }
    }
    Ok(())
}

fn end_to_end() -> Outcome {
    let (first, t1) = full_run(true, 4)?;
    let (second, t2) = full_run(true, 4)?;
    let (serial, t3) = full_run(false, 1)?;
    let limit = Duration::from_secs(60);
    for (t, label) in [(t1, "first run"), (t2, "second run"), (t3, "serial run")] {
        within(t, limit, label)?;
    }
    compare(&first, &second, "repeat")?;
    compare(&first, &serial, "serial vs parallel")?;
    let bytes: usize = first.values().flat_map(|f| f.files.values()).map(Vec::len).sum();
    Ok(format!(
        "4 tasks, n in {{0,5}}, R=2: {:.1}s / {:.1}s / {:.1}s, {bytes} output bytes identical",
        t1.as_secs_f64(),
        t2.as_secs_f64(),
        t3.as_secs_f64()
    ))
}

fn remote_parity() -> Outcome {
    let tok = fixture_tokenizer();
    let vocab = tok.vocab().clone();
    let model: Arc<dyn LogitProvider> = Arc::new(MockModel::hashed(vocab.size(), vocab.eos_id(), 17));
    let server = spawn_server(model, &vocab, "127.0.0.1:0".parse().unwrap(), ServeOptions::default())
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut examples = 0;
    for task in TASKS {
        let mut cfg = load_config(task);
        cfg.variants = VariantSelection::Indices(vec![0, 1]);
        if task == "extraction" {
            cfg.classes = vec![TemplateClass::Statement, TemplateClass::Null];
        }
        let local = run_one(cfg.clone(), None, &dir.path().join(format!("{task}-local")))?;
        let mut remote_cfg = cfg;
        remote_cfg.provider = server.url();
        let remote = run_one(remote_cfg, None, &dir.path().join(format!("{task}-remote")))?;
        for (name, bytes) in &local.files {
            ensure(remote.files.get(name) == Some(bytes), || format!("{task}/{name} differs over the wire"))?;
        }
        let rec: serde_json::Value = serde_json::from_slice(&local.files["record.json"]).unwrap();
        examples += rec["examples"].as_array().map_or(0, Vec::len);
    }
    Ok(format!("{examples} examples over HTTP identical to the in-process runs"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("template combinatorics", template_combinatorics),
        ("trie decoding oracle equivalence", trie_oracle),
        ("span decoder soundness", span_soundness),
        ("constrained decoder soundness", constrained_soundness),
        ("diagnosis math", diagnosis_math),
        ("metrics oracle", metrics_oracle),
        ("oracle sampler balance", oracle_balance),
        ("data filtering", data_filtering),
        ("end-to-end determinism", end_to_end),
        ("remote parity", remote_parity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
