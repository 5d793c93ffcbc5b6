//! Frozen outputs on the fixture corpus. A change here means sampling,
//! prompting or decoding behaviour moved; refreeze only on purpose.

use std::path::{Path, PathBuf};

use biasprompt::corpus::{self, TaskData};
use biasprompt::decoding::{self, Decoder, SamplerParams};
use biasprompt::model::MockModel;
use biasprompt::sampling::{sample, FewShotConfig, Strategy};
use biasprompt::templating::{self, Task, TemplateClass};
use biasprompt::tokenization::{load_tokenizer, Tokenizer};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn pool(task: Task) -> TaskData {
    let mut docs = corpus::load_records(fixtures().join("dataset.jsonl")).unwrap();
    corpus::load_rephrases(fixtures().join("rephrases.jsonl"), &mut docs).unwrap();
    corpus::task_data(task, &docs)
}

fn ids<'a>(docs: &[&'a biasprompt::Document]) -> Vec<&'a str> {
    docs.iter().map(|d| d.id.as_str()).collect()
}

fn setup() -> (Box<dyn Tokenizer>, MockModel) {
    let tok = load_tokenizer("word:vocab.txt", &fixtures()).unwrap();
    let model = MockModel::hashed(tok.vocab().size(), tok.vocab().eos_id(), 11);
    (tok, model)
}

#[test]
fn random_sampler_seed_42() {
    let data = pool(Task::Identification);
    let eval = &data.eval[0];
    assert_eq!(eval.id, "ev-00");
    let cfg = FewShotConfig { n: 5, strategy: Strategy::Random, seed: 42, resample_index: 0 };
    let got = sample(&data.train, &cfg, eval).unwrap();
    assert_eq!(ids(&got), ["tr-gender-2", "tr-gender-0", "tr-sexuality-1", "tr-perceived_negative_groups-2", "tr-gender-3"]);
}

#[test]
fn oracle_sampler_seed_7() {
    let data = pool(Task::Identification);
    let eval = &data.eval[9];
    assert_eq!(eval.id, "ev-09");
    let cfg = FewShotConfig { n: 10, strategy: Strategy::Oracle, seed: 7, resample_index: 1 };
    let got = sample(&data.train, &cfg, eval).unwrap();
    assert_eq!(
        ids(&got),
        [
            "tr-profession-2",
            "tr-political_affiliation-3",
            "tr-perceived_negative_groups-0",
            "tr-profession-3",
            "tr-political_affiliation-0",
            "tr-perceived_negative_groups-3",
            "tr-profession-1",
            "tr-political_affiliation-1",
            "tr-perceived_negative_groups-2",
            "tr-profession-0",
        ]
    );
}

#[test]
fn extraction_seed_99() {
    let (tok, model) = setup();
    let data = pool(Task::Extraction);
    let eval = &data.eval[0];
    let desc = &templating::expand_descriptions(Task::Extraction, TemplateClass::Statement).unwrap()[0];
    let prompt = tok.tokenize(&templating::render_prompt(eval, desc, &[]).unwrap().full_text).unwrap();
    let doc = tok.tokenize(&eval.text).unwrap();
    let params = SamplerParams { rng_seed: 99, ..SamplerParams::default() };
    let run = |d: Decoder| {
        let g = decoding::extract(d, &model, prompt.ids(), tok.vocab().eos_id(), &params, doc.ids()).unwrap();
        (g.tokens.ids().to_vec(), tok.detokenize(&g.tokens).unwrap())
    };
    assert_eq!(run(Decoder::Unconstrained).0, [163, 727, 370, 390, 124, 19, 608, 506, 275, 521, 426]);
    assert_eq!(run(Decoder::Constrained), (vec![317, 306, 368, 682, 317], " are all confused those are".to_string()));
    assert_eq!(run(Decoder::Span), (vec![317, 306, 368], " are all confused".to_string()));
}

#[test]
fn rephrase_seed_7() {
    let (tok, model) = setup();
    let data = pool(Task::Rephrasing);
    let eval = &data.eval[0];
    let desc = &templating::expand_descriptions(Task::Rephrasing, TemplateClass::Question).unwrap()[0];
    let prompt = templating::render_prompt(eval, desc, &[]).unwrap();
    assert_eq!(
        prompt.full_text,
        "those guys are all confused about who they are\nQuestion: What is the rephrase of the aforementioned text that removes toxicity?\nAnswer:"
    );
    let rationale_len = tok.tokenize(eval.rationale.as_deref().unwrap()).unwrap().len();
    assert_eq!(rationale_len, 9);
    let ids = tok.tokenize(&prompt.full_text).unwrap();
    let params = SamplerParams { rng_seed: 7, ..SamplerParams::default() };
    let (_, g) = decoding::rephrase(&model, tok.as_ref(), ids.ids(), &params, decoding::rephrase_max_len(rationale_len))
        .unwrap();
    assert_eq!(g.tokens.ids(), [317, 60, 339, 577, 151, 407, 171, 100, 2, 38]);
}
