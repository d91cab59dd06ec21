use std::io::BufReader;
use std::path::PathBuf;

use attrchain_core::chains::parse_chain;
use attrchain_core::corpus::{load_corpus, validate_instance, CorpusFormat};
use attrchain_core::curation::curate;
use attrchain_core::eval::RawAnnotation;
use attrchain_core::prompting::{read_demo_records, PromptMode};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn fixture_corpus_is_valid() {
    let corpus = load_corpus(&fixture("corpus.jsonl"), CorpusFormat::Internal).unwrap();
    assert_eq!(corpus.len(), 5);
    for inst in &corpus {
        assert_eq!(inst.documents.len(), 20);
        let report = validate_instance(inst);
        assert!(report.is_valid(), "{}: {:?}", inst.id, report.violations);
    }
}

#[test]
fn gold_chains_pass_curation() {
    let corpus = load_corpus(&fixture("corpus.jsonl"), CorpusFormat::Internal).unwrap();
    let text = std::fs::read_to_string(fixture("gold_coq.jsonl")).unwrap();
    let samples: Vec<_> = text
        .lines()
        .map(|l| serde_json::from_str::<RawAnnotation>(l).unwrap())
        .map(|raw| {
            let inst = corpus.iter().find(|i| i.id == raw.id).unwrap().clone();
            (inst, parse_chain(&raw.response, PromptMode::Coq).unwrap())
        })
        .collect();
    let out = curate(&samples);
    for v in &out.verdicts {
        assert!(v.kept(), "{v:?}");
    }
}

#[test]
fn demo_pool_converts_to_every_mode() {
    let file = std::fs::File::open(fixture("demos.jsonl")).unwrap();
    let pool = read_demo_records(BufReader::new(file)).unwrap();
    assert_eq!(pool.len(), 6);
    for rec in &pool {
        for mode in PromptMode::ALL {
            rec.to_demonstration(mode).unwrap();
        }
    }
}
