//! Records the test cassette against a scripted stand-in model.
//!
//! The stand-in answers from the gold chains in `fixtures/gold_coq.jsonl`,
//! renumbering citations to match the shuffled context it is shown, with a
//! few deliberate mistakes so that metrics are not all perfect:
//!
//! - `vistula`: wrong answer in AO and CoT.
//! - `rusalka`: an extra citation to a distractor in CoC.
//! - `penguin`: CoT answers wrongly once the context exceeds 10 documents.
//! - `penguin`: the CoQ annotation truncates its first quote to four words.
//!
//! Usage: `cargo run -p attrchain-cli --example record_cassette [OUT]`

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attrchain_core::chains::{convert, parse_chain, remap_citations, render_chain, AttributionChain};
use attrchain_core::corpus::{load_corpus, CorpusFormat, QaInstance};
use attrchain_core::eval::RawAnnotation;
use attrchain_core::prompting::{build_instruction, PromptMode, STEP_BY_STEP};
use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

struct Gold {
    instance: QaInstance,
    chain: AttributionChain,
}

type Script = Arc<HashMap<String, Gold>>;

fn mode_of(system: &str) -> Option<PromptMode> {
    PromptMode::ALL.into_iter().find(|&m| build_instruction(m) == system)
}

/// `(index, title)` for each `Document [i](Title: t): ...` line.
fn context_titles(user: &str) -> Vec<(u32, String)> {
    user.lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("Document [")?;
            let (index, rest) = rest.split_once("](Title: ")?;
            let (title, _) = rest.split_once("): ")?;
            Some((index.parse().ok()?, title.to_string()))
        })
        .collect()
}

fn question_of(user: &str) -> Option<String> {
    let line = user.lines().find_map(|l| l.strip_prefix("Question: "))?;
    let q = line.strip_suffix(STEP_BY_STEP).unwrap_or(line).trim_end();
    Some(q.to_string())
}

fn respond(script: &HashMap<String, Gold>, system: &str, user: &str) -> Result<String, String> {
    let mode = mode_of(system).ok_or("unrecognised system instruction")?;
    let question = question_of(user).ok_or("no question line")?;
    let gold = script.get(&question).ok_or_else(|| format!("unknown question {question:?}"))?;
    let shown = context_titles(user);
    let by_title: HashMap<&str, u32> = shown.iter().map(|(i, t)| (t.as_str(), *i)).collect();
    let map: BTreeMap<u32, u32> = gold
        .instance
        .documents
        .iter()
        .filter_map(|d| Some((d.index, *by_title.get(d.title.as_str())?)))
        .collect();
    let mut chain = remap_citations(&gold.chain, &map).map_err(|e| e.to_string())?;
    let id = gold.instance.id.as_str();
    match (id, mode) {
        ("vistula", PromptMode::Ao | PromptMode::Cot) => chain.answer = "Vistula Lagoon".into(),
        ("penguin", PromptMode::Cot) if shown.len() > 10 => chain.answer = "Weddell Sea".into(),
        ("rusalka", PromptMode::Coc) => {
            let cited: Vec<u32> = chain.citations().collect();
            if let Some(extra) = shown.iter().map(|(i, _)| *i).find(|i| !cited.contains(i)) {
                chain.steps[0].citations.push(extra);
            }
        }
        ("penguin", PromptMode::Coq) => {
            let q = &mut chain.steps[0].quotes[0];
            q.text = q.text.split_whitespace().take(4).collect::<Vec<_>>().join(" ");
        }
        _ => {}
    }
    let chain = convert(&chain, mode).map_err(|e| e.to_string())?;
    render_chain(&chain, mode).map_err(|e| e.to_string())
}

async fn completions(State(script): State<Script>, Json(body): Json<Value>) -> Json<Value> {
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let system = messages.first().and_then(|m| m["content"].as_str()).unwrap_or("");
    let user = messages.last().and_then(|m| m["content"].as_str()).unwrap_or("");
    let content = respond(&script, system, user).unwrap_or_else(|e| panic!("stand-in model: {e}"));
    Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}))
}

fn load_script(fixtures: &Path) -> Script {
    let corpus = load_corpus(&fixtures.join("corpus.jsonl"), CorpusFormat::Internal).expect("corpus");
    let text = std::fs::read_to_string(fixtures.join("gold_coq.jsonl")).expect("gold chains");
    let mut gold: HashMap<String, AttributionChain> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let raw: RawAnnotation = serde_json::from_str(l).expect("gold record");
            (raw.id, parse_chain(&raw.response, PromptMode::Coq).expect("gold chain parses"))
        })
        .collect();
    Arc::new(
        corpus
            .into_iter()
            .map(|instance| {
                let chain = gold.remove(&instance.id).expect("gold chain for every instance");
                (instance.question.clone(), Gold { instance, chain })
            })
            .collect(),
    )
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let fixtures = root.join("../../fixtures");
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("tests/fixtures/cassette.jsonl"));
    let _ = std::fs::remove_file(&out);
    let scratch = tempfile_dir();

    let script = load_script(&fixtures);
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .expect("bind");
    let addr = listener.local_addr().expect("addr");
    let app = Router::new().route("/chat/completions", post(completions)).with_state(script);
    rt.spawn(async move { axum::serve(listener, app).await });

    let corpus = fixtures.join("corpus.jsonl");
    let demos = fixtures.join("demos.jsonl");
    let base = format!("http://{addr}");
    let common = |cmd: &str, out_file: &str| -> Vec<String> {
        vec![
            "attrchain".into(),
            cmd.into(),
            "--corpus".into(),
            corpus.display().to_string(),
            "--demos".into(),
            demos.display().to_string(),
            "--cassette".into(),
            out.display().to_string(),
            "--cassette-mode".into(),
            "record".into(),
            "--api-base".into(),
            base.clone(),
            "--out".into(),
            scratch.join(out_file).display().to_string(),
        ]
    };
    let mut jobs: Vec<Vec<String>> = Vec::new();
    for mode in ["ao", "cot", "coc", "coq"] {
        let mut args = common("evaluate", &format!("eval-{mode}.json"));
        args.extend(["--mode".into(), mode.into(), "--seeds".into(), "1,2,3".into()]);
        jobs.push(args);
    }
    for mode in ["cot", "coc"] {
        let mut args = common("sweep-noise", &format!("sweep-{mode}.json"));
        args.extend(["--mode".into(), mode.into(), "--seeds".into(), "1,2,3".into()]);
        jobs.push(args);
    }
    let mut args = common("generate", "raw.jsonl");
    args.extend(["--seeds".into(), "1".into()]);
    jobs.push(args);

    for args in jobs {
        eprintln!("> {}", args[1..].join(" "));
        let code = attrchain_cli::run(args);
        assert_eq!(code, 0, "recording run failed");
    }
    let entries = std::fs::read_to_string(&out).expect("cassette").lines().count();
    eprintln!("{entries} responses recorded to {}", out.display());
    let _ = std::fs::remove_dir_all(&scratch);
}

fn tempfile_dir() -> PathBuf {
    tempfile::tempdir().expect("scratch dir").keep()
}
