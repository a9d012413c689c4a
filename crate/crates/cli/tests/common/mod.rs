#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use serde_json::{json, Value};

pub const Q183: &str = "http://www.wikidata.org/entity/Q183";
pub const Q64: &str = "http://www.wikidata.org/entity/Q64";
pub const QUESTION: &str = "What is the capital of Germany?";
pub const DRAFT: &str = "SELECT ?c WHERE { wd:Q183 wdt:P35 ?c }";
pub const FINAL: &str = "SELECT ?c WHERE { wd:Q183 wdt:P36 ?c }";

pub fn text(content: &str) -> Value {
    json!({"content": content})
}

pub fn tool_call(name: &str, arguments: Value) -> Value {
    json!({"tool_calls": [{"name": name, "arguments": arguments}]})
}

/// The five replies of a full run: plan, tool call, step answer, draft, refinement.
pub fn full_run_script() -> Vec<Value> {
    vec![
        text("1. Link the entity Germany\n2. Link the relation capital of\n3. Write the SPARQL query"),
        tool_call("wikidata_el", json!({"entities": ["Germany"], "relations": ["capital"]})),
        text("Germany is wd:Q183 and the capital relation is wdt:P36."),
        text(&format!("```sparql\n{DRAFT}\n```")),
        text(FINAL),
    ]
}

pub fn select_body(var: &str, uris: &[&str]) -> Value {
    let bindings: Vec<Value> = uris.iter().map(|u| json!({var: {"type": "uri", "value": u}})).collect();
    json!({"head": {"vars": [var]}, "results": {"bindings": bindings}})
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write(&self, name: &str, content: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    pub fn write_json(&self, name: &str, value: &Value) -> PathBuf {
        self.write(name, &serde_json::to_string_pretty(value).unwrap())
    }

    /// Writes the script, a mock triplestore and a configuration that ties
    /// them together under the dataset name "wikidata".
    pub fn config(&self, script: &[Value], store_routes: &[(&str, Value)], extra: Value) -> PathBuf {
        self.write_json("script.json", &Value::Array(script.to_vec()));
        let routes: Vec<Value> = store_routes.iter().map(|(q, body)| json!({"query": q, "body": body})).collect();
        self.write_json("store.json", &json!({"routes": routes}));
        let mut config = json!({
            "llm": {"backend": "scripted", "script": "script.json"},
            "embedding": {"backend": "hash", "dimension": 64, "seed": 7},
            "nel": {
                "entities": {"backend": "mock", "table": {"Germany": Q183}},
                "relations": {"backend": "mock", "table": {"capital": "http://www.wikidata.org/prop/direct/P36"}}
            },
            "datasets": {"wikidata": {"triplestore": {"backend": "mock", "file": "store.json"}}}
        });
        merge(&mut config, extra);
        self.write_json("config.json", &config)
    }
}

fn merge(target: &mut Value, extra: Value) {
    match (target, extra) {
        (Value::Object(t), Value::Object(e)) => {
            for (k, v) in e {
                match t.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (t, e) => *t = e,
    }
}

pub fn kgqa(args: &[&str], cwd: &Path) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_kgqa"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

pub fn qald(questions: &[(&str, &[(&str, &str)], &str, Option<Value>)]) -> Value {
    let qs: Vec<Value> = questions
        .iter()
        .map(|(id, strings, sparql, answers)| {
            let strings: Vec<Value> = strings.iter().map(|(l, s)| json!({"language": l, "string": s})).collect();
            let mut q = json!({"id": id, "question": strings, "query": {"sparql": sparql}});
            if let Some(a) = answers {
                q["answers"] = json!([a]);
            }
            q
        })
        .collect();
    json!({"questions": qs})
}
