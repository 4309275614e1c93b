//! Materializes the committed demo fixture set: a bilingual toy vocabulary,
//! its dictionary and clustering, synthetic English prompts, engine configs,
//! attack manifests, and run configs wired so the whole pipeline can be
//! driven from the fixture directory.
//!
//! Usage: cargo run -p polymark --example make_fixtures -- [target-dir]

use std::fs;
use std::path::Path;

use polymark::corpus::{write_jsonl, CorpusRecord};
use polymark::fixtures::{fixture_clustering, fixture_dictionary, fixture_vocabulary, synth_prompts};
use polymark::watermark::{EngineConfig, KgwConfig, UwConfig};

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap_or_else(|e| panic!("writing {}: {e}", path.display()));
    println!("wrote {}", path.display());
}

fn engine_json(config: &EngineConfig) -> String {
    serde_json::to_string_pretty(config).expect("engine config serializes") + "\n"
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let root = Path::new(args.get(1).map(String::as_str).unwrap_or("fixtures"));
    fs::create_dir_all(root.join("engines")).expect("create engines dir");
    fs::create_dir_all(root.join("attacks")).expect("create attacks dir");

    let vocab = fixture_vocabulary();
    write(&root.join("vocab.tsv"), &vocab.to_tsv_string());

    let dict = fixture_dictionary();
    let mut dict_tsv = String::from(
        "# English-Chinese token dictionary; tab-separated, one pair per line.\n\
         # Lines starting with # are comments.\n",
    );
    for (a, b) in dict.pairs() {
        dict_tsv.push_str(a);
        dict_tsv.push('\t');
        dict_tsv.push_str(b);
        dict_tsv.push('\n');
    }
    write(&root.join("dict.tsv"), &dict_tsv);

    let clustering = fixture_clustering();
    write(
        &root.join("clustering.json"),
        &(clustering.to_json_string() + "\n"),
    );

    let prompts = synth_prompts(&vocab, "en", 12, 36, 44, 2024);
    let records: Vec<CorpusRecord> = prompts
        .into_iter()
        .enumerate()
        .map(|(i, seq)| CorpusRecord {
            id: format!("p{i:02}"),
            prompt: seq.ids,
            response: Vec::new(),
            language: "en".into(),
            pivot_response: None,
            attacked_response: None,
            attack: None,
        })
        .collect();
    write_jsonl(&root.join("prompts_en.jsonl"), None, &records).expect("write prompts");
    println!("wrote {}", root.join("prompts_en.jsonl").display());

    write(&root.join("engines/none.json"), &engine_json(&EngineConfig::None));
    write(
        &root.join("engines/kgw.json"),
        &engine_json(&EngineConfig::Kgw {
            params: KgwConfig::default(),
        }),
    );
    write(
        &root.join("engines/uw.json"),
        &engine_json(&EngineConfig::Uw {
            params: UwConfig::default(),
        }),
    );
    write(
        &root.join("engines/sir.json"),
        &engine_json(&EngineConfig::Sir {
            artifact: "../out_sir/sir_artifact.json".into(),
        }),
    );
    write(
        &root.join("engines/xsir.json"),
        &engine_json(&EngineConfig::Xsir {
            artifact: "../out_xsir/sir_artifact.json".into(),
        }),
    );

    write(
        &root.join("attacks/retranslation_zh.json"),
        r#"{
  "kind": "re_translation",
  "original_lang": "en",
  "pivot_lang": "zh",
  "translator": { "kind": "mock", "noise_rate": 0.1, "reorder_window": 3 }
}
"#,
    );
    write(
        &root.join("attacks/paraphrase.json"),
        r#"{
  "kind": "paraphrase",
  "original_lang": "en",
  "translator": { "kind": "mock", "noise_rate": 0.6, "reorder_window": 3 }
}
"#,
    );
    write(
        &root.join("attacks/cwra_zh.json"),
        r#"{
  "kind": "cwra",
  "original_lang": "en",
  "pivot_lang": "zh",
  "translator": { "kind": "mock", "noise_rate": 0.1, "reorder_window": 3 },
  "engine": "../engines/kgw.json"
}
"#,
    );

    write(
        &root.join("run_kgw.json"),
        r#"{
  "vocab": "vocab.tsv",
  "prompts": "prompts_en.jsonl",
  "engine": "engines/kgw.json",
  "corpus": "out/corpus.jsonl",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 42,
  "out_dir": "out",
  "max_len": 120
}
"#,
    );
    write(
        &root.join("run_clean.json"),
        r#"{
  "vocab": "vocab.tsv",
  "prompts": "prompts_en.jsonl",
  "engine": "engines/none.json",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 43,
  "out_dir": "out_clean",
  "max_len": 120
}
"#,
    );
    write(
        &root.join("run_detect_clean.json"),
        r#"{
  "vocab": "vocab.tsv",
  "engine": "engines/kgw.json",
  "detect_input": "out_clean/corpus.jsonl",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 43,
  "out_dir": "out_clean"
}
"#,
    );
    write(
        &root.join("run_attack.json"),
        r#"{
  "vocab": "vocab.tsv",
  "clustering": "clustering.json",
  "corpus": "out/corpus.jsonl",
  "attack_manifest": "attacks/retranslation_zh.json",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 42,
  "out_dir": "out_attacked"
}
"#,
    );
    write(
        &root.join("run_detect_attacked.json"),
        r#"{
  "vocab": "vocab.tsv",
  "engine": "engines/kgw.json",
  "detect_input": "out_attacked/attacked.jsonl",
  "detect_field": "attacked_response",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 42,
  "out_dir": "out_attacked"
}
"#,
    );
    write(
        &root.join("run_train_sir.json"),
        r#"{
  "vocab": "vocab.tsv",
  "clustering": "clustering.json",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 7,
  "out_dir": "out_sir",
  "train": {
    "level": "token",
    "embedding": { "dim": 32, "seed": 0, "decay": 0.9, "context_window": 32 },
    "training": { "learning_rate": 0.001, "epochs": 60, "batch_size": 32 },
    "pair_count": 300,
    "pair_len_min": 3,
    "pair_len_max": 10,
    "scale": 4.0
  }
}
"#,
    );
    write(
        &root.join("run_train_xsir.json"),
        r#"{
  "vocab": "vocab.tsv",
  "clustering": "clustering.json",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 7,
  "out_dir": "out_xsir",
  "train": {
    "level": "cluster",
    "embedding": { "dim": 32, "seed": 0, "decay": 0.9, "context_window": 32 },
    "training": { "learning_rate": 0.001, "epochs": 60, "batch_size": 32 },
    "pair_count": 300,
    "pair_len_min": 3,
    "pair_len_max": 10,
    "scale": 4.0
  }
}
"#,
    );
    write(
        &root.join("run_sir.json"),
        r#"{
  "vocab": "vocab.tsv",
  "prompts": "prompts_en.jsonl",
  "engine": "engines/sir.json",
  "clustering": "clustering.json",
  "corpus": "out_sirgen/corpus.jsonl",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 42,
  "out_dir": "out_sirgen",
  "max_len": 120
}
"#,
    );
    write(
        &root.join("run_xsir.json"),
        r#"{
  "vocab": "vocab.tsv",
  "prompts": "prompts_en.jsonl",
  "engine": "engines/xsir.json",
  "clustering": "clustering.json",
  "corpus": "out_xsirgen/corpus.jsonl",
  "attack_manifest": "attacks/cwra_zh.json",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 42,
  "out_dir": "out_xsirgen",
  "max_len": 120
}
"#,
    );
    write(
        &root.join("run_eval.json"),
        r#"{
  "vocab": "vocab.tsv",
  "model": { "kind": "toy", "seed": 7, "order": 2 },
  "seed": 42,
  "out_dir": "out_eval",
  "evaluate": {
    "before": "out/detections.jsonl",
    "after": "out_attacked/detections.jsonl",
    "clean": "out_clean/detections.jsonl",
    "bin_width": 25,
    "epsilon": 0.05,
    "fpr_target": 0.1
  }
}
"#,
    );

    write(&root.join(".gitignore"), "out*/\n");
}
