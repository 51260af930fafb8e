use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use activemix::active::{write_predictions, PredictionRow, SessionConfig};
use activemix::keywords::{apply_keywords, KeywordLedger};
use activemix::model::{fit_em, init_from_labels, load_labels, predict, Checkpoint, LabelStore};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::inputs::{write_file, ModelArgs};
use crate::settings::{resolve, write_run_json};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct FitCmd {
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Labels, `doc_id<TAB>class_index` per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Keyword decisions, `term<TAB>class_name<TAB>accept|reject` per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Prior mass added per accepted keyword.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cmd: FitCmd) -> CliResult<()> {
    let a: FitCmd = resolve(&cmd, cmd.config.as_deref(), &["dfm", "texts", "labels", "keywords", "out"])?;
    let labels_path = a.labels.clone().ok_or_else(|| CliError::missing("labels"))?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut sc = SessionConfig::default();
    a.model.apply(&mut sc);
    if let Some(g) = a.gamma {
        sc.keywords.gamma = g;
    }
    sc.validate()?;
    let corpus = a.model.load_corpus()?;
    let names = sc.class_names()?;
    let mut h = sc.hyperparams(corpus.n_terms())?;
    let mut labels = LabelStore::for_hyperparams(corpus.n_docs(), &h, Some(names.clone()))?;
    labels.apply(&load_labels(&labels_path, &corpus, names.len())?)?;
    if let Some(path) = &a.keywords {
        let file = File::open(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        let ledger = KeywordLedger::read(
            BufReader::new(file),
            &path.display().to_string(),
            &names,
            corpus.vocabulary(),
            sc.keywords.gamma,
            sc.keywords.m,
        )?;
        h = apply_keywords(&h, &ledger, corpus.vocabulary())?;
    }

    let init = init_from_labels(&corpus, &labels, &h, sc.seed)?;
    let fit = fit_em(&corpus, &labels, &h, init, &sc.em)?;
    let preds = predict(&fit.posterior, &labels);
    let rows: Vec<PredictionRow> = (0..corpus.n_docs())
        .map(|i| {
            let (class, p) = match labels.get(i) {
                Some(c) => (c, 1.0),
                None => (preds.labels[i], preds.probs(i)[preds.labels[i]]),
            };
            PredictionRow {
                doc_id: corpus.doc_id(i).to_owned(),
                class_name: names[class].clone(),
                probability: p,
            }
        })
        .collect();

    write_run_json(&out, "fit", &json!({ "flags": a, "model": sc }))?;
    let ck = Checkpoint::new(corpus.vocabulary(), h, fit.params.clone());
    write_file(&out.join("params.json"), ck.to_json()?.as_bytes())?;
    let mut csv = Vec::new();
    write_predictions(&rows, &mut csv)?;
    write_file(&out.join("predictions.csv"), &csv)?;

    println!(
        "documents {} (labeled {}), terms {}, clusters {}",
        corpus.n_docs(),
        labels.n_labeled(),
        corpus.n_terms(),
        ck.hyperparams.k()
    );
    println!(
        "EM iterations {}, converged {}, objective {:.6} -> {:.6}",
        fit.iterations,
        fit.converged,
        fit.trace[0],
        fit.objective()
    );
    println!("wrote {}", out.display());
    Ok(())
}
