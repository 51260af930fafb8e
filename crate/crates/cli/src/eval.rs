use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use activemix::active::PredictionRow;
use activemix::eval::{confusion, metrics_from_confusion};
use activemix::model::LabelStore;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::settings::{resolve, write_run_json};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EvalCmd {
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Prediction file with a `doc_id,class_name,probability` header.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Ground truth, `doc_id<TAB>class` per line; class is an index or a name.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Comma-separated class names in index order [default: negative,positive].
    #[arg(long, value_delimiter = ',')]
    pub class_names: Option<Vec<String>>,
    /// Print the full metric record as JSON.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub json: Option<bool>,
    /// Directory for run.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn class_index(names: &[String], s: &str) -> Option<usize> {
    names.iter().position(|n| n == s).or_else(|| s.parse().ok().filter(|&i: &usize| i < names.len()))
}

fn read_predictions(path: &Path, names: &[String]) -> CliResult<BTreeMap<String, usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, row) in r.deserialize::<PredictionRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CliError::usage(format!("{}:{line}: {e}", path.display())))?;
        let class = class_index(names, &row.class_name)
            .ok_or_else(|| CliError::usage(format!("{}:{line}: unknown class `{}`", path.display(), row.class_name)))?;
        if out.insert(row.doc_id.clone(), class).is_some() {
            return Err(CliError::usage(format!("{}:{line}: `{}` predicted twice", path.display(), row.doc_id)));
        }
    }
    Ok(out)
}

fn read_truth(path: &Path, names: &[String]) -> CliResult<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| CliError::usage(format!("{}:{}: {m}", path.display(), i + 1));
        let (id, class) = line.split_once('\t').ok_or_else(|| err("expected `doc_id<TAB>class`".into()))?;
        let class = class_index(names, class.trim()).ok_or_else(|| err(format!("unknown class `{class}`")))?;
        if out.insert(id.to_owned(), class).is_some() {
            return Err(err(format!("`{id}` listed twice")));
        }
    }
    Ok(out)
}

pub fn run(cmd: EvalCmd) -> CliResult<()> {
    let a: EvalCmd = resolve(&cmd, cmd.config.as_deref(), &["predictions", "truth", "out"])?;
    let predictions = a.predictions.as_deref().ok_or_else(|| CliError::missing("predictions"))?;
    let truth = a.truth.as_deref().ok_or_else(|| CliError::missing("truth"))?;
    let names = a.class_names.clone().unwrap_or_else(LabelStore::binary_names);
    if names.len() < 2 {
        return Err(CliError::usage("at least two class names are required"));
    }
    let predicted = read_predictions(predictions, &names)?;
    let actual = read_truth(truth, &names)?;
    let m = confusion(&actual, &predicted, names.len())?;
    let positive = (names.len() == 2).then_some(1);
    let record = metrics_from_confusion(&m, positive);
    write_run_json(a.out.as_deref().unwrap_or(Path::new(".")), "eval", &a)?;

    if a.json == Some(true) {
        println!("{}", serde_json::to_string_pretty(&record).map_err(|e| CliError::runtime(e.to_string()))?);
        return Ok(());
    }
    let (p, r, f) = record.headline();
    let scope = match positive {
        Some(c) => format!("class {}", names[c]),
        None => "macro average".into(),
    };
    println!("documents {}", record.n_evaluated);
    println!("precision {p:.4} ({scope})");
    println!("recall {r:.4}");
    println!("f1 {f:.4}");
    println!("accuracy {:.4}", record.accuracy);
    println!("macro_f1 {:.4}", record.macro_f1);
    for (name, c) in names.iter().zip(&record.per_class) {
        println!("  {name}: precision {:.4} recall {:.4} f1 {:.4}", c.precision, c.recall, c.f1);
    }
    if record.undefined {
        println!("note: some ratios had a zero denominator and are reported as 0");
    }
    Ok(())
}
