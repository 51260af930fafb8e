use std::fs::File;
use std::path::PathBuf;

use activemix::active::{
    load_oracle, run_active_loop, session_oracle, write_predictions, LoopOptions, LoopStatus, Pool, SessionConfig, SessionState,
    StoppingRule, Strategy,
};
use activemix::eval::metrics_csv;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::inputs::{load_truth, write_file, ModelArgs};
use crate::settings::{parse_serde, resolve, write_run_json};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimCmd {
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Ground truth, `doc_id<TAB>class_index` per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// uncertainty or random.
    #[arg(long, value_parser = parse_serde::<Strategy>)]
    pub strategy: Option<Strategy>,
    /// Documents queried per round.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Size of the random first batch [default: batch size].
    #[arg(long)]
    pub seed_size: Option<usize>,
    /// budget:N, f1:DELTA[:PATIENCE] or stability:DELTA[:PATIENCE].
    #[arg(long)]
    pub stop: Option<String>,
    /// Maximum labeled documents under any stopping rule.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Probability that the oracle returns a wrong document label.
    #[arg(long)]
    pub doc_error_p: Option<f64>,
    /// Probability that the oracle flips a keyword verdict.
    #[arg(long)]
    pub keyword_error_p: Option<f64>,
    /// Run keyword rounds between label batches.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub keywords: Option<bool>,
    /// Prior mass added per accepted keyword.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Keyword candidates proposed per class and round.
    #[arg(long)]
    pub m: Option<usize>,
    /// Keywords known up front, `term<TAB>class_name` per line.
    #[arg(long)]
    pub initial_keywords: Option<PathBuf>,
    /// Share of documents held out for evaluation.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Session directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue the session saved in the output directory.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resume: Option<bool>,
}

impl SimCmd {
    fn session_config(&self) -> CliResult<SessionConfig> {
        let mut c = SessionConfig::default();
        self.model.apply(&mut c);
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if self.seed_size.is_some() {
            c.seed_size = self.seed_size;
        }
        if let Some(s) = &self.stop {
            c.stop = s.parse::<StoppingRule>()?;
        }
        if self.budget.is_some() {
            c.stop.budget = self.budget;
        }
        if let Some(v) = self.keywords {
            c.keywords.enabled = v;
        }
        if let Some(v) = self.gamma {
            c.keywords.gamma = v;
        }
        if let Some(v) = self.m {
            c.keywords.m = v;
        }
        if let Some(path) = &self.initial_keywords {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (term, class) = line
                    .split_once('\t')
                    .ok_or_else(|| CliError::usage(format!("{}:{}: expected `term<TAB>class_name`", path.display(), i + 1)))?;
                c.keywords.initial.entry(class.trim().to_owned()).or_default().push(term.to_owned());
            }
        }
        if let Some(v) = self.test_fraction {
            c.test_fraction = v;
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn run(cmd: SimCmd) -> CliResult<()> {
    let a: SimCmd = resolve(&cmd, cmd.config.as_deref(), &["dfm", "texts", "labels", "initial_keywords", "out"])?;
    let labels = a.labels.clone().ok_or_else(|| CliError::missing("labels"))?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let config = a.session_config()?;
    let doc_error_p = a.doc_error_p.unwrap_or(0.0);
    let keyword_error_p = a.keyword_error_p.unwrap_or(0.0);
    let corpus = a.model.load_corpus()?;
    let truth = load_truth(&labels, &corpus, config.class_names()?.len())?;
    let pool = Pool::from_config(&corpus, &config, Some(&truth))?;

    let resuming = a.resume == Some(true) && out.join("state.json").exists();
    let (mut state, mut oracle) = if resuming {
        let state = SessionState::load_dir(&out)?;
        if state.config() != &config {
            return Err(CliError::usage(format!("settings differ from the session saved in {}", out.display())));
        }
        let oracle = load_oracle(&out)?.ok_or_else(|| CliError::usage(format!("{} has no oracle.json", out.display())))?;
        (state, oracle)
    } else {
        let state = SessionState::new(config.clone(), &pool)?;
        let oracle = session_oracle(&pool, &config, &truth, doc_error_p, keyword_error_p)?;
        (state, oracle)
    };
    write_run_json(&out, "active-sim", &json!({ "flags": a, "session": config }))?;

    let opts = LoopOptions {
        checkpoint_dir: Some(out.clone()),
        max_fits: None,
    };
    let predictions = match run_active_loop(&pool, &mut state, &mut oracle, &opts)? {
        LoopStatus::Stopped { predictions } => predictions,
        other => return Err(CliError::runtime(format!("loop ended without stopping: {other:?}"))),
    };
    let path = out.join("predictions.csv");
    let file = File::create(&path).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    write_predictions(&predictions, file)?;
    let history = state.metric_history();
    write_file(&out.join("metrics.csv"), metrics_csv(history).as_bytes())?;

    print!("{}", metrics_csv(history));
    eprintln!(
        "stopped: {:?} after {} fits with {} labels; session in {}",
        state.stop_reason().expect("stopped sessions have a reason"),
        history.len(),
        state.n_labeled(),
        out.display()
    );
    Ok(())
}
