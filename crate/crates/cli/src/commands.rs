use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nlu_core::data::{corpus_to_text, load_corpus, load_corpus_with_lint, CorpusStats, TaggedUtterance};
use nlu_core::features::{Annotator, ResourceText};
use nlu_core::intent::IntentPool;
use nlu_core::metrics::{EvalReport, RerTable};
use nlu_core::pipeline::Pipeline;
use nlu_core::slot::SlotMode;
use nlu_core::tags::SlotTag;
use nlu_core::toy::toy_grammar;
use nlu_core::train::{history_to_text, train as run_training, TrainConfig, TrainEvent};

use crate::manifest::{fingerprint, write_json, RunEntry, RunManifest, RunSummary};
use crate::plot::attention_svg;
use crate::{
    AnnotateArgs, AttnArgs, AttnFormat, CliError, CliResult, CompareArgs, EvalArgs, IntentPoolArg, LintArgs,
    ReportFormat, SlotModeArg, StatsArgs, ToyArgs, TrainArgs,
};

/// Standard file names inside a data directory.
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub const TRAIN: &'static str = "train.txt";
    pub const DEV: &'static str = "dev.txt";
    pub const TEST: &'static str = "test.txt";
    pub const LEXICON: &'static str = "lexicon.txt";
    pub const GAZETTEER: &'static str = "gazetteer.tsv";
    pub const DICTIONARY: &'static str = "dictionary.txt";
    pub const CONFIG: &'static str = "config.txt";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn require_dir(&self) -> CliResult<()> {
        if !self.root.is_dir() {
            return Err(CliError::Invalid(format!("data directory {} does not exist", self.root.display())));
        }
        Ok(())
    }

    fn corpus(&self, name: &str) -> CliResult<Vec<TaggedUtterance>> {
        Ok(load_corpus(&self.path(name))?)
    }

    fn optional_corpus(&self, name: &str) -> CliResult<Option<Vec<TaggedUtterance>>> {
        let p = self.path(name);
        if p.exists() {
            Ok(Some(load_corpus(&p)?))
        } else {
            Ok(None)
        }
    }

    /// Missing resource files are treated as empty.
    fn resources(&self) -> CliResult<ResourceText> {
        let read = |name: &str| -> CliResult<String> {
            let p = self.path(name);
            if p.exists() {
                std::fs::read_to_string(&p).map_err(|e| CliError::Core(nlu_core::Error::io(&p, e)))
            } else {
                Ok(String::new())
            }
        };
        Ok(ResourceText {
            lexicon: read(Self::LEXICON)?,
            gazetteer: read(Self::GAZETTEER)?,
            dictionary: read(Self::DICTIONARY)?,
        })
    }

    fn existing(&self, names: &[&str]) -> Vec<PathBuf> {
        names.iter().map(|n| self.path(n)).filter(|p| p.exists()).collect()
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Core(nlu_core::Error::io(path, e)))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Core(nlu_core::Error::io(path, e)))
}

pub fn train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| nlu_core::Error::io(p, e))?;
            TrainConfig::parse(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(m) = args.slot_mode {
        config.slot_mode = match m {
            SlotModeArg::Softmax => SlotMode::Softmax,
            SlotModeArg::Crf => SlotMode::Crf,
        };
    }
    if args.no_slot_features {
        config.slot_features = false;
    }
    if let Some(p) = args.intent_pool {
        config.intent_pool = match p {
            IntentPoolArg::Attention => IntentPool::Attention,
            IntentPoolArg::StartToken => IntentPool::StartToken,
        };
    }
    if args.seeds == 0 {
        return Err(CliError::Invalid("--seeds must be at least 1".into()));
    }
    config.validate()?;
    Ok(config)
}

pub struct TrainOutput {
    pub summary: RunSummary,
    pub manifests: Vec<RunManifest>,
    pub summary_text: String,
}

/// Trains `--seeds` runs into `out/run-<seed>/` and writes `summary.json`.
/// All inputs are loaded and validated before anything is written.
pub fn train(args: &TrainArgs) -> CliResult<TrainOutput> {
    let config = train_config(args)?;
    let data = DataDir::new(&args.data);
    data.require_dir()?;
    let train_set = data.corpus(DataDir::TRAIN)?;
    let dev_set = data.corpus(DataDir::DEV)?;
    let test_set = data.optional_corpus(DataDir::TEST)?;
    let resources = data.resources()?;
    Annotator::new(&resources)?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(CliError::Invalid("train and dev corpora must be nonempty".into()));
    }
    let corpora = data
        .existing(&[
            DataDir::TRAIN,
            DataDir::DEV,
            DataDir::TEST,
            DataDir::LEXICON,
            DataDir::GAZETTEER,
            DataDir::DICTIONARY,
        ])
        .iter()
        .map(|p| fingerprint(p))
        .collect::<CliResult<Vec<_>>>()?;
    if args.out.exists() && std::fs::read_dir(&args.out).map(|mut d| d.next().is_some()).unwrap_or(true) {
        return Err(CliError::Invalid(format!("output directory {} is not empty", args.out.display())));
    }

    let mut manifests = Vec::new();
    let mut entries = Vec::new();
    for k in 0..args.seeds {
        let mut cfg = config.clone();
        cfg.seed = config.seed + k as u64;
        let outcome = run_training(&train_set, &dev_set, &resources, &cfg, |e| {
            if let TrainEvent::Epoch(r) = e {
                if !args.quiet {
                    eprintln!("seed={} {}", cfg.seed, r.to_line());
                }
            }
        })?;
        let dir = args.out.join(format!("run-{}", cfg.seed));
        create_dir(&dir)?;
        let ckpt_path = dir.join("checkpoint.json");
        outcome.pipeline.to_checkpoint(Some(&cfg)).save(&ckpt_path)?;
        write(&dir.join("train.log"), &history_to_text(&outcome.history))?;
        let dev = outcome.best().dev.clone();
        write(&dir.join("dev_report.txt"), &dev.to_kv())?;
        let test = match &test_set {
            Some(t) => {
                let r = outcome.pipeline.evaluate(t)?;
                write(&dir.join("test_report.txt"), &r.to_kv())?;
                Some(r)
            }
            None => None,
        };
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            corpora: corpora.clone(),
            checkpoint: ckpt_path,
            best_epoch: outcome.best_epoch,
            dev: dev.clone(),
            test,
            history: outcome.history,
        };
        manifest.save(&dir.join("manifest.json"))?;
        entries.push(RunEntry {
            seed: cfg.seed,
            dir,
            dev_score: dev.selection_score(),
        });
        manifests.push(manifest);
    }
    let mut best = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.dev_score > entries[best].dev_score {
            best = i;
        }
    }
    let summary = RunSummary { runs: entries, best };
    write_json(&args.out.join("summary.json"), &summary)?;
    let b = &manifests[best];
    let mut text = format!("best_seed={}\nbest_dir={}\n", b.seed, summary.best_run().dir.display());
    for (k, v) in [("dev", Some(&b.dev)), ("test", b.test.as_ref())] {
        if let Some(r) = v {
            for line in r.to_kv().lines() {
                let _ = writeln!(text, "{k}_{line}");
            }
        }
    }
    Ok(TrainOutput {
        summary,
        manifests,
        summary_text: text,
    })
}

fn format_report(r: &EvalReport, format: ReportFormat) -> CliResult<String> {
    Ok(match format {
        ReportFormat::Kv => r.to_kv(),
        ReportFormat::Json => serde_json::to_string_pretty(r).map_err(nlu_core::Error::from)? + "\n",
    })
}

pub fn evaluate(args: &EvalArgs) -> CliResult<EvalReport> {
    let corpus = load_corpus(&args.corpus)?;
    let gold_intents: Vec<&str> = corpus.iter().map(|u| u.intent.as_str()).collect();
    let gold_tags: Vec<Vec<SlotTag>> = corpus.iter().map(|u| u.tags.clone()).collect();
    if args.self_test {
        return Ok(EvalReport::compute(&gold_intents, &gold_intents, &gold_tags, &gold_tags)?);
    }
    let ckpt = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Invalid("--checkpoint is required unless --self-test is given".into()))?;
    let pipeline = Pipeline::load(ckpt)?;
    let known: HashSet<&str> = pipeline.labels.intents.iter().map(String::as_str).collect();
    if !corpus.is_empty() && !gold_intents.iter().any(|i| known.contains(i)) {
        return Err(CliError::Invalid(
            "vocabulary mismatch: no corpus intent is known to the checkpoint".into(),
        ));
    }
    Ok(pipeline.evaluate(&corpus)?)
}

pub fn eval(args: &EvalArgs) -> CliResult<String> {
    let report = evaluate(args)?;
    let text = format_report(&report, args.format)?;
    if let Some(out) = &args.out {
        write(out, &text)?;
    }
    Ok(text)
}

pub fn compare(args: &CompareArgs) -> CliResult<String> {
    let read = |p: &Path| -> CliResult<EvalReport> {
        let text = std::fs::read_to_string(p).map_err(|e| nlu_core::Error::io(p, e))?;
        Ok(EvalReport::parse(&text)?)
    };
    let table = RerTable::compare(&read(&args.report_a)?, &read(&args.report_b)?)?;
    Ok(table.to_tsv())
}

pub fn attn(args: &AttnArgs) -> CliResult<String> {
    let pipeline = Pipeline::load(&args.checkpoint)?;
    let words: Vec<&str> = args.text.split_whitespace().collect();
    let rows = pipeline.attention(&words)?;
    let text = match args.format {
        AttnFormat::Tsv => {
            let mut s = String::from("position\tpiece\tword\tweight\n");
            for (i, r) in rows.iter().enumerate() {
                let word = r.word.map(|w| words[w]).unwrap_or("-");
                let _ = writeln!(s, "{i}\t{}\t{word}\t{:.6}", r.token, r.weight);
            }
            s
        }
        AttnFormat::Svg => attention_svg(&rows),
    };
    match &args.out {
        Some(p) => {
            write(p, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

pub fn annotate(args: &AnnotateArgs) -> CliResult<String> {
    let resources = ResourceText::load(&args.lexicon, &args.gazetteer, &args.dict)?;
    let annotator = Annotator::new(&resources)?;
    let words: Vec<&str> = args.text.split_whitespace().collect();
    let mut s = String::from("word\tcased\tcase\tentity\n");
    for a in annotator.annotate(&words) {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", a.word, a.cased, a.case, a.entity);
    }
    Ok(s)
}

pub fn toy(args: &ToyArgs) -> CliResult<String> {
    if args.train == 0 || args.dev == 0 || args.test == 0 {
        return Err(CliError::Invalid("split sizes must be at least 1".into()));
    }
    let toy = toy_grammar(args.seed, args.train, args.dev, args.test);
    create_dir(&args.out)?;
    let d = DataDir::new(&args.out);
    write(&d.path(DataDir::TRAIN), &corpus_to_text(&toy.train))?;
    write(&d.path(DataDir::DEV), &corpus_to_text(&toy.dev))?;
    write(&d.path(DataDir::TEST), &corpus_to_text(&toy.test))?;
    write(&d.path(DataDir::LEXICON), &toy.resources.lexicon)?;
    write(&d.path(DataDir::GAZETTEER), &toy.resources.gazetteer)?;
    write(&d.path(DataDir::DICTIONARY), &toy.resources.dictionary)?;
    write(&d.path(DataDir::CONFIG), &TrainConfig::desk().to_kv())?;
    Ok(format!(
        "wrote {} train, {} dev, {} test utterances to {}\n",
        toy.train.len(),
        toy.dev.len(),
        toy.test.len(),
        args.out.display()
    ))
}

pub fn stats(args: &StatsArgs) -> CliResult<String> {
    let data = DataDir::new(&args.data);
    data.require_dir()?;
    let train = data.corpus(DataDir::TRAIN)?;
    let dev = data.optional_corpus(DataDir::DEV)?.unwrap_or_default();
    let test = data.optional_corpus(DataDir::TEST)?.unwrap_or_default();
    Ok(CorpusStats::compute(&train, &dev, &test).to_kv())
}

pub fn lint(args: &LintArgs) -> CliResult<String> {
    let (corpus, flags) = load_corpus_with_lint(&args.corpus)?;
    let mut s = format!("utterances={}\nflags={}\n", corpus.len(), flags.len());
    for f in flags {
        let _ = writeln!(s, "{f}");
    }
    Ok(s)
}
