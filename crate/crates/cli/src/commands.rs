use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use storytune::curriculum::{run_curriculum, TrainData};
use storytune::data::{load_jsonl, story_pool, synth_corpus, write_jsonl, InstructionExample, SynthKnobs};
use storytune::generate::{generate as generate_story, DecodeMode, GenParams};
use storytune::metrics::{evaluate as evaluate_model, merge_reports};
use storytune::model::checkpoint;
use storytune::tokenizer::Vocab;

use crate::config::RunConfig;
use crate::{EvaluateArgs, GenerateArgs, ReportArgs, SynthArgs, TrainArgs};

pub enum CliError {
    Usage(String),
    Data(String),
    Lib(storytune::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use storytune::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Lib(E::Divergence { .. } | E::NonFinite { .. }) => 3,
            CliError::Lib(E::InvalidArgument(_)) => 1,
            CliError::Lib(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<storytune::Error> for CliError {
    fn from(e: storytune::Error) -> Self {
        CliError::Lib(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn synth_data(a: SynthArgs) -> Result<()> {
    let defaults = SynthKnobs::default();
    let knobs = SynthKnobs {
        protagonists: a.protagonists.unwrap_or(defaults.protagonists),
        fears: a.fears.unwrap_or(defaults.fears),
        helpers: a.helpers.unwrap_or(defaults.helpers),
    };
    create_dir(&a.out)?;
    let corpus = synth_corpus(a.seed, a.n, knobs)?;
    write_jsonl(a.out.join("train.jsonl"), &corpus.train)?;
    write_jsonl(a.out.join("valid.jsonl"), &corpus.validation)?;
    write_jsonl(a.out.join("test.jsonl"), &corpus.test)?;
    let manifest = format!(
        "seed={}\nn={}\nprotagonists={}\nfears={}\nhelpers={}\ntrain={}\nvalid={}\ntest={}\n",
        a.seed,
        a.n,
        knobs.protagonists,
        knobs.fears,
        knobs.helpers,
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len()
    );
    write(&a.out.join("manifest.txt"), manifest)?;
    eprintln!(
        "wrote {} train, {} valid, {} test examples to {}",
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len(),
        a.out.display()
    );
    Ok(())
}

/// Reads the `seed=` line of a synth-data manifest.
fn manifest_seed(text: &str) -> Option<&str> {
    text.lines().find_map(|l| l.strip_prefix("seed="))
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let manifest = a.data.join("manifest.txt");
    if a.data.is_dir() && manifest.is_file() {
        if let Some(seed) = manifest_seed(&read(&manifest)?) {
            cfg.set("seed", seed).map_err(|e| CliError::Data(format!("{}: {e}", manifest.display())))?;
        }
    }
    if let Some(path) = &a.config {
        let text = read(path)?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    flag("seed", a.seed.map(|v| v.to_string()));
    flag("mode", a.mode.clone());
    flag("pretrain.steps", a.pretrain_steps.map(|v| v.to_string()));
    flag("weak.steps", a.weak_steps.map(|v| v.to_string()));
    flag("strong.steps", a.strong_steps.map(|v| v.to_string()));
    flag("joint.steps", a.joint_steps.map(|v| v.to_string()));
    for phase in ["pretrain", "weak", "strong", "joint"] {
        flag(&format!("{phase}.lr"), a.lr.map(|v| v.to_string()));
        flag(&format!("{phase}.batch_size"), a.batch_size.map(|v| v.to_string()));
    }
    flag("lambda1", a.lambda1.map(|v| v.to_string()));
    flag("lambda2", a.lambda2.map(|v| v.to_string()));
    flag("lambda3", a.lambda3.map(|v| v.to_string()));
    flag("d_model", a.d_model.map(|v| v.to_string()));
    flag("n_heads", a.n_heads.map(|v| v.to_string()));
    flag("max_len", a.max_len.map(|v| v.to_string()));
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        flags.push((k.trim().to_string(), v.to_string()));
    }
    for (k, v) in flags {
        cfg.set(&k, &v).map_err(CliError::Usage)?;
    }
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

fn data_files(data: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if data.is_dir() {
        let train = data.join("train.jsonl");
        if !train.is_file() {
            return Err(CliError::Data(format!("{}: no train.jsonl", data.display())));
        }
        let valid = data.join("valid.jsonl");
        Ok((train, valid.is_file().then_some(valid)))
    } else if data.is_file() {
        Ok((data.to_path_buf(), None))
    } else {
        Err(CliError::Data(format!("{}: no such file or directory", data.display())))
    }
}

fn check_lengths(path: &Path, examples: &[InstructionExample], vocab: &Vocab, max_len: usize) -> Result<()> {
    for (i, e) in examples.iter().enumerate() {
        let len = vocab.encode(&e.instruction, true).len().max(vocab.encode_story(&e.story).len());
        if len > max_len {
            return Err(CliError::Data(format!(
                "{}: example on line {} has {len} tokens, more than max_len {max_len}",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let run = resolve_config(&a)?;
    let (train_path, valid_path) = data_files(&a.data)?;
    let train_ex = load_jsonl(&train_path)?;
    if train_ex.is_empty() {
        return Err(CliError::Data(format!("{}: no examples", train_path.display())));
    }
    let valid_ex = match &valid_path {
        Some(p) => load_jsonl(p)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    write(&a.out.join("config.txt"), run.to_text())?;

    let stories = story_pool(&train_ex);
    let texts: Vec<&str> = train_ex
        .iter()
        .flat_map(|e| [e.instruction.as_str(), e.story.as_str()])
        .collect();
    let vocab = Vocab::build(&texts, run.min_count, run.max_vocab)?;
    let model = run.model_config(vocab.len());
    model.validate()?;
    check_lengths(&train_path, &train_ex, &vocab, model.max_len)?;
    if let Some(p) = &valid_path {
        check_lengths(p, &valid_ex, &vocab, model.max_len)?;
    }
    let train_data = TrainData::new(&train_ex, &stories, &vocab);
    let val_data = TrainData::from_examples(&valid_ex, &vocab);
    eprintln!(
        "{} training examples, {} stories, vocabulary {}, {} parameters",
        train_ex.len(),
        stories.len(),
        vocab.len(),
        storytune::model::ModelParams::init(&model, run.seed)?.num_scalars()
    );

    let out = run_curriculum(&run.train_config(), &model, &train_data, &val_data)?;
    for (phase, params) in &out.checkpoints {
        let name = phase.map_or("init", |p| p.as_str());
        checkpoint::save(a.out.join(format!("{name}.w2st")), &model, &vocab, params)?;
    }
    write(&a.out.join("trainlog.csv"), out.log.to_csv())?;
    write(&a.out.join("validation.csv"), out.log.validation_csv())?;
    for r in &out.log.validation {
        let show = |v: Option<f32>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "after {:<8} pretrain {} weak {} strong {}",
            r.after.map_or("init", |p| p.as_str()),
            show(r.pretrain),
            show(r.weak),
            show(r.strong)
        );
    }
    Ok(())
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let instr_len = ck.vocab.encode(&a.instruction, true).len();
    let max_new = match a.max_new {
        Some(n) => n,
        None => ck.config.max_len.checked_sub(instr_len).filter(|&n| n > 0).ok_or_else(|| {
            CliError::Usage(format!(
                "instruction has {instr_len} tokens, no room within max_len {}",
                ck.config.max_len
            ))
        })?,
    };
    let gp = GenParams {
        max_new_tokens: max_new,
        mode: a.mode.parse::<DecodeMode>()?,
        temperature: a.temperature,
        seed: a.seed,
    };
    let out = generate_story(&ck.params, &ck.config, &ck.vocab, &a.instruction, &gp)?;
    println!("{}", out.text);
    if a.verbose {
        for (id, lp) in out.ids.iter().zip(&out.log_probs) {
            eprintln!("{}\t{lp}", ck.vocab.token_of(*id).unwrap_or("?"));
        }
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let examples = load_jsonl(&a.data)?;
    if let Some(report) = &a.report {
        if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
    }
    let ck = checkpoint::load(&a.checkpoint)?;
    if examples.is_empty() {
        return Err(CliError::Data(format!("{}: no examples", a.data.display())));
    }
    let label = a.label.clone().unwrap_or_else(|| {
        a.checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint".into())
    });
    if label.contains(',') || label.contains('\n') {
        return Err(CliError::Usage(format!("label {label:?} may not contain commas or newlines")));
    }
    let report = evaluate_model(&ck.params, &ck.config, &ck.vocab, &examples, &GenParams::greedy(a.max_new))?;
    let csv = report.to_csv(&label);
    match &a.report {
        Some(path) => write(path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn report(a: ReportArgs) -> Result<()> {
    let missing: Vec<String> = a
        .inputs
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!("missing evaluation files: {}", missing.join(", "))));
    }
    let inputs = a
        .inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), read(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_reports(&inputs).map_err(|e| CliError::Data(e.to_string()))?;
    match &a.out {
        Some(path) => write(path, merged),
        None => {
            print!("{merged}");
            Ok(())
        }
    }
}
