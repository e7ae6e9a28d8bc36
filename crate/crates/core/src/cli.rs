//! Command-line surface: simulate, score, tune, eval, decide, overlap, lossgrid.
//!
//! Exit codes: 0 ok, 2 configuration, 3 fidelity, 4 split overlap, 5 I/O.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::acmia::{self, AcmiaParams, DerivMode};
use crate::attack::{score_traces, Attack, AttackConfig, Auxiliary};
use crate::baselines::{BaselineParams, FrequencyTable};
use crate::calibrate::{tune_k_percent, tune_temperature, KTuneResult, TuneGrid, TuneResult};
use crate::error::{Error, Result};
use crate::io::{self, file_sha256, OverlapRow, Provenance, Report};
use crate::metrics::{decide, export_density, roc_report, DensityTable, Normalization, RocReport};
use crate::toylm::{self, NgramIndex, OverlapCap, SynthConfig, ToyText};
use crate::trace::{Label, SampleTrace};

#[derive(Debug, Parser)]
#[command(
    name = "acmia",
    version,
    about = "Temperature-calibrated membership inference over LM traces"
)]
pub struct Cli {
    /// Worker threads for per-sample work (outputs do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic corpus, train the toy n-gram model and write traces.
    Simulate(SimulateArgs),
    /// Score every trace with one attack (`id,label,score` CSV).
    Score(ScoreArgs),
    /// Tune the temperature (or k) on a labeled calibration split.
    Tune(TuneArgs),
    /// ROC metrics for a score CSV.
    Eval(EvalArgs),
    /// Threshold verdicts: member iff score >= lambda.
    Decide(DecideArgs),
    /// Per-sample n-gram overlap with the member set.
    Overlap(OverlapArgs),
    /// Reduce FULL traces to loss-only traces at the given temperatures.
    Lossgrid(LossgridArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// n-gram order of both the generating chain and the trained model.
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 400)]
    pub n_members: usize,
    #[arg(long, default_value_t = 400)]
    pub n_nonmembers: usize,
    #[arg(long, default_value_t = 400)]
    pub n_reference: usize,
    #[arg(long, default_value_t = 96)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub shift_epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dirichlet: f64,
    /// Additive smoothing of the trained model.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// n for the optional non-member overlap cap.
    #[arg(long, requires = "overlap_cap")]
    pub overlap_n: Option<usize>,
    /// Largest allowed fraction of a non-member's n-grams found in members.
    #[arg(long, requires = "overlap_n")]
    pub overlap_cap: Option<f64>,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        let c = SynthConfig::default();
        SimulateArgs {
            out: PathBuf::new(),
            seed: c.seed,
            vocab_size: c.vocab_size,
            order: c.chain_order,
            n_members: c.n_members,
            n_nonmembers: c.n_nonmembers,
            n_reference: c.n_reference,
            seq_len: c.seq_len,
            shift_epsilon: c.shift_epsilon,
            dirichlet: c.dirichlet_concentration,
            beta: 0.1,
            overlap_n: None,
            overlap_cap: None,
        }
    }
}

impl SimulateArgs {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            vocab_size: self.vocab_size,
            chain_order: self.order,
            n_members: self.n_members,
            n_nonmembers: self.n_nonmembers,
            n_reference: self.n_reference,
            seq_len: self.seq_len,
            shift_epsilon: self.shift_epsilon,
            dirichlet_concentration: self.dirichlet,
            overlap_cap: self
                .overlap_n
                .zip(self.overlap_cap)
                .map(|(n, max_fraction)| OverlapCap { n, max_fraction }),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivModeArg {
    Analytic,
    FiniteDifference,
}

/// Hyperparameters shared by `score` and `tune`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub attack: String,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = acmia::DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, value_enum, default_value = "analytic")]
    pub deriv_mode: DerivModeArg,
    /// Average over every token instead of first occurrences (AC, DerivAC, NormAC).
    #[arg(long)]
    pub all_tokens: bool,
    #[arg(long, default_value_t = 20.0)]
    pub k_percent: f64,
    #[arg(long, default_value_t = 3.0)]
    pub dcpdd_a: f64,
    #[arg(long, default_value_t = 6)]
    pub compression_level: u32,
    /// Traces of the same samples under a reference model (Ref).
    #[arg(long)]
    #[serde(skip)]
    pub ref_traces: Option<PathBuf>,
    /// Traces of the lowercased samples under the target model (Lowercase).
    #[arg(long)]
    #[serde(skip)]
    pub lower_traces: Option<PathBuf>,
    /// `token_id,count` CSV of a reference corpus (DC-PDD).
    #[arg(long)]
    #[serde(skip)]
    pub freq: Option<PathBuf>,
    /// Vocabulary size for the frequency table (defaults to the largest listed id + 1).
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

impl AttackArgs {
    pub fn new(attack: Attack) -> Self {
        AttackArgs {
            attack: attack.name().to_string(),
            tau: 1.0,
            delta: acmia::DEFAULT_DELTA,
            deriv_mode: DerivModeArg::Analytic,
            all_tokens: false,
            k_percent: 20.0,
            dcpdd_a: 3.0,
            compression_level: 6,
            ref_traces: None,
            lower_traces: None,
            freq: None,
            vocab_size: None,
        }
    }

    pub fn config(&self) -> Result<AttackConfig> {
        let cfg = AttackConfig {
            attack: self.attack.parse()?,
            acmia: AcmiaParams {
                tau: self.tau,
                delta: self.delta,
                deriv_mode: match self.deriv_mode {
                    DerivModeArg::Analytic => DerivMode::Analytic,
                    DerivModeArg::FiniteDifference => DerivMode::FiniteDifference,
                },
                restrict_fos: !self.all_tokens,
            },
            baseline: BaselineParams {
                k_percent: self.k_percent,
                dcpdd_bound_a: self.dcpdd_a,
                compression_level: self.compression_level,
            },
        };
        cfg.acmia.validate()?;
        cfg.baseline.validate()?;
        Ok(cfg)
    }

    fn auxiliary(&self, attack: Attack) -> Result<(Auxiliary, Vec<String>)> {
        let mut aux = Auxiliary::default();
        let mut hashes = Vec::new();
        let need = |p: &Option<PathBuf>, flag: &str| {
            p.clone()
                .ok_or_else(|| Error::InvalidConfig(format!("attack {attack} needs --{flag}")))
        };
        match attack {
            Attack::Ref => {
                let p = need(&self.ref_traces, "ref-traces")?;
                aux = aux.with_reference(&io::read_traces(&p)?)?;
                hashes.push(file_sha256(&p)?);
            }
            Attack::Lowercase => {
                let p = need(&self.lower_traces, "lower-traces")?;
                aux = aux.with_lowercase(&io::read_traces(&p)?)?;
                hashes.push(file_sha256(&p)?);
            }
            Attack::Dcpdd => {
                let p = need(&self.freq, "freq")?;
                aux.frequencies = Some(FrequencyTable::load_csv(&p, self.vocab_size)?);
                hashes.push(file_sha256(&p)?);
            }
            _ => {}
        }
        Ok((aux, hashes))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    #[serde(skip)]
    pub traces: PathBuf,
    #[command(flatten)]
    pub attack: AttackArgs,
    /// Recorded in the report header.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TuneArgs {
    /// Labeled calibration traces.
    #[arg(long)]
    #[serde(skip)]
    pub calib: PathBuf,
    /// Evaluation traces; only read to refuse overlap with the calibration split.
    #[arg(long)]
    #[serde(skip)]
    pub eval: Option<PathBuf>,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub grid_log2_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub grid_log2_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub grid_log2_step: f64,
    /// Comma-separated k values; tunes k for Min-K% / Min-K%++ instead of a temperature.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationArg {
    Zscore,
    Minmax,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub scores: PathBuf,
    /// JSON report path.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// `fpr,tpr` CSV path.
    #[arg(long)]
    #[serde(skip)]
    pub roc_csv: Option<PathBuf>,
    /// Histogram CSV path; also adds the density block to the report.
    #[arg(long)]
    #[serde(skip)]
    pub density_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, value_enum, default_value = "zscore")]
    pub normalization: NormalizationArg,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecideArgs {
    #[arg(long)]
    #[serde(skip)]
    pub scores: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OverlapArgs {
    /// Samples to measure.
    #[arg(long)]
    #[serde(skip)]
    pub traces: PathBuf,
    /// Traces whose member-labeled samples form the member set (defaults to --traces).
    #[arg(long)]
    #[serde(skip)]
    pub members: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LossgridArgs {
    #[arg(long)]
    #[serde(skip)]
    pub traces: PathBuf,
    /// Comma-separated temperatures (tau = 1 is always added).
    #[arg(long, value_delimiter = ',', required = true)]
    pub taus: Vec<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Hashable view of a command: its parameters plus the digests of its inputs.
#[derive(Serialize)]
struct Hashed<'a, T: Serialize> {
    command: &'static str,
    params: &'a T,
    inputs: Vec<String>,
}

fn provenance<T: Serialize>(
    command: &'static str,
    params: &T,
    inputs: Vec<String>,
    seed: Option<u64>,
) -> Provenance {
    Provenance::new(
        &Hashed {
            command,
            params,
            inputs,
        },
        seed,
    )
}

/// Runs a parsed command line on a pool of the requested size.
pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Score(a) => cmd_score(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Decide(a) => cmd_decide(&a),
        Command::Overlap(a) => cmd_overlap(&a),
        Command::Lossgrid(a) => cmd_lossgrid(&a),
    })
}

/// Files written by `simulate`, relative to its output directory.
pub mod layout {
    pub const CALIBRATION: &str = "calibration.jsonl";
    pub const EVALUATION: &str = "evaluation.jsonl";
    pub const REFERENCE: &str = "reference.jsonl";
    pub const LOWERCASE: &str = "lowercase.jsonl";
    pub const FREQ: &str = "freq.csv";
    pub const CHAIN: &str = "chain.json";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub synth: SynthConfig,
    pub beta: f64,
    pub corpus_hash: String,
    pub files: Vec<(String, String)>,
}

fn texts(seqs: &[Vec<usize>], prefix: &str, label: Label) -> Vec<ToyText> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| ToyText {
            id: format!("{prefix}{i:04}"),
            tokens: s.clone(),
            label,
        })
        .collect()
}

/// Members and non-members alternate between calibration (even index) and
/// evaluation (odd index).
pub fn cmd_simulate(a: &SimulateArgs) -> Result<Report<SimulateManifest>> {
    let cfg = a.synth_config();
    cfg.validate()?;
    let corpus = toylm::synth_corpus(&cfg)?;
    let target = toylm::train_ngram(&corpus.members, cfg.chain_order, a.beta, cfg.vocab_size)?;
    let reference = toylm::train_ngram(&corpus.reference, cfg.chain_order, a.beta, cfg.vocab_size)?;

    let members = texts(&corpus.members, "m", Label::Member);
    let nonmembers = texts(&corpus.nonmembers, "n", Label::Nonmember);
    let (mut calib, mut eval) = (Vec::new(), Vec::new());
    for group in [&members, &nonmembers] {
        for (i, t) in group.iter().enumerate() {
            if i % 2 == 0 { &mut calib } else { &mut eval }.push(t.clone());
        }
    }
    let all: Vec<ToyText> = calib.iter().chain(&eval).cloned().collect();
    let lowered: Vec<ToyText> = all
        .iter()
        .map(|t| {
            Ok(ToyText {
                tokens: toylm::lowercase_tokens(&t.tokens, cfg.vocab_size)?,
                ..t.clone()
            })
        })
        .collect::<Result<_>>()?;

    let out = &a.out;
    io::write_traces(
        &out.join(layout::CALIBRATION),
        &toylm::emit_traces(&target, &calib)?,
    )?;
    io::write_traces(
        &out.join(layout::EVALUATION),
        &toylm::emit_traces(&target, &eval)?,
    )?;
    io::write_traces(
        &out.join(layout::REFERENCE),
        &toylm::emit_chosen_traces(&reference, &all)?,
    )?;
    io::write_traces(
        &out.join(layout::LOWERCASE),
        &toylm::emit_chosen_traces(&target, &lowered)?,
    )?;
    io::write_counts(&out.join(layout::FREQ), &corpus.reference_counts())?;
    io::write_json(&out.join(layout::CHAIN), &corpus.chain)?;

    let mut files = Vec::new();
    for name in [
        layout::CALIBRATION,
        layout::EVALUATION,
        layout::REFERENCE,
        layout::LOWERCASE,
        layout::FREQ,
        layout::CHAIN,
    ] {
        files.push((name.to_string(), file_sha256(&out.join(name))?));
    }
    let report = Report {
        header: provenance("simulate", a, vec![], Some(a.seed)),
        body: SimulateManifest {
            synth: cfg,
            beta: a.beta,
            corpus_hash: corpus.summary_hash(),
            files,
        },
    };
    io::write_json(&out.join(layout::MANIFEST), &report)?;
    Ok(report)
}

pub fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let cfg = a.attack.config()?;
    let traces = io::read_traces(&a.traces)?;
    let (aux, mut inputs) = a.attack.auxiliary(cfg.attack)?;
    inputs.insert(0, file_sha256(&a.traces)?);
    let scores = score_traces(&traces, &cfg, &aux)?;
    let header = provenance("score", a, inputs, a.seed);
    io::write_scores(&a.out, &scores, Some(&header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub attack: String,
    pub objective: String,
    pub grid: TuneGrid,
    #[serde(flatten)]
    pub result: TuneResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KTuneReport {
    pub attack: String,
    pub objective: String,
    #[serde(flatten)]
    pub result: KTuneResult,
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

pub fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let cfg = a.attack.config()?;
    if let Some(eval) = &a.eval {
        if same_file(&a.calib, eval) {
            return Err(Error::SplitOverlap(format!(
                "{} is both the calibration and the evaluation file",
                a.calib.display()
            )));
        }
    }
    let calib = io::read_traces(&a.calib)?;
    if let Some(eval) = &a.eval {
        let ids: HashSet<String> = io::read_traces(eval)?.into_iter().map(|t| t.id).collect();
        if let Some(t) = calib.iter().find(|t| ids.contains(&t.id)) {
            return Err(Error::SplitOverlap(format!(
                "sample {} appears in both splits",
                t.id
            )));
        }
    }
    let (aux, mut inputs) = a.attack.auxiliary(cfg.attack)?;
    inputs.insert(0, file_sha256(&a.calib)?);
    let header = provenance("tune", a, inputs, a.seed);

    if let Some(ks) = &a.k_grid {
        if !matches!(cfg.attack, Attack::Mink | Attack::Minkpp) {
            return Err(Error::InvalidConfig(
                "--k-grid applies to mink and minkpp only".into(),
            ));
        }
        let result = tune_k_percent(&calib, &cfg, &aux, ks)?;
        return io::write_json(
            &a.out,
            &Report {
                header,
                body: KTuneReport {
                    attack: cfg.attack.name().into(),
                    objective: "auroc".into(),
                    result,
                },
            },
        );
    }

    let grid = TuneGrid::from_log2(a.grid_log2_min, a.grid_log2_max, a.grid_log2_step);
    let result = tune_temperature(&calib, &cfg, &aux, &grid)?;
    io::write_json(
        &a.out,
        &Report {
            header,
            body: TuneReport {
                attack: cfg.attack.name().into(),
                objective: "auroc".into(),
                grid,
                result,
            },
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub excluded_unlabeled: usize,
    #[serde(flatten)]
    pub roc: RocReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityTable>,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Report<EvalReport>> {
    let all = io::read_scores(&a.scores)?;
    let unlabeled = all.count_unlabeled();
    if unlabeled > 0 {
        eprintln!("warning: excluding {unlabeled} unlabeled rows from metrics");
    }
    let scores = all.labeled();
    let roc = roc_report(&scores)?;
    let density = match &a.density_csv {
        Some(_) => Some(export_density(
            &scores,
            a.bins,
            match a.normalization {
                NormalizationArg::Zscore => Normalization::Zscore,
                NormalizationArg::Minmax => Normalization::Minmax,
            },
        )?),
        None => None,
    };
    let header = provenance("eval", a, vec![file_sha256(&a.scores)?], a.seed);
    if let Some(p) = &a.roc_csv {
        io::write_roc_points(p, &roc.points, Some(&header))?;
    }
    if let (Some(p), Some(d)) = (&a.density_csv, &density) {
        io::write_density(p, d, Some(&header))?;
    }
    let report = Report {
        header,
        body: EvalReport {
            excluded_unlabeled: unlabeled,
            roc,
            density,
        },
    };
    io::write_json(&a.out, &report)?;
    Ok(report)
}

pub fn cmd_decide(a: &DecideArgs) -> Result<()> {
    if !a.lambda.is_finite() {
        return Err(Error::InvalidConfig("lambda must be finite".into()));
    }
    let scores = io::read_scores(&a.scores)?;
    let header = provenance("decide", a, vec![file_sha256(&a.scores)?], a.seed);
    io::write_verdicts(&a.out, &decide(&scores, a.lambda), Some(&header))
}

/// Overlap of every sample against the member set, leaving the sample itself out.
pub fn cmd_overlap(a: &OverlapArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let traces = io::read_traces(&a.traces)?;
    let member_source: Vec<SampleTrace> = match &a.members {
        Some(p) => io::read_traces(p)?,
        None => traces.clone(),
    };
    let members: Vec<(&str, Vec<usize>)> = member_source
        .iter()
        .filter(|t| t.label == Label::Member)
        .map(|t| (t.id.as_str(), t.token_ids().collect()))
        .collect();
    let full_index = NgramIndex::new(
        &members.iter().map(|m| m.1.clone()).collect::<Vec<_>>(),
        a.n,
    );

    let mut rows = Vec::with_capacity(traces.len());
    for t in &traces {
        let x: Vec<usize> = t.token_ids().collect();
        let overlap = if members.iter().any(|(id, _)| *id == t.id) {
            let others: Vec<Vec<usize>> = members
                .iter()
                .filter(|(id, _)| *id != t.id)
                .map(|m| m.1.clone())
                .collect();
            toylm::ngram_overlap(&x, &others, a.n)?
        } else {
            full_index.overlap(&x)?
        };
        rows.push(OverlapRow {
            id: t.id.clone(),
            label: t.label.as_str().to_string(),
            overlap,
        });
    }
    let mut inputs = vec![file_sha256(&a.traces)?];
    if let Some(p) = &a.members {
        inputs.push(file_sha256(p)?);
    }
    let header = provenance("overlap", a, inputs, a.seed);
    io::write_overlaps(&a.out, &rows, Some(&header))
}

pub fn cmd_lossgrid(a: &LossgridArgs) -> Result<()> {
    let traces = io::read_traces(&a.traces)?;
    let converted = traces
        .iter()
        .map(|t| acmia::to_lossgrid(t, &a.taus))
        .collect::<Result<Vec<_>>>()?;
    io::write_traces(&a.out, &converted)
}
