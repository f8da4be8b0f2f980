use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{BackboneKind, BackendKind};
use super::{read_json, write_json, ItemError, Manifest, Run};
use crate::corpus::{read_jsonl, write_jsonl, QAItem};
use crate::detector::{calibrate_threshold, decide, Threshold};
use crate::dialogue::prompts::POLITE_ALIGNED_DIRECTIVE;
use crate::dialogue::simulator::{synthetic_feature, SimulatorProfile};
use crate::dialogue::{
    induce_continuation, ChatBackend, DialogueTranscript, DomainProfile, HttpChatBackend, InduceRequest, Regime,
    SimulatedChat,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, default_theorem_grid, monte_carlo_theorem_check, EvalReport, LabeledItem, LabeledSequence,
    MonteCarloResult, PlotSelector, ProbeSource, ScoreSource, SweepRow,
};
use crate::rag::{self, Embedder, HashingEmbedder, HttpEmbedder, RetrievalIndex};
use crate::rng;
use crate::scoring::{
    assemble_sequences, index_features, ingest_external_scores, score_transcript, train_probe, Backbone,
    FeatureMeta, FeatureRecord, Objective, ProbeModel, TurnScore,
};
use crate::trajectory::{coefficient_of_variation, spike_with_turn};

type Notes = BTreeMap<String, serde_json::Value>;

/// Generator state written by `simulate` and read back by `induce`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorState {
    pub seed: u64,
    pub k: usize,
    pub profile: SimulatorProfile,
    pub domains: Vec<DomainProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeRecord {
    pub item_id: String,
    pub domain_id: String,
    pub backbone_id: String,
    pub spike: f64,
    pub peak_turn: usize,
    #[serde(default)]
    pub cv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub item_id: String,
    pub domain_id: String,
    pub spike: f64,
    pub decision: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub item_id: String,
    pub target: f64,
}

fn pool(run: &Run) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(run.config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn load_qa(run: &Run, domain: &str) -> Result<Vec<QAItem>> {
    let items: Vec<QAItem> = read_jsonl(&run.qa_path(domain))?;
    if let Some(bad) = items.iter().find(|i| i.domain_id != domain) {
        return Err(Error::InvalidArgument(format!(
            "item {} has domain_id {:?} but is registered under {domain:?}",
            bad.item_id, bad.domain_id
        )));
    }
    let dup = crate::corpus::duplicate_ids(items.iter().map(|i| i.item_id.as_str()));
    if let Some(d) = dup.first() {
        return Err(Error::DuplicateId(d.clone()));
    }
    Ok(items)
}

fn labels_of(items: &[QAItem]) -> Result<HashMap<String, u8>> {
    items
        .iter()
        .map(|i| match i.label {
            Some(l @ (0 | 1)) => Ok((i.item_id.clone(), l)),
            Some(l) => Err(Error::InvalidArgument(format!("item {} has label {l}", i.item_id))),
            None => Err(Error::Labeling(format!("item {} is unlabeled", i.item_id))),
        })
        .collect()
}

/// Synthetic corpus: labeled QA items, initial-answer log-probabilities and,
/// optionally, per-turn feature vectors.
pub fn simulate(run: &Run) -> Result<Manifest> {
    let c = &run.config;
    let s = &c.simulator;
    let seed = c.seeds.sampling;
    let domains: Vec<DomainProfile> = (0..s.n_domains).map(DomainProfile::synthetic).collect();
    let mut outputs = Vec::new();
    for (di, dom) in domains.iter().enumerate() {
        let n = s.items_per_domain;
        let n_h = (s.hallucination_rate * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream_for(seed, &format!("labels/{}", dom.name)));
        let mut labels = vec![0u8; n];
        for &i in &order[..n_h] {
            labels[i] = 1;
        }
        let mut items = Vec::with_capacity(n);
        let mut features = Vec::new();
        for (j, &label) in labels.iter().enumerate() {
            let item_id = format!("{}-{j:04}", dom.name);
            let reference = format!("{} fact {j}", dom.name);
            let answer = if label == 1 { format!("{} myth {j}", dom.name) } else { reference.clone() };
            let chat = SimulatedChat::new(&s.profile, dom, Regime::from_label(label), c.k, seed, &item_id, &answer);
            if s.emit_features {
                for (t, &latent) in chat.trajectory().latents.iter().enumerate() {
                    features.push(FeatureRecord {
                        item_id: item_id.clone(),
                        turn: t + 1,
                        vector: synthetic_feature(latent, di, s.feature_dim, seed, &item_id, t + 1),
                        meta: FeatureMeta::mean_last_five(c.probe.token_position, s.feature_dim),
                    });
                }
            }
            items.push(QAItem {
                item_id: item_id.clone(),
                domain_id: dom.name.clone(),
                question: format!("Synthetic question {j} from domain {}?", dom.name),
                reference_answers: vec![reference],
                generated_answer: answer,
                label: Some(label),
                answer_logprobs: Some(chat.initial_logprobs()),
                group: None,
                stratum: None,
            });
        }
        let qa = run.stage_path("qa", &dom.name);
        write_jsonl(&qa, &items)?;
        outputs.push(qa);
        if s.emit_features {
            let f = run.stage_path("features", &dom.name);
            write_jsonl(&f, &features)?;
            outputs.push(f);
        }
    }
    let state = SimulatorState { seed, k: c.k, profile: s.profile.clone(), domains };
    let state_path = run.path("simulator.json");
    write_json(&state_path, &state)?;
    outputs.push(state_path);
    run.finish("simulate", &[], &outputs, Vec::new(), Notes::new())
}

enum Driver {
    Sim(SimulatorState),
    Http(HttpChatBackend),
}

pub fn induce(run: &Run, only: &[String]) -> Result<Manifest> {
    let c = &run.config;
    let driver = match c.backend {
        BackendKind::Sim => Driver::Sim(read_json(&run.path("simulator.json")).map_err(|e| {
            Error::Config(format!("the sim backend needs simulator.json from `simulate`: {e}"))
        })?),
        BackendKind::Http => Driver::Http(HttpChatBackend::new(c.http.clone().expect("validated"))),
    };
    let domains = selected(run, only)?;
    let decoding = c.decoding();
    let directive = c.polite_directive.then_some(POLITE_ALIGNED_DIRECTIVE);
    let workers = pool(run)?;
    let (mut inputs, mut outputs, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    for d in &domains {
        let qa_path = run.qa_path(d);
        let items = load_qa(run, d)?;
        let sim_domain = match &driver {
            Driver::Sim(state) => Some(state.domains.iter().find(|p| &p.name == d).ok_or_else(|| {
                Error::Config(format!("domain {d} is not a simulator domain"))
            })?),
            Driver::Http(_) => None,
        };
        let results: Vec<Result<DialogueTranscript>> = workers.install(|| {
            items
                .par_iter()
                .map(|item| {
                    let req = InduceRequest {
                        item_id: &item.item_id,
                        domain_id: d,
                        question: &item.question,
                        initial_answer: &item.generated_answer,
                        initial_logprobs: item.answer_logprobs.clone(),
                        decoding,
                        prompt_seed: c.seeds.prompt,
                        system_directive: directive,
                        retry: c.retry,
                        request_logprobs: c.request_logprobs,
                    };
                    match (&driver, sim_domain) {
                        (Driver::Sim(state), Some(dom)) => {
                            let label = item.label.ok_or_else(|| {
                                Error::Labeling(format!("item {} needs a label to pick its simulated regime", item.item_id))
                            })?;
                            let chat = SimulatedChat::new(
                                &state.profile,
                                dom,
                                Regime::from_label(label),
                                c.k,
                                state.seed,
                                &item.item_id,
                                &item.generated_answer,
                            );
                            induce_continuation(&req, &chat as &dyn ChatBackend)
                        }
                        (Driver::Http(b), _) => induce_continuation(&req, b as &dyn ChatBackend),
                        _ => unreachable!("sim driver always has a domain"),
                    }
                })
                .collect()
        });
        let mut transcripts = Vec::with_capacity(items.len());
        for (item, r) in items.iter().zip(results) {
            match r {
                Ok(t) => {
                    if let Some(f) = &t.failure {
                        errors.push(ItemError {
                            item_id: item.item_id.clone(),
                            domain_id: Some(d.clone()),
                            class: "backend".into(),
                            detail: format!("truncated: {f}"),
                        });
                    }
                    transcripts.push(t);
                }
                Err(e) => errors.push(ItemError::new(&item.item_id, Some(d), &e)),
            }
        }
        let out = run.stage_path("transcripts", d);
        write_jsonl(&out, &transcripts)?;
        inputs.push(qa_path);
        outputs.push(out);
    }
    let mut notes = Notes::new();
    notes.insert("backend".into(), json!(c.backend));
    notes.insert("k".into(), json!(c.k));
    run.finish("induce", &inputs, &outputs, errors, notes)
}

fn selected(run: &Run, only: &[String]) -> Result<Vec<String>> {
    let all = run.domains()?;
    if only.is_empty() {
        return Ok(all);
    }
    for d in only {
        if !all.contains(d) {
            return Err(Error::Config(format!("unknown domain {d}")));
        }
    }
    Ok(all.into_iter().filter(|d| only.contains(d)).collect())
}

fn load_features(run: &Run, domain: &str) -> Result<(PathBuf, Vec<FeatureRecord>)> {
    let p = run.features_path(domain);
    let f = read_jsonl(&p)?;
    Ok((p, f))
}

pub fn score(run: &Run, probe_path: Option<&Path>) -> Result<Manifest> {
    let c = &run.config;
    let domains = run.domains()?;
    let workers = pool(run)?;
    let (mut inputs, mut outputs, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    let probe = match c.backbone {
        BackboneKind::Probe => {
            let p = probe_path.map(Path::to_path_buf).unwrap_or_else(|| run.path("probe.json"));
            let m: ProbeModel = read_json(&p)?;
            m.validate()?;
            inputs.push(p);
            Some(m)
        }
        _ => None,
    };
    for d in &domains {
        let rows: Vec<TurnScore> = if c.backbone == BackboneKind::External {
            let src = c.domains.get(d).and_then(|p| p.scores.clone()).ok_or_else(|| {
                Error::Config(format!("backbone = \"external\" needs domains.{d}.scores"))
            })?;
            let f = std::fs::File::open(&src).map_err(|e| Error::io(&src, e))?;
            let rows = ingest_external_scores(std::io::BufReader::new(f), c.external.orientation)?;
            inputs.push(src);
            rows
        } else {
            let tpath = run.stage_path("transcripts", d);
            let transcripts: Vec<DialogueTranscript> = read_jsonl(&tpath)?;
            inputs.push(tpath);
            let features = match &probe {
                Some(_) => {
                    let (p, f) = load_features(run, d)?;
                    inputs.push(p);
                    Some(index_features(&f))
                }
                None => None,
            };
            let backbone = match (c.backbone, &probe, &features) {
                (BackboneKind::Sim, _, _) => Backbone::Simulator,
                (BackboneKind::Perplexity, _, _) => Backbone::Perplexity,
                (BackboneKind::Probe, Some(model), Some(features)) => Backbone::Probe { model, features },
                _ => unreachable!("probe inputs loaded above"),
            };
            let results: Vec<Result<Vec<TurnScore>>> =
                workers.install(|| transcripts.par_iter().map(|t| score_transcript(t, &backbone)).collect());
            let mut rows = Vec::new();
            for (t, r) in transcripts.iter().zip(results) {
                match r {
                    Ok(mut s) => rows.append(&mut s),
                    Err(e) => errors.push(ItemError::new(&t.item_id, Some(d), &e)),
                }
            }
            rows
        };
        let out = run.stage_path("scores", d);
        write_jsonl(&out, &rows)?;
        outputs.push(out);
    }
    let mut notes = Notes::new();
    notes.insert("backbone".into(), json!(c.backbone));
    run.finish("score", &inputs, &outputs, errors, notes)
}

fn load_sequences(run: &Run, d: &str, errors: &mut Vec<ItemError>) -> Result<(PathBuf, Vec<crate::trajectory::ScoreSequence>)> {
    let p = run.stage_path("scores", d);
    let rows: Vec<TurnScore> = read_jsonl(&p)?;
    let assembled = assemble_sequences(&rows);
    for e in &assembled.errors {
        let id = match e {
            Error::MissingTurns { item_id, .. } => item_id.clone(),
            _ => String::new(),
        };
        errors.push(ItemError::new(id, Some(d), e));
    }
    Ok((p, assembled.sequences))
}

pub fn spike(run: &Run) -> Result<Manifest> {
    let (mut inputs, mut outputs, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    for d in &run.domains()? {
        let (p, seqs) = load_sequences(run, d, &mut errors)?;
        let mut recs = Vec::with_capacity(seqs.len());
        for s in &seqs {
            match spike_with_turn(&s.scores) {
                Ok((spike, peak_turn)) => recs.push(SpikeRecord {
                    item_id: s.item_id.clone(),
                    domain_id: d.clone(),
                    backbone_id: s.backbone_id.clone(),
                    spike,
                    peak_turn,
                    cv: coefficient_of_variation(&s.scores).ok(),
                }),
                Err(e) => errors.push(ItemError::new(&s.item_id, Some(d), &e)),
            }
        }
        let out = run.stage_path("spikes", d);
        write_jsonl(&out, &recs)?;
        inputs.push(p);
        outputs.push(out);
    }
    run.finish("spike", &inputs, &outputs, errors, Notes::new())
}

fn load_targets(run: &Run, d: &str) -> Result<Option<(PathBuf, HashMap<String, f64>)>> {
    let Some(p) = run.config.domains.get(d).and_then(|x| x.targets.clone()) else {
        return Ok(None);
    };
    let rows: Vec<TargetRecord> = read_jsonl(&p)?;
    Ok(Some((p, rows.into_iter().map(|r| (r.item_id, r.target)).collect())))
}

/// Trains a probe on one domain's initial-answer features.
pub fn train_probe_stage(run: &Run, domain: &str, output: Option<&Path>) -> Result<Manifest> {
    let c = &run.config;
    let items = load_qa(run, domain)?;
    let labels = labels_of(&items)?;
    let (fpath, feats) = load_features(run, domain)?;
    let index = index_features(&feats);
    let mut inputs = vec![run.qa_path(domain), fpath];
    let targets = match c.probe.objective {
        Objective::HuberRegression => {
            let (p, t) = load_targets(run, domain)?.ok_or_else(|| {
                Error::Config(format!("the huber_regression probe needs domains.{domain}.targets"))
            })?;
            inputs.push(p);
            Some(t)
        }
        Objective::CrossEntropy => None,
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for it in &items {
        let x = index.get(&(it.item_id.clone(), 1)).ok_or_else(|| Error::MissingInput {
            item_id: it.item_id.clone(),
            turn: 1,
            reason: "no feature record".into(),
        })?;
        let y = match &targets {
            Some(t) => *t.get(&it.item_id).ok_or_else(|| Error::MissingInput {
                item_id: it.item_id.clone(),
                turn: 1,
                reason: "no regression target".into(),
            })?,
            None => f64::from(labels[&it.item_id]),
        };
        xs.push(x.clone());
        ys.push(y);
    }
    let model = train_probe(&xs, &ys, c.probe.objective, &c.probe.hyper())?;
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| run.path("probe.json"));
    write_json(&out, &model)?;
    let mut notes = Notes::new();
    notes.insert("train_domain".into(), json!(domain));
    notes.insert("final_loss".into(), json!(model.training_meta.as_ref().map(|m| m.final_loss)));
    run.finish("train-probe", &inputs, &[out], Vec::new(), notes)
}

fn load_spikes(run: &Run, d: &str) -> Result<(PathBuf, Vec<SpikeRecord>)> {
    let p = run.stage_path("spikes", d);
    let v = read_jsonl(&p)?;
    Ok((p, v))
}

pub fn calibrate(run: &Run, domain: &str, target_fpr: Option<f64>) -> Result<Manifest> {
    let items = load_qa(run, domain)?;
    let labels = labels_of(&items)?;
    let (sp, spikes) = load_spikes(run, domain)?;
    let factual: Vec<f64> = spikes.iter().filter(|s| labels.get(&s.item_id) == Some(&0)).map(|s| s.spike).collect();
    let fpr = target_fpr.unwrap_or(run.config.evaluation.target_fpr);
    let th = calibrate_threshold(&factual, fpr, domain)?;
    let out = run.path("threshold.json");
    write_json(&out, &th)?;
    let mut notes = Notes::new();
    notes.insert("lambda".into(), json!(th.lambda));
    run.finish("calibrate", &[run.qa_path(domain), sp], &[out], Vec::new(), notes)
}

pub fn detect(run: &Run, threshold: Option<&Path>) -> Result<Manifest> {
    let tpath = threshold.map(Path::to_path_buf).unwrap_or_else(|| run.path("threshold.json"));
    let th: Threshold = read_json(&tpath)?;
    th.validate()?;
    let (mut inputs, mut outputs) = (vec![tpath], Vec::new());
    for d in &run.domains()? {
        let (p, spikes) = load_spikes(run, d)?;
        let rows: Vec<Detection> = spikes
            .iter()
            .map(|s| Detection { item_id: s.item_id.clone(), domain_id: d.clone(), spike: s.spike, decision: decide(s.spike, &th) })
            .collect();
        let out = run.stage_path("detections", d);
        write_jsonl(&out, &rows)?;
        inputs.push(p);
        outputs.push(out);
    }
    run.finish("detect", &inputs, &outputs, Vec::new(), Notes::new())
}

/// Labeled score sequences from the `scores/` stage, one backbone only.
fn labeled_sequences(run: &Run, inputs: &mut Vec<PathBuf>, errors: &mut Vec<ItemError>) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    for d in &run.domains()? {
        let labels = labels_of(&load_qa(run, d)?)?;
        inputs.push(run.qa_path(d));
        let (p, seqs) = load_sequences(run, d, errors)?;
        inputs.push(p);
        for s in seqs {
            let label = *labels.get(&s.item_id).ok_or_else(|| {
                Error::Labeling(format!("scored item {} has no QA record in domain {d}", s.item_id))
            })?;
            out.push(LabeledSequence { sequence: s, domain_id: d.clone(), label });
        }
    }
    let mut ids: Vec<&str> = out.iter().map(|s| s.sequence.backbone_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() > 1 {
        return Err(Error::Config(format!("score files mix backbones: {}", ids.join(", "))));
    }
    Ok(out)
}

fn run_snapshot(run: &Run, input_hashes: &BTreeMap<String, String>) -> serde_json::Value {
    let mut cfg = serde_json::to_value(&run.config).expect("config serializes");
    cfg.as_object_mut().expect("object").remove("out_dir");
    json!({
        "version": super::VERSION,
        "config_hash": run.hash,
        "input_hashes": input_hashes,
        "seeds": run.config.seeds,
        "config": cfg,
    })
}

pub fn evaluate(run: &Run) -> Result<(Manifest, EvalReport)> {
    let c = &run.config;
    let (mut inputs, mut errors) = (Vec::new(), Vec::new());
    let workers = pool(run)?;
    let report = if c.backbone == BackboneKind::Probe {
        let mut items = Vec::new();
        let mut features = Vec::new();
        let mut targets = HashMap::new();
        for d in &run.domains()? {
            let qa = load_qa(run, d)?;
            let labels = labels_of(&qa)?;
            inputs.push(run.qa_path(d));
            let tpath = run.stage_path("transcripts", d);
            let turns: HashMap<String, usize> = if tpath.exists() {
                let ts: Vec<DialogueTranscript> = read_jsonl(&tpath)?;
                inputs.push(tpath);
                ts.into_iter().map(|t| (t.item_id.clone(), t.len())).collect()
            } else {
                HashMap::new()
            };
            for it in &qa {
                items.push(LabeledItem {
                    item_id: it.item_id.clone(),
                    domain_id: d.clone(),
                    label: labels[&it.item_id],
                    turns: turns.get(&it.item_id).copied().unwrap_or(c.k),
                });
            }
            let (p, mut f) = load_features(run, d)?;
            inputs.push(p);
            features.append(&mut f);
            if let Some((p, t)) = load_targets(run, d)? {
                inputs.push(p);
                targets.extend(t);
            }
        }
        let hashes = run.check_input_hashes(&inputs)?;
        let index = index_features(&features);
        let source = ProbeSource {
            items: &items,
            features: &index,
            objective: c.probe.objective,
            hyper: c.probe.hyper(),
            targets: (!targets.is_empty()).then_some(&targets),
        };
        workers.install(|| evaluation::run_leave_one_out(&ScoreSource::Probe(source), &c.evaluation, run_snapshot(run, &hashes)))?
    } else {
        let seqs = labeled_sequences(run, &mut inputs, &mut errors)?;
        let hashes = run.check_input_hashes(&inputs)?;
        evaluation::run_leave_one_out(&ScoreSource::Sequences(&seqs), &c.evaluation, run_snapshot(run, &hashes))?
    };
    for s in &report.skipped {
        errors.push(ItemError { item_id: s.item_id.clone(), domain_id: None, class: "skipped".into(), detail: s.reason.clone() });
    }
    let out = run.path("report.json");
    write_json(&out, &report)?;
    let mut notes = Notes::new();
    notes.insert(
        "mean_heldout_auroc".into(),
        json!(report.train_domains.iter().map(|t| (t.train_domain.clone(), t.mean_heldout_auroc)).collect::<BTreeMap<_, _>>()),
    );
    let m = run.finish("evaluate", &inputs, &[out], errors, notes)?;
    Ok((m, report))
}

pub fn sweep(run: &Run, k_values: Option<&[usize]>) -> Result<(Manifest, Vec<SweepRow>)> {
    let (mut inputs, mut errors) = (Vec::new(), Vec::new());
    let seqs = labeled_sequences(run, &mut inputs, &mut errors)?;
    run.check_input_hashes(&inputs)?;
    let ks: Vec<usize> = match k_values {
        Some(k) => k.to_vec(),
        None => {
            let min_len = seqs.iter().map(|s| s.sequence.len()).min().unwrap_or(0);
            run.config.evaluation.k_sweep.iter().copied().filter(|&k| k >= 3 && k <= min_len).collect()
        }
    };
    let valid: Vec<LabeledSequence> = seqs.into_iter().filter(|s| s.sequence.len() >= 3).collect();
    let rows = evaluation::step_sweep(&valid, &ks)?;
    let out = run.path("sweep.json");
    write_json(&out, &rows)?;
    let m = run.finish("sweep", &inputs, &[out], errors, Notes::new())?;
    Ok((m, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheckSummary {
    pub n_configs: usize,
    pub n_holds: usize,
    pub results: Vec<MonteCarloResult>,
}

pub fn theorem_check(run: &Run, n_samples: usize) -> Result<(Manifest, TheoremCheckSummary)> {
    let grid = default_theorem_grid(n_samples, run.config.seeds.sampling);
    let results = pool(run)?
        .install(|| grid.par_iter().map(monte_carlo_theorem_check).collect::<Result<Vec<_>>>())?;
    let summary = TheoremCheckSummary {
        n_configs: results.len(),
        n_holds: results.iter().filter(|r| r.holds).count(),
        results,
    };
    let out = run.path("theorem_check.json");
    write_json(&out, &summary)?;
    let errors = summary
        .results
        .iter()
        .filter(|r| !r.holds)
        .map(|r| ItemError {
            item_id: format!("{}:{}:{}:{}", r.config.family, r.config.delta, r.config.r, r.config.c),
            domain_id: None,
            class: "bound_violated".into(),
            detail: format!("empirical {} < bound {}", r.empirical_p, r.bound),
        })
        .collect();
    let m = run.finish("theorem-check", &[], &[out], errors, Notes::new())?;
    Ok((m, summary))
}

fn embedder(run: &Run) -> Box<dyn Embedder> {
    let e = &run.config.rag.embedder;
    match &e.endpoint {
        Some(url) => Box::new(HttpEmbedder::new(url.clone(), e.dimension, e.timeout_secs)),
        None => Box::new(HashingEmbedder { dimension: e.dimension }),
    }
}

pub fn rag_build(run: &Run, corpus: &Path) -> Result<Manifest> {
    let f = std::fs::File::open(corpus).map_err(|e| Error::io(corpus, e))?;
    let docs = rag::read_corpus(std::io::BufReader::new(f))?;
    let index = rag::build_index(&docs, embedder(run).as_ref())?;
    let out = run.path("rag/index.json");
    write_json(&out, &index)?;
    run.finish("rag-build", &[corpus.to_path_buf()], &[out], Vec::new(), Notes::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagHit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagResult {
    pub question: String,
    pub hits: Vec<RagHit>,
    pub prompt: String,
}

/// Retrieves contexts for each question. With `qa` set, every item of that
/// QA file gets its question replaced by the assembled prompt and the result
/// is written to `qa_out`.
pub fn rag_query(
    run: &Run,
    questions: &[String],
    qa: Option<(&Path, &Path)>,
    k: Option<usize>,
) -> Result<(Manifest, Vec<RagResult>)> {
    let ipath = run.path("rag/index.json");
    let index: RetrievalIndex = read_json(&ipath)?;
    index.validate()?;
    let emb = embedder(run);
    let k = k.unwrap_or(run.config.rag.top_k);
    let cap = run.config.rag.context_char_cap;
    let answer = |q: &str| -> Result<RagResult> {
        let hits = rag::retrieve_top_k(&index, q, k, emb.as_ref())?;
        let contexts: Vec<&str> = hits.iter().map(|(id, _)| index.get(id).expect("hit is indexed").text.as_str()).collect();
        Ok(RagResult {
            question: q.to_string(),
            prompt: rag::assemble_rag_prompt(q, &contexts, cap),
            hits: hits.into_iter().map(|(doc_id, score)| RagHit { doc_id, score }).collect(),
        })
    };
    let mut results = questions.iter().map(|q| answer(q)).collect::<Result<Vec<_>>>()?;
    let mut inputs = vec![ipath];
    let mut outputs = Vec::new();
    if let Some((qa_in, qa_out)) = qa {
        let mut items: Vec<QAItem> = read_jsonl(qa_in)?;
        for it in &mut items {
            let r = answer(&it.question)?;
            it.question = r.prompt.clone();
            results.push(r);
        }
        write_jsonl(qa_out, &items)?;
        inputs.push(qa_in.to_path_buf());
        outputs.push(qa_out.to_path_buf());
    }
    let out = run.path("rag/results.jsonl");
    write_jsonl(&out, &results)?;
    outputs.insert(0, out);
    let m = run.finish("rag-query", &inputs, &outputs, Vec::new(), Notes::new())?;
    Ok((m, results))
}

pub fn export_plots(run: &Run, what: &[PlotSelector], item: Option<&str>) -> Result<Manifest> {
    let rpath = run.path("report.json");
    let report: EvalReport = read_json(&rpath)?;
    let dir = run.path("plots");
    let mut outputs = Vec::new();
    for w in what {
        outputs.extend(evaluation::export_plot_data(&report, *w, &dir, item)?);
    }
    run.finish("export-plots", &[rpath], &outputs, Vec::new(), Notes::new())
}
