//! End-to-end experiment steps shared by the command-line tool and tests.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::data::{
    align_features, derive_seed, featurize_reviews, gen_synthetic, load_ratings,
    load_review_embeddings, sample_batch, sparsify, split_dataset, write_ratings,
    write_review_embeddings, Domain, DomainData, LoadOptions, RatingDataset, ReviewFeatures, Split,
    SyntheticData, SyntheticDomain, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{proxy_a_distance, rank_metrics, sample_candidates, DiscrepancyReport, ProbeConfig, RankMetrics, RankedCase};
use crate::model::{
    embed_entities, predict_ratings, train_step, AdamConfig, AdamState, DomainSize, LossReport,
    ModelParams, ObjectiveConfig, TowerDims,
};
use crate::ndmath::Matrix;
use crate::ot::{vertical_loss, Epsilon, SinkhornConfig};
use crate::subspace::{horizontal_loss, SelfExpressionConfig};
use crate::typical::{select_typical_samples, SelectionProblem};

/// Both domains ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source: DomainData,
    pub target: DomainData,
}

pub fn synthetic_spec(cfg: &RunConfig) -> SyntheticSpec {
    SyntheticSpec {
        users: cfg.synth_users,
        items: cfg.synth_items,
        latent_dim: cfg.synth_latent_dim,
        d_rev: cfg.d_rev,
        clusters: cfg.synth_clusters,
        angle: cfg.synth_angle,
        translation: cfg.synth_translation,
        positive_rate: cfg.synth_positive_rate,
        density: cfg.synth_density,
        target_density: cfg.synth_target_density,
        label_noise: cfg.synth_label_noise,
        review_noise: cfg.synth_review_noise,
        seed: cfg.seed,
    }
}

/// Applies the target keep fraction and the 8:1:1 split.
fn finish_dataset(mut ds: RatingDataset, cfg: &RunConfig) -> Result<RatingDataset> {
    let tag = match ds.domain {
        Domain::Source => 1,
        Domain::Target => 2,
    };
    if ds.domain == Domain::Target {
        sparsify(&mut ds, cfg.target_keep_fraction, derive_seed(cfg.seed, 10 + tag))?;
    }
    split_dataset(&mut ds, (8, 1, 1), derive_seed(cfg.seed, 20 + tag))?;
    Ok(ds)
}

fn domain_from_synthetic(d: &SyntheticDomain, cfg: &RunConfig) -> Result<DomainData> {
    let ds = finish_dataset(d.dataset.clone(), cfg)?;
    let users = align_features(&d.user_reviews, &ds.users)?;
    let items = align_features(&d.item_reviews, &ds.items)?;
    DomainData::new(ds, users, items)
}

/// Prepares in-memory synthetic domains without touching the filesystem.
pub fn prepare_synthetic(cfg: &RunConfig) -> Result<(SyntheticData, Prepared)> {
    let synth = gen_synthetic(&synthetic_spec(cfg))?;
    let prepared = Prepared {
        source: domain_from_synthetic(&synth.source, cfg)?,
        target: domain_from_synthetic(&synth.target, cfg)?,
    };
    Ok((synth, prepared))
}

/// Reads the embedding container when present, otherwise featurizes the
/// training-split texts on the fly.
fn review_matrix(cfg: &RunConfig, file: &str, ids: &[String], texts: &[Vec<String>]) -> Result<Matrix> {
    let path = cfg.data_dir.join(file);
    if path.exists() {
        let f = load_review_embeddings(&path, None)?;
        return align_features(&f, ids);
    }
    Ok(featurize_reviews(ids, texts, cfg.d_rev, cfg.seed)?.vectors)
}

/// Review texts restricted to training interactions.
fn training_texts(ds: &RatingDataset, raw: &[(String, String, Option<String>)]) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let train: HashSet<(&str, &str)> = ds
        .in_split(Split::Train)
        .map(|x| (ds.users[x.user].as_str(), ds.items[x.item].as_str()))
        .collect();
    let uidx: std::collections::HashMap<&str, usize> =
        ds.users.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let iidx: std::collections::HashMap<&str, usize> =
        ds.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut users = vec![Vec::new(); ds.n_users()];
    let mut items = vec![Vec::new(); ds.n_items()];
    for (u, i, text) in raw {
        if let Some(t) = text {
            if train.contains(&(u.as_str(), i.as_str())) {
                users[uidx[u.as_str()]].push(t.clone());
                items[iidx[i.as_str()]].push(t.clone());
            }
        }
    }
    (users, items)
}

fn load_domain(cfg: &RunConfig, domain: Domain) -> Result<DomainData> {
    let (ratings, user_file, item_file) = match domain {
        Domain::Source => (&cfg.source_ratings, &cfg.source_user_reviews, &cfg.source_item_reviews),
        Domain::Target => (&cfg.target_ratings, &cfg.target_user_reviews, &cfg.target_item_reviews),
    };
    let path = cfg.data_dir.join(ratings);
    let opts = LoadOptions {
        threshold: cfg.threshold,
        min_records: cfg.min_records,
    };
    let ds = finish_dataset(load_ratings(&path, domain, &opts)?, cfg)?;
    let raw = raw_texts(&path)?;
    let (ut, it) = training_texts(&ds, &raw);
    let users = review_matrix(cfg, user_file, &ds.users, &ut)?;
    let items = review_matrix(cfg, item_file, &ds.items, &it)?;
    DomainData::new(ds, users, items)
}

fn raw_texts(path: &Path) -> Result<Vec<(String, String, Option<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::data::parse_ratings(&text, &path.display().to_string())?
        .into_iter()
        .map(|(u, i, _, t)| (u, i, t))
        .collect())
}

/// Loads both domains from `data_dir`.
pub fn prepare_from_files(cfg: &RunConfig) -> Result<Prepared> {
    Ok(Prepared {
        source: load_domain(cfg, Domain::Source)?,
        target: load_domain(cfg, Domain::Target)?,
    })
}

pub fn objective_config(cfg: &RunConfig) -> ObjectiveConfig {
    ObjectiveConfig {
        weights: cfg.weights(),
        proxies: cfg.proxies(),
        alpha: cfg.alpha,
        sinkhorn: SinkhornConfig::with_epsilon(Epsilon::RelativeToMeanCost(cfg.epsilon)),
        self_expression: SelfExpressionConfig::new(cfg.nu),
    }
}

pub fn init_params(cfg: &RunConfig, data: &Prepared) -> ModelParams {
    let size = |d: &DomainData| DomainSize {
        users: d.dataset.n_users(),
        items: d.dataset.n_items(),
    };
    let dims = TowerDims {
        d_id: cfg.d,
        d_hist: cfg.d,
        d_rev: data.source.d_rev(),
        d_fuse: cfg.d,
        d_out: cfg.d,
    };
    ModelParams::init(
        size(&data.source),
        size(&data.target),
        dims,
        cfg.hidden_width(),
        derive_seed(cfg.seed, 30),
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub reports: Vec<LossReport>,
    /// Mean total loss per epoch.
    pub epoch_means: Vec<f64>,
}

pub fn steps_per_epoch(cfg: &RunConfig, data: &Prepared) -> usize {
    if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        (data.target.train.len() / cfg.batch_size).max(1)
    }
}

/// Runs `epochs × steps_per_epoch` joint steps from a fresh initialization.
pub fn train(cfg: &RunConfig, data: &Prepared) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.source.d_rev() != data.target.d_rev() {
        return Err(Error::Contract("source and target review widths differ".into()));
    }
    let mut params = init_params(cfg, data);
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let objective = objective_config(cfg);
    let per_epoch = steps_per_epoch(cfg, data);
    let source_seed = derive_seed(cfg.seed, 41);
    let target_seed = derive_seed(cfg.seed, 42);
    let mut reports = Vec::with_capacity(cfg.epochs * per_epoch);
    let mut epoch_means = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut acc = 0.0;
        for _ in 0..per_epoch {
            let step = adam.step;
            let (_, sb) = sample_batch(&data.source, cfg.batch_size, source_seed, step)?;
            let (_, tb) = sample_batch(&data.target, cfg.batch_size, target_seed, step)?;
            let report = train_step(&mut params, &mut adam, &sb, &tb, &objective)?;
            acc += report.total;
            reports.push(report);
        }
        epoch_means.push(acc / per_epoch as f64);
    }
    Ok(TrainOutcome {
        params,
        adam,
        reports,
        epoch_means,
    })
}

/// Embeddings of every user and item of both domains, with full training
/// histories: source users, source items, target users, target items.
pub fn embed_all(params: &ModelParams, data: &Prepared) -> Result<[Matrix; 4]> {
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    let s = &data.source;
    let t = &data.target;
    Ok([
        embed_entities(&s.user_batch(&all(s.dataset.n_users())), &params.source_user)?,
        embed_entities(&s.item_batch(&all(s.dataset.n_items())), &params.source_item)?,
        embed_entities(&t.user_batch(&all(t.dataset.n_users())), &params.target_user)?,
        embed_entities(&t.item_batch(&all(t.dataset.n_items())), &params.target_item)?,
    ])
}

/// Ranking cases for the target test split, scored by the model.
pub fn target_cases(
    params: &ModelParams,
    data: &Prepared,
    embeddings: &[Matrix; 4],
    cfg: &RunConfig,
) -> Result<Vec<RankedCase>> {
    let t = &data.target.dataset;
    let mut observed = vec![HashSet::new(); t.n_users()];
    for x in &t.interactions {
        observed[x.user].insert(x.item);
    }
    for &(u, i) in &t.held_negatives {
        observed[u].insert(i);
    }
    let held_out: Vec<(usize, usize)> = t
        .in_split(Split::Test)
        .filter(|x| x.label)
        .map(|x| (x.user, x.item))
        .collect();
    let lists = sample_candidates(
        &held_out,
        &observed,
        t.n_items(),
        cfg.eval_negatives,
        derive_seed(cfg.seed, 50),
    );
    let (users, items) = (&embeddings[2], &embeddings[3]);
    let d = users.cols();
    let mut cases = Vec::with_capacity(lists.len());
    for (user, positive, candidates) in lists {
        let n = candidates.len();
        let mut u = Matrix::zeros(n, d);
        let mut v = Matrix::zeros(n, d);
        for (r, &c) in candidates.iter().enumerate() {
            u.row_mut(r).copy_from_slice(users.row(user));
            v.row_mut(r).copy_from_slice(items.row(c));
        }
        let scores = predict_ratings(&u, &v, &params.head)?;
        cases.push(RankedCase {
            user,
            positive,
            candidates,
            scores,
        });
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub metrics: RankMetrics,
    pub user_discrepancy: DiscrepancyReport,
    pub item_discrepancy: DiscrepancyReport,
}

fn probe_config(cfg: &RunConfig) -> ProbeConfig {
    ProbeConfig {
        folds: cfg.probe_folds,
        iterations: cfg.probe_iterations,
        seed: derive_seed(cfg.seed, 60),
        ..ProbeConfig::default()
    }
}

pub fn evaluate(params: &ModelParams, data: &Prepared, cfg: &RunConfig) -> Result<EvalReport> {
    let emb = embed_all(params, data)?;
    let cases = target_cases(params, data, &emb, cfg)?;
    let probe = probe_config(cfg);
    Ok(EvalReport {
        metrics: rank_metrics(&cases, cfg.eval_k)?,
        user_discrepancy: proxy_a_distance(&emb[0], &emb[2], &probe)?,
        item_discrepancy: proxy_a_distance(&emb[1], &emb[3], &probe)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignDiagnostics {
    pub l_o: f64,
    pub l_a: f64,
    pub user_d_a: f64,
    pub item_d_a: f64,
}

/// Alignment losses on the first training batch of each domain plus the
/// proxy A-distances over all entities.
pub fn align_diagnostics(params: &ModelParams, data: &Prepared, cfg: &RunConfig) -> Result<AlignDiagnostics> {
    let (_, sb) = sample_batch(&data.source, cfg.batch_size, derive_seed(cfg.seed, 41), 0)?;
    let (_, tb) = sample_batch(&data.target, cfg.batch_size, derive_seed(cfg.seed, 42), 0)?;
    let z = [
        embed_entities(&sb.users, &params.source_user)?,
        embed_entities(&tb.users, &params.target_user)?,
        embed_entities(&sb.items, &params.source_item)?,
        embed_entities(&tb.items, &params.target_item)?,
    ];
    let obj = objective_config(cfg);
    let m: Vec<Matrix> = z
        .iter()
        .map(|b| {
            let problem = SelectionProblem::new(b.clone(), obj.proxies, obj.alpha);
            Ok(select_typical_samples(&problem)?.proxies)
        })
        .collect::<Result<_>>()?;
    let l_o = vertical_loss(&m[0], &m[1], &m[2], &m[3], &obj.sinkhorn)?;
    let l_a = horizontal_loss(&z[0], &z[1], &z[2], &z[3], &obj.self_expression)?;
    let emb = embed_all(params, data)?;
    let probe = probe_config(cfg);
    Ok(AlignDiagnostics {
        l_o,
        l_a,
        user_d_a: proxy_a_distance(&emb[0], &emb[2], &probe)?.d_a,
        item_d_a: proxy_a_distance(&emb[1], &emb[3], &probe)?.d_a,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Every command leaves its resolved configuration next to its outputs.
fn emit_config(dir: &Path, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let path = dir.join(format!("{command}.resolved.cfg"));
    write_file(&path, &cfg.to_text())?;
    Ok(path)
}

/// Writes synthetic ratings and review embeddings into `data_dir`.
pub fn run_synth_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let synth = gen_synthetic(&synthetic_spec(cfg))?;
    let dir = &cfg.data_dir;
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for (d, ratings, uf, itf) in [
        (&synth.source, &cfg.source_ratings, &cfg.source_user_reviews, &cfg.source_item_reviews),
        (&synth.target, &cfg.target_ratings, &cfg.target_user_reviews, &cfg.target_item_reviews),
    ] {
        let path = dir.join(ratings);
        write_ratings(&path, &d.dataset)?;
        written.push(path);
        for (f, name) in [(&d.user_reviews, uf), (&d.item_reviews, itf)] {
            let p = dir.join(name);
            write_review_embeddings(&p, f)?;
            written.push(p);
        }
    }
    written.push(emit_config(dir, "synth-data", cfg)?);
    Ok(written)
}

/// Featurizes review texts of both ratings files into embedding containers.
pub fn run_featurize(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut written = Vec::new();
    for (domain, ratings, uf, itf) in [
        (Domain::Source, &cfg.source_ratings, &cfg.source_user_reviews, &cfg.source_item_reviews),
        (Domain::Target, &cfg.target_ratings, &cfg.target_user_reviews, &cfg.target_item_reviews),
    ] {
        let path = cfg.data_dir.join(ratings);
        let opts = LoadOptions {
            threshold: cfg.threshold,
            min_records: cfg.min_records,
        };
        let ds = finish_dataset(load_ratings(&path, domain, &opts)?, cfg)?;
        let raw = raw_texts(&path)?;
        let (ut, it) = training_texts(&ds, &raw);
        for (ids, texts, name) in [(&ds.users, &ut, uf), (&ds.items, &it, itf)] {
            let f: ReviewFeatures = featurize_reviews(ids, texts, cfg.d_rev, cfg.seed)?;
            let p = cfg.data_dir.join(name);
            write_review_embeddings(&p, &f)?;
            written.push(p);
        }
    }
    written.push(emit_config(&cfg.data_dir, "featurize", cfg)?);
    Ok(written)
}

/// Trains from `data_dir` and writes the checkpoint, the per-step loss log
/// and the per-epoch summary into `out_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = prepare_from_files(cfg)?;
    let outcome = train(cfg, &data)?;
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let ckpt_path = dir.join(&cfg.checkpoint);
    checkpoint::save(
        &ckpt_path,
        &Checkpoint {
            params: outcome.params,
            adam: outcome.adam,
            config: cfg.to_text(),
        },
    )?;
    let mut log = String::from("# seed\tarm\tstep\tL_C\tL_O\tL_A\tL\n");
    for r in &outcome.reports {
        writeln!(
            log,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            cfg.seed,
            cfg.arm.name(),
            r.step,
            r.l_c,
            r.l_o,
            r.l_a,
            r.total
        )
        .unwrap();
    }
    let log_path = dir.join("losses.tsv");
    write_file(&log_path, &log)?;
    let mut epochs = String::from("# seed\tarm\tepoch\tmean_L\n");
    for (e, m) in outcome.epoch_means.iter().enumerate() {
        writeln!(epochs, "{}\t{}\t{}\t{m}", cfg.seed, cfg.arm.name(), e + 1).unwrap();
    }
    let epoch_path = dir.join("epochs.tsv");
    write_file(&epoch_path, &epochs)?;
    let cfg_path = emit_config(dir, "train", cfg)?;
    Ok(vec![ckpt_path, log_path, epoch_path, cfg_path])
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    checkpoint::load(&cfg.out_dir.join(&cfg.checkpoint))
}

/// Flat `key=value` metrics followed by one JSON record for the arm.
pub fn format_metrics(cfg: &RunConfig, report: &EvalReport) -> String {
    let m = &report.metrics;
    let mut out = String::new();
    let k = cfg.eval_k;
    for (key, v) in [
        (format!("hr@{k}"), m.hr),
        (format!("recall@{k}"), m.recall),
        (format!("ndcg@{k}"), m.ndcg),
        ("user_d_a".into(), report.user_discrepancy.d_a),
        ("item_d_a".into(), report.item_discrepancy.d_a),
        ("user_probe_accuracy".into(), report.user_discrepancy.accuracy),
        ("item_probe_accuracy".into(), report.item_discrepancy.accuracy),
    ] {
        writeln!(out, "{key}={v}").unwrap();
    }
    writeln!(out, "users={}", m.users).unwrap();
    writeln!(out, "seed={}", cfg.seed).unwrap();
    writeln!(out, "arm={}", cfg.arm.name()).unwrap();
    let record = serde_json::json!({
        "arm": cfg.arm.name(),
        "seed": cfg.seed,
        "k": k,
        "hr": m.hr,
        "recall": m.recall,
        "ndcg": m.ndcg,
        "users": m.users,
        "user_d_a": report.user_discrepancy.d_a,
        "item_d_a": report.item_discrepancy.d_a,
    });
    writeln!(out, "{record}").unwrap();
    out
}

/// Evaluates the checkpoint in `out_dir` on the target test split.
pub fn run_evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg)?;
    let data = prepare_from_files(cfg)?;
    let report = evaluate(&ckpt.params, &data, cfg)?;
    let path = cfg.out_dir.join("metrics.txt");
    write_file(&path, &format_metrics(cfg, &report))?;
    let cfg_path = emit_config(&cfg.out_dir, "evaluate", cfg)?;
    Ok(vec![path, cfg_path])
}

pub fn format_diagnostics(cfg: &RunConfig, diag: &AlignDiagnostics) -> String {
    format!(
        "L_O={}\nL_A={}\nuser_d_a={}\nitem_d_a={}\nseed={}\n",
        diag.l_o, diag.l_a, diag.user_d_a, diag.item_d_a, cfg.seed
    )
}

pub fn run_align_diagnostics(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg)?;
    let data = prepare_from_files(cfg)?;
    let diag = align_diagnostics(&ckpt.params, &data, cfg)?;
    let path = cfg.out_dir.join("alignment.txt");
    write_file(&path, &format_diagnostics(cfg, &diag))?;
    let cfg_path = emit_config(&cfg.out_dir, "align-diagnostics", cfg)?;
    Ok(vec![path, cfg_path])
}
